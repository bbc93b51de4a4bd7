//! Time-domain integration: agreement of the density-matrix hierarchy with
//! the amplitude path, long-pulse convergence to the steady state, and
//! invariance under the amplifier measurement rate.

mod common;

use chromadet::{
    channel_probabilities, compile_detector, evolve_fock_hierarchy, evolve_single_excitation,
    DetectorSpec, Error, PulseSpec, SolveMethod,
};
use common::{matched_single_bin, mixed_feature_spec, random_spec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// The exact single-excitation amplitude path and the full (ρ, ϱ)
/// hierarchy describe the same physics; their rate and cumulative traces
/// agree pointwise on randomized small designs.
#[test]
fn hierarchy_agrees_with_amplitude_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    while checked < 8 {
        let spec = random_spec(&mut rng, 3, 2);
        let model = compile_detector(&spec).unwrap();
        if model.elements.len() > 6 {
            continue;
        }
        checked += 1;
        let omega0 = rng.random_range(spec.band_lo..spec.band_hi);
        let pulse = PulseSpec::gaussian(omega0, 25.0);
        let grid = linspace(-100.0, 320.0, 8);
        let amp = evolve_single_excitation(&model, &pulse, &grid).unwrap();
        let hier = evolve_fock_hierarchy(&model, &pulse, &grid).unwrap();
        assert_eq!(amp.times, hier.times);
        for ti in 0..grid.len() {
            for ch in 0..model.num_channels {
                assert!(
                    (amp.rates[ti][ch] - hier.rates[ti][ch]).abs() <= 1e-6,
                    "rate mismatch at t={} ch={ch}: {} vs {}\nspec: {}",
                    grid[ti],
                    amp.rates[ti][ch],
                    hier.rates[ti][ch],
                    spec.to_json_pretty()
                );
                assert!(
                    (amp.cums[ti][ch] - hier.cums[ti][ch]).abs() <= 1e-6,
                    "cumulative mismatch at t={} ch={ch}: {} vs {}",
                    grid[ti],
                    amp.cums[ti][ch],
                    hier.cums[ti][ch]
                );
            }
        }
    }
}

/// Endcap elements participate in both paths identically: same agreement
/// check on the full mixed-feature design (7 elements, 3 channels).
#[test]
fn hierarchy_agrees_on_design_with_endcaps() {
    let model = compile_detector(&mixed_feature_spec()).unwrap();
    let pulse = PulseSpec::gaussian(2.37, 40.0);
    let grid = linspace(-160.0, 600.0, 7);
    let amp = evolve_single_excitation(&model, &pulse, &grid).unwrap();
    let hier = evolve_fock_hierarchy(&model, &pulse, &grid).unwrap();
    for ti in 0..grid.len() {
        for ch in 0..3 {
            assert!((amp.rates[ti][ch] - hier.rates[ti][ch]).abs() <= 1e-6);
            assert!((amp.cums[ti][ch] - hier.cums[ti][ch]).abs() <= 1e-6);
        }
    }
}

/// A spectrally narrow (long) Gaussian pulse is detected with the
/// steady-state delta-frequency probabilities. Reference values are from a
/// frequency-domain oracle (steady response convolved with the pulse
/// spectrum via Parseval); doubling σ₀ must tighten the approach to the
/// steady-state total.
#[test]
fn long_gaussian_pulse_converges_to_steady_state() {
    let model = compile_detector(&mixed_feature_spec()).unwrap();
    let steady = channel_probabilities(&model, 2.37, SolveMethod::Rank1).unwrap();
    let tail = 50.0 / 0.08;
    let mut totals = Vec::new();
    for (sigma0, frozen) in [(250.0, 0.907414078549), (500.0, 0.907505954795)] {
        let pulse = PulseSpec::gaussian(2.37, sigma0);
        let grid = [-8.0 * sigma0, 8.0 * sigma0 + tail];
        let trace = evolve_single_excitation(&model, &pulse, &grid).unwrap();
        let total = trace.final_total();
        assert!(
            (total - frozen).abs() <= 1e-6,
            "sigma0={sigma0}: total {total} vs frozen {frozen}"
        );
        assert!(
            (total - steady.total).abs() <= 1e-3,
            "sigma0={sigma0}: total {total} vs steady {}",
            steady.total
        );
        // Per-channel cumulative probabilities land on the steady split.
        let last = trace.cums.last().unwrap();
        for ch in 0..3 {
            assert!((last[ch] - steady.pi[ch]).abs() <= 1e-3);
        }
        totals.push(total);
    }
    let err0 = (totals[0] - steady.total).abs();
    let err1 = (totals[1] - steady.total).abs();
    assert!(
        err1 < err0,
        "doubling the pulse width should tighten convergence: {err0} -> {err1}"
    );
}

/// Detection statistics do not depend on the amplifier measurement rate χ:
/// the dark-state dephasing it adds commutes with everything observed.
#[test]
fn amplifier_rate_leaves_observables_unchanged() {
    let mut base = mixed_feature_spec();
    // Hierarchy-sized variant: drop the dispersed comb down to one element.
    base.bins[1].dispersion = 0.0;
    base.bins[1].subdivisions = None;
    let gcap = 0.10;
    let pulse = PulseSpec::gaussian(2.37, 30.0);
    let grid = linspace(-120.0, 500.0, 6);

    let reference = {
        let model = compile_detector(&base).unwrap();
        evolve_fock_hierarchy(&model, &pulse, &grid).unwrap()
    };
    for chi in [gcap, 10.0 * gcap] {
        let mut spec = base.clone();
        spec.chi = chi;
        let model = compile_detector(&spec).unwrap();
        let trace = evolve_fock_hierarchy(&model, &pulse, &grid).unwrap();
        let steady = channel_probabilities(&model, 2.37, SolveMethod::Rank1).unwrap();
        let steady0 = {
            let model0 = compile_detector(&base).unwrap();
            channel_probabilities(&model0, 2.37, SolveMethod::Rank1).unwrap()
        };
        for ti in 0..grid.len() {
            for ch in 0..3 {
                assert!(
                    (trace.rates[ti][ch] - reference.rates[ti][ch]).abs() <= 1e-8,
                    "chi={chi}: rate drift at t={}",
                    grid[ti]
                );
                assert!((trace.cums[ti][ch] - reference.cums[ti][ch]).abs() <= 1e-8);
            }
        }
        for ch in 0..3 {
            assert!((steady.pi[ch] - steady0.pi[ch]).abs() <= 1e-12);
        }
    }
}

/// A flat pulse whose duration dwarfs the response time is detected at the
/// steady-state level up to a finite-bandwidth deficit that falls off as
/// 1/(Γ²·T): the pulse spectrum has width ~1/T against a Lorentzian
/// acceptance of width Γ².
#[test]
fn long_flat_pulse_approaches_unit_matched_efficiency() {
    let gcap = 0.1;
    let spec = matched_single_bin(2.5, 0.1, gcap);
    let model = compile_detector(&spec).unwrap();
    let mut deficits = Vec::new();
    for window in [2000.0, 4000.0] {
        let pulse = PulseSpec::flat(2.5, window);
        let grid = [-0.6 * window, 0.6 * window + 500.0];
        let trace = evolve_single_excitation(&model, &pulse, &grid).unwrap();
        let deficit = 1.0 - trace.final_total();
        assert!(
            deficit <= 1.5 / (gcap * window),
            "matched flat-pulse deficit too large at T={window}: {deficit}"
        );
        deficits.push(deficit);
    }
    let ratio = deficits[1] / deficits[0];
    assert!(
        (0.4..=0.6).contains(&ratio),
        "deficit should halve when the window doubles, got ratio {ratio}"
    );
}

/// Rates are non-negative, cumulative probabilities are non-decreasing, and
/// the total never exceeds one beyond numerical slack.
#[test]
fn traces_are_causal_and_sub_unitary() {
    let model = compile_detector(&mixed_feature_spec()).unwrap();
    let pulse = PulseSpec::gaussian(2.5, 100.0);
    let grid = linspace(-400.0, 1800.0, 23);
    let trace = evolve_single_excitation(&model, &pulse, &grid).unwrap();
    for ti in 0..grid.len() {
        for ch in 0..3 {
            assert!(trace.rates[ti][ch] >= -1e-12);
            if ti > 0 {
                assert!(trace.cums[ti][ch] >= trace.cums[ti - 1][ch] - 1e-12);
            }
        }
    }
    assert!(trace.final_total() <= 1.0 + 1e-9);
}

#[test]
fn hierarchy_rejects_oversized_models() {
    let spec = DetectorSpec::evenly_spaced(1.0, 2.0, 65, 0.01, 0.1);
    let model = compile_detector(&spec).unwrap();
    let pulse = PulseSpec::gaussian(1.5, 20.0);
    match evolve_fock_hierarchy(&model, &pulse, &[-50.0, 50.0]) {
        Err(Error::InvalidArgument { .. }) => {}
        other => panic!("expected a size rejection, got {other:?}"),
    }
}

/// Sample times must be strictly increasing and finite.
#[test]
fn time_grid_is_validated() {
    let model = compile_detector(&mixed_feature_spec()).unwrap();
    let pulse = PulseSpec::gaussian(2.4, 20.0);
    for bad in [vec![0.0], vec![0.0, 0.0], vec![10.0, -10.0]] {
        assert!(matches!(
            evolve_single_excitation(&model, &pulse, &bad),
            Err(Error::InvalidArgument { .. })
        ));
    }
}
