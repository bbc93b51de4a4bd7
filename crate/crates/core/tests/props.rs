//! Property checks: the algebraic and structural guarantees that must hold
//! for every well-formed design, exercised over randomized instances. Each
//! case draws a seed, expands it into a spec with the shared generators, and
//! asserts an exact identity or a bound with an explicit error budget.

mod common;

use chromadet::steady_state::{amplitudes_dense, amplitudes_rank1};
use chromadet::{
    channel_probabilities, compile_detector, default_sigma0_schedule, frequency_moments,
    jitter_observations, sequential_chain, system_jitter, BinSpec, DetectorSpec, EndcapSpec,
    SequentialStack, SolveMethod,
};
use common::{close, matched_single_bin, random_spec};
use proptest::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Random design with up to ~200 grid elements: more bins and finer combs
/// than `random_spec`, sized for exercising the dense solver at scale.
fn large_random_spec(rng: &mut ChaCha8Rng) -> DetectorSpec {
    let band_lo: f64 = rng.random_range(0.5..3.0);
    let width: f64 = rng.random_range(0.8..2.0);
    let band_hi = band_lo + width;
    let n = rng.random_range(1..=12usize);
    let slot = width / n as f64;
    let bins = (0..n)
        .map(|i| {
            let wobble: f64 = rng.random_range(-0.3..0.3);
            let dispersed = rng.random_bool(0.5);
            BinSpec {
                center: band_lo + slot * (i as f64 + 0.5 + wobble),
                weight: rng.random_range(0.01..40.0),
                gamma_cap_sq: rng.random_range(1e-3..0.4),
                dispersion: if dispersed {
                    rng.random_range(0.0..slot * 0.8)
                } else {
                    0.0
                },
                subdivisions: if dispersed {
                    Some(rng.random_range(1..=16))
                } else {
                    None
                },
            }
        })
        .collect();
    let mut endcaps = Vec::new();
    if rng.random_bool(0.5) {
        endcaps.push(EndcapSpec {
            energy: band_lo - rng.random_range(0.05..0.5),
            weight: rng.random_range(0.0..10.0),
        });
    }
    if rng.random_bool(0.5) {
        endcaps.push(EndcapSpec {
            energy: band_hi + rng.random_range(0.05..0.5),
            weight: rng.random_range(0.0..10.0),
        });
    }
    DetectorSpec {
        band_lo,
        band_hi,
        bins,
        gamma_sq: rng.random_range(1e-4..0.2),
        chi: 0.0,
        endcaps,
    }
}

/// Probe list spanning the interesting frequencies of a spec: every bin
/// center, every endcap energy, and a few uniform draws just past the band.
fn probe_frequencies(spec: &DetectorSpec, rng: &mut ChaCha8Rng, extra: usize) -> Vec<f64> {
    let mut probes: Vec<f64> = spec.bins.iter().map(|b| b.center).collect();
    probes.extend(spec.endcaps.iter().map(|c| c.energy));
    for _ in 0..extra {
        probes.push(rng.random_range(spec.band_lo - 0.2..spec.band_hi + 0.2));
    }
    probes
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// The O(M) diagonal-plus-rank-one path and the dense LU oracle solve
    /// the same linear system two different ways; on random models up to
    /// ~200 elements every amplitude must agree to relative 1e-10 (with the
    /// grid's largest amplitude as the floor for components near zero,
    /// where the dense factorization's absolute error dominates).
    #[test]
    fn fast_path_matches_the_dense_oracle(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = large_random_spec(&mut rng);
        let model = compile_detector(&spec).unwrap();
        prop_assert!(model.elements.len() <= 200);
        for _ in 0..4 {
            let omega0 = rng.random_range(spec.band_lo - 0.3..spec.band_hi + 0.3);
            let fast = amplitudes_rank1(&model, omega0).unwrap();
            let dense = amplitudes_dense(&model, omega0).unwrap();
            prop_assert_eq!(fast.len(), dense.len());
            let amax = fast
                .iter()
                .chain(dense.iter())
                .map(|a| a.norm())
                .fold(0.0f64, f64::max);
            for (a, b) in fast.iter().zip(dense.iter()) {
                let scale = a.norm().max(b.norm()).max(amax);
                prop_assert!(
                    (a - b).norm() <= 1e-10 * scale,
                    "amplitudes diverge at omega0={}: {} vs {}",
                    omega0, a, b
                );
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Compiling is a pure function of the spec: compiling twice, or
    /// compiling a JSON round-trip of the spec, yields the identical grid —
    /// and the grid conserves the spec's total weight.
    #[test]
    fn compiling_is_deterministic_and_conserves_weight(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, 6, 8);
        let a = compile_detector(&spec).unwrap();
        let b = compile_detector(&spec).unwrap();
        prop_assert_eq!(&a, &b);
        let roundtrip = DetectorSpec::from_json(&spec.to_json_pretty()).unwrap();
        let c = compile_detector(&roundtrip).unwrap();
        prop_assert_eq!(&a, &c);

        let declared: f64 = spec.bins.iter().map(|b| b.weight).sum::<f64>()
            + spec.endcaps.iter().map(|e| e.weight).sum::<f64>();
        prop_assert!(close(a.total_weight(), declared, 1e-12, 0.0));
    }

    /// Detection probabilities are probabilities: every channel nonnegative
    /// and the total never above 1, at resonances, at endcap energies (the
    /// total-reflection point), and at arbitrary frequencies.
    #[test]
    fn responses_are_sub_unitary_and_nonnegative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, 6, 8);
        let model = compile_detector(&spec).unwrap();
        for omega0 in probe_frequencies(&spec, &mut rng, 6) {
            let r = channel_probabilities(&model, omega0, SolveMethod::Rank1).unwrap();
            prop_assert!(r.total <= 1.0 + 1e-9, "total {} > 1 at {}", r.total, omega0);
            prop_assert!(r.total >= 0.0);
            for (i, p) in r.pi.iter().enumerate() {
                prop_assert!(*p >= -1e-12, "channel {} negative: {}", i, p);
            }
            prop_assert!(close(r.total, r.pi.iter().sum::<f64>(), 1e-12, 1e-300));
        }
    }

    /// One monitored element of unit weight is the textbook case: the
    /// response is the closed-form Lorentzian in the detuning, equal to
    /// 4γ²Γ²/(γ²+Γ²)² on resonance, which reaches exactly 1 when γ² = Γ².
    #[test]
    fn single_element_response_matches_the_closed_form(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let center = rng.random_range(1.0..3.0);
        let gamma_sq = rng.random_range(1e-4..0.3);
        let gcap = rng.random_range(1e-3..0.4);
        let spec = DetectorSpec {
            band_lo: center - 0.6,
            band_hi: center + 0.6,
            bins: vec![BinSpec {
                center,
                weight: 1.0,
                gamma_cap_sq: gcap,
                dispersion: 0.0,
                subdivisions: None,
            }],
            gamma_sq,
            chi: 0.0,
            endcaps: Vec::new(),
        };
        let model = compile_detector(&spec).unwrap();
        for _ in 0..4 {
            let delta = rng.random_range(-0.5..0.5);
            let expected = gamma_sq * gcap
                / ((gcap / 2.0 + gamma_sq / 2.0).powi(2) + delta * delta);
            for method in [SolveMethod::Rank1, SolveMethod::Dense] {
                let r = channel_probabilities(&model, center + delta, method).unwrap();
                prop_assert!(close(r.total, expected, 1e-12, 1e-300));
            }
        }

        let matched = compile_detector(&matched_single_bin(center, gcap, gcap)).unwrap();
        let peak = channel_probabilities(&matched, center, SolveMethod::Rank1).unwrap();
        prop_assert!(close(peak.total, 1.0, 1e-12, 0.0));
    }

    /// The amplifier measurement rate only dephases populated dark states;
    /// the steady-state response must not depend on it at all — bit for bit.
    #[test]
    fn the_measurement_rate_never_enters_the_steady_state(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = random_spec(&mut rng, 5, 6);
        spec.chi = 0.0;
        let base = compile_detector(&spec).unwrap();
        let mut dephased = spec.clone();
        dephased.chi = rng.random_range(1e-3..2.0);
        let loud = compile_detector(&dephased).unwrap();
        for omega0 in probe_frequencies(&spec, &mut rng, 4) {
            let a = channel_probabilities(&base, omega0, SolveMethod::Rank1).unwrap();
            let b = channel_probabilities(&loud, omega0, SolveMethod::Rank1).unwrap();
            prop_assert_eq!(a.pi, b.pi);
            prop_assert_eq!(a.total, b.total);
        }
    }

    /// Shifting every energy in the problem — band, bin centers, endcaps,
    /// and the photon — shifts the mean detected frequency by the same
    /// amount and leaves the frequency spread unchanged.
    #[test]
    fn moments_shift_with_the_band(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, 6, 8);
        let shift = rng.random_range(-1.5..1.5);
        let mut moved = spec.clone();
        moved.band_lo += shift;
        moved.band_hi += shift;
        for bin in &mut moved.bins {
            bin.center += shift;
        }
        for cap in &mut moved.endcaps {
            cap.energy += shift;
        }
        let here = compile_detector(&spec).unwrap();
        let there = compile_detector(&moved).unwrap();
        let centers: Vec<f64> = spec.bins.iter().map(|b| b.center).collect();
        let moved_centers: Vec<f64> = moved.bins.iter().map(|b| b.center).collect();
        for _ in 0..4 {
            let omega0 = rng.random_range(spec.band_lo..spec.band_hi);
            let a = channel_probabilities(&here, omega0, SolveMethod::Rank1).unwrap();
            if a.total <= 1e-9 {
                continue;  // nothing detected; moments undefined by contract
            }
            let b = channel_probabilities(&there, omega0 + shift, SolveMethod::Rank1).unwrap();
            let (mu_a, sig_a) = frequency_moments(&a, &centers).unwrap();
            let (mu_b, sig_b) = frequency_moments(&b, &moved_centers).unwrap();
            prop_assert!(close(mu_b, mu_a + shift, 1e-9, 1e-9));
            // A single-channel spread is 0 up to sqrt-amplified round-off
            // (~1e-7 for eV-scale centers), hence the absolute allowance.
            prop_assert!(
                (sig_b - sig_a).abs() <= 1e-9 * sig_a.max(sig_b) + 1e-6,
                "spread moved under translation: {} vs {}",
                sig_a, sig_b
            );
        }
    }

    /// Only the products w·γ² are physical: scaling γ² by s and every weight
    /// by 1/s leaves each channel probability unchanged.
    #[test]
    fn uniform_coupling_rescaling_is_invisible(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, 6, 8);
        let s = rng.random_range(0.05..20.0);
        let mut scaled = spec.clone();
        scaled.gamma_sq *= s;
        for bin in &mut scaled.bins {
            bin.weight /= s;
        }
        for cap in &mut scaled.endcaps {
            cap.weight /= s;
        }
        let a = compile_detector(&spec).unwrap();
        let b = compile_detector(&scaled).unwrap();
        for omega0 in probe_frequencies(&spec, &mut rng, 4) {
            let ra = channel_probabilities(&a, omega0, SolveMethod::Rank1).unwrap();
            let rb = channel_probabilities(&b, omega0, SolveMethod::Rank1).unwrap();
            for (x, y) in ra.pi.iter().zip(rb.pi.iter()) {
                prop_assert!(close(*x, *y, 1e-12, 1e-300));
            }
            prop_assert!(close(ra.total, rb.total, 1e-12, 1e-300));
        }
    }

    /// A chain can only split probability, never create it: the chained
    /// total equals 1 − Π(1 − Pⱼ) over the solo stages, stays within [0, 1],
    /// and — being a symmetric product — survives reversing the stage order.
    #[test]
    fn chains_conserve_and_commute_in_total(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, 5, 4);
        let stack = SequentialStack::from_spec(&spec).unwrap();
        let mut flipped = stack.clone();
        flipped.stages.reverse();
        for omega0 in probe_frequencies(&spec, &mut rng, 3) {
            let chained = sequential_chain(&stack, omega0).unwrap();
            prop_assert!(chained.total <= 1.0 + 1e-12);
            prop_assert!(chained.pi.iter().all(|p| *p >= 0.0));

            let mut passed = 1.0;
            for stage in &stack.stages {
                let solo = channel_probabilities(stage, omega0, SolveMethod::Rank1).unwrap();
                prop_assert!(solo.total <= 1.0 + 1e-9);
                passed *= 1.0 - solo.total;
            }
            prop_assert!(close(chained.total, 1.0 - passed, 1e-12, 1e-15));

            let reversed = sequential_chain(&flipped, omega0).unwrap();
            prop_assert!(close(chained.total, reversed.total, 1e-12, 1e-15));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Doubling the sub-element count of a dispersed bin beyond the default
    /// quarter-linewidth spacing moves every channel probability by less
    /// than the midpoint-rule error budget (measured worst case ~5e-3;
    /// asserted at 2e-2).
    #[test]
    fn dispersion_refinement_is_converged(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let band_lo: f64 = rng.random_range(0.5..3.0);
        let width: f64 = rng.random_range(0.4..2.0);
        let n = rng.random_range(1..=3usize);
        let slot = width / n as f64;
        let mut bins: Vec<BinSpec> = (0..n)
            .map(|i| BinSpec {
                center: band_lo + slot * (i as f64 + 0.5 + rng.random_range(-0.3..0.3)),
                weight: rng.random_range(0.01..40.0),
                gamma_cap_sq: rng.random_range(1e-3..0.4),
                dispersion: 0.0,
                subdivisions: None,
            })
            .collect();
        let min_gcap = bins
            .iter()
            .map(|b| b.gamma_cap_sq)
            .fold(f64::INFINITY, f64::min);
        let which = rng.random_range(0..n);
        let dispersion =
            (rng.random_range(0.01..10.0) * min_gcap).min(slot * 0.8);
        bins[which].dispersion = dispersion;
        let spec = DetectorSpec {
            band_lo,
            band_hi: band_lo + width,
            bins,
            gamma_sq: rng.random_range(1e-4..0.2),
            chi: 0.0,
            endcaps: Vec::new(),
        };

        let auto_k = ((4.0 * dispersion / min_gcap).ceil() as u32).clamp(1, 256);
        let mut refined = spec.clone();
        refined.bins[which].subdivisions = Some(2 * auto_k);

        let coarse = compile_detector(&spec).unwrap();
        let fine = compile_detector(&refined).unwrap();
        let comb_center = spec.bins[which].center;
        let probes = [
            comb_center + rng.random_range(-0.6..0.6) * dispersion,
            spec.bins[rng.random_range(0..n)].center,
            rng.random_range(band_lo..band_lo + width),
        ];
        for omega0 in probes {
            let a = channel_probabilities(&coarse, omega0, SolveMethod::Rank1).unwrap();
            let b = channel_probabilities(&fine, omega0, SolveMethod::Rank1).unwrap();
            for (x, y) in a.pi.iter().zip(b.pi.iter()) {
                prop_assert!(
                    (x - y).abs() <= 2e-2,
                    "refinement moved a channel by {} at omega0={}",
                    (x - y).abs(), omega0
                );
            }
        }
    }
}

/// Raising the monitored decay rate sharpens the detection-time
/// distribution: on a single-bin design with everything else fixed, the
/// extrapolated jitter falls as Γ² grows, and every per-σ₀ observation stays
/// real and positive (the pulse-width subtraction never goes imaginary).
#[test]
fn jitter_falls_as_the_monitored_rate_grows() {
    let mut last = f64::INFINITY;
    for gcap in [0.05, 0.1, 0.2] {
        let spec = DetectorSpec {
            band_lo: 2.0,
            band_hi: 3.0,
            bins: vec![BinSpec {
                center: 2.5,
                weight: 2.0,
                gamma_cap_sq: gcap,
                dispersion: 0.0,
                subdivisions: None,
            }],
            gamma_sq: 0.05,
            chi: 0.0,
            endcaps: Vec::new(),
        };
        let model = compile_detector(&spec).unwrap();
        let schedule = default_sigma0_schedule(&model).unwrap();
        let observations = jitter_observations(&model, 2.5, &schedule).unwrap();
        for (sigma0, sigma_sys) in &observations {
            assert!(
                sigma_sys.is_finite() && *sigma_sys > 0.0,
                "bad observation {} at sigma0 {}",
                sigma_sys,
                sigma0
            );
        }
        let jitter = system_jitter(&model, 2.5, &schedule).unwrap();
        assert!(
            jitter < last,
            "jitter did not fall when the rate grew to {gcap}: {jitter} vs {last}"
        );
        last = jitter;
    }
}
