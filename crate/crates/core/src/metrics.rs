//! Figures of merit: efficiency curves, frequency moments, system jitter.
//!
//! Detection efficiency is the long-time total probability P(ω₀). The
//! reported frequency of a detected photon is the center of the firing bin;
//! its conditional mean ω_μ and standard deviation ω_ς define the frequency
//! resolution. System jitter σ_SYS is the detection-time standard deviation
//! with the pulse width removed in quadrature, extrapolated to the
//! infinitely-broad-pulse limit over a σ₀-doubling schedule.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{evolve_amplitudes, gridded_pulse_variance, PulseSpec, RateMoments};
use crate::error::Error;
use crate::model::CompiledModel;
use crate::ode::Dopri5;
use crate::steady_state::{channel_probabilities, ChannelResponse, SolveMethod};
use crate::Result;
use crate::HBAR_EV_FS;

/// Fixed scientific notation with 12 significant digits; the one numeric
/// format used in every CSV artifact.
pub fn format_sci(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.11e}")
    }
}

/// Frequency-resolved metrics over a photon-frequency grid. Columns not
/// computed by the producing operation hold NaN (empty CSV cells, JSON
/// null).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    /// Photon frequencies ω₀ (eV).
    pub omega_grid: Vec<f64>,
    /// Total detection probability P(ω₀).
    pub efficiency: Vec<f64>,
    /// Conditional mean reported frequency ω_μ (eV).
    pub omega_mu: Vec<f64>,
    /// Conditional standard deviation ω_ς (eV); the frequency resolution.
    pub omega_sigma: Vec<f64>,
    /// System jitter σ_SYS (fs), where computed.
    pub jitter_fs: Vec<f64>,
}

impl MetricsReport {
    /// CSV export with columns `omega0_eV,P,omega_mu_eV,omega_sigma_eV,jitter_fs`.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "omega0_eV,P,omega_mu_eV,omega_sigma_eV,jitter_fs")?;
        for i in 0..self.omega_grid.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                format_sci(self.omega_grid[i]),
                format_sci(self.efficiency[i]),
                format_sci(self.omega_mu[i]),
                format_sci(self.omega_sigma[i]),
                format_sci(self.jitter_fs[i]),
            )?;
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialization cannot fail")
    }

    pub fn min_efficiency(&self) -> f64 {
        self.efficiency.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Convert dimensionless model time (units of ħ/unit_energy) to
/// femtoseconds: `t_fs = t · 0.6582119569 / unit_energy[eV]`.
pub fn to_femtoseconds(dimensionless_time: f64, unit_energy: f64) -> Result<f64> {
    if unit_energy > 0.0 && unit_energy.is_finite() {
        Ok(dimensionless_time * HBAR_EV_FS / unit_energy)
    } else {
        Err(Error::InvalidArgument {
            what: format!("unit energy must be positive, got {unit_energy}"),
        })
    }
}

/// Conditional mean and standard deviation of the reported frequency:
/// `ω_μ = Σᵢ ωᵢ Πᵢ / P`, `ω_ς = sqrt(Σᵢ (ωᵢ − ω_μ)² Πᵢ / P)`, both in eV.
pub fn frequency_moments(response: &ChannelResponse, bin_centers: &[f64]) -> Result<(f64, f64)> {
    assert_eq!(
        response.pi.len(),
        bin_centers.len(),
        "channel count mismatch between response and bin centers"
    );
    if !(response.total > 0.0) {
        return Err(Error::UndefinedMoments {
            omega0: response.omega0,
        });
    }
    let p = response.total;
    let mu: f64 = response
        .pi
        .iter()
        .zip(bin_centers)
        .map(|(pi, w)| w * pi)
        .sum::<f64>()
        / p;
    let var: f64 = response
        .pi
        .iter()
        .zip(bin_centers)
        .map(|(pi, w)| (w - mu) * (w - mu) * pi)
        .sum::<f64>()
        / p;
    Ok((mu, var.max(0.0).sqrt()))
}

/// Efficiency P(ω₀) over a frequency grid via the rank-one steady-state
/// path; moment and jitter columns left unfilled. Grid points evaluate as a
/// parallel map over a read-only model.
pub fn efficiency_curve(model: &CompiledModel, omega_grid: &[f64]) -> Result<MetricsReport> {
    let efficiency = omega_grid
        .par_iter()
        .map(|&w| channel_probabilities(model, w, SolveMethod::Rank1).map(|r| r.total))
        .collect::<Result<Vec<_>>>()?;
    let n = omega_grid.len();
    Ok(MetricsReport {
        omega_grid: omega_grid.to_vec(),
        efficiency,
        omega_mu: vec![f64::NAN; n],
        omega_sigma: vec![f64::NAN; n],
        jitter_fs: vec![f64::NAN; n],
    })
}

/// Full metrics over a grid: efficiency and frequency moments everywhere
/// (moments NaN where P = 0), plus system jitter at every grid point when a
/// σ₀ schedule is supplied.
pub fn evaluate_metrics(
    model: &CompiledModel,
    omega_grid: &[f64],
    jitter_schedule: Option<&[f64]>,
) -> Result<MetricsReport> {
    let rows = omega_grid
        .par_iter()
        .map(|&w| {
            let resp = channel_probabilities(model, w, SolveMethod::Rank1)?;
            let (mu, sigma) = match frequency_moments(&resp, &model.bin_centers) {
                Ok(ms) => ms,
                Err(Error::UndefinedMoments { .. }) => (f64::NAN, f64::NAN),
                Err(e) => return Err(e),
            };
            let jit = match jitter_schedule {
                Some(schedule) => system_jitter(model, w, schedule)?,
                None => f64::NAN,
            };
            Ok((resp.total, mu, sigma, jit))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        omega_grid: omega_grid.to_vec(),
        efficiency: rows.iter().map(|r| r.0).collect(),
        omega_mu: rows.iter().map(|r| r.1).collect(),
        omega_sigma: rows.iter().map(|r| r.2).collect(),
        jitter_fs: rows.iter().map(|r| r.3).collect(),
    })
}

/// Mean ω_ς over a frequency grid; the resolution figure used by the
/// dispersion trade-off sweep.
pub fn band_averaged_omega_sigma(model: &CompiledModel, omega_grid: &[f64]) -> Result<f64> {
    let sigmas = omega_grid
        .par_iter()
        .map(|&w| {
            let resp = channel_probabilities(model, w, SolveMethod::Rank1)?;
            frequency_moments(&resp, &model.bin_centers).map(|(_, s)| s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sigmas.iter().sum::<f64>() / sigmas.len() as f64)
}

/// σ₀ schedule from multipliers of the slowest monitored rate: each entry
/// is `multiplier / min Γ²`.
pub fn sigma0_schedule(model: &CompiledModel, multipliers: &[f64]) -> Result<Vec<f64>> {
    let g = model.min_monitored_rate().ok_or_else(|| Error::InvalidArgument {
        what: "jitter schedule undefined: model has no monitored elements".into(),
    })?;
    let schedule: Vec<f64> = multipliers.iter().map(|m| m / g).collect();
    check_schedule(&schedule)?;
    Ok(schedule)
}

/// Default σ₀ schedule: {20, 40, 80, 160} / min Γ², a doubling sequence
/// starting well inside the broad-pulse regime.
pub fn default_sigma0_schedule(model: &CompiledModel) -> Result<Vec<f64>> {
    sigma0_schedule(model, &[20.0, 40.0, 80.0, 160.0])
}

fn check_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.len() < 2
        || !schedule.windows(2).all(|w| w[1] > w[0])
        || !schedule.iter().all(|s| *s > 0.0 && s.is_finite())
    {
        return Err(Error::InvalidArgument {
            what: "sigma0 schedule must be an increasing sequence of at least two positive widths"
                .into(),
        });
    }
    Ok(())
}

/// Integration window for a Gaussian pulse of width σ₀: ±8σ₀ keeps the
/// truncated envelope mass within ~1e-15 of unity, plus a relaxation tail.
fn jitter_window(model: &CompiledModel, sigma0: f64) -> (f64, f64) {
    let tail = match model.min_monitored_rate() {
        Some(g) => 50.0 / g,
        None => 0.0,
    };
    (-8.0 * sigma0, 8.0 * sigma0 + tail)
}

fn detection_sigma_sq(m: &RateMoments, omega0: f64) -> Result<f64> {
    if !(m.m0 > 0.0) {
        return Err(Error::UndefinedMoments { omega0 });
    }
    let mean = m.m1 / m.m0;
    Ok(m.m2 / m.m0 - mean * mean)
}

/// Per-σ₀ jitter observations: for each scheduled width, integrate the
/// amplitude path over a Gaussian pulse, take the detection-time variance of
/// dP/dt, and remove the realized pulse variance in quadrature. Returns
/// `(σ₀, σ_SYS(σ₀))` pairs in model time units.
pub fn jitter_observations(
    model: &CompiledModel,
    omega0: f64,
    schedule: &[f64],
) -> Result<Vec<(f64, f64)>> {
    check_schedule(schedule)?;
    schedule
        .par_iter()
        .map(|&sigma0| {
            let pulse = PulseSpec::gaussian(omega0, sigma0);
            let (t0, t1) = jitter_window(model, sigma0);
            let grid = [t0, t1];
            let (_, per_channel) = evolve_amplitudes(model, &pulse, &grid, &Dopri5::default())?;
            let total = RateMoments::total(&per_channel);
            let sigma_sq = detection_sigma_sq(&total, omega0)?;
            let pulse_var = gridded_pulse_variance(&pulse, t0, t1)?;
            Ok((sigma0, (sigma_sq - pulse_var).max(0.0).sqrt()))
        })
        .collect()
}

/// Extrapolate a geometrically converging sequence of observations to its
/// limit. Returns the limit and a relative convergence estimate.
fn extrapolate(seq: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = seq.len();
    let value = |i: usize| seq[i].1;
    if n == 2 {
        let limit = value(1);
        let conv = (value(1) - value(0)).abs() / limit.abs().max(f64::MIN_POSITIVE);
        return Ok((limit, conv));
    }
    let f1 = value(n - 3);
    let f2 = value(n - 2);
    let f3 = value(n - 1);
    let d_a = f2 - f1;
    let d_b = f3 - f2;
    let scale = f3.abs().max(f64::MIN_POSITIVE);
    if d_b.abs() <= 1e-4 * scale {
        // Already converged to well under the acceptance threshold; the
        // remaining wobble can be subtraction noise with no geometric
        // structure, so take the last value as the limit.
        return Ok((f3, d_b.abs() / scale));
    }
    let r = d_a / d_b;
    if !r.is_finite() || r <= 1.2 {
        return Err(Error::JitterNotConverged {
            partial: seq.to_vec(),
        });
    }
    let correction = d_b / (r - 1.0);
    let limit = f3 + correction;
    Ok((limit, (correction / limit).abs()))
}

/// System jitter σ_SYS(ω₀) in femtoseconds: quadrature-subtracted detection
/// jitter extrapolated over the σ₀ schedule (default
/// [`default_sigma0_schedule`]). Errors with the partial sequence if the
/// schedule does not converge to within 5%.
pub fn system_jitter(model: &CompiledModel, omega0: f64, schedule: &[f64]) -> Result<f64> {
    let seq = jitter_observations(model, omega0, schedule)?;
    let (limit, conv) = extrapolate(&seq)?;
    if conv > 0.05 {
        return Err(Error::JitterNotConverged { partial: seq });
    }
    to_femtoseconds(limit, 1.0)
}

/// Per-channel jitter σᵢ(ω₀) in femtoseconds over the same schedule,
/// NaN for channels whose detection probability or convergence is too poor
/// to estimate. The total-rate form is [`system_jitter`].
pub fn system_jitter_per_channel(
    model: &CompiledModel,
    omega0: f64,
    schedule: &[f64],
) -> Result<Vec<f64>> {
    check_schedule(schedule)?;
    let per_sigma0: Vec<(f64, Vec<RateMoments>, f64)> = schedule
        .par_iter()
        .map(|&sigma0| {
            let pulse = PulseSpec::gaussian(omega0, sigma0);
            let (t0, t1) = jitter_window(model, sigma0);
            let grid = [t0, t1];
            let (_, per_channel) = evolve_amplitudes(model, &pulse, &grid, &Dopri5::default())?;
            let pulse_var = gridded_pulse_variance(&pulse, t0, t1)?;
            Ok((sigma0, per_channel, pulse_var))
        })
        .collect::<Result<Vec<_>>>()?;

    let nch = model.num_channels;
    let mut out = Vec::with_capacity(nch);
    for ch in 0..nch {
        let seq: Vec<(f64, f64)> = per_sigma0
            .iter()
            .filter_map(|(sigma0, moments, pulse_var)| {
                let sigma_sq = detection_sigma_sq(&moments[ch], omega0).ok()?;
                Some((*sigma0, (sigma_sq - pulse_var).max(0.0).sqrt()))
            })
            .collect();
        let estimate = if seq.len() == schedule.len() {
            extrapolate(&seq)
                .ok()
                .filter(|(_, conv)| *conv <= 0.05)
                .map(|(limit, _)| limit * HBAR_EV_FS)
        } else {
            None
        };
        out.push(estimate.unwrap_or(f64::NAN));
    }
    Ok(out)
}
