//! Time-domain integration of the single-photon master-equation hierarchy.
//!
//! Both paths integrate in a frame rotating at the pulse carrier ω₀, which
//! removes the optical-frequency oscillation and leaves detunings of order
//! the band width. [`evolve_single_excitation`] propagates per-element
//! amplitudes (exact for a one-photon input, O(M) per step);
//! [`evolve_fock_hierarchy`] propagates the full density matrix ρ together
//! with the auxiliary matrix ϱ that carries the field–matter correlations
//! of the incoming photon. Agreement of the two is a structural test of the
//! hierarchy; the long-pulse limit of either must converge to the
//! steady-state channel probabilities.

use num_complex::Complex64;

use crate::error::Error;
use crate::model::CompiledModel;
use crate::ode::{adaptive_simpson, Dopri5};
use crate::Result;
use crate::HBAR_EV_FS;

/// Pulse envelope shapes, square-normalized over the integration grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Envelope {
    /// `|ε(t)|² = (2πσ₀²)^{-1/2} exp(−t²/2σ₀²)`; σ₀ is the temporal
    /// standard deviation of the intensity.
    Gaussian { sigma0: f64 },
    /// Constant intensity over `[−window/2, window/2]`.
    Flat { window: f64 },
}

/// A single-photon wavepacket: carrier frequency plus envelope, centered at
/// t = 0 in model time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSpec {
    /// Carrier frequency ω₀ (eV).
    pub omega0: f64,
    pub envelope: Envelope,
}

impl PulseSpec {
    pub fn gaussian(omega0: f64, sigma0: f64) -> Self {
        PulseSpec {
            omega0,
            envelope: Envelope::Gaussian { sigma0 },
        }
    }

    pub fn flat(omega0: f64, window: f64) -> Self {
        PulseSpec {
            omega0,
            envelope: Envelope::Flat { window },
        }
    }

    /// Temporal standard deviation of the ideal (untruncated) intensity.
    pub fn nominal_sigma0(&self) -> f64 {
        match self.envelope {
            Envelope::Gaussian { sigma0 } => sigma0,
            Envelope::Flat { window } => window / 12f64.sqrt(),
        }
    }

    /// Envelope amplitude before grid normalization.
    fn raw_amplitude(&self, t: f64) -> f64 {
        match self.envelope {
            Envelope::Gaussian { sigma0 } => {
                let norm = (2.0 * std::f64::consts::PI * sigma0 * sigma0).powf(-0.25);
                norm * (-t * t / (4.0 * sigma0 * sigma0)).exp()
            }
            Envelope::Flat { window } => {
                if t.abs() <= window / 2.0 {
                    1.0 / window.sqrt()
                } else {
                    0.0
                }
            }
        }
    }

    /// Points where the envelope is not smooth; the integrator lands on
    /// these exactly instead of resolving a discontinuity adaptively.
    fn breakpoints(&self) -> Vec<f64> {
        match self.envelope {
            Envelope::Gaussian { .. } => Vec::new(),
            Envelope::Flat { window } => vec![-window / 2.0, window / 2.0],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self.envelope {
            Envelope::Gaussian { sigma0 } => sigma0 > 0.0 && sigma0.is_finite(),
            Envelope::Flat { window } => window > 0.0 && window.is_finite(),
        };
        if ok && self.omega0.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument {
                what: "pulse requires finite omega0 and a positive width".into(),
            })
        }
    }
}

/// Pulse restricted to an integration window and square-normalized there:
/// `∫|ε|² dt = 1` over `[t0, t1]` to within quadrature accuracy.
pub(crate) struct GriddedPulse {
    pulse: PulseSpec,
    scale: f64,
    /// Variance of the normalized intensity on the grid; the σ₀² that
    /// jitter subtraction removes.
    pub variance: f64,
}

impl GriddedPulse {
    pub fn new(pulse: PulseSpec, t0: f64, t1: f64) -> Result<Self> {
        pulse.validate()?;
        if !(t1 > t0) {
            return Err(Error::InvalidArgument {
                what: "time grid must span a positive interval".into(),
            });
        }
        let segments = segment_points(&pulse, t0, t1);
        let quad = |f: &dyn Fn(f64) -> f64| -> f64 {
            segments
                .windows(2)
                .map(|s| adaptive_simpson(f, s[0], s[1], 1e-15))
                .sum()
        };
        let mass = quad(&|t| pulse.raw_amplitude(t).powi(2));
        if !(mass > 1e-12) {
            return Err(Error::InvalidArgument {
                what: "pulse has negligible support on the time grid".into(),
            });
        }
        let m1 = quad(&|t| t * pulse.raw_amplitude(t).powi(2)) / mass;
        let m2 = quad(&|t| t * t * pulse.raw_amplitude(t).powi(2)) / mass;
        Ok(GriddedPulse {
            pulse,
            scale: mass.sqrt().recip(),
            variance: (m2 - m1 * m1).max(0.0),
        })
    }

    #[inline]
    pub fn amplitude(&self, t: f64) -> f64 {
        self.scale * self.pulse.raw_amplitude(t)
    }
}

fn segment_points(pulse: &PulseSpec, t0: f64, t1: f64) -> Vec<f64> {
    let mut pts = vec![t0];
    for b in pulse.breakpoints() {
        if b > t0 && b < t1 {
            pts.push(b);
        }
    }
    pts.push(t1);
    pts
}

/// Time-resolved detection record: per-channel rates dΠᵢ/dt and cumulative
/// probabilities Πᵢ(t) on the requested sample grid (dimensionless model
/// time).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrace {
    pub times: Vec<f64>,
    /// `rates[ti][ch]` = dΠ_ch/dt at `times[ti]`, per unit model time.
    pub rates: Vec<Vec<f64>>,
    /// `cums[ti][ch]` = Π_ch accumulated up to `times[ti]`.
    pub cums: Vec<Vec<f64>>,
}

impl TimeTrace {
    pub fn num_channels(&self) -> usize {
        self.rates.first().map_or(0, Vec::len)
    }

    /// Total cumulative detection probability at the final sample.
    pub fn final_total(&self) -> f64 {
        self.cums.last().map_or(0.0, |row| row.iter().sum())
    }

    /// CSV export: `time_fs, rate_ch0.., cum_ch0..`, times converted via
    /// ħ = 0.6582119569 eV·fs and rates converted to 1/fs accordingly.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        let n = self.num_channels();
        write!(out, "time_fs")?;
        for ch in 0..n {
            write!(out, ",rate_ch{ch}")?;
        }
        for ch in 0..n {
            write!(out, ",cum_ch{ch}")?;
        }
        writeln!(out)?;
        for (ti, &t) in self.times.iter().enumerate() {
            write!(out, "{}", crate::metrics::format_sci(t * HBAR_EV_FS))?;
            for ch in 0..n {
                write!(
                    out,
                    ",{}",
                    crate::metrics::format_sci(self.rates[ti][ch] / HBAR_EV_FS)
                )?;
            }
            for ch in 0..n {
                write!(out, ",{}", crate::metrics::format_sci(self.cums[ti][ch]))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Final time moments of a detection-rate distribution, accumulated
/// alongside the amplitude integration: `m0 = ∫ rate`, `m1 = ∫ t·rate`,
/// `m2 = ∫ t²·rate`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RateMoments {
    pub m0: f64,
    pub m1: f64,
    pub m2: f64,
}

impl RateMoments {
    const ZERO: RateMoments = RateMoments {
        m0: 0.0,
        m1: 0.0,
        m2: 0.0,
    };

    /// Sum of per-channel moments: the total-rate moments.
    pub fn total(per_channel: &[RateMoments]) -> RateMoments {
        per_channel.iter().fold(Self::ZERO, |acc, m| RateMoments {
            m0: acc.m0 + m.m0,
            m1: acc.m1 + m.m1,
            m2: acc.m2 + m.m2,
        })
    }
}

fn check_grid(time_grid: &[f64]) -> Result<()> {
    if time_grid.len() < 2 {
        return Err(Error::InvalidArgument {
            what: "time grid needs at least two points".into(),
        });
    }
    if !time_grid.windows(2).all(|w| w[1] > w[0]) || !time_grid.iter().all(|t| t.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "time grid must be finite and strictly increasing".into(),
        });
    }
    Ok(())
}

/// Merge sample times with envelope breakpoints into one increasing stop
/// list; `is_sample[i]` marks entries the caller asked for.
fn merged_stops(time_grid: &[f64], breakpoints: &[f64]) -> (Vec<f64>, Vec<Option<usize>>) {
    let t0 = time_grid[0];
    let t1 = *time_grid.last().unwrap();
    let mut stops: Vec<(f64, Option<usize>)> =
        time_grid.iter().enumerate().map(|(i, &t)| (t, Some(i))).collect();
    for &b in breakpoints {
        if b > t0 && b < t1 && time_grid.iter().all(|&t| t != b) {
            stops.push((b, None));
        }
    }
    stops.sort_by(|a, b| a.0.total_cmp(&b.0));
    (
        stops.iter().map(|s| s.0).collect(),
        stops.iter().map(|s| s.1).collect(),
    )
}

/// Integrate the single-excitation amplitude equations in the rotating
/// frame: `ċ_j = −[i(E_j−ω₀) + Γ²_j/2] c_j − (γ²/2) Σ_k w_k c_k + γ ε(t)`,
/// with per-channel detection rates `Σ_{j∈i} w_j Γ²_j |c_j|²`. Exact for a
/// single-photon input at any M; O(M) per step.
pub fn evolve_single_excitation(
    model: &CompiledModel,
    pulse: &PulseSpec,
    time_grid: &[f64],
) -> Result<TimeTrace> {
    let (trace, _) = evolve_amplitudes(model, pulse, time_grid, &Dopri5::default())?;
    Ok(trace)
}

pub(crate) fn evolve_amplitudes(
    model: &CompiledModel,
    pulse: &PulseSpec,
    time_grid: &[f64],
    integrator: &Dopri5,
) -> Result<(TimeTrace, Vec<RateMoments>)> {
    check_grid(time_grid)?;
    let t0 = time_grid[0];
    let t1 = *time_grid.last().unwrap();
    let gridded = GriddedPulse::new(*pulse, t0, t1)?;

    let m = model.elements.len();
    let nch = model.num_channels;
    let gamma = model.gamma_sq.sqrt();
    let half_gsq = 0.5 * model.gamma_sq;

    // Per-element drift −[i(E_j−ω₀) + Γ²_j/2] and detection quantics.
    let drift: Vec<Complex64> = model
        .elements
        .iter()
        .map(|e| Complex64::new(-e.gamma_cap_sq / 2.0, -(e.energy - pulse.omega0)))
        .collect();
    let weights: Vec<f64> = model.elements.iter().map(|e| e.weight).collect();
    let wg: Vec<f64> = model
        .elements
        .iter()
        .map(|e| e.weight * e.gamma_cap_sq)
        .collect();
    let channel: Vec<Option<usize>> = model.elements.iter().map(|e| e.channel).collect();

    // State layout: [c_0 .. c_{M-1}, m0_ch.., m1_ch.., m2_ch..].
    let dim = m + 3 * nch;
    let y0 = vec![Complex64::ZERO; dim];

    let rates_of = |y: &[Complex64], out: &mut [f64]| {
        out.iter_mut().for_each(|r| *r = 0.0);
        for j in 0..m {
            if let Some(ch) = channel[j] {
                out[ch] += wg[j] * y[j].norm_sqr();
            }
        }
    };

    let mut rate_buf = vec![0.0; nch];
    let mut rhs_rates = vec![0.0; nch];
    let wg_rhs = wg.clone();
    let channel_rhs = channel.clone();
    let rhs = move |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
        let eps = gamma * gridded.amplitude(t);
        let mut sum = Complex64::ZERO;
        for j in 0..m {
            sum += weights[j] * y[j];
        }
        let coupled = half_gsq * sum;
        rhs_rates.iter_mut().for_each(|r| *r = 0.0);
        for j in 0..m {
            dy[j] = drift[j] * y[j] - coupled + eps;
            if let Some(ch) = channel_rhs[j] {
                rhs_rates[ch] += wg_rhs[j] * y[j].norm_sqr();
            }
        }
        for (ch, &rate) in rhs_rates.iter().enumerate() {
            dy[m + ch] = Complex64::new(rate, 0.0);
            dy[m + nch + ch] = Complex64::new(t * rate, 0.0);
            dy[m + 2 * nch + ch] = Complex64::new(t * t * rate, 0.0);
        }
    };

    let (stops, sample_of) = merged_stops(time_grid, &pulse.breakpoints());
    let mut times = Vec::with_capacity(time_grid.len());
    let mut rates = Vec::with_capacity(time_grid.len());
    let mut cums = Vec::with_capacity(time_grid.len());
    let mut final_moments = vec![RateMoments::ZERO; nch];

    integrator.integrate(rhs, t0, &y0, &stops, |idx, t, y| {
        if sample_of[idx].is_none() {
            return Ok(());
        }
        rates_of(y, &mut rate_buf);
        times.push(t);
        rates.push(rate_buf.clone());
        cums.push((0..nch).map(|ch| y[m + ch].re).collect());
        for (ch, slot) in final_moments.iter_mut().enumerate() {
            *slot = RateMoments {
                m0: y[m + ch].re,
                m1: y[m + nch + ch].re,
                m2: y[m + 2 * nch + ch].re,
            };
        }
        Ok(())
    })?;

    Ok((
        TimeTrace {
            times,
            rates,
            cums,
        },
        final_moments,
    ))
}

/// Pulse second moment (σ₀²) actually realized on the integration grid;
/// what [`crate::metrics::system_jitter`] subtracts in quadrature.
pub(crate) fn gridded_pulse_variance(pulse: &PulseSpec, t0: f64, t1: f64) -> Result<f64> {
    Ok(GriddedPulse::new(*pulse, t0, t1)?.variance)
}

/// Hard cap on the hierarchy path's element count; the density-matrix
/// dimension is 1+2M and dense integration beyond this is impractical.
pub const MAX_HIERARCHY_ELEMENTS: usize = 64;

/// Integrate the coupled (ρ, ϱ) master-equation hierarchy in the rotating
/// frame over the basis {|0⟩, |1_j⟩, |C_j⟩}. Degenerate manifolds enter as
/// single entries with collective coupling √w_j·γ. Structural tolerances
/// (trace, Hermiticity, positivity of ρ) are enforced at every sample time.
pub fn evolve_fock_hierarchy(
    model: &CompiledModel,
    pulse: &PulseSpec,
    time_grid: &[f64],
) -> Result<TimeTrace> {
    check_grid(time_grid)?;
    let m = model.elements.len();
    if m > MAX_HIERARCHY_ELEMENTS {
        return Err(Error::InvalidArgument {
            what: format!(
                "hierarchy path supports at most {MAX_HIERARCHY_ELEMENTS} elements (got {m}); \
                 use the single-excitation path"
            ),
        });
    }
    let t0 = time_grid[0];
    let t1 = *time_grid.last().unwrap();
    let gridded = GriddedPulse::new(*pulse, t0, t1)?;

    let d = 1 + 2 * m; // |0⟩, then 1_j, then C_j
    let nch = model.num_channels;
    let gamma = model.gamma_sq.sqrt();
    let chi_sq = model.chi * model.chi;

    let beta: Vec<f64> = model.elements.iter().map(|e| e.weight.sqrt() * gamma).collect();
    let delta: Vec<f64> = model
        .elements
        .iter()
        .map(|e| e.energy - pulse.omega0)
        .collect();
    let gcap: Vec<f64> = model.elements.iter().map(|e| e.gamma_cap_sq).collect();
    let channel: Vec<Option<usize>> = model.elements.iter().map(|e| e.channel).collect();

    // Per-basis-index Hamiltonian diagonal, bath damping, and amplifier tag.
    let mut hdiag = vec![0.0; d];
    let mut ydamp = vec![0.0; d];
    let mut ctag: Vec<Option<usize>> = vec![None; d];
    for j in 0..m {
        hdiag[1 + j] = delta[j];
        ydamp[1 + j] = gcap[j] / 2.0;
        ctag[1 + m + j] = channel[j];
    }

    // State: ρ then ϱ, each d×d row-major.
    let dd = d * d;
    let mut y0 = vec![Complex64::ZERO; 2 * dd];
    y0[0] = Complex64::ONE; // ρ = |0⟩⟨0|

    let idx = |a: usize, b: usize| a * d + b;

    // Collective-coupling work buffers shared by both matrices.
    let mut u = vec![Complex64::ZERO; d];
    let mut wrow = vec![Complex64::ZERO; d];

    let apply_superop = |mat: &[Complex64],
                         out: &mut [Complex64],
                         u: &mut [Complex64],
                         wrow: &mut [Complex64]| {
        // u = mat·β over the 1-sector; wrow = βᵀ·mat.
        for a in 0..d {
            let mut acc = Complex64::ZERO;
            for j in 0..m {
                acc += beta[j] * mat[idx(a, 1 + j)];
            }
            u[a] = acc;
        }
        for b in 0..d {
            let mut acc = Complex64::ZERO;
            for j in 0..m {
                acc += beta[j] * mat[idx(1 + j, b)];
            }
            wrow[b] = acc;
        }
        let s: Complex64 = (0..m).map(|j| beta[j] * u[1 + j]).sum();

        for a in 0..d {
            let beta_a = if a >= 1 && a < 1 + m { beta[a - 1] } else { 0.0 };
            for b in 0..d {
                let mut v = Complex64::ZERO;
                let e = mat[idx(a, b)];
                // −i[H, ·] and bath anticommutator.
                v += Complex64::new(-(ydamp[a] + ydamp[b]), -(hdiag[a] - hdiag[b])) * e;
                // Amplifier dephasing: projectors onto each bin's dark
                // states; same-bin pairs are untouched, populations exact.
                if chi_sq != 0.0 {
                    let xa = ctag[a];
                    let xb = ctag[b];
                    let keep = match (xa, xb) {
                        (Some(i), Some(k)) if i == k => 1.0,
                        _ => 0.0,
                    };
                    let halves =
                        0.5 * ((xa.is_some() as u8 as f64) + (xb.is_some() as u8 as f64));
                    v += chi_sq * (keep - halves) * e;
                }
                // Collective decay D[L].
                let beta_b = if b >= 1 && b < 1 + m { beta[b - 1] } else { 0.0 };
                v -= 0.5 * (beta_a * wrow[b] + u[a] * beta_b);
                if a == 0 && b == 0 {
                    v += s;
                }
                out[idx(a, b)] += v;
            }
        }
        // Bath feed: population transfer 1_j → C_j.
        for j in 0..m {
            let from = idx(1 + j, 1 + j);
            let to = idx(1 + m + j, 1 + m + j);
            out[to] += gcap[j] * mat[from];
        }
    };

    let rhs = |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
        let eps = gridded.amplitude(t);
        dy.iter_mut().for_each(|v| *v = Complex64::ZERO);
        let (rho, varrho) = y.split_at(dd);
        let (drho, dvarrho) = dy.split_at_mut(dd);

        apply_superop(rho, drho, &mut u, &mut wrow);
        apply_superop(varrho, dvarrho, &mut u, &mut wrow);

        // Photon-correlation drive on ρ: ε[ϱ, L†] + ε*[L, ϱ†] with
        // L = Σ β_j |0⟩⟨1_j| (rotating frame removes the carrier phase).
        // uρ = ϱ·β restricted to rows; ϱ's 0-row enters the second term.
        for a in 0..d {
            let mut acc = Complex64::ZERO;
            for j in 0..m {
                acc += beta[j] * varrho[idx(a, 1 + j)];
            }
            u[a] = acc;
        }
        for a in 0..d {
            // ε(ϱβ)_a δ_{b0}
            drho[idx(a, 0)] += eps * u[a];
            // ε* δ_{a0} conj((ϱβ)_b)
            drho[idx(0, a)] += eps * u[a].conj();
        }
        for j in 0..m {
            let b1 = 1 + j;
            for b in 0..d {
                // −ε β_a ϱ_{0b}
                drho[idx(b1, b)] -= eps * beta[j] * varrho[idx(0, b)];
                // −ε* conj(ϱ_{0a}) β_b
                drho[idx(b, b1)] -= eps * beta[j] * varrho[idx(0, b)].conj();
            }
        }

        // Source on ϱ: ε*(t)[L, ρ(t₀)] = −ε*(t)·L for a ground-state start.
        for j in 0..m {
            dvarrho[idx(0, 1 + j)] -= eps * beta[j];
        }
    };

    let structural_check = |t: f64, rho: &[Complex64]| -> Result<()> {
        let tol = 1e-8;
        let mut trace = Complex64::ZERO;
        for a in 0..d {
            trace += rho[idx(a, a)];
        }
        if (trace.re - 1.0).abs() > tol || trace.im.abs() > tol {
            return Err(Error::StateViolation {
                t,
                what: format!("trace drifted to {} + {}i", trace.re, trace.im),
            });
        }
        let mut herm = 0.0f64;
        for a in 0..d {
            for b in a..d {
                herm = herm.max((rho[idx(a, b)] - rho[idx(b, a)].conj()).norm());
            }
        }
        if herm > tol {
            return Err(Error::StateViolation {
                t,
                what: format!("Hermiticity defect {herm}"),
            });
        }
        // Positive semidefinite within tolerance iff ρ + tol·I admits a
        // Cholesky factorization (round-off symmetrized away first, the
        // defect itself was checked above).
        let mut shifted = nalgebra::DMatrix::<Complex64>::from_fn(d, d, |a, b| {
            0.5 * (rho[idx(a, b)] + rho[idx(b, a)].conj())
        });
        for a in 0..d {
            shifted[(a, a)] += Complex64::new(tol, 0.0);
        }
        if shifted.cholesky().is_none() {
            return Err(Error::StateViolation {
                t,
                what: format!("density matrix not positive semidefinite within {tol}"),
            });
        }
        Ok(())
    };

    let (stops, sample_of) = merged_stops(time_grid, &pulse.breakpoints());
    let mut times = Vec::with_capacity(time_grid.len());
    let mut rates = Vec::with_capacity(time_grid.len());
    let mut cums = Vec::with_capacity(time_grid.len());

    Dopri5::default().integrate(rhs, t0, &y0, &stops, |sidx, t, y| {
        if sample_of[sidx].is_none() {
            return Ok(());
        }
        let rho = &y[..dd];
        structural_check(t, rho)?;
        let mut rate = vec![0.0; nch];
        let mut cum = vec![0.0; nch];
        for j in 0..m {
            if let Some(ch) = channel[j] {
                rate[ch] += gcap[j] * rho[idx(1 + j, 1 + j)].re;
                cum[ch] += rho[idx(1 + m + j, 1 + m + j)].re;
            }
        }
        times.push(t);
        rates.push(rate);
        cums.push(cum);
        Ok(())
    })?;

    Ok(TimeTrace {
        times,
        rates,
        cums,
    })
}
