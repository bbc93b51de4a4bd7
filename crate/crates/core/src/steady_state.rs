//! Long-time channel detection probabilities for a delta-frequency photon.
//!
//! The single-excitation steady state solves `[i(ω₀ − H − H_D)] v = L†|0⟩`
//! with `H_D = (i/2)(Σ Y†Y + L†L)`: per element, `B_j v_j + (γ²/2) Σ_k w_k v_k
//! = γ` where `B_j = i(ω₀ − E_j) + Γ²_j/2`. The coupling sees amplitudes only
//! through the weighted sum (rank-one structure), so degenerate manifolds
//! collapse exactly onto one grid entry per distinct energy.
//!
//! Two solvers: a dense LU oracle over the √(w_j w_k)-symmetrized matrix and
//! a closed-form Sherman–Morrison fast path costing O(M). Their elementwise
//! agreement is itself a test of the bright-state collapse.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::Error;
use crate::model::CompiledModel;
use crate::Result;

/// Which amplitude solver backs a probability evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Dense LU on the symmetrized M×M system; the oracle.
    Dense,
    /// O(M) diagonal-plus-rank-one closed form; the production path.
    Rank1,
}

/// Per-channel detection probabilities Πᵢ and total P at one photon
/// frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelResponse {
    pub omega0: f64,
    /// Πᵢ indexed by output channel.
    pub pi: Vec<f64>,
    /// P = Σᵢ Πᵢ.
    pub total: f64,
}

impl ChannelResponse {
    /// Channel with the largest probability, with its value; `None` for a
    /// channel-free model or one that never fires at this frequency.
    pub fn dominant_bin(&self) -> Option<(usize, f64)> {
        self.pi
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .filter(|&(_, p)| p > 0.0)
    }
}

/// `B_j = i(ω₀ − E_j) + Γ²_j/2`, the inverse single-element propagator.
#[inline]
pub(crate) fn diag_term(energy: f64, gamma_cap_sq: f64, omega0: f64) -> Complex64 {
    Complex64::new(gamma_cap_sq / 2.0, omega0 - energy)
}

fn ensure_finite(v: Vec<Complex64>, omega0: f64) -> Result<Vec<Complex64>> {
    if v.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
        Ok(v)
    } else {
        Err(Error::SingularSystem { omega0 })
    }
}

/// Sherman–Morrison closed form: `v_j = γ / (B_j (1 + (γ²/2) S))` with
/// `S = Σ_j w_j / B_j`. O(M), elementwise equal to [`amplitudes_dense`] to
/// relative 1e-10.
///
/// A weighted undamped element with B = 0 (an endcap probed exactly on
/// resonance) makes the closed form 0·∞, but the system itself stays
/// regular: the resonant element locks the weighted sum to 2γ/γ², every
/// damped amplitude vanishes, and the photon is fully reflected. That limit
/// is returned exactly; the dense path reaches the same point through its
/// LU factorization.
pub fn amplitudes_rank1(model: &CompiledModel, omega0: f64) -> Result<Vec<Complex64>> {
    let gamma = model.gamma_sq.sqrt();
    let resonant_weight: f64 = model
        .elements
        .iter()
        .filter(|e| e.weight > 0.0 && diag_term(e.energy, e.gamma_cap_sq, omega0) == Complex64::ZERO)
        .map(|e| e.weight)
        .sum();
    if resonant_weight > 0.0 && model.gamma_sq > 0.0 {
        let share = Complex64::new(2.0 * gamma / (model.gamma_sq * resonant_weight), 0.0);
        let v = model
            .elements
            .iter()
            .map(|e| {
                if e.weight > 0.0
                    && diag_term(e.energy, e.gamma_cap_sq, omega0) == Complex64::ZERO
                {
                    share
                } else {
                    Complex64::ZERO
                }
            })
            .collect();
        return ensure_finite(v, omega0);
    }
    let mut s = Complex64::ZERO;
    for e in &model.elements {
        if e.weight != 0.0 {
            s += e.weight / diag_term(e.energy, e.gamma_cap_sq, omega0);
        }
    }
    let denom = Complex64::new(1.0, 0.0) + 0.5 * model.gamma_sq * s;
    let v = model
        .elements
        .iter()
        .map(|e| gamma / (diag_term(e.energy, e.gamma_cap_sq, omega0) * denom))
        .collect();
    ensure_finite(v, omega0)
}

/// Dense oracle: materializes the symmetrized M×M matrix with
/// `√(w_j w_k)·γ²/2` off-diagonals and right-hand side `γ√w_j`, solves by
/// partial-pivot LU, and maps back to per-unit-weight amplitudes.
/// Zero-weight rows decouple from the symmetrized system; their amplitudes
/// are recovered from the residual `v_j = (γ − (γ²/2) Σ_k w_k v_k)/B_j`.
pub fn amplitudes_dense(model: &CompiledModel, omega0: f64) -> Result<Vec<Complex64>> {
    let m = model.elements.len();
    let gamma = model.gamma_sq.sqrt();
    if m == 0 {
        return Ok(Vec::new());
    }

    let sqrt_w: Vec<f64> = model.elements.iter().map(|e| e.weight.sqrt()).collect();
    let half_gsq = 0.5 * model.gamma_sq;
    let a = DMatrix::<Complex64>::from_fn(m, m, |j, k| {
        let mut entry = Complex64::new(half_gsq * sqrt_w[j] * sqrt_w[k], 0.0);
        if j == k {
            let e = &model.elements[j];
            entry += diag_term(e.energy, e.gamma_cap_sq, omega0);
        }
        entry
    });
    let rhs = DVector::<Complex64>::from_fn(m, |j, _| Complex64::new(gamma * sqrt_w[j], 0.0));

    let lu = a.lu();
    let scaled = lu
        .solve(&rhs)
        .ok_or(Error::SingularSystem { omega0 })?;

    // Weighted sum Σ w_k v_k = Σ √w_k ṽ_k, needed to complete zero-weight rows.
    let weighted_sum: Complex64 = (0..m).map(|k| sqrt_w[k] * scaled[k]).sum();

    let v = model
        .elements
        .iter()
        .enumerate()
        .map(|(j, e)| {
            if e.weight > 0.0 {
                scaled[j] / sqrt_w[j]
            } else {
                (gamma - half_gsq * weighted_sum) / diag_term(e.energy, e.gamma_cap_sq, omega0)
            }
        })
        .collect();
    ensure_finite(v, omega0)
}

/// Per-channel probabilities `Πᵢ = Σ_{j∈channel i} w_j Γ²_j |v_j|²` and their
/// total. Endcap elements shape the amplitudes through the collective
/// coupling but contribute no detection probability.
pub fn channel_probabilities(
    model: &CompiledModel,
    omega0: f64,
    method: SolveMethod,
) -> Result<ChannelResponse> {
    let v = match method {
        SolveMethod::Dense => amplitudes_dense(model, omega0)?,
        SolveMethod::Rank1 => amplitudes_rank1(model, omega0)?,
    };
    Ok(response_from_amplitudes(model, omega0, &v))
}

pub(crate) fn response_from_amplitudes(
    model: &CompiledModel,
    omega0: f64,
    v: &[Complex64],
) -> ChannelResponse {
    let mut pi = vec![0.0; model.num_channels];
    for (e, amp) in model.elements.iter().zip(v) {
        if let Some(ch) = e.channel {
            pi[ch] += e.weight * e.gamma_cap_sq * amp.norm_sqr();
        }
    }
    let total = pi.iter().sum();
    ChannelResponse { omega0, pi, total }
}
