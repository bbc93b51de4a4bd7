//! Worst-case efficiency optimization of bin weights, coupling-rate
//! calibration, and the dispersion trade-off sweep.
//!
//! The design objective is minimax: minimize over weights the worst
//! in-band inefficiency `max_ω (1 − P(ω))`. The max is smoothed by a
//! log-sum-exp with a temperature annealed over a few stages, and the
//! smoothed objective has a cheap analytic gradient because the
//! steady-state response is a rank-one update of a diagonal system: all
//! weight-independent factors are precomputed once per frequency-grid
//! point, so each objective evaluation is O(grid × variables).

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::lbfgsb;
use crate::metrics::{
    band_averaged_omega_sigma, default_sigma0_schedule, format_sci, sigma0_schedule,
    system_jitter,
};
use crate::model::{compile_detector, CompiledModel, DetectorSpec};
use crate::steady_state::{channel_probabilities, diag_term, SolveMethod};
use crate::Result;

/// Options for [`optimize_weights`] and the operations built on it. All
/// fields have defaults, so `{}` is a valid options document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeOptions {
    /// Frequency-grid density: points per bin spacing (centers and
    /// midpoints between adjacent centers are always included).
    pub grid_points_per_spacing: usize,
    /// Explicit evaluation grid (eV, inside the band); overrides the
    /// density-derived default when present.
    pub grid: Option<Vec<f64>>,
    /// Upper bound on each weight, as a multiple of Γ²ᵢ/γ².
    pub weight_bound_factor: f64,
    /// Initial log-sum-exp smoothing temperature.
    pub lse_temperature: f64,
    /// Number of annealing stages.
    pub lse_stages: usize,
    /// Temperature multiplier between stages.
    pub lse_decay: f64,
    /// Quasi-Newton iteration budget per stage.
    pub max_iters_per_stage: usize,
    /// Whether endcap weights are variables too. Default: yes whenever the
    /// spec has endcaps.
    pub optimize_endcaps: Option<bool>,
    /// Starting weights (bins first, then endcaps if optimized). Default:
    /// Γ²ᵢ/(γ²·N).
    pub init_weights: Option<Vec<f64>>,
    /// Relative log-uniform perturbation applied to the starting weights;
    /// 0 disables it and makes the seed irrelevant.
    pub init_perturbation: f64,
    /// Seed for the starting-point perturbation.
    pub seed: u64,
    /// Bisection bracket (lo, hi) for the incoherent-rate calibration, eV.
    pub gamma_cap_bracket: (f64, f64),
    /// σ₀ schedule multipliers (units of 1/min Γ²) used by the trade-off
    /// sweep's jitter evaluation; None uses the metrics default.
    pub sigma0_multipliers: Option<Vec<f64>>,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            grid_points_per_spacing: 20,
            grid: None,
            weight_bound_factor: 1e4,
            lse_temperature: 1e-2,
            lse_stages: 3,
            lse_decay: 0.1,
            max_iters_per_stage: 400,
            optimize_endcaps: None,
            init_weights: None,
            init_perturbation: 0.0,
            seed: 0,
            gamma_cap_bracket: (1e-4, 0.1),
            sigma0_multipliers: None,
        }
    }
}

/// Outcome of a weight optimization. `worst_inefficiency` is recomputed
/// from the returned spec through the ordinary steady-state path, not read
/// back from the optimizer's internal model.
#[derive(Debug, Clone, Serialize)]
pub struct OptimizationResult {
    pub spec: DetectorSpec,
    pub worst_inefficiency: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Smoothed objective after every accepted step, stages concatenated.
    pub objective_history: Vec<f64>,
}

/// The frequency grid the minimax objective is evaluated on: uniform at
/// `points_per_spacing` points per bin spacing across the band, plus every
/// bin center and every midpoint between adjacent centers.
pub fn default_band_grid(spec: &DetectorSpec, points_per_spacing: usize) -> Vec<f64> {
    let lo = spec.band_lo;
    let hi = spec.band_hi;
    let spacing = spec.bin_spacing().unwrap_or(hi - lo);
    let step = spacing / points_per_spacing.max(1) as f64;
    let segments = (((hi - lo) / step).round() as usize).max(1);
    let mut pts: Vec<f64> = (0..=segments)
        .map(|i| lo + (hi - lo) * i as f64 / segments as f64)
        .collect();
    for b in &spec.bins {
        pts.push(b.center);
    }
    for w in spec.bins.windows(2) {
        pts.push(0.5 * (w[0].center + w[1].center));
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= step * 1e-6);
    pts
}

/// Largest in-band inefficiency `max_ω (1 − P(ω))` over a frequency grid.
pub fn worst_case_inefficiency(model: &CompiledModel, omega_grid: &[f64]) -> Result<f64> {
    let ps = omega_grid
        .par_iter()
        .map(|&w| channel_probabilities(model, w, SolveMethod::Rank1).map(|r| r.total))
        .collect::<Result<Vec<_>>>()?;
    Ok(ps.iter().map(|p| 1.0 - p).fold(f64::NEG_INFINITY, f64::max))
}

/// Weight-independent per-grid-point data plus scratch space for the
/// smoothed minimax objective and its analytic gradient.
struct MinimaxObjective {
    gamma_sq: f64,
    num_grid: usize,
    num_vars: usize,
    /// Fixed (non-variable) contribution to S(ω) = Σ wⱼ/Bⱼ, per grid point.
    s_fix: Vec<Complex64>,
    /// Fixed contribution to A(ω) = Σ wⱼΓ²ⱼ/|Bⱼ|², per grid point.
    a_fix: Vec<f64>,
    /// ∂S/∂nᵢ, laid out grid-major.
    s_var: Vec<Complex64>,
    /// ∂A/∂nᵢ, laid out grid-major.
    a_var: Vec<f64>,
    ineff: Vec<f64>,
    dp: Vec<f64>,
}

impl MinimaxObjective {
    /// Smoothed objective `m + τ·ln Σ_ω exp((1−P(ω)−m)/τ)` with
    /// `m = max_ω (1−P(ω))`, and its gradient with respect to the weights.
    fn eval(&mut self, tau: f64, n: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.num_vars;
        let half = 0.5 * self.gamma_sq;
        for g in 0..self.num_grid {
            let sv = &self.s_var[g * v..(g + 1) * v];
            let av = &self.a_var[g * v..(g + 1) * v];
            let mut s = self.s_fix[g];
            let mut a = self.a_fix[g];
            for i in 0..v {
                s += n[i] * sv[i];
                a += n[i] * av[i];
            }
            let phi = (Complex64::ONE + half * s).inv();
            let phi2 = phi.norm_sqr();
            self.ineff[g] = 1.0 - self.gamma_sq * phi2 * a;
            for i in 0..v {
                self.dp[g * v + i] =
                    self.gamma_sq * phi2 * (av[i] - self.gamma_sq * (phi * sv[i]).re * a);
            }
        }
        let m = self.ineff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        grad.iter_mut().for_each(|gi| *gi = 0.0);
        for g in 0..self.num_grid {
            let w = ((self.ineff[g] - m) / tau).exp();
            z += w;
            for i in 0..v {
                grad[i] -= w * self.dp[g * v + i];
            }
        }
        grad.iter_mut().for_each(|gi| *gi /= z);
        m + tau * z.ln()
    }
}

/// How each compiled element maps onto the optimization variables.
struct VariableLayout {
    /// `(variable index, share)` per element, or None if its weight is
    /// fixed; a dispersed bin's sub-elements share one variable with share
    /// 1/K, so the bin weight stays the total over its sub-elements.
    assignment: Vec<(Option<usize>, f64)>,
    num_vars: usize,
    with_endcaps: bool,
}

fn variable_layout(spec: &DetectorSpec, opts: &OptimizeOptions) -> Result<VariableLayout> {
    let with_endcaps = opts.optimize_endcaps.unwrap_or(!spec.endcaps.is_empty());
    let nb = spec.bins.len();

    // Compile a unit-weight copy: each element's weight is then exactly its
    // share of the owning variable, and the layout matches the real
    // compilation because it is one.
    let mut probe = spec.clone();
    for b in &mut probe.bins {
        b.weight = 1.0;
    }
    for c in &mut probe.endcaps {
        c.weight = 1.0;
    }
    let structure = compile_detector(&probe)?;

    let mut assignment = Vec::with_capacity(structure.elements.len());
    let mut cap_index = 0usize;
    for e in &structure.elements {
        match e.channel {
            Some(bin) => assignment.push((Some(bin), e.weight)),
            None => {
                let var = if with_endcaps {
                    Some(nb + cap_index)
                } else {
                    None
                };
                assignment.push((var, spec.endcaps[cap_index].weight));
                cap_index += 1;
            }
        }
    }
    let num_vars = nb + if with_endcaps { spec.endcaps.len() } else { 0 };
    Ok(VariableLayout {
        assignment,
        num_vars,
        with_endcaps,
    })
}

fn build_objective(
    spec: &DetectorSpec,
    layout: &VariableLayout,
    grid: &[f64],
) -> Result<MinimaxObjective> {
    let mut probe = spec.clone();
    for b in &mut probe.bins {
        b.weight = 1.0;
    }
    for c in &mut probe.endcaps {
        c.weight = 1.0;
    }
    let structure = compile_detector(&probe)?;

    let v = layout.num_vars;
    let g_count = grid.len();
    let mut s_fix = vec![Complex64::ZERO; g_count];
    let mut a_fix = vec![0.0; g_count];
    let mut s_var = vec![Complex64::ZERO; g_count * v];
    let mut a_var = vec![0.0; g_count * v];

    for (g, &omega) in grid.iter().enumerate() {
        for (e, &(var, share)) in structure.elements.iter().zip(&layout.assignment) {
            let b = diag_term(e.energy, e.gamma_cap_sq, omega);
            if b.norm_sqr() == 0.0 {
                return Err(Error::SingularSystem { omega0: omega });
            }
            let ib = b.inv();
            if !ib.re.is_finite() || !ib.im.is_finite() {
                return Err(Error::SingularSystem { omega0: omega });
            }
            let a_term = e.gamma_cap_sq * ib.norm_sqr();
            match var {
                Some(i) => {
                    s_var[g * v + i] += share * ib;
                    a_var[g * v + i] += share * a_term;
                }
                None => {
                    // share here is the element's fixed weight.
                    s_fix[g] += share * ib;
                    a_fix[g] += share * a_term;
                }
            }
        }
    }

    Ok(MinimaxObjective {
        gamma_sq: spec.gamma_sq,
        num_grid: g_count,
        num_vars: v,
        s_fix,
        a_fix,
        s_var,
        a_var,
        ineff: vec![0.0; g_count],
        dp: vec![0.0; g_count * v],
    })
}

fn apply_weights(spec: &DetectorSpec, layout: &VariableLayout, x: &[f64]) -> DetectorSpec {
    let mut out = spec.clone();
    for (i, b) in out.bins.iter_mut().enumerate() {
        b.weight = x[i];
    }
    if layout.with_endcaps {
        let nb = out.bins.len();
        for (e, c) in out.endcaps.iter_mut().enumerate() {
            c.weight = x[nb + e];
        }
    }
    out
}

/// Weights of a spec in variable order, for warm-starting a related run.
fn extract_weights(spec: &DetectorSpec, with_endcaps: bool) -> Vec<f64> {
    let mut w: Vec<f64> = spec.bins.iter().map(|b| b.weight).collect();
    if with_endcaps {
        w.extend(spec.endcaps.iter().map(|c| c.weight));
    }
    w
}

/// Optimize bin (and optionally endcap) weights to minimize the worst
/// in-band inefficiency. Deterministic for a given spec, options, and seed;
/// the returned spec carries the optimized weights and nothing else changed.
pub fn optimize_weights(
    spec: &DetectorSpec,
    opts: &OptimizeOptions,
) -> Result<OptimizationResult> {
    compile_detector(spec)?; // full validation up front
    if !(spec.gamma_sq > 0.0) {
        return Err(Error::InvalidArgument {
            what: "weight optimization requires a positive coupling rate gamma_sq".into(),
        });
    }
    if !(opts.lse_temperature > 0.0)
        || !(opts.lse_decay > 0.0 && opts.lse_decay < 1.0)
        || opts.lse_stages == 0
        || !(opts.weight_bound_factor > 0.0)
    {
        return Err(Error::InvalidArgument {
            what: "optimizer options: temperature and bound factor must be positive, \
                   decay in (0,1), at least one stage"
                .into(),
        });
    }

    let grid = match &opts.grid {
        Some(g) => {
            if g.is_empty()
                || g.iter()
                    .any(|w| !w.is_finite() || *w < spec.band_lo || *w > spec.band_hi)
            {
                return Err(Error::InvalidArgument {
                    what: "explicit evaluation grid must be nonempty and inside the band".into(),
                });
            }
            g.clone()
        }
        None => default_band_grid(spec, opts.grid_points_per_spacing),
    };
    let layout = variable_layout(spec, opts)?;
    let v = layout.num_vars;
    let mut objective = build_objective(spec, &layout, &grid)?;

    let nb = spec.bins.len();
    let max_gcap = spec
        .bins
        .iter()
        .map(|b| b.gamma_cap_sq)
        .fold(0.0, f64::max);
    let var_gcap = |i: usize| -> f64 {
        if i < nb {
            spec.bins[i].gamma_cap_sq
        } else {
            max_gcap
        }
    };

    let lo = vec![0.0; v];
    let hi: Vec<f64> = (0..v)
        .map(|i| opts.weight_bound_factor * var_gcap(i) / spec.gamma_sq)
        .collect();

    let mut x: Vec<f64> = match &opts.init_weights {
        Some(w) => {
            if w.len() != v || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidArgument {
                    what: format!(
                        "init_weights must be {v} finite non-negative values \
                         (bins first, then endcaps when optimized)"
                    ),
                });
            }
            w.clone()
        }
        None => (0..v)
            .map(|i| var_gcap(i) / (spec.gamma_sq * nb as f64))
            .collect(),
    };
    if opts.init_perturbation > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for xi in &mut x {
            let u: f64 = rng.random_range(-1.0..1.0);
            *xi *= (opts.init_perturbation * u).exp();
        }
    }

    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut tau = opts.lse_temperature;
    for _ in 0..opts.lse_stages {
        let outcome = lbfgsb::minimize(
            |n, grad| objective.eval(tau, n, grad),
            &x,
            &lo,
            &hi,
            &lbfgsb::Options {
                memory: 10,
                max_iters: opts.max_iters_per_stage,
                g_tol: 1e-10,
                f_tol: 1e-14,
            },
        )?;
        x = outcome.x;
        iterations += outcome.iterations;
        converged = outcome.converged;
        history.extend(outcome.history);
        tau *= opts.lse_decay;
    }

    let optimized = apply_weights(spec, &layout, &x);
    let model = compile_detector(&optimized)?;
    let worst = worst_case_inefficiency(&model, &grid)?;

    Ok(OptimizationResult {
        spec: optimized,
        worst_inefficiency: worst,
        iterations,
        converged,
        objective_history: history,
    })
}

/// Outcome of an incoherent-rate calibration: the smallest feasible Γ²
/// found and the optimized design at that rate.
#[derive(Debug, Clone, Serialize)]
pub struct CalibrationOutcome {
    pub gamma_cap_sq: f64,
    pub result: OptimizationResult,
    /// Number of weight optimizations the bisection spent.
    pub evaluations: usize,
}

const GAMMA_CAP_SQ_REL_WIDTH: f64 = 1e-3;

/// Find the smallest incoherent rate Γ² that keeps the optimized design's
/// worst-case efficiency at or above `efficiency_floor`, with every bin's
/// absorption spread over `delta_omega` (auto-chosen sub-element count).
/// Slower Γ² means lower jitter and sharper per-element lines, so the sweep
/// wants the smallest rate that still covers the band.
///
/// Bisection runs on `opts.gamma_cap_bracket` to a relative width of 1e-3;
/// feasibility is assumed monotone in Γ² and checked on the bracket
/// endpoints. Each candidate's weight optimization warm-starts from the
/// previous optimum (the optimal weights vary slowly with Γ²). Errors with
/// [`Error::InfeasibleFloor`] if even the top of the bracket cannot reach
/// the floor; a feasible bracket bottom is returned as-is (the constraint
/// is vacuous there, e.g. a monochromatic grid with matched weights).
pub fn calibrate_gamma(
    spec: &DetectorSpec,
    delta_omega: f64,
    efficiency_floor: f64,
    opts: &OptimizeOptions,
) -> Result<CalibrationOutcome> {
    if !(efficiency_floor > 0.0 && efficiency_floor < 1.0) {
        return Err(Error::InvalidArgument {
            what: format!("efficiency floor must be in (0, 1), got {efficiency_floor}"),
        });
    }
    if !delta_omega.is_finite() || delta_omega < 0.0 {
        return Err(Error::InvalidArgument {
            what: format!("dispersion width must be finite and ≥ 0, got {delta_omega}"),
        });
    }
    let (blo, bhi) = opts.gamma_cap_bracket;
    if !(blo > 0.0 && bhi > blo && bhi.is_finite()) {
        return Err(Error::InvalidArgument {
            what: format!("calibration bracket must satisfy 0 < lo < hi, got ({blo}, {bhi})"),
        });
    }

    let with_endcaps = opts.optimize_endcaps.unwrap_or(!spec.endcaps.is_empty());
    let mut evaluations = 0usize;
    let mut warm: Option<Vec<f64>> = None;

    let try_rate = |gamma_cap_sq: f64,
                    warm: &mut Option<Vec<f64>>,
                    evaluations: &mut usize|
     -> Result<(bool, OptimizationResult)> {
        let mut candidate = spec.clone();
        for b in &mut candidate.bins {
            b.gamma_cap_sq = gamma_cap_sq;
            b.dispersion = delta_omega;
            b.subdivisions = None;
        }
        let mut stage_opts = opts.clone();
        stage_opts.init_weights = warm.clone();
        let result = optimize_weights(&candidate, &stage_opts)?;
        *warm = Some(extract_weights(&result.spec, with_endcaps));
        *evaluations += 1;
        let feasible = result.worst_inefficiency <= 1.0 - efficiency_floor;
        Ok((feasible, result))
    };

    let (mut lo, mut hi) = (blo, bhi);
    let (lo_feasible, lo_result) = try_rate(lo, &mut warm, &mut evaluations)?;
    if lo_feasible {
        return Ok(CalibrationOutcome {
            gamma_cap_sq: lo,
            result: lo_result,
            evaluations,
        });
    }
    let (hi_feasible, hi_result) = try_rate(hi, &mut warm, &mut evaluations)?;
    if !hi_feasible {
        return Err(Error::InfeasibleFloor {
            floor: efficiency_floor,
            max_efficiency: 1.0 - hi_result.worst_inefficiency,
        });
    }

    let mut best = hi_result;
    while (hi - lo) > GAMMA_CAP_SQ_REL_WIDTH * hi {
        let mid = 0.5 * (lo + hi);
        let (feasible, result) = try_rate(mid, &mut warm, &mut evaluations)?;
        if feasible {
            hi = mid;
            best = result;
        } else {
            lo = mid;
        }
    }

    Ok(CalibrationOutcome {
        gamma_cap_sq: hi,
        result: best,
        evaluations,
    })
}

/// One point of the dispersion trade-off sweep. Metric fields are None when
/// that Δω failed; `error` says why.
#[derive(Debug, Clone, Serialize)]
pub struct TradeoffRow {
    pub delta_omega: f64,
    pub gamma_cap_sq: Option<f64>,
    pub omega_sigma: Option<f64>,
    pub jitter_fs: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TradeoffReport {
    pub rows: Vec<TradeoffRow>,
}

impl TradeoffReport {
    /// CSV export with columns `delta_omega_eV,omega_sigma_eV,jitter_fs`;
    /// failed rows keep their Δω with empty metric cells.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "delta_omega_eV,omega_sigma_eV,jitter_fs")?;
        let cell = |v: Option<f64>| v.map(format_sci).unwrap_or_default();
        for row in &self.rows {
            writeln!(
                out,
                "{},{},{}",
                format_sci(row.delta_omega),
                cell(row.omega_sigma),
                cell(row.jitter_fs),
            )?;
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1).max(1) as f64)
        .collect()
}

/// Sweep the element dispersion Δω applied to every bin of the base design:
/// for each value, find the smallest feasible Γ² against the efficiency
/// floor, re-optimize weights, and report the band-averaged frequency
/// resolution together with the system jitter at band center. A failing Δω
/// is recorded and the sweep continues; rows come back sorted by Δω.
pub fn resolution_jitter_tradeoff(
    base: &DetectorSpec,
    delta_omegas: &[f64],
    efficiency_floor: f64,
    opts: &OptimizeOptions,
) -> Result<TradeoffReport> {
    if delta_omegas.is_empty() || delta_omegas.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::InvalidArgument {
            what: "dispersion sweep needs a non-empty list of finite Δω ≥ 0".into(),
        });
    }
    if let Some(spacing) = base.bin_spacing() {
        if let Some(bad) = delta_omegas.iter().find(|d| **d > spacing * (1.0 + 1e-12)) {
            return Err(Error::InvalidArgument {
                what: format!(
                    "dispersion {bad} eV exceeds the bin spacing {spacing} eV; \
                     beyond that the sub-element combs of adjacent bins interleave"
                ),
            });
        }
    }
    let mut values = delta_omegas.to_vec();
    values.sort_by(f64::total_cmp);

    let mut rows = Vec::with_capacity(values.len());
    for delta in values {
        let row = (|| -> Result<TradeoffRow> {
            let calib = calibrate_gamma(base, delta, efficiency_floor, opts)?;
            let model = compile_detector(&calib.result.spec)?;
            let res_grid = linspace(base.band_lo, base.band_hi, 101);
            let omega_sigma = band_averaged_omega_sigma(&model, &res_grid)?;
            let schedule = match &opts.sigma0_multipliers {
                Some(m) => sigma0_schedule(&model, m)?,
                None => default_sigma0_schedule(&model)?,
            };
            let mid = 0.5 * (base.band_lo + base.band_hi);
            let jitter = system_jitter(&model, mid, &schedule)?;
            Ok(TradeoffRow {
                delta_omega: delta,
                gamma_cap_sq: Some(calib.gamma_cap_sq),
                omega_sigma: Some(omega_sigma),
                jitter_fs: Some(jitter),
                error: None,
            })
        })();
        rows.push(row.unwrap_or_else(|e| TradeoffRow {
            delta_omega: delta,
            gamma_cap_sq: None,
            omega_sigma: None,
            jitter_fs: None,
            error: Some(e.to_string()),
        }));
    }
    Ok(TradeoffReport { rows })
}
