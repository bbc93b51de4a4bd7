//! Reference scenarios: the sequential-filter baseline, endcap A/B
//! comparison, and back-of-envelope hardware realization estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::metrics::format_sci;
use crate::model::{compile_detector, CompiledModel, DetectorSpec};
use crate::steady_state::{channel_probabilities, ChannelResponse, SolveMethod};
use crate::Result;
use crate::HBAR_EV_FS;

/// One single-bin detector per bin of the source design, traversed in
/// order of increasing center frequency. The classical alternative to one
/// cooperative array: each stage filters its own bin and passes the rest on.
#[derive(Debug, Clone)]
pub struct SequentialStack {
    pub stages: Vec<CompiledModel>,
}

impl SequentialStack {
    /// Split a design into its sequential baseline: every bin becomes a
    /// standalone single-bin detector with the same band and coupling rate;
    /// endcaps are dropped (they exist to fix the cooperative response,
    /// which a chain of independent filters does not have). Bin order in a
    /// valid spec is already ascending in center.
    pub fn from_spec(spec: &DetectorSpec) -> Result<Self> {
        if spec.bins.is_empty() {
            return Err(Error::InvalidArgument {
                what: "sequential baseline needs at least one bin".into(),
            });
        }
        let stages = spec
            .bins
            .iter()
            .map(|bin| {
                let solo = DetectorSpec {
                    band_lo: spec.band_lo,
                    band_hi: spec.band_hi,
                    bins: vec![bin.clone()],
                    gamma_sq: spec.gamma_sq,
                    chi: spec.chi,
                    endcaps: Vec::new(),
                };
                compile_detector(&solo)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SequentialStack { stages })
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }
}

/// Channel probabilities of the sequential chain at one photon frequency:
/// stage i fires with its solo probability attenuated by transmission past
/// every earlier stage, `Πᵢ = Pᵢ(ω)·Π_{j<i}(1 − Pⱼ(ω))`. Channels are
/// concatenated in stage order, mirroring the bins of the source design.
pub fn sequential_chain(stack: &SequentialStack, omega0: f64) -> Result<ChannelResponse> {
    let mut pi = Vec::with_capacity(stack.stages.len());
    let mut transmitted = 1.0;
    for stage in &stack.stages {
        let solo = channel_probabilities(stage, omega0, SolveMethod::Rank1)?;
        pi.push(transmitted * solo.total);
        transmitted *= 1.0 - solo.total;
    }
    let total = pi.iter().sum();
    Ok(ChannelResponse { omega0, pi, total })
}

/// Side-by-side response of two designs at one probe frequency, typically a
/// bare band against the same band with endcaps.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub omega0: f64,
    /// True when the probe lies outside the detection band, where any
    /// response is a false positive.
    pub out_of_band: bool,
    pub p_base: f64,
    pub p_capped: f64,
    pub dominant_bin_base: Option<usize>,
    pub dominant_p_base: Option<f64>,
    pub dominant_bin_capped: Option<usize>,
    pub dominant_p_capped: Option<f64>,
    /// Whether the capped design responds less at this probe.
    pub capping_reduced: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    pub fn write_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        writeln!(
            out,
            "omega0_eV,out_of_band,p_base,p_capped,dominant_bin_base,dominant_p_base,\
             dominant_bin_capped,dominant_p_capped,capping_reduced"
        )?;
        let bin_cell = |v: Option<usize>| v.map(|i| i.to_string()).unwrap_or_default();
        let p_cell = |v: Option<f64>| v.map(format_sci).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                format_sci(r.omega0),
                r.out_of_band,
                format_sci(r.p_base),
                format_sci(r.p_capped),
                bin_cell(r.dominant_bin_base),
                p_cell(r.dominant_p_base),
                bin_cell(r.dominant_bin_capped),
                p_cell(r.dominant_p_capped),
                r.capping_reduced,
            )?;
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

/// Probe two designs sharing a band and bin layout at a list of photon
/// frequencies (in or out of band) and tabulate total and dominant-bin
/// responses. The usual use is quantifying how much out-of-band response
/// endcap groups remove.
pub fn compare_endcaps(
    base: &DetectorSpec,
    capped: &DetectorSpec,
    probes: &[f64],
) -> Result<ComparisonReport> {
    if base.band_lo != capped.band_lo
        || base.band_hi != capped.band_hi
        || base.bins.len() != capped.bins.len()
    {
        return Err(Error::InvalidArgument {
            what: "comparison requires designs with the same band and bin count".into(),
        });
    }
    if probes.is_empty() || probes.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "comparison needs a non-empty list of finite probe frequencies".into(),
        });
    }
    let base_model = compile_detector(base)?;
    let capped_model = compile_detector(capped)?;
    let rows = probes
        .par_iter()
        .map(|&omega0| {
            let rb = channel_probabilities(&base_model, omega0, SolveMethod::Rank1)?;
            let rc = channel_probabilities(&capped_model, omega0, SolveMethod::Rank1)?;
            let dom_b = rb.dominant_bin();
            let dom_c = rc.dominant_bin();
            Ok(ComparisonRow {
                omega0,
                out_of_band: omega0 < base.band_lo || omega0 > base.band_hi,
                p_base: rb.total,
                p_capped: rc.total,
                dominant_bin_base: dom_b.map(|d| d.0),
                dominant_p_base: dom_b.map(|d| d.1),
                dominant_bin_capped: dom_c.map(|d| d.0),
                dominant_p_capped: dom_c.map(|d| d.1),
                capping_reduced: rc.total < rb.total,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonReport { rows })
}

/// Hardware parameters for a quantum-dot realization of one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealizationParams {
    /// Emitter radiative lifetime (ps); sets γ² = ħ/τ.
    pub qd_lifetime_ps: f64,
    /// Emitters available per frequency bin.
    pub dots_per_bin: f64,
    /// Detection band width Ω (eV).
    pub band_width: f64,
    /// Number of bins.
    pub bins: usize,
}

/// What a dot ensemble can deliver against a design's weight demand.
#[derive(Debug, Clone, Serialize)]
pub struct RealizationReport {
    /// Per-emitter coupling rate γ² (eV) implied by the lifetime.
    pub gamma_sq_ev: f64,
    /// Achievable dimensionless weight density `dots_per_bin·γ²/Ω`.
    pub weight_budget: f64,
    /// Weight density the design asks for.
    pub target: f64,
    pub meets_target: bool,
    /// Total emitter count across the band.
    pub total_dots: f64,
}

/// Translate emitter count and lifetime into the dimensionless weight
/// budget `n·γ²/Ω` and compare it against a design's demand. A lifetime of
/// τ picoseconds gives γ² = ħ/τ = 0.6582119569/(1000·τ_ps) eV.
pub fn realization_estimate(
    params: &RealizationParams,
    target: f64,
) -> Result<RealizationReport> {
    if !(params.qd_lifetime_ps > 0.0 && params.qd_lifetime_ps.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "qd_lifetime_ps must be positive".into(),
        });
    }
    if !(params.dots_per_bin >= 0.0 && params.dots_per_bin.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "dots_per_bin must be non-negative".into(),
        });
    }
    if !(params.band_width > 0.0 && params.band_width.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "band_width must be positive".into(),
        });
    }
    if params.bins == 0 {
        return Err(Error::InvalidArgument {
            what: "bins must be at least 1".into(),
        });
    }
    if !(target >= 0.0 && target.is_finite()) {
        return Err(Error::InvalidArgument {
            what: "target weight density must be non-negative".into(),
        });
    }
    let gamma_sq_ev = HBAR_EV_FS / (1000.0 * params.qd_lifetime_ps);
    let weight_budget = params.dots_per_bin * gamma_sq_ev / params.band_width;
    Ok(RealizationReport {
        gamma_sq_ev,
        weight_budget,
        target,
        meets_target: weight_budget >= target,
        total_dots: params.dots_per_bin * params.bins as f64,
    })
}
