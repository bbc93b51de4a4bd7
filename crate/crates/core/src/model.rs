//! Detector specification and compilation into a flat element grid.
//!
//! A [`DetectorSpec`] is the user-level design: a detection band, an ordered
//! list of frequency bins (each a group of `weight` near-degenerate absorber
//! elements with an incoherent monitored decay rate and an optional flat
//! dispersion of transition energies), a common optical coupling rate, and
//! optional unmonitored endcap groups outside the band. [`compile_detector`]
//! flattens this into the [`CompiledModel`] element grid shared by every
//! solver: diagonal element energies plus a rank-one collective coupling.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Every channel probability changes by less than this when the flat
/// dispersion discretization is refined from the default `K` to `2K`
/// (midpoint-rule consistency; asserted by tests).
pub const DISPERSION_REFINEMENT_TOL: f64 = 1e-2;

/// Upper clamp on the automatically derived sub-element count per bin.
/// Keeps models at very small monitored rates tractable; refinement beyond
/// this changes probabilities well below [`DISPERSION_REFINEMENT_TOL`].
pub const MAX_AUTO_SUBDIVISIONS: u32 = 256;

/// One frequency bin: a group of `weight` effective absorber elements
/// centered on `center`, decaying at rate `gamma_cap_sq` into that bin's
/// monitored dark states, with transition energies spread uniformly over
/// `dispersion` around the center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinSpec {
    /// Bin center energy ωᵢ (eV).
    pub center: f64,
    /// Effective element count nᵢ (continuous, ≥ 0).
    pub weight: f64,
    /// Incoherent monitored decay rate Γ² (eV).
    pub gamma_cap_sq: f64,
    /// Flat spread Δω of element detunings over (−Δω/2, Δω/2) (eV).
    #[serde(default)]
    pub dispersion: f64,
    /// Number of discrete sub-elements representing the flat dispersion.
    /// `None` derives a count from the absorption linewidth (spacing
    /// ≤ min Γ²/4, clamped to [`MAX_AUTO_SUBDIVISIONS`]).
    #[serde(default)]
    pub subdivisions: Option<u32>,
}

/// An unmonitored absorber group outside the band: couples to the field but
/// has no monitored decay channel, so it shapes the collective response
/// without registering detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndcapSpec {
    /// Element energy (eV), outside the detection band.
    pub energy: f64,
    /// Effective element count (≥ 0).
    pub weight: f64,
}

/// User-level detector design. Ingested from JSON with keys mirroring the
/// field names exactly; energies in eV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    /// Lower edge of the detection range Ω (eV).
    pub band_lo: f64,
    /// Upper edge of the detection range Ω (eV).
    pub band_hi: f64,
    /// Frequency bins, ordered by strictly increasing center.
    pub bins: Vec<BinSpec>,
    /// Optical coupling rate γ² per element (eV, ≥ 0). Zero is a valid if
    /// inert detector: nothing couples, so nothing is ever detected.
    pub gamma_sq: f64,
    /// Measurement/amplifier rate χ (eV). Retained for the dynamics path;
    /// results must not depend on it.
    #[serde(default)]
    pub chi: f64,
    /// Unmonitored absorber groups outside the band.
    #[serde(default)]
    pub endcaps: Vec<EndcapSpec>,
}

impl DetectorSpec {
    /// Parse a spec from a JSON document, rejecting unknown keys, then
    /// validate it.
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: DetectorSpec = serde_json::from_str(text)?;
        let violations = validate_spec(&spec);
        if violations.is_empty() {
            Ok(spec)
        } else {
            Err(Error::InvalidSpec { violations })
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization cannot fail")
    }

    /// Convenience constructor: `n` bins with unit weight, evenly spaced
    /// (endpoint-inclusive) over `[band_lo, band_hi]`, uniform rates, no
    /// dispersion, no endcaps.
    pub fn evenly_spaced(
        band_lo: f64,
        band_hi: f64,
        n: usize,
        gamma_sq: f64,
        gamma_cap_sq: f64,
    ) -> Self {
        let bins = (0..n)
            .map(|i| {
                let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
                BinSpec {
                    center: band_lo + frac * (band_hi - band_lo),
                    weight: 1.0,
                    gamma_cap_sq,
                    dispersion: 0.0,
                    subdivisions: None,
                }
            })
            .collect();
        DetectorSpec {
            band_lo,
            band_hi,
            bins,
            gamma_sq,
            chi: 0.0,
            endcaps: Vec::new(),
        }
    }

    /// Spacing between adjacent bin centers, if there are at least two bins.
    pub fn bin_spacing(&self) -> Option<f64> {
        if self.bins.len() >= 2 {
            Some((self.bins[self.bins.len() - 1].center - self.bins[0].center)
                / (self.bins.len() - 1) as f64)
        } else {
            None
        }
    }
}

/// One entry of the flattened element grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Element {
    /// Transition energy E (eV).
    pub energy: f64,
    /// Effective element count carried by this grid entry.
    pub weight: f64,
    /// Monitored decay rate Γ² (eV); zero for endcap elements.
    pub gamma_cap_sq: f64,
    /// Output channel (bin index), or `None` for endcap elements.
    pub channel: Option<usize>,
}

/// Flattened single-excitation element grid: diagonal energies plus the
/// rank-one collective coupling structure (`gamma_sq` times a weighted
/// all-ones coupling). Immutable after construction; safe to share across
/// worker threads.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledModel {
    pub elements: Vec<Element>,
    pub gamma_sq: f64,
    pub chi: f64,
    /// Number of output channels N (one per bin, in bin order).
    pub num_channels: usize,
    /// Bin center energies, indexed by channel.
    pub bin_centers: Vec<f64>,
}

impl CompiledModel {
    /// Smallest positive monitored rate among elements that carry weight;
    /// sets the slowest detection timescale.
    pub fn min_monitored_rate(&self) -> Option<f64> {
        self.elements
            .iter()
            .filter(|e| e.gamma_cap_sq > 0.0 && e.weight > 0.0)
            .map(|e| e.gamma_cap_sq)
            .fold(None, |acc, g| Some(acc.map_or(g, |a: f64| a.min(g))))
    }

    pub fn total_weight(&self) -> f64 {
        self.elements.iter().map(|e| e.weight).sum()
    }

    /// Largest detuning of any element from `omega0`; sets the fastest
    /// rotating-frame oscillation the integrator has to resolve.
    pub fn max_detuning(&self, omega0: f64) -> f64 {
        self.elements
            .iter()
            .map(|e| (e.energy - omega0).abs())
            .fold(0.0, f64::max)
    }
}

fn check_finite(violations: &mut Vec<String>, what: String, value: f64) {
    if !value.is_finite() {
        violations.push(format!("{what}: not finite"));
    }
}

/// Check every `DetectorSpec`/`BinSpec` invariant. Returns an empty list iff
/// the spec is well formed; each violation names the field and rule.
/// Violations are data, not failures.
pub fn validate_spec(spec: &DetectorSpec) -> Vec<String> {
    let mut v = Vec::new();

    check_finite(&mut v, "band_lo".into(), spec.band_lo);
    check_finite(&mut v, "band_hi".into(), spec.band_hi);
    check_finite(&mut v, "gamma_sq".into(), spec.gamma_sq);
    check_finite(&mut v, "chi".into(), spec.chi);

    if !(spec.band_lo < spec.band_hi) {
        v.push("band: band_lo must be less than band_hi".into());
    }
    if spec.gamma_sq < 0.0 {
        v.push("gamma_sq: negative coupling rate".into());
    }
    if spec.chi < 0.0 {
        v.push("chi: negative measurement rate".into());
    }

    let mut prev_center = f64::NEG_INFINITY;
    for (i, bin) in spec.bins.iter().enumerate() {
        check_finite(&mut v, format!("bin {i}: center"), bin.center);
        check_finite(&mut v, format!("bin {i}: weight"), bin.weight);
        check_finite(&mut v, format!("bin {i}: gamma_cap_sq"), bin.gamma_cap_sq);
        check_finite(&mut v, format!("bin {i}: dispersion"), bin.dispersion);

        if bin.center < spec.band_lo || bin.center > spec.band_hi {
            v.push(format!("bin {i}: center outside band"));
        }
        if bin.center <= prev_center {
            v.push(format!("bin {i}: center not strictly increasing"));
        }
        prev_center = bin.center;
        if bin.weight < 0.0 {
            v.push(format!("bin {i}: negative weight"));
        }
        if bin.gamma_cap_sq < 0.0 {
            v.push(format!("bin {i}: negative gamma_cap_sq"));
        }
        if bin.dispersion < 0.0 {
            v.push(format!("bin {i}: negative dispersion"));
        }
        if bin.subdivisions == Some(0) {
            v.push(format!("bin {i}: subdivisions must be positive"));
        }
    }

    for (k, cap) in spec.endcaps.iter().enumerate() {
        check_finite(&mut v, format!("endcap {k}: energy"), cap.energy);
        check_finite(&mut v, format!("endcap {k}: weight"), cap.weight);
        if cap.energy >= spec.band_lo && cap.energy <= spec.band_hi {
            v.push(format!("endcap {k}: energy inside band"));
        }
        if cap.weight < 0.0 {
            v.push(format!("endcap {k}: negative weight"));
        }
    }

    v
}

/// Sub-element count for a bin when the spec does not fix one: spacing
/// Δω/K at most a quarter of the smallest monitored rate, so the
/// discretization resolves the absorption linewidth.
fn auto_subdivisions(dispersion: f64, min_gamma_cap_sq: Option<f64>) -> u32 {
    if dispersion == 0.0 {
        return 1;
    }
    match min_gamma_cap_sq {
        Some(g) => {
            let k = (4.0 * dispersion / g).ceil();
            (k as u32).clamp(1, MAX_AUTO_SUBDIVISIONS)
        }
        None => 1,
    }
}

/// Flatten a validated spec into the element grid. Channels are ordered by
/// bin order; a bin with dispersion Δω > 0 becomes K sub-elements at the
/// midpoints of equal subintervals of (ωᵢ−Δω/2, ωᵢ+Δω/2), each carrying
/// weight nᵢ/K; endcaps become unmonitored (Γ² = 0), channel-free elements.
/// Deterministic for identical input.
pub fn compile_detector(spec: &DetectorSpec) -> Result<CompiledModel> {
    let violations = validate_spec(spec);
    if !violations.is_empty() {
        return Err(Error::InvalidSpec { violations });
    }

    let min_gcap = spec
        .bins
        .iter()
        .filter(|b| b.gamma_cap_sq > 0.0)
        .map(|b| b.gamma_cap_sq)
        .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.min(g))));

    let mut elements = Vec::new();
    for (i, bin) in spec.bins.iter().enumerate() {
        let k = if bin.dispersion == 0.0 {
            1
        } else {
            bin.subdivisions
                .unwrap_or_else(|| auto_subdivisions(bin.dispersion, min_gcap))
        };
        if k == 1 || bin.dispersion == 0.0 {
            elements.push(Element {
                energy: bin.center,
                weight: bin.weight,
                gamma_cap_sq: bin.gamma_cap_sq,
                channel: Some(i),
            });
        } else {
            let lo = bin.center - bin.dispersion / 2.0;
            let step = bin.dispersion / k as f64;
            let w = bin.weight / k as f64;
            for m in 0..k {
                elements.push(Element {
                    energy: lo + (m as f64 + 0.5) * step,
                    weight: w,
                    gamma_cap_sq: bin.gamma_cap_sq,
                    channel: Some(i),
                });
            }
        }
    }
    for cap in &spec.endcaps {
        elements.push(Element {
            energy: cap.energy,
            weight: cap.weight,
            gamma_cap_sq: 0.0,
            channel: None,
        });
    }

    Ok(CompiledModel {
        elements,
        gamma_sq: spec.gamma_sq,
        chi: spec.chi,
        num_channels: spec.bins.len(),
        bin_centers: spec.bins.iter().map(|b| b.center).collect(),
    })
}
