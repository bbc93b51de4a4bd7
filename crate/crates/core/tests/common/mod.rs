//! Shared fixtures for the integration suites.

#![allow(dead_code)]

use chromadet::{BinSpec, DetectorSpec, EndcapSpec};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Three-bin design exercising every spec feature at once: uneven weights
/// and rates, one bin dispersed into a pinned three-element comb, and an
/// unmonitored endcap group on each side of the band. The frozen response
/// values in the steady, dynamics, and metrics suites were computed for
/// exactly this design — do not edit it without recomputing them.
pub fn mixed_feature_spec() -> DetectorSpec {
    DetectorSpec {
        band_lo: 1.9,
        band_hi: 2.9,
        bins: vec![
            BinSpec {
                center: 2.0,
                weight: 5.0,
                gamma_cap_sq: 0.08,
                dispersion: 0.0,
                subdivisions: None,
            },
            BinSpec {
                center: 2.4,
                weight: 7.0,
                gamma_cap_sq: 0.10,
                dispersion: 0.06,
                subdivisions: Some(3),
            },
            BinSpec {
                center: 2.8,
                weight: 11.0,
                gamma_cap_sq: 0.12,
                dispersion: 0.0,
                subdivisions: None,
            },
        ],
        gamma_sq: 0.02,
        chi: 0.0,
        endcaps: vec![
            EndcapSpec {
                energy: 1.7,
                weight: 2.0,
            },
            EndcapSpec {
                energy: 3.1,
                weight: 3.0,
            },
        ],
    }
}

/// Single bin holding one matched element: weight Γ²/γ² makes the
/// on-resonance detection probability exactly 1.
pub fn matched_single_bin(center: f64, gamma_sq: f64, gamma_cap_sq: f64) -> DetectorSpec {
    DetectorSpec {
        band_lo: center - 0.5,
        band_hi: center + 0.5,
        bins: vec![BinSpec {
            center,
            weight: gamma_cap_sq / gamma_sq,
            gamma_cap_sq,
            dispersion: 0.0,
            subdivisions: None,
        }],
        gamma_sq,
        chi: 0.0,
        endcaps: Vec::new(),
    }
}

/// Random well-formed design for agreement and property checks. Bin count,
/// weights (zeros included), rates, dispersion, endcaps, and χ all vary;
/// `max_subdivisions` caps the per-bin comb size so the dense-oracle cost
/// stays bounded.
pub fn random_spec(rng: &mut ChaCha8Rng, max_bins: usize, max_subdivisions: u32) -> DetectorSpec {
    let band_lo: f64 = rng.random_range(0.5..3.0);
    let width: f64 = rng.random_range(0.4..2.0);
    let band_hi = band_lo + width;
    let n = rng.random_range(1..=max_bins);
    let slot = width / n as f64;
    let bins = (0..n)
        .map(|i| {
            let wobble: f64 = rng.random_range(-0.3..0.3);
            let dispersed = rng.random_bool(0.3);
            BinSpec {
                center: band_lo + slot * (i as f64 + 0.5 + wobble),
                weight: if rng.random_bool(0.1) {
                    0.0
                } else {
                    rng.random_range(0.01..40.0)
                },
                gamma_cap_sq: rng.random_range(1e-3..0.4),
                dispersion: if dispersed {
                    rng.random_range(0.0..slot * 0.8)
                } else {
                    0.0
                },
                subdivisions: if dispersed {
                    Some(rng.random_range(1..=max_subdivisions))
                } else {
                    None
                },
            }
        })
        .collect();
    let mut endcaps = Vec::new();
    if rng.random_bool(0.4) {
        endcaps.push(EndcapSpec {
            energy: band_lo - rng.random_range(0.05..0.5),
            weight: rng.random_range(0.0..10.0),
        });
    }
    if rng.random_bool(0.4) {
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
        chi: if rng.random_bool(0.5) {
            rng.random_range(0.0..0.5)
        } else {
            0.0
        },
        endcaps,
    }
}

/// Relative agreement with an absolute floor, for values that may be tiny.
pub fn close(a: f64, b: f64, rel: f64, abs_floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(abs_floor)
}
