//! Simulation and design optimization for cooperative frequency-resolving
//! single-photon detector arrays.
//!
//! A detector is a hierarchically binned collection of absorber elements
//! coupled to a common waveguide mode. Each frequency bin groups
//! near-degenerate elements that decay into a monitored dark state, which
//! registers a detection in that bin's output channel. The crate provides:
//!
//! - [`model`] — detector specification, validation, and compilation into a
//!   flat single-excitation element grid,
//! - [`steady_state`] — long-time channel probabilities for a delta-frequency
//!   photon via the resolvent of the effective non-Hermitian Hamiltonian,
//!   with a dense oracle and an O(M) diagonal-plus-rank-one fast path,
//! - [`dynamics`] — time-domain integration of the single-photon master
//!   equation (full density-matrix path and an equivalent amplitude path),
//! - [`metrics`] — efficiency curves, frequency moments, and system jitter,
//! - [`optimize`] — minimax weight optimization, incoherent-rate calibration
//!   against an efficiency floor, and the resolution–jitter trade-off sweep,
//! - [`scenarios`] — endcap band shaping comparison, the sequential
//!   (non-cooperative) baseline, and physical-feasibility arithmetic.
//!
//! Energies are in eV throughout; time is dimensionless in units of ħ/eV and
//! converted to femtoseconds on export via [`HBAR_EV_FS`].

pub mod dynamics;
pub mod error;
pub mod lbfgsb;
pub mod metrics;
pub mod model;
mod ode;
pub mod optimize;
pub mod scenarios;
pub mod steady_state;

pub use dynamics::{
    evolve_fock_hierarchy, evolve_single_excitation, Envelope, PulseSpec, TimeTrace,
};
pub use error::Error;
pub use metrics::{
    band_averaged_omega_sigma, default_sigma0_schedule, efficiency_curve, evaluate_metrics,
    frequency_moments, jitter_observations, sigma0_schedule, system_jitter,
    system_jitter_per_channel, to_femtoseconds, MetricsReport,
};
pub use model::{compile_detector, validate_spec, BinSpec, CompiledModel, DetectorSpec, EndcapSpec};
pub use optimize::{
    calibrate_gamma, optimize_weights, resolution_jitter_tradeoff, CalibrationOutcome,
    OptimizationResult, OptimizeOptions,
};
pub use scenarios::{
    compare_endcaps, realization_estimate, sequential_chain, RealizationParams, SequentialStack,
};
pub use steady_state::{channel_probabilities, ChannelResponse, SolveMethod};

/// Reduced Planck constant in eV·fs; converts dimensionless model time
/// (units of ħ/eV) to femtoseconds.
pub const HBAR_EV_FS: f64 = 0.6582119569;

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
