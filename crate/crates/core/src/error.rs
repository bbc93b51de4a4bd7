//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A detector specification violated one or more invariants. Each entry
    /// names the offending field and rule, e.g. `"bin 0: negative weight"`.
    #[error("invalid detector spec: {}", violations.join("; "))]
    InvalidSpec { violations: Vec<String> },

    /// The resolvent system was numerically singular at this frequency
    /// (possible only on measure-zero parameter sets, e.g. a zero-weight
    /// undamped element exactly on resonance, whose amplitude diverges).
    #[error("singular resolvent system at omega0 = {omega0} eV")]
    SingularSystem { omega0: f64 },

    /// Frequency moments are undefined because the total detection
    /// probability vanishes at this frequency.
    #[error("frequency moments undefined: zero total detection probability at omega0 = {omega0} eV")]
    UndefinedMoments { omega0: f64 },

    /// The integrated density matrix violated a structural tolerance
    /// (trace, Hermiticity, or positivity) at time `t`.
    #[error("density-matrix check failed at t = {t}: {what}")]
    StateViolation { t: f64, what: String },

    /// Adaptive step control failed to advance (step underflow or step
    /// budget exhausted).
    #[error("adaptive step control failed at t = {t}: {what}")]
    StepControl { t: f64, what: String },

    /// The jitter estimate did not converge over the pulse-width schedule.
    /// Carries the partial `(sigma0, sigma_sys)` sequence in model units.
    #[error("jitter extrapolation did not converge over the schedule ({} points)", partial.len())]
    JitterNotConverged { partial: Vec<(f64, f64)> },

    /// Rate calibration found the efficiency floor unreachable even at the
    /// top of the bracket.
    #[error("efficiency floor {floor} infeasible: best achievable efficiency {max_efficiency}")]
    InfeasibleFloor { floor: f64, max_efficiency: f64 },

    /// A scalar argument was outside its domain.
    #[error("invalid argument: {what}")]
    InvalidArgument { what: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
