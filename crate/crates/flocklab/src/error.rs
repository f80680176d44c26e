//! Crate-wide error type. Solver aborts carry enough context to tell a
//! configuration problem (exit code 2) from a runtime abort (exit code 3).

use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum Error {
    /// A kernel support spans fewer than 4 grid cells, so midpoint
    /// quadrature cannot resolve it.
    #[error("kernel support {support:.6e} is narrower than 4 cells (dx = {dx:.6e}); enlarge r or refine the grid")]
    UnresolvedKernel { support: f64, dx: f64 },

    /// A grid function was paired with a grid of a different size.
    #[error("grid function has {got} cells but the grid has {want}")]
    DomainMismatch { got: usize, want: usize },

    /// The mollified density vanished where the ratio integrand is positive;
    /// this cannot happen with an admissible mollifier and signals a
    /// quadrature-resolution bug.
    #[error("mollified density vanishes at x = {x:.6e} where the ratio integrand is positive")]
    VacuumRatio { x: f64 },

    /// A fixed time step exceeded the stable bound.
    #[error("CFL violation at t = {t:.6e}: dt = {dt:.6e} exceeds the stable bound {bound:.6e}")]
    CflViolation { t: f64, dt: f64, bound: f64 },

    /// More mass left the domain than the relative budget allows; the
    /// domain is too small for the data.
    #[error("relative mass loss {loss:.3e} at t = {t:.6e} exceeds the budget {budget:.1e}; enlarge the domain")]
    MassLossExceeded { t: f64, loss: f64, budget: f64 },

    /// The transport update produced a negative cell value.
    #[error("negative density {value:.3e} in cell ({i}, {j}) at t = {t:.6e}")]
    NegativeDensity { t: f64, i: usize, j: usize, value: f64 },

    /// A particle's deposition stencil does not fit inside the grid.
    #[error("particle {index} at (x, v) = ({x:.6e}, {v:.6e}) deposits outside the grid")]
    ParticleOutsideDomain { index: usize, x: f64, v: f64 },

    /// A particle position or velocity became NaN or infinite.
    #[error("non-finite state in particle {index} at t = {t:.6e}")]
    NonFiniteState { index: usize, t: f64 },

    /// Too few snapshots for the time quadrature of the weak residual.
    #[error("{got} snapshots are too few for the time quadrature (need at least {need})")]
    InsufficientSnapshots { got: usize, need: usize },

    /// A constructor argument was rejected.
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    /// Process exit code class: 2 for configuration problems (including a
    /// kernel the configured grid cannot resolve, known before stepping),
    /// 3 for runtime aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter { .. } | Error::UnresolvedKernel { .. } => 2,
            _ => 3,
        }
    }
}
