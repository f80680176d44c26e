//! Kinetic flocking solver with nonlocal velocity alignment, a particle
//! cross-check, and a verification lab for the small-radius alignment limit.
//!
//! The model transports a phase-space density `f(t, x, v)` under three forces:
//! a confining potential, a long-range alignment force weighted by an
//! influence kernel, and a normalized local alignment term that relaxes
//! velocities toward a mollified bulk velocity. As the mollifier radius `r`
//! shrinks, the normalized term approaches plain relaxation toward the local
//! bulk velocity; the [`sweep`] and [`checks`] modules measure that limit and
//! the quantitative inequalities (energy, L^p growth, kernel-ratio bound)
//! that make it work.

pub mod checks;
pub mod config;
pub mod error;
pub mod grid;
pub mod init;
pub mod kernels;
pub mod output;
pub mod particles;
pub mod phase;
pub mod solver;
pub mod sweep;
pub mod testfn;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
