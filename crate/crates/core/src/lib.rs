//! Exact and approximate control refinement for discrete-time linear
//! descriptor systems.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: SVD-based rank tools and Lyapunov / Riccati solvers.
//! - [`descriptor`]: DAE systems, pencil analysis and time responses.
//! - [`conversion`]: DAE ⇄ driving-variable conversion.
//! - [`certificates`]: stability certificates, constrained Sylvester solvers,
//!   simulation functions and interfaces.
//! - [`refinement`]: controller classification, closed loops and refinement.
//! - [`reduction`]: stabilization, balanced truncation and the abstraction pipeline.
//! - [`sim`]: simulation, output distances and CSV traces.

pub mod certificates;
pub mod conversion;
pub mod descriptor;
pub mod error;
pub mod linalg;
pub mod reduction;
pub mod refinement;
pub mod sim;

pub use error::{Error, Result};
pub use linalg::{Mat, RankTolerance, Vector};
