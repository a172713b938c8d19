//! Certified peak bounds for uncertain dynamical systems.
//!
//! Given a polynomial dynamical system (continuous or discrete time, possibly
//! switched between several subsystems, with set-bounded parameters and
//! disturbances), this crate computes a certified upper bound on the maximum
//! value of a polynomial observable along all admissible trajectories. The
//! bound comes from a semidefinite relaxation of an occupation-measure
//! formulation of the peak estimation problem, solved either by the embedded
//! interior-point solver or by an external conic solver.

pub mod cli;
pub mod conic;
pub mod model;
pub mod moments;
pub mod poly;
pub mod problem;
pub mod recovery;
pub mod relaxation;
pub mod report;
pub mod simulate;
