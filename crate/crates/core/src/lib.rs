//! Chance-constrained trajectory planning with moment-based risk bounds.
//!
//! The crate bounds `P(p(w) ≤ 0)` for polynomial constraints `p` of random
//! vectors `w` (including mixtures with non-Gaussian components) through the
//! mean and variance of `p(w)` and one-sided concentration inequalities, and
//! plans kinematic-bicycle trajectories with those bounds as constraints in a
//! model predictive contouring control problem.

pub mod bodyframe;
pub mod distmoments;
pub mod harness;
pub mod io;
pub mod mpcc;
pub mod planner;
pub mod polyalg;
pub mod riskbounds;
