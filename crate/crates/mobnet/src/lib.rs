//! Exact simulation and numerical verification laboratory for a
//! stochastic network of `n` nodes with Poisson arrivals, Markovian
//! customer mobility and Processor-Sharing service.
//!
//! The crate is organized around five subsystems:
//!
//! - [`spectral`]: the mobility generator `Q`, its eigenstructure, the
//!   two-sided semigroup and mixing constants;
//! - [`state`]: occupancy states, empirical distributions, relative
//!   entropy and stopping-time detection on trajectories;
//! - [`simulator`]: exact jump-chain simulation of the network, the
//!   enlarged triple process, the labelled-particle representation and
//!   the pathwise coupling constructions;
//! - [`martingale`]: flows, space-time harmonic functions, the simplex
//!   change of variables and the local martingale `J_alpha` with its
//!   exit-time deviation bound;
//! - [`scaling`]: ensemble experiment harnesses for homogenization
//!   schedules, fluid limits, drift, trapping and ergodicity probes.

pub mod error;
mod lapack;
pub mod martingale;
pub mod scaling;
pub mod simulator;
pub mod spectral;
pub mod state;
pub mod stats;
pub mod suite;

pub use error::{Error, Result};
pub use spectral::{RateMatrix, SpectralData};
pub use state::{NetworkParams, Regime, SimplexPoint, State, Trajectory};
