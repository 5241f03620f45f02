//! Deterministic simulator for semi-decentralized federated learning with
//! hierarchical gradient tracking.
//!
//! Clients live in device-to-device subnets. Within a global round every
//! client takes `K` gossip-mixed local steps; a sampled subset then reports
//! to a server that maintains the global model together with per-subnet
//! correction trackers. Two tracker families (`z` in-subnet, `y` cross-subnet)
//! cancel client drift so the method converges linearly on strongly convex
//! problems even under heterogeneous data and partial participation.
//!
//! The crate is organised around the pieces an experiment needs:
//!
//! * [`topology`] — random geometric subnets and Metropolis–Hastings mixing.
//! * [`problems`] — synthetic least-squares and cluster-classification tasks.
//! * [`algorithms`] — the tracked method plus SD-FedAvg and SCAFFOLD baselines.
//! * [`diagnostics`] — drift/tracker-quality metrics and the CSV metric format.
//! * [`cooptimizer`] — discrete learning-efficiency co-optimization of
//!   sampling rates and D2D round counts against communication cost.
//! * [`harness`] — experiment specs, sweeps, SVG plots and check suites.
//!
//! Everything is deterministic: all randomness flows through named,
//! seedable streams (see [`rng`]), and repeated runs produce bit-identical
//! output files.

pub mod algorithms;
pub mod cooptimizer;
pub mod diagnostics;
mod error;
pub mod harness;
pub mod problems;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};
