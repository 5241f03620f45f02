//! Per-round metrics and the measurement helpers behind them.
//!
//! Every trainer emits one [`MetricsRecord`] per global round.  The record
//! carries the optimization state seen by the server (loss, gradient norm,
//! distance to the optimum when one is known) together with four structural
//! quantities that describe how far the fleet has drifted from the server
//! model and how well the correction trackers approximate the gradient
//! mismatch they are supposed to cancel:
//!
//! * `Delta` — squared client deviation from the server model accumulated
//!   over the device-to-device steps of the round,
//! * `Gamma` — squared client deviation at the end of the round, measured
//!   against the *new* server model before it is broadcast,
//! * `Y` — mean squared error of the inter-subnet trackers against the
//!   subnet-to-global gradient gap,
//! * `Z` — mean squared error of the in-subnet trackers against the
//!   client-to-subnet gradient gap.
//!
//! Algorithms that do not maintain a tracker leave the corresponding columns
//! empty rather than reporting zero, so a missing value in the CSV always
//! means "not defined for this algorithm" and never "measured as zero".
//!
//! The module also owns the communication cost model.  Costs are energy
//! units per payload: one device-to-device exchange per subnet and round,
//! plus one uplink per sampled client, scaled by the sampling fraction of
//! its subnet.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::problems::Problem;
use crate::{Error, Result};

/// One row of the per-round metrics CSV.
///
/// Field order is the column order of the file.  `loss`, `grad_norm_sq` and
/// `dist_to_opt_sq` are evaluated at the server model that ends the round;
/// `comm_cost_cum` is the running total of [`CostModel::round_cost`] up to
/// and including the round.  `wall_clock` is zero unless the caller opted
/// into measured timings, because wall time is the one column that would
/// otherwise differ between reruns of an identical experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    /// Global round index, starting at 0.
    pub t: u64,
    /// Global objective at the server model.
    pub loss: f64,
    /// Squared norm of the global gradient at the server model.
    pub grad_norm_sq: f64,
    /// Squared distance to the known optimum, when the task has one.
    pub dist_to_opt_sq: Option<f64>,
    #[serde(rename = "Delta")]
    pub in_round_deviation: Option<f64>,
    #[serde(rename = "Gamma")]
    pub round_end_deviation: Option<f64>,
    #[serde(rename = "Y")]
    pub inter_tracker_gap: Option<f64>,
    #[serde(rename = "Z")]
    pub in_subnet_tracker_gap: Option<f64>,
    /// Cumulative communication cost after this round.
    pub comm_cost_cum: f64,
    /// Elapsed seconds, or 0.0 when timing is disabled for determinism.
    pub wall_clock: f64,
}

/// Exact header line of the metrics CSV, in column order.
pub const CSV_HEADER: &str =
    "t,loss,grad_norm_sq,dist_to_opt_sq,Delta,Gamma,Y,Z,comm_cost_cum,wall_clock";

/// Mean squared distance of a set of points from a reference point.
///
/// This is the building block for both deviation columns: `Delta` sums it
/// over the device-to-device steps of a round (reference: current server
/// model), `Gamma` evaluates it once at the end (reference: new server
/// model).
pub fn mean_sq_deviation(points: &[DVector<f64>], reference: &DVector<f64>) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let total: f64 = points
        .iter()
        .map(|p| {
            let mut d = p.clone();
            d -= reference;
            d.norm_squared()
        })
        .sum();
    total / points.len() as f64
}

/// Tracker quality gaps `(Y, Z)`.
///
/// Gradients are evaluated per client at that client's current iterate.
/// With `g_i` the client gradient, `g_s` the mean over the client's subnet
/// and `g` the global mean, the in-subnet tracker should converge to
/// `g_s - g_i` and the inter-subnet tracker to `g - g_s`; the returned gaps
/// are the mean squared errors against those targets.  Both are zero at the
/// tracking fixed point regardless of where the iterates sit.
pub fn tracker_gaps<P: Problem>(
    problem: &P,
    points: &[DVector<f64>],
    inter_trackers: &[DVector<f64>],
    in_subnet_trackers: &[DVector<f64>],
    subnets: &[Vec<usize>],
) -> (f64, f64) {
    let n = points.len();
    assert_eq!(inter_trackers.len(), n);
    assert_eq!(in_subnet_trackers.len(), n);
    let dim = points[0].len();

    let grads: Vec<DVector<f64>> = (0..n).map(|i| problem.gradient(i, &points[i])).collect();
    let mut global_mean = DVector::zeros(dim);
    for g in &grads {
        global_mean += g;
    }
    global_mean /= n as f64;

    let mut subnet_mean = vec![DVector::zeros(dim); subnets.len()];
    let mut client_subnet = vec![0usize; n];
    for (s, members) in subnets.iter().enumerate() {
        for &i in members {
            subnet_mean[s] += &grads[i];
            client_subnet[i] = s;
        }
        subnet_mean[s] /= members.len() as f64;
    }

    let mut y_gap = 0.0;
    let mut z_gap = 0.0;
    for i in 0..n {
        let s = client_subnet[i];
        let y_err = &inter_trackers[i] + &subnet_mean[s] - &global_mean;
        let z_err = &in_subnet_trackers[i] + &grads[i] - &subnet_mean[s];
        y_gap += y_err.norm_squared();
        z_gap += z_err.norm_squared();
    }
    (y_gap / n as f64, z_gap / n as f64)
}

/// Sum-of-squares split of client dispersion into subnet-internal and
/// subnet-level parts.
///
/// `total` is the squared scatter of the points around their global mean;
/// `within` measures scatter around the per-subnet means and `between` the
/// scatter of those subnet means around the global mean (one term per
/// client, so larger subnets weigh more).  Averaging within a subnet and
/// centering globally are orthogonal projections, so `total == within +
/// between` up to rounding — a useful consistency check on any consensus
/// measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceSplit {
    pub total: f64,
    pub within: f64,
    pub between: f64,
}

impl VarianceSplit {
    /// Relative gap between `total` and `within + between`.
    pub fn imbalance(&self) -> f64 {
        let lhs = self.total;
        let rhs = self.within + self.between;
        (lhs - rhs).abs() / lhs.abs().max(1e-30)
    }
}

pub fn variance_decomposition(points: &[DVector<f64>], subnets: &[Vec<usize>]) -> VarianceSplit {
    assert!(!points.is_empty());
    let n = points.len();
    let dim = points[0].len();

    let mut global_mean = DVector::zeros(dim);
    for p in points {
        global_mean += p;
    }
    global_mean /= n as f64;

    let mut total = 0.0;
    let mut within = 0.0;
    let mut between = 0.0;
    for members in subnets {
        let mut local_mean = DVector::zeros(dim);
        for &i in members {
            local_mean += &points[i];
        }
        local_mean /= members.len() as f64;
        for &i in members {
            total += (&points[i] - &global_mean).norm_squared();
            within += (&points[i] - &local_mean).norm_squared();
        }
        between += members.len() as f64 * (&local_mean - &global_mean).norm_squared();
    }
    VarianceSplit {
        total,
        within,
        between,
    }
}

/// Energy prices for one experiment: a device-to-device exchange inside
/// subnet `s` costs `d2d_energy[s]` per round of gossip, and a client
/// uplink from subnet `s` costs `uplink_energy[s]`.
///
/// `tracker_exchange` doubles the gossip payload to account for algorithms
/// that ship a tracker alongside the model in every device-to-device round.
/// It is off by default so that cost comparisons across algorithms isolate
/// the sampling schedule unless the caller explicitly opts in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub d2d_energy: Vec<f64>,
    pub uplink_energy: Vec<f64>,
    #[serde(default)]
    pub tracker_exchange: bool,
}

impl CostModel {
    pub fn uniform(num_subnets: usize, d2d: f64, uplink: f64) -> Self {
        Self {
            d2d_energy: vec![d2d; num_subnets],
            uplink_energy: vec![uplink; num_subnets],
            tracker_exchange: false,
        }
    }

    /// A model in which communication is free; handy when only the
    /// optimization trajectory matters.
    pub fn free(num_subnets: usize) -> Self {
        Self::uniform(num_subnets, 0.0, 0.0)
    }

    pub fn validate(&self, num_subnets: usize) -> Result<()> {
        if self.d2d_energy.len() != num_subnets || self.uplink_energy.len() != num_subnets {
            return Err(Error::config(format!(
                "cost model covers {} / {} subnets but topology has {num_subnets}",
                self.d2d_energy.len(),
                self.uplink_energy.len(),
            )));
        }
        if self
            .d2d_energy
            .iter()
            .chain(&self.uplink_energy)
            .any(|&e| !(e >= 0.0) || !e.is_finite())
        {
            return Err(Error::config("cost model energies must be finite and >= 0"));
        }
        Ok(())
    }

    /// Cost of one global round: `d2d_rounds` gossip exchanges per subnet
    /// plus the sampled uplinks, each uplink scaled by its subnet's
    /// sampling fraction `h_s / m_s`.
    pub fn round_cost(
        &self,
        d2d_rounds: usize,
        sampled_per_subnet: &[usize],
        subnet_sizes: &[usize],
    ) -> f64 {
        assert_eq!(sampled_per_subnet.len(), self.d2d_energy.len());
        assert_eq!(subnet_sizes.len(), self.d2d_energy.len());
        let gossip_multiplier = if self.tracker_exchange { 2.0 } else { 1.0 };
        let gossip: f64 = self.d2d_energy.iter().sum::<f64>()
            * d2d_rounds as f64
            * gossip_multiplier;
        let uplink: f64 = self
            .uplink_energy
            .iter()
            .zip(sampled_per_subnet)
            .zip(subnet_sizes)
            .map(|((&e, &h), &m)| (h as f64 / m as f64) * e)
            .sum();
        gossip + uplink
    }
}

/// Write metrics to `path` atomically (write-then-rename), creating parent
/// directories as needed.  Floating point cells use the shortest
/// representation that parses back to the identical bits, so a write/read
/// cycle is lossless.
pub fn write_records_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for rec in records {
        writer.serialize(rec)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::config(format!("csv buffer flush failed: {e}")))?;
    crate::harness::write_atomic(path, &bytes)
}

pub fn read_records_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => {
            Error::io(path.display().to_string(), std::io::Error::other(e.to_string()))
        }
        _ => Error::Csv(e),
    })?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
