//! Federated trainers sharing one configuration, sampling and metering path.
//!
//! Three algorithms live here.  All of them alternate local computation with
//! a server aggregation step over clients sampled per subnet, and all of
//! them are driven by the same [`RunConfig`], so trajectories are comparable
//! point for point: identical seeds produce identical topology, data, client
//! sampling and minibatch draws across algorithms.
//!
//! * [`Algorithm::SdGt`] — gossip rounds inside each subnet with a
//!   two-level correction: an in-subnet tracker per client cancels the
//!   gradient spread between subnet neighbours, and an inter-subnet tracker
//!   (broadcast by the server) cancels the spread between subnets.
//! * [`Algorithm::SdFedavg`] — the same gossip-and-aggregate loop with both
//!   trackers pinned to zero; the server mean simply replaces the model.
//! * [`Algorithm::Scaffold`] — no gossip: sampled clients take local steps
//!   corrected by control variates and the server averages their deltas.
//!
//! The trainers report per-round [`MetricsRecord`]s; see the `diagnostics`
//! module for what each column measures and when it is defined.

mod scaffold;
mod sd_fedavg;
mod sd_gt;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::diagnostics::{CostModel, MetricsRecord};
use crate::problems::{Batch, Problem};
use crate::rng::{stream, Domain, Seeds};
use crate::topology::SubnetTopology;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    SdGt,
    SdFedavg,
    Scaffold,
}

impl Algorithm {
    /// Short name used in output file names and plot legends.
    pub fn slug(&self) -> &'static str {
        match self {
            Algorithm::SdGt => "sdgt",
            Algorithm::SdFedavg => "sdfedavg",
            Algorithm::Scaffold => "scaffold",
        }
    }

    /// Whether the algorithm runs device-to-device exchanges (and therefore
    /// pays gossip cost) inside each subnet.
    pub fn uses_gossip(&self) -> bool {
        !matches!(self, Algorithm::Scaffold)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.slug())
    }
}

/// How the initial server model is drawn.  The default, all zeros, is right
/// for quadratic tasks; network tasks need `Normal` to break the symmetry
/// of the first layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelInit {
    Zeros,
    Normal { std: f64 },
}

impl Default for ModelInit {
    fn default() -> Self {
        ModelInit::Zeros
    }
}

/// Optional early exit, checked after each recorded round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopRule {
    None,
    LossBelow { value: f64 },
    GradNormSqBelow { value: f64 },
    DistToOptSqBelow { value: f64 },
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule::None
    }
}

impl StopRule {
    fn satisfied(&self, record: &MetricsRecord) -> bool {
        match *self {
            StopRule::None => false,
            StopRule::LossBelow { value } => record.loss < value,
            StopRule::GradNormSqBelow { value } => record.grad_norm_sq < value,
            StopRule::DistToOptSqBelow { value } => {
                record.dist_to_opt_sq.is_some_and(|d| d < value)
            }
        }
    }
}

fn default_divergence_limit() -> f64 {
    1e12
}

fn default_true() -> bool {
    true
}

/// Everything a single run needs beyond the problem and the topology.
///
/// `local_rounds` is the number of device-to-device exchanges per global
/// round for the gossip algorithms, and the number of local gradient steps
/// for the control-variate baseline — the same knob in both cases: how much
/// local work happens between two server contacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Number of global (server) rounds to run.
    pub rounds: usize,
    /// Local work per global round; must be at least 1.
    pub local_rounds: usize,
    /// Step size for the local updates.
    pub step_size: f64,
    /// Clients sampled per subnet for the server exchange, one entry per
    /// subnet, each between 1 and the subnet size.
    pub sample_counts: Vec<usize>,
    pub batch: Batch,
    pub seeds: Seeds,
    #[serde(default)]
    pub init: ModelInit,
    pub cost: CostModel,
    #[serde(default)]
    pub stop: StopRule,
    /// A run aborts (flagged, not an error) once any model norm passes this.
    #[serde(default = "default_divergence_limit")]
    pub divergence_limit: f64,
    /// Compute the tracker-gap columns Y and Z.  Costs one extra full
    /// gradient sweep per round, so tight loops may switch it off.
    #[serde(default = "default_true")]
    pub tracker_diagnostics: bool,
    /// Keep per-round state snapshots in memory (small runs only).
    #[serde(default)]
    pub record_trace: bool,
    /// Fill `wall_clock` with measured seconds instead of the deterministic
    /// default of 0.0.
    #[serde(default)]
    pub measure_time: bool,
}

impl RunConfig {
    /// A minimal configuration with free communication, full batches and
    /// default seeds — the starting point most tests and examples tweak.
    pub fn new(algorithm: Algorithm, topology: &SubnetTopology) -> Self {
        Self {
            algorithm,
            rounds: 1,
            local_rounds: 1,
            step_size: 0.1,
            sample_counts: topology.subnet_sizes(),
            batch: Batch::Full,
            seeds: Seeds::all(0),
            init: ModelInit::default(),
            cost: CostModel::free(topology.num_subnets()),
            stop: StopRule::default(),
            divergence_limit: default_divergence_limit(),
            tracker_diagnostics: true,
            record_trace: false,
            measure_time: false,
        }
    }

    pub fn validate<P: Problem + ?Sized>(
        &self,
        problem: &P,
        topology: &SubnetTopology,
    ) -> Result<()> {
        let n = topology.num_clients();
        if problem.num_clients() != n {
            return Err(Error::config(format!(
                "problem has {} clients but topology has {n}",
                problem.num_clients()
            )));
        }
        if self.local_rounds == 0 {
            return Err(Error::config("local_rounds must be at least 1"));
        }
        if !self.step_size.is_finite() || self.step_size < 0.0 {
            return Err(Error::config("step_size must be finite and >= 0"));
        }
        if self.step_size == 0.0 && self.algorithm != Algorithm::SdFedavg {
            // The tracker updates divide by the step size; only the
            // tracker-free baseline tolerates a frozen model.
            return Err(Error::config(format!(
                "step_size must be > 0 for {}",
                self.algorithm
            )));
        }
        if self.sample_counts.len() != topology.num_subnets() {
            return Err(Error::config(format!(
                "{} sample counts for {} subnets",
                self.sample_counts.len(),
                topology.num_subnets()
            )));
        }
        for (s, (&h, &m)) in self
            .sample_counts
            .iter()
            .zip(topology.subnet_sizes().iter())
            .enumerate()
        {
            if h == 0 || h > m {
                return Err(Error::config(format!(
                    "subnet {s}: sample count {h} outside 1..={m}"
                )));
            }
        }
        if let Batch::Size(b) = self.batch {
            for i in 0..n {
                let available = problem.sample_count(i);
                if b == 0 || b > available {
                    return Err(Error::config(format!(
                        "batch size {b} invalid for client {i} with {available} samples"
                    )));
                }
            }
        }
        if !(self.divergence_limit > 0.0) {
            return Err(Error::config("divergence_limit must be > 0"));
        }
        if matches!(self.stop, StopRule::DistToOptSqBelow { .. }) && problem.optimum().is_none() {
            return Err(Error::config(
                "stop rule references the optimum but the task does not expose one",
            ));
        }
        self.cost.validate(topology.num_subnets())?;
        Ok(())
    }

    /// Advisory notes about configurations that are valid but easy to
    /// misread when comparing algorithms.
    pub fn advisories(&self, topology: &SubnetTopology) -> Vec<String> {
        let mut notes = Vec::new();
        let sizes = topology.subnet_sizes();
        if sizes.windows(2).any(|w| w[0] != w[1]) {
            notes.push(
                "subnet sizes are unequal: the server averages subnets uniformly, so clients \
                 in small subnets carry more weight than clients in large ones"
                    .to_string(),
            );
        }
        if self.step_size == 0.0 {
            notes.push("step_size is 0: the run only mixes models, no learning".to_string());
        }
        notes
    }
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    /// All configured rounds ran.
    Completed,
    /// The stop rule fired after the given round.
    Stopped { round: u64 },
    /// A model norm passed the divergence limit during the given round;
    /// records up to and including that round are kept.
    Diverged { round: u64 },
}

impl RunOutcome {
    pub fn diverged(&self) -> bool {
        matches!(self, RunOutcome::Diverged { .. })
    }
}

/// End-of-round snapshot for small runs, used by the reduction and
/// equivalence checks.  All vectors are indexed by client; `clients_end`
/// and `server_end` are taken after the server update but *before* the
/// broadcast overwrites the sampled clients, while the tracker snapshots
/// are post-broadcast (the values the next round will actually use).
#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub round: u64,
    /// Sampled clients per subnet (global indices, ascending).
    pub sampled: Vec<Vec<usize>>,
    pub clients_end: Vec<DVector<f64>>,
    pub server_end: DVector<f64>,
    pub inter_trackers: Vec<DVector<f64>>,
    pub in_subnet_trackers: Vec<DVector<f64>>,
    pub subnet_trackers: Vec<DVector<f64>>,
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub outcome: RunOutcome,
    /// Final server model (the state after the last recorded round).
    pub server_model: DVector<f64>,
    pub advisories: Vec<String>,
    /// Largest per-subnet imbalance `‖Σ_i z_i‖ / (1 + Σ_i ‖z_i‖)` seen at
    /// any round boundary; exactly 0 for algorithms without the tracker.
    pub max_subnet_tracker_imbalance: f64,
    /// Same measure for the server-side subnet trackers `Σ_s ψ_s`.
    pub max_server_tracker_imbalance: f64,
    pub trace: Option<Vec<RoundTrace>>,
}

/// Run one experiment.  Dispatches on `config.algorithm`; all trainers share
/// the sampling, batching, metering and divergence plumbing in this module.
pub fn run<P: Problem>(
    problem: &P,
    topology: &SubnetTopology,
    config: &RunConfig,
) -> Result<RunOutput> {
    config.validate(problem, topology)?;
    match config.algorithm {
        Algorithm::SdGt => sd_gt::train(problem, topology, config),
        Algorithm::SdFedavg => sd_fedavg::train(problem, topology, config),
        Algorithm::Scaffold => scaffold::train(problem, topology, config),
    }
}

/// Draw the initial server model from the model-init stream of the data
/// seed, so changing sampling or batching seeds never moves the start
/// point.
pub(crate) fn init_model(dim: usize, init: ModelInit, seeds: &Seeds) -> DVector<f64> {
    match init {
        ModelInit::Zeros => DVector::zeros(dim),
        ModelInit::Normal { std } => {
            let mut rng = stream(seeds.data, Domain::ModelInit, 0);
            DVector::from_fn(dim, |_, _| std * rng.sample::<f64, _>(StandardNormal))
        }
    }
}

/// Sample `sample_counts[s]` distinct clients from each subnet for round
/// `t`, returned as ascending global indices per subnet.  One stream per
/// round keeps rounds independent of each other and of everything else.
pub(crate) fn sample_round(
    topology: &SubnetTopology,
    sample_counts: &[usize],
    seeds: &Seeds,
    t: u64,
) -> Vec<Vec<usize>> {
    let mut rng = stream(seeds.sampling, Domain::Sampling, t);
    topology
        .subnets()
        .iter()
        .zip(sample_counts)
        .map(|(members, &h)| {
            let mut picks = rand::seq::index::sample(&mut rng, members.len(), h).into_vec();
            picks.sort_unstable();
            picks.into_iter().map(|local| members[local]).collect()
        })
        .collect()
}

/// Minibatch stream for client `i` in local step `k` of round `t`.  The
/// address is strictly per-(round, step, client), so a client's draws do
/// not depend on which other clients compute in that round.
pub(crate) fn batch_stream(
    seeds: &Seeds,
    n: usize,
    local_rounds: usize,
    t: u64,
    k: usize,
    client: usize,
) -> ChaCha8Rng {
    let index = (t * local_rounds as u64 + k as u64) * n as u64 + client as u64;
    stream(seeds.batching, Domain::Batching, index)
}

/// `‖Σ v_i‖ / (1 + Σ ‖v_i‖)`: zero when the family sums to zero, and
/// insensitive to overall scale once the family is large.
pub(crate) fn sum_imbalance<'a, I>(vectors: I) -> f64
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    let mut iter = vectors.into_iter();
    let first = match iter.next() {
        Some(v) => v,
        None => return 0.0,
    };
    let mut total = first.clone();
    let mut scale = first.norm();
    for v in iter {
        total += v;
        scale += v.norm();
    }
    total.norm() / (1.0 + scale)
}

pub(crate) fn over_guard<'a, I>(limit: f64, models: I) -> bool
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    models
        .into_iter()
        .any(|x| !x.iter().all(|v| v.is_finite()) || x.norm() > limit)
}

/// Cost meter + record assembly shared by the trainers.  `finish_round`
/// produces the skeleton record (optimization metrics, cost, time); the
/// caller fills in whatever diagnostic columns its algorithm defines.
pub(crate) struct Meter<'a, P: Problem + ?Sized> {
    problem: &'a P,
    cost: &'a CostModel,
    subnet_sizes: Vec<usize>,
    sample_counts: &'a [usize],
    gossip_rounds: usize,
    cumulative_cost: f64,
    started: Instant,
    measure_time: bool,
}

impl<'a, P: Problem + ?Sized> Meter<'a, P> {
    pub(crate) fn new(problem: &'a P, topology: &SubnetTopology, config: &'a RunConfig) -> Self {
        Self {
            problem,
            cost: &config.cost,
            subnet_sizes: topology.subnet_sizes(),
            sample_counts: &config.sample_counts,
            gossip_rounds: if config.algorithm.uses_gossip() {
                config.local_rounds
            } else {
                0
            },
            cumulative_cost: 0.0,
            started: Instant::now(),
            measure_time: config.measure_time,
        }
    }

    pub(crate) fn finish_round(&mut self, t: u64, server_model: &DVector<f64>) -> MetricsRecord {
        self.cumulative_cost +=
            self.cost
                .round_cost(self.gossip_rounds, self.sample_counts, &self.subnet_sizes);
        let grad = self.problem.global_gradient(server_model);
        MetricsRecord {
            t,
            loss: self.problem.global_loss(server_model),
            grad_norm_sq: grad.norm_squared(),
            dist_to_opt_sq: self
                .problem
                .optimum()
                .map(|opt| (server_model - opt).norm_squared()),
            in_round_deviation: None,
            round_end_deviation: None,
            inter_tracker_gap: None,
            in_subnet_tracker_gap: None,
            comm_cost_cum: self.cumulative_cost,
            wall_clock: if self.measure_time {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::least_squares::{LeastSquaresProblem, LeastSquaresSpec};
    use crate::topology::equal_sizes;

    /// Noiseless planted instance: every client shares the same exact
    /// minimizer, so even tracker-free methods can interpolate.  Good for
    /// exact-arithmetic checks, useless for separating algorithms.
    pub(crate) fn small_problem(n: usize) -> LeastSquaresProblem {
        LeastSquaresProblem::generate(LeastSquaresSpec {
            n,
            d: 4,
            samples_per_client: 6,
            omega: 0.0,
            noise_std: 0.0,
            seed: 9,
        })
        .unwrap()
    }

    /// Noisy targets make the per-client minimizers disagree, which is what
    /// creates the drift that trackers exist to cancel.
    pub(crate) fn noisy_problem(n: usize) -> LeastSquaresProblem {
        LeastSquaresProblem::generate(LeastSquaresSpec {
            n,
            d: 4,
            samples_per_client: 6,
            omega: 0.5,
            noise_std: 0.2,
            seed: 9,
        })
        .unwrap()
    }

    pub(crate) fn small_topology(n: usize, s: usize) -> SubnetTopology {
        SubnetTopology::generate(&equal_sizes(n, s).unwrap(), (2.9, 2.9), 5).unwrap()
    }

    #[test]
    fn validation_rejects_inconsistent_configurations() {
        let problem = small_problem(6);
        let topology = small_topology(6, 2);
        let good = RunConfig::new(Algorithm::SdGt, &topology);
        assert!(good.validate(&problem, &topology).is_ok());

        let mut wrong_counts = good.clone();
        wrong_counts.sample_counts = vec![3];
        assert!(wrong_counts.validate(&problem, &topology).is_err());

        let mut oversampled = good.clone();
        oversampled.sample_counts = vec![4, 3];
        assert!(oversampled.validate(&problem, &topology).is_err());

        let mut zero_rounds = good.clone();
        zero_rounds.local_rounds = 0;
        assert!(zero_rounds.validate(&problem, &topology).is_err());

        let mut frozen = good.clone();
        frozen.step_size = 0.0;
        assert!(frozen.validate(&problem, &topology).is_err());
        frozen.algorithm = Algorithm::SdFedavg;
        assert!(frozen.validate(&problem, &topology).is_ok());

        let mut huge_batch = good.clone();
        huge_batch.batch = Batch::Size(7);
        assert!(huge_batch.validate(&problem, &topology).is_err());

        let mut mismatched = good;
        let bigger = small_problem(8);
        assert!(mismatched.validate(&bigger, &topology).is_err());
        mismatched.rounds = 0;
        assert!(mismatched.validate(&problem, &topology).is_ok());
    }

    #[test]
    fn sampling_is_per_subnet_without_replacement() {
        let topology = small_topology(9, 3);
        let counts = vec![2, 3, 1];
        let seeds = Seeds::all(3);
        for t in 0..50 {
            let sampled = sample_round(&topology, &counts, &seeds, t);
            assert_eq!(sampled.len(), 3);
            for (s, picks) in sampled.iter().enumerate() {
                assert_eq!(picks.len(), counts[s]);
                assert!(picks.windows(2).all(|w| w[0] < w[1]), "distinct + sorted");
                for &i in picks {
                    assert_eq!(topology.client_subnet(i), s);
                }
            }
        }
        // Same round, same seed: identical draw.  Different round: at least
        // one of 50 draws differs (overwhelmingly likely for this size).
        let again = sample_round(&topology, &counts, &seeds, 7);
        assert_eq!(again, sample_round(&topology, &counts, &seeds, 7));
        let different = (0..50).any(|t| sample_round(&topology, &counts, &seeds, t) != again);
        assert!(different);
    }

    #[test]
    fn sum_imbalance_is_zero_for_a_cancelling_family() {
        let v = DVector::from_row_slice(&[1.0, -2.0]);
        let mut w = v.clone();
        w.neg_mut();
        assert_eq!(sum_imbalance([&v, &w]), 0.0);
        assert!(sum_imbalance([&v, &v]) > 0.0);
        assert_eq!(sum_imbalance(std::iter::empty::<&DVector<f64>>()), 0.0);
    }

    #[test]
    fn guard_trips_on_large_or_non_finite_models() {
        let fine = DVector::from_row_slice(&[1.0, 2.0]);
        let big = DVector::from_row_slice(&[2e12, 0.0]);
        let bad = DVector::from_row_slice(&[f64::NAN, 0.0]);
        assert!(!over_guard(1e12, [&fine]));
        assert!(over_guard(1e12, [&fine, &big]));
        assert!(over_guard(1e12, [&bad]));
    }

    #[test]
    fn config_serde_round_trips() {
        let topology = small_topology(4, 2);
        let mut config = RunConfig::new(Algorithm::Scaffold, &topology);
        config.stop = StopRule::GradNormSqBelow { value: 1e-16 };
        config.init = ModelInit::Normal { std: 0.5 };
        config.batch = Batch::Size(3);
        let json = serde_json::to_string(&config).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
        assert!(json.contains("\"scaffold\""));
    }
}
