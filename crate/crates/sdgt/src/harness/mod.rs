//! Experiment plumbing: specs on disk, sweeps, manifests, plots and check
//! suites.
//!
//! An [`ExperimentSpec`] is a JSON document naming a problem, a topology
//! recipe, a set of algorithms and the sweep axes.  [`run_experiment`]
//! expands the full cross product (algorithms × gossip depths × sample
//! rates × replicates, plus an optional co-optimized operating point),
//! executes the runs concurrently, writes one CSV per run plus a
//! `manifest.json`, and is bit-for-bit reproducible: the manifest records
//! the spec hash and the resolved seeds of every run, and rerunning the
//! same spec rewrites identical files regardless of scheduling order.
//!
//! One seeding rule applies everywhere in this module: the `data` stream of
//! the experiment's [`Seeds`] governs data generation, so any seed written
//! inside the problem block is replaced.  Replicate `r` derives all four
//! stream seeds through [`Seeds::replicate`], which is what varies data,
//! topology, sampling and batching together across repeated runs.

pub mod checks;
pub mod plot;

pub use plot::{emit_plot, render_plot, PlotFileSpec, PlotInput, PlotSpec, XAxis};

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algorithms::{Algorithm, ModelInit, RunConfig, RunOutcome, RunOutput, StopRule};
use crate::cooptimizer::{solve, CoOptProblem, CoOptSolution, PenaltyWeights};
use crate::diagnostics::{write_records_csv, CostModel, MetricsRecord};
use crate::problems::{Batch, ProblemSpec};
use crate::rng::{stream, Domain, Seeds, SCHEME};
use crate::topology::{equal_sizes, SubnetTopology};
use crate::{Error, Result};

/// Write `bytes` to `path` atomically: write a sibling temp file, then
/// rename over the destination. Readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut tmp = tempfile_in(dir)?;
    tmp.file
        .write_all(bytes)
        .and_then(|()| tmp.file.sync_all())
        .map_err(|e| Error::io(tmp.path.display().to_string(), e))?;
    std::fs::rename(&tmp.path, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    tmp.keep = true;
    Ok(())
}

struct TempSibling {
    path: PathBuf,
    file: std::fs::File,
    keep: bool,
}

impl Drop for TempSibling {
    fn drop(&mut self) {
        if !self.keep {
            let _ = std::fs::remove_file(&self.path);
        }
    }
}

fn tempfile_in(dir: &Path) -> Result<TempSibling> {
    // Process id + a counter keep concurrent writers on distinct names.
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let name = format!(
        ".tmp-{}-{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    );
    let path = dir.join(name);
    let file =
        std::fs::File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(TempSibling {
        path,
        file,
        keep: false,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// How to build the subnet layout.  Give either the number of equal-size
/// subnets (the client count must divide evenly) or explicit sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subnets: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
    /// Connectivity radius is drawn uniformly from this range per subnet.
    pub radius_range: (f64, f64),
}

impl TopologySpec {
    pub fn equal(subnets: usize, radius_range: (f64, f64)) -> Self {
        Self {
            subnets: Some(subnets),
            sizes: None,
            radius_range,
        }
    }

    pub fn resolve_sizes(&self, num_clients: usize) -> Result<Vec<usize>> {
        match (&self.subnets, &self.sizes) {
            (Some(_), Some(_)) | (None, None) => Err(Error::config(
                "topology needs exactly one of `subnets` or `sizes`",
            )),
            (Some(s), None) => equal_sizes(num_clients, *s),
            (None, Some(sizes)) => {
                if sizes.iter().sum::<usize>() != num_clients {
                    return Err(Error::config(format!(
                        "subnet sizes sum to {} but the problem has {num_clients} clients",
                        sizes.iter().sum::<usize>()
                    )));
                }
                Ok(sizes.clone())
            }
        }
    }

    pub fn build(&self, num_clients: usize, seed: u64) -> Result<SubnetTopology> {
        let sizes = self.resolve_sizes(num_clients)?;
        SubnetTopology::generate(&sizes, self.radius_range, seed)
    }
}

/// Communication energies, either written out explicitly or drawn once per
/// subnet from a seeded uniform range (with the device-to-device energy a
/// fixed fraction of the uplink energy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSpec {
    Explicit(CostModel),
    UniformDraw {
        lo: f64,
        hi: f64,
        cost_ratio: f64,
        seed: u64,
        #[serde(default)]
        tracker_exchange: bool,
    },
}

impl CostSpec {
    pub fn free() -> Self {
        CostSpec::UniformDraw {
            lo: 1.0,
            hi: 1.0,
            cost_ratio: 1.0,
            seed: 0,
            tracker_exchange: false,
        }
    }

    pub fn resolve(&self, num_subnets: usize) -> Result<CostModel> {
        let model = match self {
            CostSpec::Explicit(model) => model.clone(),
            CostSpec::UniformDraw {
                lo,
                hi,
                cost_ratio,
                seed,
                tracker_exchange,
            } => {
                if !(*lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
                    return Err(Error::config(format!(
                        "cost draw range [{lo}, {hi}] must satisfy 0 < lo <= hi"
                    )));
                }
                if !(*cost_ratio > 0.0) || !cost_ratio.is_finite() {
                    return Err(Error::config("cost_ratio must be finite and > 0"));
                }
                let mut rng = stream(*seed, Domain::CostDraw, 0);
                let uplink: Vec<f64> = (0..num_subnets)
                    .map(|_| lo + (hi - lo) * rand::Rng::random::<f64>(&mut rng))
                    .collect();
                CostModel {
                    d2d_energy: uplink.iter().map(|e| e * cost_ratio).collect(),
                    uplink_energy: uplink,
                    tracker_exchange: *tracker_exchange,
                }
            }
        };
        model.validate(num_subnets)?;
        Ok(model)
    }
}

/// One algorithm to include in the sweep, with optional per-algorithm
/// overrides of the shared run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmEntry {
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
}

fn default_batch() -> Batch {
    Batch::Full
}

fn default_divergence_limit() -> f64 {
    1e12
}

fn default_true() -> bool {
    true
}

fn default_one() -> u64 {
    1
}

/// Settings shared by every run of the experiment.  `local_rounds` and
/// `sample_counts` are supplied by the sweep axes instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    /// Global rounds per run.
    pub rounds: usize,
    pub step_size: f64,
    #[serde(default = "default_batch")]
    pub batch: Batch,
    #[serde(default)]
    pub init: ModelInit,
    pub cost: CostSpec,
    #[serde(default)]
    pub stop: StopRule,
    #[serde(default = "default_divergence_limit")]
    pub divergence_limit: f64,
    /// Compute the tracker-gap diagnostic columns (one extra gradient sweep
    /// per round).
    #[serde(default = "default_true")]
    pub tracker_diagnostics: bool,
}

/// Pick the device-to-device depth and per-subnet sample counts with the
/// learning-efficiency co-optimizer instead of (or in addition to) explicit
/// axis values.  Uses the experiment's resolved cost model as the energy
/// profile; the chosen point is swept like any other, labelled `co`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoOptAxis {
    pub weights: PenaltyWeights,
    pub max_local_rounds: usize,
}

/// The sweep cross product.  Both explicit axes must be non-empty; use a
/// single-element axis to hold a knob fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    /// Device-to-device rounds (local steps for the control-variate
    /// baseline) per global round.
    pub local_rounds: Vec<usize>,
    /// Fraction of each subnet sampled per round, in (0, 1]; counts round to
    /// the nearest client with a minimum of one.
    pub sample_rates: Vec<f64>,
    #[serde(default = "default_one")]
    pub replicates: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cooptimized: Option<CoOptAxis>,
}

/// A complete experiment description as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Experiment (and output directory) name: `[A-Za-z0-9_-]+`.
    pub name: String,
    /// The task.  Its embedded seed is ignored; see the module docs.
    pub problem: ProblemSpec,
    pub topology: TopologySpec,
    pub seeds: Seeds,
    pub algorithms: Vec<AlgorithmEntry>,
    pub run: RunSettings,
    pub sweep: SweepAxes,
    /// Default output root when the caller does not override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn problem_clients(spec: &ProblemSpec) -> usize {
    match spec {
        ProblemSpec::LeastSquares(s) => s.n,
        ProblemSpec::ClusterClassification(s) => s.n,
    }
}

fn with_data_seed(spec: &ProblemSpec, seed: u64) -> ProblemSpec {
    let mut spec = spec.clone();
    match &mut spec {
        ProblemSpec::LeastSquares(s) => s.seed = seed,
        ProblemSpec::ClusterClassification(s) => s.seed = seed,
    }
    spec
}

/// Percent label for a sample rate: `0.4` → `"40"`, `0.125` → `"12.5"`.
fn rate_label(rate: f64) -> String {
    let pct = rate * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

/// Per-subnet sample counts for a rate: nearest integer, at least one.
fn counts_for_rate(rate: f64, sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .map(|&m| ((rate * m as f64).round() as usize).clamp(1, m))
        .collect()
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(&read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::config(format!(
                "experiment name {:?} must be non-empty and use only [A-Za-z0-9_-]",
                self.name
            )));
        }
        if self.algorithms.is_empty() {
            return Err(Error::config("at least one algorithm required"));
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            if self.algorithms[..i].iter().any(|b| b.algorithm == a.algorithm) {
                return Err(Error::config(format!(
                    "algorithm {} listed twice; output names would collide",
                    a.algorithm
                )));
            }
            if let Some(s) = a.step_size {
                if !s.is_finite() || s < 0.0 {
                    return Err(Error::config(format!(
                        "step size override for {} must be finite and >= 0",
                        a.algorithm
                    )));
                }
            }
        }
        if self.run.rounds == 0 {
            return Err(Error::config("experiments need at least one round"));
        }
        if self.sweep.local_rounds.is_empty() || self.sweep.sample_rates.is_empty() {
            return Err(Error::config("sweep axes must be non-empty"));
        }
        if self.sweep.replicates == 0 {
            return Err(Error::config("replicates must be at least 1"));
        }
        for (i, &k) in self.sweep.local_rounds.iter().enumerate() {
            if k == 0 {
                return Err(Error::config("swept local_rounds values must be >= 1"));
            }
            if self.sweep.local_rounds[..i].contains(&k) {
                return Err(Error::config(format!("duplicate local_rounds value {k}")));
            }
        }
        for (i, &r) in self.sweep.sample_rates.iter().enumerate() {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::config(format!(
                    "sample rate {r} outside (0, 1]"
                )));
            }
            let label = rate_label(r);
            if self.sweep.sample_rates[..i]
                .iter()
                .any(|&p| rate_label(p) == label)
            {
                return Err(Error::config(format!(
                    "sample rates collide on label sr{label}"
                )));
            }
        }
        if let Some(co) = &self.sweep.cooptimized {
            if co.max_local_rounds == 0 {
                return Err(Error::config("cooptimized.max_local_rounds must be >= 1"));
            }
            PenaltyWeights::new(
                co.weights.local_rounds,
                co.weights.mixing,
                co.weights.uplink,
                co.weights.gossip,
            )?;
        }
        let n = problem_clients(&self.problem);
        let sizes = self.topology.resolve_sizes(n)?;
        self.run.cost.resolve(sizes.len())?;
        Ok(())
    }

    /// Hash of the canonical serialized spec; recorded in the manifest so an
    /// output directory can be matched to the exact document that made it.
    pub fn sha256(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }
}

/// Manifest entry for one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub file: String,
    pub algorithm: Algorithm,
    pub local_rounds: usize,
    /// Percent label of the sampled fraction, or `"co"` for the
    /// co-optimized operating point.
    pub sample_rate: String,
    pub sample_counts: Vec<usize>,
    pub replicate: u64,
    pub seeds: Seeds,
    pub outcome: RunOutcome,
    pub diverged: bool,
    pub rounds_recorded: usize,
    pub final_metrics: Option<MetricsRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub advisories: Vec<String>,
}

/// `manifest.json`: the experiment's provenance and per-run results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub spec_sha256: String,
    pub code_version: String,
    pub rng_scheme: String,
    pub subnet_sizes: Vec<usize>,
    pub cost: CostModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cooptimized: Option<CoOptSolution>,
    pub runs: Vec<RunReport>,
}

struct Job {
    algorithm: Algorithm,
    step_size: f64,
    local_rounds: usize,
    rate: String,
    sample_counts: Vec<usize>,
    replicate: u64,
    seeds: Seeds,
    file: String,
}

/// Execute the full sweep described by `spec` under `output_root`, writing
/// `<root>/<name>/<algo>_K<K>_sr<rate>_seed<replicate>.csv` per run plus
/// `manifest.json`.  Runs execute concurrently; outputs do not depend on
/// scheduling.  A diverged run keeps its partial CSV and is flagged in the
/// manifest; real failures (I/O, invalid derived config) abort the sweep.
pub fn run_experiment(spec: &ExperimentSpec, output_root: &Path) -> Result<Manifest> {
    spec.validate()?;
    let n = problem_clients(&spec.problem);
    let sizes = spec.topology.resolve_sizes(n)?;
    let cost = spec.run.cost.resolve(sizes.len())?;

    // Axis points: explicit cross product plus the co-optimized pick.
    let mut axes: Vec<(usize, String, Vec<usize>)> = Vec::new();
    for &k in &spec.sweep.local_rounds {
        for &rate in &spec.sweep.sample_rates {
            axes.push((k, rate_label(rate), counts_for_rate(rate, &sizes)));
        }
    }
    let cooptimized = match &spec.sweep.cooptimized {
        Some(axis) => {
            let problem = CoOptProblem::new(
                sizes.clone(),
                cost.uplink_energy.clone(),
                cost.d2d_energy.clone(),
                axis.weights,
                axis.max_local_rounds,
            )?;
            let solution = solve(&problem);
            axes.push((
                solution.local_rounds,
                "co".to_string(),
                solution.sample_counts.clone(),
            ));
            Some(solution)
        }
        None => None,
    };

    let mut jobs: Vec<Job> = Vec::new();
    for entry in &spec.algorithms {
        for (k, rate, counts) in &axes {
            for r in 0..spec.sweep.replicates {
                jobs.push(Job {
                    algorithm: entry.algorithm,
                    step_size: entry.step_size.unwrap_or(spec.run.step_size),
                    local_rounds: *k,
                    rate: rate.clone(),
                    sample_counts: counts.clone(),
                    replicate: r,
                    seeds: spec.seeds.replicate(r),
                    file: format!(
                        "{}_K{}_sr{}_seed{}.csv",
                        entry.algorithm.slug(),
                        k,
                        rate,
                        r
                    ),
                });
            }
        }
    }

    let dir = output_root.join(&spec.name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;

    let mut reports = jobs
        .par_iter()
        .map(|job| execute_job(spec, &cost, n, job, &dir))
        .collect::<Result<Vec<RunReport>>>()?;
    reports.sort_by(|a, b| a.file.cmp(&b.file));

    let manifest = Manifest {
        name: spec.name.clone(),
        spec_sha256: spec.sha256()?,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        rng_scheme: SCHEME.to_string(),
        subnet_sizes: sizes,
        cost,
        cooptimized,
        runs: reports,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&dir.join("manifest.json"), json.as_bytes())?;
    Ok(manifest)
}

fn execute_job(
    spec: &ExperimentSpec,
    cost: &CostModel,
    n: usize,
    job: &Job,
    dir: &Path,
) -> Result<RunReport> {
    let problem = with_data_seed(&spec.problem, job.seeds.data).build()?;
    let topology = spec.topology.build(n, job.seeds.topology)?;
    let config = RunConfig {
        algorithm: job.algorithm,
        rounds: spec.run.rounds,
        local_rounds: job.local_rounds,
        step_size: job.step_size,
        sample_counts: job.sample_counts.clone(),
        batch: spec.run.batch,
        seeds: job.seeds,
        init: spec.run.init,
        cost: cost.clone(),
        stop: spec.run.stop,
        divergence_limit: spec.run.divergence_limit,
        tracker_diagnostics: spec.run.tracker_diagnostics,
        record_trace: false,
        measure_time: false,
    };
    let output = crate::algorithms::run(&problem, &topology, &config)?;
    write_records_csv(&dir.join(&job.file), &output.records)?;
    Ok(RunReport {
        file: job.file.clone(),
        algorithm: job.algorithm,
        local_rounds: job.local_rounds,
        sample_rate: job.rate.clone(),
        sample_counts: job.sample_counts.clone(),
        replicate: job.replicate,
        seeds: job.seeds,
        outcome: output.outcome,
        diverged: output.outcome.diverged(),
        rounds_recorded: output.records.len(),
        final_metrics: output.records.last().cloned(),
        advisories: output.advisories,
    })
}

/// A single run described on disk: problem + topology recipe + the full
/// run configuration (which carries its own seeds and sample counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleRunSpec {
    pub problem: ProblemSpec,
    pub topology: TopologySpec,
    pub config: RunConfig,
    /// CSV destination; relative paths land under the chosen output root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl SingleRunSpec {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&read_to_string(path)?)?)
    }
}

/// Execute a [`SingleRunSpec`] and write its CSV.  Returns the run output
/// and the path written.  The same seeding rule as experiments applies: the
/// config's data seed governs data generation and the topology draw uses
/// the config's topology seed.
pub fn run_single(spec: &SingleRunSpec, output_root: &Path) -> Result<(RunOutput, PathBuf)> {
    let n = problem_clients(&spec.problem);
    let problem = with_data_seed(&spec.problem, spec.config.seeds.data).build()?;
    let topology = spec.topology.build(n, spec.config.seeds.topology)?;
    let output = crate::algorithms::run(&problem, &topology, &spec.config)?;
    let file = spec
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}_run.csv", spec.config.algorithm.slug())));
    let path = if file.is_absolute() {
        file
    } else {
        output_root.join(file)
    };
    write_records_csv(&path, &output.records)?;
    Ok((output, path))
}
