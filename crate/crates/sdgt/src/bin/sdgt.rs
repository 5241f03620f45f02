//! Command-line front end: single runs, sweep expansion, schedule
//! co-optimization, SVG plots, and the verification suites.
//!
//! Output location precedence for anything that writes files:
//! `--output` flag, then `SDGT_OUTPUT_DIR`, then the spec's own
//! `output_dir` (sweeps only), then `./out`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use sdgt::cooptimizer::{self, CoOptProblem, PenaltyWeights};
use sdgt::diagnostics::read_records_csv;
use sdgt::harness::checks::{run_suite, Suite};
use sdgt::harness::{self, emit_plot, ExperimentSpec, PlotFileSpec, SingleRunSpec};

#[derive(Parser)]
#[command(
    name = "sdgt",
    version,
    about = "Deterministic simulator for semi-decentralized federated learning \
             with hierarchical gradient tracking"
)]
struct Cli {
    /// Directory run artifacts land in (overrides SDGT_OUTPUT_DIR and the
    /// spec's own output_dir).
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Worker threads for sweeps (overrides SDGT_THREADS); defaults to all
    /// cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one training run from a run-spec JSON file and write its CSV.
    Run {
        /// Run-spec file (problem, topology, full run configuration).
        spec: PathBuf,
    },
    /// Expand an experiment spec into its sweep grid and run every job.
    Sweep {
        /// Experiment file (problem, topology, algorithms, axes, seeds).
        spec: PathBuf,
    },
    /// Solve a communication/convergence trade-off instance.
    Cooptimize {
        /// Instance file: subnet_sizes, uplink_costs, gossip_costs or
        /// cost_ratio, weights, max_local_rounds.
        problem: PathBuf,
        /// Also print the cost/objective Pareto frontier as CSV.
        #[arg(long)]
        frontier: bool,
    },
    /// Render an SVG convergence plot from run CSVs.
    Plot {
        /// Plot-spec file (metric, axes, labelled input CSVs, output path).
        spec: PathBuf,
    },
    /// Run a verification suite and exit nonzero on any failure.
    Check {
        /// One of: invariants, reductions, oracles, acceptance.
        suite: String,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = resolve_threads(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("initializing the worker thread pool")?;
    }
    match cli.command {
        Command::Run { spec } => run_one(&spec, cli.output.as_deref()),
        Command::Sweep { spec } => sweep(&spec, cli.output.as_deref()),
        Command::Cooptimize { problem, frontier } => cooptimize(&problem, frontier),
        Command::Plot { spec } => plot(&spec, cli.output.as_deref()),
        Command::Check { suite } => check(&suite),
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("SDGT_THREADS") {
        Ok(v) if !v.is_empty() => {
            let n: usize = v
                .parse()
                .with_context(|| format!("SDGT_THREADS={v:?} is not a thread count"))?;
            Ok(Some(n))
        }
        _ => Ok(None),
    }
}

fn output_root(flag: Option<&Path>, spec_dir: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(v) = std::env::var("SDGT_OUTPUT_DIR") {
        if !v.is_empty() {
            return PathBuf::from(v);
        }
    }
    spec_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run_one(spec_path: &Path, output: Option<&Path>) -> Result<()> {
    let spec = SingleRunSpec::load(spec_path)
        .with_context(|| format!("loading run spec {}", spec_path.display()))?;
    let root = output_root(output, None);
    let (result, csv_path) = harness::run_single(&spec, &root)
        .with_context(|| format!("executing run spec {}", spec_path.display()))?;
    for advisory in &result.advisories {
        eprintln!("note: {advisory}");
    }
    let last = result.records.last();
    println!(
        "{} run: {:?} after {} rounds, final loss {:.6e}, cost {:.4e}",
        spec.config.algorithm,
        result.outcome,
        result.records.len(),
        last.map(|r| r.loss).unwrap_or(f64::NAN),
        last.map(|r| r.comm_cost_cum).unwrap_or(f64::NAN),
    );
    println!("wrote {}", csv_path.display());
    Ok(())
}

fn sweep(spec_path: &Path, output: Option<&Path>) -> Result<()> {
    let spec = ExperimentSpec::load(spec_path)
        .with_context(|| format!("loading experiment spec {}", spec_path.display()))?;
    let root = output_root(output, spec.output_dir.as_deref());
    let manifest = harness::run_experiment(&spec, &root)
        .with_context(|| format!("running experiment {:?}", spec.name))?;
    let diverged = manifest.runs.iter().filter(|r| r.diverged).count();
    println!(
        "experiment {:?}: {} runs into {} (spec {})",
        manifest.name,
        manifest.runs.len(),
        root.join(&manifest.name).display(),
        &manifest.spec_sha256[..12],
    );
    if let Some(plan) = &manifest.cooptimized {
        println!(
            "co-optimized axis: K={}, counts {:?}, objective {:.6}",
            plan.local_rounds, plan.sample_counts, plan.objective
        );
    }
    if diverged > 0 {
        println!("warning: {diverged} run(s) diverged; see manifest.json");
    }
    Ok(())
}

/// On-disk co-optimizer instance.  Costs come either per subnet
/// (`gossip_costs`) or as one uplink-to-gossip `cost_ratio`.
#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CoOptFile {
    subnet_sizes: Vec<usize>,
    uplink_costs: Vec<f64>,
    #[serde(default)]
    gossip_costs: Option<Vec<f64>>,
    #[serde(default)]
    cost_ratio: Option<f64>,
    weights: PenaltyWeights,
    max_local_rounds: usize,
}

fn cooptimize(path: &Path, frontier: bool) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let file: CoOptFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))?;
    // Rebuild the weights through the validating constructor; the raw
    // deserialization above performs no checks.
    let weights = PenaltyWeights::new(
        file.weights.local_rounds,
        file.weights.mixing,
        file.weights.uplink,
        file.weights.gossip,
    )?;
    let problem = match (file.gossip_costs, file.cost_ratio) {
        (Some(gossip), None) => CoOptProblem::new(
            file.subnet_sizes,
            file.uplink_costs,
            gossip,
            weights,
            file.max_local_rounds,
        )?,
        (None, Some(ratio)) => CoOptProblem::with_cost_ratio(
            file.subnet_sizes,
            file.uplink_costs,
            ratio,
            weights,
            file.max_local_rounds,
        )?,
        _ => bail!("give exactly one of `gossip_costs` or `cost_ratio`"),
    };

    let plan = cooptimizer::solve(&problem);
    let sizes = problem.subnet_sizes();
    println!(
        "schedule for {} subnet(s), K up to {}:",
        problem.num_subnets(),
        problem.max_local_rounds()
    );
    println!("  gossip rounds K  = {}", plan.local_rounds);
    println!(
        "  sample counts    = {:?} of {:?}  (sample mixing p = {:.4})",
        plan.sample_counts, sizes, plan.sample_mixing
    );
    println!("  objective        = {:.6}", plan.objective);
    println!("  cost per round   = {:.4}", plan.total_cost);

    let relaxed = cooptimizer::solve_relaxed(&problem);
    let gap = if relaxed.objective > 0.0 {
        (plan.objective - relaxed.objective) / relaxed.objective * 100.0
    } else {
        0.0
    };
    println!(
        "  relaxed bound    = {:.6} (K = {:.2}, integrality gap {:.2}%)",
        relaxed.objective, relaxed.local_rounds, gap
    );

    if frontier {
        println!();
        println!("total_cost,objective,local_rounds,sample_counts");
        for point in cooptimizer::pareto_frontier(&problem) {
            let counts: Vec<String> =
                point.sample_counts.iter().map(|c| c.to_string()).collect();
            println!(
                "{},{},{},{}",
                point.total_cost,
                point.objective,
                point.local_rounds,
                counts.join("/")
            );
        }
    }
    Ok(())
}

fn plot(spec_path: &Path, output: Option<&Path>) -> Result<()> {
    let spec = PlotFileSpec::load(spec_path)
        .with_context(|| format!("loading plot spec {}", spec_path.display()))?;
    let mut series = Vec::with_capacity(spec.inputs.len());
    for input in &spec.inputs {
        let records = read_records_csv(&input.path)
            .with_context(|| format!("reading {}", input.path.display()))?;
        series.push((input.label.clone(), records));
    }
    let target = if spec.output.is_absolute() {
        spec.output.clone()
    } else {
        output_root(output, None).join(&spec.output)
    };
    emit_plot(&series, &spec.plot, &target)
        .with_context(|| format!("rendering {}", target.display()))?;
    println!("wrote {}", target.display());
    Ok(())
}

fn check(suite_name: &str) -> Result<()> {
    let suite: Suite = suite_name.parse()?;
    let results = run_suite(suite);
    for result in &results {
        println!("{}", result.line());
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let total = results.len();
    println!(
        "suite {suite}: {}/{total} passed ({:.1}s)",
        total - failed,
        results.iter().map(|r| r.seconds).sum::<f64>()
    );
    if failed > 0 {
        bail!("{failed} of {total} checks failed");
    }
    Ok(())
}
