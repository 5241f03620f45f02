//! End-to-end exercises of the `sdgt` binary: each test drives a real
//! subcommand through `std::process::Command` and checks the on-disk and
//! stdout contract a scripted caller would rely on.

use std::path::Path;
use std::process::{Command, Output};

fn sdgt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sdgt"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary spawns");
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_json(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn run_subcommand_writes_a_deterministic_csv() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_json(
        dir.path(),
        "single.json",
        r#"{
            "problem": {"kind": "least_squares", "n": 6, "d": 4,
                        "samples_per_client": 6, "omega": 0.5,
                        "noise_std": 0.2, "seed": 1},
            "topology": {"sizes": [3, 3], "radius_range": [0.8, 1.6]},
            "config": {
                "algorithm": "sd_gt",
                "rounds": 12,
                "local_rounds": 3,
                "step_size": 0.05,
                "sample_counts": [2, 2],
                "batch": "full",
                "seeds": {"topology": 1, "data": 2, "sampling": 3, "batching": 4},
                "cost": {"d2d_energy": [0.5, 0.5], "uplink_energy": [4.0, 4.0]}
            },
            "output": "run.csv"
        }"#,
    );

    let out = run_ok(sdgt().arg("--output").arg(dir.path()).arg("run").arg(&spec));
    let text = stdout_of(&out);
    assert!(text.contains("after 12 rounds"), "stdout: {text}");
    assert!(text.contains("wrote "), "stdout: {text}");

    let csv = dir.path().join("run.csv");
    let first = std::fs::read(&csv).unwrap();
    // Header plus one record per round.
    assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 13);

    run_ok(sdgt().arg("--output").arg(dir.path()).arg("run").arg(&spec));
    assert_eq!(std::fs::read(&csv).unwrap(), first, "rerun must be bit-identical");
}

#[test]
fn sweep_then_plot_produces_manifest_runs_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_json(
        dir.path(),
        "exp.json",
        r#"{
            "name": "cli-tiny",
            "problem": {"kind": "least_squares", "n": 6, "d": 4,
                        "samples_per_client": 6, "omega": 0.5,
                        "noise_std": 0.2, "seed": 0},
            "topology": {"sizes": [3, 3], "radius_range": [0.8, 1.6]},
            "seeds": {"topology": 11, "data": 12, "sampling": 13, "batching": 14},
            "algorithms": [{"algorithm": "sd_gt"}, {"algorithm": "sd_fedavg"}],
            "run": {
                "rounds": 10,
                "step_size": 0.05,
                "cost": {"kind": "explicit",
                         "d2d_energy": [0.5, 0.5],
                         "uplink_energy": [4.0, 4.0]}
            },
            "sweep": {"local_rounds": [2], "sample_rates": [0.5, 1.0]}
        }"#,
    );

    let out = run_ok(sdgt().arg("--output").arg(dir.path()).arg("sweep").arg(&spec));
    let text = stdout_of(&out);
    assert!(text.contains("\"cli-tiny\": 4 runs"), "stdout: {text}");

    let exp_dir = dir.path().join("cli-tiny");
    let manifest: sdgt::harness::Manifest = serde_json::from_str(
        &std::fs::read_to_string(exp_dir.join("manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest.runs.len(), 4);
    for run in &manifest.runs {
        assert!(exp_dir.join(&run.file).exists(), "missing {}", run.file);
    }
    assert!(manifest.runs.iter().any(|r| r.file == "sdgt_K2_sr100_seed0.csv"));

    let plot = write_json(
        dir.path(),
        "plot.json",
        &format!(
            r#"{{
                "metric": "loss",
                "x_axis": "round",
                "log_y": true,
                "title": "tiny sweep",
                "inputs": [
                    {{"label": "gossip", "path": "{0}/sdgt_K2_sr100_seed0.csv"}},
                    {{"label": "fedavg", "path": "{0}/sdfedavg_K2_sr100_seed0.csv"}}
                ],
                "output": "loss.svg"
            }}"#,
            exp_dir.display()
        ),
    );
    let out = run_ok(sdgt().arg("--output").arg(dir.path()).arg("plot").arg(&plot));
    assert!(stdout_of(&out).contains("wrote "));
    let svg = std::fs::read_to_string(dir.path().join("loss.svg")).unwrap();
    assert!(svg.starts_with("<svg"), "not an svg: {}", &svg[..40.min(svg.len())]);
    assert_eq!(svg.matches("<polyline").count(), 2, "one polyline per input");
    assert!(svg.contains("tiny sweep"));
}

#[test]
fn cooptimize_prints_a_schedule_and_a_frontier() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_json(
        dir.path(),
        "instance.json",
        r#"{
            "subnet_sizes": [4, 4, 5],
            "uplink_costs": [10.0, 20.0, 40.0],
            "cost_ratio": 0.01,
            "weights": {"local_rounds": 1.0, "mixing": 1.0,
                        "uplink": 0.1, "gossip": 0.01},
            "max_local_rounds": 30
        }"#,
    );

    let out = run_ok(sdgt().arg("cooptimize").arg(&inst));
    let text = stdout_of(&out);
    assert!(text.contains("gossip rounds K"), "stdout: {text}");
    assert!(text.contains("objective"), "stdout: {text}");

    let out = run_ok(sdgt().arg("cooptimize").arg(&inst).arg("--frontier"));
    let text = stdout_of(&out);
    assert!(
        text.contains("total_cost,objective,local_rounds,sample_counts"),
        "stdout: {text}"
    );

    // Ambiguous costs must be rejected, not silently preferred.
    let bad = write_json(
        dir.path(),
        "bad.json",
        r#"{
            "subnet_sizes": [4],
            "uplink_costs": [10.0],
            "gossip_costs": [0.1],
            "cost_ratio": 0.01,
            "weights": {"local_rounds": 1.0, "mixing": 1.0,
                        "uplink": 0.1, "gossip": 0.01},
            "max_local_rounds": 5
        }"#,
    );
    let out = sdgt().arg("cooptimize").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("exactly one"),
        "stderr should explain the conflict"
    );
}

#[test]
fn check_subcommand_reports_verdict_lines() {
    let out = run_ok(sdgt().args(["check", "reductions"]));
    let text = stdout_of(&out);
    assert!(text.contains("PASS own_subnet_reduction"), "stdout: {text}");
    assert!(text.contains("PASS single_subnet_reduction"), "stdout: {text}");
    assert!(text.contains("suite reductions: 2/2 passed"), "stdout: {text}");

    let out = sdgt().args(["check", "nonsense"]).output().unwrap();
    assert!(!out.status.success(), "unknown suite must fail");
    assert!(!out.stderr.is_empty());
}
