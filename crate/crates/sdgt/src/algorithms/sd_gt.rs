//! The hierarchical gradient-tracking trainer.
//!
//! Each global round has four phases:
//!
//! 1. **Gossip.**  `local_rounds` synchronous exchanges inside every subnet.
//!    Every client takes a half-step against its stochastic gradient plus
//!    both of its correction trackers, then the subnet combines half-steps
//!    through its doubly stochastic weight matrix (adapt-then-combine).
//! 2. **In-subnet tracker refresh.**  During gossip each client accumulates
//!    the mixing residual of its step displacement `−γ(g + z)`; dividing the
//!    accumulated residual by `Kγ` and adding it to `z` steers `z_i` toward
//!    the gap between the subnet's mean gradient and the client's own.
//!    Because the residual of a doubly stochastic mix sums to zero over the
//!    subnet, `Σ_i z_i` stays at zero no matter how long the run is.
//! 3. **Server exchange.**  The sampled clients of each subnet upload their
//!    round displacement corrected by the inter-subnet tracker,
//!    `x^{end} − x^{start} + Kγ·y`.  The server averages subnet means into a
//!    global shift, applies it, and re-derives each subnet's tracker from
//!    the dispersion of the subnet means around that shift:
//!    `ψ_s = (mean_s − shift) / (Kγ)`.  The dispersion form keeps `Σ_s ψ_s`
//!    at exactly zero and is stationary once every subnet reports the same
//!    displacement; an accumulating variant would instead double the tracker
//!    at its own fixed point and can never settle.
//! 4. **Broadcast.**  Sampled clients adopt the server model and their
//!    subnet's tracker; everyone else keeps local state.
//!
//! With singleton subnets the gossip matrix is the identity, the in-subnet
//! tracker is identically zero, and phases 3–4 collapse to the classic
//! skip-the-prox control-variate recursion `y ← y + (x − x_g)/(Kγ)`; with a
//! single all-client subnet under full sampling the inter-subnet tracker is
//! identically zero instead.  Both ends of that spectrum are pinned down by
//! tests here and in the check suites.

use nalgebra::DVector;

use crate::diagnostics::{mean_sq_deviation, tracker_gaps};
use crate::problems::{stochastic_gradient, Problem};
use crate::topology::SubnetTopology;
use crate::Result;

use super::{
    batch_stream, init_model, over_guard, sample_round, sum_imbalance, Meter, RoundTrace,
    RunConfig, RunOutcome, RunOutput,
};

pub(crate) fn train<P: Problem>(
    problem: &P,
    topology: &SubnetTopology,
    config: &RunConfig,
) -> Result<RunOutput> {
    let n = topology.num_clients();
    let dim = problem.dim();
    let num_subnets = topology.num_subnets();
    let gossip_rounds = config.local_rounds;
    let gamma = config.step_size;
    let tracker_scale = 1.0 / (gossip_rounds as f64 * gamma);

    let mut server = init_model(dim, config.init, &config.seeds);
    let mut clients: Vec<DVector<f64>> = vec![server.clone(); n];
    let mut inter = vec![DVector::zeros(dim); n]; // y_i
    let mut in_subnet = vec![DVector::zeros(dim); n]; // z_i
    let mut residual_acc = vec![DVector::zeros(dim); n];
    let mut subnet_tracker = vec![DVector::zeros(dim); num_subnets]; // ψ_s

    let mut half = vec![DVector::zeros(dim); n];
    let mut step_residual = vec![DVector::zeros(dim); n];

    let mut meter = Meter::new(problem, topology, config);
    let mut records = Vec::with_capacity(config.rounds);
    let mut trace = config.record_trace.then(Vec::new);
    let mut outcome = RunOutcome::Completed;
    let mut max_subnet_imbalance = 0.0f64;
    let mut max_server_imbalance = 0.0f64;

    for t in 0..config.rounds as u64 {
        let round_start: Vec<DVector<f64>> = clients.clone();
        let mut drift_sum = 0.0;

        for k in 0..gossip_rounds {
            drift_sum += mean_sq_deviation(&clients, &server);

            // All half-steps before any combine: synchronous semantics.
            for i in 0..n {
                let mut rng = batch_stream(&config.seeds, n, gossip_rounds, t, k, i);
                let grad =
                    stochastic_gradient(problem, i, &clients[i], config.batch, &mut rng)?;
                let mut step = grad;
                step += &in_subnet[i];
                step_residual[i].copy_from(&step);
                step_residual[i] *= -gamma;
                step += &inter[i];
                half[i].copy_from(&clients[i]);
                half[i].axpy(-gamma, &step, 1.0);
            }

            for (s, members) in topology.subnets().iter().enumerate() {
                let weights = topology.weights(s);
                for (a, &i) in members.iter().enumerate() {
                    let mut mixed_model = DVector::zeros(dim);
                    let mut mixed_residual = DVector::zeros(dim);
                    for (b, &j) in members.iter().enumerate() {
                        let w = weights[(a, b)];
                        if w != 0.0 {
                            mixed_model.axpy(w, &half[j], 1.0);
                            mixed_residual.axpy(w, &step_residual[j], 1.0);
                        }
                    }
                    clients[i] = mixed_model;
                    residual_acc[i] += &step_residual[i];
                    residual_acc[i] -= &mixed_residual;
                }
            }
        }

        for i in 0..n {
            in_subnet[i].axpy(tracker_scale, &residual_acc[i], 1.0);
            residual_acc[i].fill(0.0);
        }

        let sampled = sample_round(topology, &config.sample_counts, &config.seeds, t);
        let mut subnet_means = Vec::with_capacity(num_subnets);
        for picks in &sampled {
            let mut mean = DVector::zeros(dim);
            for &j in picks {
                mean += &clients[j];
                mean -= &round_start[j];
                mean.axpy(gossip_rounds as f64 * gamma, &inter[j], 1.0);
            }
            mean /= picks.len() as f64;
            subnet_means.push(mean);
        }
        let mut shift = DVector::zeros(dim);
        for mean in &subnet_means {
            shift += mean;
        }
        shift /= num_subnets as f64;
        server += &shift;
        for (s, mean) in subnet_means.iter().enumerate() {
            subnet_tracker[s].copy_from(mean);
            subnet_tracker[s] -= &shift;
            subnet_tracker[s] *= tracker_scale;
        }

        // Diagnostics look at the fleet before the broadcast overwrites the
        // sampled clients; the tracker gaps use the in-subnet tracker that
        // was just refreshed and the inter tracker the round actually used.
        let round_end_dev = mean_sq_deviation(&clients, &server);
        let gaps = config
            .tracker_diagnostics
            .then(|| tracker_gaps(problem, &clients, &inter, &in_subnet, topology.subnets()));
        for members in topology.subnets() {
            let imbalance = sum_imbalance(members.iter().map(|&i| &in_subnet[i]));
            max_subnet_imbalance = max_subnet_imbalance.max(imbalance);
        }
        max_server_imbalance = max_server_imbalance.max(sum_imbalance(subnet_tracker.iter()));

        let clients_end = trace.is_some().then(|| clients.clone());

        for (s, picks) in sampled.iter().enumerate() {
            for &j in picks {
                clients[j].copy_from(&server);
                inter[j].copy_from(&subnet_tracker[s]);
            }
        }

        let mut record = meter.finish_round(t, &server);
        record.in_round_deviation = Some(drift_sum);
        record.round_end_deviation = Some(round_end_dev);
        if let Some((y_gap, z_gap)) = gaps {
            record.inter_tracker_gap = Some(y_gap);
            record.in_subnet_tracker_gap = Some(z_gap);
        }
        let stop_hit = config.stop.satisfied(&record);
        records.push(record);

        if let Some(rounds) = trace.as_mut() {
            rounds.push(RoundTrace {
                round: t,
                sampled,
                clients_end: clients_end.expect("trace snapshot"),
                server_end: server.clone(),
                inter_trackers: inter.clone(),
                in_subnet_trackers: in_subnet.clone(),
                subnet_trackers: subnet_tracker.clone(),
            });
        }

        if over_guard(
            config.divergence_limit,
            clients.iter().chain(std::iter::once(&server)),
        ) {
            outcome = RunOutcome::Diverged { round: t };
            break;
        }
        if stop_hit {
            outcome = RunOutcome::Stopped { round: t };
            break;
        }
    }

    Ok(RunOutput {
        records,
        outcome,
        server_model: server,
        advisories: config.advisories(topology),
        max_subnet_tracker_imbalance: max_subnet_imbalance,
        max_server_tracker_imbalance: max_server_imbalance,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::{noisy_problem, small_problem, small_topology};
    use super::super::{run, Algorithm, ModelInit, RunConfig, RunOutcome, StopRule};
    use crate::problems::least_squares::LeastSquaresProblem;
    use crate::topology::SubnetTopology;
    use nalgebra::{DMatrix, DVector};

    /// d-dimensional clients with identity designs, so client i's gradient
    /// at x is (x − target_i) / d (the per-row loss normalization).
    fn anchor_clients(targets: &[&[f64]]) -> LeastSquaresProblem {
        let d = targets[0].len();
        let designs = targets
            .iter()
            .map(|_| DMatrix::<f64>::identity(d, d))
            .collect();
        let values = targets
            .iter()
            .map(|t| DVector::from_row_slice(t))
            .collect();
        LeastSquaresProblem::from_client_data(designs, values).unwrap()
    }

    fn singleton_topology(n: usize) -> SubnetTopology {
        SubnetTopology::generate(&vec![1; n], (0.1, 0.1), 77).unwrap()
    }

    #[test]
    fn single_client_round_is_a_plain_gradient_step() {
        // One client, identity weights, zero trackers: the round moves the
        // server by exactly −γ∇f(x⁰).
        let problem = anchor_clients(&[&[3.0, -1.0]]);
        let topology = singleton_topology(1);
        let mut config = RunConfig::new(Algorithm::SdGt, &topology);
        config.step_size = 0.25;
        let out = run(&problem, &topology, &config).unwrap();
        // ∇f(0) = (0 − target)/2 = (−1.5, 0.5); x¹ = −0.25·∇ = (0.375, −0.125).
        let expected = DVector::from_row_slice(&[0.375, -0.125]);
        assert!((out.server_model - expected).norm() < 1e-15);
    }

    #[test]
    fn first_gossip_step_averages_models_and_gradients() {
        // Two clients, complete graph (weights ½ everywhere), both start at
        // the server model, so after one exchange both sit at
        // x⁰ − γ·mean(g₁, g₂).
        let problem = anchor_clients(&[&[2.0], &[6.0]]);
        let topology = SubnetTopology::generate(&[2], (2.9, 2.9), 1).unwrap();
        let mut config = RunConfig::new(Algorithm::SdGt, &topology);
        config.step_size = 0.5;
        config.record_trace = true;
        let out = run(&problem, &topology, &config).unwrap();
        // g₁(0) = −2, g₂(0) = −6, mean −4 → both clients at 0 − 0.5·(−4) = 2.
        let trace = &out.trace.unwrap()[0];
        assert!((trace.clients_end[0][0] - 2.0).abs() < 1e-15);
        assert!((trace.clients_end[1][0] - 2.0).abs() < 1e-15);
        // Full sampling: the server lands on the same point.
        assert!((trace.server_end[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn in_subnet_tracker_update_matches_hand_computation() {
        // γ = 1, K = 1, two clients on a complete graph.  Targets (2,0) and
        // (0,0) give gradients (−1, 0) and (0, 0) at the zero model, so the
        // step displacements are z̃₁ = (1, 0) and z̃₂ = (0, 0); the mixing
        // residual against the half-half weight matrix leaves
        // z₁ = (½, 0), z₂ = (−½, 0).
        let problem = anchor_clients(&[&[2.0, 0.0], &[0.0, 0.0]]);
        let topology = SubnetTopology::generate(&[2], (2.9, 2.9), 1).unwrap();
        let mut config = RunConfig::new(Algorithm::SdGt, &topology);
        config.step_size = 1.0;
        config.record_trace = true;
        let out = run(&problem, &topology, &config).unwrap();
        let trace = &out.trace.unwrap()[0];
        let z1 = &trace.in_subnet_trackers[0];
        let z2 = &trace.in_subnet_trackers[1];
        assert!((z1 - DVector::from_row_slice(&[0.5, 0.0])).norm() < 1e-15);
        assert!((z2 - DVector::from_row_slice(&[-0.5, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn singleton_subnets_keep_the_in_subnet_tracker_at_exact_zero() {
        // With one client per subnet the gossip matrix is [1], so the mixing
        // residual is identically zero — not just small.
        let problem = small_problem(4);
        let topology = singleton_topology(4);
        let mut config = RunConfig::new(Algorithm::SdGt, &topology);
        config.rounds = 7;
        config.local_rounds = 3;
        config.step_size = 0.05;
        config.record_trace = true;
        let out = run(&problem, &topology, &config).unwrap();
        for round in out.trace.as_deref().unwrap() {
            for z in &round.in_subnet_trackers {
                assert!(z.iter().all(|&v| v == 0.0), "round {}", round.round);
            }
        }
        assert_eq!(out.max_subnet_tracker_imbalance, 0.0);
    }

    #[test]
    fn tracker_sums_stay_balanced_on_a_heterogeneous_run() {
        let problem = noisy_problem(8);
        let topology = small_topology(8, 2);
        let mut config = RunConfig::new(Algorithm::SdGt, &topology);
        config.rounds = 40;
        config.local_rounds = 4;
        config.step_size = 0.1;
        config.sample_counts = vec![2, 2];
        let out = run(&problem, &topology, &config).unwrap();
        assert_eq!(out.outcome, RunOutcome::Completed);
        assert!(
            out.max_subnet_tracker_imbalance < 1e-12,
            "z imbalance {}",
            out.max_subnet_tracker_imbalance
        );
        assert!(
            out.max_server_tracker_imbalance < 1e-12,
            "psi imbalance {}",
            out.max_server_tracker_imbalance
        );
    }

    #[test]
    fn full_information_run_converges_linearly_on_a_quadratic() {
        // Noisy targets: client optima disagree, so reaching the global
        // optimum exactly is the trackers' doing, not interpolation.
        let problem = noisy_problem(6);
        let topology = small_topology(6, 2);
        let (_, sharpest) = problem.curvature_extremes().unwrap();
        let mut config = RunConfig::new(Algorithm::SdGt, &topology);
        config.rounds = 400;
        config.local_rounds = 5;
        config.step_size = 0.5 / sharpest;
        let out = run(&problem, &topology, &config).unwrap();
        assert_eq!(out.outcome, RunOutcome::Completed);
        let last = out.records.last().unwrap();
        // A converged tracking run drives every structural diagnostic down
        // with the gradient, not just the loss.
        assert!(last.grad_norm_sq < 1e-8, "grad {}", last.grad_norm_sq);
        assert!(last.round_end_deviation.unwrap() < 1e-8);
        assert!(last.inter_tracker_gap.unwrap() < 1e-8);
        assert!(last.in_subnet_tracker_gap.unwrap() < 1e-8);
        assert!(last.dist_to_opt_sq.unwrap() < 1e-10);
    }

    #[test]
    fn partial_sampling_still_reaches_the_optimum() {
        let problem = noisy_problem(6);
        let topology = small_topology(6, 2);
        let (_, sharpest) = problem.curvature_extremes().unwrap();
        let mut config = RunConfig::new(Algorithm::SdGt, &topology);
        config.rounds = 2000;
        config.local_rounds = 3;
        config.step_size = 0.4 / sharpest;
        config.sample_counts = vec![1, 1];
        config.stop = StopRule::DistToOptSqBelow { value: 1e-18 };
        let out = run(&problem, &topology, &config).unwrap();
        assert!(
            matches!(out.outcome, RunOutcome::Stopped { .. }),
            "did not converge: last dist {:?}",
            out.records.last().unwrap().dist_to_opt_sq
        );
    }

    #[test]
    fn runs_are_deterministic_and_zero_rounds_return_the_init() {
        let problem = small_problem(6);
        let topology = small_topology(6, 3);
        let mut config = RunConfig::new(Algorithm::SdGt, &topology);
        config.rounds = 12;
        config.local_rounds = 2;
        config.step_size = 0.08;
        config.sample_counts = vec![1, 2, 1];
        config.init = ModelInit::Normal { std: 0.3 };
        let a = run(&problem, &topology, &config).unwrap();
        let b = run(&problem, &topology, &config).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.server_model, b.server_model);

        config.rounds = 0;
        let empty = run(&problem, &topology, &config).unwrap();
        assert!(empty.records.is_empty());
        assert_eq!(empty.outcome, RunOutcome::Completed);
        // Zero rounds leave the (seeded, nonzero) init untouched.
        let fresh = run(&problem, &topology, &config).unwrap();
        assert_eq!(empty.server_model, fresh.server_model);
        assert!(empty.server_model.norm() > 0.0);
    }

    #[test]
    fn oversized_steps_are_reported_as_divergence_not_error() {
        let problem = small_problem(4);
        let topology = small_topology(4, 2);
        let mut config = RunConfig::new(Algorithm::SdGt, &topology);
        config.rounds = 400;
        config.step_size = 50.0; // far beyond 2/L for this instance
        config.divergence_limit = 1e9;
        let out = run(&problem, &topology, &config).unwrap();
        match out.outcome {
            RunOutcome::Diverged { round } => {
                assert_eq!(out.records.len() as u64, round + 1, "partial records kept");
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
