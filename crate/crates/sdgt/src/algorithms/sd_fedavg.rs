//! Tracker-free baseline: the same gossip-and-aggregate loop with plain
//! local gradient steps.
//!
//! Clients step against their own stochastic gradient only, the subnet
//! combines half-steps exactly as the tracking trainer does, and the server
//! *replaces* its model by the mean of the sampled subnet means instead of
//! applying a corrected displacement.  Nothing in the loop compensates for
//! gradient heterogeneity, so with deterministic gradients the trajectory
//! stalls at a distance from the optimum set by the data spread and the
//! step size — which is exactly what this baseline is for.
//!
//! The deviation diagnostics are reported like for the tracking trainer;
//! the two tracker-gap columns are reported against zero trackers, so they
//! measure the raw gradient imbalance the missing correction would have to
//! cancel.

use nalgebra::DVector;

use crate::diagnostics::{mean_sq_deviation, tracker_gaps};
use crate::problems::{stochastic_gradient, Problem};
use crate::topology::SubnetTopology;
use crate::Result;

use super::{
    batch_stream, init_model, over_guard, sample_round, Meter, RoundTrace, RunConfig, RunOutcome,
    RunOutput,
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

    let mut server = init_model(dim, config.init, &config.seeds);
    let mut clients: Vec<DVector<f64>> = vec![server.clone(); n];
    let zero_trackers = vec![DVector::zeros(dim); n];
    let mut half = vec![DVector::zeros(dim); n];

    let mut meter = Meter::new(problem, topology, config);
    let mut records = Vec::with_capacity(config.rounds);
    let mut trace = config.record_trace.then(Vec::new);
    let mut outcome = RunOutcome::Completed;

    for t in 0..config.rounds as u64 {
        let mut drift_sum = 0.0;

        for k in 0..gossip_rounds {
            drift_sum += mean_sq_deviation(&clients, &server);
            for i in 0..n {
                let mut rng = batch_stream(&config.seeds, n, gossip_rounds, t, k, i);
                let grad =
                    stochastic_gradient(problem, i, &clients[i], config.batch, &mut rng)?;
                half[i].copy_from(&clients[i]);
                half[i].axpy(-gamma, &grad, 1.0);
            }
            for (s, members) in topology.subnets().iter().enumerate() {
                let weights = topology.weights(s);
                for (a, &i) in members.iter().enumerate() {
                    let mut mixed = DVector::zeros(dim);
                    for (b, &j) in members.iter().enumerate() {
                        let w = weights[(a, b)];
                        if w != 0.0 {
                            mixed.axpy(w, &half[j], 1.0);
                        }
                    }
                    clients[i] = mixed;
                }
            }
        }

        let sampled = sample_round(topology, &config.sample_counts, &config.seeds, t);
        let mut replacement = DVector::zeros(dim);
        for picks in &sampled {
            let mut mean = DVector::zeros(dim);
            for &j in picks {
                mean += &clients[j];
            }
            mean /= picks.len() as f64;
            replacement += &mean;
        }
        replacement /= num_subnets as f64;
        server = replacement;

        let round_end_dev = mean_sq_deviation(&clients, &server);
        let gaps = config.tracker_diagnostics.then(|| {
            tracker_gaps(
                problem,
                &clients,
                &zero_trackers,
                &zero_trackers,
                topology.subnets(),
            )
        });
        let clients_end = trace.is_some().then(|| clients.clone());

        for picks in &sampled {
            for &j in picks {
                clients[j].copy_from(&server);
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
                inter_trackers: zero_trackers.clone(),
                in_subnet_trackers: zero_trackers.clone(),
                subnet_trackers: vec![DVector::zeros(dim); num_subnets],
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
        max_subnet_tracker_imbalance: 0.0,
        max_server_tracker_imbalance: 0.0,
        trace,
    })
}
