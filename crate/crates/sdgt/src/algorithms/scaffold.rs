//! Control-variate baseline without device-to-device communication.
//!
//! Only the sampled clients compute.  Each one pulls the server model, takes
//! `local_rounds` gradient steps corrected by the difference between the
//! server's and its own control variate, and pushes back its model delta
//! together with a control update.  The control variates play the same role
//! the trackers play in the hierarchical trainer — they cancel client drift
//! — but the correction travels only through the server, so there is no
//! gossip cost and no use of the subnet graphs beyond the sampling frame
//! and the uplink prices.
//!
//! Control update (the cheap variant that reuses the local trajectory
//! instead of a second gradient pass):
//! `c_i ← c_i − c + (x_g − x_local) / (Kγ)`.
//! The server averages model deltas per subnet and subnets uniformly, like
//! the other trainers, and folds `1/n` of every control delta into `c`.
//!
//! The four structural diagnostic columns stay empty: there is no gossip
//! phase for the deviation measures to describe, and the control variates
//! track the *global* gradient offset rather than the two-level split the
//! Y/Z columns are defined against.

use nalgebra::DVector;

use crate::problems::{stochastic_gradient, Problem};
use crate::topology::SubnetTopology;
use crate::Result;

use super::{
    batch_stream, init_model, over_guard, sample_round, Meter, RunConfig, RunOutcome, RunOutput,
};

pub(crate) fn train<P: Problem>(
    problem: &P,
    topology: &SubnetTopology,
    config: &RunConfig,
) -> Result<RunOutput> {
    let n = topology.num_clients();
    let dim = problem.dim();
    let num_subnets = topology.num_subnets();
    let local_rounds = config.local_rounds;
    let gamma = config.step_size;
    let control_scale = 1.0 / (local_rounds as f64 * gamma);

    let mut server = init_model(dim, config.init, &config.seeds);
    let mut server_control = DVector::zeros(dim);
    let mut controls: Vec<DVector<f64>> = vec![DVector::zeros(dim); n];

    let mut meter = Meter::new(problem, topology, config);
    let mut records = Vec::with_capacity(config.rounds);
    let mut outcome = RunOutcome::Completed;

    for t in 0..config.rounds as u64 {
        let sampled = sample_round(topology, &config.sample_counts, &config.seeds, t);

        let mut shift = DVector::zeros(dim);
        let mut control_shift = DVector::zeros(dim);
        for picks in &sampled {
            let mut subnet_delta = DVector::zeros(dim);
            for &i in picks {
                let mut local = server.clone();
                for k in 0..local_rounds {
                    let mut rng = batch_stream(&config.seeds, n, local_rounds, t, k, i);
                    let mut step =
                        stochastic_gradient(problem, i, &local, config.batch, &mut rng)?;
                    step += &server_control;
                    step -= &controls[i];
                    local.axpy(-gamma, &step, 1.0);
                }
                subnet_delta += &local;
                subnet_delta -= &server;

                let mut new_control = server.clone();
                new_control -= &local;
                new_control *= control_scale;
                new_control -= &server_control;
                new_control += &controls[i];
                control_shift += &new_control;
                control_shift -= &controls[i];
                controls[i] = new_control;
            }
            shift.axpy(1.0 / (num_subnets * picks.len()) as f64, &subnet_delta, 1.0);
        }
        server += &shift;
        server_control.axpy(1.0 / n as f64, &control_shift, 1.0);

        let record = meter.finish_round(t, &server);
        let stop_hit = config.stop.satisfied(&record);
        records.push(record);

        if over_guard(
            config.divergence_limit,
            std::iter::once(&server).chain(controls.iter()),
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
        trace: None,
    })
}
