//! Cluster classification with single-class clients.
//!
//! Inputs are drawn around Gaussian class centers; client `i` holds samples
//! of exactly one class (round-robin assignment), which makes the task
//! maximally label-heterogeneous. The model is a two-layer fully connected
//! network with a softplus activation — smooth everywhere, so analytic
//! gradients check against finite differences — trained under softmax
//! cross-entropy. Parameters live in one flat vector laid out as
//! `[W1 row-major | b1 | W2 row-major | b2]`.

use nalgebra::{DMatrix, DVector};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Problem;
use crate::rng::{stream, Domain};
use crate::{Error, Result};

/// Standard deviation of the Gaussian class centers; within-class spread is
/// unit, so this sets class separability.
pub const CENTER_STD: f64 = 2.0;

/// Generation parameters for the cluster classification task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    /// Number of clients.
    pub n: usize,
    /// Input-space dimension.
    pub input_dim: usize,
    pub classes: usize,
    pub samples_per_client: usize,
    pub hidden_width: usize,
    pub seed: u64,
    /// Require the class count to divide the client count exactly instead of
    /// falling back to an uneven round-robin assignment.
    #[serde(default)]
    pub strict_sharding: bool,
}

#[derive(Clone, Debug)]
struct ClsClient {
    inputs: DMatrix<f64>, // samples x input_dim
    class: usize,
}

/// A generated classification instance.
#[derive(Clone, Debug)]
pub struct ClassificationProblem {
    clients: Vec<ClsClient>,
    spec: ClusterSpec,
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Slices of the flat parameter vector.
struct Params {
    w1: DMatrix<f64>, // hidden x input
    b1: DVector<f64>,
    w2: DMatrix<f64>, // classes x hidden
    b2: DVector<f64>,
}

impl ClassificationProblem {
    pub fn generate(spec: ClusterSpec) -> Result<Self> {
        if spec.n == 0
            || spec.input_dim == 0
            || spec.classes == 0
            || spec.samples_per_client == 0
            || spec.hidden_width == 0
        {
            return Err(Error::config(
                "classification instance needs all size parameters >= 1",
            ));
        }
        if spec.strict_sharding && spec.n % spec.classes != 0 {
            return Err(Error::config(format!(
                "strict sharding: {} clients not divisible by {} classes",
                spec.n, spec.classes
            )));
        }
        let mut signal = stream(spec.seed, Domain::DataSignal, 0);
        let centers = DMatrix::from_fn(spec.classes, spec.input_dim, |_, _| {
            CENTER_STD * rand::Rng::sample::<f64, _>(&mut signal, StandardNormal)
        });
        let clients = (0..spec.n)
            .map(|i| {
                let class = i % spec.classes;
                let mut rng = stream(spec.seed, Domain::DataClient, i as u64);
                let inputs = DMatrix::from_fn(spec.samples_per_client, spec.input_dim, |_, c| {
                    centers[(class, c)] + rand::Rng::sample::<f64, _>(&mut rng, StandardNormal)
                });
                ClsClient { inputs, class }
            })
            .collect();
        Ok(ClassificationProblem { clients, spec })
    }

    pub fn spec(&self) -> &ClusterSpec {
        &self.spec
    }

    /// Flat parameter dimension of the network.
    pub fn param_dim(spec: &ClusterSpec) -> usize {
        spec.hidden_width * spec.input_dim
            + spec.hidden_width
            + spec.classes * spec.hidden_width
            + spec.classes
    }

    fn unpack(&self, x: &DVector<f64>) -> Params {
        let (h, din, c) = (self.spec.hidden_width, self.spec.input_dim, self.spec.classes);
        let mut at = 0;
        let w1 = DMatrix::from_row_slice(h, din, &x.as_slice()[at..at + h * din]);
        at += h * din;
        let b1 = DVector::from_column_slice(&x.as_slice()[at..at + h]);
        at += h;
        let w2 = DMatrix::from_row_slice(c, h, &x.as_slice()[at..at + c * h]);
        at += c * h;
        let b2 = DVector::from_column_slice(&x.as_slice()[at..at + c]);
        Params { w1, b1, w2, b2 }
    }

    fn pack(&self, p: &Params) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend(p.w1.transpose().as_slice()); // row-major of w1
        out.extend(p.b1.as_slice());
        out.extend(p.w2.transpose().as_slice());
        out.extend(p.b2.as_slice());
        DVector::from_vec(out)
    }

    /// Mean cross-entropy and (optionally) its gradient over the given rows
    /// of one client's data.
    fn eval(
        &self,
        client: usize,
        x: &DVector<f64>,
        rows: Option<&[usize]>,
        want_grad: bool,
    ) -> (f64, Option<DVector<f64>>) {
        let data = &self.clients[client];
        let p = self.unpack(x);
        let all: Vec<usize>;
        let rows = match rows {
            Some(r) => r,
            None => {
                all = (0..data.inputs.nrows()).collect();
                &all
            }
        };
        let batch = rows.len();
        let u = DMatrix::from_fn(batch, self.spec.input_dim, |r, c| {
            data.inputs[(rows[r], c)]
        });
        // Forward pass.
        let mut hidden = &u * p.w1.transpose(); // batch x h
        for r in 0..batch {
            for c in 0..self.spec.hidden_width {
                hidden[(r, c)] += p.b1[c];
            }
        }
        let act = hidden.map(softplus);
        let mut logits = &act * p.w2.transpose(); // batch x classes
        for r in 0..batch {
            for c in 0..self.spec.classes {
                logits[(r, c)] += p.b2[c];
            }
        }
        let mut loss = 0.0;
        // Softmax rows, reused as the gradient's residual.
        let mut prob = logits.clone();
        for r in 0..batch {
            let row_max = (0..self.spec.classes)
                .map(|c| logits[(r, c)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..self.spec.classes {
                let e = (logits[(r, c)] - row_max).exp();
                prob[(r, c)] = e;
                z += e;
            }
            for c in 0..self.spec.classes {
                prob[(r, c)] /= z;
            }
            loss += z.ln() + row_max - logits[(r, data.class)];
        }
        loss /= batch as f64;
        if !want_grad {
            return (loss, None);
        }
        // Backward pass: residual = (softmax - onehot) / batch.
        let mut resid = prob;
        for r in 0..batch {
            resid[(r, data.class)] -= 1.0;
        }
        resid /= batch as f64;
        let g_w2 = resid.tr_mul(&act); // classes x h
        let g_b2 = DVector::from_fn(self.spec.classes, |c, _| resid.column(c).sum());
        let mut d_hidden = &resid * &p.w2; // batch x h
        for r in 0..batch {
            for c in 0..self.spec.hidden_width {
                d_hidden[(r, c)] *= sigmoid(hidden[(r, c)]);
            }
        }
        let g_w1 = d_hidden.tr_mul(&u); // h x input
        let g_b1 = DVector::from_fn(self.spec.hidden_width, |c, _| d_hidden.column(c).sum());
        let grad = self.pack(&Params {
            w1: g_w1,
            b1: g_b1,
            w2: g_w2,
            b2: g_b2,
        });
        (loss, Some(grad))
    }
}

impl Problem for ClassificationProblem {
    fn num_clients(&self) -> usize {
        self.clients.len()
    }

    fn dim(&self) -> usize {
        Self::param_dim(&self.spec)
    }

    fn loss(&self, client: usize, x: &DVector<f64>) -> f64 {
        self.eval(client, x, None, false).0
    }

    fn gradient(&self, client: usize, x: &DVector<f64>) -> DVector<f64> {
        self.eval(client, x, None, true).1.unwrap()
    }

    fn sample_count(&self, client: usize) -> usize {
        self.clients[client].inputs.nrows()
    }

    fn batch_gradient(&self, client: usize, x: &DVector<f64>, indices: &[usize]) -> DVector<f64> {
        self.eval(client, x, Some(indices), true).1.unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> ClassificationProblem {
        ClassificationProblem::generate(ClusterSpec {
            n: 6,
            input_dim: 5,
            classes: 3,
            samples_per_client: 7,
            hidden_width: 4,
            seed: 2,
            strict_sharding: true,
        })
        .unwrap()
    }

    #[test]
    fn loss_at_zero_parameters_is_log_class_count() {
        // Zero weights give zero logits, hence a uniform softmax.
        let p = small();
        let x = DVector::zeros(p.dim());
        for client in 0..p.num_clients() {
            assert!((p.loss(client, &x) - 3.0f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = small();
        let mut rng = stream(7, Domain::Check, 0);
        for client in [0, 3, 5] {
            let x = DVector::from_fn(p.dim(), |_, _| {
                0.5 * rng.sample::<f64, _>(StandardNormal)
            });
            let err = super::super::finite_difference_error(&p, client, &x);
            assert!(err <= 1e-5, "client {client}: fd error {err}");
        }
    }

    #[test]
    fn clients_of_different_classes_disagree_at_zero() {
        // Round-robin assignment: clients 0 and 1 hold different classes,
        // so their cross-entropy gradients differ already at the origin.
        let p = small();
        let x = DVector::zeros(p.dim());
        let g0 = p.gradient(0, &x);
        let g1 = p.gradient(1, &x);
        assert!((&g0 - &g1).norm() > 1e-3);
    }

    #[test]
    fn strict_sharding_requires_divisibility() {
        let spec = ClusterSpec {
            n: 5,
            input_dim: 3,
            classes: 2,
            samples_per_client: 4,
            hidden_width: 3,
            seed: 1,
            strict_sharding: true,
        };
        assert!(ClassificationProblem::generate(spec.clone()).is_err());
        let relaxed = ClusterSpec {
            strict_sharding: false,
            ..spec
        };
        let p = ClassificationProblem::generate(relaxed).unwrap();
        assert_eq!(p.clients[4].class, 0); // round-robin wraps
    }

    #[test]
    fn batch_over_all_rows_matches_full_gradient() {
        let p = small();
        let mut rng = stream(3, Domain::Check, 0);
        let x = DVector::from_fn(p.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let all: Vec<usize> = (0..7).collect();
        let g = p.batch_gradient(2, &x, &all);
        let full = p.gradient(2, &x);
        assert!((&g - &full).norm() <= 1e-12 * full.norm().max(1.0));
    }

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let spec = ClusterSpec {
            n: 4,
            input_dim: 3,
            classes: 2,
            samples_per_client: 5,
            hidden_width: 3,
            seed: 21,
            strict_sharding: false,
        };
        let p = ClassificationProblem::generate(spec.clone()).unwrap();
        let q = ClassificationProblem::generate(spec.clone()).unwrap();
        assert_eq!(p.clients[3].inputs, q.clients[3].inputs);
        let r = ClassificationProblem::generate(ClusterSpec { seed: 22, ..spec }).unwrap();
        assert_ne!(p.clients[3].inputs, r.clients[3].inputs);
    }
}
