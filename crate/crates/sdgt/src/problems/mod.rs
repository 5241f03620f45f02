//! Synthetic optimization problems: per-client loss oracles with exact and
//! minibatch-stochastic gradients.
//!
//! Two tasks are provided. [`least_squares`] builds strongly convex linear
//! regression with autocorrelated sensing rows (conditioning tuned by the
//! correlation parameter) and a closed-form optimum. [`classification`]
//! builds a non-convex cluster classification task where every client holds
//! data of a single class, trained through a small two-layer network with a
//! smooth activation.
//!
//! Both tasks regenerate bit-identically from their serializable spec
//! ([`ProblemSpec`]), which records the generation parameters and seed.

pub mod classification;
pub mod least_squares;

pub use classification::{ClassificationProblem, ClusterSpec};
pub use least_squares::{ar1_row, LeastSquaresProblem, LeastSquaresSpec};

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A federated optimization problem: `num_clients` loss oracles over a
/// common parameter space of dimension `dim`. The global objective is the
/// unweighted mean of the client losses.
pub trait Problem {
    fn num_clients(&self) -> usize;
    fn dim(&self) -> usize;
    fn loss(&self, client: usize, x: &DVector<f64>) -> f64;
    fn gradient(&self, client: usize, x: &DVector<f64>) -> DVector<f64>;
    /// Number of data points held by `client`.
    fn sample_count(&self, client: usize) -> usize;
    /// Mean gradient over the listed sample indices of `client`.
    fn batch_gradient(&self, client: usize, x: &DVector<f64>, indices: &[usize])
        -> DVector<f64>;
    /// Known minimizer of the global objective, when one is available.
    fn optimum(&self) -> Option<&DVector<f64>> {
        None
    }
    fn optimal_value(&self) -> Option<f64> {
        None
    }

    fn global_loss(&self, x: &DVector<f64>) -> f64 {
        let n = self.num_clients();
        (0..n).map(|i| self.loss(i, x)).sum::<f64>() / n as f64
    }

    fn global_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.num_clients();
        let mut g = DVector::zeros(self.dim());
        for i in 0..n {
            g += self.gradient(i, x);
        }
        g / n as f64
    }
}

/// Minibatch size for stochastic gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Batch {
    /// Exact (full-data) gradient.
    Full,
    /// Uniform minibatch of this size, drawn without replacement.
    Size(usize),
}

impl Serialize for Batch {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Batch::Full => s.serialize_str("full"),
            Batch::Size(b) => s.serialize_u64(*b as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Batch {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(usize),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(b) => Ok(Batch::Size(b)),
            Repr::Tag(t) if t.eq_ignore_ascii_case("full") => Ok(Batch::Full),
            Repr::Tag(t) => Err(serde::de::Error::custom(format!(
                "batch size must be an integer or \"full\", got {t:?}"
            ))),
        }
    }
}

/// Stochastic gradient of one client's loss at `x`: the exact gradient for
/// [`Batch::Full`], otherwise the mean gradient over a uniform
/// without-replacement minibatch drawn from `rng`. Unbiased by construction.
pub fn stochastic_gradient<P: Problem + ?Sized>(
    problem: &P,
    client: usize,
    x: &DVector<f64>,
    batch: Batch,
    rng: &mut ChaCha8Rng,
) -> Result<DVector<f64>> {
    match batch {
        Batch::Full => Ok(problem.gradient(client, x)),
        Batch::Size(b) => {
            let n = problem.sample_count(client);
            if b == 0 || b > n {
                return Err(Error::config(format!(
                    "batch size {b} invalid for client {client} with {n} samples"
                )));
            }
            let indices = rand::seq::index::sample(rng, n, b).into_vec();
            Ok(problem.batch_gradient(client, x, &indices))
        }
    }
}

/// Serializable description of a problem instance; building it regenerates
/// the instance bit-identically (parameters and seed are both recorded).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    LeastSquares(LeastSquaresSpec),
    ClusterClassification(ClusterSpec),
}

impl ProblemSpec {
    pub fn build(&self) -> Result<ProblemInstance> {
        match self {
            ProblemSpec::LeastSquares(spec) => {
                Ok(ProblemInstance::LeastSquares(LeastSquaresProblem::generate(spec.clone())?))
            }
            ProblemSpec::ClusterClassification(spec) => Ok(ProblemInstance::Classification(
                ClassificationProblem::generate(spec.clone())?,
            )),
        }
    }
}

/// A concrete generated problem.
#[derive(Clone, Debug)]
pub enum ProblemInstance {
    LeastSquares(LeastSquaresProblem),
    Classification(ClassificationProblem),
}

impl ProblemInstance {
    pub fn spec(&self) -> ProblemSpec {
        match self {
            ProblemInstance::LeastSquares(p) => ProblemSpec::LeastSquares(p.spec().clone()),
            ProblemInstance::Classification(p) => {
                ProblemSpec::ClusterClassification(p.spec().clone())
            }
        }
    }

    /// JSON snapshot sufficient to regenerate the instance.
    pub fn snapshot(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.spec())?)
    }

    pub fn from_snapshot(json: &str) -> Result<Self> {
        let spec: ProblemSpec = serde_json::from_str(json)?;
        spec.build()
    }
}

macro_rules! dispatch {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            ProblemInstance::LeastSquares($p) => $e,
            ProblemInstance::Classification($p) => $e,
        }
    };
}

impl Problem for ProblemInstance {
    fn num_clients(&self) -> usize {
        dispatch!(self, p => p.num_clients())
    }
    fn dim(&self) -> usize {
        dispatch!(self, p => p.dim())
    }
    fn loss(&self, client: usize, x: &DVector<f64>) -> f64 {
        dispatch!(self, p => p.loss(client, x))
    }
    fn gradient(&self, client: usize, x: &DVector<f64>) -> DVector<f64> {
        dispatch!(self, p => p.gradient(client, x))
    }
    fn sample_count(&self, client: usize) -> usize {
        dispatch!(self, p => p.sample_count(client))
    }
    fn batch_gradient(&self, client: usize, x: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
        dispatch!(self, p => p.batch_gradient(client, x, idx))
    }
    fn optimum(&self) -> Option<&DVector<f64>> {
        dispatch!(self, p => p.optimum())
    }
    fn optimal_value(&self) -> Option<f64> {
        dispatch!(self, p => p.optimal_value())
    }
}

/// Condition number of the problem's quadratic curvature, where defined.
/// Only the least-squares task has one; other tasks report an error.
pub fn condition_number(problem: &ProblemInstance) -> Result<f64> {
    match problem {
        ProblemInstance::LeastSquares(p) => p.condition_number(),
        ProblemInstance::Classification(_) => Err(Error::Missing(
            "condition number is defined only for the least-squares task".into(),
        )),
    }
}

/// Relative error between the analytic client gradient and a central finite
/// difference with per-coordinate step `1e-6 * (1 + |x_j|)`.
pub fn finite_difference_error<P: Problem + ?Sized>(
    problem: &P,
    client: usize,
    x: &DVector<f64>,
) -> f64 {
    let g = problem.gradient(client, x);
    let mut fd = DVector::zeros(x.len());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let h = 1e-6 * (1.0 + x[j].abs());
        probe[j] = x[j] + h;
        let up = problem.loss(client, &probe);
        probe[j] = x[j] - h;
        let down = problem.loss(client, &probe);
        probe[j] = x[j];
        fd[j] = (up - down) / (2.0 * h);
    }
    (&fd - &g).norm() / g.norm().max(1.0)
}
