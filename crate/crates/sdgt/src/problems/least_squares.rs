//! Correlated linear regression with a planted solution.
//!
//! Client `i` holds a sensing matrix `A_i` whose rows follow a stationary
//! AR(1) recursion across coordinates (correlation `omega`) and targets
//! `b_i = A_i x0 + noise`. The client loss is the per-sample mean square
//! residual with a 1/2 factor, so gradients stay scale-free in the number of
//! samples. Raising `omega` concentrates the row spectrum and worsens the
//! condition number of the aggregate curvature, which is how experiment
//! configs reach a target conditioning.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Problem;
use crate::rng::{stream, Domain};
use crate::{Error, Result};

/// Correlation giving a condition number near 80 at the benchmark instance
/// shape (30 clients, dimension 200, 30 samples each). Calibrated by direct
/// computation of the curvature spectrum; see `omega_calibration` test.
pub const OMEGA_KAPPA_80: f64 = 0.68;

/// Correlation giving a condition number near 800 at the *small* benchmark
/// shape (30 clients, dimension 60, 10 samples each), where per-client data
/// is rank-deficient; calibrated the same way as [`OMEGA_KAPPA_80`].
pub const OMEGA_KAPPA_800: f64 = 0.912;

/// Generation parameters for the least-squares task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeastSquaresSpec {
    /// Number of clients.
    pub n: usize,
    /// Model dimension.
    pub d: usize,
    pub samples_per_client: usize,
    /// AR(1) row correlation, in `[0, 1)`.
    pub omega: f64,
    /// Standard deviation of the additive target noise.
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
struct LsClient {
    a: DMatrix<f64>, // samples x d
    b: DVector<f64>,
}

/// A generated least-squares instance with its closed-form optimum.
#[derive(Clone, Debug)]
pub struct LeastSquaresProblem {
    clients: Vec<LsClient>,
    x_star: DVector<f64>,
    f_star: f64,
    gram: DMatrix<f64>, // (1/n) sum_i A_i^T A_i / samples_i
    spec: LeastSquaresSpec,
}

/// Stationary AR(1) row from i.i.d. standard normal innovations:
/// `a_1 = z_1 / sqrt(1 - omega^2)`, `a_{t+1} = omega * a_t + z_{t+1}`.
pub fn ar1_row(innovations: &[f64], omega: f64) -> Vec<f64> {
    let mut row = Vec::with_capacity(innovations.len());
    let mut prev = 0.0;
    for (t, &z) in innovations.iter().enumerate() {
        let a = if t == 0 {
            z / (1.0 - omega * omega).sqrt()
        } else {
            omega * prev + z
        };
        row.push(a);
        prev = a;
    }
    row
}

impl LeastSquaresProblem {
    /// Generate an instance. Per-client data comes from the client's own
    /// stream: first all row innovations (row-major), then the noise vector,
    /// which is drawn even when `noise_std == 0` so that instances differing
    /// only in noise level share sensing matrices and noise pattern.
    pub fn generate(spec: LeastSquaresSpec) -> Result<Self> {
        if spec.n == 0 || spec.d == 0 || spec.samples_per_client == 0 {
            return Err(Error::config(
                "least-squares instance needs n, d, samples_per_client >= 1",
            ));
        }
        if !(0.0..1.0).contains(&spec.omega) {
            return Err(Error::config(format!(
                "omega must lie in [0, 1), got {}",
                spec.omega
            )));
        }
        if spec.noise_std < 0.0 {
            return Err(Error::config("noise_std must be nonnegative"));
        }
        let mut signal = stream(spec.seed, Domain::DataSignal, 0);
        let x0 = DVector::from_fn(spec.d, |_, _| signal.sample::<f64, _>(StandardNormal));
        let clients: Vec<LsClient> = (0..spec.n)
            .map(|i| {
                let mut rng = stream(spec.seed, Domain::DataClient, i as u64);
                let mut a = DMatrix::zeros(spec.samples_per_client, spec.d);
                let mut innov = vec![0.0; spec.d];
                for r in 0..spec.samples_per_client {
                    for z in innov.iter_mut() {
                        *z = rng.sample::<f64, _>(StandardNormal);
                    }
                    let row = ar1_row(&innov, spec.omega);
                    for (c, v) in row.into_iter().enumerate() {
                        a[(r, c)] = v;
                    }
                }
                let noise = DVector::from_fn(spec.samples_per_client, |_, _| {
                    spec.noise_std * rng.sample::<f64, _>(StandardNormal)
                });
                let b = &a * &x0 + noise;
                LsClient { a, b }
            })
            .collect();
        Self::assemble(clients, spec)
    }

    /// Build an instance directly from client data; used for hand-crafted
    /// tests and data-sharing scenarios. The spec records shape only.
    pub fn from_client_data(a: Vec<DMatrix<f64>>, b: Vec<DVector<f64>>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::config("need matching, nonempty A and b lists"));
        }
        let d = a[0].ncols();
        let samples = a[0].nrows();
        for (ai, bi) in a.iter().zip(&b) {
            if ai.ncols() != d || ai.nrows() != bi.len() || ai.nrows() != samples {
                return Err(Error::config("client data shapes disagree"));
            }
        }
        let spec = LeastSquaresSpec {
            n: a.len(),
            d,
            samples_per_client: samples,
            omega: 0.0,
            noise_std: 0.0,
            seed: 0,
        };
        let clients = a
            .into_iter()
            .zip(b)
            .map(|(a, b)| LsClient { a, b })
            .collect();
        Self::assemble(clients, spec)
    }

    fn assemble(clients: Vec<LsClient>, spec: LeastSquaresSpec) -> Result<Self> {
        let n = clients.len();
        let d = spec.d;
        let mut gram = DMatrix::zeros(d, d);
        let mut rhs = DVector::zeros(d);
        for c in &clients {
            let scale = 1.0 / (n as f64 * c.a.nrows() as f64);
            gram += c.a.tr_mul(&c.a) * scale;
            rhs += c.a.tr_mul(&c.b) * scale;
        }
        let chol = gram.clone().cholesky().ok_or_else(|| {
            Error::Singular(
                "aggregate curvature is not positive definite; \
                 more total samples or lower correlation needed"
                    .into(),
            )
        })?;
        let x_star = chol.solve(&rhs);
        let mut problem = LeastSquaresProblem {
            clients,
            x_star,
            f_star: 0.0,
            gram,
            spec,
        };
        problem.f_star = problem.global_loss(&problem.x_star.clone());
        Ok(problem)
    }

    pub fn spec(&self) -> &LeastSquaresSpec {
        &self.spec
    }

    /// Ratio of extreme eigenvalues of the aggregate curvature matrix.
    pub fn condition_number(&self) -> Result<f64> {
        let (lo, hi) = self.curvature_extremes()?;
        Ok(hi / lo)
    }

    /// Smallest and largest eigenvalue of the aggregate curvature; useful
    /// for step-size selection.
    pub fn curvature_extremes(&self) -> Result<(f64, f64)> {
        let eig = nalgebra::SymmetricEigen::new(self.gram.clone());
        let lo = eig.eigenvalues.min();
        let hi = eig.eigenvalues.max();
        if lo <= 1e-12 * hi.max(1.0) {
            return Err(Error::Singular(format!(
                "curvature numerically singular: eigenvalues in [{lo}, {hi}]"
            )));
        }
        Ok((lo, hi))
    }
}

impl Problem for LeastSquaresProblem {
    fn num_clients(&self) -> usize {
        self.clients.len()
    }

    fn dim(&self) -> usize {
        self.spec.d
    }

    fn loss(&self, client: usize, x: &DVector<f64>) -> f64 {
        let c = &self.clients[client];
        let r = &c.a * x - &c.b;
        r.norm_squared() / (2.0 * c.a.nrows() as f64)
    }

    fn gradient(&self, client: usize, x: &DVector<f64>) -> DVector<f64> {
        let c = &self.clients[client];
        let r = &c.a * x - &c.b;
        c.a.tr_mul(&r) / c.a.nrows() as f64
    }

    fn sample_count(&self, client: usize) -> usize {
        self.clients[client].a.nrows()
    }

    fn batch_gradient(&self, client: usize, x: &DVector<f64>, indices: &[usize]) -> DVector<f64> {
        let c = &self.clients[client];
        let mut g = DVector::zeros(x.len());
        for &r in indices {
            let res = (c.a.row(r) * x)[(0, 0)] - c.b[r];
            g += c.a.row(r).transpose() * res;
        }
        g / indices.len() as f64
    }

    fn optimum(&self) -> Option<&DVector<f64>> {
        Some(&self.x_star)
    }

    fn optimal_value(&self) -> Option<f64> {
        Some(self.f_star)
    }
}
