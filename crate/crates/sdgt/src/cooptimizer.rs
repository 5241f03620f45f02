//! Joint selection of sampling counts and gossip rounds against an
//! energy-weighted learning-efficiency objective.
//!
//! The system has two knobs per deployment: how many clients each subnet
//! uploads per round (`h_s`, equivalently the unsampled ratio
//! `β_s = (m_s − h_s)/m_s`) and how many device-to-device rounds run between
//! server contacts (`K`).  The objective scored here combines a convergence
//! proxy with the communication bill:
//!
//! ```text
//! 1/p⁴  +  w₁·(1/K)^{1/2}  +  w₂·(1/(K·p²))^{2/3}
//!       +  w₃·Σ_s (1−β_s)·E_s  +  w₄·K·Σ_s E_s^{d2d}
//! ```
//!
//! where `p = min_s (1 − β_s²)` is the worst per-subnet sampling mixing
//! rate.  The first three terms fall as sampling and local work increase;
//! the last two are the prices of exactly those increases.
//!
//! [`solve`] is exact over the discrete feasible set without enumerating
//! it.  The key observation: the objective depends on the sample counts
//! only through `p` and through the uplink bill, and the bill is increasing
//! in every `h_s`.  So for any fixed `p` the best counts are the smallest
//! ones whose mixing rates still reach `p` — and the optimal `p` itself
//! must be one of the finitely many rates `h(2m−h)/m²` a subnet can
//! realize.  Scanning those candidates (with exact rational comparisons,
//! no rounding at the feasibility boundary) and all `K` values visits one
//! point per (candidate, K) pair and provably contains an optimum: any
//! feasible point is dominated by the reduced point at its own `p` (same
//! `p` and `K`, component-wise smaller counts, hence no larger bill).  The
//! same domination argument makes the frontier of the reduced family the
//! exact Pareto frontier of the full space.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Weights of the four penalty terms, all strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    /// Scales `(1/K)^{1/2}`: pressure toward more gossip rounds.
    pub local_rounds: f64,
    /// Scales `(1/(K·p²))^{2/3}`: pressure toward denser sampling and more
    /// gossip at once.
    pub mixing: f64,
    /// Scales the uplink bill `Σ (1−β_s) E_s`.
    pub uplink: f64,
    /// Scales the gossip bill `K·Σ E_s^{d2d}`.
    pub gossip: f64,
}

impl PenaltyWeights {
    pub fn new(local_rounds: f64, mixing: f64, uplink: f64, gossip: f64) -> Result<Self> {
        let w = Self {
            local_rounds,
            mixing,
            uplink,
            gossip,
        };
        for (name, v) in [
            ("local_rounds", w.local_rounds),
            ("mixing", w.mixing),
            ("uplink", w.uplink),
            ("gossip", w.gossip),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!(
                    "penalty weight {name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(w)
    }
}

/// One co-optimization instance.  Construct through [`CoOptProblem::new`]
/// or [`CoOptProblem::with_cost_ratio`]; both validate.  Deliberately only
/// serializable, not deserializable: an instance read straight off disk
/// would bypass the constructors' checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoOptProblem {
    subnet_sizes: Vec<usize>,
    uplink_costs: Vec<f64>,
    gossip_costs: Vec<f64>,
    weights: PenaltyWeights,
    max_local_rounds: usize,
}

impl CoOptProblem {
    pub fn new(
        subnet_sizes: Vec<usize>,
        uplink_costs: Vec<f64>,
        gossip_costs: Vec<f64>,
        weights: PenaltyWeights,
        max_local_rounds: usize,
    ) -> Result<Self> {
        if subnet_sizes.is_empty() {
            return Err(Error::config("at least one subnet required"));
        }
        if subnet_sizes.iter().any(|&m| m == 0) {
            return Err(Error::config("subnet sizes must be >= 1"));
        }
        if uplink_costs.len() != subnet_sizes.len() || gossip_costs.len() != subnet_sizes.len() {
            return Err(Error::config(format!(
                "cost vectors ({}, {}) must match {} subnets",
                uplink_costs.len(),
                gossip_costs.len(),
                subnet_sizes.len()
            )));
        }
        if uplink_costs
            .iter()
            .chain(&gossip_costs)
            .any(|&e| !(e > 0.0) || !e.is_finite())
        {
            return Err(Error::config("all costs must be finite and > 0"));
        }
        if max_local_rounds == 0 {
            return Err(Error::config("max_local_rounds must be >= 1"));
        }
        // Re-validate the weights even if constructed directly.
        PenaltyWeights::new(
            weights.local_rounds,
            weights.mixing,
            weights.uplink,
            weights.gossip,
        )?;
        Ok(Self {
            subnet_sizes,
            uplink_costs,
            gossip_costs,
            weights,
            max_local_rounds,
        })
    }

    /// Shorthand for the common calibration where one gossip exchange costs
    /// a fixed fraction `cost_ratio` of the subnet's uplink.
    pub fn with_cost_ratio(
        subnet_sizes: Vec<usize>,
        uplink_costs: Vec<f64>,
        cost_ratio: f64,
        weights: PenaltyWeights,
        max_local_rounds: usize,
    ) -> Result<Self> {
        if !(cost_ratio > 0.0) || !cost_ratio.is_finite() {
            return Err(Error::config("cost_ratio must be finite and > 0"));
        }
        let gossip_costs = uplink_costs.iter().map(|e| e * cost_ratio).collect();
        Self::new(
            subnet_sizes,
            uplink_costs,
            gossip_costs,
            weights,
            max_local_rounds,
        )
    }

    pub fn num_subnets(&self) -> usize {
        self.subnet_sizes.len()
    }

    pub fn subnet_sizes(&self) -> &[usize] {
        &self.subnet_sizes
    }

    pub fn uplink_costs(&self) -> &[f64] {
        &self.uplink_costs
    }

    pub fn gossip_costs(&self) -> &[f64] {
        &self.gossip_costs
    }

    pub fn weights(&self) -> &PenaltyWeights {
        &self.weights
    }

    pub fn max_local_rounds(&self) -> usize {
        self.max_local_rounds
    }

    /// Unweighted communication bill of a configuration: one global round's
    /// gossip exchanges plus the sampled uplinks.  This is the tie-break
    /// cost and the x-axis of the Pareto frontier.
    pub fn total_cost(&self, sample_counts: &[usize], local_rounds: usize) -> f64 {
        let gossip: f64 = self.gossip_costs.iter().sum::<f64>() * local_rounds as f64;
        let uplink: f64 = sample_counts
            .iter()
            .zip(&self.subnet_sizes)
            .zip(&self.uplink_costs)
            .map(|((&h, &m), &e)| (h as f64 / m as f64) * e)
            .sum();
        gossip + uplink
    }

    fn betas(&self, sample_counts: &[usize]) -> Vec<f64> {
        sample_counts
            .iter()
            .zip(&self.subnet_sizes)
            .map(|(&h, &m)| (m - h) as f64 / m as f64)
            .collect()
    }

    fn evaluate(&self, sample_counts: &[usize], local_rounds: usize) -> Candidate {
        let betas = self.betas(sample_counts);
        let p = min_mixing(&betas);
        let objective =
            objective(self, &betas, p, local_rounds).expect("p > 0 for valid counts");
        Candidate {
            objective,
            total_cost: self.total_cost(sample_counts, local_rounds),
            local_rounds,
            sample_counts: sample_counts.to_vec(),
        }
    }

    fn solution_from(&self, candidate: Candidate) -> CoOptSolution {
        let betas = self.betas(&candidate.sample_counts);
        let p = min_mixing(&betas);
        CoOptSolution {
            sample_counts: candidate.sample_counts,
            unsampled_ratios: betas,
            sample_mixing: p,
            local_rounds: candidate.local_rounds,
            objective: candidate.objective,
            total_cost: candidate.total_cost,
        }
    }
}

fn min_mixing(betas: &[f64]) -> f64 {
    betas
        .iter()
        .map(|b| 1.0 - b * b)
        .fold(f64::INFINITY, f64::min)
}

/// The scored objective at an explicit point.  `betas` and `p` are taken
/// as given (callers are responsible for `p = min_s (1 − β_s²)`); only the
/// fatal `p ≤ 0` is rejected, because every term with `p` in it would be
/// meaningless.
pub fn objective(problem: &CoOptProblem, betas: &[f64], p: f64, local_rounds: usize) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::config(format!("sample mixing rate must be > 0, got {p}")));
    }
    let w = &problem.weights;
    let k = local_rounds as f64;
    let convergence = 1.0 / p.powi(4);
    let local = w.local_rounds * (1.0 / k).sqrt();
    let mixed = w.mixing * (1.0 / (k * p * p)).powf(2.0 / 3.0);
    let uplink: f64 = betas
        .iter()
        .zip(&problem.uplink_costs)
        .map(|(&b, &e)| (1.0 - b) * e)
        .sum();
    let gossip: f64 = problem.gossip_costs.iter().sum::<f64>() * k;
    Ok(convergence + local + mixed + w.uplink * uplink + w.gossip * gossip)
}

/// A chosen operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoOptSolution {
    /// Clients sampled per subnet, `1 ≤ h_s ≤ m_s`.
    pub sample_counts: Vec<usize>,
    /// `β_s = (m_s − h_s)/m_s`.
    pub unsampled_ratios: Vec<f64>,
    /// `p = min_s (1 − β_s²)`.
    pub sample_mixing: f64,
    /// Chosen gossip rounds `K`.
    pub local_rounds: usize,
    pub objective: f64,
    pub total_cost: f64,
}

#[derive(Debug, Clone)]
struct Candidate {
    objective: f64,
    total_cost: f64,
    local_rounds: usize,
    sample_counts: Vec<usize>,
}

impl Candidate {
    /// Strict "is a better" ordering: objective, then cost, then fewer
    /// gossip rounds, then lexicographically smaller counts.  Both solvers
    /// (reduced and brute-force) use this same key, so they agree bit for
    /// bit whenever the objective ties.
    fn better_than(&self, other: &Candidate) -> bool {
        match self.objective.total_cmp(&other.objective) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
        match self.total_cost.total_cmp(&other.total_cost) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
        match self.local_rounds.cmp(&other.local_rounds) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
        self.sample_counts < other.sample_counts
    }
}

/// Mixing rate of `h` sampled out of `m` as an exact rational:
/// `1 − ((m−h)/m)² = h(2m−h) / m²`.
fn mixing_rational(h: usize, m: usize) -> (u64, u64) {
    let h = h as u64;
    let m = m as u64;
    (h * (2 * m - h), m * m)
}

/// `a/b ≥ c/d` by cross multiplication; all quantities fit easily in u128.
fn rational_ge(a: (u64, u64), b: (u64, u64)) -> bool {
    (a.0 as u128) * (b.1 as u128) >= (b.0 as u128) * (a.1 as u128)
}

/// Smallest sample count whose mixing rate reaches `target`; `h = m` always
/// qualifies because its rate is exactly 1 and candidate targets never
/// exceed 1.
fn minimal_count_reaching(m: usize, target: (u64, u64)) -> usize {
    for h in 1..=m {
        if rational_ge(mixing_rational(h, m), target) {
            return h;
        }
    }
    m
}

/// Exact discrete minimizer via the p-candidate reduction described in the
/// module docs: one reduced point per achievable mixing rate, each scanned
/// over all gossip-round counts.
pub fn solve(problem: &CoOptProblem) -> CoOptSolution {
    let mut best: Option<Candidate> = None;
    for point in reduced_family(problem) {
        if best.as_ref().is_none_or(|b| point.better_than(b)) {
            best = Some(point);
        }
    }
    problem.solution_from(best.expect("feasible set is never empty"))
}

/// All reduced points: for every achievable mixing-rate target, the
/// component-wise smallest counts reaching it, at every K.
fn reduced_family(problem: &CoOptProblem) -> impl Iterator<Item = Candidate> + '_ {
    let mut targets: Vec<(u64, u64)> = Vec::new();
    for &m in &problem.subnet_sizes {
        for h in 1..=m {
            targets.push(mixing_rational(h, m));
        }
    }
    // Exact dedup: a/b == c/d iff ad == cb.
    targets.sort_by(|&a, &b| {
        ((a.0 as u128) * (b.1 as u128)).cmp(&((b.0 as u128) * (a.1 as u128)))
    });
    targets.dedup_by(|&mut a, &mut b| {
        (a.0 as u128) * (b.1 as u128) == (b.0 as u128) * (a.1 as u128)
    });

    targets.into_iter().flat_map(move |target| {
        let counts: Vec<usize> = problem
            .subnet_sizes
            .iter()
            .map(|&m| minimal_count_reaching(m, target))
            .collect();
        (1..=problem.max_local_rounds).map(move |k| problem.evaluate(&counts, k))
    })
}

/// Size of the full enumeration `Π m_s · K_max`, saturating.
pub fn enumeration_size(problem: &CoOptProblem) -> u128 {
    problem
        .subnet_sizes
        .iter()
        .fold(problem.max_local_rounds as u128, |acc, &m| {
            acc.saturating_mul(m as u128)
        })
}

/// Reference oracle: enumerate every feasible `(h₁..h_S, K)`.  Refuses
/// instances beyond 10⁶ points — use [`solve`] for those.
pub fn solve_brute_force(problem: &CoOptProblem) -> Result<CoOptSolution> {
    const LIMIT: u128 = 1_000_000;
    let size = enumeration_size(problem);
    if size > LIMIT {
        return Err(Error::config(format!(
            "brute force over {size} points exceeds the {LIMIT} limit"
        )));
    }
    let mut counts: Vec<usize> = vec![1; problem.num_subnets()];
    let mut best: Option<Candidate> = None;
    loop {
        for k in 1..=problem.max_local_rounds {
            let point = problem.evaluate(&counts, k);
            if best.as_ref().is_none_or(|b| point.better_than(b)) {
                best = Some(point);
            }
        }
        // Odometer increment over the count vector.
        let mut pos = 0;
        loop {
            if pos == counts.len() {
                return Ok(problem.solution_from(best.expect("nonempty enumeration")));
            }
            if counts[pos] < problem.subnet_sizes[pos] {
                counts[pos] += 1;
                break;
            }
            counts[pos] = 1;
            pos += 1;
        }
    }
}

/// A point on the cost/objective trade-off curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub sample_counts: Vec<usize>,
    pub local_rounds: usize,
    pub sample_mixing: f64,
    pub objective: f64,
    pub total_cost: f64,
}

/// Exact Pareto frontier of (total cost, objective), cheapest first.
///
/// Every feasible point is dominated (≤ in both coordinates) by the reduced
/// point at its own mixing rate, so filtering the reduced family yields the
/// frontier of the full discrete space.
pub fn pareto_frontier(problem: &CoOptProblem) -> Vec<FrontierPoint> {
    let mut points: Vec<Candidate> = reduced_family(problem).collect();
    points.sort_by(|a, b| {
        a.total_cost
            .total_cmp(&b.total_cost)
            .then(a.objective.total_cmp(&b.objective))
            .then(a.local_rounds.cmp(&b.local_rounds))
            .then(a.sample_counts.cmp(&b.sample_counts))
    });
    let mut frontier: Vec<FrontierPoint> = Vec::new();
    let mut best_objective = f64::INFINITY;
    for point in points {
        if point.objective < best_objective {
            best_objective = point.objective;
            let betas = problem.betas(&point.sample_counts);
            frontier.push(FrontierPoint {
                sample_counts: point.sample_counts,
                local_rounds: point.local_rounds,
                sample_mixing: min_mixing(&betas),
                objective: point.objective,
                total_cost: point.total_cost,
            });
        }
    }
    frontier
}

/// Optimum of the continuous relaxation plus its rounding back to the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedSolution {
    pub unsampled_ratios: Vec<f64>,
    pub sample_mixing: f64,
    /// Continuous gossip rounds in `[1, K_max]`.
    pub local_rounds: f64,
    pub objective: f64,
    /// Best integer point adjacent to the continuous optimum.
    pub rounded: CoOptSolution,
}

impl RelaxedSolution {
    /// Gap of the mixing constraint `p ≤ min_s (1 − β_s²)` at the optimum;
    /// ~0 means the constraint is active, which the relaxation argument
    /// requires.
    pub fn mixing_constraint_gap(&self) -> f64 {
        min_mixing(&self.unsampled_ratios) - self.sample_mixing
    }
}

/// Continuous relaxation: `β_s` real in `[0, (m_s−1)/m_s]`, `K` real in
/// `[1, K_max]`.  For fixed `p` the optimal ratios are
/// `β_s(p) = min(√(1−p), (m_s−1)/m_s)` (largest allowed by the constraint,
/// since the bill falls as `β_s` grows) and the remaining function of `K`
/// is strictly convex, so a ternary search settles it.  `p` itself is
/// scanned on a dense grid that includes every discrete candidate rate, so
/// the relaxed value never exceeds [`solve`]'s — the discrete optimum is a
/// feasible point of the relaxation that the scan visits.
pub fn solve_relaxed(problem: &CoOptProblem) -> RelaxedSolution {
    let p_floor = problem
        .subnet_sizes
        .iter()
        .map(|&m| {
            let beta_max = (m - 1) as f64 / m as f64;
            1.0 - beta_max * beta_max
        })
        .fold(f64::INFINITY, f64::min);

    let mut p_grid: Vec<f64> = Vec::new();
    const GRID: usize = 4000;
    for i in 0..=GRID {
        p_grid.push(p_floor + (1.0 - p_floor) * i as f64 / GRID as f64);
    }
    for &m in &problem.subnet_sizes {
        for h in 1..=m {
            let (num, den) = mixing_rational(h, m);
            p_grid.push(num as f64 / den as f64);
        }
    }

    let mut best: Option<(f64, f64, f64)> = None; // (objective, p, k)
    for &p in &p_grid {
        if !(p > 0.0) {
            continue;
        }
        let k = best_continuous_rounds(problem, p);
        let value = relaxed_objective(problem, p, k);
        if best.is_none_or(|(obj, _, _)| value < obj) {
            best = Some((value, p, k));
        }
    }
    let (objective, p, k) = best.expect("grid is nonempty");

    let betas = relaxed_ratios(problem, p);
    let rounded = round_to_grid(problem, &betas, k);
    RelaxedSolution {
        sample_mixing: p,
        unsampled_ratios: betas,
        local_rounds: k,
        objective,
        rounded,
    }
}

fn relaxed_ratios(problem: &CoOptProblem, p: f64) -> Vec<f64> {
    let cap = (1.0 - p).max(0.0).sqrt();
    problem
        .subnet_sizes
        .iter()
        .map(|&m| cap.min((m - 1) as f64 / m as f64))
        .collect()
}

fn relaxed_objective(problem: &CoOptProblem, p: f64, k: f64) -> f64 {
    let betas = relaxed_ratios(problem, p);
    let w = &problem.weights;
    let uplink: f64 = betas
        .iter()
        .zip(&problem.uplink_costs)
        .map(|(&b, &e)| (1.0 - b) * e)
        .sum();
    let gossip: f64 = problem.gossip_costs.iter().sum::<f64>() * k;
    1.0 / p.powi(4)
        + w.local_rounds * (1.0 / k).sqrt()
        + w.mixing * (1.0 / (k * p * p)).powf(2.0 / 3.0)
        + w.uplink * uplink
        + w.gossip * gossip
}

/// Minimize the (strictly convex) K-part `w₁ K^{-1/2} + w₂ p^{-4/3} K^{-2/3}
/// + w₄ Σ E^{d2d} K` over real `K ∈ [1, K_max]` by ternary search.
fn best_continuous_rounds(problem: &CoOptProblem, p: f64) -> f64 {
    let mut lo = 1.0_f64;
    let mut hi = problem.max_local_rounds as f64;
    if hi <= lo {
        return lo;
    }
    let value = |k: f64| relaxed_objective(problem, p, k);
    for _ in 0..200 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if value(a) <= value(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let mid = 0.5 * (lo + hi);
    // The ends of the interval can win when the minimum sits on a bound.
    let ends = [1.0, problem.max_local_rounds as f64, mid];
    ends.into_iter()
        .min_by(|&a, &b| value(a).total_cmp(&value(b)))
        .unwrap()
}

/// Try floor/nearest/ceil for the counts vector and the round count (9
/// combinations, clamped to the grid) and keep the best by the solver key.
fn round_to_grid(problem: &CoOptProblem, betas: &[f64], k: f64) -> CoOptSolution {
    let count_options: Vec<Vec<usize>> = [f64::floor, f64::round, f64::ceil]
        .iter()
        .map(|op| {
            betas
                .iter()
                .zip(&problem.subnet_sizes)
                .map(|(&b, &m)| (op(m as f64 * (1.0 - b)) as usize).clamp(1, m))
                .collect()
        })
        .collect();
    let round_options = [
        (k.floor() as usize).clamp(1, problem.max_local_rounds),
        (k.round() as usize).clamp(1, problem.max_local_rounds),
        (k.ceil() as usize).clamp(1, problem.max_local_rounds),
    ];
    let mut best: Option<Candidate> = None;
    for counts in &count_options {
        for &rounds in &round_options {
            let point = problem.evaluate(counts, rounds);
            if best.as_ref().is_none_or(|b| point.better_than(b)) {
                best = Some(point);
            }
        }
    }
    problem.solution_from(best.expect("rounding grid nonempty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn weights(a: f64, b: f64, c: f64, d: f64) -> PenaltyWeights {
        PenaltyWeights::new(a, b, c, d).unwrap()
    }

    fn example_problem() -> CoOptProblem {
        CoOptProblem::with_cost_ratio(
            vec![4, 5, 6],
            vec![10.0, 55.0, 90.0],
            1e-3,
            weights(1.0, 1.0, 0.1, 0.01),
            50,
        )
        .unwrap()
    }

    #[test]
    fn objective_at_full_sampling_single_round_is_three() {
        // β = 0 everywhere makes p = 1; with unit weights on the two ratio
        // terms and vanishing cost weights the objective is 1 + 1 + 1.
        let problem = CoOptProblem::new(
            vec![3, 3],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            weights(1.0, 1.0, 1e-300, 1e-300),
            5,
        )
        .unwrap();
        let value = objective(&problem, &[0.0, 0.0], 1.0, 1).unwrap();
        assert!((value - 3.0).abs() < 1e-12, "{value}");
    }

    #[test]
    fn mixing_rate_of_two_out_of_five_is_exactly_064() {
        // β = 3/5, rate = 1 − 0.36 = 0.64; the rational form agrees.
        assert_eq!(mixing_rational(2, 5), (16, 25));
        let problem = CoOptProblem::new(
            vec![5],
            vec![1.0],
            vec![1.0],
            weights(1.0, 1.0, 1.0, 1.0),
            3,
        )
        .unwrap();
        let betas = problem.betas(&[2]);
        assert_eq!(betas, vec![0.6]);
        assert_eq!(min_mixing(&betas), 0.64);
    }

    #[test]
    fn objective_matches_hand_arithmetic_on_two_subnets() {
        // m = (2, 3), h = (1, 2), K = 2, weights (0.5, 2, 0.1, 0.01),
        // uplink (10, 20), gossip (1, 2):
        //   β = (1/2, 1/3), p = min(3/4, 8/9) = 0.75
        //   1/p⁴                    = 3.1604938271604937
        //   0.5·√(1/2)              = 0.3535533905932738
        //   2·(1/(2·0.75²))^(2/3)   = 1.848963398268359
        //   0.1·(0.5·10 + (2/3)·20) = 1.8333333333333337
        //   0.01·2·(1+2)            = 0.06
        //   total                   = 7.25634394935546
        let problem = CoOptProblem::new(
            vec![2, 3],
            vec![10.0, 20.0],
            vec![1.0, 2.0],
            weights(0.5, 2.0, 0.1, 0.01),
            4,
        )
        .unwrap();
        let point = problem.evaluate(&[1, 2], 2);
        assert!((point.objective - 7.25634394935546).abs() < 1e-12, "{}", point.objective);
        assert!(objective(&problem, &[0.5, 0.0], 0.0, 1).is_err(), "p = 0 rejected");
    }

    #[test]
    fn solver_matches_brute_force_on_the_reference_instance() {
        let problem = example_problem();
        let fast = solve(&problem);
        let slow = solve_brute_force(&problem).unwrap();
        assert_eq!(fast, slow);
        // The chosen point satisfies its own invariants.
        for ((&h, &m), &beta) in fast
            .sample_counts
            .iter()
            .zip(problem.subnet_sizes())
            .zip(&fast.unsampled_ratios)
        {
            assert!((1..=m).contains(&h));
            assert_eq!(beta, (m - h) as f64 / m as f64);
        }
        let recomputed = objective(
            &problem,
            &fast.unsampled_ratios,
            fast.sample_mixing,
            fast.local_rounds,
        )
        .unwrap();
        assert!((recomputed - fast.objective).abs() <= 1e-12 * fast.objective.abs());
    }

    #[test]
    fn vanishing_cost_weights_choose_full_sampling_and_max_rounds() {
        let problem = CoOptProblem::new(
            vec![4, 7],
            vec![3.0, 8.0],
            vec![0.5, 0.5],
            weights(1.0, 1.0, 1e-12, 1e-12),
            23,
        )
        .unwrap();
        let solution = solve(&problem);
        assert_eq!(solution.sample_counts, vec![4, 7]);
        assert_eq!(solution.sample_mixing, 1.0);
        assert_eq!(solution.local_rounds, 23);
    }

    #[test]
    fn dominant_gossip_price_pins_local_rounds_to_one() {
        let problem = CoOptProblem::new(
            vec![4, 7],
            vec![3.0, 8.0],
            vec![0.5, 0.5],
            weights(1.0, 1.0, 0.1, 1e9),
            23,
        )
        .unwrap();
        assert_eq!(solve(&problem).local_rounds, 1);
    }

    #[test]
    fn relaxation_lower_bounds_and_rounding_recovers_the_reference_solution() {
        let problem = example_problem();
        let discrete = solve(&problem);
        let relaxed = solve_relaxed(&problem);
        assert!(
            relaxed.objective <= discrete.objective + 1e-12,
            "{} vs {}",
            relaxed.objective,
            discrete.objective
        );
        assert!(relaxed.mixing_constraint_gap().abs() < 1e-12);
        let rounded = &relaxed.rounded;
        assert!(
            rounded.objective <= 1.05 * discrete.objective,
            "rounded {} vs discrete {}",
            rounded.objective,
            discrete.objective
        );
    }

    #[test]
    fn relaxed_optimum_without_cost_pressure_sits_at_the_corner() {
        let problem = CoOptProblem::new(
            vec![4, 7],
            vec![3.0, 8.0],
            vec![0.5, 0.5],
            weights(1.0, 1.0, 1e-12, 1e-12),
            23,
        )
        .unwrap();
        let relaxed = solve_relaxed(&problem);
        assert_eq!(relaxed.sample_mixing, 1.0);
        assert_eq!(relaxed.local_rounds, 23.0);
    }

    #[test]
    fn single_two_client_subnet_relaxation_bounds_both_discrete_points() {
        let problem = CoOptProblem::new(
            vec![2],
            vec![5.0],
            vec![0.4],
            weights(1.0, 1.0, 0.2, 0.05),
            6,
        )
        .unwrap();
        let relaxed = solve_relaxed(&problem);
        for h in 1..=2 {
            for k in 1..=6 {
                let point = problem.evaluate(&[h], k);
                assert!(
                    relaxed.objective <= point.objective + 1e-12,
                    "h={h} k={k}: {} > {}",
                    relaxed.objective,
                    point.objective
                );
            }
        }
    }

    #[test]
    fn frontier_is_strictly_improving_and_contains_the_optimum() {
        let problem = example_problem();
        let frontier = pareto_frontier(&problem);
        assert!(!frontier.is_empty());
        for pair in frontier.windows(2) {
            assert!(pair[0].total_cost < pair[1].total_cost);
            assert!(pair[0].objective > pair[1].objective);
        }
        let best = solve(&problem);
        let last_gain = frontier
            .iter()
            .find(|f| f.objective == best.objective)
            .expect("optimum on frontier");
        assert_eq!(last_gain.sample_counts, best.sample_counts);
    }

    #[test]
    fn construction_rejects_invalid_instances() {
        let w = weights(1.0, 1.0, 1.0, 1.0);
        assert!(CoOptProblem::new(vec![], vec![], vec![], w, 3).is_err());
        assert!(CoOptProblem::new(vec![0], vec![1.0], vec![1.0], w, 3).is_err());
        assert!(CoOptProblem::new(vec![2], vec![1.0, 2.0], vec![1.0], w, 3).is_err());
        assert!(CoOptProblem::new(vec![2], vec![-1.0], vec![1.0], w, 3).is_err());
        assert!(CoOptProblem::new(vec![2], vec![1.0], vec![1.0], w, 0).is_err());
        assert!(PenaltyWeights::new(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(
            CoOptProblem::with_cost_ratio(vec![2], vec![1.0], 0.0, w, 3).is_err(),
            "zero cost ratio"
        );
        let oversized = CoOptProblem::new(
            vec![100; 4],
            vec![1.0; 4],
            vec![1.0; 4],
            w,
            100,
        )
        .unwrap();
        assert!(solve_brute_force(&oversized).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// The reduction is exact: on every instance small enough to
        /// enumerate, both solvers return the identical solution.
        #[test]
        fn reduced_solver_equals_brute_force(
            sizes in proptest::collection::vec(1usize..=6, 1..=3),
            upl in proptest::collection::vec(0.1f64..100.0, 3),
            gos in proptest::collection::vec(0.01f64..10.0, 3),
            w in (0.01f64..10.0, 0.01f64..10.0, 0.001f64..1.0, 0.001f64..1.0),
            k_max in 1usize..=20,
        ) {
            let s = sizes.len();
            let problem = CoOptProblem::new(
                sizes,
                upl[..s].to_vec(),
                gos[..s].to_vec(),
                weights(w.0, w.1, w.2, w.3),
                k_max,
            ).unwrap();
            let fast = solve(&problem);
            let slow = solve_brute_force(&problem).unwrap();
            prop_assert_eq!(fast, slow);
        }

        /// Raising one subnet's uplink price never increases its chosen
        /// sample count (simple exchange argument).
        #[test]
        fn pricier_uplink_never_samples_more(
            sizes in proptest::collection::vec(1usize..=6, 1..=3),
            upl in proptest::collection::vec(0.1f64..50.0, 3),
            gos in proptest::collection::vec(0.01f64..5.0, 3),
            k_max in 1usize..=10,
            which in 0usize..3,
            factor in 1.5f64..20.0,
        ) {
            let s = sizes.len();
            let target = which % s;
            let base = CoOptProblem::new(
                sizes.clone(),
                upl[..s].to_vec(),
                gos[..s].to_vec(),
                weights(1.0, 1.0, 0.1, 0.05),
                k_max,
            ).unwrap();
            let mut pricier_costs = upl[..s].to_vec();
            pricier_costs[target] *= factor;
            let pricier = CoOptProblem::new(
                sizes,
                pricier_costs,
                gos[..s].to_vec(),
                weights(1.0, 1.0, 0.1, 0.05),
                k_max,
            ).unwrap();
            let before = solve(&base);
            let after = solve(&pricier);
            prop_assert!(after.sample_counts[target] <= before.sample_counts[target]);
        }

        /// Raising the gossip weight never increases the chosen K.
        #[test]
        fn pricier_gossip_never_adds_rounds(
            sizes in proptest::collection::vec(1usize..=6, 1..=3),
            upl in proptest::collection::vec(0.1f64..50.0, 3),
            gos in proptest::collection::vec(0.01f64..5.0, 3),
            k_max in 1usize..=10,
            factor in 1.5f64..50.0,
        ) {
            let s = sizes.len();
            let base = CoOptProblem::new(
                sizes.clone(),
                upl[..s].to_vec(),
                gos[..s].to_vec(),
                weights(1.0, 1.0, 0.1, 0.05),
                k_max,
            ).unwrap();
            let pricier = CoOptProblem::new(
                sizes,
                upl[..s].to_vec(),
                gos[..s].to_vec(),
                weights(1.0, 1.0, 0.1, 0.05 * factor),
                k_max,
            ).unwrap();
            prop_assert!(solve(&pricier).local_rounds <= solve(&base).local_rounds);
        }

        /// The relaxation is a true lower bound on every instance.
        #[test]
        fn relaxation_bounds_the_discrete_optimum(
            sizes in proptest::collection::vec(1usize..=8, 1..=4),
            upl in proptest::collection::vec(0.1f64..50.0, 4),
            gos in proptest::collection::vec(0.01f64..5.0, 4),
            w in (0.01f64..10.0, 0.01f64..10.0, 0.001f64..1.0, 0.001f64..1.0),
            k_max in 1usize..=15,
        ) {
            let s = sizes.len();
            let problem = CoOptProblem::new(
                sizes,
                upl[..s].to_vec(),
                gos[..s].to_vec(),
                weights(w.0, w.1, w.2, w.3),
                k_max,
            ).unwrap();
            let discrete = solve(&problem);
            let relaxed = solve_relaxed(&problem);
            prop_assert!(relaxed.objective <= discrete.objective * (1.0 + 1e-12) + 1e-12);
            // The mixing constraint is active at the continuous optimum.
            prop_assert!(relaxed.mixing_constraint_gap().abs() < 1e-9);
        }
    }
}
