//! Empirical estimators paired with the bound calculators.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::problems::MisspecifiedProblem;
use crate::rng::Stream;
use crate::sets::FeasibleSet;
use crate::solvers::Trajectory;

/// Normal quantile for two-sided 95% intervals.
pub const Z95: f64 = 1.96;

/// Default number of Monte-Carlo draws for sampled objectives.
pub const DEFAULT_MC_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleEstimate {
    pub k_grid: Vec<usize>,
    pub mean: Vec<f64>,
    pub half_width: Vec<f64>,
    pub n_seeds: usize,
}

impl EnsembleEstimate {
    pub fn upper(&self, i: usize) -> f64 {
        self.mean[i] + self.half_width[i]
    }
}

/// Sample mean and 95% normal-approximation half-width.
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, Z95 * var.sqrt() / (n as f64).sqrt())
}

/// Builds an estimate from `values[seed][grid index]`.
pub fn ensemble_from(k_grid: &[usize], values: &[Vec<f64>]) -> Result<EnsembleEstimate> {
    if values.len() < 2 {
        return Err(Error::invalid("an ensemble needs at least 2 seeds"));
    }
    let mut mean = Vec::with_capacity(k_grid.len());
    let mut half_width = Vec::with_capacity(k_grid.len());
    for g in 0..k_grid.len() {
        let col: Vec<f64> = values.iter().map(|v| v[g]).collect();
        let (m, h) = mean_ci(&col);
        mean.push(m);
        half_width.push(h);
    }
    Ok(EnsembleEstimate {
        k_grid: k_grid.to_vec(),
        mean,
        half_width,
        n_seeds: values.len(),
    })
}

/// Seed-mean squared errors `‖x^k − x*‖²` and `‖θ^k − θ*‖²` at each grid
/// point, where `k` counts updates.
pub fn ensemble_error(
    trajectories: &[Trajectory],
    reference_x: &[f64],
    reference_theta: &[f64],
    k_grid: &[usize],
) -> Result<(EnsembleEstimate, EnsembleEstimate)> {
    if trajectories.len() < 2 {
        return Err(Error::invalid("an ensemble needs at least 2 seeds"));
    }
    let mut xs = Vec::with_capacity(trajectories.len());
    let mut ts = Vec::with_capacity(trajectories.len());
    for t in trajectories {
        let mut xe = Vec::with_capacity(k_grid.len());
        let mut te = Vec::with_capacity(k_grid.len());
        for &k in k_grid {
            let r = t
                .at(k)
                .ok_or_else(|| Error::invalid(format!("iteration {k} is not recorded")))?;
            xe.push(linalg::dist_sq(&r.x, reference_x));
            te.push(linalg::dist_sq(&r.theta, reference_theta));
        }
        xs.push(xe);
        ts.push(te);
    }
    Ok((ensemble_from(k_grid, &xs)?, ensemble_from(k_grid, &ts)?))
}

/// `f(x; θ) − f(x*; θ*)`, exact when a closed form is enabled, otherwise a
/// common-random-numbers average over `n_mc` draws from `stream`.
pub fn gap(
    problem: &MisspecifiedProblem,
    x: &[f64],
    theta: &[f64],
    x_star: &[f64],
    theta_star: &[f64],
    n_mc: usize,
    stream: &mut Stream,
) -> Result<f64> {
    if !problem.has_objective() {
        return Err(Error::Unsupported("problem has no objective".into()));
    }
    if let (Some(a), Some(b)) = (
        problem.objective_true(x, theta),
        problem.objective_true(x_star, theta_star),
    ) {
        return Ok(a - b);
    }
    let mut acc = 0.0;
    for _ in 0..n_mc.max(1) {
        acc += crn_difference(problem, x, theta, x_star, theta_star, stream)?;
    }
    Ok(acc / n_mc.max(1) as f64)
}

/// One draw of `f(a; θa, ξ) − f(b; θb, ξ)` on a shared `ξ`.
fn crn_difference(
    problem: &MisspecifiedProblem,
    a: &[f64],
    ta: &[f64],
    b: &[f64],
    tb: &[f64],
    stream: &mut Stream,
) -> Result<f64> {
    let mut s2 = *stream;
    let fa = problem.sampled_objective(a, ta, stream)?;
    let fb = problem.sampled_objective(b, tb, &mut s2)?;
    Ok(fa - fb)
}

/// Expected objective value: closed form when enabled, else a Monte-Carlo average.
fn expected_objective(problem: &MisspecifiedProblem, x: &[f64], theta: &[f64], n_mc: usize, stream: &Stream) -> Result<f64> {
    if let Some(v) = problem.objective_true(x, theta) {
        return Ok(v);
    }
    let mut s = *stream;
    let mut acc = 0.0;
    for _ in 0..n_mc.max(1) {
        acc += problem.sampled_objective(x, theta, &mut s)?;
    }
    Ok(acc / n_mc.max(1) as f64)
}

/// Projection onto a solution set that has no closed form.
pub type Projector<'a> = Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>;

pub enum SolutionSet<'a> {
    Point(Vec<f64>),
    /// A face of the feasible set, described as a feasible set itself.
    Face(FeasibleSet),
    General(Projector<'a>),
}

/// Euclidean distance from `x` to the solution set.
pub fn dist_to_solution_set(x: &[f64], set: &SolutionSet<'_>) -> Result<f64> {
    match set {
        SolutionSet::Point(p) => {
            if p.len() != x.len() {
                return Err(Error::invalid("dimension mismatch"));
            }
            Ok(linalg::dist(x, p))
        }
        SolutionSet::Face(f) => Ok(linalg::dist(x, &f.project(x)?)),
        SolutionSet::General(proj) => Ok(linalg::dist(x, &proj(x))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretStep {
    pub r: f64,
    pub r_hat: f64,
    pub r_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretLedger {
    pub k: usize,
    /// Regret against the offline comparator `y*_K`.
    pub r_hat: f64,
    /// Misspecified regret against `f(x*; θ*)`.
    pub r: f64,
    /// Standard regret, evaluating every round at `θ*`.
    pub r_std: f64,
    pub per_step: Vec<RegretStep>,
}

impl RegretLedger {
    /// Ledger restricted to the first `k` rounds.
    pub fn prefix(&self, k: usize) -> RegretLedger {
        let steps = &self.per_step[..k.min(self.per_step.len())];
        RegretLedger {
            k: steps.len(),
            r: steps.iter().map(|s| s.r).sum(),
            r_hat: steps.iter().map(|s| s.r_hat).sum(),
            r_std: steps.iter().map(|s| s.r_std).sum(),
            per_step: steps.to_vec(),
        }
    }
}

/// The three regret totals over the rounds `x^1..x^K` (records `0..K`).
/// Every objective value is evaluated on the same Monte-Carlo draws.
pub fn empirical_regret(
    traj: &Trajectory,
    problem: &MisspecifiedProblem,
    y_star: &[f64],
    x_star: &[f64],
    theta_star: &[f64],
    n_mc: usize,
    stream: &mut Stream,
) -> Result<RegretLedger> {
    if !problem.has_objective() {
        return Err(Error::Unsupported("problem has no objective".into()));
    }
    if traj.stride != 1 {
        return Err(Error::invalid("regret needs an unthinned trajectory"));
    }
    let rounds = &traj.records[..traj.k];
    let base = *stream;
    let f_star = expected_objective(problem, x_star, theta_star, n_mc, &base)?;
    let mut per_step = Vec::with_capacity(rounds.len());
    for rec in rounds {
        let f_played = expected_objective(problem, &rec.x, &rec.theta, n_mc, &base)?;
        let f_y = expected_objective(problem, y_star, &rec.theta, n_mc, &base)?;
        let f_std = expected_objective(problem, &rec.x, theta_star, n_mc, &base)?;
        per_step.push(RegretStep {
            r: f_played - f_star,
            r_hat: f_played - f_y,
            r_std: f_std - f_star,
        });
    }
    stream.next_u64();
    Ok(RegretLedger {
        k: rounds.len(),
        r: per_step.iter().map(|s| s.r).sum(),
        r_hat: per_step.iter().map(|s| s.r_hat).sum(),
        r_std: per_step.iter().map(|s| s.r_std).sum(),
        per_step,
    })
}
