//! Coupled stochastic approximation schemes, iterate averaging and projected
//! online gradient descent.
//!
//! A run of `K` updates produces `K + 1` records. Record `r` holds the iterate
//! after `r` updates together with the steplengths applied to it, so the
//! record at index `t − 1` carries the iterate and steplength that the
//! 1-based averaging formulas call `x^t` and `γ_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problems::MisspecifiedProblem;
use crate::rng::{DrawCursor, Stream, COMP_NOISE};
use crate::sets::FeasibleSet;
use crate::steplengths::{PolicyKind, SteplengthPolicy};

/// Iterates whose norm exceeds this abort the run.
pub const DIVERGENCE_NORM: f64 = 1e12;
const START_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub gamma_x: f64,
    pub gamma_theta: f64,
    pub eps: f64,
    pub comp_sample_norm_sq: f64,
    pub learn_sample_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<IterateRecord>,
    pub seed: u64,
    pub policy: Option<SteplengthPolicy>,
    /// Number of updates performed.
    pub k: usize,
    /// Every `stride`-th record is kept, plus the final one.
    pub stride: usize,
}

impl Trajectory {
    pub fn last(&self) -> &IterateRecord {
        self.records.last().expect("trajectory always holds the initial record")
    }

    /// Record after `k` updates, if it was kept.
    pub fn at(&self, k: usize) -> Option<&IterateRecord> {
        if k > self.k {
            return None;
        }
        if k == self.k {
            return Some(self.last());
        }
        if !k.is_multiple_of(self.stride) {
            return None;
        }
        self.records.get(k / self.stride).filter(|r| r.k == k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Plain coupled update on gradients or maps.
    Plain,
    /// Adds `ε_k x^k` to the computational sample.
    Regularized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub stride: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { stride: 1 }
    }
}

fn check_start(set: &FeasibleSet, p: &[f64], what: &str) -> Result<()> {
    if !set.contains(p, START_TOL) {
        return Err(Error::invalid(format!("{what} is not feasible")));
    }
    Ok(())
}

fn check_finite(v: &[f64], k: usize, what: &str) -> Result<()> {
    let n = linalg::norm(v);
    if !n.is_finite() || n > DIVERGENCE_NORM {
        return Err(Error::NumericalDivergence {
            k,
            detail: format!("|{what}| = {n:e}"),
        });
    }
    Ok(())
}

/// Runs `K` coupled updates.
#[allow(clippy::too_many_arguments)]
pub fn run_coupled(
    problem: &MisspecifiedProblem,
    policy: &SteplengthPolicy,
    x0: &[f64],
    theta0: &[f64],
    k_max: usize,
    seed: u64,
    scheme: Scheme,
    opts: RunOptions,
) -> Result<Trajectory> {
    if opts.stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    policy.validate()?;
    check_start(&problem.x_set, x0, "x0")?;
    check_start(&problem.theta_set, theta0, "theta0")?;
    let c = &problem.constants;
    let mut x = problem.x_set.project(x0)?;
    let mut theta = problem.theta_set.project(theta0)?;
    let mut cursor = DrawCursor::new(seed);
    let mut records = Vec::with_capacity(k_max / opts.stride + 2);

    for r in 0..=k_max {
        let steps = policy.evaluate(r + 1, c)?;
        let keep = r % opts.stride == 0 || r == k_max;
        if r == k_max {
            records.push(IterateRecord {
                k: r,
                x: x.clone(),
                theta: theta.clone(),
                gamma_x: steps.gamma_x,
                gamma_theta: steps.gamma_theta,
                eps: steps.eps,
                comp_sample_norm_sq: 0.0,
                learn_sample_norm_sq: 0.0,
            });
            break;
        }
        let (mut cs, ls) = problem.sample_pair_unchecked(&x, &theta, &mut cursor)?;
        if scheme == Scheme::Regularized {
            linalg::axpy(steps.eps, &x, &mut cs);
        }
        if keep {
            records.push(IterateRecord {
                k: r,
                x: x.clone(),
                theta: theta.clone(),
                gamma_x: steps.gamma_x,
                gamma_theta: steps.gamma_theta,
                eps: steps.eps,
                comp_sample_norm_sq: linalg::norm_sq(&cs),
                learn_sample_norm_sq: linalg::norm_sq(&ls),
            });
        }
        let mut xs = x;
        linalg::axpy(-steps.gamma_x, &cs, &mut xs);
        let mut ts = theta;
        linalg::axpy(-steps.gamma_theta, &ls, &mut ts);
        check_finite(&xs, r + 1, "x")?;
        check_finite(&ts, r + 1, "theta")?;
        x = problem.x_set.project(&xs)?;
        theta = problem.theta_set.project(&ts)?;
    }

    Ok(Trajectory {
        records,
        seed,
        policy: Some(policy.clone()),
        k: k_max,
        stride: opts.stride,
    })
}

/// Coupled scheme for stochastic optimization, sampling gradients.
pub fn run_coupled_opt(
    problem: &MisspecifiedProblem,
    policy: &SteplengthPolicy,
    x0: &[f64],
    theta0: &[f64],
    k_max: usize,
    seed: u64,
) -> Result<Trajectory> {
    run_coupled(problem, policy, x0, theta0, k_max, seed, Scheme::Plain, RunOptions::default())
}

/// Coupled scheme for stochastic VIs, sampling maps.
pub fn run_coupled_vi(
    problem: &MisspecifiedProblem,
    policy: &SteplengthPolicy,
    x0: &[f64],
    theta0: &[f64],
    k_max: usize,
    seed: u64,
) -> Result<Trajectory> {
    run_coupled(problem, policy, x0, theta0, k_max, seed, Scheme::Plain, RunOptions::default())
}

/// Regularized coupled scheme for merely monotone VIs.
pub fn run_coupled_vi_reg(
    problem: &MisspecifiedProblem,
    policy: &SteplengthPolicy,
    x0: &[f64],
    theta0: &[f64],
    k_max: usize,
    seed: u64,
) -> Result<Trajectory> {
    if !matches!(policy.kind, PolicyKind::RegularizedPowerLaw { .. }) {
        return Err(Error::invalid("regularized scheme needs a policy with a regularization schedule"));
    }
    run_coupled(problem, policy, x0, theta0, k_max, seed, Scheme::Regularized, RunOptions::default())
}

/// `Σ_{t=i}^{k} v_t x^t` with `v_t ∝ γ_t`, using 1-based indices (`x^t` is
/// record `t − 1`).
pub fn weighted_average(traj: &Trajectory, i: usize, k: usize) -> Result<Vec<f64>> {
    if traj.stride != 1 {
        return Err(Error::invalid("averaging needs an unthinned trajectory"));
    }
    if i < 1 || i > k || k > traj.records.len() {
        return Err(Error::invalid(format!(
            "averaging window [{i}, {k}] outside [1, {}]",
            traj.records.len()
        )));
    }
    let window = &traj.records[i - 1..k];
    let total: f64 = window.iter().map(|r| r.gamma_x).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("averaging weights sum to zero"));
    }
    let mut out = vec![0.0; window[0].x.len()];
    for r in window {
        linalg::axpy(r.gamma_x / total, &r.x, &mut out);
    }
    Ok(out)
}

/// Projected online gradient with `η_t = t^{-1/2}`. `loss_grad(t, x, stream)`
/// returns the gradient of the round-`t` loss (1-based). The points played
/// in rounds `1..=T` are records `0..T`.
pub fn run_greedy_projection<G>(
    mut loss_grad: G,
    x_set: &FeasibleSet,
    x0: &[f64],
    t_max: usize,
    seed: u64,
) -> Result<Trajectory>
where
    G: FnMut(usize, &[f64], &mut Stream) -> Vec<f64>,
{
    check_start(x_set, x0, "x0")?;
    let mut x = x_set.project(x0)?;
    let mut records = Vec::with_capacity(t_max + 1);
    for t in 1..=t_max + 1 {
        let eta = (t as f64).powf(-0.5);
        if t == t_max + 1 {
            records.push(IterateRecord {
                k: t - 1,
                x: x.clone(),
                theta: vec![],
                gamma_x: eta,
                gamma_theta: 0.0,
                eps: 0.0,
                comp_sample_norm_sq: 0.0,
                learn_sample_norm_sq: 0.0,
            });
            break;
        }
        let mut s = Stream::at_draw(seed, COMP_NOISE, t as u64);
        let g = loss_grad(t, &x, &mut s);
        if g.len() != x.len() {
            return Err(Error::invalid("loss gradient has the wrong dimension"));
        }
        records.push(IterateRecord {
            k: t - 1,
            x: x.clone(),
            theta: vec![],
            gamma_x: eta,
            gamma_theta: 0.0,
            eps: 0.0,
            comp_sample_norm_sq: linalg::norm_sq(&g),
            learn_sample_norm_sq: 0.0,
        });
        let mut step = x;
        linalg::axpy(-eta, &g, &mut step);
        check_finite(&step, t, "x")?;
        x = x_set.project(&step)?;
    }
    Ok(Trajectory {
        records,
        seed,
        policy: None,
        k: t_max,
        stride: 1,
    })
}
