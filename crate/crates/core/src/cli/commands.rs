//! The `run`, `sweep` and `verify` commands.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{ExperimentConfig, WindowSpec};
use super::csvio::{self, SummaryRow, SweepRow, TraceRow, VerifyRow};
use crate::bounds::{self, LimsupSetting};
use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::{self, SolutionSet};
use crate::problems::MisspecifiedProblem;
use crate::reference::{self, DEFAULT_TOL};
use crate::rng::{Stream, MC_EVAL};
use crate::solvers::{run_coupled, weighted_average, RunOptions, Scheme, Trajectory};
use crate::steplengths::{PolicyKind, SteplengthPolicy, Window};

/// Ground truth for one configured instance.
#[derive(Debug, Clone)]
pub struct Reference {
    pub x_star: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub face: Option<crate::sets::FeasibleSet>,
}

impl Reference {
    pub fn compute(problem: &MisspecifiedProblem) -> Result<Self> {
        let theta_star = reference::solve_true_learning(problem, DEFAULT_TOL)?.point;
        let x_star = match &problem.solution_face {
            Some(face) => face.project(&vec![0.0; problem.comp_dim()])?,
            None => reference::solve_true_computational(problem, &theta_star, DEFAULT_TOL)?.point,
        };
        Ok(Reference {
            x_star,
            theta_star,
            face: problem.solution_face.clone(),
        })
    }

    pub fn solution_set(&self) -> SolutionSet<'static> {
        match &self.face {
            Some(f) => SolutionSet::Face(f.clone()),
            None => SolutionSet::Point(self.x_star.clone()),
        }
    }

    pub fn dist(&self, x: &[f64]) -> Result<f64> {
        metrics::dist_to_solution_set(x, &self.solution_set())
    }
}

/// `Π_X(0)` and `Π_Θ(0)` unless the config gives starting points.
pub fn start_points(cfg: &ExperimentConfig, problem: &MisspecifiedProblem) -> Result<(Vec<f64>, Vec<f64>)> {
    let x0 = match &cfg.x0 {
        Some(x) => x.clone(),
        None => problem.x_set.project(&vec![0.0; problem.comp_dim()])?,
    };
    let t0 = match &cfg.theta0 {
        Some(t) => t.clone(),
        None => problem.theta_set.project(&vec![0.0; problem.learn_dim()])?,
    };
    if x0.len() != problem.comp_dim() {
        return Err(Error::config("x0", "wrong dimension"));
    }
    if t0.len() != problem.learn_dim() {
        return Err(Error::config("theta0", "wrong dimension"));
    }
    Ok((x0, t0))
}

fn scheme_for(policy: &SteplengthPolicy) -> Scheme {
    match policy.kind {
        PolicyKind::RegularizedPowerLaw { .. } => Scheme::Regularized,
        _ => Scheme::Plain,
    }
}

fn pool(cfg: &ExperimentConfig) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        b = b.num_threads(w);
    }
    b.build().map_err(|e| Error::config("workers", e.to_string()))
}

/// Runs one seed with every record kept.
pub fn run_seed(
    problem: &MisspecifiedProblem,
    policy: &SteplengthPolicy,
    start: &(Vec<f64>, Vec<f64>),
    k: usize,
    seed: u64,
) -> Result<Trajectory> {
    run_coupled(problem, policy, &start.0, &start.1, k, seed, scheme_for(policy), RunOptions::default())
}

/// `f(x; θ) − f(x*; θ*)`, or `None` for problems without an objective.
fn gap_at(problem: &MisspecifiedProblem, reference: &Reference, x: &[f64], theta: &[f64], seed: u64) -> Result<Option<f64>> {
    if !problem.has_objective() {
        return Ok(None);
    }
    let mut s = Stream::new(seed, MC_EVAL);
    metrics::gap(problem, x, theta, &reference.x_star, &reference.theta_star, metrics::DEFAULT_MC_DRAWS, &mut s).map(Some)
}

/// Averaged point `x̃_{i,k}` paired with `θ^k`, both in 1-based indexing.
pub fn averaged_point(traj: &Trajectory, window: Window, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let i = window.start(k);
    let x = weighted_average(traj, i, k)?;
    Ok((x, traj.records[k - 1].theta.clone()))
}

fn trace_rows(problem: &MisspecifiedProblem, reference: &Reference, traj: &Trajectory) -> Result<Vec<TraceRow>> {
    traj.records
        .iter()
        .map(|r| {
            Ok(TraceRow {
                run_id: traj.seed,
                k: r.k,
                gamma_x: r.gamma_x,
                gamma_theta: r.gamma_theta,
                eps: r.eps,
                err_x_sq: linalg::dist_sq(&r.x, &reference.x_star),
                err_theta_sq: linalg::dist_sq(&r.theta, &reference.theta_star),
                gap: gap_at(problem, reference, &r.x, &r.theta, traj.seed)?,
                dist_xstar: Some(reference.dist(&r.x)?),
            })
        })
        .collect()
}

fn summary_rows(
    cfg: &ExperimentConfig,
    problem: &MisspecifiedProblem,
    reference: &Reference,
    traj: &Trajectory,
    grid: &[usize],
) -> Result<Vec<SummaryRow>> {
    let xn = 1.0 + linalg::norm(&reference.x_star);
    let tn = 1.0 + linalg::norm(&reference.theta_star);
    let windows: Vec<Option<WindowSpec>> = if cfg.windows.is_empty() {
        vec![None]
    } else {
        cfg.windows.iter().copied().map(Some).collect()
    };
    let mut rows = Vec::new();
    for &k in grid {
        let rec = traj.at(k).ok_or_else(|| Error::invalid(format!("iteration {k} not recorded")))?;
        let ex = linalg::dist_sq(&rec.x, &reference.x_star);
        let et = linalg::dist_sq(&rec.theta, &reference.theta_star);
        for w in &windows {
            let (avg_gap, avg_dist) = match w {
                Some(w) if *w == WindowSpec::Full || k % 2 == 0 => {
                    let (xa, ta) = averaged_point(traj, (*w).into(), k)?;
                    (gap_at(problem, reference, &xa, &ta, traj.seed)?, Some(reference.dist(&xa)?))
                }
                _ => (None, None),
            };
            rows.push(SummaryRow {
                seed: traj.seed,
                k,
                window: w.map_or("none", |w| w.label()).to_string(),
                err_x_sq: Some(ex),
                err_theta_sq: Some(et),
                norm_err_x: Some(ex.sqrt() / xn),
                norm_err_theta: Some(et.sqrt() / tn),
                avg_gap,
                avg_dist,
                status: "ok".into(),
            });
        }
    }
    Ok(rows)
}

fn failed_row(seed: u64, k: usize, err: &Error) -> SummaryRow {
    SummaryRow {
        seed,
        k,
        window: "none".into(),
        err_x_sq: None,
        err_theta_sq: None,
        norm_err_x: None,
        norm_err_theta: None,
        avg_gap: None,
        avg_dist: None,
        status: format!("failed: {err}"),
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub traces: Vec<PathBuf>,
    pub summary: PathBuf,
    pub failed_seeds: Vec<u64>,
}

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))
}

/// Runs every seed and writes one trace per seed plus `summary.csv`.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let start = start_points(cfg, &problem)?;
    let reference = Reference::compute(&problem)?;
    prepare_out(&cfg.out_dir)?;
    let grid = cfg.grid();
    let seeds: Vec<u64> = (0..cfg.n_seeds as u64).map(|i| cfg.base_seed.wrapping_add(i)).collect();
    type SeedRows = Result<(Vec<TraceRow>, Vec<SummaryRow>)>;
    let results: Vec<(u64, SeedRows)> = pool(cfg)?.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let out = run_seed(&problem, &cfg.policy, &start, cfg.k, seed).and_then(|t| {
                    Ok((trace_rows(&problem, &reference, &t)?, summary_rows(cfg, &problem, &reference, &t, &grid)?))
                });
                (seed, out)
            })
            .collect()
    });
    let mut traces = Vec::new();
    let mut summary = Vec::new();
    let mut failed = Vec::new();
    for (seed, res) in results {
        let path = cfg.out_dir.join(format!("trace_seed{seed}.csv"));
        match res {
            Ok((t, s)) => {
                csvio::write_trace(&path, &t)?;
                summary.extend(s);
            }
            Err(e) => {
                csvio::write_trace(&path, &[])?;
                summary.push(failed_row(seed, cfg.k, &e));
                failed.push(seed);
            }
        }
        traces.push(path);
    }
    let summary_path = cfg.out_dir.join("summary.csv");
    csvio::write_rows(&summary_path, &summary)?;
    Ok(RunOutcome {
        traces,
        summary: summary_path,
        failed_seeds: failed,
    })
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub entries: usize,
    pub path: PathBuf,
}

/// Runs the cross-product of `sweep.policies × sweep.k × seeds` into one
/// long-format CSV.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let spec = cfg.sweep.as_ref().ok_or_else(|| Error::config("sweep", "sweep mode needs a sweep section"))?;
    if spec.k.is_empty() {
        return Err(Error::config("sweep.k", "empty grid"));
    }
    if spec.policies.is_empty() {
        return Err(Error::config("sweep.policies", "empty grid"));
    }
    if spec.k.contains(&0) {
        return Err(Error::config("sweep.k", "entries must be >= 1"));
    }
    let problem = cfg.build_problem()?;
    let start = start_points(cfg, &problem)?;
    let reference = Reference::compute(&problem)?;
    prepare_out(&cfg.out_dir)?;
    let mut jobs = Vec::new();
    for (pi, _) in spec.policies.iter().enumerate() {
        for &k in &spec.k {
            for s in 0..cfg.n_seeds as u64 {
                jobs.push((pi, k, cfg.base_seed.wrapping_add(s)));
            }
        }
    }
    let rows: Vec<Vec<SweepRow>> = pool(cfg)?.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(entry, &(pi, k, seed))| {
                let policy = &spec.policies[pi];
                let grid: Vec<usize> = {
                    let g: Vec<usize> = cfg.k_grid.iter().copied().filter(|&g| g <= k).collect();
                    if g.is_empty() {
                        vec![k]
                    } else {
                        g
                    }
                };
                let summary = run_seed(&problem, policy, &start, k, seed)
                    .and_then(|t| summary_rows(cfg, &problem, &reference, &t, &grid))
                    .unwrap_or_else(|e| vec![failed_row(seed, k, &e)]);
                summary
                    .into_iter()
                    .map(|s| SweepRow::new(entry, pi, k, s))
                    .collect()
            })
            .collect()
    });
    let path = cfg.out_dir.join("sweep.csv");
    csvio::write_rows(&path, &rows.concat())?;
    Ok(SweepOutcome { entries: jobs.len(), path })
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub rows: Vec<VerifyRow>,
    pub notes: Vec<String>,
}

impl VerifyReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!(
                "{:<28} k={:<7} empirical={:.6e} ±{:.2e} bound={:.6e} {}{}\n",
                r.claim,
                r.k,
                r.empirical,
                r.half_width,
                r.bound,
                if r.pass { "PASS" } else { "FAIL" },
                if r.vacuous { " (vacuous)" } else { "" }
            ));
        }
        for n in &self.notes {
            out.push_str(n);
            out.push('\n');
        }
        let fails = self.rows.iter().filter(|r| !r.pass).count();
        out.push_str(&format!("{} claims, {} failed\n", self.rows.len(), fails));
        out
    }
}

fn row(claim: &str, k: usize, values: &[f64], bound: Result<f64>, vacuous_above: f64, abs: bool) -> VerifyRow {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let (mut mean, hw) = if finite.len() == values.len() && !values.is_empty() {
        metrics::mean_ci(values)
    } else {
        (f64::NAN, f64::NAN)
    };
    if abs {
        mean = mean.abs();
    }
    // a single seed has no spread estimate
    let hw = if values.len() == 1 { 0.0 } else { hw };
    let upper = mean + hw;
    let (bound, ok) = match bound {
        Ok(b) => (b, true),
        Err(_) => (f64::NAN, false),
    };
    VerifyRow {
        claim: claim.to_string(),
        k,
        empirical: mean,
        half_width: hw,
        upper,
        bound,
        pass: ok && upper <= bound,
        vacuous: ok && bound > vacuous_above,
    }
}

/// Constant `γ_x` and the `λ_θ` of `γ_θ = λ_θ/k`, when the policy has that shape.
fn averaging_steps(policy: &SteplengthPolicy) -> Option<(f64, f64)> {
    match policy.kind {
        PolicyKind::PowerLaw { c_x, a, c_theta, b, .. } if a == 0.0 && b == 1.0 => Some((c_x, c_theta)),
        _ => None,
    }
}

/// Evaluates every claim that applies to the configured problem and policy
/// and writes `verify.csv` and `verify.txt`.
pub fn cmd_verify(cfg: &ExperimentConfig) -> Result<VerifyReport> {
    cfg.validate()?;
    let problem = cfg.build_problem()?;
    let start = start_points(cfg, &problem)?;
    let reference = Reference::compute(&problem)?;
    let c = problem.constants.clone().with_geometry(&problem.x_set, &reference.x_star, &start.0)?;
    prepare_out(&cfg.out_dir)?;
    let grid = cfg.grid();
    let seeds: Vec<u64> = (0..cfg.n_seeds as u64).map(|i| cfg.base_seed.wrapping_add(i)).collect();
    let diam = problem.x_set.max_distance_from(&reference.x_star).unwrap_or(f64::INFINITY);
    let e1_x = linalg::dist_sq(&start.0, &reference.x_star);
    let e1_t = linalg::dist_sq(&start.1, &reference.theta_star);
    let mut rows = Vec::new();
    let mut notes = Vec::new();

    let pool = pool(cfg)?;
    let runs: Vec<Result<Trajectory>> =
        pool.install(|| seeds.par_iter().map(|&s| run_seed(&problem, &cfg.policy, &start, cfg.k, s)).collect());
    let failures = runs.iter().filter(|r| r.is_err()).count();
    if failures > 0 {
        notes.push(format!("{failures} of {} seeds failed; their claims fail", runs.len()));
    }
    let per_seed = |f: &dyn Fn(&Trajectory) -> Result<f64>| -> Vec<f64> {
        runs.iter()
            .map(|r| r.as_ref().ok().and_then(|t| f(t).ok()).unwrap_or(f64::NAN))
            .collect()
    };

    if let PolicyKind::CoupledStrong { lambda_x } = cfg.policy.kind {
        let lambda_t = lambda_x * c.l_theta * c.l_theta / (c.mu_x * c.mu_theta);
        let q = bounds::rate_constants(lambda_x, lambda_t, &c, e1_x, e1_t);
        for &k in &grid {
            let ex = per_seed(&|t| Ok(linalg::dist_sq(&t.at(k).unwrap().x, &reference.x_star)));
            let et = per_seed(&|t| Ok(linalg::dist_sq(&t.at(k).unwrap().theta, &reference.theta_star)));
            let kf = k as f64;
            rows.push(row("strong_rate_x", k, &ex, q.clone().map(|q| q.q_x / kf), diam * diam, false));
            rows.push(row("strong_rate_theta", k, &et, q.clone().map(|q| q.q_theta / kf), f64::INFINITY, false));
        }
    }

    if let PolicyKind::Constant { gamma_x, gamma_theta } = cfg.policy.kind {
        let tau = cfg.verify.tau;
        let has_obj = problem.has_objective();
        let setting = match (has_obj, c.mu_x > 0.0, c.alpha_sharp.is_some()) {
            (true, true, _) => LimsupSetting::OptStrong,
            (true, false, _) => LimsupSetting::OptConvex,
            (false, true, _) => LimsupSetting::ViStrong,
            (false, false, true) => LimsupSetting::ViSharp,
            (false, false, false) => {
                notes.push("no constant-step bound applies to this problem".into());
                LimsupSetting::ViSharp
            }
        };
        let bound = bounds::constant_step_limsup(setting, gamma_x, gamma_theta, tau, &c);
        let lo = cfg.k / 2;
        let metric = |t: &Trajectory, rec: usize| -> Result<f64> {
            let r = &t.records[rec];
            match setting {
                LimsupSetting::OptStrong | LimsupSetting::ViStrong => Ok(0.5 * linalg::dist_sq(&r.x, &reference.x_star)),
                LimsupSetting::OptConvex => Ok(gap_at(&problem, &reference, &r.x, &r.theta, t.seed)?.unwrap_or(f64::NAN)),
                LimsupSetting::ViSharp => reference.dist(&r.x),
            }
        };
        let vals = per_seed(&|t| {
            let mut acc = 0.0;
            for rec in lo..=cfg.k {
                acc += metric(t, rec)?;
            }
            Ok(acc / (cfg.k - lo + 1) as f64)
        });
        let name = format!("limsup_{setting:?}").to_lowercase();
        let vac = if setting == LimsupSetting::ViSharp { diam } else { f64::INFINITY };
        rows.push(row(&name, cfg.k, &vals, bound, vac, setting == LimsupSetting::OptConvex));
    }

    if let Some((gamma_x, lambda_t)) = averaging_steps(&cfg.policy) {
        let qt = bounds::q_theta(lambda_t, c.mu_theta, c.m_theta_sq, e1_t);
        for &w in &cfg.windows {
            let window: Window = w.into();
            for &k in &grid {
                if k < 2 || (w == WindowSpec::TailHalf && k % 2 == 1) {
                    continue;
                }
                let i = window.start(k);
                let d_theta = if problem.has_objective() { c.d_theta } else { 0.0 };
                let bound = qt.clone().and_then(|q| {
                    bounds::averaged_gap_bound_at_gamma(i, k, gamma_x, c.d_x, c.l_theta, q, c.m_sq, c.m_x_sq, d_theta)
                });
                if problem.has_objective() {
                    let vals = per_seed(&|t| {
                        let (xa, ta) = averaged_point(t, window, k)?;
                        Ok(gap_at(&problem, &reference, &xa, &ta, t.seed)?.unwrap_or(f64::NAN))
                    });
                    rows.push(row(&format!("averaged_gap_{}", w.label()), k, &vals, bound, f64::INFINITY, true));
                } else if let Some(alpha) = c.alpha_sharp {
                    let vals = per_seed(&|t| Ok(alpha * reference.dist(&averaged_point(t, window, k)?.0)?));
                    rows.push(row(&format!("sharp_dist_{}", w.label()), k, &vals, bound, alpha * diam, false));
                }
            }
        }
    }

    for &alpha in &cfg.verify.regret_alphas {
        regret_rows(cfg, &problem, &reference, &c, &start, alpha, &grid, &mut rows, &mut notes)?;
    }

    if rows.is_empty() {
        notes.push("no claims apply to this configuration".into());
    }
    let report = VerifyReport { rows, notes };
    csvio::write_rows(&cfg.out_dir.join("verify.csv"), &report.rows)?;
    fs::write(cfg.out_dir.join("verify.txt"), report.text())?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn regret_rows(
    cfg: &ExperimentConfig,
    problem: &MisspecifiedProblem,
    reference: &Reference,
    c: &crate::problems::RateConstants,
    start: &(Vec<f64>, Vec<f64>),
    alpha: f64,
    grid: &[usize],
    rows: &mut Vec<VerifyRow>,
    notes: &mut Vec<String>,
) -> Result<()> {
    if !problem.has_objective() {
        notes.push("regret claims need an objective".into());
        return Ok(());
    }
    let v = &cfg.verify;
    let policy = SteplengthPolicy::power_law(1.0, alpha, v.regret_c_theta, 1.0, 0.5)?;
    let e1_t = linalg::dist_sq(&start.1, &reference.theta_star);
    let qt = bounds::q_theta(v.regret_c_theta, c.mu_theta, c.m_theta_sq, e1_t);
    let z_norm = (linalg::norm_sq(&reference.x_star) + linalg::norm_sq(&reference.theta_star)).sqrt();
    let seeds: Vec<u64> = (0..cfg.n_seeds as u64).map(|i| cfg.base_seed.wrapping_add(i)).collect();
    let ledgers: Vec<Result<crate::metrics::RegretLedger>> = seeds
        .par_iter()
        .map(|&seed| {
            let t = run_seed(problem, &policy, start, cfg.k, seed)?;
            let thetas: Vec<Vec<f64>> = t.records[..cfg.k].iter().map(|r| r.theta.clone()).collect();
            let y = reference::solve_offline_online(problem, &thetas, DEFAULT_TOL)?.point;
            let mut s = Stream::new(seed, MC_EVAL);
            metrics::empirical_regret(&t, problem, &y, &reference.x_star, &reference.theta_star, v.n_mc, &mut s)
        })
        .collect();
    let name = format!("regret_alpha_{alpha}");
    for &k in grid {
        let vals: Vec<f64> = ledgers
            .iter()
            .map(|l| l.as_ref().map_or(f64::NAN, |l| l.prefix(k).r / k as f64))
            .collect();
        let bound = qt
            .clone()
            .and_then(|q| bounds::regret_bound(k, alpha, v.regret_beta, c.m_x_sq, c.m_sq, c.d_theta, q, c.l_theta));
        rows.push(row(&name, k, &vals, bound, f64::INFINITY, false));
        if z_norm > 0.0 {
            let (m, _) = metrics::mean_ci(&vals);
            notes.push(format!("{name} k={k}: R_K/(K|z*|) = {:.6e}", m / z_norm));
        }
    }
    Ok(())
}
