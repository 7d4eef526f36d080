//! Acceptance suite. Each test prints one line `criterion N: PASS|FAIL ...`
//! straight to stderr so the line survives output capture.

use std::io::Write;
use std::time::Instant;

use coupled_sa::bounds::{self, LimsupSetting};
use coupled_sa::cli::commands::Reference;
use coupled_sa::cli::selftest;
use coupled_sa::linalg;
use coupled_sa::metrics::{self, mean_ci, SolutionSet};
use coupled_sa::problems::{
    make_affine_vi, make_convex_quadratic, make_dispatch, make_quadratic_with, make_sharp_lp_vi, make_skew_vi,
    DispatchInstance, MisspecifiedProblem, RateConstants,
};
use coupled_sa::reference::{self, DEFAULT_TOL};
use coupled_sa::rng::{Stream, MC_EVAL};
use coupled_sa::sets::FeasibleSet;
use coupled_sa::solvers::{run_coupled, run_coupled_opt, run_greedy_projection, weighted_average, RunOptions, Scheme, Trajectory};
use coupled_sa::steplengths::{optimal_constant_gamma, validate_a2_3, SteplengthPolicy, Window};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

fn report(n: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn square(n: f64) -> FeasibleSet {
    FeasibleSet::cube(2, -n, n).unwrap()
}

fn seeds(n: u64) -> Vec<u64> {
    (0..n).collect()
}

/// Seed-mean and 95% upper edge.
fn upper(values: &[f64]) -> (f64, f64) {
    let (m, h) = mean_ci(values);
    (m, m + h)
}

fn strong_quadratic(noise: f64) -> MisspecifiedProblem {
    make_quadratic_with(
        DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])),
        DMatrix::identity(2, 2),
        vec![1.0, 2.0],
        noise,
        square(5.0),
        square(5.0),
    )
    .unwrap()
}

const GRID: [usize; 4] = [10, 100, 1_000, 10_000];

/// Seed-mean errors against `Q/k` at every grid point; returns the failures.
fn strong_rate_failures(problem: &MisspecifiedProblem, lambda_x: f64, n_seeds: u64, tag: &str) -> (Vec<String>, Vec<Trajectory>) {
    let reference = Reference::compute(problem).unwrap();
    let x0 = vec![0.0; 2];
    let t0 = vec![0.0; 2];
    let c = problem.constants.clone().with_geometry(&problem.x_set, &reference.x_star, &x0).unwrap();
    let policy = SteplengthPolicy::coupled_strong(lambda_x).unwrap();
    let lambda_t = lambda_x * c.l_theta * c.l_theta / (c.mu_x * c.mu_theta);
    let q = bounds::rate_constants(
        lambda_x,
        lambda_t,
        &c,
        linalg::dist_sq(&x0, &reference.x_star),
        linalg::dist_sq(&t0, &reference.theta_star),
    )
    .unwrap();
    let trajs: Vec<Trajectory> = seeds(n_seeds)
        .par_iter()
        .map(|&s| run_coupled_opt(problem, &policy, &x0, &t0, 10_000, s).unwrap())
        .collect();
    let (ex, et) = metrics::ensemble_error(&trajs, &reference.x_star, &reference.theta_star, &GRID).unwrap();
    let mut fails = Vec::new();
    for (g, &k) in GRID.iter().enumerate() {
        let bx = q.q_x / k as f64;
        let bt = q.q_theta / k as f64;
        if ex.upper(g) > bx {
            fails.push(format!("{tag} x k={k}: {:.3e} > {bx:.3e}", ex.upper(g)));
        }
        if et.upper(g) > bt {
            fails.push(format!("{tag} theta k={k}: {:.3e} > {bt:.3e}", et.upper(g)));
        }
    }
    (fails, trajs)
}

#[test]
fn criterion_1_strongly_convex_rate() {
    let t = Instant::now();
    let p = strong_quadratic(1e-3);
    let (fails, _) = strong_rate_failures(&p, 1.2, 100, "quadratic");
    let secs = t.elapsed().as_secs_f64();
    let pass = fails.is_empty() && secs <= 60.0;
    report("1", pass, &format!("100 seeds, k in {GRID:?}, {secs:.1}s {}", fails.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_2_almost_sure_proxy() {
    let p = strong_quadratic(1e-3);
    let reference = Reference::compute(&p).unwrap();
    let (_, trajs) = strong_rate_failures(&p, 1.2, 100, "quadratic");
    let err = |t: &Trajectory, k: usize| linalg::dist(&t.at(k).unwrap().x, &reference.x_star);
    let median = |k: usize| {
        let mut v: Vec<f64> = trajs.iter().map(|t| err(t, k)).collect();
        v.sort_by(f64::total_cmp);
        0.5 * (v[49] + v[50])
    };
    let (m2, m4) = (median(100), median(10_000));
    let monotone = trajs
        .iter()
        .filter(|t| GRID.windows(2).all(|w| err(t, w[1]) < err(t, w[0])))
        .count();
    let pass = m4 <= 0.1 * m2 && monotone >= 95;
    report(
        "2",
        pass,
        &format!("median |x-x*| {m2:.3e} (k=1e2) -> {m4:.3e} (k=1e4), monotone seeds {monotone}/100"),
    );
    assert!(pass);
}

fn convex_quadratic(noise: f64) -> MisspecifiedProblem {
    make_convex_quadratic(&[0.0, 1.0], vec![0.5, 0.5], noise, square(1.0), square(1.0)).unwrap()
}

#[test]
fn criterion_3_averaging_rates() {
    let p = convex_quadratic(0.1);
    let reference = Reference::compute(&p).unwrap();
    let x0 = vec![0.0; 2];
    let t0 = vec![0.0; 2];
    let c = p.constants.clone().with_geometry(&p.x_set, &reference.x_star, &x0).unwrap();
    let lambda_t = 1.0;
    let qt = bounds::q_theta(lambda_t, c.mu_theta, c.m_theta_sq, linalg::dist_sq(&t0, &reference.theta_star)).unwrap();
    let f_star = p.objective_true(&reference.x_star, &reference.theta_star).unwrap();
    let mut lines = Vec::new();
    let mut pass = true;
    let mut gaps = std::collections::HashMap::new();
    for k in [100usize, 1_000, 10_000] {
        for window in [Window::Full, Window::TailHalf] {
            let gamma = optimal_constant_gamma(k, window, c.d_x, c.l_theta, qt, c.m_sq, c.m_x_sq).unwrap();
            let policy = SteplengthPolicy::power_law(gamma, 0.0, lambda_t, 1.0, 0.5).unwrap();
            let i = window.start(k);
            let vals: Vec<f64> = seeds(30)
                .par_iter()
                .map(|&s| {
                    let t = run_coupled_opt(&p, &policy, &x0, &t0, k, s).unwrap();
                    let xa = weighted_average(&t, i, k).unwrap();
                    p.objective_true(&xa, &t.records[k - 1].theta).unwrap() - f_star
                })
                .collect();
            let (m, h) = mean_ci(&vals);
            let emp = m.abs() + h;
            let bound = bounds::averaged_gap_bound(i, k, window, c.d_x, c.l_theta, qt, c.m_sq, c.m_x_sq, c.d_theta).unwrap();
            pass &= emp <= bound;
            gaps.insert((k, window == Window::Full), m.abs());
            lines.push(format!("{window:?} K={k}: {emp:.3e} <= {bound:.3e}"));
        }
    }
    let tail_vs_full = gaps[&(10_000, false)] <= 1.5 * gaps[&(10_000, true)];
    pass &= tail_vs_full;
    lines.push(format!(
        "tail {:.3e} vs full {:.3e} at K=1e4",
        gaps[&(10_000, false)],
        gaps[&(10_000, true)]
    ));
    report("3", pass, &lines.join("; "));
    assert!(pass);
}

/// Tail average over `k ∈ [K/2, K]` of a per-record metric, one value per seed.
fn tail_average<F>(p: &MisspecifiedProblem, policy: &SteplengthPolicy, k: usize, n: u64, metric: F) -> Vec<f64>
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    seeds(n)
        .par_iter()
        .map(|&s| {
            let t = run_coupled_opt(p, policy, &[0.0, 0.0], &[0.0, 0.0], k, s).unwrap();
            let tail = &t.records[k / 2..=k];
            tail.iter().map(|r| metric(&r.x, &r.theta)).sum::<f64>() / tail.len() as f64
        })
        .collect()
}

#[test]
fn criterion_4_constant_step_limsup() {
    let policy = SteplengthPolicy::constant(0.01, 0.01).unwrap();
    let k = 10_000;

    let strong = strong_quadratic(0.5);
    let rs = Reference::compute(&strong).unwrap();
    let cs = strong.constants.clone().with_geometry(&strong.x_set, &rs.x_star, &[0.0, 0.0]).unwrap();
    let vals = tail_average(&strong, &policy, k, 30, |x, _| 0.5 * linalg::dist_sq(x, &rs.x_star));
    let (_, emp_s) = upper(&vals);
    let bound_s = bounds::constant_step_limsup(LimsupSetting::OptStrong, 0.01, 0.01, 0.5, &cs).unwrap();

    let convex = convex_quadratic(0.5);
    let rc = Reference::compute(&convex).unwrap();
    let cc = convex.constants.clone().with_geometry(&convex.x_set, &rc.x_star, &[0.0, 0.0]).unwrap();
    let f_star = convex.objective_true(&rc.x_star, &rc.theta_star).unwrap();
    let vals = tail_average(&convex, &policy, k, 30, |x, t| convex.objective_true(x, t).unwrap() - f_star);
    let (m, h) = mean_ci(&vals);
    let emp_c = m.abs() + h;
    let bound_c = bounds::constant_step_limsup(LimsupSetting::OptConvex, 0.01, 0.01, 0.5, &cc).unwrap();

    let pass = emp_s <= bound_s && emp_c <= bound_c;
    report(
        "4",
        pass,
        &format!("strong {emp_s:.3e} <= {bound_s:.3e}; convex {emp_c:.3e} <= {bound_c:.3e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_regret() {
    let p = make_quadratic_with(
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        vec![1.0, 2.0],
        0.5,
        square(5.0),
        square(5.0),
    )
    .unwrap()
    .centered()
    .unwrap();
    let reference = Reference::compute(&p).unwrap();
    let x0 = vec![0.0; 2];
    let t0 = vec![0.0; 2];
    let c: RateConstants = p.constants.clone().with_geometry(&p.x_set, &reference.x_star, &x0).unwrap();
    let lambda_t = 40.0;
    let beta = 0.5;
    let qt = bounds::q_theta(lambda_t, c.mu_theta, c.m_theta_sq, linalg::dist_sq(&t0, &reference.theta_star)).unwrap();
    let k = 10_000;
    let mut pass = true;
    let mut lines = Vec::new();
    for alpha in [0.5, 0.7, 0.9] {
        let policy = SteplengthPolicy::power_law(1.0, alpha, lambda_t, 1.0, 0.5).unwrap();
        let ledgers: Vec<metrics::RegretLedger> = seeds(30)
            .par_iter()
            .map(|&s| {
                let t = run_coupled_opt(&p, &policy, &x0, &t0, k, s).unwrap();
                let thetas: Vec<Vec<f64>> = t.records[..k].iter().map(|r| r.theta.clone()).collect();
                let y = reference::solve_offline_online(&p, &thetas, DEFAULT_TOL).unwrap().point;
                let mut st = Stream::new(s, MC_EVAL);
                metrics::empirical_regret(&t, &p, &y, &reference.x_star, &reference.theta_star, 1, &mut st).unwrap()
            })
            .collect();
        let per_k = |kk: usize| -> Vec<f64> { ledgers.iter().map(|l| l.prefix(kk).r / kk as f64).collect() };
        let (m4, u4) = upper(&per_k(k));
        let (m2, _) = upper(&per_k(100));
        let bound = bounds::regret_bound(k, alpha, beta, c.m_x_sq, c.m_sq, c.d_theta, qt, c.l_theta).unwrap();
        let r_hat = mean_ci(&ledgers.iter().map(|l| l.r_hat / k as f64).collect::<Vec<_>>()).0;
        let ok = u4 <= bound && m4 <= 0.5 * m2;
        pass &= ok;
        lines.push(format!(
            "alpha={alpha}: R/K {m4:.3e} (upper {u4:.3e}) <= {bound:.3e}, R/K at 1e2 {m2:.3e}, Rhat/K {r_hat:.3e}"
        ));
    }
    report("5", pass, &lines.join("; "));
    assert!(pass);
}

#[test]
fn criterion_6_greedy_projection() {
    let set = FeasibleSet::cube(2, 0.0, 1.0).unwrap();
    let mut pass = true;
    let mut lines = Vec::new();
    for t_max in [100usize, 10_000] {
        // targets a_t in [-1, 2]²; the loss is ½‖x − a_t‖²
        let mut s = Stream::new(99, 0);
        let targets: Vec<Vec<f64>> = (0..t_max)
            .map(|_| vec![s.uniform(-1.0, 2.0).unwrap(), s.uniform(-1.0, 2.0).unwrap()])
            .collect();
        let traj = run_greedy_projection(
            |t, x, _| linalg::sub(x, &targets[t - 1]),
            &set,
            &[0.0, 0.0],
            t_max,
            0,
        )
        .unwrap();
        let loss = |x: &[f64], a: &[f64]| 0.5 * linalg::dist_sq(x, a);
        let played: f64 = (0..t_max).map(|t| loss(&traj.records[t].x, &targets[t])).sum();
        let mut mean = vec![0.0; 2];
        for a in &targets {
            linalg::axpy(1.0 / t_max as f64, a, &mut mean);
        }
        let best = set.project(&mean).unwrap();
        let comparator: f64 = targets.iter().map(|a| loss(&best, a)).sum();
        let regret = played - comparator;
        let diameter = 2f64.sqrt();
        let grad_bound = (2.0f64 * 4.0).sqrt();
        let bound = bounds::greedy_projection_regret_bound(t_max, diameter, grad_bound);
        pass &= regret <= bound;
        lines.push(format!("T={t_max}: regret {regret:.4} <= {bound:.4}"));
    }
    report("6", pass, &lines.join("; "));
    assert!(pass);
}

#[test]
fn criterion_7a_strongly_monotone_vi() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 2.0]);
    let p = make_affine_vi(a, -DMatrix::identity(2, 2), vec![1.0, 2.0], 1e-3, square(5.0), square(5.0)).unwrap();
    let (fails, _) = strong_rate_failures(&p, 1.2, 100, "affine VI");
    let pass = fails.is_empty();
    report("7a", pass, &format!("100 seeds, k in {GRID:?} {}", fails.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_7b_regularization_on_skew_vi() {
    let p = make_skew_vi(2, 1.0, vec![0.0, 0.0], 0.1, square(1.0), square(1.0)).unwrap();
    let reg = SteplengthPolicy::regularized(1.0, 0.9, 1.0, 0.6, 0.8, 1.0, 0.1).unwrap();
    let plain = SteplengthPolicy::power_law(1.0, 0.9, 1.0, 0.6, 0.8).unwrap();
    let report_a23 = validate_a2_3(&reg, 100_000).unwrap();
    let k = 100_000;
    let x0 = [0.5, 0.5];
    let t0 = [0.0, 0.0];
    let run = |policy: &SteplengthPolicy, scheme: Scheme| -> Vec<f64> {
        seeds(100)
            .par_iter()
            .map(|&s| {
                let t = run_coupled(&p, policy, &x0, &t0, k, s, scheme, RunOptions { stride: 10_000 }).unwrap();
                metrics::dist_to_solution_set(&t.last().x, &SolutionSet::Point(vec![0.0, 0.0])).unwrap()
            })
            .collect()
    };
    let d_reg = run(&reg, Scheme::Regularized);
    let d_plain = run(&plain, Scheme::Plain);
    let reg_hits = d_reg.iter().filter(|d| **d <= 1e-2).count();
    let plain_misses = d_plain.iter().filter(|d| **d > 1e-2).count();
    let pass = reg_hits >= 90 && plain_misses >= 50;
    let clauses: Vec<String> = report_a23
        .clauses
        .iter()
        .map(|c| format!("{}={}", c.name, if c.pass { "ok" } else { "no" }))
        .collect();
    report(
        "7b",
        pass,
        &format!(
            "regularized within 1e-2: {reg_hits}/100, plain outside: {plain_misses}/100 (schedule clauses {})",
            clauses.join(",")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7c_sharp_lp_vi() {
    let p = make_sharp_lp_vi(DMatrix::identity(2, 2), vec![1.0, 0.0], 0.1, FeasibleSet::cube(2, 0.0, 1.0).unwrap(), square(2.0))
        .unwrap();
    let face = p.solution_face.clone().unwrap();
    let alpha = p.constants.alpha_sharp.unwrap();
    let x0 = vec![1.0, 1.0];
    let t0 = vec![0.0, 0.0];
    let theta_star = reference::solve_true_learning(&p, DEFAULT_TOL).unwrap().point;
    let anchor = face.project(&x0).unwrap();
    let c = p.constants.clone().with_geometry(&p.x_set, &anchor, &x0).unwrap();
    let lambda_t = 1.0;
    let qt = bounds::q_theta(lambda_t, c.mu_theta, c.m_theta_sq, linalg::dist_sq(&t0, &theta_star)).unwrap();
    let mut pass = true;
    let mut lines = Vec::new();
    for k in [100usize, 10_000] {
        let gamma = optimal_constant_gamma(k, Window::Full, c.d_x, c.l_theta, qt, c.m_sq, c.m_x_sq).unwrap();
        let policy = SteplengthPolicy::power_law(gamma, 0.0, lambda_t, 1.0, 0.5).unwrap();
        let vals: Vec<f64> = seeds(30)
            .par_iter()
            .map(|&s| {
                let t = run_coupled(&p, &policy, &x0, &t0, k, s, Scheme::Plain, RunOptions::default()).unwrap();
                let set = SolutionSet::Face(face.clone());
                alpha * metrics::dist_to_solution_set(&weighted_average(&t, 1, k).unwrap(), &set).unwrap()
            })
            .collect();
        let (m, u) = upper(&vals);
        let bound = bounds::sharp_averaged_bound(1, k, Window::Full, c.d_x, c.l_theta, qt, c.m_sq, c.m_x_sq).unwrap();
        pass &= u <= bound;
        lines.push(format!("k={k}: alpha*dist {m:.3e} (upper {u:.3e}) <= {bound:.3e}"));
    }
    report("7c", pass, &lines.join("; "));
    assert!(pass);
}

#[test]
fn criterion_8_dispatch() {
    let t = Instant::now();
    let inst = DispatchInstance::random(5, 5, 7).unwrap();
    let p = make_dispatch(&inst).unwrap();
    let theta_star = reference::solve_true_learning(&p, DEFAULT_TOL).unwrap();
    assert!(linalg::dist(&theta_star.point, &p.true_theta) < 1e-6);
    let x_star = reference::solve_true_computational(&p, &theta_star.point, DEFAULT_TOL).unwrap().point;
    let policy = SteplengthPolicy::power_law(1.0, 1.0, 40.0, 1.0, 0.5).unwrap();
    let x0 = p.x_set.project(&vec![0.0; p.comp_dim()]).unwrap();
    let t0 = p.theta_set.project(&vec![0.0; p.learn_dim()]).unwrap();
    let traj = run_coupled_opt(&p, &policy, &x0, &t0, 10_000, 0).unwrap();
    let last = traj.last();
    let ex = linalg::dist(&last.x, &x_star) / (1.0 + linalg::norm(&x_star));
    let et = linalg::dist(&last.theta, &theta_star.point) / (1.0 + linalg::norm(&theta_star.point));
    let secs = t.elapsed().as_secs_f64();
    let pass = ex <= 0.1 && et <= 0.1 && secs <= 120.0;
    report(
        "8",
        pass,
        &format!("normalized errors x {ex:.3e}, theta {et:.3e}, {secs:.1}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_9_property_suites() {
    let r = selftest::cmd_selftest().unwrap();
    let trials: usize = r.checks.iter().map(|c| c.trials).sum();
    let pass = r.failures() == 0;
    report(
        "9",
        pass,
        &format!("{} checks, {trials} trials, {} failures", r.checks.len(), r.failures()),
    );
    assert!(pass, "{}", r.text());
}
