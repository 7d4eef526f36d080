//! Deterministic property suite behind the `selftest` command.

use nalgebra::DMatrix;
use serde::Serialize;

use super::commands::cmd_run;
use super::config::ExperimentConfig;
use crate::bounds;
use crate::error::Result;
use crate::linalg;
use crate::problems::{make_dispatch, make_quadratic_with, make_skew_vi, DispatchInstance, MisspecifiedProblem};
use crate::reference;
use crate::rng::{Stream, COMP_NOISE, INSTANCE_GEN, LEARN_NOISE};
use crate::sets::FeasibleSet;

const SUITE_SEED: u64 = 20_240_917;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn failures(&self) -> usize {
        self.checks.iter().map(|c| c.failures).sum()
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{:<32} {:>6} trials {:>4} failures {}\n",
                c.name, c.trials, c.failures, c.detail
            ));
        }
        out.push_str(&format!("total failures: {}\n", self.failures()));
        out
    }
}

/// Configuration of the selftest knobs.
#[derive(Debug, Clone, Copy)]
pub struct SuiteSize {
    pub projection_trials: usize,
    pub contraction_trials: usize,
    pub oracle_draws: usize,
}

impl Default for SuiteSize {
    fn default() -> Self {
        SuiteSize {
            projection_trials: 10_000,
            contraction_trials: 10_000,
            oracle_draws: 100_000,
        }
    }
}

fn check(name: &str, trials: usize, failures: usize, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        trials,
        failures,
        detail: detail.into(),
    }
}

fn vec_in(s: &mut Stream, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| s.uniform(lo, hi).expect("ordered bounds")).collect()
}

fn pick(s: &mut Stream, n: u64) -> usize {
    (s.next_u64() % n) as usize
}

/// A random set of one of the four descriptor kinds.
fn random_set(s: &mut Stream) -> FeasibleSet {
    let n = 1 + pick(s, 4);
    match pick(s, 4) {
        0 => {
            let lo = vec_in(s, n, -2.0, 0.0);
            let hi: Vec<f64> = lo.iter().map(|l| l + s.uniform(0.0, 3.0).unwrap()).collect();
            FeasibleSet::boxed(lo, hi).unwrap()
        }
        1 => FeasibleSet::ball(vec_in(s, n, -1.0, 1.0), s.uniform(0.1, 2.0).unwrap()).unwrap(),
        2 => {
            let lo = vec_in(s, n, -2.0, 0.0);
            let hi: Vec<f64> = lo.iter().map(|l| l + s.uniform(0.1, 3.0).unwrap()).collect();
            let t = s.uniform(lo.iter().sum(), hi.iter().sum()).unwrap();
            FeasibleSet::box_hyperplane(lo, hi, t).unwrap()
        }
        _ => {
            let a = FeasibleSet::cube(n, -1.0, 1.0).unwrap();
            let b = FeasibleSet::box_hyperplane(vec![0.0; 2], vec![1.0; 2], 1.0).unwrap();
            FeasibleSet::product(vec![a, b]).unwrap()
        }
    }
}

fn projection_checks(size: SuiteSize) -> Vec<Check> {
    let mut s = Stream::new(SUITE_SEED, INSTANCE_GEN);
    let (mut idem, mut nonexp, mut optim) = (0, 0, 0);
    let n = size.projection_trials;
    for _ in 0..n {
        let set = random_set(&mut s);
        let d = set.dim();
        let a = vec_in(&mut s, d, -5.0, 5.0);
        let b = vec_in(&mut s, d, -5.0, 5.0);
        let pa = set.project(&a).unwrap();
        let pb = set.project(&b).unwrap();
        if linalg::dist(&set.project(&pa).unwrap(), &pa) > 1e-12 * (1.0 + linalg::norm(&pa)) {
            idem += 1;
        }
        if linalg::dist(&pa, &pb) > linalg::dist(&a, &b) + 1e-12 {
            nonexp += 1;
        }
        // pb is a feasible point, so (a − Πa)ᵀ(pb − Πa) ≤ 0
        if linalg::dot(&linalg::sub(&a, &pa), &linalg::sub(&pb, &pa)) > 1e-9 {
            optim += 1;
        }
    }
    vec![
        check("projection_idempotence", n, idem, ""),
        check("projection_nonexpansive", n, nonexp, ""),
        check("projection_optimality", n, optim, ""),
    ]
}

/// Random `M` with `λ_min(sym M) = mu`: a random matrix shifted along the identity.
fn random_monotone(s: &mut Stream, n: usize, mu: f64) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(n, n, |_, _| s.uniform(-1.0, 1.0).unwrap());
    let shift = mu - linalg::min_sym_eigenvalue(&m);
    for i in 0..n {
        m[(i, i)] += shift;
    }
    m
}

fn contraction_checks(size: SuiteSize) -> Vec<Check> {
    let mut s = Stream::new(SUITE_SEED, COMP_NOISE);
    let n_trials = size.contraction_trials;
    let (mut strong_fail, mut reg_fail) = (0, 0);
    for _ in 0..n_trials {
        let n = 1 + pick(&mut s, 4);
        let set = FeasibleSet::cube(n, -1.0, 1.0).unwrap();
        let c = vec_in(&mut s, n, -1.0, 1.0);
        let x = vec_in(&mut s, n, -1.0, 1.0);
        let y = vec_in(&mut s, n, -1.0, 1.0);
        let step = |m: &DMatrix<f64>, g: f64, p: &[f64]| {
            let mut v = p.to_vec();
            let f: Vec<f64> = linalg::matvec(m, p).iter().zip(&c).map(|(a, b)| a + b).collect();
            linalg::axpy(-g, &f, &mut v);
            set.project(&v).unwrap()
        };

        let mu = s.uniform(0.05, 1.0).unwrap();
        let m = random_monotone(&mut s, n, mu);
        let l = linalg::operator_norm(&m);
        let g = s.uniform(0.0, 2.0 * mu / (l * l)).unwrap().max(1e-6);
        let (q, _) = bounds::contraction_factors(g, mu, l, 0.0).unwrap();
        if linalg::dist(&step(&m, g, &x), &step(&m, g, &y)) > q * linalg::dist(&x, &y) + 1e-10 {
            strong_fail += 1;
        }

        let m0 = random_monotone(&mut s, n, 0.0);
        let l0 = linalg::operator_norm(&m0);
        let eps = s.uniform(0.01, 1.0).unwrap();
        let g = s.uniform(1e-3, 1.0 / (eps + l0)).unwrap();
        let (_, q_reg) = bounds::contraction_factors(g, 0.0, l0, eps).unwrap();
        let mut shifted = m0.clone();
        for i in 0..n {
            shifted[(i, i)] += eps;
        }
        if linalg::dist(&step(&shifted, g, &x), &step(&shifted, g, &y)) > q_reg * linalg::dist(&x, &y) + 1e-10 {
            reg_fail += 1;
        }
    }
    vec![
        check("contraction_strong", n_trials, strong_fail, ""),
        check("contraction_regularized", n_trials, reg_fail, ""),
    ]
}

fn drift_check() -> Check {
    let p = make_skew_vi(
        2,
        1.0,
        vec![0.1, 0.2],
        0.0,
        FeasibleSet::cube(2, -1.0, 1.0).unwrap(),
        FeasibleSet::cube(2, -1.0, 1.0).unwrap(),
    )
    .unwrap();
    let theta = [0.1, 0.2];
    let x_star = reference::solve_true_computational(&p, &theta, reference::DEFAULT_TOL).unwrap().point;
    let m = linalg::norm(&x_star);
    let mut prev = reference::solve_regularized(&p, &theta, 1.0, 1e-12).unwrap().point;
    let mut fails = 0;
    let mut worst: f64 = 0.0;
    for j in 1..=10 {
        let (e0, e1) = (0.5f64.powi(j - 1), 0.5f64.powi(j));
        let cur = reference::solve_regularized(&p, &theta, e1, 1e-12).unwrap().point;
        let bound = bounds::tikhonov_drift(m, e0, e1).unwrap();
        let moved = linalg::dist(&cur, &prev);
        worst = worst.max(moved / bound);
        if moved > bound + 1e-12 {
            fails += 1;
        }
        prev = cur;
    }
    check("tikhonov_drift", 10, fails, format!("max ratio {worst:.3}"))
}

fn brute_force_check() -> Check {
    let mut s = Stream::new(SUITE_SEED, LEARN_NOISE);
    let mut fails = 0;
    for _ in 0..100 {
        let n = 1 + pick(&mut s, 3);
        let lo = vec_in(&mut s, n, -2.0, 0.0);
        let hi: Vec<f64> = lo.iter().map(|l| l + s.uniform(0.1, 2.0).unwrap()).collect();
        let t = s.uniform(lo.iter().sum(), hi.iter().sum()).unwrap();
        let set = FeasibleSet::box_hyperplane(lo, hi, t).unwrap();
        let p = vec_in(&mut s, n, -4.0, 4.0);
        let a = set.project(&p).unwrap();
        match reference::brute_force_projection(&set, &p) {
            Ok(b) if linalg::dist(&a, &b) <= 1e-8 => {}
            _ => fails += 1,
        }
    }
    check("brute_force_projection", 100, fails, "")
}

/// Sample mean of `sample − truth` within 5 standard errors of zero on every
/// coordinate, and second moment within 5 standard errors of `expected`.
fn moment_check(
    name: &str,
    draws: usize,
    truth: &[f64],
    expected_second: Option<f64>,
    mut sample: impl FnMut(u64) -> Vec<f64>,
) -> Check {
    let n = truth.len();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut norm_sum = 0.0;
    let mut norm_sq_sum = 0.0;
    for d in 0..draws {
        let w = linalg::sub(&sample(d as u64), truth);
        for i in 0..n {
            sum[i] += w[i];
            sum_sq[i] += w[i] * w[i];
        }
        let q = linalg::norm_sq(&w);
        norm_sum += q;
        norm_sq_sum += q * q;
    }
    let df = draws as f64;
    let mut fails = 0;
    for i in 0..n {
        let mean = sum[i] / df;
        let sd = (sum_sq[i] / df - mean * mean).max(0.0).sqrt();
        if mean.abs() > 5.0 * sd / df.sqrt() + 1e-15 {
            fails += 1;
        }
    }
    let second = norm_sum / df;
    let mut trials = n;
    if let Some(e) = expected_second {
        trials += 1;
        let sd = (norm_sq_sum / df - second * second).max(0.0).sqrt();
        if (second - e).abs() > 5.0 * sd / df.sqrt() + 1e-12 {
            fails += 1;
        }
    }
    check(name, trials, fails, format!("second moment {second:.4e}"))
}

fn oracle_checks(size: SuiteSize) -> Vec<Check> {
    let sigma = 0.5;
    let quad = make_quadratic_with(
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0])),
        DMatrix::identity(2, 2),
        vec![1.0, 2.0],
        sigma,
        FeasibleSet::cube(2, -5.0, 5.0).unwrap(),
        FeasibleSet::cube(2, -5.0, 5.0).unwrap(),
    )
    .unwrap();
    let x = [0.3, -0.7];
    let th = [1.5, 0.5];
    let draws = size.oracle_draws;
    let nu = 2.0 * sigma * sigma;
    let mut out = vec![
        moment_check("oracle_comp_quadratic", draws, &quad.comp_true(&x, &th), Some(nu), |d| {
            quad.comp_sample(&x, &th, &mut Stream::at_draw(SUITE_SEED, COMP_NOISE, d)).unwrap()
        }),
        moment_check("oracle_learn_quadratic", draws, &quad.learn_true(&th), Some(nu), |d| {
            quad.learn_sample(&th, &mut Stream::at_draw(SUITE_SEED, LEARN_NOISE, d)).unwrap()
        }),
    ];
    let disp = dispatch_problem();
    let xd = disp.x_set.project(&vec![0.5; disp.comp_dim()]).unwrap();
    let td = disp.true_theta.clone();
    out.push(moment_check("oracle_comp_dispatch", draws, &disp.comp_true(&xd, &td), None, |d| {
        disp.comp_sample(&xd, &td, &mut Stream::at_draw(SUITE_SEED, COMP_NOISE, d)).unwrap()
    }));
    out.push(moment_check("oracle_learn_dispatch", draws, &disp.learn_true(&td), None, |d| {
        disp.learn_sample(&td, &mut Stream::at_draw(SUITE_SEED, LEARN_NOISE, d)).unwrap()
    }));
    let bounded = [
        ("oracle_second_moment_bounds", &quad, x.to_vec(), th.to_vec()),
        ("oracle_second_moment_bounds", &disp, xd, td),
    ];
    let mut fails = 0;
    for (_, p, x, t) in &bounded {
        let (mut cs, mut ls) = (0.0, 0.0);
        for d in 0..draws as u64 {
            cs += linalg::dist_sq(&p.comp_sample(x, t, &mut Stream::at_draw(SUITE_SEED, COMP_NOISE, d)).unwrap(), &p.comp_true(x, t));
            ls += linalg::dist_sq(&p.learn_sample(t, &mut Stream::at_draw(SUITE_SEED, LEARN_NOISE, d)).unwrap(), &p.learn_true(t));
        }
        if cs / draws as f64 > p.constants.nu_x_sq * 1.05 || ls / draws as f64 > p.constants.nu_theta_sq * 1.05 {
            fails += 1;
        }
    }
    out.push(check("oracle_second_moment_bounds", 2, fails, "variances below the reported constants"));
    out
}

fn dispatch_problem() -> MisspecifiedProblem {
    make_dispatch(&DispatchInstance::random(3, 2, 7).unwrap()).unwrap()
}

const REPRO_CONFIG: &str = r#"
K = 200
n_seeds = 3
k_grid = [10, 100, 200]
windows = ["full", "tail_half"]
problem.kind = quadratic
problem.a_diag = [1, 2]
problem.theta_star = [1, 2]
problem.noise_sd = 0.1
problem.x_set.kind = box
problem.x_set.lo = [-5, -5]
problem.x_set.hi = [5, 5]
problem.theta_set.kind = box
problem.theta_set.lo = [-5, -5]
problem.theta_set.hi = [5, 5]
policy.kind = coupled_strong
policy.lambda_x = 1.2
"#;

fn reproducibility_check() -> Result<Check> {
    let dirs = [tempdir("a")?, tempdir("b")?];
    let mut outputs = Vec::new();
    for (i, d) in dirs.iter().enumerate() {
        let mut cfg = ExperimentConfig::parse(REPRO_CONFIG)?;
        cfg.out_dir = d.clone();
        cfg.workers = Some(1 + 2 * i);
        let out = cmd_run(&cfg)?;
        let mut files = out.traces.clone();
        files.push(out.summary);
        let bytes: Vec<Vec<u8>> = files.iter().map(std::fs::read).collect::<std::io::Result<_>>()?;
        outputs.push(bytes);
    }
    for d in &dirs {
        let _ = std::fs::remove_dir_all(d);
    }
    let same = outputs[0] == outputs[1];
    Ok(check("cmd_run_bit_reproducible", 1, usize::from(!same), "two reruns, different worker counts"))
}

fn tempdir(tag: &str) -> Result<std::path::PathBuf> {
    let nonce = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let p = std::env::temp_dir().join(format!("coupled-sa-selftest-{}-{nonce}-{tag}", std::process::id()));
    std::fs::create_dir_all(&p)?;
    Ok(p)
}

pub fn run_suite(size: SuiteSize) -> Result<SelftestReport> {
    let mut checks = projection_checks(size);
    checks.extend(contraction_checks(size));
    checks.push(drift_check());
    checks.push(brute_force_check());
    checks.extend(oracle_checks(size));
    checks.push(reproducibility_check()?);
    Ok(SelftestReport { checks })
}

pub fn cmd_selftest() -> Result<SelftestReport> {
    run_suite(SuiteSize::default())
}
