//! Browser bindings. Every export returns a flat `Float64Array`; the plain
//! functions underneath are what the native tests exercise.

use coupled_sa::bounds;
use coupled_sa::linalg;
use coupled_sa::problems::{make_quadratic, make_skew_vi};
use coupled_sa::reference::{solve_true_computational, solve_true_learning, DEFAULT_TOL};
use coupled_sa::sets::FeasibleSet;
use coupled_sa::solvers::{run_coupled, RunOptions, Scheme};
use coupled_sa::steplengths::SteplengthPolicy;
use nalgebra::DMatrix;
use wasm_bindgen::prelude::*;

const MAX_ITERS: usize = 200_000;

fn text(e: coupled_sa::Error) -> String {
    e.to_string()
}

fn check_iters(k: usize) -> Result<(), String> {
    if k == 0 || k > MAX_ITERS {
        return Err(format!("iterations must be in 1..={MAX_ITERS}"));
    }
    Ok(())
}

/// Projects `point` onto a box (`a`, `b` = bounds), a ball (`a` = centre,
/// `scalar` = radius) or a box cut by `Σx = scalar`.
pub fn project_point(kind: &str, a: &[f64], b: &[f64], scalar: f64, point: &[f64]) -> Result<Vec<f64>, String> {
    let set = match kind {
        "box" => FeasibleSet::boxed(a.to_vec(), b.to_vec()),
        "ball" => FeasibleSet::ball(a.to_vec(), scalar),
        "box_sum" => FeasibleSet::box_hyperplane(a.to_vec(), b.to_vec(), scalar),
        other => return Err(format!("unknown set kind '{other}'")),
    }
    .map_err(text)?;
    if point.len() != set.dim() {
        return Err(format!("point has {} entries, set has dimension {}", point.len(), set.dim()));
    }
    set.project(point).map_err(text)
}

fn checkpoints(k: usize) -> Vec<usize> {
    let mut out: Vec<usize> = std::iter::successors(Some(1usize), |p| p.checked_mul(10))
        .take_while(|&p| p < k)
        .collect();
    out.push(k);
    out
}

/// Runs the 2-D strongly convex quadratic with `1/k` steps. Returns rows of
/// `[k, ‖x−x*‖², ‖θ−θ*‖², Q_x/k, Q_θ/k]` at powers of ten and at `k`; the
/// bound entries are `NaN` when `lambda_x` is too small for a bound.
pub fn strong_quadratic_run(mu: f64, l: f64, noise_sd: f64, lambda_x: f64, k: usize, seed: u64) -> Result<Vec<f64>, String> {
    check_iters(k)?;
    let set = FeasibleSet::cube(2, -5.0, 5.0).map_err(text)?;
    let p = make_quadratic(2, 2, mu, l, DMatrix::identity(2, 2), vec![1.0, 2.0], noise_sd, set.clone(), set)
        .map_err(text)?;
    let theta_star = solve_true_learning(&p, DEFAULT_TOL).map_err(text)?.point;
    let x_star = solve_true_computational(&p, &theta_star, DEFAULT_TOL).map_err(text)?.point;
    let x0 = vec![0.0; 2];
    let t0 = vec![0.0; 2];
    let c = p.constants.clone().with_geometry(&p.x_set, &x_star, &x0).map_err(text)?;
    let lambda_t = lambda_x * c.l_theta * c.l_theta / (c.mu_x * c.mu_theta);
    let q = bounds::rate_constants(lambda_x, lambda_t, &c, linalg::dist_sq(&x0, &x_star), linalg::dist_sq(&t0, &theta_star)).ok();
    let policy = SteplengthPolicy::coupled_strong(lambda_x).map_err(text)?;
    let traj = run_coupled(&p, &policy, &x0, &t0, k, seed, Scheme::Plain, RunOptions::default()).map_err(text)?;
    let mut out = Vec::new();
    for kk in checkpoints(k) {
        let r = traj.at(kk).ok_or("missing record")?;
        let kf = kk as f64;
        out.extend([
            kf,
            linalg::dist_sq(&r.x, &x_star),
            linalg::dist_sq(&r.theta, &theta_star),
            q.as_ref().map_or(f64::NAN, |q| q.q_x / kf),
            q.as_ref().map_or(f64::NAN, |q| q.q_theta / kf),
        ]);
    }
    Ok(out)
}

/// Runs the monotone skew map from `(0.5, 0.5)`, with and without the
/// vanishing regularizer. Returns rows of `[k, ‖x_plain‖, ‖x_regularized‖]`
/// at `samples` evenly spaced iterations.
pub fn skew_comparison(k: usize, samples: usize, seed: u64) -> Result<Vec<f64>, String> {
    check_iters(k)?;
    let samples = samples.clamp(1, k);
    let set = FeasibleSet::cube(2, -1.0, 1.0).map_err(text)?;
    let p = make_skew_vi(2, 1.0, vec![0.0, 0.0], 0.1, set.clone(), set).map_err(text)?;
    let x0 = [0.5, 0.5];
    let t0 = [0.0, 0.0];
    let plain = SteplengthPolicy::power_law(1.0, 0.9, 1.0, 0.6, 0.8).map_err(text)?;
    let reg = SteplengthPolicy::regularized(1.0, 0.9, 1.0, 0.6, 0.8, 1.0, 0.1).map_err(text)?;
    let stride = k.div_ceil(samples);
    let opts = RunOptions { stride };
    let a = run_coupled(&p, &plain, &x0, &t0, k, seed, Scheme::Plain, opts).map_err(text)?;
    let b = run_coupled(&p, &reg, &x0, &t0, k, seed, Scheme::Regularized, opts).map_err(text)?;
    let mut out = Vec::new();
    for (ra, rb) in a.records.iter().zip(&b.records) {
        out.extend([ra.k as f64, linalg::norm(&ra.x), linalg::norm(&rb.x)]);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = projectPoint)]
pub fn project_point_js(kind: &str, a: Vec<f64>, b: Vec<f64>, scalar: f64, point: Vec<f64>) -> Result<Vec<f64>, JsError> {
    project_point(kind, &a, &b, scalar, &point).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = strongQuadraticRun)]
pub fn strong_quadratic_run_js(mu: f64, l: f64, noise_sd: f64, lambda_x: f64, k: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    strong_quadratic_run(mu, l, noise_sd, lambda_x, k, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = skewComparison)]
pub fn skew_comparison_js(k: usize, samples: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    skew_comparison(k, samples, seed as u64).map_err(|e| JsError::new(&e))
}
