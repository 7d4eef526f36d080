//! Deterministic ground-truth solvers and brute-force oracles.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::problems::{MisspecifiedProblem, Model};
use crate::rng::{Stream, INSTANCE_GEN};
use crate::sets::{FeasibleSet, FEAS_TOL};

pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_ITER: usize = 5_000_000;
const MAX_PATH_STEPS: usize = 80;
const ENUMERATION_MAX_DIM: usize = 10;
const MONOTONE_PROBES: usize = 64;
const MONOTONE_TOL: f64 = -1e-8;
const PROBE_SEED: u64 = 0x5EED_0F0A_C1E0;

/// A solution with its fixed-point residual `‖z − Π(z − γ·map(z))‖`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certified {
    pub point: Vec<f64>,
    pub residual: f64,
    pub step: f64,
    pub iterations: usize,
}

fn residual(set: &FeasibleSet, z: &[f64], map: &[f64], step: f64) -> Result<f64> {
    let mut trial = z.to_vec();
    linalg::axpy(-step, map, &mut trial);
    Ok(linalg::dist(z, &set.project(&trial)?))
}

/// Projected fixed-point iteration `z ← Π(z − γ·map(z))` for a map with
/// strong monotonicity `mu` and Lipschitz constant `lip`, using `γ = mu/lip²`.
fn fixed_point<M>(set: &FeasibleSet, start: Vec<f64>, mu: f64, lip: f64, tol: f64, map: M) -> Result<Certified>
where
    M: Fn(&[f64]) -> Vec<f64>,
{
    let step = mu / (lip * lip);
    let q = (1.0 - (mu / lip).powi(2)).max(0.0).sqrt();
    // stopping on residual·(1−q)⁻¹ bounds the distance to the solution
    let target = tol * (1.0 - q).min(1.0);
    let mut z = set.project(&start)?;
    let mut best = f64::INFINITY;
    let mut stalled = 0usize;
    for it in 0..MAX_ITER {
        let f = map(&z);
        let mut next = z.clone();
        linalg::axpy(-step, &f, &mut next);
        let next = set.project(&next)?;
        let r = linalg::dist(&z, &next);
        if r <= target {
            return Ok(Certified { point: z, residual: r, step, iterations: it });
        }
        z = next;
        if !linalg::all_finite(&z) {
            return Err(Error::NumericalDivergence { k: it, detail: "reference iteration".into() });
        }
        if r < best * (1.0 - 1e-3) {
            best = r;
            stalled = 0;
        } else {
            stalled += 1;
        }
        if stalled > 10_000 && r <= tol {
            let res = residual(set, &z, &map(&z), step)?;
            return Ok(Certified { point: z, residual: res, step, iterations: it + 1 });
        }
    }
    let res = residual(set, &z, &map(&z), step)?;
    Err(Error::NotConverged { iterations: MAX_ITER, residual: res })
}

/// Solution of the learning problem by projected fixed-point iteration.
pub fn solve_true_learning(problem: &MisspecifiedProblem, tol: f64) -> Result<Certified> {
    let c = &problem.constants;
    if !(c.mu_theta > 0.0) {
        return Err(Error::Unsupported("learning map is not strongly monotone".into()));
    }
    let start = vec![0.0; problem.learn_dim()];
    fixed_point(&problem.theta_set, start, c.mu_theta, c.c_theta.max(c.mu_theta), tol, |t| {
        problem.learn_true(t)
    })
}

/// Strong monotonicity and Lipschitz constants of `F(·; θ)`.
fn comp_constants(problem: &MisspecifiedProblem, theta: &[f64]) -> (f64, f64) {
    match &problem.model {
        Model::Affine(_) => (problem.constants.mu_x, problem.constants.l_x),
        Model::Dispatch(m) => {
            let p = m.cap.len();
            let lo = theta[..p].iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = theta[..p].iter().cloned().fold(0.0, f64::max);
            (2.0 * lo.max(0.0), 2.0 * hi)
        }
    }
}

/// Checks `(F(x) − F(y))ᵀ(x − y) ≥ −1e-8` on deterministic probe pairs.
pub fn monotonicity_probe(problem: &MisspecifiedProblem, theta: &[f64]) -> Result<f64> {
    let n = problem.comp_dim();
    let mut s = Stream::new(PROBE_SEED, INSTANCE_GEN);
    let mut worst = f64::INFINITY;
    for _ in 0..MONOTONE_PROBES {
        let mut draw = || -> Result<Vec<f64>> {
            let z: Vec<f64> = (0..n).map(|_| s.uniform(-10.0, 10.0)).collect::<Result<_>>()?;
            problem.x_set.project(&z)
        };
        let x = draw()?;
        let y = draw()?;
        let fx = problem.comp_true(&x, theta);
        let fy = problem.comp_true(&y, theta);
        worst = worst.min(linalg::dot(&linalg::sub(&fx, &fy), &linalg::sub(&x, &y)));
    }
    if worst < MONOTONE_TOL {
        return Err(Error::Unsupported(format!("map is not monotone (probe value {worst:e})")));
    }
    Ok(worst)
}

/// Solution of `VI(X, F(·; θ))`. Strongly monotone maps use a projected
/// fixed-point iteration; merely monotone maps follow the Tikhonov path
/// `ε_j = 2^{-j}` and return its limit, the least-norm solution.
pub fn solve_true_computational(problem: &MisspecifiedProblem, theta: &[f64], tol: f64) -> Result<Certified> {
    if theta.len() != problem.learn_dim() {
        return Err(Error::invalid("theta has the wrong dimension"));
    }
    monotonicity_probe(problem, theta)?;
    let (mu, lip) = comp_constants(problem, theta);
    let start = vec![0.0; problem.comp_dim()];
    if mu > 0.0 {
        return fixed_point(&problem.x_set, start, mu, lip.max(mu), tol, |x| problem.comp_true(x, theta));
    }
    let mut prev: Option<Vec<f64>> = None;
    let mut iterations = 0;
    for j in 0..MAX_PATH_STEPS {
        let eps = 0.5f64.powi(j as i32);
        let sol = solve_regularized(problem, theta, eps, eps * tol)?;
        iterations += sol.iterations;
        if let Some(p) = &prev {
            let unreg = residual(&problem.x_set, &sol.point, &problem.comp_true(&sol.point, theta), 1.0)?;
            if linalg::dist(p, &sol.point) <= tol && unreg <= tol {
                return Ok(Certified { point: sol.point, residual: unreg, step: 1.0, iterations });
            }
        }
        prev = Some(sol.point);
    }
    let last = prev.unwrap_or_default();
    let unreg = residual(&problem.x_set, &last, &problem.comp_true(&last, theta), 1.0)?;
    Err(Error::NotConverged { iterations, residual: unreg })
}

/// Solution of the regularized `VI(X, F(·; θ) + ε·x)`.
pub fn solve_regularized(problem: &MisspecifiedProblem, theta: &[f64], eps: f64, tol: f64) -> Result<Certified> {
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be > 0"));
    }
    if let (Model::Affine(m), FeasibleSet::Box { lo, hi }) = (&problem.model, &problem.x_set) {
        if lo.len() <= ENUMERATION_MAX_DIM {
            let n = lo.len();
            let mut mat = linalg::from_rows(&m.a).ok_or_else(|| Error::invalid("malformed matrix"))?;
            for i in 0..n {
                mat[(i, i)] += eps;
            }
            let shift = problem.comp_true(&vec![0.0; n], theta);
            let point = affine_box_vi(&mat, &shift, lo, hi)?;
            let map = linalg::matvec(&mat, &point).iter().zip(&shift).map(|(a, b)| a + b).collect::<Vec<_>>();
            let res = residual(&problem.x_set, &point, &map, 1.0)?;
            return Ok(Certified { point, residual: res, step: 1.0, iterations: 1 });
        }
    }
    let (mu, lip) = comp_constants(problem, theta);
    let start = vec![0.0; problem.comp_dim()];
    fixed_point(&problem.x_set, start, mu + eps, lip + eps, tol, |x| {
        let mut f = problem.comp_true(x, theta);
        linalg::axpy(eps, x, &mut f);
        f
    })
}

/// Solves `VI(Box, Mx + c)` for positive-definite `M` by enumerating which
/// coordinates sit at the lower bound, the upper bound, or strictly inside.
fn affine_box_vi(mat: &DMatrix<f64>, shift: &[f64], lo: &[f64], hi: &[f64]) -> Result<Vec<f64>> {
    let n = lo.len();
    let total = 3usize.pow(n as u32);
    let tol = 1e-9;
    for code in 0..total {
        let mut c = code;
        let mut x = vec![0.0; n];
        let mut free = Vec::new();
        let mut skip = false;
        let mut state = vec![0u8; n];
        for i in 0..n {
            state[i] = (c % 3) as u8;
            c /= 3;
            match state[i] {
                0 => free.push(i),
                1 if lo[i].is_finite() => x[i] = lo[i],
                2 if hi[i].is_finite() => x[i] = hi[i],
                _ => skip = true,
            }
        }
        if skip {
            continue;
        }
        if !free.is_empty() {
            let k = free.len();
            let sub = DMatrix::from_fn(k, k, |r, s| mat[(free[r], free[s])]);
            let rhs = DVector::from_fn(k, |r, _| {
                let i = free[r];
                -(shift[i] + (0..n).filter(|j| state[*j] != 0).map(|j| mat[(i, j)] * x[j]).sum::<f64>())
            });
            let Some(sol) = sub.lu().solve(&rhs) else { continue };
            for (r, &i) in free.iter().enumerate() {
                x[i] = sol[r];
            }
        }
        let w: Vec<f64> = linalg::matvec(mat, &x).iter().zip(shift).map(|(a, b)| a + b).collect();
        let ok = (0..n).all(|i| match state[i] {
            0 => x[i] >= lo[i] - tol && x[i] <= hi[i] + tol,
            1 => w[i] >= -tol,
            _ => w[i] <= tol,
        });
        if ok {
            return Ok((0..n).map(|i| x[i].clamp(lo[i], hi[i])).collect());
        }
    }
    Err(Error::NotConverged { iterations: total, residual: f64::NAN })
}

/// Minimizer over `X` of `Σ_k f(y; θ^k)` by projected gradient with
/// backtracking.
pub fn solve_offline_online(problem: &MisspecifiedProblem, theta_sequence: &[Vec<f64>], tol: f64) -> Result<Certified> {
    if !problem.has_objective() {
        return Err(Error::Unsupported("problem has no objective".into()));
    }
    if theta_sequence.is_empty() {
        return Err(Error::invalid("theta sequence is empty"));
    }
    let m = problem.learn_dim();
    let kf = theta_sequence.len() as f64;
    let mut mean = vec![0.0; m];
    for t in theta_sequence {
        if t.len() != m {
            return Err(Error::invalid("theta has the wrong dimension"));
        }
        linalg::axpy(1.0 / kf, t, &mut mean);
    }
    // every objective here is affine in θ, so the sum is K·f(y; θ̄) up to a constant
    let value = |y: &[f64]| {
        problem.objective_closed_form(y, &mean).ok_or_else(|| Error::Unsupported("problem has no objective".into()))
    };
    let grad = |y: &[f64]| problem.comp_true(y, &mean);
    let set = &problem.x_set;
    let mut y = set.project(&vec![0.0; problem.comp_dim()])?;
    let mut step = 1.0;
    for it in 0..MAX_ITER {
        let g = grad(&y);
        let res = residual(set, &y, &g, 1.0)?;
        if res <= tol {
            return Ok(Certified { point: y, residual: res, step: 1.0, iterations: it });
        }
        let fy = value(&y)?;
        step *= 2.0;
        loop {
            let mut trial = y.clone();
            linalg::axpy(-step, &g, &mut trial);
            let trial = set.project(&trial)?;
            let d = linalg::sub(&trial, &y);
            let model = fy + linalg::dot(&g, &d) + linalg::norm_sq(&d) / (2.0 * step);
            if value(&trial)? <= model + 1e-15 * fy.abs().max(1.0) || step < 1e-14 {
                y = trial;
                break;
            }
            step *= 0.5;
        }
    }
    let res = residual(set, &y, &grad(&y), 1.0)?;
    Err(Error::NotConverged { iterations: MAX_ITER, residual: res })
}

/// Exact projection by enumerating the `3^dim` active patterns of the box
/// constraints.
pub fn brute_force_projection(set: &FeasibleSet, point: &[f64]) -> Result<Vec<f64>> {
    if set.dim() > 3 {
        return Err(Error::Unsupported("brute-force projection needs dimension <= 3".into()));
    }
    if point.len() != set.dim() {
        return Err(Error::invalid("dimension mismatch"));
    }
    match set {
        FeasibleSet::Box { lo, hi } => enumerate_patterns(lo, hi, None, point),
        FeasibleSet::BoxHyperplane { lo, hi, target_sum } => enumerate_patterns(lo, hi, Some(*target_sum), point),
        FeasibleSet::Product { blocks } => {
            let mut out = Vec::with_capacity(point.len());
            let mut off = 0;
            for b in blocks {
                let d = b.dim();
                out.extend(brute_force_projection(b, &point[off..off + d])?);
                off += d;
            }
            Ok(out)
        }
        FeasibleSet::Ball { .. } => Err(Error::UnsupportedSet("brute-force projection covers box constraints".into())),
    }
}

fn enumerate_patterns(lo: &[f64], hi: &[f64], target: Option<f64>, point: &[f64]) -> Result<Vec<f64>> {
    let n = lo.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        let mut x = point.to_vec();
        let mut free = Vec::new();
        let mut fixed_sum = 0.0;
        let mut skip = false;
        for i in 0..n {
            let s = c % 3;
            c /= 3;
            let v = match s {
                0 => {
                    free.push(i);
                    continue;
                }
                1 => lo[i],
                _ => hi[i],
            };
            if !v.is_finite() {
                skip = true;
            }
            x[i] = v;
            fixed_sum += v;
        }
        if skip {
            continue;
        }
        if let Some(t) = target {
            if free.is_empty() {
                if (fixed_sum - t).abs() > FEAS_TOL {
                    continue;
                }
            } else {
                let shift = (t - fixed_sum - free.iter().map(|&i| point[i]).sum::<f64>()) / free.len() as f64;
                for &i in &free {
                    x[i] = point[i] + shift;
                }
            }
        }
        if (0..n).any(|i| x[i] < lo[i] - FEAS_TOL || x[i] > hi[i] + FEAS_TOL) {
            continue;
        }
        let d = linalg::dist_sq(&x, point);
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, x));
        }
    }
    best.map(|(_, x)| x).ok_or_else(|| Error::InfeasibleSet("no feasible active pattern".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_dispatch, make_quadratic_with, make_skew_vi, DispatchInstance, NoiseScale};
    use crate::rng::COMP_NOISE;

    fn quad(theta: Vec<f64>, x_set: FeasibleSet) -> MisspecifiedProblem {
        make_quadratic_with(
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0])),
            DMatrix::identity(2, 2),
            theta,
            0.0,
            x_set,
            FeasibleSet::cube(2, -10.0, 10.0).unwrap(),
        )
        .unwrap()
    }

    fn dispatch(n: usize, w: usize, d: Vec<Vec<f64>>, h: Vec<Vec<f64>>, cap: Vec<Vec<f64>>, demand: Vec<f64>) -> MisspecifiedProblem {
        let inst = DispatchInstance {
            n_firms: n,
            n_nodes: w,
            d,
            h,
            cap,
            demand,
            reg: 0.05,
            noise_scale: NoiseScale::Linear,
        };
        make_dispatch(&inst).unwrap()
    }

    #[test]
    fn learning_examples() {
        let p = quad(vec![1.0, 2.0], FeasibleSet::cube(2, -10.0, 10.0).unwrap());
        let sol = solve_true_learning(&p, DEFAULT_TOL).unwrap();
        assert_eq!(sol.point, vec![1.0, 2.0]);
        assert_eq!(sol.iterations, 1);
        assert!(sol.residual <= DEFAULT_TOL);
    }

    #[test]
    fn learning_matches_ridge_normal_equations() {
        let p = dispatch(1, 1, vec![vec![2.0]], vec![vec![1.0]], vec![vec![1.5]], vec![0.9]);
        let sol = solve_true_learning(&p, DEFAULT_TOL).unwrap();
        assert!(sol.residual <= DEFAULT_TOL);
        // gradient of E[(Δa y² + Δb y)²] + reg‖θ‖² with y ~ U[0, c]
        let c: f64 = 1.5;
        let (e2, e3, e4) = (c * c / 3.0, c.powi(3) / 4.0, c.powi(4) / 5.0);
        let reg = 0.05;
        let lhs = DMatrix::from_row_slice(2, 2, &[e4 + reg, e3, e3, e2 + reg]);
        let rhs = DVector::from_vec(vec![e4 * 2.0 + e3 * 1.0, e3 * 2.0 + e2 * 1.0]);
        let exact = lhs.lu().solve(&rhs).unwrap();
        assert!((sol.point[0] - exact[0]).abs() < 1e-8, "{:?} {exact}", sol.point);
        assert!((sol.point[1] - exact[1]).abs() < 1e-8);
    }

    #[test]
    fn learning_rejects_flat_maps() {
        let mut p = quad(vec![1.0, 2.0], FeasibleSet::cube(2, -10.0, 10.0).unwrap());
        p.constants.mu_theta = 0.0;
        assert!(matches!(solve_true_learning(&p, 1e-10), Err(Error::Unsupported(_))));
    }

    #[test]
    fn computational_examples() {
        let p = quad(vec![1.0, 2.0], FeasibleSet::cube(2, -10.0, 10.0).unwrap());
        // F = diag(1,2)x − θ vanishes at (1, 1)
        let sol = solve_true_computational(&p, &[1.0, 2.0], DEFAULT_TOL).unwrap();
        assert!(linalg::dist(&sol.point, &[1.0, 1.0]) < 1e-9);
        assert!(sol.residual <= DEFAULT_TOL);

        let boxed = quad(vec![2.0, 6.0], FeasibleSet::cube(2, 0.0, 1.0).unwrap());
        let sol = solve_true_computational(&boxed, &[2.0, 6.0], DEFAULT_TOL).unwrap();
        assert!(linalg::dist(&sol.point, &[1.0, 1.0]) < 1e-9);

        let skew = make_skew_vi(
            2,
            1.0,
            vec![0.0, 0.0],
            0.0,
            FeasibleSet::cube(2, -1.0, 1.0).unwrap(),
            FeasibleSet::cube(2, -1.0, 1.0).unwrap(),
        )
        .unwrap();
        let sol = solve_true_computational(&skew, &[0.0, 0.0], DEFAULT_TOL).unwrap();
        assert!(linalg::norm(&sol.point) < 1e-12);
    }

    #[test]
    fn dispatch_marginal_costs_equalize() {
        let p = dispatch(2, 1, vec![vec![1.0], vec![2.0]], vec![vec![1.0], vec![1.0]], vec![vec![2.0], vec![2.0]], vec![2.0]);
        let sol = solve_true_computational(&p, &[1.0, 2.0, 0.0, 0.0], DEFAULT_TOL).unwrap();
        assert!((sol.point[0] - 4.0 / 3.0).abs() < 1e-9, "{:?}", sol.point);
        assert!((sol.point[1] - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn skew_tikhonov_path_converges_to_the_solution() {
        let skew = make_skew_vi(
            2,
            1.0,
            vec![0.1, 0.2],
            0.0,
            FeasibleSet::cube(2, -1.0, 1.0).unwrap(),
            FeasibleSet::cube(2, -1.0, 1.0).unwrap(),
        )
        .unwrap();
        let sol = solve_true_computational(&skew, &[0.1, 0.2], DEFAULT_TOL).unwrap();
        // Sx + θ = 0 with S = [[0,1],[−1,0]]
        assert!(linalg::dist(&sol.point, &[0.2, -0.1]) < 1e-9, "{:?}", sol.point);
        assert!(sol.residual <= DEFAULT_TOL);
    }

    #[test]
    fn non_monotone_maps_are_rejected() {
        let mut p = make_skew_vi(
            2,
            1.0,
            vec![0.0, 0.0],
            0.0,
            FeasibleSet::cube(2, -1.0, 1.0).unwrap(),
            FeasibleSet::cube(2, -1.0, 1.0).unwrap(),
        )
        .unwrap();
        if let Model::Affine(m) = &mut p.model {
            m.a = vec![vec![-1.0, 0.0], vec![0.0, 1.0]];
        }
        assert!(matches!(solve_true_computational(&p, &[0.0, 0.0], 1e-10), Err(Error::Unsupported(_))));
    }

    #[test]
    fn offline_online_examples() {
        let p = make_quadratic_with(
            DMatrix::identity(1, 1),
            DMatrix::identity(1, 1),
            vec![0.0],
            0.0,
            FeasibleSet::cube(1, -10.0, 10.0).unwrap(),
            FeasibleSet::cube(1, -10.0, 10.0).unwrap(),
        )
        .unwrap();
        let y = solve_offline_online(&p, &[vec![0.0], vec![2.0]], DEFAULT_TOL).unwrap();
        assert!((y.point[0] - 1.0).abs() < 1e-9);

        let q = quad(vec![1.0, 2.0], FeasibleSet::cube(2, -10.0, 10.0).unwrap());
        let t = vec![0.5, 3.0];
        let y = solve_offline_online(&q, &[t.clone(), t.clone(), t.clone()], DEFAULT_TOL).unwrap();
        let x = solve_true_computational(&q, &t, DEFAULT_TOL).unwrap();
        assert!(linalg::dist(&y.point, &x.point) < 1e-9);
        let single = solve_offline_online(&q, std::slice::from_ref(&t), DEFAULT_TOL).unwrap();
        assert!(linalg::dist(&single.point, &x.point) < 1e-9);
    }

    #[test]
    fn brute_force_examples() {
        let b = FeasibleSet::cube(1, 0.0, 1.0).unwrap();
        assert_eq!(brute_force_projection(&b, &[2.0]).unwrap(), vec![1.0]);
        assert_eq!(brute_force_projection(&b, &[-2.0]).unwrap(), vec![0.0]);
        let h = FeasibleSet::box_hyperplane(vec![0.0; 3], vec![1.0; 3], 1.0).unwrap();
        let inside = [0.2, 0.3, 0.5];
        let out = brute_force_projection(&h, &inside).unwrap();
        assert!(linalg::dist(&out, &inside) < 1e-15);
        assert!(brute_force_projection(&FeasibleSet::cube(4, 0.0, 1.0).unwrap(), &[0.0; 4]).is_err());
    }

    #[test]
    fn brute_force_agrees_with_projection() {
        let mut s = Stream::new(11, COMP_NOISE);
        for _ in 0..100 {
            let n = 1 + (s.next_u64() % 3) as usize;
            let lo: Vec<f64> = (0..n).map(|_| s.uniform(-2.0, 0.0).unwrap()).collect();
            let hi: Vec<f64> = lo.iter().map(|l| l + s.uniform(0.1, 2.0).unwrap()).collect();
            let target = s.uniform(lo.iter().sum(), hi.iter().sum()).unwrap();
            let set = FeasibleSet::box_hyperplane(lo, hi, target).unwrap();
            let p: Vec<f64> = (0..n).map(|_| s.uniform(-4.0, 4.0).unwrap()).collect();
            let a = set.project(&p).unwrap();
            let b = brute_force_projection(&set, &p).unwrap();
            assert!(linalg::dist(&a, &b) < 1e-8, "{a:?} {b:?}");
        }
    }
}
