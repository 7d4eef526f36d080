use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{MisspecifiedProblem, Model, RateConstants};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::Stream;
use crate::sets::FeasibleSet;

const MAX_VERTEX_PAIRS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveForm {
    /// Pure variational inequality.
    None,
    /// `½ xᵀAx + (Gθ)ᵀx`.
    Quadratic,
    /// The quadratic shifted by `½ (Gθ)ᵀA⁻¹(Gθ)` so its unconstrained minimum is 0.
    CenteredQuadratic,
}

/// Affine map `F(x; θ) = Ax + Gθ` with learning problem `½‖θ − θ*‖²` and
/// additive Gaussian noise on both oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineModel {
    pub a: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub theta_target: Vec<f64>,
    pub noise_sd: f64,
    pub objective: ObjectiveForm,
    /// `GᵀA⁻¹G`, present for the centered objective.
    #[serde(default)]
    pub offset: Option<Vec<Vec<f64>>>,
}

fn mv(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| linalg::dot(row, v)).collect()
}

impl AffineModel {
    pub fn comp(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut out = mv(&self.a, x);
        for (o, row) in out.iter_mut().zip(&self.g) {
            *o += linalg::dot(row, theta);
        }
        out
    }

    pub fn learn(&self, theta: &[f64]) -> Vec<f64> {
        linalg::sub(theta, &self.theta_target)
    }

    pub fn objective(&self, x: &[f64], theta: &[f64]) -> Option<f64> {
        let base = || 0.5 * linalg::dot(x, &mv(&self.a, x)) + linalg::dot(&mv(&self.g, theta), x);
        match self.objective {
            ObjectiveForm::None => None,
            ObjectiveForm::Quadratic => Some(base()),
            ObjectiveForm::CenteredQuadratic => {
                let off = self.offset.as_ref().map_or(0.0, |o| 0.5 * linalg::dot(theta, &mv(o, theta)));
                Some(base() + off)
            }
        }
    }

    fn noise(&self, stream: &mut Stream, dim: usize) -> Result<Vec<f64>> {
        (0..dim).map(|_| stream.normal(0.0, self.noise_sd)).collect()
    }

    pub fn comp_sample(&self, x: &[f64], theta: &[f64], stream: &mut Stream) -> Result<Vec<f64>> {
        let mut out = self.comp(x, theta);
        if self.noise_sd > 0.0 {
            let w = self.noise(stream, out.len())?;
            linalg::axpy(1.0, &w, &mut out);
        }
        Ok(out)
    }

    pub fn learn_sample(&self, theta: &[f64], stream: &mut Stream) -> Result<Vec<f64>> {
        let mut out = self.learn(theta);
        if self.noise_sd > 0.0 {
            let v = self.noise(stream, out.len())?;
            linalg::axpy(1.0, &v, &mut out);
        }
        Ok(out)
    }

    /// `f(x; θ) + wᵀx`, drawing `w` exactly as `comp_sample` does.
    pub fn sampled_objective(&self, x: &[f64], theta: &[f64], stream: &mut Stream) -> Option<Result<f64>> {
        let f = self.objective(x, theta)?;
        if self.noise_sd == 0.0 {
            return Some(Ok(f));
        }
        Some(self.noise(stream, x.len()).map(|w| f + linalg::dot(&w, x)))
    }
}

fn check_square(a: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::invalid(format!(
            "{what} must be {n}x{n}, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

fn check_common(g: &DMatrix<f64>, theta_star: &[f64], noise_sd: f64, x_set: &FeasibleSet, theta_set: &FeasibleSet) -> Result<()> {
    let (n, m) = (x_set.dim(), theta_set.dim());
    if g.nrows() != n || g.ncols() != m {
        return Err(Error::invalid(format!(
            "coupling must be {n}x{m}, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    if theta_star.len() != m || !theta_set.contains(theta_star, 1e-12) {
        return Err(Error::invalid("theta_star is not a feasible point of theta_set"));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::invalid("noise_sd must be >= 0"));
    }
    x_set.validate()?;
    theta_set.validate()
}

#[allow(clippy::too_many_arguments)]
fn build(
    name: &str,
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    theta_star: Vec<f64>,
    noise_sd: f64,
    objective: ObjectiveForm,
    x_set: FeasibleSet,
    theta_set: FeasibleSet,
) -> Result<MisspecifiedProblem> {
    let offset = if objective == ObjectiveForm::CenteredQuadratic {
        let inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::invalid("centered objective needs an invertible quadratic term"))?;
        Some(linalg::to_rows(&(g.transpose() * inv * g)))
    } else {
        None
    };
    let model = AffineModel {
        a: linalg::to_rows(a),
        g: linalg::to_rows(g),
        theta_target: theta_star.clone(),
        noise_sd,
        objective,
        offset,
    };
    let constants = affine_constants(&model, a, g, &x_set, &theta_set, &theta_star)?;
    Ok(MisspecifiedProblem {
        name: name.into(),
        x_set,
        theta_set,
        constants,
        true_theta: theta_star,
        model: Model::Affine(model),
        exact_objective: true,
        solution_face: None,
    })
}

fn max_norm(set: &FeasibleSet) -> f64 {
    set.max_distance_from(&vec![0.0; set.dim()]).unwrap_or(f64::INFINITY)
}

fn affine_constants(
    model: &AffineModel,
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    x_set: &FeasibleSet,
    theta_set: &FeasibleSet,
    theta_star: &[f64],
) -> Result<RateConstants> {
    let (n, m) = (x_set.dim(), theta_set.dim());
    let sd2 = model.noise_sd * model.noise_sd;
    let mut mu_x = linalg::min_sym_eigenvalue(a);
    if mu_x < 1e-12 {
        mu_x = 0.0;
    }
    let l_x = linalg::operator_norm(a);
    let l_theta = linalg::operator_norm(g);
    let nu_x_sq = n as f64 * sd2;
    let nu_theta_sq = m as f64 * sd2;

    let (rx, rt) = (max_norm(x_set), max_norm(theta_set));
    let d_theta = match model.objective {
        ObjectiveForm::None => 0.0,
        ObjectiveForm::Quadratic => l_theta * rx,
        ObjectiveForm::CenteredQuadratic => {
            let off = model.offset.as_ref().and_then(|o| linalg::from_rows(o)).map_or(0.0, |o| linalg::operator_norm(&o));
            l_theta * rx + off * rt
        }
    };

    let sup_map_sq = match (x_set.vertices(), theta_set.vertices()) {
        (Ok(vx), Ok(vt)) if vx.len().saturating_mul(vt.len()) <= MAX_VERTEX_PAIRS => {
            let mut best = 0.0f64;
            for x in &vx {
                let ax = mv(&model.a, x);
                for t in &vt {
                    let v: f64 = ax
                        .iter()
                        .zip(&model.g)
                        .map(|(s, row)| (s + linalg::dot(row, t)).powi(2))
                        .sum();
                    best = best.max(v);
                }
            }
            best
        }
        _ => (l_x * rx + l_theta * rt).powi(2),
    };
    let m_sq = sup_map_sq + nu_x_sq;
    let m_theta_sq = theta_set
        .max_distance_from(theta_star)
        .map(|d| d * d)
        .unwrap_or(f64::INFINITY)
        + nu_theta_sq;

    Ok(RateConstants {
        mu_x,
        l_x,
        l_theta,
        mu_theta: 1.0,
        c_theta: 1.0,
        d_theta,
        nu_x_sq,
        nu_theta_sq,
        m_sq,
        m_theta_sq,
        m_x_sq: 0.0,
        d_x: 0.0,
        alpha_sharp: None,
    })
}

/// Strongly convex quadratic `½xᵀAx − (Bθ)ᵀx` with `A = diag(linspace(mu_x, l_x, n))`.
#[allow(clippy::too_many_arguments)]
pub fn make_quadratic(
    n: usize,
    m: usize,
    mu_x: f64,
    l_x: f64,
    coupling: DMatrix<f64>,
    theta_star: Vec<f64>,
    noise_sd: f64,
    x_set: FeasibleSet,
    theta_set: FeasibleSet,
) -> Result<MisspecifiedProblem> {
    if !(mu_x > 0.0 && mu_x <= l_x) {
        return Err(Error::invalid(format!("need 0 < mu_x <= l_x, got {mu_x}, {l_x}")));
    }
    if x_set.dim() != n || theta_set.dim() != m {
        return Err(Error::invalid("set dimensions do not match n, m"));
    }
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                mu_x
            } else {
                mu_x + (l_x - mu_x) * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
    make_quadratic_with(a, coupling, theta_star, noise_sd, x_set, theta_set)
}

/// Convex quadratic `½xᵀAx − (Bθ)ᵀx` for a symmetric positive semidefinite `A`.
pub fn make_quadratic_with(
    a: DMatrix<f64>,
    coupling: DMatrix<f64>,
    theta_star: Vec<f64>,
    noise_sd: f64,
    x_set: FeasibleSet,
    theta_set: FeasibleSet,
) -> Result<MisspecifiedProblem> {
    quadratic(a, coupling, theta_star, noise_sd, x_set, theta_set, ObjectiveForm::Quadratic)
}

/// Convex quadratic with diagonal `A` (zeros allowed) and `B = I`.
pub fn make_convex_quadratic(
    diag: &[f64],
    theta_star: Vec<f64>,
    noise_sd: f64,
    x_set: FeasibleSet,
    theta_set: FeasibleSet,
) -> Result<MisspecifiedProblem> {
    let n = diag.len();
    let a = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag));
    quadratic(a, DMatrix::identity(n, n), theta_star, noise_sd, x_set, theta_set, ObjectiveForm::Quadratic)
}

fn quadratic(
    a: DMatrix<f64>,
    coupling: DMatrix<f64>,
    theta_star: Vec<f64>,
    noise_sd: f64,
    x_set: FeasibleSet,
    theta_set: FeasibleSet,
    form: ObjectiveForm,
) -> Result<MisspecifiedProblem> {
    let n = x_set.dim();
    check_square(&a, n, "quadratic term")?;
    if !linalg::is_symmetric(&a, 1e-12) {
        return Err(Error::invalid("quadratic term must be symmetric"));
    }
    if linalg::min_sym_eigenvalue(&a) < -1e-12 {
        return Err(Error::invalid("quadratic term must be positive semidefinite"));
    }
    let g = -coupling;
    check_common(&g, &theta_star, noise_sd, &x_set, &theta_set)?;
    build("quadratic", &a, &g, theta_star, noise_sd, form, x_set, theta_set)
}

impl MisspecifiedProblem {
    /// Switches an affine quadratic to its centered (nonnegative) form.
    pub fn centered(self) -> Result<MisspecifiedProblem> {
        let Model::Affine(m) = &self.model else {
            return Err(Error::Unsupported("centering applies to affine quadratics only".into()));
        };
        if m.objective == ObjectiveForm::None {
            return Err(Error::Unsupported("problem has no objective".into()));
        }
        let a = linalg::from_rows(&m.a).expect("rectangular");
        let g = linalg::from_rows(&m.g).expect("rectangular");
        let name = self.name.clone();
        let mut p = build(
            &name,
            &a,
            &g,
            self.true_theta,
            m.noise_sd,
            ObjectiveForm::CenteredQuadratic,
            self.x_set,
            self.theta_set,
        )?;
        p.name = name;
        Ok(p)
    }
}

/// Strongly monotone affine VI `F(x; θ) = Ax + Gθ` with no objective.
pub fn make_affine_vi(
    a: DMatrix<f64>,
    g: DMatrix<f64>,
    theta_star: Vec<f64>,
    noise_sd: f64,
    x_set: FeasibleSet,
    theta_set: FeasibleSet,
) -> Result<MisspecifiedProblem> {
    check_square(&a, x_set.dim(), "map matrix")?;
    check_common(&g, &theta_star, noise_sd, &x_set, &theta_set)?;
    if linalg::min_sym_eigenvalue(&a) <= 0.0 {
        return Err(Error::invalid("map matrix must be strongly monotone"));
    }
    build("affine_vi", &a, &g, theta_star, noise_sd, ObjectiveForm::None, x_set, theta_set)
}

/// Merely monotone VI `F(x; θ) = Sx + θ` with `S` a scaled block-diagonal rotation.
pub fn make_skew_vi(
    n: usize,
    skew_scale: f64,
    theta_star: Vec<f64>,
    noise_sd: f64,
    x_set: FeasibleSet,
    theta_set: FeasibleSet,
) -> Result<MisspecifiedProblem> {
    if n == 0 || n % 2 == 1 {
        return Err(Error::invalid(format!("skew VI needs an even dimension, got {n}")));
    }
    if !(skew_scale >= 0.0) {
        return Err(Error::invalid("skew_scale must be >= 0"));
    }
    if x_set.dim() != n || !x_set.is_bounded() {
        return Err(Error::invalid("skew VI needs a bounded x_set of dimension n"));
    }
    let mut s = DMatrix::zeros(n, n);
    for b in (0..n).step_by(2) {
        s[(b, b + 1)] = skew_scale;
        s[(b + 1, b)] = -skew_scale;
    }
    let g = DMatrix::identity(n, theta_set.dim());
    check_common(&g, &theta_star, noise_sd, &x_set, &theta_set)?;
    let mut p = build("skew_vi", &s, &g, theta_star, noise_sd, ObjectiveForm::None, x_set, theta_set)?;
    p.constants.mu_x = 0.0;
    p.constants.l_x = skew_scale;
    Ok(p)
}

/// Constant map `F(x; θ) = Cθ` over a compact polyhedron: a linear program
/// with a weak-sharp solution face.
pub fn make_sharp_lp_vi(
    c_of_theta: DMatrix<f64>,
    theta_star: Vec<f64>,
    noise_sd: f64,
    x_set: FeasibleSet,
    theta_set: FeasibleSet,
) -> Result<MisspecifiedProblem> {
    if !matches!(x_set, FeasibleSet::Box { .. } | FeasibleSet::BoxHyperplane { .. }) || !x_set.is_bounded() {
        return Err(Error::UnsupportedSet("sharp LP VI needs a bounded Box or BoxHyperplane".into()));
    }
    check_common(&c_of_theta, &theta_star, noise_sd, &x_set, &theta_set)?;
    let n = x_set.dim();
    let cost = linalg::matvec(&c_of_theta, &theta_star);
    let face = lp_solution_face(&x_set, &cost)?;
    let alpha = sharpness(&x_set, &face, &cost)?;
    let a = DMatrix::zeros(n, n);
    let mut p = build("sharp_lp_vi", &a, &c_of_theta, theta_star, noise_sd, ObjectiveForm::None, x_set, theta_set)?;
    p.constants.alpha_sharp = Some(alpha);
    p.solution_face = Some(face);
    Ok(p)
}

/// `argmin_{x ∈ set} costᵀx` as a face of the set.
fn lp_solution_face(set: &FeasibleSet, cost: &[f64]) -> Result<FeasibleSet> {
    let scale = linalg::norm(cost);
    let tie = 1e-12 * scale.max(1e-300);
    if scale == 0.0 {
        return Err(Error::invalid("degenerate objective: every feasible point solves the LP"));
    }
    match set {
        FeasibleSet::Box { lo, hi } => {
            let mut flo = lo.clone();
            let mut fhi = hi.clone();
            for i in 0..cost.len() {
                if cost[i] > tie {
                    fhi[i] = lo[i];
                } else if cost[i] < -tie {
                    flo[i] = hi[i];
                }
            }
            FeasibleSet::boxed(flo, fhi)
        }
        FeasibleSet::BoxHyperplane { lo, hi, target_sum } => {
            let n = cost.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&i, &j| cost[i].total_cmp(&cost[j]));
            let mut flo = lo.clone();
            let mut fhi = lo.clone();
            let mut remaining = target_sum - lo.iter().sum::<f64>();
            let mut start = 0;
            while start < n {
                let mut end = start + 1;
                while end < n && cost[order[end]] - cost[order[start]] <= tie {
                    end += 1;
                }
                let group = &order[start..end];
                let capacity: f64 = group.iter().map(|&i| hi[i] - lo[i]).sum();
                if remaining >= capacity {
                    for &i in group {
                        flo[i] = hi[i];
                        fhi[i] = hi[i];
                    }
                    remaining -= capacity;
                } else {
                    if remaining > 0.0 {
                        for &i in group {
                            fhi[i] = hi[i];
                        }
                    }
                    break;
                }
                start = end;
            }
            let fixed_target = flo.iter().sum::<f64>() + remaining.max(0.0);
            let face = FeasibleSet::box_hyperplane(flo, fhi, fixed_target.min(*target_sum))?;
            if face_is_whole(set, &face)? {
                return Err(Error::invalid("degenerate objective: every feasible point solves the LP"));
            }
            Ok(face)
        }
        _ => Err(Error::UnsupportedSet("LP face needs a Box or BoxHyperplane".into())),
    }
}

fn face_is_whole(set: &FeasibleSet, face: &FeasibleSet) -> Result<bool> {
    Ok(set.vertices()?.iter().all(|v| face.contains(v, 1e-12)))
}

fn sharpness(set: &FeasibleSet, face: &FeasibleSet, cost: &[f64]) -> Result<f64> {
    let verts = set.vertices()?;
    let x_star = face.project(&verts[0])?;
    let base = linalg::dot(cost, &x_star);
    let mut alpha = f64::INFINITY;
    for v in &verts {
        let d = linalg::dist(v, &face.project(v)?);
        if d > 1e-12 {
            alpha = alpha.min((linalg::dot(cost, v) - base) / d);
        }
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::invalid("degenerate objective: sharpness is undefined"));
    }
    Ok(alpha)
}
