use serde::{Deserialize, Serialize};

use super::{MisspecifiedProblem, Model, RateConstants};
use crate::error::{Error, Result};
use crate::rng::{Stream, INSTANCE_GEN};
use crate::sets::FeasibleSet;

/// Which true cost coefficient sets the width of the uniform cost noise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// Width `h_fi`.
    #[default]
    Linear,
    /// Width `d_fi`.
    Quadratic,
}

/// Economic dispatch over `n_firms` generators and `n_nodes` demand nodes.
/// Matrices are indexed `[firm][node]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchInstance {
    pub n_firms: usize,
    pub n_nodes: usize,
    pub d: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub cap: Vec<Vec<f64>>,
    pub demand: Vec<f64>,
    pub reg: f64,
    #[serde(default)]
    pub noise_scale: NoiseScale,
}

impl DispatchInstance {
    /// Random instance: `d ~ U[1,3]`, `h ~ U[0.5,2]`, `cap ~ U[0.5,1.5]`,
    /// demand at 60% of node capacity, `reg = 0.05`.
    pub fn random(n_firms: usize, n_nodes: usize, seed: u64) -> Result<Self> {
        let mut s = Stream::new(seed, INSTANCE_GEN);
        let mut draw = |lo: f64, hi: f64| -> Result<Vec<Vec<f64>>> {
            (0..n_firms)
                .map(|_| (0..n_nodes).map(|_| s.uniform(lo, hi)).collect())
                .collect()
        };
        let d = draw(1.0, 3.0)?;
        let h = draw(0.5, 2.0)?;
        let cap = draw(0.5, 1.5)?;
        let demand = (0..n_nodes)
            .map(|i| 0.6 * (0..n_firms).map(|f| cap[f][i]).sum::<f64>())
            .collect();
        let inst = DispatchInstance {
            n_firms,
            n_nodes,
            d,
            h,
            cap,
            demand,
            reg: 0.05,
            noise_scale: NoiseScale::Linear,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, w) = (self.n_firms, self.n_nodes);
        if n == 0 || w == 0 {
            return Err(Error::invalid("dispatch needs at least one firm and one node"));
        }
        for (name, m) in [("d", &self.d), ("h", &self.h), ("cap", &self.cap)] {
            if m.len() != n || m.iter().any(|r| r.len() != w) {
                return Err(Error::invalid(format!("{name} must be {n}x{w}")));
            }
            if m.iter().flatten().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::invalid(format!("{name} entries must be positive and finite")));
            }
        }
        if self.demand.len() != w || self.demand.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("demand must have one positive entry per node"));
        }
        if !(self.reg > 0.0) {
            return Err(Error::invalid("reg must be > 0"));
        }
        for i in 0..w {
            let total: f64 = (0..n).map(|f| self.cap[f][i]).sum();
            if total < self.demand[i] {
                return Err(Error::InfeasibleSet(format!(
                    "node {i}: capacity {total} below demand {}",
                    self.demand[i]
                )));
            }
        }
        Ok(())
    }
}

/// Flattened dispatch oracles. Pair `p = node * n_firms + firm`; `θ` stacks
/// the quadratic estimates then the linear estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchModel {
    pub n_firms: usize,
    pub n_nodes: usize,
    pub d_true: Vec<f64>,
    pub h_true: Vec<f64>,
    pub cap: Vec<f64>,
    pub noise_width: Vec<f64>,
    pub reg: f64,
}

impl DispatchModel {
    fn pairs(&self) -> usize {
        self.cap.len()
    }

    pub fn comp(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let p = self.pairs();
        (0..p).map(|j| 2.0 * theta[j] * x[j] + theta[p + j]).collect()
    }

    /// Moments `E[y^2], E[y^3], E[y^4]` for `y ~ U[0, cap]`.
    fn moments(cap: f64) -> (f64, f64, f64) {
        (cap.powi(2) / 3.0, cap.powi(3) / 4.0, cap.powi(4) / 5.0)
    }

    pub fn learn(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.pairs();
        let mut out = vec![0.0; 2 * p];
        for j in 0..p {
            let (e2, e3, e4) = Self::moments(self.cap[j]);
            let da = theta[j] - self.d_true[j];
            let db = theta[p + j] - self.h_true[j];
            out[j] = 2.0 * (da * e4 + db * e3) + 2.0 * self.reg * theta[j];
            out[p + j] = 2.0 * (da * e3 + db * e2) + 2.0 * self.reg * theta[p + j];
        }
        out
    }

    pub fn objective(&self, x: &[f64], theta: &[f64]) -> f64 {
        let p = self.pairs();
        (0..p).map(|j| theta[j] * x[j] * x[j] + theta[p + j] * x[j]).sum()
    }

    fn half_noise(&self, j: usize, s: &mut Stream) -> Result<f64> {
        let w = 0.5 * self.noise_width[j];
        s.uniform(-w, w)
    }

    pub fn comp_sample(&self, x: &[f64], theta: &[f64], stream: &mut Stream) -> Result<Vec<f64>> {
        let mut g = self.comp(x, theta);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += self.half_noise(j, stream)?;
        }
        Ok(g)
    }

    /// Sampled cost `Σ d̂x² + (ĥ + ξ)x`, consuming draws as `comp_sample` does.
    pub fn sampled_objective(&self, x: &[f64], theta: &[f64], stream: &mut Stream) -> Result<f64> {
        let p = self.pairs();
        let mut acc = 0.0;
        for j in 0..p {
            let xi = self.half_noise(j, stream)?;
            acc += theta[j] * x[j] * x[j] + (theta[p + j] + xi) * x[j];
        }
        Ok(acc)
    }

    fn learn_draw(&self, j: usize, stream: &mut Stream) -> Result<(f64, f64)> {
        let y = stream.uniform(0.0, self.cap[j])?;
        let c = self.d_true[j] * y * y + self.h_true[j] * y + self.half_noise(j, stream)?;
        Ok((y, c))
    }

    pub fn learn_sample(&self, theta: &[f64], stream: &mut Stream) -> Result<Vec<f64>> {
        let p = self.pairs();
        let mut out = vec![0.0; 2 * p];
        for j in 0..p {
            let (y, c) = self.learn_draw(j, stream)?;
            let r = theta[j] * y * y + theta[p + j] * y - c;
            out[j] = 2.0 * r * y * y + 2.0 * self.reg * theta[j];
            out[p + j] = 2.0 * r * y + 2.0 * self.reg * theta[p + j];
        }
        Ok(out)
    }

    /// Sampled regularized squared residual, consuming draws as `learn_sample` does.
    pub fn learn_sample_objective(&self, theta: &[f64], stream: &mut Stream) -> Result<f64> {
        let p = self.pairs();
        let mut acc = 0.0;
        for j in 0..p {
            let (y, c) = self.learn_draw(j, stream)?;
            let r = theta[j] * y * y + theta[p + j] * y - c;
            acc += r * r + self.reg * (theta[j] * theta[j] + theta[p + j] * theta[p + j]);
        }
        Ok(acc)
    }

    /// Per-pair Hessian of the expected learning objective, `[[kaa, kab], [kab, kbb]]`.
    fn hessian(&self, j: usize) -> (f64, f64, f64) {
        let (e2, e3, e4) = Self::moments(self.cap[j]);
        (2.0 * e4 + 2.0 * self.reg, 2.0 * e3, 2.0 * e2 + 2.0 * self.reg)
    }

    /// Exact minimizer of one pair's expected learning objective over `[0, upper]²`.
    fn solve_pair(&self, j: usize, upper: f64) -> (f64, f64) {
        let (kaa, kab, kbb) = self.hessian(j);
        let (e2, e3, e4) = Self::moments(self.cap[j]);
        let (d, h) = (self.d_true[j], self.h_true[j]);
        // linear term of the gradient: K θ − rhs
        let ra = 2.0 * (e4 * d + e3 * h);
        let rb = 2.0 * (e3 * d + e2 * h);
        let q = |a: f64, b: f64| 0.5 * (kaa * a * a + 2.0 * kab * a * b + kbb * b * b) - ra * a - rb * b;
        let det = kaa * kbb - kab * kab;
        let mut cands = vec![];
        let (ua, ub) = ((kbb * ra - kab * rb) / det, (kaa * rb - kab * ra) / det);
        if (0.0..=upper).contains(&ua) && (0.0..=upper).contains(&ub) {
            cands.push((ua, ub));
        }
        for a in [0.0, upper] {
            cands.push((a, ((rb - kab * a) / kbb).clamp(0.0, upper)));
        }
        for b in [0.0, upper] {
            cands.push((((ra - kab * b) / kaa).clamp(0.0, upper), b));
        }
        cands
            .into_iter()
            .min_by(|x, y| q(x.0, x.1).total_cmp(&q(y.0, y.1)))
            .expect("nonempty")
    }
}

fn sym2_eigs(a: f64, b: f64, c: f64) -> (f64, f64) {
    let m = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (m - r, m + r)
}

/// Builds the dispatch problem; `true_theta` is the regularized estimate
/// minimizing the expected learning objective over `Θ`.
pub fn make_dispatch(inst: &DispatchInstance) -> Result<MisspecifiedProblem> {
    inst.validate()?;
    let (n, w) = (inst.n_firms, inst.n_nodes);
    let flat = |m: &Vec<Vec<f64>>| -> Vec<f64> {
        (0..w).flat_map(|i| (0..n).map(move |f| (f, i))).map(|(f, i)| m[f][i]).collect()
    };
    let d_true = flat(&inst.d);
    let h_true = flat(&inst.h);
    let cap = flat(&inst.cap);
    let noise_width = match inst.noise_scale {
        NoiseScale::Linear => h_true.clone(),
        NoiseScale::Quadratic => d_true.clone(),
    };
    let model = DispatchModel {
        n_firms: n,
        n_nodes: w,
        d_true: d_true.clone(),
        h_true: h_true.clone(),
        cap: cap.clone(),
        noise_width: noise_width.clone(),
        reg: inst.reg,
    };
    let p = cap.len();
    let upper: Vec<f64> = (0..p).map(|j| 2.0 * d_true[j].max(h_true[j])).collect();

    let x_set = FeasibleSet::product(
        (0..w)
            .map(|i| {
                FeasibleSet::box_hyperplane(
                    vec![0.0; n],
                    (0..n).map(|f| inst.cap[f][i]).collect(),
                    inst.demand[i],
                )
            })
            .collect::<Result<_>>()?,
    )?;
    let mut hi = upper.clone();
    hi.extend_from_slice(&upper);
    let theta_set = FeasibleSet::boxed(vec![0.0; 2 * p], hi)?;

    let mut theta_star = vec![0.0; 2 * p];
    for j in 0..p {
        let (a, b) = model.solve_pair(j, upper[j]);
        theta_star[j] = a;
        theta_star[p + j] = b;
    }

    let (mut mu_theta, mut c_theta) = (f64::INFINITY, 0.0f64);
    for j in 0..p {
        let (kaa, kab, kbb) = model.hessian(j);
        let (lo, hi) = sym2_eigs(kaa, kab, kbb);
        mu_theta = mu_theta.min(lo);
        c_theta = c_theta.max(hi);
    }
    let nu_x_sq: f64 = noise_width.iter().map(|s| s * s / 12.0).sum();
    let mut nu_theta_sq = 0.0;
    let mut m_theta_sq = 0.0;
    let mut m_sq = nu_x_sq;
    for j in 0..p {
        let (c, u, s) = (cap[j], upper[j], noise_width[j]);
        let rmax = u * c * c + u * c + 0.5 * s;
        let yscale = (c.powi(4) + c * c).sqrt();
        nu_theta_sq += 4.0 * rmax * rmax * yscale * yscale;
        m_theta_sq += (2.0 * rmax * yscale + 2.0 * inst.reg * u * std::f64::consts::SQRT_2).powi(2);
        m_sq += (2.0 * u * c + u).powi(2);
    }

    let constants = RateConstants {
        mu_x: 2.0 * theta_star[..p].iter().copied().fold(f64::INFINITY, f64::min),
        l_x: 2.0 * upper.iter().copied().fold(0.0, f64::max),
        l_theta: cap.iter().map(|c| (4.0 * c * c + 1.0).sqrt()).fold(0.0, f64::max),
        mu_theta,
        c_theta,
        d_theta: cap.iter().map(|c| c.powi(4) + c * c).sum::<f64>().sqrt(),
        nu_x_sq,
        nu_theta_sq,
        m_sq,
        m_theta_sq,
        m_x_sq: 0.0,
        d_x: 0.0,
        alpha_sharp: None,
    };

    Ok(MisspecifiedProblem {
        name: "dispatch".into(),
        x_set,
        theta_set,
        constants,
        true_theta: theta_star,
        model: Model::Dispatch(model),
        exact_objective: true,
        solution_face: None,
    })
}
