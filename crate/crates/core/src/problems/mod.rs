//! Misspecified problem instances: paired computational and learning oracles.

mod affine;
mod dispatch;

pub use affine::{
    make_affine_vi, make_convex_quadratic, make_quadratic, make_quadratic_with, make_sharp_lp_vi, make_skew_vi,
    AffineModel, ObjectiveForm,
};
pub use dispatch::{make_dispatch, DispatchInstance, DispatchModel, NoiseScale};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{DrawCursor, Stream};
use crate::sets::FeasibleSet;

/// Tolerance for the feasibility checks on oracle inputs.
pub const INPUT_TOL: f64 = 1e-9;

/// Problem constants consumed by the bound calculators.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub mu_x: f64,
    pub l_x: f64,
    pub l_theta: f64,
    pub mu_theta: f64,
    pub c_theta: f64,
    pub d_theta: f64,
    pub nu_x_sq: f64,
    pub nu_theta_sq: f64,
    pub m_sq: f64,
    pub m_theta_sq: f64,
    pub m_x_sq: f64,
    pub d_x: f64,
    #[serde(default)]
    pub alpha_sharp: Option<f64>,
}

impl RateConstants {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("mu_x", self.mu_x),
            ("l_x", self.l_x),
            ("l_theta", self.l_theta),
            ("mu_theta", self.mu_theta),
            ("c_theta", self.c_theta),
            ("d_theta", self.d_theta),
            ("nu_x_sq", self.nu_x_sq),
            ("nu_theta_sq", self.nu_theta_sq),
            ("m_sq", self.m_sq),
            ("m_theta_sq", self.m_theta_sq),
            ("m_x_sq", self.m_x_sq),
            ("d_x", self.d_x),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| !(*v >= 0.0)) {
            return Err(Error::invalid(format!("constant {name} = {v} must be >= 0")));
        }
        if self.mu_x > 0.0 && self.l_x > 0.0 && self.mu_x > self.l_x * (1.0 + 1e-12) {
            return Err(Error::invalid("mu_x exceeds l_x"));
        }
        if self.mu_theta > 0.0 && self.c_theta > 0.0 && self.mu_theta > self.c_theta * (1.0 + 1e-12) {
            return Err(Error::invalid("mu_theta exceeds c_theta"));
        }
        if let Some(a) = self.alpha_sharp {
            if !(a > 0.0) {
                return Err(Error::invalid("alpha_sharp must be > 0"));
            }
        }
        Ok(())
    }

    /// Fills the geometry-dependent constants: `m_x_sq` from the solution and
    /// `d_x` from the starting point.
    pub fn with_geometry(mut self, x_set: &FeasibleSet, x_star: &[f64], x0: &[f64]) -> Result<Self> {
        self.m_x_sq = x_set.max_distance_from(x_star)?.powi(2);
        self.d_x = x_set.max_distance_from(x0)?;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    Affine(AffineModel),
    Dispatch(DispatchModel),
}

/// A computational problem in `x` parameterized by `θ`, and a learning
/// problem whose solution is the true parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisspecifiedProblem {
    pub name: String,
    pub x_set: FeasibleSet,
    pub theta_set: FeasibleSet,
    pub constants: RateConstants,
    /// Solution of the learning problem. Used only by the harness.
    pub true_theta: Vec<f64>,
    pub model: Model,
    /// When false, objective values are estimated by sampling even if a
    /// closed form exists.
    pub exact_objective: bool,
    /// Solution set of the computational problem at `true_theta`, when known
    /// as a face of `x_set`.
    #[serde(default)]
    pub solution_face: Option<FeasibleSet>,
}

impl MisspecifiedProblem {
    pub fn comp_dim(&self) -> usize {
        self.x_set.dim()
    }

    pub fn learn_dim(&self) -> usize {
        self.theta_set.dim()
    }

    /// Map `F(x; θ)` or gradient `∇ₓ f(x; θ)`.
    pub fn comp_true(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        match &self.model {
            Model::Affine(m) => m.comp(x, theta),
            Model::Dispatch(m) => m.comp(x, theta),
        }
    }

    /// `G(θ)` or `∇ g(θ)`.
    pub fn learn_true(&self, theta: &[f64]) -> Vec<f64> {
        match &self.model {
            Model::Affine(m) => m.learn(theta),
            Model::Dispatch(m) => m.learn(theta),
        }
    }

    pub fn has_objective(&self) -> bool {
        match &self.model {
            Model::Affine(m) => m.objective != ObjectiveForm::None,
            Model::Dispatch(_) => true,
        }
    }

    /// Closed-form objective `f(x; θ)`; `None` for pure VIs or when exact
    /// evaluation is switched off.
    pub fn objective_true(&self, x: &[f64], theta: &[f64]) -> Option<f64> {
        if !self.exact_objective {
            return None;
        }
        match &self.model {
            Model::Affine(m) => m.objective(x, theta),
            Model::Dispatch(m) => Some(m.objective(x, theta)),
        }
    }

    /// Closed-form objective regardless of the `exact_objective` switch.
    pub fn objective_closed_form(&self, x: &[f64], theta: &[f64]) -> Option<f64> {
        match &self.model {
            Model::Affine(m) => m.objective(x, theta),
            Model::Dispatch(m) => Some(m.objective(x, theta)),
        }
    }

    /// One draw of `f(x; θ, ξ)`.
    pub fn sampled_objective(&self, x: &[f64], theta: &[f64], stream: &mut Stream) -> Result<f64> {
        match &self.model {
            Model::Affine(m) => m
                .sampled_objective(x, theta, stream)
                .ok_or_else(|| Error::Unsupported("problem has no objective".into()))?,
            Model::Dispatch(m) => m.sampled_objective(x, theta, stream),
        }
    }

    pub(crate) fn comp_sample(&self, x: &[f64], theta: &[f64], stream: &mut Stream) -> Result<Vec<f64>> {
        match &self.model {
            Model::Affine(m) => m.comp_sample(x, theta, stream),
            Model::Dispatch(m) => m.comp_sample(x, theta, stream),
        }
    }

    pub(crate) fn learn_sample(&self, theta: &[f64], stream: &mut Stream) -> Result<Vec<f64>> {
        match &self.model {
            Model::Affine(m) => m.learn_sample(theta, stream),
            Model::Dispatch(m) => m.learn_sample(theta, stream),
        }
    }

    /// Draws one computational and one learning sample at the cursor's
    /// current draw index, then advances the cursor.
    pub fn sample_pair(&self, x: &[f64], theta: &[f64], cursor: &mut DrawCursor) -> Result<(Vec<f64>, Vec<f64>)> {
        if !self.x_set.contains(x, INPUT_TOL) {
            return Err(Error::invalid("x is not feasible"));
        }
        if !self.theta_set.contains(theta, INPUT_TOL) {
            return Err(Error::invalid("theta is not feasible"));
        }
        self.sample_pair_unchecked(x, theta, cursor)
    }

    pub(crate) fn sample_pair_unchecked(
        &self,
        x: &[f64],
        theta: &[f64],
        cursor: &mut DrawCursor,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut cs, mut ls) = cursor.next_pair();
        let comp = self.comp_sample(x, theta, &mut cs)?;
        let learn = self.learn_sample(theta, &mut ls)?;
        Ok((comp, learn))
    }

    /// Replaces `constants.m_x_sq` and `constants.d_x` using the given points.
    pub fn with_geometry(mut self, x_star: &[f64], x0: &[f64]) -> Result<Self> {
        self.constants = self.constants.with_geometry(&self.x_set, x_star, x0)?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::rng::COMP_NOISE;
    use nalgebra::DMatrix;

    fn quad(noise: f64) -> MisspecifiedProblem {
        make_quadratic_with(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            vec![1.0, 2.0],
            noise,
            FeasibleSet::cube(2, -10.0, 10.0).unwrap(),
            FeasibleSet::cube(2, -10.0, 10.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn zero_noise_sample_equals_truth() {
        let p = quad(0.0);
        let mut c = DrawCursor::new(3);
        let (cs, ls) = p.sample_pair(&[0.3, -0.2], &[0.5, 0.5], &mut c).unwrap();
        assert_eq!(cs, p.comp_true(&[0.3, -0.2], &[0.5, 0.5]));
        assert_eq!(ls, p.learn_true(&[0.5, 0.5]));
        assert_eq!(c.draw, 1);
    }

    #[test]
    fn identical_cursors_identical_samples() {
        let p = quad(0.7);
        let mut a = DrawCursor::new(99);
        let mut b = DrawCursor::new(99);
        for _ in 0..5 {
            assert_eq!(
                p.sample_pair(&[1.0, 1.0], &[0.0, 0.0], &mut a).unwrap(),
                p.sample_pair(&[1.0, 1.0], &[0.0, 0.0], &mut b).unwrap()
            );
        }
    }

    #[test]
    fn infeasible_inputs_rejected() {
        let p = quad(0.0);
        let mut c = DrawCursor::new(0);
        assert!(matches!(
            p.sample_pair(&[11.0, 0.0], &[0.0, 0.0], &mut c),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sample_mean_matches_truth() {
        let sd = 0.5;
        let p = quad(sd);
        let n = 1_000_000u64;
        let x = [0.2, -0.4];
        let th = [0.1, 0.3];
        let truth = p.comp_true(&x, &th);
        let mut acc = [0.0; 2];
        for draw in 0..n {
            let mut s = Stream::at_draw(5, COMP_NOISE, draw);
            let v = p.comp_sample(&x, &th, &mut s).unwrap();
            linalg::axpy(1.0, &v, &mut acc);
        }
        for i in 0..2 {
            let dev = (acc[i] / n as f64 - truth[i]).abs();
            assert!(dev <= 5.0 * sd / 1e3, "coordinate {i} deviation {dev}");
        }
    }

    #[test]
    fn constants_validation() {
        let mut c = RateConstants {
            mu_x: 2.0,
            l_x: 1.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.l_x = 2.0;
        assert!(c.validate().is_ok());
        c.nu_x_sq = -1.0;
        assert!(c.validate().is_err());
    }
}
