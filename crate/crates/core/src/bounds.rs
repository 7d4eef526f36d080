//! Closed-form constants and error bounds for the coupled schemes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::RateConstants;
use crate::steplengths::Window;

/// A bound value with the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub name: String,
    pub value: f64,
    pub inputs: BTreeMap<String, f64>,
}

impl BoundReport {
    pub fn new(name: impl Into<String>, value: f64, inputs: &[(&str, f64)]) -> Self {
        BoundReport {
            name: name.into(),
            value,
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

fn checked_sqrt(what: &str, radicand: f64) -> Result<f64> {
    if radicand < 0.0 || radicand.is_nan() {
        return Err(Error::invalid(format!("{what}: negative radicand {radicand} (steplength too large)")));
    }
    Ok(radicand.sqrt())
}

/// `(√(1 − 2μγ + γ²L²), √(1 − 2γε + γ²(L² + ε²)))`.
pub fn contraction_factors(gamma: f64, mu: f64, l: f64, eps: f64) -> Result<(f64, f64)> {
    if !(gamma > 0.0) {
        return Err(Error::invalid("gamma must be > 0"));
    }
    let strong = checked_sqrt("strong contraction", 1.0 - 2.0 * mu * gamma + gamma * gamma * l * l)?;
    let reg = checked_sqrt("regularized contraction", 1.0 - 2.0 * gamma * eps + gamma * gamma * (l * l + eps * eps))?;
    Ok((strong, reg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongRateConstants {
    pub q_theta: f64,
    pub m_tilde_sq: f64,
    pub q_x: f64,
}

/// `max{λ_θ² M_θ² / (2μ_θλ_θ − 1), e1_θ}`.
pub fn q_theta(lambda_theta: f64, mu_theta: f64, m_theta_sq: f64, e1_theta: f64) -> Result<f64> {
    let d = 2.0 * mu_theta * lambda_theta - 1.0;
    if !(d > 0.0) {
        return Err(Error::invalid(format!(
            "need lambda_theta > 1/(2 mu_theta), got lambda_theta = {lambda_theta}, mu_theta = {mu_theta}"
        )));
    }
    Ok((lambda_theta * lambda_theta * m_theta_sq / d).max(e1_theta))
}

/// Rate constants for `1/k` steps under strong convexity: `E‖θ^k − θ*‖² ≤ Q_θ/k`
/// and `E‖x^k − x*‖² ≤ Q_x/k`.
pub fn rate_constants(
    lambda_x: f64,
    lambda_theta: f64,
    c: &RateConstants,
    e1_x: f64,
    e1_theta: f64,
) -> Result<StrongRateConstants> {
    let qt = q_theta(lambda_theta, c.mu_theta, c.m_theta_sq, e1_theta)?;
    let d = c.mu_x * lambda_x - 1.0;
    if !(d > 0.0) {
        return Err(Error::invalid(format!(
            "need lambda_x > 1/mu_x, got lambda_x = {lambda_x}, mu_x = {}",
            c.mu_x
        )));
    }
    let m_tilde_sq = c.m_sq + c.l_theta * c.l_theta * qt / (c.mu_x * lambda_x);
    let q_x = (lambda_x * lambda_x * m_tilde_sq / d).max(e1_x);
    Ok(StrongRateConstants {
        q_theta: qt,
        m_tilde_sq,
        q_x,
    })
}

fn log_term(k: usize, window: Window) -> f64 {
    match window {
        Window::Full => 1.0 + (k as f64).ln(),
        Window::TailHalf => 1.0 + 2f64.ln(),
    }
}

fn check_window(i: usize, k: usize, window: Window) -> Result<()> {
    if i < 1 || i > k {
        return Err(Error::invalid(format!("window start {i} outside [1, {k}]")));
    }
    if window == Window::TailHalf && (k % 2 == 1 || i != k / 2) {
        return Err(Error::invalid(format!("tail-half window needs even K and i = K/2, got i = {i}, K = {k}")));
    }
    Ok(())
}

/// `(4D_X² + L_θ²Q_θ·log) (M² + M_x²)` with the window's log factor.
pub fn b_constant(k: usize, window: Window, d_x: f64, l_theta: f64, q_theta: f64, m_sq: f64, m_x_sq: f64) -> f64 {
    (4.0 * d_x * d_x + l_theta * l_theta * q_theta * log_term(k, window)) * (m_sq + m_x_sq)
}

/// `C_{i,K} = K/(K − i + 1)`, or 2 for the tail-half window.
pub fn window_factor(i: usize, k: usize, window: Window) -> f64 {
    match window {
        Window::Full => k as f64 / (k - i + 1) as f64,
        Window::TailHalf => 2.0,
    }
}

/// Bound on `|E f(x̃_{i,K}; θ^K) − f(x*; θ*)|` under the optimal constant `γ_x`.
#[allow(clippy::too_many_arguments)]
pub fn averaged_gap_bound(
    i: usize,
    k: usize,
    window: Window,
    d_x: f64,
    l_theta: f64,
    q_theta: f64,
    m_sq: f64,
    m_x_sq: f64,
    d_theta: f64,
) -> Result<f64> {
    check_window(i, k, window)?;
    let b = b_constant(k, window, d_x, l_theta, q_theta, m_sq, m_x_sq);
    let c = window_factor(i, k, window);
    Ok((q_theta.sqrt() * d_theta + c * b.sqrt()) / (k as f64).sqrt())
}

/// The averaged-gap bound for an arbitrary constant `γ_x`, before the
/// steplength is optimized:
/// `[4D² + L²Q(1+ln K) + (K−i+1)γ²(M²+M_x²)] / (2(K−i+1)γ) + √Q D_θ/√K`.
#[allow(clippy::too_many_arguments)]
pub fn averaged_gap_bound_at_gamma(
    i: usize,
    k: usize,
    gamma_x: f64,
    d_x: f64,
    l_theta: f64,
    q_theta: f64,
    m_sq: f64,
    m_x_sq: f64,
    d_theta: f64,
) -> Result<f64> {
    check_window(i, k, Window::Full)?;
    if !(gamma_x > 0.0) {
        return Err(Error::invalid("gamma_x must be > 0"));
    }
    let len = (k - i + 1) as f64;
    let num = 4.0 * d_x * d_x + l_theta * l_theta * q_theta * log_term(k, Window::Full) + len * gamma_x * gamma_x * (m_sq + m_x_sq);
    Ok(num / (2.0 * len * gamma_x) + q_theta.sqrt() * d_theta / (k as f64).sqrt())
}

/// Bound on `α E dist(x̃_{i,K}, X*)` for weak-sharp VIs: `C_{i,K} √(B_K/K)`.
#[allow(clippy::too_many_arguments)]
pub fn sharp_averaged_bound(
    i: usize,
    k: usize,
    window: Window,
    d_x: f64,
    l_theta: f64,
    q_theta: f64,
    m_sq: f64,
    m_x_sq: f64,
) -> Result<f64> {
    check_window(i, k, window)?;
    let b = b_constant(k, window, d_x, l_theta, q_theta, m_sq, m_x_sq);
    Ok(window_factor(i, k, window) * (b / k as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimsupSetting {
    /// Bounds `limsup ½E‖x^k − x*‖²` for strongly convex objectives.
    OptStrong,
    /// Bounds `limsup |E f(x^k; θ^k) − f(x*; θ*)|` for convex objectives.
    OptConvex,
    /// Bounds `limsup ½E‖x^k − x*‖²` for strongly monotone maps.
    ViStrong,
    /// Bounds `limsup E dist(x^k, X*)` for weak-sharp VIs.
    ViSharp,
}

/// `limsup E‖θ^k − θ*‖² ≤ γ_θν_θ²/(2μ_θ − γ_θC_θ²)`.
pub fn theta_limsup(gamma_theta: f64, c: &RateConstants) -> Result<f64> {
    let d = 2.0 * c.mu_theta - gamma_theta * c.c_theta * c.c_theta;
    if !(d > 0.0) {
        return Err(Error::invalid("need 2 mu_theta - gamma_theta C_theta^2 > 0"));
    }
    if !(gamma_theta >= 0.0) {
        return Err(Error::invalid("gamma_theta must be >= 0"));
    }
    Ok(gamma_theta * c.nu_theta_sq / d)
}

/// Asymptotic error level under constant steplengths.
pub fn constant_step_limsup(
    setting: LimsupSetting,
    gamma_x: f64,
    gamma_theta: f64,
    tau: f64,
    c: &RateConstants,
) -> Result<f64> {
    if !(gamma_x >= 0.0) {
        return Err(Error::invalid("gamma_x must be >= 0"));
    }
    let th = theta_limsup(gamma_theta, c)?;
    let l2 = c.l_theta * c.l_theta;
    match setting {
        LimsupSetting::OptStrong | LimsupSetting::ViStrong => {
            if !(c.mu_x > 0.0) {
                return Err(Error::invalid("strong setting needs mu_x > 0"));
            }
            Ok(gamma_x * c.m_sq / (2.0 * c.mu_x) + l2 * th / (2.0 * c.mu_x * c.mu_x))
        }
        LimsupSetting::OptConvex | LimsupSetting::ViSharp => {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::invalid("tau must lie in (0, 1)"));
            }
            if !(gamma_x > 0.0) {
                return Err(Error::invalid("gamma_x must be > 0"));
            }
            let core = 0.5 * gamma_x * c.m_sq
                + 0.5 * gamma_x.powf(1.0 - tau) * c.m_x_sq
                + 0.5 * gamma_x.powf(tau - 1.0) * l2 * th;
            if setting == LimsupSetting::OptConvex {
                Ok(core + c.d_theta * th.sqrt())
            } else {
                match c.alpha_sharp {
                    Some(a) if a > 0.0 => Ok(core / a),
                    _ => Err(Error::invalid("sharp setting needs alpha_sharp > 0")),
                }
            }
        }
    }
}

/// Bound on the misspecified regret `R_K/K` for `γ_x = k^{-α}`.
#[allow(clippy::too_many_arguments)]
pub fn regret_bound(
    k: usize,
    alpha: f64,
    beta: f64,
    m_x_sq: f64,
    m_sq: f64,
    d_theta: f64,
    q_theta: f64,
    l_theta: f64,
) -> Result<f64> {
    if k < 1 {
        return Err(Error::invalid("K must be >= 1"));
    }
    if !(0.5..1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha = {alpha} must lie in [0.5, 1)")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(format!("beta = {beta} must lie in (0, 1)")));
    }
    let kf = k as f64;
    Ok(m_x_sq * kf.powf(alpha - 1.0) / 2.0
        + m_sq * (kf.powf(1.0 - alpha) - alpha) / (2.0 * (1.0 - alpha) * kf)
        + d_theta * q_theta.sqrt() * (2.0 * kf.sqrt() - 1.0) / kf
        + m_x_sq / (2.0 * kf.powf(beta))
        + l_theta * l_theta * q_theta * (kf.ln() + 1.0) / (2.0 * kf.powf(1.0 - beta)))
}

/// Distance between consecutive regularized solutions: `M(ε_prev − ε_cur)/ε_cur`.
pub fn tikhonov_drift(m: f64, eps_prev: f64, eps_cur: f64) -> Result<f64> {
    if !(eps_cur > 0.0) {
        return Err(Error::invalid("eps_cur must be > 0"));
    }
    if eps_prev < eps_cur {
        return Err(Error::invalid("eps_prev must be >= eps_cur"));
    }
    if !(m >= 0.0) {
        return Err(Error::invalid("M must be >= 0"));
    }
    Ok(m * (eps_prev - eps_cur) / eps_cur)
}

/// Regret bound of projected online gradient with `η_t = t^{-1/2}`:
/// `‖F‖²√T/2 + (√T − ½)‖∇c‖²`.
pub fn greedy_projection_regret_bound(t: usize, diameter: f64, grad_bound: f64) -> f64 {
    let st = (t as f64).sqrt();
    diameter * diameter * st / 2.0 + (st - 0.5) * grad_bound * grad_bound
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn contraction_examples() {
        let (q, _) = contraction_factors(0.25, 1.0, 2.0, 0.0).unwrap();
        assert!((q - 0.75f64.sqrt()).abs() < 1e-15);
        assert!((q - 0.86603).abs() < 1e-5);
        let (q, _) = contraction_factors(1e-300, 1.0, 2.0, 0.0).unwrap();
        assert_eq!(q, 1.0);
        let (_, qr) = contraction_factors(0.1, 0.0, 1.0, 0.5).unwrap();
        assert!((qr - 0.9125f64.sqrt()).abs() < 1e-15);
        assert!((qr - 0.95525).abs() < 1e-5);
        assert!(contraction_factors(0.0, 1.0, 1.0, 0.0).is_err());
        // 1 − 2·1·0.6 + 0.36·0.5² < 0
        assert!(contraction_factors(0.6, 1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn rate_constant_examples() {
        let q = q_theta(40.0, 1.0, 1.0, 4.0).unwrap();
        assert!((q - 1600.0 / 79.0).abs() < 1e-12);
        assert!((q - 20.2532).abs() < 1e-4);

        let c = RateConstants {
            mu_x: 1.0,
            mu_theta: 1.0,
            m_sq: 1.0,
            m_theta_sq: 1.0,
            l_theta: 0.0,
            ..Default::default()
        };
        let r = rate_constants(2.0, 40.0, &c, 0.0, 0.0).unwrap();
        assert_eq!(r.m_tilde_sq, 1.0);
        assert!((r.q_x - 4.0).abs() < 1e-15);
        assert!(rate_constants(1.0, 40.0, &c, 0.0, 0.0).is_err());
        assert!(rate_constants(2.0, 0.5, &c, 0.0, 0.0).is_err());
    }

    #[test]
    fn averaged_gap_examples() {
        let v = averaged_gap_bound(1, 100, Window::Full, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        assert!((v - (8.0f64 / 100.0).sqrt()).abs() < 1e-15);
        assert!((v - 0.28284).abs() < 1e-5);

        let single = averaged_gap_bound(100, 100, Window::Full, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0).unwrap();
        assert!((single - 100.0 * v).abs() < 1e-12);

        let v = averaged_gap_bound(50, 100, Window::TailHalf, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let oracle = (1.0 + 2.0 * ((4.0 + 1.0 + 2f64.ln()) * 2.0).sqrt()) / 10.0;
        assert!((v - oracle).abs() < 1e-15);
        assert!((v - 0.77498).abs() < 2e-4);

        assert!(averaged_gap_bound(10, 100, Window::TailHalf, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(averaged_gap_bound(0, 100, Window::Full, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn limsup_examples() {
        let c = RateConstants {
            mu_x: 1.0,
            m_sq: 1.0,
            l_theta: 1.0,
            nu_theta_sq: 1.0,
            mu_theta: 1.0,
            c_theta: 1.0,
            m_x_sq: 2.0,
            d_theta: 3.0,
            alpha_sharp: Some(2.0),
            ..Default::default()
        };
        let v = constant_step_limsup(LimsupSetting::OptStrong, 0.01, 0.01, 0.5, &c).unwrap();
        assert!((v - (0.005 + 0.5 * 0.01 / 1.99)).abs() < 1e-15);
        assert!((v - 0.0075126).abs() < 1e-7);
        let tiny = constant_step_limsup(LimsupSetting::OptStrong, 1e-12, 1e-12, 0.5, &c).unwrap();
        assert!(tiny < 1e-11);

        let convex = constant_step_limsup(LimsupSetting::OptConvex, 0.01, 0.01, 0.5, &c).unwrap();
        let th: f64 = 0.01 / 1.99;
        let dterm = 3.0 * th.sqrt();
        let sharp = constant_step_limsup(LimsupSetting::ViSharp, 0.01, 0.01, 0.5, &c).unwrap();
        assert!((sharp - (convex - dterm) / 2.0).abs() < 1e-14);

        assert!(constant_step_limsup(LimsupSetting::OptStrong, 0.01, 3.0, 0.5, &c).is_err());
        assert!(constant_step_limsup(LimsupSetting::OptConvex, 0.01, 0.01, 1.0, &c).is_err());
    }

    #[test]
    fn regret_examples() {
        assert_eq!(regret_bound(100, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        let v = regret_bound(100, 0.5, 0.5, 1.0, 1.0, 0.0, 0.0, 0.0).unwrap();
        assert!((v - 0.195).abs() < 1e-15);
        let b = |k| regret_bound(k, 0.5, 0.5, 1.0, 1.0, 0.0, 0.0, 0.0).unwrap();
        assert!(b(1000) <= b(100) && b(10_000) <= b(1000));
        assert!(regret_bound(100, 1.0, 0.5, 1.0, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn drift_examples() {
        assert_eq!(tikhonov_drift(3.0, 0.4, 0.4).unwrap(), 0.0);
        assert_eq!(tikhonov_drift(2.0, 1.0, 0.5).unwrap(), 2.0);
        assert_eq!(tikhonov_drift(0.0, 1.0, 0.5).unwrap(), 0.0);
        assert!(tikhonov_drift(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn optimal_gamma_minimizes_presubstitution_bound() {
        use crate::steplengths::optimal_constant_gamma;
        let (k, d, l, q, m, mx, dt) = (1000, 1.3, 0.7, 2.5, 3.0, 1.5, 0.4);
        let g_star = optimal_constant_gamma(k, Window::Full, d, l, q, m, mx).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        for j in 1..=200_000 {
            let g = g_star * 4.0 * j as f64 / 200_000.0;
            let v = averaged_gap_bound_at_gamma(1, k, g, d, l, q, m, mx, dt).unwrap();
            if v < best.0 {
                best = (v, g);
            }
        }
        assert!((best.1 - g_star).abs() <= 1e-3 * g_star);
        let at_star = averaged_gap_bound_at_gamma(1, k, g_star, d, l, q, m, mx, dt).unwrap();
        let closed = averaged_gap_bound(1, k, Window::Full, d, l, q, m, mx, dt).unwrap();
        assert!((at_star - closed).abs() < 1e-12);
    }

    #[test]
    fn q_over_k_nonincreasing() {
        let c = RateConstants {
            mu_x: 1.0,
            mu_theta: 1.0,
            m_sq: 2.0,
            m_theta_sq: 3.0,
            l_theta: 1.0,
            ..Default::default()
        };
        let r = rate_constants(1.5, 1.5, &c, 0.0, 0.0).unwrap();
        for k in 1..1000 {
            let (a, b) = (k as f64, (k + 1) as f64);
            assert!(r.q_x / b <= r.q_x / a && r.q_theta / b <= r.q_theta / a);
        }
    }

    proptest! {
        #[test]
        fn strong_factor_below_one_iff_small_step(gamma in 1e-4..5.0f64, mu in 0.01..3.0f64, extra in 0.0..3.0f64) {
            let l = mu + extra;
            let r = 1.0 - 2.0 * mu * gamma + gamma * gamma * l * l;
            prop_assume!(r >= 0.0);
            let (q, _) = contraction_factors(gamma, mu, l, 0.0).unwrap();
            let threshold = 2.0 * mu / (l * l);
            prop_assume!((gamma - threshold).abs() > 1e-9);
            prop_assert_eq!(q < 1.0, gamma < threshold);
        }
    }
}
