//! Steplength and regularization schedules, and their summability checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::RateConstants;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    StronglyConvex,
    MerelyConvex,
    Regularized,
    Constant,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    /// `γ_x = λ_x/k`, `γ_θ = γ_x L_θ²/(μ_x μ_θ)`.
    CoupledStrong { lambda_x: f64 },
    /// `γ_x = c_x k^{-a}`, `γ_θ = c_θ k^{-b}`.
    PowerLaw {
        c_x: f64,
        a: f64,
        c_theta: f64,
        b: f64,
        tau: f64,
    },
    Constant { gamma_x: f64, gamma_theta: f64 },
    /// Power law plus `ε = eps0 k^{-c_eps}`.
    RegularizedPowerLaw {
        c_x: f64,
        a: f64,
        c_theta: f64,
        b: f64,
        tau: f64,
        eps0: f64,
        c_eps: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteplengthPolicy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    #[serde(default = "default_family")]
    pub family: FamilyTag,
}

fn default_family() -> FamilyTag {
    FamilyTag::Custom
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Steps {
    pub gamma_x: f64,
    pub gamma_theta: f64,
    pub eps: f64,
}

impl SteplengthPolicy {
    pub fn new(kind: PolicyKind, family: FamilyTag) -> Result<Self> {
        let p = SteplengthPolicy { kind, family };
        p.validate()?;
        Ok(p)
    }

    pub fn coupled_strong(lambda_x: f64) -> Result<Self> {
        Self::new(PolicyKind::CoupledStrong { lambda_x }, FamilyTag::StronglyConvex)
    }

    pub fn power_law(c_x: f64, a: f64, c_theta: f64, b: f64, tau: f64) -> Result<Self> {
        Self::new(PolicyKind::PowerLaw { c_x, a, c_theta, b, tau }, FamilyTag::MerelyConvex)
    }

    pub fn constant(gamma_x: f64, gamma_theta: f64) -> Result<Self> {
        Self::new(PolicyKind::Constant { gamma_x, gamma_theta }, FamilyTag::Constant)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn regularized(c_x: f64, a: f64, c_theta: f64, b: f64, tau: f64, eps0: f64, c_eps: f64) -> Result<Self> {
        Self::new(
            PolicyKind::RegularizedPowerLaw { c_x, a, c_theta, b, tau, eps0, c_eps },
            FamilyTag::Regularized,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} must be positive and finite")))
            }
        };
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} must be >= 0")))
            }
        };
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {v} must lie in (0, 1)")))
            }
        };
        match self.kind {
            PolicyKind::CoupledStrong { lambda_x } => pos("lambda_x", lambda_x),
            PolicyKind::PowerLaw { c_x, a, c_theta, b, tau } => {
                pos("c_x", c_x)?;
                pos("c_theta", c_theta)?;
                nonneg("a", a)?;
                nonneg("b", b)?;
                unit("tau", tau)
            }
            PolicyKind::Constant { gamma_x, gamma_theta } => {
                pos("gamma_x", gamma_x)?;
                pos("gamma_theta", gamma_theta)
            }
            PolicyKind::RegularizedPowerLaw { c_x, a, c_theta, b, tau, eps0, c_eps } => {
                pos("c_x", c_x)?;
                pos("c_theta", c_theta)?;
                nonneg("a", a)?;
                nonneg("b", b)?;
                unit("tau", tau)?;
                pos("eps0", eps0)?;
                unit("c_eps", c_eps)
            }
        }
    }

    /// Steps used by iteration `k >= 1`.
    pub fn evaluate(&self, k: usize, constants: &RateConstants) -> Result<Steps> {
        if k == 0 {
            return Err(Error::invalid("iteration index starts at 1"));
        }
        let kf = k as f64;
        Ok(match self.kind {
            PolicyKind::CoupledStrong { lambda_x } => {
                let denom = constants.mu_x * constants.mu_theta;
                if !(denom > 0.0) {
                    return Err(Error::invalid("coupled strong steps need mu_x * mu_theta > 0"));
                }
                let gamma_x = lambda_x / kf;
                Steps {
                    gamma_x,
                    gamma_theta: gamma_x * constants.l_theta.powi(2) / denom,
                    eps: 0.0,
                }
            }
            PolicyKind::PowerLaw { c_x, a, c_theta, b, .. } => Steps {
                gamma_x: c_x * kf.powf(-a),
                gamma_theta: c_theta * kf.powf(-b),
                eps: 0.0,
            },
            PolicyKind::Constant { gamma_x, gamma_theta } => Steps {
                gamma_x,
                gamma_theta,
                eps: 0.0,
            },
            PolicyKind::RegularizedPowerLaw { c_x, a, c_theta, b, eps0, c_eps, .. } => Steps {
                gamma_x: c_x * kf.powf(-a),
                gamma_theta: c_theta * kf.powf(-b),
                eps: eps0 * kf.powf(-c_eps),
            },
        })
    }

    pub fn tau(&self) -> Option<f64> {
        match self.kind {
            PolicyKind::PowerLaw { tau, .. } | PolicyKind::RegularizedPowerLaw { tau, .. } => Some(tau),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clause {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub clauses: Vec<Clause>,
    pub pass: bool,
    /// Finite partial sum of `(ε_{k−1} − ε_k)/ε_k`, for regularized schedules.
    pub drift_partial_sum: Option<f64>,
    /// Set when the drift sum diverges as the horizon grows.
    pub drift_sum_diverges: bool,
}

impl ValidationReport {
    fn from_clauses(clauses: Vec<Clause>) -> Self {
        let pass = clauses.iter().all(|c| c.pass);
        ValidationReport {
            clauses,
            pass,
            drift_partial_sum: None,
            drift_sum_diverges: false,
        }
    }

    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }
}

fn clause(name: &str, pass: bool, detail: String) -> Clause {
    Clause {
        name: name.into(),
        pass,
        detail,
    }
}

fn exponent_clauses(a: f64, b: f64, tau: f64) -> (Clause, Clause, Clause) {
    let s1 = (2.0 - tau) * a;
    (
        clause("summable_x", s1 > 1.0, format!("(2 - tau) a = {s1} > 1")),
        clause("summable_theta", 2.0 * b > 1.0, format!("2 b = {} > 1", 2.0 * b)),
        clause("beta_decreasing", tau * a > b, format!("tau a = {} > b = {b}", tau * a)),
    )
}

/// Exponent checks for a power-law schedule in the merely convex setting.
pub fn validate_a2_2(policy: &SteplengthPolicy) -> Result<ValidationReport> {
    let PolicyKind::PowerLaw { a, b, tau, .. } = policy.kind else {
        return Err(Error::invalid("merely convex validation applies to power-law policies"));
    };
    let (c1, c2, c4) = exponent_clauses(a, b, tau);
    let c3 = clause("divergent_steps", a <= 1.0 && b <= 1.0, format!("a = {a} <= 1 and b = {b} <= 1"));
    Ok(ValidationReport::from_clauses(vec![c1, c2, c3, c4]))
}

/// Exponent checks for a regularized schedule plus the drift partial sum
/// over `k = 2..=horizon`.
pub fn validate_a2_3(policy: &SteplengthPolicy, horizon: usize) -> Result<ValidationReport> {
    let PolicyKind::RegularizedPowerLaw { a, b, tau, eps0, c_eps, .. } = policy.kind else {
        return Err(Error::invalid("regularized validation applies to regularized power-law policies"));
    };
    if horizon < 10 {
        return Err(Error::invalid("horizon must be >= 10"));
    }
    let (c1, c2, c4) = exponent_clauses(a, b, tau);
    let c3 = clause(
        "divergent_steps",
        a + c_eps <= 1.0 && b <= 1.0,
        format!("a + c_eps = {} <= 1 and b = {b} <= 1", a + c_eps),
    );
    let eps = |k: usize| eps0 * (k as f64).powf(-c_eps);
    let partial = drift_partial_sum(eps, horizon);
    let mut r = ValidationReport::from_clauses(vec![c1, c2, c3, c4]);
    r.drift_partial_sum = Some(partial);
    r.drift_sum_diverges = c_eps > 0.0;
    Ok(r)
}

/// `Σ_{k=2}^{horizon} (ε_{k−1} − ε_k)/ε_k`.
pub fn drift_partial_sum(eps: impl Fn(usize) -> f64, horizon: usize) -> f64 {
    (2..=horizon).map(|k| (eps(k - 1) - eps(k)) / eps(k)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// `i = 1`.
    Full,
    /// `i = K/2`.
    TailHalf,
}

impl Window {
    /// First averaged iterate for horizon `k`.
    pub fn start(self, k: usize) -> usize {
        match self {
            Window::Full => 1,
            Window::TailHalf => (k / 2).max(1),
        }
    }
}

/// Constant `γ_x` minimizing the averaged-gap bound.
pub fn optimal_constant_gamma(
    k: usize,
    window: Window,
    d_x: f64,
    l_theta: f64,
    q_theta: f64,
    m_sq: f64,
    m_x_sq: f64,
) -> Result<f64> {
    if k < 2 || (window == Window::TailHalf && k % 2 == 1) {
        return Err(Error::invalid(format!("horizon {k} invalid for {window:?} window")));
    }
    let denom = (m_sq + m_x_sq) * k as f64;
    if !(denom > 0.0) {
        return Err(Error::invalid("M² + M_x² must be positive"));
    }
    let log_term = match window {
        Window::Full => 1.0 + (k as f64).ln(),
        Window::TailHalf => 1.0 + 2f64.ln(),
    };
    Ok(((4.0 * d_x * d_x + l_theta * l_theta * q_theta * log_term) / denom).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coupled_strong_example() {
        let p = SteplengthPolicy::coupled_strong(1.0).unwrap();
        let c = RateConstants {
            mu_x: 2.0,
            mu_theta: 1.0,
            l_theta: 2.0,
            ..Default::default()
        };
        let s = p.evaluate(4, &c).unwrap();
        // γ_x = 1/4, γ_θ = γ_x · 4/2
        assert_eq!((s.gamma_x, s.gamma_theta, s.eps), (0.25, 0.5, 0.0));
        let c0 = RateConstants::default();
        assert!(p.evaluate(4, &c0).is_err());
    }

    #[test]
    fn dispatch_schedule_example() {
        let p = SteplengthPolicy::power_law(1.0, 1.0, 40.0, 1.0, 0.5).unwrap();
        let s = p.evaluate(10, &RateConstants::default()).unwrap();
        assert!((s.gamma_x - 0.1).abs() < 1e-15);
        assert!((s.gamma_theta - 4.0).abs() < 1e-15);
        assert_eq!(s.eps, 0.0);
    }

    #[test]
    fn regularization_schedule_example() {
        let p = SteplengthPolicy::regularized(1.0, 0.5, 1.0, 0.7, 0.9, 1.0, 0.25).unwrap();
        let s = p.evaluate(16, &RateConstants::default()).unwrap();
        assert!((s.eps - 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_policies_rejected() {
        assert!(SteplengthPolicy::power_law(1.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(SteplengthPolicy::power_law(0.0, 1.0, 1.0, 1.0, 0.5).is_err());
        assert!(SteplengthPolicy::regularized(1.0, 0.5, 1.0, 0.7, 0.9, 0.0, 0.25).is_err());
        assert!(SteplengthPolicy::regularized(1.0, 0.5, 1.0, 0.7, 0.9, 1.0, 1.0).is_err());
        assert!(SteplengthPolicy::constant(0.0, 1.0).is_err());
    }

    #[test]
    fn a2_2_examples() {
        let r = validate_a2_2(&SteplengthPolicy::power_law(1.0, 1.0, 1.0, 0.7, 0.9).unwrap()).unwrap();
        assert!(r.pass, "{r:?}");
        let r = validate_a2_2(&SteplengthPolicy::power_law(1.0, 0.75, 1.0, 1.0, 0.5).unwrap()).unwrap();
        assert!(!r.pass);
        assert!(!r.clause("beta_decreasing").unwrap().pass);
        let r = validate_a2_2(&SteplengthPolicy::power_law(1.0, 1.0, 1.0, 1.0, 0.99).unwrap()).unwrap();
        assert!(!r.pass);
        assert!(!r.clause("beta_decreasing").unwrap().pass);
        assert!(r.clause("summable_x").unwrap().pass);
    }

    #[test]
    fn forty_over_k_fails_beta_clause() {
        for alpha in [0.5, 0.7, 0.9, 1.0] {
            let r = validate_a2_2(&SteplengthPolicy::power_law(1.0, alpha, 40.0, 1.0, 0.5).unwrap()).unwrap();
            assert!(!r.clause("beta_decreasing").unwrap().pass);
        }
    }

    #[test]
    fn a2_3_examples() {
        let p = SteplengthPolicy::regularized(1.0, 0.75, 1.0, 0.7, 0.9, 1.0, 0.25).unwrap();
        let r = validate_a2_3(&p, 10_000).unwrap();
        // oracle: the partial sum telescopes approximately to c_eps ln(horizon)
        let approx = 0.25 * (10_000f64).ln();
        let s = r.drift_partial_sum.unwrap();
        assert!((s - approx).abs() < 0.05, "{s} vs {approx}");
        assert!(r.drift_sum_diverges);
        assert!(r.clause("divergent_steps").unwrap().pass);
        // (2 − 0.9)·0.75 = 0.825 and 0.9·0.75 = 0.675 < 0.7
        assert!(!r.clause("summable_x").unwrap().pass);
        assert!(!r.clause("beta_decreasing").unwrap().pass);

        let p = SteplengthPolicy::regularized(1.0, 0.9, 1.0, 0.7, 0.9, 1.0, 0.2).unwrap();
        let r = validate_a2_3(&p, 100).unwrap();
        assert!(!r.clause("divergent_steps").unwrap().pass);

        assert_eq!(drift_partial_sum(|_| 0.3, 10_000), 0.0);
        assert!(validate_a2_3(&p, 5).is_err());
    }

    #[test]
    fn optimal_gamma_examples() {
        let g = optimal_constant_gamma(100, Window::Full, 1.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        assert!((g - (4.0f64 / 200.0).sqrt()).abs() < 1e-15);
        assert!((g - 0.141421).abs() < 1e-6);
        let g2 = optimal_constant_gamma(100, Window::TailHalf, 1.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(g, g2);
        let g = optimal_constant_gamma(100, Window::Full, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert!((g - ((5.0 + 100f64.ln()) / 200.0).sqrt()).abs() < 1e-15);
        assert!((g - 0.218).abs() < 2e-3);
        assert!(optimal_constant_gamma(100, Window::Full, 1.0, 1.0, 1.0, 0.0, 0.0).is_err());
        assert!(optimal_constant_gamma(101, Window::TailHalf, 1.0, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn diminishing_steps_positive_nonincreasing(
            c_x in 0.01..10.0f64, a in 0.0..1.0f64, c_t in 0.01..10.0f64, b in 0.0..1.0f64, k in 1usize..100_000
        ) {
            let p = SteplengthPolicy::power_law(c_x, a, c_t, b, 0.5).unwrap();
            let c = RateConstants::default();
            let s1 = p.evaluate(k, &c).unwrap();
            let s2 = p.evaluate(k + 1, &c).unwrap();
            prop_assert!(s1.gamma_x > 0.0 && s1.gamma_theta > 0.0);
            prop_assert!(s2.gamma_x <= s1.gamma_x && s2.gamma_theta <= s1.gamma_theta);
        }

        #[test]
        fn coupled_ratio_is_exact(lx in 0.1..5.0f64, mu in 0.1..3.0f64, mt in 0.1..3.0f64, lt in 0.0..3.0f64, k in 1usize..10_000) {
            let p = SteplengthPolicy::coupled_strong(lx).unwrap();
            let c = RateConstants { mu_x: mu, mu_theta: mt, l_theta: lt, ..Default::default() };
            let s = p.evaluate(k, &c).unwrap();
            let expect = lt * lt / (mu * mt);
            prop_assert!((s.gamma_theta / s.gamma_x - expect).abs() <= 1e-12 * (1.0 + expect));
        }
    }

    #[test]
    fn compliant_beta_strictly_decreasing() {
        let mut s = crate::rng::Stream::new(4, 0);
        let mut tried = 0;
        while tried < 20 {
            let a = s.uniform(0.5, 1.0).unwrap();
            let b = s.uniform(0.5, 1.0).unwrap();
            let tau = s.uniform(0.01, 0.99).unwrap();
            let p = SteplengthPolicy::power_law(1.0, a, 2.0, b, tau).unwrap();
            if !validate_a2_2(&p).unwrap().pass {
                continue;
            }
            tried += 1;
            let c = RateConstants::default();
            let beta = |k| {
                let st = p.evaluate(k, &c).unwrap();
                st.gamma_x.powf(tau) / (2.0 * st.gamma_theta)
            };
            let mut prev = beta(1);
            for k in 2..=100_000 {
                let cur = beta(k);
                assert!(cur < prev, "a={a} b={b} tau={tau} k={k}");
                prev = cur;
            }
        }
    }
}
