//! Closed convex feasible sets with exact Euclidean projections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Absolute feasibility tolerance used by projections and solvers.
pub const FEAS_TOL: f64 = 1e-10;

const BISECTION_STEPS: usize = 200;
const MAX_VERTICES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeasibleSet {
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    BoxHyperplane {
        lo: Vec<f64>,
        hi: Vec<f64>,
        target_sum: f64,
    },
    /// Blocks occupy consecutive coordinate ranges in order.
    Product {
        blocks: Vec<FeasibleSet>,
    },
}

impl FeasibleSet {
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let s = FeasibleSet::Box { lo, hi };
        s.validate()?;
        Ok(s)
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::boxed(vec![lo; dim], vec![hi; dim])
    }

    pub fn unbounded(dim: usize) -> Self {
        FeasibleSet::Box {
            lo: vec![f64::NEG_INFINITY; dim],
            hi: vec![f64::INFINITY; dim],
        }
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let s = FeasibleSet::Ball { center, radius };
        s.validate()?;
        Ok(s)
    }

    pub fn box_hyperplane(lo: Vec<f64>, hi: Vec<f64>, target_sum: f64) -> Result<Self> {
        let s = FeasibleSet::BoxHyperplane { lo, hi, target_sum };
        s.validate()?;
        Ok(s)
    }

    pub fn product(blocks: Vec<FeasibleSet>) -> Result<Self> {
        let s = FeasibleSet::Product { blocks };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Box { lo, .. } | FeasibleSet::BoxHyperplane { lo, .. } => lo.len(),
            FeasibleSet::Ball { center, .. } => center.len(),
            FeasibleSet::Product { blocks } => blocks.iter().map(|b| b.dim()).sum(),
        }
    }

    /// Checks the structural invariants of the descriptor.
    pub fn validate(&self) -> Result<()> {
        match self {
            FeasibleSet::Box { lo, hi } => check_bounds(lo, hi),
            FeasibleSet::Ball { center, radius } => {
                if !(*radius >= 0.0) || !radius.is_finite() {
                    return Err(Error::invalid(format!("ball radius {radius} must be finite and >= 0")));
                }
                if !linalg::all_finite(center) {
                    return Err(Error::invalid("ball center must be finite"));
                }
                Ok(())
            }
            FeasibleSet::BoxHyperplane { lo, hi, target_sum } => {
                check_bounds(lo, hi)?;
                if !linalg::all_finite(lo) || !linalg::all_finite(hi) {
                    return Err(Error::invalid("box-hyperplane bounds must be finite"));
                }
                let (slo, shi): (f64, f64) = (lo.iter().sum(), hi.iter().sum());
                let slack = FEAS_TOL * (1.0 + target_sum.abs());
                if !(slo <= target_sum + slack && *target_sum <= shi + slack) {
                    return Err(Error::InfeasibleSet(format!(
                        "target sum {target_sum} outside [{slo}, {shi}]"
                    )));
                }
                Ok(())
            }
            FeasibleSet::Product { blocks } => {
                if blocks.is_empty() {
                    return Err(Error::invalid("product set needs at least one block"));
                }
                blocks.iter().try_for_each(|b| b.validate())
            }
        }
    }

    fn check_dim(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {} but set has dimension {}",
                point.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(point)?;
        match self {
            FeasibleSet::Box { lo, hi } => {
                check_bounds(lo, hi)?;
                Ok(point
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(p, (l, h))| p.clamp(*l, *h))
                    .collect())
            }
            FeasibleSet::Ball { center, radius } => {
                let d = linalg::dist(point, center);
                if d <= *radius {
                    return Ok(point.to_vec());
                }
                let s = radius / d;
                Ok(center
                    .iter()
                    .zip(point)
                    .map(|(c, p)| c + s * (p - c))
                    .collect())
            }
            FeasibleSet::BoxHyperplane { lo, hi, target_sum } => {
                project_box_hyperplane(lo, hi, *target_sum, point)
            }
            FeasibleSet::Product { blocks } => {
                let mut out = Vec::with_capacity(point.len());
                let mut start = 0;
                for b in blocks {
                    let d = b.dim();
                    out.extend(b.project(&point[start..start + d])?);
                    start += d;
                }
                Ok(out)
            }
        }
    }

    pub fn contains(&self, point: &[f64], tol: f64) -> bool {
        if point.len() != self.dim() {
            return false;
        }
        match self {
            FeasibleSet::Box { lo, hi } => in_box(lo, hi, point, tol),
            FeasibleSet::Ball { center, radius } => linalg::dist(point, center) <= radius + tol,
            FeasibleSet::BoxHyperplane { lo, hi, target_sum } => {
                in_box(lo, hi, point, tol) && (point.iter().sum::<f64>() - target_sum).abs() <= tol
            }
            FeasibleSet::Product { blocks } => {
                let mut start = 0;
                blocks.iter().all(|b| {
                    let d = b.dim();
                    let ok = b.contains(&point[start..start + d], tol);
                    start += d;
                    ok
                })
            }
        }
    }

    /// Upper bound on `max_{x in set} ‖x − anchor‖`; exact for Box, Ball and
    /// products of those, the enclosing-box value for BoxHyperplane.
    pub fn max_distance_from(&self, anchor: &[f64]) -> Result<f64> {
        self.check_dim(anchor)?;
        Ok(self.max_distance_sq(anchor)?.sqrt())
    }

    fn max_distance_sq(&self, anchor: &[f64]) -> Result<f64> {
        match self {
            FeasibleSet::Box { lo, hi } | FeasibleSet::BoxHyperplane { lo, hi, .. } => {
                let mut acc = 0.0;
                for ((l, h), a) in lo.iter().zip(hi).zip(anchor) {
                    if !l.is_finite() || !h.is_finite() {
                        return Err(Error::UnsupportedSet("unbounded box".into()));
                    }
                    let m = (l - a).abs().max((h - a).abs());
                    acc += m * m;
                }
                Ok(acc)
            }
            FeasibleSet::Ball { center, radius } => {
                let r = linalg::dist(anchor, center) + radius;
                Ok(r * r)
            }
            FeasibleSet::Product { blocks } => {
                let mut acc = 0.0;
                let mut start = 0;
                for b in blocks {
                    let d = b.dim();
                    acc += b.max_distance_sq(&anchor[start..start + d])?;
                    start += d;
                }
                Ok(acc)
            }
        }
    }

    pub fn is_bounded(&self) -> bool {
        match self {
            FeasibleSet::Box { lo, hi } => linalg::all_finite(lo) && linalg::all_finite(hi),
            FeasibleSet::Ball { .. } | FeasibleSet::BoxHyperplane { .. } => true,
            FeasibleSet::Product { blocks } => blocks.iter().all(|b| b.is_bounded()),
        }
    }

    /// Vertex list of a bounded polyhedral set.
    pub fn vertices(&self) -> Result<Vec<Vec<f64>>> {
        match self {
            FeasibleSet::Box { lo, hi } => {
                if !self.is_bounded() {
                    return Err(Error::UnsupportedSet("unbounded box has no vertices".into()));
                }
                let n = lo.len();
                if n >= 20 {
                    return Err(Error::UnsupportedSet(format!("box of dimension {n} has too many vertices")));
                }
                let mut out = Vec::with_capacity(1 << n);
                for mask in 0usize..(1 << n) {
                    out.push(
                        (0..n)
                            .map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] })
                            .collect(),
                    );
                }
                dedup(&mut out);
                Ok(out)
            }
            FeasibleSet::BoxHyperplane { lo, hi, target_sum } => {
                let n = lo.len();
                if n >= 20 {
                    return Err(Error::UnsupportedSet(format!(
                        "box-hyperplane of dimension {n} has too many vertices"
                    )));
                }
                // A vertex has at most one coordinate strictly between its bounds.
                let mut out = Vec::new();
                for free in 0..n {
                    for mask in 0usize..(1 << (n - 1)) {
                        let mut v = vec![0.0; n];
                        let mut bit = 0;
                        let mut rest = 0.0;
                        for i in 0..n {
                            if i == free {
                                continue;
                            }
                            v[i] = if mask >> bit & 1 == 1 { hi[i] } else { lo[i] };
                            rest += v[i];
                            bit += 1;
                        }
                        let vf = target_sum - rest;
                        let slack = 1e-12 * (1.0 + vf.abs());
                        if vf >= lo[free] - slack && vf <= hi[free] + slack {
                            v[free] = vf.clamp(lo[free], hi[free]);
                            out.push(v);
                        }
                    }
                }
                if n == 0 {
                    out.push(vec![]);
                }
                dedup(&mut out);
                Ok(out)
            }
            FeasibleSet::Ball { .. } => Err(Error::UnsupportedSet("ball is not polyhedral".into())),
            FeasibleSet::Product { blocks } => {
                let per: Vec<Vec<Vec<f64>>> = blocks.iter().map(|b| b.vertices()).collect::<Result<_>>()?;
                let total = per
                    .iter()
                    .try_fold(1usize, |acc, v| acc.checked_mul(v.len()))
                    .filter(|&t| t <= MAX_VERTICES)
                    .ok_or_else(|| Error::UnsupportedSet("product has too many vertices".into()))?;
                let mut out = Vec::with_capacity(total);
                let mut idx = vec![0usize; per.len()];
                loop {
                    out.push(per.iter().zip(&idx).flat_map(|(v, &i)| v[i].iter().copied()).collect());
                    let mut j = 0;
                    while j < idx.len() {
                        idx[j] += 1;
                        if idx[j] < per[j].len() {
                            break;
                        }
                        idx[j] = 0;
                        j += 1;
                    }
                    if j == idx.len() {
                        break;
                    }
                }
                Ok(out)
            }
        }
    }
}

fn check_bounds(lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.len() != hi.len() {
        return Err(Error::invalid(format!(
            "bound lengths differ: {} vs {}",
            lo.len(),
            hi.len()
        )));
    }
    if let Some(i) = (0..lo.len()).find(|&i| !(lo[i] <= hi[i])) {
        return Err(Error::InfeasibleSet(format!(
            "lo[{i}] = {} exceeds hi[{i}] = {}",
            lo[i], hi[i]
        )));
    }
    Ok(())
}

fn in_box(lo: &[f64], hi: &[f64], p: &[f64], tol: f64) -> bool {
    p.iter()
        .zip(lo.iter().zip(hi))
        .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol)
}

fn dedup(v: &mut Vec<Vec<f64>>) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v.dedup();
}

fn clamped_sum(lo: &[f64], hi: &[f64], point: &[f64], lambda: f64) -> f64 {
    point
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(p, (l, h))| (p - lambda).clamp(*l, *h))
        .sum()
}

/// Projection onto `{y : lo <= y <= hi, Σ y = target_sum}`.
///
/// The multiplier of the sum constraint is bracketed by
/// `[min(point − hi), max(point − lo)]` and located by bisection; the final
/// value is then recomputed exactly from the coordinates left strictly inside
/// their bounds.
pub fn project_box_hyperplane(lo: &[f64], hi: &[f64], target_sum: f64, point: &[f64]) -> Result<Vec<f64>> {
    check_bounds(lo, hi)?;
    if point.len() != lo.len() {
        return Err(Error::invalid(format!(
            "point has dimension {} but bounds have dimension {}",
            point.len(),
            lo.len()
        )));
    }
    if !linalg::all_finite(lo) || !linalg::all_finite(hi) {
        return Err(Error::invalid("box-hyperplane bounds must be finite"));
    }
    let slo: f64 = lo.iter().sum();
    let shi: f64 = hi.iter().sum();
    let slack = FEAS_TOL * (1.0 + target_sum.abs());
    if !(slo <= target_sum + slack && target_sum <= shi + slack) {
        return Err(Error::InfeasibleSet(format!(
            "target sum {target_sum} outside [{slo}, {shi}]"
        )));
    }
    if target_sum <= slo {
        return Ok(lo.to_vec());
    }
    if target_sum >= shi {
        return Ok(hi.to_vec());
    }

    let mut a = point
        .iter()
        .zip(hi)
        .map(|(p, h)| p - h)
        .fold(f64::INFINITY, f64::min);
    let mut b = point
        .iter()
        .zip(lo)
        .map(|(p, l)| p - l)
        .fold(f64::NEG_INFINITY, f64::max);
    // clamped_sum(a) = Σ hi >= target >= Σ lo = clamped_sum(b)
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if clamped_sum(lo, hi, point, mid) > target_sum {
            a = mid;
        } else {
            b = mid;
        }
    }
    let mut lambda = 0.5 * (a + b);

    let y: Vec<f64> = clamp_all(lo, hi, point, lambda);
    let mut fixed_sum = 0.0;
    let mut free_sum = 0.0;
    let mut n_free = 0usize;
    for i in 0..y.len() {
        if y[i] > lo[i] && y[i] < hi[i] {
            free_sum += point[i];
            n_free += 1;
        } else {
            fixed_sum += y[i];
        }
    }
    if n_free > 0 {
        let exact = (free_sum - (target_sum - fixed_sum)) / n_free as f64;
        let y2 = clamp_all(lo, hi, point, exact);
        if (y2.iter().sum::<f64>() - target_sum).abs() <= (y.iter().sum::<f64>() - target_sum).abs() {
            lambda = exact;
        }
    }
    Ok(clamp_all(lo, hi, point, lambda))
}

fn clamp_all(lo: &[f64], hi: &[f64], point: &[f64], lambda: f64) -> Vec<f64> {
    point
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(p, (l, h))| (p - lambda).clamp(*l, *h))
        .collect()
}
