//! CSV schemas for traces, summaries, sweeps and verification reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{DispatchInstance, NoiseScale};

pub const TRACE_COLUMNS: [&str; 9] = [
    "run_id",
    "k",
    "gamma_x",
    "gamma_theta",
    "eps",
    "err_x_sq",
    "err_theta_sq",
    "gap",
    "dist_xstar",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub run_id: u64,
    pub k: usize,
    pub gamma_x: f64,
    pub gamma_theta: f64,
    pub eps: f64,
    pub err_x_sq: f64,
    pub err_theta_sq: f64,
    pub gap: Option<f64>,
    pub dist_xstar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub k: usize,
    pub window: String,
    pub err_x_sq: Option<f64>,
    pub err_theta_sq: Option<f64>,
    pub norm_err_x: Option<f64>,
    pub norm_err_theta: Option<f64>,
    pub avg_gap: Option<f64>,
    pub avg_dist: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub entry: usize,
    pub policy: usize,
    pub k_max: usize,
    pub seed: u64,
    pub k: usize,
    pub window: String,
    pub err_x_sq: Option<f64>,
    pub err_theta_sq: Option<f64>,
    pub norm_err_x: Option<f64>,
    pub norm_err_theta: Option<f64>,
    pub avg_gap: Option<f64>,
    pub avg_dist: Option<f64>,
    pub status: String,
}

impl SweepRow {
    pub fn new(entry: usize, policy: usize, k_max: usize, s: SummaryRow) -> Self {
        SweepRow {
            entry,
            policy,
            k_max,
            seed: s.seed,
            k: s.k,
            window: s.window,
            err_x_sq: s.err_x_sq,
            err_theta_sq: s.err_theta_sq,
            norm_err_x: s.norm_err_x,
            norm_err_theta: s.norm_err_theta,
            avg_gap: s.avg_gap,
            avg_dist: s.avg_dist,
            status: s.status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRow {
    pub claim: String,
    pub k: usize,
    pub empirical: f64,
    pub half_width: f64,
    pub upper: f64,
    pub bound: f64,
    pub pass: bool,
    pub vacuous: bool,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a header-only file when `rows` is empty so the schema is visible.
pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    if rows.is_empty() {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(TRACE_COLUMNS).map_err(csv_err)?;
        w.flush()?;
        return Ok(());
    }
    write_rows(path, rows)
}

#[derive(Debug, Deserialize)]
struct UnitRow {
    firm: usize,
    node: usize,
    d: f64,
    h: f64,
    cap: f64,
}

#[derive(Debug, Deserialize)]
struct DemandRow {
    node: usize,
    demand: f64,
}

/// Loads a dispatch instance from a `(firm, node, d, h, cap)` CSV and a
/// `(node, demand)` CSV. Indices are 0-based and every pair must appear once.
pub fn load_dispatch(units: &Path, demand: &Path) -> Result<DispatchInstance> {
    let key = |p: &Path| p.display().to_string();
    let mut unit_rows = BTreeMap::new();
    let mut r = csv::Reader::from_path(units).map_err(|e| Error::config(key(units), e.to_string()))?;
    for row in r.deserialize::<UnitRow>() {
        let row = row.map_err(|e| Error::config(key(units), e.to_string()))?;
        if unit_rows.insert((row.firm, row.node), row).is_some() {
            return Err(Error::config(key(units), "duplicate (firm, node) row"));
        }
    }
    let n_firms = unit_rows.keys().map(|k| k.0 + 1).max().unwrap_or(0);
    let n_nodes = unit_rows.keys().map(|k| k.1 + 1).max().unwrap_or(0);
    if unit_rows.len() != n_firms * n_nodes || n_firms == 0 {
        return Err(Error::config(key(units), "every (firm, node) pair must appear exactly once"));
    }
    let grid = |f: fn(&UnitRow) -> f64| -> Vec<Vec<f64>> {
        (0..n_firms)
            .map(|i| (0..n_nodes).map(|j| f(&unit_rows[&(i, j)])).collect())
            .collect()
    };
    let mut dem = vec![f64::NAN; n_nodes];
    let mut r = csv::Reader::from_path(demand).map_err(|e| Error::config(key(demand), e.to_string()))?;
    for row in r.deserialize::<DemandRow>() {
        let row = row.map_err(|e| Error::config(key(demand), e.to_string()))?;
        if row.node >= n_nodes {
            return Err(Error::config(key(demand), format!("unknown node {}", row.node)));
        }
        dem[row.node] = row.demand;
    }
    if dem.iter().any(|v| v.is_nan()) {
        return Err(Error::config(key(demand), "missing node demand"));
    }
    let inst = DispatchInstance {
        n_firms,
        n_nodes,
        d: grid(|u| u.d),
        h: grid(|u| u.h),
        cap: grid(|u| u.cap),
        demand: dem,
        reg: 0.05,
        noise_scale: NoiseScale::Linear,
    };
    inst.validate()?;
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispatch_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let u = dir.path().join("units.csv");
        let d = dir.path().join("demand.csv");
        std::fs::write(&u, "firm,node,d,h,cap\n0,0,1,0.5,2\n1,0,2,0.5,2\n0,1,1.5,1,1\n1,1,1,1,1\n").unwrap();
        std::fs::write(&d, "node,demand\n0,2\n1,1.5\n").unwrap();
        let inst = load_dispatch(&u, &d).unwrap();
        assert_eq!((inst.n_firms, inst.n_nodes), (2, 2));
        assert_eq!(inst.d[1][0], 2.0);
        assert_eq!(inst.cap[0][1], 1.0);

        std::fs::write(&d, "node,demand\n0,2\n1,5\n").unwrap();
        assert!(matches!(load_dispatch(&u, &d), Err(Error::InfeasibleSet(_))));
        std::fs::write(&u, "firm,node,d,h,cap\n0,0,1,0.5,2\n1,1,1,1,1\n").unwrap();
        assert!(matches!(load_dispatch(&u, &d), Err(Error::Config { .. })));
    }

    #[test]
    fn empty_trace_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trace(&p, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().trim(), TRACE_COLUMNS.join(","));
    }
}
