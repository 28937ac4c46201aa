//! The Type I error table: five methods over the four simulation cells.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::dgp::build_dgp_params;
use super::montecarlo::{monte_carlo, Progress, SimOptions, SimReport};
use crate::error::{Error, Result};
use crate::score::Method;

pub const TABLE1_METHODS: [Method; 5] = [
    Method::NaiveForced,
    Method::NaiveUnforced,
    Method::PdsCv,
    Method::PmleDr,
    Method::BrDr,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub n: usize,
    pub p: usize,
    pub misspecified: bool,
}

impl Cell {
    pub const fn new(n: usize, p: usize, misspecified: bool) -> Self {
        Cell { n, p, misspecified }
    }

    pub fn model_label(&self) -> &'static str {
        if self.misspecified {
            "incorrect-outcome"
        } else {
            "correct"
        }
    }
}

pub const TABLE1_CELLS: [Cell; 4] = [
    Cell::new(200, 200, false),
    Cell::new(500, 500, false),
    Cell::new(200, 200, true),
    Cell::new(500, 500, true),
];

/// Published rejection rate for a method in a cell, where there is one.
pub fn published_rate(method: Method, cell: &Cell) -> Option<f64> {
    let col = match (cell.n, cell.p) {
        (200, 200) => 0,
        (500, 500) => 1,
        _ => return None,
    };
    let row: [f64; 2] = match (method, cell.misspecified) {
        (Method::NaiveForced, false) => [0.548, 0.809],
        (Method::NaiveUnforced, false) => [0.275, 0.555],
        (Method::PdsCv, false) => [0.183, 0.118],
        (Method::PmleDr, false) => [0.055, 0.060],
        (Method::BrDr, false) => [0.053, 0.069],
        (Method::NaiveForced, true) => [0.368, 0.586],
        (Method::NaiveUnforced, true) => [0.175, 0.313],
        (Method::PdsCv, true) => [0.176, 0.113],
        (Method::PmleDr, true) => [0.061, 0.055],
        (Method::BrDr, true) => [0.046, 0.059],
        _ => return None,
    };
    Some(row[col])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub report: Option<SimReport>,
    /// Set when the cell could not be run; `report` is then `None`.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub reps: usize,
    pub master_seed: u64,
    pub alpha: f64,
    pub cells: Vec<CellResult>,
}

pub fn reproduce_table1(reps: usize, master_seed: u64, workers: usize) -> Result<Table1> {
    let opts = SimOptions {
        workers,
        ..SimOptions::default()
    };
    reproduce_table1_cells(&TABLE1_CELLS, reps, master_seed, &opts, None)
}

pub fn reproduce_table1_cells(
    cells: &[Cell],
    reps: usize,
    master_seed: u64,
    opts: &SimOptions,
    progress: Option<&(dyn Fn(&Cell, usize, usize) + Sync)>,
) -> Result<Table1> {
    simulate_cells(cells, &TABLE1_METHODS, reps, master_seed, opts, progress)
}

/// Runs `methods` on each cell. A cell that fails as a whole is recorded
/// as a gap. Every cell uses the same replication seeds.
pub fn simulate_cells(
    cells: &[Cell],
    methods: &[Method],
    reps: usize,
    master_seed: u64,
    opts: &SimOptions,
    progress: Option<&(dyn Fn(&Cell, usize, usize) + Sync)>,
) -> Result<Table1> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let report = build_dgp_params(cell.n, cell.p, cell.misspecified).and_then(|params| {
            let cb = progress.map(|f| move |k: usize, total: usize| f(cell, k, total));
            let cb_ref: Option<Progress<'_>> = cb.as_ref().map(|c| c as Progress<'_>);
            monte_carlo(methods, &params, reps, master_seed, opts, cb_ref)
        });
        let (report, error) = match report {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        out.push(CellResult {
            cell: *cell,
            report,
            error,
        });
    }
    Ok(Table1 {
        reps,
        master_seed,
        alpha: opts.alpha,
        cells: out,
    })
}

fn fmt_rate(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        "NA".to_string()
    }
}

impl Table1 {
    pub const CSV_HEADER: &'static str =
        "outcome_model,n,p,method,rejection_rate,mc_se,reps,rejections,failures,nonconverged,published";

    /// One row per (cell, method). Gaps have empty numeric fields and the
    /// error in the method column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for c in &self.cells {
            let cell = &c.cell;
            match (&c.report, &c.error) {
                (Some(r), _) => {
                    for m in &r.methods {
                        let published = m
                            .method
                            .parse::<Method>()
                            .ok()
                            .and_then(|mm| published_rate(mm, cell))
                            .map(|v| v.to_string())
                            .unwrap_or_default();
                        let _ = writeln!(
                            s,
                            "{},{},{},{},{},{},{},{},{},{},{}",
                            cell.model_label(),
                            cell.n,
                            cell.p,
                            m.method,
                            if m.rejection_rate.is_finite() { m.rejection_rate.to_string() } else { String::new() },
                            if m.mc_se.is_finite() { m.mc_se.to_string() } else { String::new() },
                            m.reps,
                            m.rejections,
                            m.failures,
                            m.nonconverged,
                            published
                        );
                    }
                }
                (None, e) => {
                    let e = e.as_deref().unwrap_or("not run");
                    let _ = writeln!(
                        s,
                        "{},{},{},\"gap: {}\",,,,,,,",
                        cell.model_label(),
                        cell.n,
                        cell.p,
                        e.replace('"', "'")
                    );
                }
            }
        }
        s
    }

    /// Aligned text view of the same numbers.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Type I error at alpha = {} ({} replications, master seed {})",
            self.alpha, self.reps, self.master_seed
        );
        for c in &self.cells {
            let cell = &c.cell;
            let _ = writeln!(s, "\n{} outcome model, n = {}, p = {}", cell.model_label(), cell.n, cell.p);
            match (&c.report, &c.error) {
                (Some(r), _) => {
                    let _ = writeln!(
                        s,
                        "  {:<16} {:>8} {:>8} {:>6} {:>8} {:>10}",
                        "method", "rate", "mc_se", "reps", "failures", "published"
                    );
                    for m in &r.methods {
                        let published = m
                            .method
                            .parse::<Method>()
                            .ok()
                            .and_then(|mm| published_rate(mm, cell))
                            .map(|v| format!("{v:.3}"))
                            .unwrap_or_else(|| "-".into());
                        let _ = writeln!(
                            s,
                            "  {:<16} {:>8} {:>8} {:>6} {:>8} {:>10}",
                            m.method,
                            fmt_rate(m.rejection_rate),
                            fmt_rate(m.mc_se),
                            m.reps,
                            m.failures,
                            published
                        );
                    }
                }
                (None, e) => {
                    let _ = writeln!(s, "  gap: {}", e.as_deref().unwrap_or("not run"));
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_values() {
        let c = Cell::new(200, 200, false);
        assert_eq!(published_rate(Method::PmleDr, &c), Some(0.055));
        assert_eq!(published_rate(Method::KnownPropensity, &c), None);
        assert_eq!(published_rate(Method::BrDr, &Cell::new(500, 500, true)), Some(0.059));
        assert_eq!(published_rate(Method::BrDr, &Cell::new(300, 500, true)), None);
    }

    #[test]
    fn gap_is_rendered() {
        let t = Table1 {
            reps: 1,
            master_seed: 1,
            alpha: 0.05,
            cells: vec![CellResult {
                cell: Cell::new(50, 50, false),
                report: None,
                error: Some("boom".into()),
            }],
        };
        assert!(t.to_csv().contains("gap: boom"));
        assert!(t.to_text().contains("gap: boom"));
    }

    #[test]
    fn zero_reps_rejected() {
        assert!(reproduce_table1(0, 1, 1).is_err());
    }
}
