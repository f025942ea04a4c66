//! Result tables and the files they are written to.

use hycon::losses::LossReport;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::experiment::RunResult;
use crate::{CliError, Result};

/// One line of a metrics table. `seed` holds a seed number, `mean` or `std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub regime: String,
    pub seed: String,
    pub acc7: f64,
    pub acc2: f64,
    pub f1: f64,
    pub mae: f64,
    pub corr: f64,
    pub silhouette: f64,
}

impl MetricsRow {
    pub fn from_run(r: &RunResult) -> Self {
        let m = &r.metrics;
        MetricsRow {
            regime: r.regime.clone(),
            seed: r.seed.to_string(),
            acc7: m.acc7,
            acc2: m.acc2,
            f1: m.f1,
            mae: m.mae,
            corr: m.corr,
            silhouette: r.silhouette,
        }
    }

    fn values(&self) -> [f64; 6] {
        [
            self.acc7,
            self.acc2,
            self.f1,
            self.mae,
            self.corr,
            self.silhouette,
        ]
    }

    fn with_values(regime: &str, seed: &str, v: [f64; 6]) -> Self {
        MetricsRow {
            regime: regime.to_string(),
            seed: seed.to_string(),
            acc7: v[0],
            acc2: v[1],
            f1: v[2],
            mae: v[3],
            corr: v[4],
            silhouette: v[5],
        }
    }
}

/// Column-wise mean and sample standard deviation (0 for a single row).
pub fn summarize(regime: &str, rows: &[MetricsRow]) -> [MetricsRow; 2] {
    let n = rows.len() as f64;
    let mean = std::array::from_fn(|c| rows.iter().map(|r| r.values()[c]).sum::<f64>() / n);
    let std = std::array::from_fn(|c: usize| {
        if rows.len() < 2 {
            return 0.0;
        }
        let ss: f64 = rows.iter().map(|r| (r.values()[c] - mean[c]).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    [
        MetricsRow::with_values(regime, "mean", mean),
        MetricsRow::with_values(regime, "std", std),
    ]
}

/// Per-seed rows of each regime followed by its mean and std rows.
/// Regimes appear in first-seen order.
pub fn metrics_table(runs: &[RunResult]) -> Vec<MetricsRow> {
    let mut regimes: Vec<&str> = Vec::new();
    for r in runs {
        if !regimes.contains(&r.regime.as_str()) {
            regimes.push(&r.regime);
        }
    }
    let mut out = Vec::new();
    for regime in regimes {
        let rows: Vec<MetricsRow> = runs
            .iter()
            .filter(|r| r.regime == regime)
            .map(MetricsRow::from_run)
            .collect();
        let summary = summarize(regime, &rows);
        out.extend(rows);
        out.extend(summary);
    }
    out
}

/// Mean metrics at one sweep grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub regime: String,
    pub seed: String,
    pub acc7: f64,
    pub acc2: f64,
    pub f1: f64,
    pub mae: f64,
    pub corr: f64,
    pub silhouette: f64,
}

impl SweepRow {
    pub fn new(alpha: f64, lambdas: [f64; 3], m: MetricsRow) -> Self {
        SweepRow {
            alpha,
            lambda1: lambdas[0],
            lambda2: lambdas[1],
            lambda3: lambdas[2],
            regime: m.regime,
            seed: m.seed,
            acc7: m.acc7,
            acc2: m.acc2,
            f1: m.f1,
            mae: m.mae,
            corr: m.corr,
            silhouette: m.silhouette,
        }
    }
}

/// Epoch-level training losses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub seed: u64,
    pub epoch: usize,
    pub l_scl: f64,
    pub l_iamcl: f64,
    pub l_iamcl_refine: f64,
    pub l_iemcl: f64,
    pub l_iemcl_refine: f64,
    pub l_hybrid: f64,
    pub l_pred: f64,
    pub l_overall: f64,
    pub val_mae: Option<f64>,
}

impl TrajectoryRow {
    pub fn new(seed: u64, epoch: usize, t: &LossReport, val_mae: Option<f64>) -> Self {
        TrajectoryRow {
            seed,
            epoch,
            l_scl: t.l_scl,
            l_iamcl: t.l_iamcl,
            l_iamcl_refine: t.l_iamcl_refine,
            l_iemcl: t.l_iemcl,
            l_iemcl_refine: t.l_iemcl_refine,
            l_hybrid: t.l_hybrid,
            l_pred: t.l_pred,
            l_overall: t.l_overall,
            val_mae,
        }
    }
}

pub fn trajectory_table(runs: &[RunResult]) -> Vec<TrajectoryRow> {
    runs.iter()
        .flat_map(|r| {
            r.outcome
                .epochs
                .iter()
                .map(|e| TrajectoryRow::new(r.seed, e.epoch, &e.train, e.val_mae))
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            _ => unreachable!("checked is_io_error"),
        }
    } else {
        CliError::Validation(format!("{}: {e}", path.display()))
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| CliError::io(path, e))
}
