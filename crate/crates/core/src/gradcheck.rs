//! Central-difference verification of graph gradients.

use crate::diff::{Graph, Matrix, NodeId};
use crate::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-4;

/// Outcome of one check. `worst_index` is the parameter coordinate with the
/// largest relative error.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares the analytic gradient of `build` against central differences.
///
/// `build` receives a fresh graph and a 1×n leaf holding `theta`, and
/// returns the scalar root. It must be deterministic in `theta`.
/// The per-coordinate error is `|analytic − numeric| / max(1, |numeric|)`.
pub fn finite_diff_check<F>(build: F, theta: &[f64], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    finite_diff_check_tampered(build, theta, h, |_| {})
}

/// Like [`finite_diff_check`], but lets the caller alter the analytic
/// gradient before comparison. Used as a negative control.
pub fn finite_diff_check_tampered<F, T>(
    build: F,
    theta: &[f64],
    h: f64,
    tamper: T,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
    T: Fn(&mut [f64]),
{
    if theta.is_empty() {
        return Err(Error::Invalid("empty parameter vector".into()));
    }
    let eval = |t: &[f64]| -> Result<f64> {
        let mut g = Graph::new();
        let p = g.leaf(Matrix::row_vector(t.to_vec()));
        let root = build(&mut g, p)?;
        let v = g.scalar(root);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: "gradient-check objective".into(),
            });
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let p = g.leaf(Matrix::row_vector(theta.to_vec()));
    let root = build(&mut g, p)?;
    if !g.scalar(root).is_finite() {
        return Err(Error::NonFinite {
            term: "gradient-check objective".into(),
        });
    }
    g.backward(root)?;
    let mut analytic = g.grad(p).into_data();
    tamper(&mut analytic);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: analytic[0],
        numeric: f64::NAN,
    };
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = eval(&probe)?;
        probe[i] = theta[i] - h;
        let down = eval(&probe)?;
        probe[i] = theta[i];
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        if err > report.max_rel_err || i == 0 {
            report = GradCheckReport {
                max_rel_err: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    Ok(report)
}
