//! Regression/classification metrics and embedding-geometry diagnostics.

use serde::{Deserialize, Serialize};

use crate::model::{binarize_score, BinaryClass};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc7: f64,
    pub acc2: f64,
    pub f1: f64,
    pub mae: f64,
    pub corr: f64,
}

/// Seven-way bin: nearest integer, clamped to [-3, 3].
pub fn acc7_bin(x: f64) -> i32 {
    x.round().clamp(-3.0, 3.0) as i32
}

/// All five metrics for predictions against true scores.
///
/// Acc2 and F1 use sign binarization (zero is negative); F1 is for the
/// positive class and is 1 when neither side has a positive. A correlation
/// with zero variance on either side is reported as 0.
pub fn compute_metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if pred.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty dataset".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite {
            term: "predictions".into(),
        });
    }
    let n = pred.len() as f64;
    let acc7 = pred
        .iter()
        .zip(truth)
        .filter(|(&p, &t)| acc7_bin(p) == acc7_bin(t))
        .count() as f64
        / n;
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        let (pc, tc) = (binarize_score(p), binarize_score(t));
        if pc == tc {
            correct += 1;
        }
        match (pc, tc) {
            (BinaryClass::Positive, BinaryClass::Positive) => tp += 1,
            (BinaryClass::Positive, BinaryClass::Negative) => fp += 1,
            (BinaryClass::Negative, BinaryClass::Positive) => fn_ += 1,
            _ => {}
        }
    }
    let acc2 = correct as f64 / n;
    let f1 = if tp + fp + fn_ == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    let mae = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n;
    let corr = pearson(pred, truth).unwrap_or_else(|| {
        log::warn!("correlation undefined for zero-variance input; reporting 0");
        0.0
    });
    Ok(Metrics {
        acc7,
        acc2,
        f1,
        mae,
        corr,
    })
}

/// Pearson correlation, or `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean silhouette coefficient of a two-class labelling under Euclidean
/// distance. A point alone in its class scores 0.
pub fn silhouette(points: &[Vec<f64>], classes: &[BinaryClass]) -> Result<f64> {
    if points.len() != classes.len() {
        return Err(Error::Shape(format!(
            "{} points vs {} classes",
            points.len(),
            classes.len()
        )));
    }
    if points.len() < 2 {
        return Err(Error::Invalid(
            "silhouette needs at least two points".into(),
        ));
    }
    let n_pos = classes
        .iter()
        .filter(|&&c| c == BinaryClass::Positive)
        .count();
    if n_pos == 0 || n_pos == classes.len() {
        return Err(Error::Invalid(
            "silhouette needs both classes present".into(),
        ));
    }
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mut same, mut n_same, mut other, mut n_other) = (0.0, 0usize, 0.0, 0usize);
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = euclidean(&points[i], &points[j]);
            if classes[i] == classes[j] {
                same += d;
                n_same += 1;
            } else {
                other += d;
                n_other += 1;
            }
        }
        if n_same == 0 {
            continue;
        }
        let a = same / n_same as f64;
        let b = other / n_other as f64;
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Result of a two-component principal component projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca2d {
    pub coords: Vec<[f64; 2]>,
    /// Unit principal directions; zero when the data has no variance along them.
    pub components: [Vec<f64>; 2],
    /// Covariance eigenvalues (sample covariance, divisor n − 1).
    pub variances: [f64; 2],
}

const PCA_TOL: f64 = 1e-9;
const PCA_MAX_ITERS: usize = 200_000;

/// Projects onto the top two principal components found by power
/// iteration with deflation. Each component's first nonzero loading is
/// made positive.
#[allow(clippy::needless_range_loop)]
pub fn pca2d(points: &[Vec<f64>]) -> Result<Pca2d> {
    let n = points.len();
    if n < 2 {
        return Err(Error::Invalid("PCA needs at least two points".into()));
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::Shape(
            "PCA points must share one nonzero width".into(),
        ));
    }
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for c in &centered {
        for i in 0..d {
            for j in i..d {
                cov[i][j] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }

    let (v1, l1) = top_eigenpair(&cov);
    for i in 0..d {
        for j in 0..d {
            cov[i][j] -= l1 * v1[i] * v1[j];
        }
    }
    let (v2, l2) = top_eigenpair(&cov);
    let coords = centered
        .iter()
        .map(|c| [dot(c, &v1), dot(c, &v2)])
        .collect();
    Ok(Pca2d {
        coords,
        components: [v1, v2],
        variances: [l1, l2],
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Dominant eigenpair of a symmetric positive semidefinite matrix; a zero
/// vector and eigenvalue when the matrix is (numerically) zero.
fn top_eigenpair(m: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let d = m.len();
    let scale = m.iter().flatten().fold(0.0_f64, |a, &b| a.max(b.abs()));
    if scale == 0.0 {
        return (vec![0.0; d], 0.0);
    }
    // start from the largest column, which lies in the range of m
    let start = (0..d)
        .max_by(|&a, &b| dot(&m[a], &m[a]).total_cmp(&dot(&m[b], &m[b])))
        .expect("d > 0");
    let mut v = m[start].clone();
    if normalize(&mut v) <= scale * 1e-14 {
        return (vec![0.0; d], 0.0);
    }
    for _ in 0..PCA_MAX_ITERS {
        let mut next = mat_vec(m, &v);
        if normalize(&mut next) <= scale * 1e-14 {
            return (vec![0.0; d], 0.0);
        }
        let delta = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        v = next;
        if delta < PCA_TOL {
            break;
        }
    }
    let lambda = dot(&v, &mat_vec(m, &v)).max(0.0);
    if lambda <= scale * 1e-12 {
        return (vec![0.0; d], 0.0);
    }
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    (v, lambda)
}
