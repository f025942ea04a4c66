//! Random batches and straightforward nested-loop re-implementations of the
//! losses, written without the graph or the pair engine.

#![allow(dead_code, clippy::needless_range_loop, clippy::type_complexity)]

use hycon::losses::PartnerDraw;
use hycon::pairs::{AnchorRef, Partner, Polarity};
use hycon::{BinaryClass, Modality};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-8;

/// Raw (pre-normalization) rows for each modality plus the batch classes.
#[derive(Clone, Debug)]
pub struct RawBatch {
    pub rows: [Vec<Vec<f64>>; 3],
    pub classes: Vec<BinaryClass>,
    pub scores: Vec<f64>,
}

impl RawBatch {
    pub fn k(&self) -> usize {
        self.classes.len()
    }
}

pub fn class_of(score: f64) -> BinaryClass {
    if score > 0.0 {
        BinaryClass::Positive
    } else {
        BinaryClass::Negative
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, k: usize, d: usize) -> RawBatch {
    let mut block = || -> Vec<Vec<f64>> {
        (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    };
    let rows = [block(), block(), block()];
    let scores: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
    RawBatch {
        rows,
        classes: scores.iter().map(|&s| class_of(s)).collect(),
        scores,
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// ReLU, then divide by max(norm, ε).
pub fn normalize(row: &[f64]) -> Vec<f64> {
    let r: Vec<f64> = row.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    let n = dot(&r, &r).sqrt();
    let n = if n > EPS { n } else { EPS };
    r.iter().map(|x| x / n).collect()
}

pub fn normalized(b: &RawBatch) -> [Vec<Vec<f64>>; 3] {
    b.rows
        .clone()
        .map(|blk| blk.iter().map(|r| normalize(r)).collect())
}

pub fn oracle_scl(e: &[Vec<Vec<f64>>; 3], alpha: f64) -> f64 {
    let k = e[0].len();
    let mut total = 0.0;
    for i in 0..k {
        for m in 0..3 {
            for m2 in 0..3 {
                if m2 != m {
                    let s = dot(&e[m][i], &e[m2][i]) - alpha;
                    total += 0.5 * s * s;
                }
            }
        }
    }
    total / (3 * k) as f64
}

/// (ratio, refinement) of the intra-modal (`cross = false`) or
/// inter-modal (`cross = true`) supervised loss.
pub fn oracle_supervised(
    e: &[Vec<Vec<f64>>; 3],
    classes: &[BinaryClass],
    cross: bool,
    target: f64,
    log_form: bool,
) -> (f64, f64) {
    let k = classes.len();
    let (mut ratio_sum, mut ratio_n) = (0.0, 0usize);
    let (mut refine_sum, mut refine_n) = (0.0, 0usize);
    for i in 0..k {
        for m in 0..3 {
            let (mut pos, mut neg, mut npos, mut sq) = (0.0, 0.0, 0usize, 0.0);
            for j in 0..k {
                if j == i {
                    continue;
                }
                for m2 in 0..3 {
                    let wanted = if cross { m2 != m } else { m2 == m };
                    if !wanted {
                        continue;
                    }
                    let s = dot(&e[m][i], &e[m2][j]);
                    if classes[j] == classes[i] {
                        pos += s;
                        npos += 1;
                        sq += (s - target) * (s - target);
                    } else {
                        neg += s;
                    }
                }
            }
            if npos == 0 {
                continue;
            }
            refine_sum += sq / npos as f64;
            refine_n += 1;
            if log_form {
                ratio_sum += -((pos + EPS) / (pos + neg + EPS)).ln();
                ratio_n += 1;
            } else if pos + neg != 0.0 {
                ratio_sum += -pos / (pos + neg);
                ratio_n += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    (mean(ratio_sum, ratio_n), mean(refine_sum, refine_n))
}

pub fn oracle_mae(pred: &[f64], truth: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..pred.len() {
        s += (pred[i] - truth[i]).abs();
    }
    s / pred.len() as f64
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s
}

/// Candidate partners of anchor (i, m): (sample, modality, same class).
pub fn candidates(
    classes: &[BinaryClass],
    i: usize,
    m: usize,
    cross: bool,
) -> Vec<(usize, usize, bool)> {
    let mut out = Vec::new();
    for j in 0..classes.len() {
        if j == i {
            continue;
        }
        for m2 in 0..3 {
            if (cross && m2 != m) || (!cross && m2 == m) {
                out.push((j, m2, classes[j] == classes[i]));
            }
        }
    }
    out
}

/// One uniformly drawn positive and negative per anchor.
pub fn random_draws(rng: &mut impl Rng, classes: &[BinaryClass], cross: bool) -> Vec<PartnerDraw> {
    let k = classes.len();
    let mut out = Vec::new();
    for i in 0..k {
        for m in 0..3 {
            let c = candidates(classes, i, m, cross);
            let pos: Vec<_> = c.iter().filter(|x| x.2).collect();
            let neg: Vec<_> = c.iter().filter(|x| !x.2).collect();
            let mk = |x: &(usize, usize, bool)| Partner {
                sample: x.0,
                modality: Modality::from_index(x.1).unwrap(),
                polarity: if x.2 {
                    Polarity::Positive
                } else {
                    Polarity::Negative
                },
            };
            let positive = (!pos.is_empty()).then(|| mk(pos[rng.random_range(0..pos.len())]));
            let negative = (!neg.is_empty()).then(|| mk(neg[rng.random_range(0..neg.len())]));
            out.push(PartnerDraw {
                anchor: AnchorRef {
                    sample: i,
                    modality: Modality::from_index(m).unwrap(),
                },
                positive,
                negative,
            });
        }
    }
    out
}

pub fn vec_of<'a>(e: &'a [Vec<Vec<f64>>; 3], p: &Partner) -> &'a [f64] {
    &e[p.modality.index()][p.sample]
}

pub fn oracle_triplet(e: &[Vec<Vec<f64>>; 3], draws: &[PartnerDraw], hinged: bool) -> f64 {
    let (mut s, mut n) = (0.0, 0);
    for d in draws {
        if let (Some(p), Some(q)) = (d.positive, d.negative) {
            let a = &e[d.anchor.modality.index()][d.anchor.sample];
            let mut l = sq_dist(a, vec_of(e, &p)) - sq_dist(a, vec_of(e, &q)) + 1.0;
            if hinged && l < 0.0 {
                l = 0.0;
            }
            s += l;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn oracle_hard_draws(
    e: &[Vec<Vec<f64>>; 3],
    classes: &[BinaryClass],
    cross: bool,
) -> Vec<PartnerDraw> {
    let mut out = Vec::new();
    for i in 0..classes.len() {
        for m in 0..3 {
            let a = &e[m][i];
            let (mut best_p, mut best_n): (Option<(f64, Partner)>, Option<(f64, Partner)>) =
                (None, None);
            for (j, m2, same) in candidates(classes, i, m, cross) {
                let s = dot(a, &e[m2][j]);
                let partner = Partner {
                    sample: j,
                    modality: Modality::from_index(m2).unwrap(),
                    polarity: if same {
                        Polarity::Positive
                    } else {
                        Polarity::Negative
                    },
                };
                if same {
                    if best_p.is_none() || s < best_p.unwrap().0 {
                        best_p = Some((s, partner));
                    }
                } else if best_n.is_none() || s > best_n.unwrap().0 {
                    best_n = Some((s, partner));
                }
            }
            out.push(PartnerDraw {
                anchor: AnchorRef {
                    sample: i,
                    modality: Modality::from_index(m).unwrap(),
                },
                positive: best_p.map(|x| x.1),
                negative: best_n.map(|x| x.1),
            });
        }
    }
    out
}

pub fn oracle_classical(
    e: &[Vec<Vec<f64>>; 3],
    classes: &[BinaryClass],
    draws: &[PartnerDraw],
    cross: bool,
) -> f64 {
    let (mut s, mut n) = (0.0, 0);
    for d in draws {
        let Some(p) = d.positive else { continue };
        let (i, m) = (d.anchor.sample, d.anchor.modality.index());
        let a = &e[m][i];
        let ap = dot(a, vec_of(e, &p));
        let mut an = 0.0;
        let mut nneg = 0;
        for (j, m2, same) in candidates(classes, i, m, cross) {
            if !same {
                an += dot(a, &e[m2][j]);
                nneg += 1;
            }
        }
        if nneg == 0 || ap + an == 0.0 {
            continue;
        }
        s += -ap / (ap + an);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn oracle_npair(
    e: &[Vec<Vec<f64>>; 3],
    classes: &[BinaryClass],
    draws: &[PartnerDraw],
    cross: bool,
) -> f64 {
    let (mut s, mut n) = (0.0, 0);
    for d in draws {
        let Some(p) = d.positive else { continue };
        let (i, m) = (d.anchor.sample, d.anchor.modality.index());
        let a = &e[m][i];
        let ap = dot(a, vec_of(e, &p));
        let mut acc = 0.0;
        let mut nneg = 0;
        for (j, m2, same) in candidates(classes, i, m, cross) {
            if !same {
                acc += (dot(a, &e[m2][j]) - ap).exp();
                nneg += 1;
            }
        }
        if nneg == 0 {
            continue;
        }
        s += (1.0 + acc).ln();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Three unit vectors per class with pairwise dot `alpha`, each class in its
/// own coordinate block so that every inter-class dot is zero.
pub fn optimum_embeddings(alpha: f64, classes: &[BinaryClass]) -> [Vec<Vec<f64>>; 3] {
    let (a, r) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    let vector = |c: BinaryClass, m: usize| {
        let mut v = vec![0.0; 8];
        let base = if c == BinaryClass::Positive { 0 } else { 4 };
        v[base] = a;
        v[base + 1 + m] = r;
        v
    };
    [0, 1, 2].map(|m| classes.iter().map(|&c| vector(c, m)).collect())
}
