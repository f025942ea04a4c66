use hycon::diff::log1p_sum_exp;
use hycon::gradcheck::{finite_diff_check, DEFAULT_STEP};
use hycon::gradsuite::{check_loss, CheckedLoss, SuiteParams};
use hycon::losses::{
    contrastive_terms, loss_hybrid, loss_prediction, Lambdas, LossConfig, RatioForm,
};
use hycon::pipeline::{encode, fuse, normalize_for_contrast, predict, FusionKind, ModelParams};
use hycon::{Graph, Matrix, MiniBatch, Modality, NodeId, SentimentLabel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

const TOL: f64 = 1e-4;

#[test]
fn every_loss_passes_over_twenty_batches() {
    let start = Instant::now();
    let params = SuiteParams::default();
    for loss in CheckedLoss::ALL {
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let r = check_loss(loss, seed, &params, &|_| {}).unwrap();
            assert!(r.passes(TOL), "{loss} seed {seed}: {r:?}");
            worst = worst.max(r.max_rel_err);
        }
        println!("{loss}: max rel err {worst:.2e}");
    }
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn log_ratio_and_hinged_variants_pass() {
    let params = SuiteParams {
        ratio_form: RatioForm::Log,
        hinged_triplet: true,
        ..SuiteParams::default()
    };
    for loss in [CheckedLoss::Iamcl, CheckedLoss::Iemcl, CheckedLoss::Triplet] {
        for seed in 0..20 {
            let r = check_loss(loss, seed, &params, &|_| {}).unwrap();
            assert!(r.passes(TOL), "{loss} seed {seed}: {r:?}");
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Runs `build` through the checker on 20 seeded parameter vectors.
fn check_op(
    name: &str,
    n: usize,
    lo: f64,
    hi: f64,
    build: impl Fn(&mut Graph, NodeId) -> hycon::Result<NodeId>,
) {
    for seed in 0..20 {
        let theta = uniform(&mut ChaCha8Rng::seed_from_u64(seed), n, lo, hi);
        let r = finite_diff_check(&build, &theta, DEFAULT_STEP).unwrap();
        assert!(r.passes(TOL), "{name} seed {seed}: {r:?}");
    }
}

/// Weighted sum of all entries, so every output coordinate matters.
fn probe(g: &mut Graph, x: NodeId) -> hycon::Result<NodeId> {
    let (r, c) = g.value(x).shape();
    let w: Vec<f64> = (0..r * c).map(|i| 0.3 + 0.17 * i as f64).collect();
    let w = g.leaf(Matrix::from_vec(r, c, w)?);
    let y = g.mul(x, w)?;
    Ok(g.sum(y))
}

#[test]
fn ops_pass_gradient_checks() {
    check_op("linear", 3 * 2 + 2 * 2 + 2, -1.0, 1.0, |g, t| {
        let x = g.view(t, 0, 3, 2)?;
        let w = g.view(t, 6, 2, 2)?;
        let b = g.view(t, 10, 1, 2)?;
        let y = g.linear(x, w, b)?;
        probe(g, y)
    });
    // entries kept at least 1e-3 away from the kink
    check_op("relu", 12, 1e-3, 1.0, |g, t| {
        let neg = g.scale(t, -1.0);
        let a = g.relu(t);
        let b = g.relu(neg);
        let s = g.add(a, b)?;
        probe(g, s)
    });
    check_op("l2_normalize_rows", 12, -1.0, 1.0, |g, t| {
        let x = g.view(t, 0, 4, 3)?;
        let y = g.l2_normalize_rows(x);
        probe(g, y)
    });
    check_op("dot", 10, -1.0, 1.0, |g, t| {
        let a = g.view(t, 0, 1, 5)?;
        let b = g.view(t, 5, 1, 5)?;
        g.dot(a, b)
    });
    check_op("matmul variants", 12 + 12, -1.0, 1.0, |g, t| {
        let a = g.view(t, 0, 3, 4)?;
        let b = g.view(t, 12, 3, 4)?;
        let abt = g.matmul_bt(a, b)?;
        let bt = g.view(t, 12, 4, 3)?;
        let ab = g.matmul(a, bt)?;
        let s1 = probe(g, abt)?;
        let s2 = probe(g, ab)?;
        g.add(s1, s2)
    });
    check_op("div, ln, square, abs", 8, 0.2, 2.0, |g, t| {
        let a = g.view(t, 0, 1, 4)?;
        let b = g.view(t, 4, 1, 4)?;
        let q = g.div(a, b)?;
        let l = g.ln(q);
        let s = g.square(l);
        let off = g.offset(a, -1.1);
        let ab = g.abs(off);
        let s1 = probe(g, s)?;
        let s2 = probe(g, ab)?;
        g.add(s1, s2)
    });
    check_op("fusion ops", 3 * 4, -1.0, 1.0, |g, t| {
        let x: Vec<NodeId> = (0..3)
            .map(|m| g.view(t, 4 * m, 2, 2))
            .collect::<hycon::Result<_>>()?;
        let sum = g.add_n(&x)?;
        let cat = g.concat_cols(&x)?;
        let ones = g.append_ones(x[0]);
        let o1 = g.row_outer(ones, x[1])?;
        let o2 = g.row_outer(o1, x[2])?;
        let parts = [probe(g, sum)?, probe(g, cat)?, probe(g, o2)?];
        let s = g.add_n(&parts)?;
        Ok(s)
    });
    check_op(
        "gather, segment_sum, mean, log1p_sum_exp",
        6,
        -2.0,
        2.0,
        |g, t| {
            let v = g.gather(t, vec![0, 3, 3, 5, 1])?;
            let s = g.segment_sum(v, vec![2, 3])?;
            let piv = g.view(t, 2, 1, 1)?;
            let z = g.sub_scalar(s, piv)?;
            let l = g.log1p_sum_exp(z);
            let m = g.mean(t);
            g.add(l, m)
        },
    );
}

#[test]
fn log1p_sum_exp_matches_naive_sum() {
    let z = [0.3, -1.2, 0.05];
    let naive = (1.0 + z.iter().map(|x: &f64| x.exp()).sum::<f64>()).ln();
    assert!((log1p_sum_exp(&z) - naive).abs() < 1e-14);
}

fn tiny_batch(rng: &mut ChaCha8Rng, k: usize, widths: [usize; 3]) -> MiniBatch {
    let features = widths.map(|w| (0..k).map(|_| uniform(rng, w, -1.0, 1.0)).collect());
    let labels = (0..k)
        .map(|i| {
            let s: f64 = rng.random_range(0.2..3.0);
            SentimentLabel::new(if i % 2 == 0 { s } else { -s }).unwrap()
        })
        .collect();
    MiniBatch::new(features, labels).unwrap()
}

/// True when a ReLU input or a prediction residual lies within 1e-3 of its
/// kink, where central differences straddle a nondifferentiable point.
fn near_kink(params: &ModelParams, batch: &MiniBatch) -> bool {
    let close = |m: &Matrix| m.data().iter().any(|v| v.abs() < 1e-3);
    let t = &params.tensors;
    for mo in Modality::ALL {
        let i = 4 * mo.index();
        let x = Matrix::from_rows(batch.features(mo)).unwrap();
        let pre1 = add_row(&x.matmul(&t[i]), &t[i + 1]);
        let hidden = Matrix::from_vec(
            pre1.shape().0,
            pre1.shape().1,
            pre1.data().iter().map(|v| v.max(0.0)).collect(),
        )
        .unwrap();
        let pre2 = add_row(&hidden.matmul(&t[i + 2]), &t[i + 3]);
        if close(&pre1) || close(&pre2) {
            return true;
        }
    }
    let pred = predict(params, batch).unwrap();
    pred.iter()
        .zip(batch.scores())
        .any(|(p, y)| (p - y).abs() < 1e-3)
}

fn add_row(m: &Matrix, b: &Matrix) -> Matrix {
    let c = m.shape().1;
    let data = m
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v + b.data()[i % c])
        .collect();
    Matrix::from_vec(m.shape().0, c, data).unwrap()
}

fn end_to_end(fusion: FusionKind, cfg: LossConfig) {
    let (k, h, d, widths) = (6, 5, 4, [3, 2, 4]);
    let mut checked = 0;
    for seed in 0.. {
        if checked == 20 {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let batch = tiny_batch(&mut rng, k, widths);
        let mut params = ModelParams::init(widths, h, d, fusion, true, &mut rng).unwrap();
        // nonzero biases: with zero biases a fully dead hidden layer gives an
        // exactly zero embedding row, which sits on the normalization's jump
        for t in params.tensors.iter_mut().filter(|t| t.shape().0 == 1) {
            t.data_mut()
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        let theta: Vec<f64> = params
            .tensors
            .iter()
            .flat_map(|m| m.data().to_vec())
            .collect();
        if near_kink(&params, &batch) {
            continue;
        }
        checked += 1;
        let shapes: Vec<(usize, usize)> = params.tensors.iter().map(Matrix::shape).collect();
        let classes = batch.classes().to_vec();
        let scores = batch.scores();
        let build = |g: &mut Graph, t: NodeId| {
            let mut leaves = Vec::new();
            let mut off = 0;
            for &(r, c) in &shapes {
                leaves.push(g.view(t, off, r, c)?);
                off += r * c;
            }
            let raw = encode(g, &params, &leaves, &batch)?;
            let x = raw.map(|r| normalize_for_contrast(g, r));
            let n = leaves.len();
            let pred = fuse(g, x, fusion, leaves[n - 2], leaves[n - 1])?;
            let terms = contrastive_terms(
                g,
                &x,
                &classes,
                0.8,
                &cfg,
                &mut ChaCha8Rng::seed_from_u64(seed),
            )?;
            let hybrid = loss_hybrid(g, &terms, Lambdas::new(1.0, 1.0, 1.0))?;
            let mae = loss_prediction(g, pred, &scores)?;
            g.add(mae, hybrid)
        };
        let r = finite_diff_check(build, &theta, DEFAULT_STEP).unwrap();
        assert!(
            r.passes(TOL),
            "{fusion} {} seed {seed}: {r:?}",
            cfg.regime_name()
        );
    }
}

#[test]
fn encoder_to_overall_loss_passes() {
    for fusion in [
        FusionKind::Addition,
        FusionKind::Concatenation,
        FusionKind::Tensor,
    ] {
        end_to_end(fusion, LossConfig::default());
    }
    end_to_end(FusionKind::Addition, LossConfig::prediction_only());
}
