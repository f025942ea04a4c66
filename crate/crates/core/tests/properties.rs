mod common;

use common::*;
use hycon::losses::{
    baseline_loss, loss_iamcl, loss_iemcl, loss_prediction, loss_scl, BaselineKind, PairRegime,
    RatioForm, SimilarityBlock,
};
use hycon::metrics::compute_metrics;
use hycon::pairs::{all_anchors, pairs_iamcl, pairs_iemcl, pairs_scl, Polarity};
use hycon::pipeline::normalize_for_contrast;
use hycon::{BinaryClass, Graph, Matrix};
use proptest::prelude::*;

/// Every batch-level loss that does not depend on random partner draws.
fn loss_values(
    rows: &[Vec<Vec<f64>>; 3],
    classes: &[BinaryClass],
    scores: &[f64],
    alpha: f64,
) -> Vec<f64> {
    let mut g = Graph::new();
    let nodes = rows.clone().map(|r| {
        let leaf = g.leaf(Matrix::from_rows(&r).unwrap());
        normalize_for_contrast(&mut g, leaf)
    });
    let sims = SimilarityBlock::new(&mut g, &nodes).unwrap();
    let scl = loss_scl(&mut g, &sims, alpha).unwrap();
    let mut out = vec![g.scalar(scl)];
    for form in [RatioForm::Linear, RatioForm::Log] {
        let ia = loss_iamcl(&mut g, &sims, classes, form).unwrap();
        let ie = loss_iemcl(&mut g, &sims, classes, alpha, form).unwrap();
        out.extend([ia.ratio, ia.refine, ie.ratio, ie.refine].map(|n| g.scalar(n)));
    }
    for regime in [PairRegime::Intra, PairRegime::Inter] {
        let n = baseline_loss(
            &mut g,
            &sims,
            classes,
            regime,
            BaselineKind::HardTriplet,
            &[],
            false,
        )
        .unwrap();
        out.push(g.scalar(n));
    }
    let k = scores.len();
    let p = g.leaf(Matrix::from_vec(k, 1, (0..k).map(|i| 0.1 * i as f64).collect()).unwrap());
    let mae = loss_prediction(&mut g, p, scores).unwrap();
    out.push(g.scalar(mae));
    out
}

fn batch_strategy() -> impl Strategy<Value = (RawBatch, f64, u64)> {
    (2usize..=8, 1usize..=6, 0.0f64..=1.0, any::<u64>()).prop_map(|(k, d, alpha, seed)| {
        let mut b = random_batch(&mut seeded(seed), k, d);
        // no all-negative rows: a zero embedding ties with every partner,
        // and hard mining then resolves the tie by sample index
        for row in b.rows.iter_mut().flatten() {
            row[0] = row[0].abs() + 0.01;
        }
        (b, alpha, seed)
    })
}

fn permutation(k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..k).collect();
    p.shuffle(&mut seeded(seed ^ 0x5eed));
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn losses_are_permutation_invariant((b, alpha, seed) in batch_strategy()) {
        let perm = permutation(b.k(), seed);
        let rows = b.rows.clone().map(|blk| perm.iter().map(|&i| blk[i].clone()).collect());
        let classes: Vec<_> = perm.iter().map(|&i| b.classes[i]).collect();
        let scores: Vec<_> = perm.iter().map(|&i| b.scores[i]).collect();
        // the fixed prediction vector is positional, so the last value is left out
        let before = loss_values(&b.rows, &b.classes, &b.scores, alpha);
        let after = loss_values(&rows, &classes, &scores, alpha);
        let n = before.len() - 1;
        for (x, y) in before[..n].iter().zip(&after[..n]) {
            prop_assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn losses_ignore_row_scale((b, alpha, seed) in batch_strategy(), c in 0.1f64..10.0) {
        let row = (seed as usize) % b.k();
        let mut rows = b.rows.clone();
        for blk in rows.iter_mut() {
            blk[row].iter_mut().for_each(|x| *x *= c);
        }
        let before = loss_values(&b.rows, &b.classes, &b.scores, alpha);
        let after = loss_values(&rows, &b.classes, &b.scores, alpha);
        for (x, y) in before.iter().zip(&after) {
            prop_assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn losses_stay_in_bounds((b, alpha, _seed) in batch_strategy()) {
        let v = loss_values(&b.rows, &b.classes, &b.scores, alpha);
        prop_assert!((0.0..=1.0).contains(&v[0]), "scl {}", v[0]);
        // linear ratio terms and all refinement terms
        for (i, &x) in v[1..5].iter().enumerate() {
            if i % 2 == 0 {
                prop_assert!((-1.0..=0.0).contains(&x), "ratio {x}");
            } else {
                prop_assert!((0.0..=1.0).contains(&x), "refine {x}");
            }
        }
        prop_assert!((0.0..=1.0).contains(&v[6]) && (0.0..=1.0).contains(&v[8]));
        prop_assert!(v[v.len() - 1] >= 0.0);
    }

    #[test]
    fn normalized_dots_lie_in_unit_interval((b, _alpha, _seed) in batch_strategy()) {
        let e = normalized(&b);
        for x in e.iter().flatten() {
            for y in e.iter().flatten() {
                let s = dot(x, y);
                prop_assert!((-1e-15..=1.0 + 1e-12).contains(&s));
            }
        }
    }

    #[test]
    fn pair_sets_are_consistent(scores in prop::collection::vec(-3.0f64..3.0, 2..24), seed in any::<u64>()) {
        let classes: Vec<_> = scores.iter().map(|&s| class_of(s)).collect();
        let k = classes.len();
        let perm = permutation(k, seed);
        let permuted: Vec<_> = perm.iter().map(|&i| classes[i]).collect();
        for anchor in all_anchors(k) {
            for pairs in [pairs_scl(anchor), pairs_iamcl(anchor, &classes), pairs_iemcl(anchor, &classes)] {
                for p in &pairs.partners {
                    prop_assert!(!(p.sample == anchor.sample && p.modality == anchor.modality));
                    let same = classes[p.sample] == classes[anchor.sample];
                    prop_assert_eq!(p.polarity == Polarity::Positive, same);
                }
            }
            let ia = pairs_iamcl(anchor, &classes);
            let ie = pairs_iemcl(anchor, &classes);
            let mut expanded: Vec<_> = ia
                .partners
                .iter()
                .flat_map(|p| anchor.modality.others().map(|m| (p.sample, m, p.polarity)))
                .collect();
            let mut got: Vec<_> = ie.partners.iter().map(|p| (p.sample, p.modality, p.polarity)).collect();
            expanded.sort();
            got.sort();
            prop_assert_eq!(expanded, got);

            // moving the anchor's sample to its new position keeps the tag multiset
            let new_pos = perm.iter().position(|&i| i == anchor.sample).unwrap();
            let moved = hycon::pairs::AnchorRef { sample: new_pos, modality: anchor.modality };
            let tags = |pi: &hycon::pairs::PairIndex, cl: &[BinaryClass]| {
                let mut t: Vec<_> = pi.partners.iter().map(|p| (cl[p.sample], p.modality, p.polarity)).collect();
                t.sort();
                t
            };
            prop_assert_eq!(tags(&ie, &classes), tags(&pairs_iemcl(moved, &permuted), &permuted));
        }
    }

    #[test]
    fn metrics_stay_in_range(pairs in prop::collection::vec((-4.0f64..4.0, -3.0f64..3.0), 1..60)) {
        let (pred, truth): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = compute_metrics(&pred, &truth).unwrap();
        for x in [m.acc7, m.acc2, m.f1] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        prop_assert!(m.mae >= 0.0);
        prop_assert!((-1.0..=1.0).contains(&m.corr));
    }
}
