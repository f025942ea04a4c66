//! Gradient checks of every training loss on seeded random batches.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

use crate::diff::{Graph, Matrix, NodeId};
use crate::gradcheck::{finite_diff_check_tampered, GradCheckReport, DEFAULT_STEP};
use crate::losses::{
    baseline_loss, draw_partners, hard_partners, loss_iamcl, loss_iemcl, loss_prediction, loss_scl,
    BaselineKind, PairRegime, PartnerDraw, RatioForm, SimilarityBlock,
};
use crate::model::BinaryClass;
use crate::pipeline::normalize_for_contrast;
use crate::{Error, Result};

/// A loss covered by the suite. The supervised contrastive losses are
/// checked including their refinement terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CheckedLoss {
    Scl,
    Iamcl,
    Iemcl,
    Prediction,
    Classical,
    Triplet,
    HardTriplet,
    NPair,
}

impl CheckedLoss {
    pub const ALL: [CheckedLoss; 8] = [
        CheckedLoss::Scl,
        CheckedLoss::Iamcl,
        CheckedLoss::Iemcl,
        CheckedLoss::Prediction,
        CheckedLoss::Classical,
        CheckedLoss::Triplet,
        CheckedLoss::HardTriplet,
        CheckedLoss::NPair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckedLoss::Scl => "scl",
            CheckedLoss::Iamcl => "iamcl+refine",
            CheckedLoss::Iemcl => "iemcl+refine",
            CheckedLoss::Prediction => "prediction",
            CheckedLoss::Classical => "classical",
            CheckedLoss::Triplet => "triplet",
            CheckedLoss::HardTriplet => "hard-triplet",
            CheckedLoss::NPair => "n-pair",
        }
    }

    fn baseline(self) -> Option<BaselineKind> {
        match self {
            CheckedLoss::Classical => Some(BaselineKind::Classical),
            CheckedLoss::Triplet => Some(BaselineKind::Triplet),
            CheckedLoss::HardTriplet => Some(BaselineKind::HardTriplet),
            CheckedLoss::NPair => Some(BaselineKind::NPair),
            _ => None,
        }
    }
}

impl fmt::Display for CheckedLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CheckedLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckedLoss::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown loss `{s}`")))
    }
}

/// Shape and loss settings for the suite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteParams {
    pub k: usize,
    pub d: usize,
    pub alpha: f64,
    pub ratio_form: RatioForm,
    pub hinged_triplet: bool,
    pub step: f64,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams {
            k: 8,
            d: 6,
            alpha: 0.8,
            ratio_form: RatioForm::Linear,
            hinged_triplet: false,
            step: DEFAULT_STEP,
        }
    }
}

/// A seeded random batch: raw embedding entries in [0.05, 1] (away from the
/// ReLU kink), balanced classes, and prediction/target pairs.
#[derive(Clone, Debug)]
pub struct CheckCase {
    /// Three K×d blocks, flattened in modality order.
    pub embeddings: Vec<f64>,
    pub classes: Vec<BinaryClass>,
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
    pub intra_draws: Vec<PartnerDraw>,
    pub inter_draws: Vec<PartnerDraw>,
}

impl CheckCase {
    pub fn random(seed: u64, k: usize, d: usize) -> Result<Self> {
        if k < 2 || d == 0 {
            return Err(Error::Invalid(
                "gradient checks need K ≥ 2 and d ≥ 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = (0..3 * k * d)
            .map(|_| rng.random_range(0.05..1.0))
            .collect();
        let mut classes: Vec<BinaryClass> = (0..k)
            .map(|i| {
                if i < k.div_ceil(2) {
                    BinaryClass::Positive
                } else {
                    BinaryClass::Negative
                }
            })
            .collect();
        classes.shuffle(&mut rng);
        let predictions = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let targets = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let intra_draws = draw_partners(&classes, PairRegime::Intra, &mut rng);
        let inter_draws = draw_partners(&classes, PairRegime::Inter, &mut rng);
        Ok(CheckCase {
            embeddings,
            classes,
            predictions,
            targets,
            intra_draws,
            inter_draws,
        })
    }
}

fn similarity(g: &mut Graph, theta: NodeId, k: usize, d: usize) -> Result<SimilarityBlock> {
    let mut blocks = Vec::with_capacity(3);
    for m in 0..3 {
        let raw = g.view(theta, m * k * d, k, d)?;
        blocks.push(normalize_for_contrast(g, raw));
    }
    SimilarityBlock::new(g, &[blocks[0], blocks[1], blocks[2]])
}

/// Builds the loss graph for `loss` over the parameter node `theta`.
fn build(
    g: &mut Graph,
    theta: NodeId,
    loss: CheckedLoss,
    case: &CheckCase,
    mined: &[Vec<PartnerDraw>; 2],
    p: &SuiteParams,
) -> Result<NodeId> {
    if loss == CheckedLoss::Prediction {
        return loss_prediction(g, theta, &case.targets);
    }
    let sims = similarity(g, theta, case.classes.len(), p.d)?;
    match loss {
        CheckedLoss::Scl => loss_scl(g, &sims, p.alpha),
        CheckedLoss::Iamcl => loss_iamcl(g, &sims, &case.classes, p.ratio_form)?.total(g),
        CheckedLoss::Iemcl => loss_iemcl(g, &sims, &case.classes, p.alpha, p.ratio_form)?.total(g),
        _ => {
            // hard mining is piecewise constant: its gradient is that of the
            // triplets selected at the check point
            let (kind, draws) = match loss {
                CheckedLoss::HardTriplet => (BaselineKind::Triplet, mined),
                _ => (
                    loss.baseline().expect("remaining losses are baselines"),
                    &[case.intra_draws.clone(), case.inter_draws.clone()],
                ),
            };
            let mut total = Vec::with_capacity(2);
            for (regime, d) in [PairRegime::Intra, PairRegime::Inter]
                .into_iter()
                .zip(draws)
            {
                total.push(baseline_loss(
                    g,
                    &sims,
                    &case.classes,
                    regime,
                    kind,
                    d,
                    p.hinged_triplet,
                )?);
            }
            g.add(total[0], total[1])
        }
    }
}

/// Checks one loss on the batch drawn from `seed`. `tamper` may alter the
/// analytic gradient before comparison (negative control).
pub fn check_loss(
    loss: CheckedLoss,
    seed: u64,
    params: &SuiteParams,
    tamper: &dyn Fn(&mut [f64]),
) -> Result<GradCheckReport> {
    let case = CheckCase::random(seed, params.k, params.d)?;
    let theta = if loss == CheckedLoss::Prediction {
        &case.predictions
    } else {
        &case.embeddings
    };
    let mined = if loss == CheckedLoss::HardTriplet {
        let mut g = Graph::new();
        let t = g.leaf(Matrix::row_vector(theta.to_vec()));
        let sims = similarity(&mut g, t, params.k, params.d)?;
        [PairRegime::Intra, PairRegime::Inter].map(|r| hard_partners(&g, &sims, &case.classes, r))
    } else {
        [Vec::new(), Vec::new()]
    };
    finite_diff_check_tampered(
        |g, t| build(g, t, loss, &case, &mined, params),
        theta,
        params.step,
        tamper,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for l in CheckedLoss::ALL {
            assert_eq!(l.name().parse::<CheckedLoss>().unwrap(), l);
        }
        assert!("bogus".parse::<CheckedLoss>().is_err());
    }

    #[test]
    fn every_loss_passes_on_one_seed() {
        let p = SuiteParams::default();
        for l in CheckedLoss::ALL {
            let r = check_loss(l, 3, &p, &|_| {}).unwrap();
            assert!(r.passes(1e-4), "{l}: {r:?}");
        }
    }

    #[test]
    fn corrupted_gradient_fails() {
        let p = SuiteParams::default();
        let r = check_loss(CheckedLoss::Scl, 3, &p, &|g| {
            g.iter_mut().for_each(|x| *x *= 1.5)
        })
        .unwrap();
        assert!(!r.passes(1e-4));
    }

    #[test]
    fn cases_are_balanced_and_seeded() {
        let a = CheckCase::random(9, 8, 6).unwrap();
        let b = CheckCase::random(9, 8, 6).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(
            a.classes
                .iter()
                .filter(|&&c| c == BinaryClass::Positive)
                .count(),
            4
        );
    }
}
