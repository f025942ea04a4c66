//! Adam optimization of the overall loss and dataset-level evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::diff::{Graph, Matrix};
use crate::losses::{
    contrastive_terms, loss_hybrid, loss_prediction, Lambdas, LossConfig, LossReport,
};
use crate::metrics::{compute_metrics, silhouette, Metrics};
use crate::model::{HyperParams, MiniBatch};
use crate::pipeline::{forward, fused_embedding, predict, FusionKind, ModelParams};
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &[Matrix]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        Adam {
            learning_rate,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Shape(
                "optimizer state does not match parameters".into(),
            ));
        }
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if p.shape() != g.shape() || p.len() != m.len() {
                return Err(Error::Shape("gradient shape differs from parameter".into()));
            }
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *x -= self.learning_rate * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Everything that determines a training run besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub hyper: HyperParams,
    pub fusion: FusionKind,
    pub loss: LossConfig,
    pub fuse_normalized: bool,
}

impl TrainConfig {
    pub fn new(hyper: HyperParams) -> Self {
        TrainConfig {
            hyper,
            fusion: FusionKind::Addition,
            loss: LossConfig::default(),
            fuse_normalized: true,
        }
    }

    pub fn lambdas(&self) -> Lambdas {
        Lambdas::new(self.hyper.lambda1, self.hyper.lambda2, self.hyper.lambda3)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Termwise mean over the epoch's mini-batches.
    pub train: LossReport,
    pub val_mae: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation MAE, or the last
    /// epoch when no validation set is given.
    pub params: ModelParams,
    pub epochs: Vec<EpochRecord>,
    /// One report per optimizer step, in order.
    pub steps: Vec<LossReport>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// One forward/backward pass: the loss report and the gradient of the
/// overall loss for every parameter tensor.
pub fn loss_and_grads(
    params: &ModelParams,
    batch: &MiniBatch,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(LossReport, Vec<Matrix>)> {
    let mut g = Graph::new();
    let f = forward(&mut g, params, batch)?;
    let terms = contrastive_terms(
        &mut g,
        &f.normalized,
        batch.classes(),
        cfg.hyper.alpha,
        &cfg.loss,
        rng,
    )?;
    let hybrid = loss_hybrid(&mut g, &terms, cfg.lambdas())?;
    let pred = loss_prediction(&mut g, f.prediction, &batch.scores())?;
    let overall = g.add(pred, hybrid)?;
    let s = |id| g.value(id).data()[0];
    let report = LossReport {
        l_scl: s(terms.scl),
        l_iamcl: s(terms.iamcl),
        l_iamcl_refine: s(terms.iamcl_refine),
        l_iemcl: s(terms.iemcl),
        l_iemcl_refine: s(terms.iemcl_refine),
        l_hybrid: s(hybrid),
        l_pred: s(pred),
        l_overall: s(overall),
    };
    if let Some(term) = report.first_non_finite() {
        return Err(Error::NonFinite { term: term.into() });
    }
    g.backward(overall)?;
    let grads: Vec<Matrix> = f.params.iter().map(|&p| g.grad(p)).collect();
    if grads
        .iter()
        .any(|m| m.data().iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite {
            term: "gradient of l_overall".into(),
        });
    }
    Ok((report, grads))
}

fn check_config(train: &Dataset, cfg: &TrainConfig) -> Result<()> {
    cfg.hyper.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    if cfg.hyper.batch_size > train.len() {
        return Err(Error::Invalid(format!(
            "batch size {} exceeds the {} training samples",
            cfg.hyper.batch_size,
            train.len()
        )));
    }
    Ok(())
}

/// Trains encoders and head with Adam on shuffled mini-batches.
///
/// With a validation set, training stops once validation MAE has not
/// improved for `patience` epochs and the best parameters are returned.
/// The run is a pure function of the data and `cfg`: initialization and
/// shuffling use one seeded stream, partner sampling a second.
pub fn train(train: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    check_config(train, cfg)?;
    let h = &cfg.hyper;
    let mut rng = ChaCha8Rng::seed_from_u64(h.seed);
    let mut partner_rng = ChaCha8Rng::seed_from_u64(h.seed);
    partner_rng.set_stream(1);

    let mut params = ModelParams::init(
        train.widths(),
        h.hidden,
        h.d,
        cfg.fusion,
        cfg.fuse_normalized,
        &mut rng,
    )?;
    let mut opt = Adam::new(h.learning_rate, &params.tensors);
    let val_batch = val.map(Dataset::as_batch).transpose()?;

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(h.epochs);
    let mut steps = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stopped_early = false;

    for epoch in 0..h.epochs {
        order.shuffle(&mut rng);
        let mut reports = Vec::with_capacity(order.len().div_ceil(h.batch_size));
        for chunk in order.chunks(h.batch_size) {
            let batch = train.batch(chunk)?;
            let (report, grads) = loss_and_grads(&params, &batch, cfg, &mut partner_rng)?;
            opt.step(&mut params.tensors, &grads)?;
            reports.push(report);
        }
        let mean = LossReport::mean(&reports);
        steps.extend(reports);

        let val_mae = match &val_batch {
            Some(b) if !b.is_empty() => {
                let pred = predict(&params, b)?;
                Some(compute_metrics(&pred, &b.scores())?.mae)
            }
            _ => None,
        };
        log::debug!(
            "epoch {epoch}: overall {:.6} val mae {val_mae:?}",
            mean.l_overall
        );
        epochs.push(EpochRecord {
            epoch,
            train: mean,
            val_mae,
        });

        if let Some(mae) = val_mae {
            if best.as_ref().is_none_or(|(b, _, _)| mae < *b) {
                best = Some((mae, epoch, params.clone()));
            } else if epoch - best.as_ref().map_or(0, |b| b.1) >= h.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let last = epochs.len().saturating_sub(1);
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (params, last),
    };
    Ok(TrainOutcome {
        params,
        epochs,
        steps,
        best_epoch,
        stopped_early,
    })
}

/// The five metrics of the model's predictions on `ds`.
pub fn evaluate(params: &ModelParams, ds: &Dataset) -> Result<Metrics> {
    if ds.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty dataset".into()));
    }
    let batch = ds.as_batch()?;
    compute_metrics(&predict(params, &batch)?, &batch.scores())
}

/// Silhouette of the fused representation under the binary labelling.
pub fn fused_silhouette(params: &ModelParams, ds: &Dataset) -> Result<f64> {
    let batch = ds.as_batch()?;
    silhouette(&fused_embedding(params, &batch)?, batch.classes())
}
