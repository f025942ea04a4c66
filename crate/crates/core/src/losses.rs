//! Training objectives.
//!
//! Every batch-level contrastive loss reads its dot products from a
//! [`SimilarityBlock`]: the nine K×K matrices `E_m · E_m'ᵀ` between the
//! normalized embedding blocks, stacked into one graph node. Partner sets
//! come from [`crate::pairs`]; each loss gathers the entries it needs and
//! averages over the anchors that contribute.
//!
//! Anchors with no positives, or whose ratio denominator is exactly zero,
//! are left out of a ratio loss and out of its mean. Refinement terms
//! average over anchors with at least one positive.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::diff::{dot_slices, log1p_sum_exp, Graph, Matrix, NodeId};
use crate::model::{BinaryClass, Modality};
use crate::pairs::{
    all_anchors, pairs_iamcl, pairs_iemcl, pairs_scl, AnchorRef, PairIndex, Partner,
};
use crate::{Error, Result};

/// Added inside both logarithms of the `log` ratio form.
pub const LOG_FORM_EPS: f64 = 1e-8;

/// How the supervised ratio `Σpos / (Σpos + Σneg)` enters the loss:
/// `linear` is `−ratio`, `log` is `−ln(ratio)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioForm {
    #[default]
    Linear,
    Log,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    #[serde(rename = "triplet")]
    Triplet,
    #[serde(rename = "hard-triplet")]
    HardTriplet,
    #[serde(rename = "n-pair")]
    NPair,
    #[serde(rename = "classical")]
    Classical,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::Triplet,
        BaselineKind::HardTriplet,
        BaselineKind::NPair,
        BaselineKind::Classical,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Triplet => "triplet",
            BaselineKind::HardTriplet => "hard-triplet",
            BaselineKind::NPair => "n-pair",
            BaselineKind::Classical => "classical",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown baseline loss `{s}`")))
    }
}

/// Which contrastive terms take part in training.
///
/// When `baseline` is set, the intra- and inter-modal supervised losses are
/// replaced by that baseline on the same partner sets, the semi-contrastive
/// term is kept, and the three enable flags are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub enable_scl: bool,
    pub enable_iamcl: bool,
    pub enable_iemcl: bool,
    pub enable_refinement: bool,
    pub ratio_form: RatioForm,
    pub baseline: Option<BaselineKind>,
    /// Clamp the triplet loss at zero.
    pub hinged_triplet: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            enable_scl: true,
            enable_iamcl: true,
            enable_iemcl: true,
            enable_refinement: true,
            ratio_form: RatioForm::Linear,
            baseline: None,
            hinged_triplet: false,
        }
    }
}

impl LossConfig {
    pub fn prediction_only() -> Self {
        LossConfig {
            enable_scl: false,
            enable_iamcl: false,
            enable_iemcl: false,
            enable_refinement: false,
            ..LossConfig::default()
        }
    }

    pub fn with_baseline(kind: BaselineKind) -> Self {
        LossConfig {
            baseline: Some(kind),
            ..LossConfig::default()
        }
    }

    pub fn is_prediction_only(&self) -> bool {
        self.baseline.is_none() && !self.enable_scl && !self.enable_iamcl && !self.enable_iemcl
    }

    /// Short label for result tables.
    pub fn regime_name(&self) -> String {
        if let Some(b) = self.baseline {
            return b.name().to_string();
        }
        if self.is_prediction_only() {
            return "prediction-only".into();
        }
        let mut name = String::from("hycon");
        for (on, tag) in [
            (self.enable_scl, "scl"),
            (self.enable_iamcl, "iamcl"),
            (self.enable_iemcl, "iemcl"),
        ] {
            if !on {
                name.push_str("-no-");
                name.push_str(tag);
            }
        }
        if !self.enable_refinement && (self.enable_iamcl || self.enable_iemcl) {
            name.push_str("-no-refinement");
        }
        if self.ratio_form == RatioForm::Log {
            name.push_str("-log");
        }
        name
    }
}

/// The weights of the hybrid sum: intra-modal, inter-modal, semi-contrastive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lambdas {
    pub intra: f64,
    pub inter: f64,
    pub semi: f64,
}

impl Lambdas {
    pub fn new(intra: f64, inter: f64, semi: f64) -> Self {
        Lambdas { intra, inter, semi }
    }
}

/// Scalar values of every loss term for one evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_scl: f64,
    pub l_iamcl: f64,
    pub l_iamcl_refine: f64,
    pub l_iemcl: f64,
    pub l_iemcl_refine: f64,
    pub l_hybrid: f64,
    pub l_pred: f64,
    pub l_overall: f64,
}

impl LossReport {
    pub const TERMS: [&'static str; 8] = [
        "l_scl",
        "l_iamcl",
        "l_iamcl_refine",
        "l_iemcl",
        "l_iemcl_refine",
        "l_hybrid",
        "l_pred",
        "l_overall",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.l_scl,
            self.l_iamcl,
            self.l_iamcl_refine,
            self.l_iemcl,
            self.l_iemcl_refine,
            self.l_hybrid,
            self.l_pred,
            self.l_overall,
        ]
    }

    /// Name of the first non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        Self::TERMS
            .into_iter()
            .zip(self.values())
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }

    /// Termwise mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut acc = [0.0; 8];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        let v = acc.map(|a| a / n);
        LossReport {
            l_scl: v[0],
            l_iamcl: v[1],
            l_iamcl_refine: v[2],
            l_iemcl: v[3],
            l_iemcl_refine: v[4],
            l_hybrid: v[5],
            l_pred: v[6],
            l_overall: v[7],
        }
    }
}

/// All pairwise dot products between the rows of the three embedding blocks.
#[derive(Clone, Copy, Debug)]
pub struct SimilarityBlock {
    node: NodeId,
    k: usize,
}

impl SimilarityBlock {
    /// `embeddings` are K×d nodes indexed by `Modality::index()`.
    pub fn new(g: &mut Graph, embeddings: &[NodeId; 3]) -> Result<Self> {
        let shape = g.value(embeddings[0]).shape();
        if embeddings.iter().any(|&e| g.value(e).shape() != shape) {
            return Err(Error::Shape(
                "modality embeddings must share one K×d shape".into(),
            ));
        }
        let mut blocks = Vec::with_capacity(9);
        for &a in embeddings {
            for &b in embeddings {
                blocks.push(g.matmul_bt(a, b)?);
            }
        }
        let node = g.stack(&blocks)?;
        Ok(SimilarityBlock { node, k: shape.0 })
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn batch_size(&self) -> usize {
        self.k
    }

    /// Flat position of `(row i of m1) · (row j of m2)`.
    pub fn index(&self, m1: Modality, i: usize, m2: Modality, j: usize) -> usize {
        ((m1.index() * 3 + m2.index()) * self.k + i) * self.k + j
    }

    fn partner_index(&self, anchor: AnchorRef, p: &Partner) -> usize {
        self.index(anchor.modality, anchor.sample, p.modality, p.sample)
    }

    pub fn get(&self, g: &Graph, m1: Modality, i: usize, m2: Modality, j: usize) -> f64 {
        g.value(self.node).data()[self.index(m1, i, m2, j)]
    }
}

fn zero(g: &mut Graph) -> NodeId {
    g.leaf(Matrix::scalar(0.0))
}

/// Semi-contrastive loss: mean over all 3K anchors of
/// `½ Σ (a·p − α)²` across the anchor sample's two other modalities.
pub fn loss_scl(g: &mut Graph, sims: &SimilarityBlock, alpha: f64) -> Result<NodeId> {
    let k = sims.batch_size();
    let idx: Vec<usize> = all_anchors(k)
        .into_iter()
        .flat_map(|a| {
            pairs_scl(a)
                .partners
                .into_iter()
                .map(move |p| sims.partner_index(a, &p))
        })
        .collect();
    let v = g.gather(sims.node, idx)?;
    let shifted = g.offset(v, -alpha);
    let sq = g.square(shifted);
    let total = g.sum(sq);
    Ok(g.scale(total, 0.5 / (3 * k) as f64))
}

/// A supervised contrastive loss split into its ratio and refinement parts.
#[derive(Clone, Copy, Debug)]
pub struct RatioLoss {
    pub ratio: NodeId,
    pub refine: NodeId,
}

impl RatioLoss {
    pub fn total(&self, g: &mut Graph) -> Result<NodeId> {
        g.add(self.ratio, self.refine)
    }
}

struct PartnerSet {
    pos: Vec<usize>,
    neg: Vec<usize>,
}

fn partner_sets(sims: &SimilarityBlock, pairs: impl Iterator<Item = PairIndex>) -> Vec<PartnerSet> {
    pairs
        .map(|p| PartnerSet {
            pos: p
                .positives()
                .map(|q| sims.partner_index(p.anchor, q))
                .collect(),
            neg: p
                .negatives()
                .map(|q| sims.partner_index(p.anchor, q))
                .collect(),
        })
        .collect()
}

fn ratio_term(
    g: &mut Graph,
    sims: &SimilarityBlock,
    sets: &[PartnerSet],
    form: RatioForm,
) -> Result<NodeId> {
    let vals = g.value(sims.node).data();
    let usable = |s: &&PartnerSet| {
        if s.pos.is_empty() {
            return false;
        }
        let p: f64 = s.pos.iter().map(|&i| vals[i]).sum();
        let d = p + s.neg.iter().map(|&i| vals[i]).sum::<f64>();
        match form {
            RatioForm::Linear => d != 0.0,
            RatioForm::Log => p + LOG_FORM_EPS > 0.0 && d + LOG_FORM_EPS > 0.0,
        }
    };
    let used: Vec<&PartnerSet> = sets.iter().filter(usable).collect();
    if used.is_empty() {
        return Ok(zero(g));
    }
    let pos_sum = gather_segments(g, sims.node, used.iter().map(|s| s.pos.as_slice()))?;
    let neg_sum = gather_segments(g, sims.node, used.iter().map(|s| s.neg.as_slice()))?;
    let denom = g.add(pos_sum, neg_sum)?;
    match form {
        RatioForm::Linear => {
            let r = g.div(pos_sum, denom)?;
            let m = g.mean(r);
            Ok(g.scale(m, -1.0))
        }
        RatioForm::Log => {
            let d = g.offset(denom, LOG_FORM_EPS);
            let p = g.offset(pos_sum, LOG_FORM_EPS);
            let ld = g.ln(d);
            let lp = g.ln(p);
            let diff = g.sub(ld, lp)?;
            Ok(g.mean(diff))
        }
    }
}

/// One sum per segment: gathers the listed entries of `src` and sums them
/// run by run into a 1×S row.
fn gather_segments<'a>(
    g: &mut Graph,
    src: NodeId,
    segments: impl Iterator<Item = &'a [usize]>,
) -> Result<NodeId> {
    let mut idx = Vec::new();
    let mut lens = Vec::new();
    for s in segments {
        idx.extend_from_slice(s);
        lens.push(s.len());
    }
    let v = g.gather(src, idx)?;
    g.segment_sum(v, lens)
}

fn refinement_term(
    g: &mut Graph,
    sims: &SimilarityBlock,
    sets: &[PartnerSet],
    target: f64,
) -> Result<NodeId> {
    let used: Vec<&PartnerSet> = sets.iter().filter(|s| !s.pos.is_empty()).collect();
    if used.is_empty() {
        return Ok(zero(g));
    }
    let mut idx = Vec::new();
    let mut lens = Vec::new();
    for s in &used {
        idx.extend_from_slice(&s.pos);
        lens.push(s.pos.len());
    }
    let inv: Vec<f64> = lens.iter().map(|&n| 1.0 / n as f64).collect();
    let v = g.gather(sims.node, idx)?;
    let shifted = g.offset(v, -target);
    let sq = g.square(shifted);
    let per_anchor = g.segment_sum(sq, lens)?;
    let w = g.leaf(Matrix::row_vector(inv));
    let mean_sq = g.mul(per_anchor, w)?;
    Ok(g.mean(mean_sq))
}

/// Intra-modal supervised contrastive loss. The refinement pulls positive
/// similarities toward 1.
pub fn loss_iamcl(
    g: &mut Graph,
    sims: &SimilarityBlock,
    classes: &[BinaryClass],
    form: RatioForm,
) -> Result<RatioLoss> {
    check_classes(sims, classes)?;
    let sets = partner_sets(
        sims,
        all_anchors(classes.len())
            .into_iter()
            .map(|a| pairs_iamcl(a, classes)),
    );
    Ok(RatioLoss {
        ratio: ratio_term(g, sims, &sets, form)?,
        refine: refinement_term(g, sims, &sets, 1.0)?,
    })
}

/// Inter-modal supervised contrastive loss. The refinement pulls positive
/// similarities toward the modality margin `alpha`.
pub fn loss_iemcl(
    g: &mut Graph,
    sims: &SimilarityBlock,
    classes: &[BinaryClass],
    alpha: f64,
    form: RatioForm,
) -> Result<RatioLoss> {
    check_classes(sims, classes)?;
    let sets = partner_sets(
        sims,
        all_anchors(classes.len())
            .into_iter()
            .map(|a| pairs_iemcl(a, classes)),
    );
    Ok(RatioLoss {
        ratio: ratio_term(g, sims, &sets, form)?,
        refine: refinement_term(g, sims, &sets, alpha)?,
    })
}

fn check_classes(sims: &SimilarityBlock, classes: &[BinaryClass]) -> Result<()> {
    if classes.len() != sims.batch_size() {
        return Err(Error::Shape(format!(
            "{} classes for a batch of {}",
            classes.len(),
            sims.batch_size()
        )));
    }
    Ok(())
}

/// Mean absolute error between a prediction node and fixed targets.
pub fn loss_prediction(g: &mut Graph, y_pred: NodeId, y_true: &[f64]) -> Result<NodeId> {
    let (r, c) = g.value(y_pred).shape();
    if r * c != y_true.len() || y_true.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            r * c,
            y_true.len()
        )));
    }
    let t = g.leaf(Matrix::from_vec(r, c, y_true.to_vec())?);
    let diff = g.sub(y_pred, t)?;
    let a = g.abs(diff);
    Ok(g.mean(a))
}

/// Node handles for every contrastive term of one batch. Disabled terms are
/// constant zeros.
#[derive(Clone, Copy, Debug)]
pub struct ContrastiveTerms {
    pub scl: NodeId,
    pub iamcl: NodeId,
    pub iamcl_refine: NodeId,
    pub iemcl: NodeId,
    pub iemcl_refine: NodeId,
}

/// Builds the contrastive terms selected by `cfg` on normalized embeddings.
/// `rng` is only drawn from by baselines that sample partners.
pub fn contrastive_terms<R: Rng + ?Sized>(
    g: &mut Graph,
    embeddings: &[NodeId; 3],
    classes: &[BinaryClass],
    alpha: f64,
    cfg: &LossConfig,
    rng: &mut R,
) -> Result<ContrastiveTerms> {
    if cfg.is_prediction_only() {
        let z = zero(g);
        return Ok(ContrastiveTerms {
            scl: z,
            iamcl: z,
            iamcl_refine: z,
            iemcl: z,
            iemcl_refine: z,
        });
    }
    let sims = SimilarityBlock::new(g, embeddings)?;
    let z = zero(g);
    if let Some(kind) = cfg.baseline {
        let scl = loss_scl(g, &sims, alpha)?;
        let intra_draws = draw_partners(classes, PairRegime::Intra, rng);
        let inter_draws = draw_partners(classes, PairRegime::Inter, rng);
        let iamcl = baseline_loss(
            g,
            &sims,
            classes,
            PairRegime::Intra,
            kind,
            &intra_draws,
            cfg.hinged_triplet,
        )?;
        let iemcl = baseline_loss(
            g,
            &sims,
            classes,
            PairRegime::Inter,
            kind,
            &inter_draws,
            cfg.hinged_triplet,
        )?;
        return Ok(ContrastiveTerms {
            scl,
            iamcl,
            iamcl_refine: z,
            iemcl,
            iemcl_refine: z,
        });
    }
    let scl = if cfg.enable_scl {
        loss_scl(g, &sims, alpha)?
    } else {
        z
    };
    let (iamcl, iamcl_refine) = if cfg.enable_iamcl {
        let l = loss_iamcl(g, &sims, classes, cfg.ratio_form)?;
        (l.ratio, if cfg.enable_refinement { l.refine } else { z })
    } else {
        (z, z)
    };
    let (iemcl, iemcl_refine) = if cfg.enable_iemcl {
        let l = loss_iemcl(g, &sims, classes, alpha, cfg.ratio_form)?;
        (l.ratio, if cfg.enable_refinement { l.refine } else { z })
    } else {
        (z, z)
    };
    Ok(ContrastiveTerms {
        scl,
        iamcl,
        iamcl_refine,
        iemcl,
        iemcl_refine,
    })
}

/// `λ₁(IAMCL + refine) + λ₂(IEMCL + refine) + λ₃·SCL`
pub fn loss_hybrid(g: &mut Graph, t: &ContrastiveTerms, lambdas: Lambdas) -> Result<NodeId> {
    let intra = g.add(t.iamcl, t.iamcl_refine)?;
    let inter = g.add(t.iemcl, t.iemcl_refine)?;
    let a = g.scale(intra, lambdas.intra);
    let b = g.scale(inter, lambdas.inter);
    let c = g.scale(t.scl, lambdas.semi);
    let ab = g.add(a, b)?;
    g.add(ab, c)
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Partner sets a baseline draws from: the intra-modal or the inter-modal
/// regime of the supervised losses it replaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairRegime {
    Intra,
    Inter,
}

impl PairRegime {
    pub fn pairs(self, anchor: AnchorRef, classes: &[BinaryClass]) -> PairIndex {
        match self {
            PairRegime::Intra => pairs_iamcl(anchor, classes),
            PairRegime::Inter => pairs_iemcl(anchor, classes),
        }
    }
}

/// One randomly drawn positive and negative partner for an anchor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartnerDraw {
    pub anchor: AnchorRef,
    pub positive: Option<Partner>,
    pub negative: Option<Partner>,
}

/// Uniform draws for every anchor, in anchor order.
pub fn draw_partners<R: Rng + ?Sized>(
    classes: &[BinaryClass],
    regime: PairRegime,
    rng: &mut R,
) -> Vec<PartnerDraw> {
    all_anchors(classes.len())
        .into_iter()
        .map(|anchor| {
            let pairs = regime.pairs(anchor, classes);
            let pos: Vec<Partner> = pairs.positives().copied().collect();
            let neg: Vec<Partner> = pairs.negatives().copied().collect();
            let positive = (!pos.is_empty()).then(|| pos[rng.random_range(0..pos.len())]);
            let negative = (!neg.is_empty()).then(|| neg[rng.random_range(0..neg.len())]);
            PartnerDraw {
                anchor,
                positive,
                negative,
            }
        })
        .collect()
}

/// Lowest-similarity positive and highest-similarity negative. Ties go to
/// the earliest partner, i.e. the lowest sample index.
pub fn hard_partners(
    g: &Graph,
    sims: &SimilarityBlock,
    classes: &[BinaryClass],
    regime: PairRegime,
) -> Vec<PartnerDraw> {
    let vals = g.value(sims.node).data();
    all_anchors(classes.len())
        .into_iter()
        .map(|anchor| {
            let pairs = regime.pairs(anchor, classes);
            let sim = |p: &Partner| vals[sims.partner_index(anchor, p)];
            let mut positive: Option<Partner> = None;
            for p in pairs.positives() {
                if positive.is_none_or(|best| sim(p) < sim(&best)) {
                    positive = Some(*p);
                }
            }
            let mut negative: Option<Partner> = None;
            for p in pairs.negatives() {
                if negative.is_none_or(|best| sim(p) > sim(&best)) {
                    negative = Some(*p);
                }
            }
            PartnerDraw {
                anchor,
                positive,
                negative,
            }
        })
        .collect()
}

/// Batch-level baseline loss for one pair regime. `draws` supplies the
/// sampled partners for the triplet, classical and N-pair losses; the
/// hard-triplet loss mines its own.
pub fn baseline_loss(
    g: &mut Graph,
    sims: &SimilarityBlock,
    classes: &[BinaryClass],
    regime: PairRegime,
    kind: BaselineKind,
    draws: &[PartnerDraw],
    hinged: bool,
) -> Result<NodeId> {
    check_classes(sims, classes)?;
    match kind {
        BaselineKind::Triplet => triplet_term(g, sims, draws, hinged),
        BaselineKind::HardTriplet => {
            let hard = hard_partners(g, sims, classes, regime);
            triplet_term(g, sims, &hard, hinged)
        }
        BaselineKind::Classical => classical_term(g, sims, classes, regime, draws),
        BaselineKind::NPair => npair_term(g, sims, classes, regime, draws),
    }
}

fn triplet_term(
    g: &mut Graph,
    sims: &SimilarityBlock,
    draws: &[PartnerDraw],
    hinged: bool,
) -> Result<NodeId> {
    let mut aa = Vec::new();
    let mut pp = Vec::new();
    let mut ap = Vec::new();
    let mut nn = Vec::new();
    let mut an = Vec::new();
    for d in draws {
        let (Some(p), Some(n)) = (d.positive, d.negative) else {
            continue;
        };
        let a = d.anchor;
        aa.push(sims.index(a.modality, a.sample, a.modality, a.sample));
        pp.push(sims.index(p.modality, p.sample, p.modality, p.sample));
        ap.push(sims.partner_index(a, &p));
        nn.push(sims.index(n.modality, n.sample, n.modality, n.sample));
        an.push(sims.partner_index(a, &n));
    }
    if aa.is_empty() {
        return Ok(zero(g));
    }
    let s = sims.node;
    // ‖a − p‖² − ‖a − n‖² = (p·p − 2a·p) − (n·n − 2a·n)
    let aa = g.gather(s, aa)?;
    let pp = g.gather(s, pp)?;
    let ap = g.gather(s, ap)?;
    let nn = g.gather(s, nn)?;
    let an = g.gather(s, an)?;
    let ap2 = g.scale(ap, 2.0);
    let an2 = g.scale(an, 2.0);
    let dp0 = g.add(aa, pp)?;
    let dp = g.sub(dp0, ap2)?;
    let dn0 = g.add(aa, nn)?;
    let dn = g.sub(dn0, an2)?;
    let diff = g.sub(dp, dn)?;
    let mut l = g.offset(diff, 1.0);
    if hinged {
        l = g.relu(l);
    }
    Ok(g.mean(l))
}

fn classical_term(
    g: &mut Graph,
    sims: &SimilarityBlock,
    classes: &[BinaryClass],
    regime: PairRegime,
    draws: &[PartnerDraw],
) -> Result<NodeId> {
    let vals = g.value(sims.node).data();
    let mut pos = Vec::new();
    let mut negs: Vec<Vec<usize>> = Vec::new();
    for d in draws {
        let Some(p) = d.positive else { continue };
        let pairs = regime.pairs(d.anchor, classes);
        let n: Vec<usize> = pairs
            .negatives()
            .map(|q| sims.partner_index(d.anchor, q))
            .collect();
        let pi = sims.partner_index(d.anchor, &p);
        let denom = vals[pi] + n.iter().map(|&i| vals[i]).sum::<f64>();
        if n.is_empty() || denom == 0.0 {
            continue;
        }
        pos.push(pi);
        negs.push(n);
    }
    if pos.is_empty() {
        return Ok(zero(g));
    }
    let p = g.gather(sims.node, pos)?;
    let nsum = gather_segments(g, sims.node, negs.iter().map(Vec::as_slice))?;
    let d = g.add(p, nsum)?;
    let r = g.div(p, d)?;
    let m = g.mean(r);
    Ok(g.scale(m, -1.0))
}

fn npair_term(
    g: &mut Graph,
    sims: &SimilarityBlock,
    classes: &[BinaryClass],
    regime: PairRegime,
    draws: &[PartnerDraw],
) -> Result<NodeId> {
    let mut per_anchor = Vec::new();
    for d in draws {
        let Some(p) = d.positive else { continue };
        let pairs = regime.pairs(d.anchor, classes);
        let n: Vec<usize> = pairs
            .negatives()
            .map(|q| sims.partner_index(d.anchor, q))
            .collect();
        if n.is_empty() {
            continue;
        }
        let negs = g.gather(sims.node, n)?;
        let pos = g.gather(sims.node, vec![sims.partner_index(d.anchor, &p)])?;
        let z = g.sub_scalar(negs, pos)?;
        per_anchor.push(g.log1p_sum_exp(z));
    }
    if per_anchor.is_empty() {
        return Ok(zero(g));
    }
    let all = g.stack(&per_anchor)?;
    Ok(g.mean(all))
}

// ---------------------------------------------------------------------------
// Single-instance forms on plain vectors
// ---------------------------------------------------------------------------

/// `−a·p / (a·p + Σ a·nⱼ)`
pub fn classical_contrastive(a: &[f64], p: &[f64], negatives: &[&[f64]]) -> f64 {
    let ap = dot_slices(a, p);
    let an: f64 = negatives.iter().map(|n| dot_slices(a, n)).sum();
    -ap / (ap + an)
}

/// `‖a − p‖² − ‖a − n‖² + 1`, optionally clamped at zero.
pub fn triplet(a: &[f64], p: &[f64], n: &[f64], hinged: bool) -> f64 {
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
    let l = sq(a, p) - sq(a, n) + 1.0;
    if hinged {
        l.max(0.0)
    } else {
        l
    }
}

/// `ln(1 + Σ exp(a·nⱼ − a·p))`
pub fn npair(a: &[f64], p: &[f64], negatives: &[&[f64]]) -> f64 {
    let ap = dot_slices(a, p);
    let z: Vec<f64> = negatives.iter().map(|n| dot_slices(a, n) - ap).collect();
    log1p_sum_exp(&z)
}
