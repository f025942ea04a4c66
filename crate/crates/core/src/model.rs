//! Domain types shared across the crate: modalities, labels, batches and
//! hyperparameters.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

/// One of the three input channels. The derived ordering
/// (language < audio < visual) is the iteration order used everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Language,
    Audio,
    Visual,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Language, Modality::Audio, Modality::Visual];

    pub fn index(self) -> usize {
        match self {
            Modality::Language => 0,
            Modality::Audio => 1,
            Modality::Visual => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Modality> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Language => "language",
            Modality::Audio => "audio",
            Modality::Visual => "visual",
        }
    }

    /// The two modalities different from `self`, in canonical order.
    pub fn others(self) -> [Modality; 2] {
        match self {
            Modality::Language => [Modality::Audio, Modality::Visual],
            Modality::Audio => [Modality::Language, Modality::Visual],
            Modality::Visual => [Modality::Language, Modality::Audio],
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "language" => Ok(Modality::Language),
            "audio" => Ok(Modality::Audio),
            "visual" => Ok(Modality::Visual),
            other => Err(Error::Invalid(format!("unknown modality `{other}`"))),
        }
    }
}

/// Continuous sentiment intensity in [-3, 3].
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SentimentLabel(f64);

impl SentimentLabel {
    pub const MIN: f64 = -3.0;
    pub const MAX: f64 = 3.0;

    pub fn new(score: f64) -> Result<Self> {
        if !score.is_finite() || !(Self::MIN..=Self::MAX).contains(&score) {
            return Err(Error::Invalid(format!(
                "sentiment score {score} outside [-3, 3]"
            )));
        }
        Ok(SentimentLabel(score))
    }

    pub fn score(self) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryClass {
    Positive,
    Negative,
}

impl BinaryClass {
    pub fn name(self) -> &'static str {
        match self {
            BinaryClass::Positive => "positive",
            BinaryClass::Negative => "negative",
        }
    }
}

/// Sign binarization. A score of exactly zero is negative.
pub fn binarize(label: SentimentLabel) -> BinaryClass {
    binarize_score(label.score())
}

pub(crate) fn binarize_score(score: f64) -> BinaryClass {
    if score > 0.0 {
        BinaryClass::Positive
    } else {
        BinaryClass::Negative
    }
}

/// Row-major K×d matrix of one modality's representations for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    modality: Modality,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(modality: Modality, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Invalid(
                "embedding matrix must be at least 1x1".into(),
            ));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "embedding data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(
                "embedding contains non-finite entries".into(),
            ));
        }
        Ok(EmbeddingMatrix {
            rows,
            cols,
            data,
            modality,
            normalized: false,
        })
    }

    /// Marks the matrix as normalized after checking the unit-row property.
    pub fn into_normalized(mut self) -> Result<Self> {
        for r in 0..self.rows {
            let row = self.row(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let zero = row.iter().all(|&v| v == 0.0);
            if !zero && (norm - 1.0).abs() > 1e-6 {
                return Err(Error::Invalid(format!(
                    "row {r} has norm {norm}, not a normalized embedding"
                )));
            }
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Raw features for K samples across the three modalities, with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniBatch {
    features: [Vec<Vec<f64>>; 3],
    labels: Vec<SentimentLabel>,
    classes: Vec<BinaryClass>,
}

impl MiniBatch {
    /// `features` is indexed by `Modality::index()`, each a list of K rows.
    pub fn new(features: [Vec<Vec<f64>>; 3], labels: Vec<SentimentLabel>) -> Result<Self> {
        let k = labels.len();
        for (m, rows) in Modality::ALL.iter().zip(&features) {
            if rows.len() != k {
                return Err(Error::Shape(format!(
                    "{m} has {} rows but batch has {k} labels",
                    rows.len()
                )));
            }
            if let Some(first) = rows.first() {
                let w = first.len();
                if w == 0 || rows.iter().any(|r| r.len() != w) {
                    return Err(Error::Shape(format!("{m} rows have inconsistent widths")));
                }
            }
        }
        let classes = labels.iter().map(|&l| binarize(l)).collect();
        Ok(MiniBatch {
            features,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self, m: Modality) -> &[Vec<f64>] {
        &self.features[m.index()]
    }

    pub fn feature_width(&self, m: Modality) -> usize {
        self.features[m.index()].first().map_or(0, Vec::len)
    }

    pub fn labels(&self) -> &[SentimentLabel] {
        &self.labels
    }

    pub fn scores(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.score()).collect()
    }

    pub fn classes(&self) -> &[BinaryClass] {
        &self.classes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    /// Modality margin: target similarity for cross-modal positives.
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Embedding width shared by all modalities.
    pub d: usize,
    /// Encoder hidden width.
    pub hidden: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Early-stopping patience in epochs, measured on validation MAE.
    pub patience: usize,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        default_hyperparams()
    }
}

pub fn default_hyperparams() -> HyperParams {
    HyperParams {
        alpha: 0.8,
        lambda1: 1.0,
        lambda2: 1.0,
        lambda3: 1.0,
        d: 50,
        hidden: 64,
        batch_size: 32,
        learning_rate: 1e-5,
        epochs: 50,
        patience: 10,
        seed: 0,
    }
}

impl HyperParams {
    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.alpha) {
            out.push(format!("alpha = {} must lie in [0, 1]", self.alpha));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("{name} = {v} must be a nonnegative finite number"));
            }
        }
        if self.d == 0 {
            out.push("d must be at least 1".into());
        }
        if self.hidden == 0 {
            out.push("hidden must be at least 1".into());
        }
        if self.batch_size < 2 {
            out.push(format!(
                "batch_size = {} must be at least 2 for pair generation",
                self.batch_size
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(format!(
                "learning_rate = {} must be positive",
                self.learning_rate
            ));
        }
        if self.epochs == 0 {
            out.push("epochs must be at least 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v.join("; ")))
        }
    }
}
