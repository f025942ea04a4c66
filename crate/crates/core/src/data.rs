//! Datasets: the synthetic tri-modal generator, seeded splits, and the
//! plain-text feature-table format.
//!
//! Feature-table layout:
//!
//! ```text
//! #hycon-features v1
//! [modality language dim 3]
//! 0.1,0.2,0.3
//! ...one row per sample...
//! [modality audio dim 2]
//! ...
//! [modality visual dim 4]
//! ...
//! [labels]
//! 1.5
//! ...one score per sample...
//! ```

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::model::{MiniBatch, Modality, SentimentLabel};
use crate::{Error, Result};

pub const FEATURE_TABLE_HEADER: &str = "#hycon-features v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub d_l: usize,
    pub d_a: usize,
    pub d_v: usize,
    /// Scale of the sentiment signal in every modality.
    pub shared_strength: f64,
    pub noise_sigma: f64,
    /// Constant shift per modality (language, audio, visual).
    pub modality_offset: [f64; 3],
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_samples: 2600,
            d_l: 16,
            d_a: 8,
            d_v: 12,
            shared_strength: 1.0,
            noise_sigma: 6.0,
            modality_offset: [0.0, 0.5, -0.5],
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn widths(&self) -> [usize; 3] {
        [self.d_l, self.d_a, self.d_v]
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_samples == 0 {
            out.push("synthetic.n_samples must be at least 1".into());
        }
        for (name, w) in [("d_l", self.d_l), ("d_a", self.d_a), ("d_v", self.d_v)] {
            if w == 0 {
                out.push(format!("synthetic.{name} must be at least 1"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            out.push(format!(
                "synthetic.noise_sigma = {} must be nonnegative",
                self.noise_sigma
            ));
        }
        if !self.shared_strength.is_finite() || self.modality_offset.iter().any(|o| !o.is_finite())
        {
            out.push("synthetic strengths and offsets must be finite".into());
        }
        out
    }
}

/// Per-sample features for all three modalities plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: [Vec<Vec<f64>>; 3],
    labels: Vec<SentimentLabel>,
}

impl Dataset {
    pub fn new(features: [Vec<Vec<f64>>; 3], labels: Vec<SentimentLabel>) -> Result<Self> {
        // reuse the batch checks for shapes
        let b = MiniBatch::new(features, labels)?;
        let features = Modality::ALL.map(|m| b.features(m).to_vec());
        Ok(Dataset {
            features,
            labels: b.labels().to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn widths(&self) -> [usize; 3] {
        Modality::ALL.map(|m| self.features[m.index()].first().map_or(0, Vec::len))
    }

    pub fn features(&self, m: Modality) -> &[Vec<f64>] {
        &self.features[m.index()]
    }

    pub fn labels(&self) -> &[SentimentLabel] {
        &self.labels
    }

    pub fn scores(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.score()).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: Modality::ALL.map(|m| {
                indices
                    .iter()
                    .map(|&i| self.features[m.index()][i].clone())
                    .collect()
            }),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Result<MiniBatch> {
        let s = self.subset(indices);
        MiniBatch::new(s.features, s.labels)
    }

    pub fn as_batch(&self) -> Result<MiniBatch> {
        MiniBatch::new(self.features.clone(), self.labels.clone())
    }
}

/// The noise-free part of the synthetic generator: fixed random projections
/// of `[s, s², sign(s)]` per modality.
#[derive(Clone, Debug)]
pub struct SyntheticModel {
    projections: [Vec<[f64; 3]>; 3],
    strength: f64,
    offsets: [f64; 3],
}

impl SyntheticModel {
    fn draw<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Self {
        let scale = 1.0 / 3f64.sqrt();
        let projections = spec.widths().map(|w| {
            (0..w)
                .map(|_| {
                    [0; 3].map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        z * scale
                    })
                })
                .collect()
        });
        SyntheticModel {
            projections,
            strength: spec.shared_strength,
            offsets: spec.modality_offset,
        }
    }

    /// The projection matrices a spec's seed produces.
    pub fn from_spec(spec: &SyntheticSpec) -> Self {
        Self::draw(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed))
    }

    /// Noise-free features of modality `m` for sentiment `s`.
    pub fn observe(&self, m: Modality, s: f64) -> Vec<f64> {
        let sign = if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        };
        let latent = [s, s * s, sign];
        self.projections[m.index()]
            .iter()
            .map(|p| {
                let signal: f64 = p.iter().zip(&latent).map(|(a, b)| a * b).sum();
                self.strength * signal + self.offsets[m.index()]
            })
            .collect()
    }
}

/// Latent sentiment `s ~ U[-3, 3]`; modality `m` observes
/// `shared_strength · P_m [s, s², sign(s)] + offset_m + N(0, σ²)` with a
/// fixed random projection `P_m`. Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let v = spec.violations();
    if !v.is_empty() {
        return Err(Error::Invalid(v.join("; ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let model = SyntheticModel::draw(spec, &mut rng);
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::Invalid(format!("noise distribution: {e}")))?;

    let mut features: [Vec<Vec<f64>>; 3] = Default::default();
    let mut labels = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let s: f64 = rng.random_range(SentimentLabel::MIN..=SentimentLabel::MAX);
        for m in Modality::ALL {
            let mut row = model.observe(m, s);
            for v in &mut row {
                *v += noise.sample(&mut rng);
            }
            features[m.index()].push(row);
        }
        labels.push(SentimentLabel::new(s)?);
    }
    Dataset::new(features, labels)
}

/// Train/validation/test proportions; the test set takes the remainder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.7,
            val_fraction: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn violations(&self) -> Vec<String> {
        let (t, v) = (self.train_fraction, self.val_fraction);
        if !(t > 0.0 && v >= 0.0 && t + v < 1.0) {
            vec![format!(
                "split fractions train = {t}, val = {v} must be positive and leave room for a test set"
            )]
        } else {
            Vec::new()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seeded shuffle, then contiguous train/val/test slices with
/// `round(n · fraction)` samples for train and val.
pub fn split_indices(n: usize, spec: SplitSpec, seed: u64) -> Result<[Vec<usize>; 3]> {
    let v = spec.violations();
    if !v.is_empty() {
        return Err(Error::Invalid(v.join("; ")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * spec.train_fraction).round() as usize).min(n);
    let n_val = ((n as f64 * spec.val_fraction).round() as usize).min(n - n_train);
    if n_train == 0 || n_train + n_val == n {
        return Err(Error::Invalid(format!(
            "{n} samples are too few for the requested split"
        )));
    }
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok([idx, val, test])
}

/// [`split_indices`] applied to a dataset.
pub fn split(ds: &Dataset, spec: SplitSpec, seed: u64) -> Result<Splits> {
    let [train, val, test] = split_indices(ds.len(), spec, seed)?;
    Ok(Splits {
        train: ds.subset(&train),
        val: ds.subset(&val),
        test: ds.subset(&test),
    })
}

pub fn write_feature_table<W: Write>(mut w: W, ds: &Dataset) -> Result<()> {
    writeln!(w, "{FEATURE_TABLE_HEADER}")?;
    for (m, width) in Modality::ALL.into_iter().zip(ds.widths()) {
        writeln!(w, "[modality {m} dim {width}]")?;
        for row in ds.features(m) {
            let mut first = true;
            for v in row {
                if !first {
                    w.write_all(b",")?;
                }
                write!(w, "{v}")?;
                first = false;
            }
            writeln!(w)?;
        }
    }
    writeln!(w, "[labels]")?;
    for l in ds.labels() {
        writeln!(w, "{}", l.score())?;
    }
    Ok(())
}

enum Section {
    None,
    Modality(Modality, usize),
    Labels,
}

pub fn read_feature_table<R: BufRead>(r: R) -> Result<Dataset> {
    let err = |line: usize, msg: String| Error::Parse { line, msg };
    let mut features: [Option<Vec<Vec<f64>>>; 3] = Default::default();
    let mut labels: Option<Vec<SentimentLabel>> = None;
    let mut section = Section::None;
    let mut saw_header = false;

    for (i, line) in r.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if !saw_header {
            if line != FEATURE_TABLE_HEADER {
                return Err(err(lineno, format!("expected `{FEATURE_TABLE_HEADER}`")));
            }
            saw_header = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let parts: Vec<&str> = inner.split_whitespace().collect();
            section = match parts.as_slice() {
                ["modality", name, "dim", dim] => {
                    let m: Modality = name
                        .parse()
                        .map_err(|_| err(lineno, format!("unknown modality `{name}`")))?;
                    let dim: usize = dim
                        .parse()
                        .ok()
                        .filter(|&d| d > 0)
                        .ok_or_else(|| err(lineno, format!("bad dimension `{dim}`")))?;
                    if features[m.index()].replace(Vec::new()).is_some() {
                        return Err(err(lineno, format!("duplicate {m} block")));
                    }
                    Section::Modality(m, dim)
                }
                ["labels"] => {
                    if labels.replace(Vec::new()).is_some() {
                        return Err(err(lineno, "duplicate labels block".into()));
                    }
                    Section::Labels
                }
                _ => return Err(err(lineno, format!("unknown section `{line}`"))),
            };
            continue;
        }
        match section {
            Section::None => return Err(err(lineno, "data before any section".into())),
            Section::Modality(m, dim) => {
                let row = line
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|e| err(lineno, format!("bad number: {e}")))?;
                if row.len() != dim {
                    return Err(err(
                        lineno,
                        format!("{m} row has {} values, expected {dim}", row.len()),
                    ));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(err(lineno, "non-finite feature".into()));
                }
                features[m.index()]
                    .as_mut()
                    .expect("opened with section")
                    .push(row);
            }
            Section::Labels => {
                let v: f64 = line
                    .parse()
                    .map_err(|e| err(lineno, format!("bad label: {e}")))?;
                let l = SentimentLabel::new(v).map_err(|e| err(lineno, e.to_string()))?;
                labels.as_mut().expect("opened with section").push(l);
            }
        }
    }
    if !saw_header {
        return Err(err(1, "empty file".into()));
    }
    let labels = labels.ok_or_else(|| err(0, "missing [labels] block".into()))?;
    let mut out: [Vec<Vec<f64>>; 3] = Default::default();
    for m in Modality::ALL {
        out[m.index()] = features[m.index()]
            .take()
            .ok_or_else(|| err(0, format!("missing {m} block")))?;
    }
    Dataset::new(out, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_samples: 50,
            d_l: 3,
            d_a: 2,
            d_v: 4,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_features_are_a_function_of_the_label() {
        let spec = SyntheticSpec {
            noise_sigma: 0.0,
            shared_strength: 1.0,
            ..small()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let model = SyntheticModel::from_spec(&spec);
        for m in Modality::ALL {
            for (row, l) in ds.features(m).iter().zip(ds.labels()) {
                assert_eq!(row, &model.observe(m, l.score()));
            }
        }
    }

    #[test]
    fn table_round_trip() {
        let ds = generate_synthetic(&small()).unwrap();
        let mut buf = Vec::new();
        write_feature_table(&mut buf, &ds).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#hycon-features v1\n[modality language dim 3]\n"));
        let back = read_feature_table(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn table_errors_carry_line_numbers() {
        let bad = "#hycon-features v1\n[modality language dim 2]\n1,2,3\n";
        match read_feature_table(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(read_feature_table("nope\n".as_bytes()).is_err());
        let missing = "#hycon-features v1\n[labels]\n1\n";
        assert!(read_feature_table(missing.as_bytes()).is_err());
    }

    #[test]
    fn split_sizes() {
        let ds = generate_synthetic(&SyntheticSpec {
            n_samples: 100,
            ..small()
        })
        .unwrap();
        let s = split(&ds, SplitSpec::default(), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
        let s2 = split(&ds, SplitSpec::default(), 3).unwrap();
        assert_eq!(s.test, s2.test);
    }
}
