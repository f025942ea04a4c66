//! The trainable forward path: per-modality encoders, contrastive
//! normalization, fusion and the scalar regression head.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::diff::{Graph, Matrix, NodeId};
use crate::model::{EmbeddingMatrix, MiniBatch, Modality};
use crate::{Error, Result};

/// Upper bound on the flattened width of tensor fusion, `(d+1)³`.
pub const MAX_TENSOR_FUSION_WIDTH: usize = 1_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    #[default]
    Addition,
    Concatenation,
    Tensor,
}

impl FusionKind {
    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Addition => "addition",
            FusionKind::Concatenation => "concatenation",
            FusionKind::Tensor => "tensor",
        }
    }

    /// Width of the fused vector fed to the head.
    pub fn fused_width(self, d: usize) -> Result<usize> {
        match self {
            FusionKind::Addition => Ok(d),
            FusionKind::Concatenation => Ok(3 * d),
            FusionKind::Tensor => {
                let w = (d + 1).checked_pow(3).unwrap_or(usize::MAX);
                if w > MAX_TENSOR_FUSION_WIDTH {
                    Err(Error::Invalid(format!(
                        "tensor fusion with d = {d} needs {w} head inputs, limit is {MAX_TENSOR_FUSION_WIDTH}"
                    )))
                } else {
                    Ok(w)
                }
            }
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "addition" => Ok(FusionKind::Addition),
            "concatenation" => Ok(FusionKind::Concatenation),
            "tensor" => Ok(FusionKind::Tensor),
            other => Err(Error::Invalid(format!("unknown fusion kind `{other}`"))),
        }
    }
}

/// Weights of the three encoders and the head.
///
/// `tensors` holds, per modality in canonical order, `[W1 (d_m×h), b1 (1×h),
/// W2 (h×d), b2 (1×d)]`, then the head `[w (f×1), b (1×1)]` where `f` is the
/// fused width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub fusion: FusionKind,
    pub input_widths: [usize; 3],
    pub hidden: usize,
    pub d: usize,
    /// Fusion consumes the normalized embeddings rather than the raw
    /// encoder outputs.
    pub fuse_normalized: bool,
    pub tensors: Vec<Matrix>,
}

fn uniform_init<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

impl ModelParams {
    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init<R: Rng + ?Sized>(
        input_widths: [usize; 3],
        hidden: usize,
        d: usize,
        fusion: FusionKind,
        fuse_normalized: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if input_widths.contains(&0) || hidden == 0 || d == 0 {
            return Err(Error::Invalid("encoder widths must be positive".into()));
        }
        let fused = fusion.fused_width(d)?;
        let mut tensors = Vec::with_capacity(14);
        for &w in &input_widths {
            tensors.push(uniform_init(rng, w, hidden));
            tensors.push(Matrix::zeros(1, hidden));
            tensors.push(uniform_init(rng, hidden, d));
            tensors.push(Matrix::zeros(1, d));
        }
        tensors.push(uniform_init(rng, fused, 1));
        tensors.push(Matrix::zeros(1, 1));
        Ok(ModelParams {
            fusion,
            input_widths,
            hidden,
            d,
            fuse_normalized,
            tensors,
        })
    }

    fn expected_shapes(&self) -> Result<Vec<(usize, usize)>> {
        let mut shapes = Vec::with_capacity(14);
        for &w in &self.input_widths {
            shapes.extend([
                (w, self.hidden),
                (1, self.hidden),
                (self.hidden, self.d),
                (1, self.d),
            ]);
        }
        shapes.push((self.fusion.fused_width(self.d)?, 1));
        shapes.push((1, 1));
        Ok(shapes)
    }

    /// Checks tensor shapes against the declared widths, e.g. after loading.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.expected_shapes()?;
        if shapes.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for (i, (t, s)) in self.tensors.iter().zip(shapes).enumerate() {
            if t.shape() != s || t.data().len() != s.0 * s.1 {
                return Err(Error::Shape(format!(
                    "parameter {i} has shape {:?}, expected {s:?}",
                    t.shape()
                )));
            }
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("parameter {i} is not finite")));
            }
        }
        Ok(())
    }

    /// Number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    /// Registers every tensor as a graph leaf, in storage order.
    pub fn leaves(&self, g: &mut Graph) -> Vec<NodeId> {
        self.tensors.iter().map(|t| g.leaf(t.clone())).collect()
    }
}

/// Graph handles for one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub params: Vec<NodeId>,
    /// Encoder outputs, K×d per modality.
    pub raw: [NodeId; 3],
    /// ReLU + row L2 normalization of `raw`.
    pub normalized: [NodeId; 3],
    /// K×1 predictions.
    pub prediction: NodeId,
}

/// Two-layer encoders `relu(x·W1 + b1)·W2 + b2` for the three modalities.
pub fn encode(
    g: &mut Graph,
    params: &ModelParams,
    leaves: &[NodeId],
    batch: &MiniBatch,
) -> Result<[NodeId; 3]> {
    let mut out = Vec::with_capacity(3);
    for m in Modality::ALL {
        let width = batch.feature_width(m);
        if width != params.input_widths[m.index()] {
            return Err(Error::Shape(format!(
                "{m} features have width {width}, the encoder expects {}",
                params.input_widths[m.index()]
            )));
        }
        let x = g.leaf(Matrix::from_rows(batch.features(m))?);
        let p = &leaves[4 * m.index()..4 * m.index() + 4];
        let h = g.linear(x, p[0], p[1])?;
        let h = g.relu(h);
        out.push(g.linear(h, p[2], p[3])?);
    }
    Ok(out.try_into().expect("one encoder per modality"))
}

/// ReLU followed by row L2 normalization, so every pairwise dot product
/// of the outputs lies in [0, 1].
pub fn normalize_for_contrast(g: &mut Graph, x: NodeId) -> NodeId {
    let r = g.relu(x);
    g.l2_normalize_rows(r)
}

/// Value-level [`normalize_for_contrast`].
pub fn normalize_embedding(x: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut g = Graph::new();
    let n = g.leaf(Matrix::from_vec(x.rows(), x.cols(), x.data().to_vec())?);
    let y = normalize_for_contrast(&mut g, n);
    EmbeddingMatrix::new(x.modality(), x.rows(), x.cols(), g.value(y).data().to_vec())?
        .into_normalized()
}

/// The fused representation of three K×d blocks, before the head.
pub fn fused_representation(g: &mut Graph, x: [NodeId; 3], kind: FusionKind) -> Result<NodeId> {
    let shape = g.value(x[0]).shape();
    if x.iter().any(|&n| g.value(n).shape() != shape) {
        return Err(Error::Shape(
            "fusion inputs must share one K×d shape".into(),
        ));
    }
    match kind {
        FusionKind::Addition => g.add_n(&x),
        FusionKind::Concatenation => g.concat_cols(&x),
        FusionKind::Tensor => {
            kind.fused_width(shape.1)?;
            let [l, a, v] = x.map(|n| g.append_ones(n));
            let la = g.row_outer(l, a)?;
            g.row_outer(la, v)
        }
    }
}

/// Fuses the three blocks and applies the linear head: K×1 predictions.
pub fn fuse(
    g: &mut Graph,
    x: [NodeId; 3],
    kind: FusionKind,
    head_w: NodeId,
    head_b: NodeId,
) -> Result<NodeId> {
    let f = fused_representation(g, x, kind)?;
    g.linear(f, head_w, head_b)
}

/// Full forward pass for a batch.
pub fn forward(g: &mut Graph, params: &ModelParams, batch: &MiniBatch) -> Result<Forward> {
    let leaves = params.leaves(g);
    let raw = encode(g, params, &leaves, batch)?;
    let normalized = raw.map(|r| normalize_for_contrast(g, r));
    let fused_in = if params.fuse_normalized {
        normalized
    } else {
        raw
    };
    let n = leaves.len();
    let prediction = fuse(g, fused_in, params.fusion, leaves[n - 2], leaves[n - 1])?;
    Ok(Forward {
        params: leaves,
        raw,
        normalized,
        prediction,
    })
}

/// Predictions for a batch without keeping the graph.
pub fn predict(params: &ModelParams, batch: &MiniBatch) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let f = forward(&mut g, params, batch)?;
    Ok(g.value(f.prediction).data().to_vec())
}

/// Normalized per-modality embeddings for a batch.
pub fn embed(params: &ModelParams, batch: &MiniBatch) -> Result<[EmbeddingMatrix; 3]> {
    let mut g = Graph::new();
    let f = forward(&mut g, params, batch)?;
    let k = batch.len();
    let mk = |m: Modality| {
        EmbeddingMatrix::new(
            m,
            k,
            params.d,
            g.value(f.normalized[m.index()]).data().to_vec(),
        )
        .and_then(EmbeddingMatrix::into_normalized)
    };
    Ok([
        mk(Modality::Language)?,
        mk(Modality::Audio)?,
        mk(Modality::Visual)?,
    ])
}

/// The rows the regression head sees for a batch (the fused representation).
pub fn fused_embedding(params: &ModelParams, batch: &MiniBatch) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let f = forward(&mut g, params, batch)?;
    let input = if params.fuse_normalized {
        f.normalized
    } else {
        f.raw
    };
    let fused = fused_representation(&mut g, input, params.fusion)?;
    let m = g.value(fused);
    Ok((0..m.shape().0).map(|r| m.row(r).to_vec()).collect())
}

/// Row-wise sum of the three normalized embeddings: the input the additive
/// head sees, used for cluster diagnostics and export.
pub fn summed_embedding(embeddings: &[EmbeddingMatrix; 3]) -> Vec<Vec<f64>> {
    (0..embeddings[0].rows())
        .map(|r| {
            (0..embeddings[0].cols())
                .map(|c| {
                    // same summation order as the additive fusion op
                    let mut t = embeddings.each_ref().map(|e| e.row(r)[c]);
                    t.sort_by(f64::total_cmp);
                    t.iter().sum()
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SentimentLabel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(k: usize, widths: [usize; 3], value: f64) -> MiniBatch {
        let feats = widths.map(|w| vec![vec![value; w]; k]);
        MiniBatch::new(feats, vec![SentimentLabel::new(1.0).unwrap(); k]).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p =
            ModelParams::init([3, 2, 4], 5, 4, FusionKind::Addition, true, &mut rng).unwrap();
        for t in &mut p.tensors {
            t.data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let f = forward(&mut g, &p, &batch(3, [3, 2, 4], 0.7)).unwrap();
        for r in f.raw {
            assert!(g.value(r).data().iter().all(|&v| v == 0.0));
        }
        for n in f.normalized {
            assert!(g.value(n).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identity_encoder_passes_nonnegative_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p =
            ModelParams::init([3, 3, 3], 3, 3, FusionKind::Addition, true, &mut rng).unwrap();
        for m in 0..3 {
            p.tensors[4 * m] = Matrix::identity(3);
            p.tensors[4 * m + 1] = Matrix::zeros(1, 3);
            p.tensors[4 * m + 2] = Matrix::identity(3);
            p.tensors[4 * m + 3] = Matrix::zeros(1, 3);
        }
        let feats = [
            vec![vec![0.5, 1.0, 2.0]],
            vec![vec![0.0, 3.0, 1.0]],
            vec![vec![4.0, 0.0, 0.1]],
        ];
        let b = MiniBatch::new(feats.clone(), vec![SentimentLabel::new(0.0).unwrap()]).unwrap();
        let mut g = Graph::new();
        let f = forward(&mut g, &p, &b).unwrap();
        for (raw, feat) in f.raw.iter().zip(&feats) {
            assert_eq!(g.value(*raw).data(), feat[0].as_slice());
        }
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ModelParams::init([3, 2, 4], 5, 4, FusionKind::Addition, true, &mut rng).unwrap();
        let mut g = Graph::new();
        assert!(forward(&mut g, &p, &batch(2, [3, 3, 4], 1.0)).is_err());
    }

    #[test]
    fn normalize_relu_then_unit() {
        let x = EmbeddingMatrix::new(
            Modality::Audio,
            2,
            3,
            vec![-1.0, 3.0, 4.0, -1.0, -2.0, -3.0],
        )
        .unwrap();
        let y = normalize_embedding(&x).unwrap();
        assert!(y.is_normalized());
        assert_eq!(y.row(0), &[0.0, 0.6, 0.8]);
        assert_eq!(y.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn addition_head_bias_only() {
        let mut g = Graph::new();
        let z = [0; 3].map(|_| g.leaf(Matrix::zeros(4, 3)));
        let w = g.leaf(Matrix::from_vec(3, 1, vec![0.3, -0.2, 0.9]).unwrap());
        let b = g.leaf(Matrix::scalar(1.25));
        let y = fuse(&mut g, z, FusionKind::Addition, w, b).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn addition_is_order_free() {
        let mut g = Graph::new();
        let mk = |g: &mut Graph, s: f64| {
            g.leaf(Matrix::from_vec(2, 2, vec![s, 2.0 * s, -s, 0.5]).unwrap())
        };
        let (l, a, v) = (mk(&mut g, 0.1), mk(&mut g, 0.7), mk(&mut g, -0.3));
        let w = g.leaf(Matrix::from_vec(2, 1, vec![0.4, 1.1]).unwrap());
        let b = g.leaf(Matrix::scalar(0.2));
        let y1 = fuse(&mut g, [l, a, v], FusionKind::Addition, w, b).unwrap();
        let y2 = fuse(&mut g, [v, l, a], FusionKind::Addition, w, b).unwrap();
        assert_eq!(g.value(y1), g.value(y2));
    }

    #[test]
    fn fused_widths() {
        assert_eq!(FusionKind::Tensor.fused_width(4).unwrap(), 125);
        assert_eq!(FusionKind::Concatenation.fused_width(4).unwrap(), 12);
        assert!(FusionKind::Tensor.fused_width(99).is_ok());
        assert!(FusionKind::Tensor.fused_width(100).is_err());
        let mut g = Graph::new();
        let x = [0; 3].map(|_| g.leaf(Matrix::zeros(2, 4)));
        let f = fused_representation(&mut g, x, FusionKind::Tensor).unwrap();
        assert_eq!(g.value(f).shape(), (2, 125));
    }

    #[test]
    fn parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p =
            ModelParams::init([3, 2, 4], 5, 4, FusionKind::Concatenation, true, &mut rng).unwrap();
        let enc: usize = [3, 2, 4].iter().map(|w| w * 5 + 5 + 5 * 4 + 4).sum();
        assert_eq!(p.num_scalars(), enc + 12 + 1);
        p.validate().unwrap();
    }
}
