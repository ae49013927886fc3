//! Scaled dot-product, masked, and multi-head attention over flattened
//! convolutional feature maps.
//!
//! All operations record onto a [`Tape`] so gradients flow through the
//! projections. Stateless given weights; concurrent calls with shared
//! read-only weights are safe as long as each thread owns its tape.

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use rand::Rng;

#[derive(Debug, thiserror::Error)]
pub enum AttentionError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("model dimension {dim} is not divisible by {heads} heads")]
    IndivisibleHeads { dim: usize, heads: usize },
    #[error("attention weights are inconsistent: {0}")]
    BadWeights(String),
    #[error("mask shape {mask:?} does not match scores shape {scores:?}")]
    MaskShape { mask: Vec<usize>, scores: Vec<usize> },
    #[error("mask entries must be finite or -inf")]
    BadMaskEntry,
    #[error("{op}: dimension mismatch ({detail})")]
    Dims { op: &'static str, detail: String },
}

/// Projection matrices of one attention head, each `[model_dim, head_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

/// Per-head query/key/value projections plus the output projection
/// `wo: [heads * head_dim, model_dim]` with `head_dim = model_dim / heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    heads: Vec<HeadWeights>,
    wo: Tensor,
}

impl AttentionWeights {
    pub fn new(heads: Vec<HeadWeights>, wo: Tensor) -> Result<Self, AttentionError> {
        if heads.is_empty() {
            return Err(AttentionError::BadWeights("no heads".into()));
        }
        let model_dim = wo.shape().last().copied().unwrap_or(0);
        let head_dim = match heads[0].wq.shape() {
            [m, h] if *m == model_dim => *h,
            other => {
                return Err(AttentionError::BadWeights(format!(
                    "head projection shape {other:?} does not match model dim {model_dim}"
                )))
            }
        };
        if model_dim != heads.len() * head_dim {
            return Err(AttentionError::IndivisibleHeads { dim: model_dim, heads: heads.len() });
        }
        for (i, h) in heads.iter().enumerate() {
            for (name, t) in [("wq", &h.wq), ("wk", &h.wk), ("wv", &h.wv)] {
                if t.shape() != [model_dim, head_dim] {
                    return Err(AttentionError::BadWeights(format!(
                        "head {i} {name} has shape {:?}, expected [{model_dim}, {head_dim}]",
                        t.shape()
                    )));
                }
            }
        }
        if wo.shape() != [heads.len() * head_dim, model_dim] {
            return Err(AttentionError::BadWeights(format!(
                "wo has shape {:?}, expected [{}, {model_dim}]",
                wo.shape(),
                heads.len() * head_dim
            )));
        }
        Ok(Self { heads, wo })
    }

    /// He-uniform initialization of every projection.
    pub fn init(model_dim: usize, heads: usize, rng: &mut impl Rng) -> Result<Self, AttentionError> {
        if heads == 0 || !model_dim.is_multiple_of(heads) {
            return Err(AttentionError::IndivisibleHeads { dim: model_dim, heads });
        }
        let head_dim = model_dim / heads;
        let mut he_uniform = |fan_in: usize, shape: Vec<usize>| {
            let limit = (6.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
            Tensor::new(shape, data).expect("shape matches data")
        };
        let heads = (0..heads)
            .map(|_| HeadWeights {
                wq: he_uniform(model_dim, vec![model_dim, head_dim]),
                wk: he_uniform(model_dim, vec![model_dim, head_dim]),
                wv: he_uniform(model_dim, vec![model_dim, head_dim]),
            })
            .collect();
        let wo = he_uniform(model_dim, vec![model_dim, model_dim]);
        Self::new(heads, wo)
    }

    pub fn model_dim(&self) -> usize {
        *self.wo.shape().last().unwrap()
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim() / self.head_count()
    }

    pub fn heads(&self) -> &[HeadWeights] {
        &self.heads
    }

    pub fn wo(&self) -> &Tensor {
        &self.wo
    }

    /// Records every projection on the tape, as parameters when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> AttentionVars {
        let mut record = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        AttentionVars {
            heads: self
                .heads
                .iter()
                .map(|h| HeadVars { wq: record(&h.wq), wk: record(&h.wk), wv: record(&h.wv) })
                .collect(),
            wo: record(&self.wo),
        }
    }
}

/// Tape handles for one head's projections.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

/// Tape handles for a full [`AttentionWeights`] binding.
#[derive(Debug, Clone)]
pub struct AttentionVars {
    pub heads: Vec<HeadVars>,
    pub wo: Var,
}

/// Additive attention mask: 0 keeps a position visible, a large negative
/// value (or `-inf`) blocks it.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    matrix: Tensor,
}

impl AttentionMask {
    pub fn new(matrix: Tensor) -> Result<Self, AttentionError> {
        if matrix.rank() != 2 {
            return Err(AttentionError::MaskShape { mask: matrix.shape().to_vec(), scores: vec![] });
        }
        if matrix.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(AttentionError::BadMaskEntry);
        }
        Ok(Self { matrix })
    }

    pub fn zeros(queries: usize, keys: usize) -> Self {
        Self { matrix: Tensor::zeros(vec![queries, keys]) }
    }

    /// Strict causal mask: query `i` sees keys `0..=i`.
    pub fn causal(tokens: usize) -> Self {
        let mut m = Tensor::zeros(vec![tokens, tokens]);
        for q in 0..tokens {
            for k in (q + 1)..tokens {
                m.data_mut()[q * tokens + k] = f64::NEG_INFINITY;
            }
        }
        Self { matrix: m }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }
}

/// Attention result: the mixed values and, for inspection, the weight
/// matrix whose rows are probability vectors.
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Var,
}

/// `softmax(q k^T / sqrt(d_k)) v` for `q: [Tq, d_k]`, `k: [Tk, d_k]`,
/// `v: [Tk, d_v]`.
pub fn scaled_dot_product_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
) -> Result<AttentionOutput, AttentionError> {
    attention_with_optional_mask(tape, q, k, v, None)
}

/// Scaled dot-product attention with an additive mask applied to the scaled
/// scores before the softmax.
pub fn masked_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: &AttentionMask,
) -> Result<AttentionOutput, AttentionError> {
    attention_with_optional_mask(tape, q, k, v, Some(mask))
}

fn attention_with_optional_mask(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttentionMask>,
) -> Result<AttentionOutput, AttentionError> {
    let (qs, ks, vs) = (
        tape.value(q).shape().to_vec(),
        tape.value(k).shape().to_vec(),
        tape.value(v).shape().to_vec(),
    );
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks[0] != vs[0] {
        return Err(AttentionError::Dims {
            op: "scaled_dot_product_attention",
            detail: format!("q {qs:?}, k {ks:?}, v {vs:?}"),
        });
    }
    let d_k = qs[1] as f64;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let mut scaled = tape.scale(scores, 1.0 / d_k.sqrt());
    if let Some(m) = mask {
        if m.matrix.shape() != [qs[0], ks[0]] {
            return Err(AttentionError::MaskShape {
                mask: m.matrix.shape().to_vec(),
                scores: vec![qs[0], ks[0]],
            });
        }
        let mask_var = tape.constant(m.matrix.clone());
        scaled = tape.add(scaled, mask_var)?;
    }
    let weights = tape.softmax(scaled)?;
    let output = tape.matmul(weights, v)?;
    Ok(AttentionOutput { output, weights })
}

/// Multi-head attention over token matrix `x: [tokens, model_dim]`:
/// per head `Attention(x wq_i, x wk_i, x wv_i)` with scale
/// `sqrt(model_dim / heads)`, concatenated and projected by `wo`.
pub fn multi_head_attention(
    tape: &mut Tape,
    x: Var,
    weights: &AttentionVars,
) -> Result<Var, AttentionError> {
    let xs = tape.value(x).shape().to_vec();
    if xs.len() != 2 {
        return Err(AttentionError::Dims {
            op: "multi_head_attention",
            detail: format!("expected [tokens, model_dim], got {xs:?}"),
        });
    }
    let model_dim = xs[1];
    let heads = weights.heads.len();
    if heads == 0 || !model_dim.is_multiple_of(heads) {
        return Err(AttentionError::IndivisibleHeads { dim: model_dim, heads });
    }
    let mut head_outputs = Vec::with_capacity(heads);
    for head in &weights.heads {
        let q = tape.matmul(x, head.wq)?;
        let k = tape.matmul(x, head.wk)?;
        let v = tape.matmul(x, head.wv)?;
        head_outputs.push(scaled_dot_product_attention(tape, q, k, v)?.output);
    }
    let concat = tape.concat_cols(&head_outputs)?;
    Ok(tape.matmul(concat, weights.wo)?)
}

/// Applies multi-head attention across the spatial grid of a feature map
/// `[N, C, H, W]`: the `H*W` cells become tokens of dimension `C`, and the
/// attention output is added back onto the input (residual connection).
pub fn attend_feature_map(
    tape: &mut Tape,
    x: Var,
    weights: &AttentionVars,
) -> Result<Var, AttentionError> {
    let xs = tape.value(x).shape().to_vec();
    if xs.len() != 4 {
        return Err(AttentionError::Dims {
            op: "attend_feature_map",
            detail: format!("expected [N, C, H, W], got {xs:?}"),
        });
    }
    let (batch, channels, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let heads = weights.heads.len();
    if heads == 0 || channels % heads != 0 {
        return Err(AttentionError::IndivisibleHeads { dim: channels, heads });
    }
    let mut per_sample = Vec::with_capacity(batch);
    for n in 0..batch {
        let sample = tape.slice_first(x, n)?;
        let flat = tape.reshape(sample, vec![channels, h * w])?;
        let tokens = tape.transpose(flat)?;
        let attended = multi_head_attention(tape, tokens, weights)?;
        let with_residual = tape.add(attended, tokens)?;
        let back = tape.transpose(with_residual)?;
        per_sample.push(tape.reshape(back, vec![channels, h, w])?);
    }
    Ok(tape.stack_first(&per_sample)?)
}
