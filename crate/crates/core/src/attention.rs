//! Single-head scaled dot-product attention and its temporal / spatial
//! arrangements over `[frames, tokens, channels]` sequences.

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Random,
    /// Output projection starts at zero so a residual branch is the identity.
    ZeroOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub init_mode: InitMode,
}

/// Attention weights registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

pub(crate) fn randn(shape: &[usize], std: f64, rng: &mut CounterRng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal() * std).with_requires_grad(true)
}

impl AttentionWeights {
    pub fn new(d_model: usize, d_attn: usize, init_mode: InitMode, rng: &mut CounterRng) -> Self {
        let s_in = 1.0 / libm::sqrt(d_model as f64);
        let wq = randn(&[d_model, d_attn], s_in, rng);
        let wk = randn(&[d_model, d_attn], s_in, rng);
        let wv = randn(&[d_model, d_attn], s_in, rng);
        let wo = match init_mode {
            InitMode::Random => randn(&[d_attn, d_model], 1.0 / libm::sqrt(d_attn as f64), rng),
            InitMode::ZeroOut => Tensor::zeros(&[d_attn, d_model]).with_requires_grad(true),
        };
        Self {
            wq,
            wk,
            wv,
            wo,
            init_mode,
        }
    }

    pub fn d_model(&self) -> usize {
        self.wq.shape()[0]
    }

    pub fn d_attn(&self) -> usize {
        self.wq.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape) -> AttentionParams {
        AttentionParams {
            wq: tape.leaf(&self.wq),
            wk: tape.leaf(&self.wk),
            wv: tape.leaf(&self.wv),
            wo: tape.leaf(&self.wo),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 4] {
        [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
        ]
    }
}

/// `attn = softmax(Q Kᵀ / √d)` row-wise and `out = attn · V`.
///
/// Shapes: `q [b, s_q, d]`, `k [b, s_k, d]`, `v [b, s_k, d_v]`.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let sk = tape.shape(k).to_vec();
    let sv = tape.shape(v).to_vec();
    if sk.len() != sv.len() || sk[..sk.len() - 1] != sv[..sv.len() - 1] {
        return Err(Error::Shape {
            op: "scaled_dot_attention",
            lhs: sk,
            rhs: sv,
        });
    }
    let d = *tape.shape(q).last().unwrap_or(&1);
    // Scaling the queries is cheaper than scaling the score matrix.
    let q = tape.scale(q, 1.0 / libm::sqrt(d as f64));
    let scores = tape.matmul_nt(q, k)?;
    let attn = tape.softmax_last(scores)?;
    let out = tape.matmul(attn, v)?;
    Ok((out, attn))
}

/// Queries from `x_q`, keys and values from `x_kv`, projected back through `wo`.
fn attend(tape: &mut Tape, x_q: Var, x_kv: Var, p: &AttentionParams) -> Result<(Var, Var)> {
    let q = tape.matmul(x_q, p.wq)?;
    let k = tape.matmul(x_kv, p.wk)?;
    let v = tape.matmul(x_kv, p.wv)?;
    let (out, attn) = scaled_dot_attention(tape, q, k, v)?;
    Ok((tape.matmul(out, p.wo)?, attn))
}

/// Self-attention along the frame axis, independently per spatial slot.
///
/// `x [f, s, c]` is moved to `[s, f, c]`, attended, and moved back.
pub fn temporal_self_attention(
    tape: &mut Tape,
    x: Var,
    p: &AttentionParams,
    residual: bool,
) -> Result<Var> {
    if tape.shape(x).len() != 3 {
        return Err(Error::Shape {
            op: "temporal_self_attention",
            lhs: tape.shape(x).to_vec(),
            rhs: alloc::vec![3],
        });
    }
    let by_slot = tape.permute(x, &[1, 0, 2])?;
    let (out, _) = attend(tape, by_slot, by_slot, p)?;
    let out = tape.permute(out, &[1, 0, 2])?;
    if residual {
        tape.add(x, out)
    } else {
        Ok(out)
    }
}

/// Per-frame attention of `q_seq [f, n_q, c]` over `kv_seq [f, n_kv, c]`.
pub fn spatial_cross_attention(
    tape: &mut Tape,
    q_seq: Var,
    kv_seq: Var,
    p: &AttentionParams,
    residual: bool,
) -> Result<Var> {
    Ok(spatial_cross_attention_with_map(tape, q_seq, kv_seq, p, residual)?.0)
}

pub(crate) fn spatial_cross_attention_with_map(
    tape: &mut Tape,
    q_seq: Var,
    kv_seq: Var,
    p: &AttentionParams,
    residual: bool,
) -> Result<(Var, Var)> {
    let sq = tape.shape(q_seq);
    let skv = tape.shape(kv_seq);
    if sq.len() != 3 || skv.len() != 3 || sq[0] != skv[0] || sq[2] != skv[2] {
        return Err(Error::Shape {
            op: "spatial_cross_attention",
            lhs: sq.to_vec(),
            rhs: skv.to_vec(),
        });
    }
    let (out, attn) = attend(tape, q_seq, kv_seq, p)?;
    let out = if residual { tape.add(q_seq, out)? } else { out };
    Ok((out, attn))
}

/// Plain self-attention within each frame (`x [f, s, c]`).
pub fn spatial_self_attention(
    tape: &mut Tape,
    x: Var,
    p: &AttentionParams,
    residual: bool,
) -> Result<Var> {
    spatial_cross_attention(tape, x, x, p, residual)
}
