//! Cross-frame textual guidance: a drop-in replacement for per-frame text
//! cross-attention built from three temporal stages.
//!
//! * the injector mixes the latent over time and lets the (frame-repeated)
//!   caption embedding query it, producing frame-specific text `T_z`;
//! * the affinity refiner runs temporal self-attention over the pre-softmax
//!   text/patch affinity map `A`;
//! * the feature booster adds a residual temporal self-attention on the
//!   cross-attention output.
//!
//! All inserted branches carry a zero-initialized output projection, so a fresh
//! block computes exactly the vanilla cross-attention it replaces.

use crate::attention::{
    randn, spatial_cross_attention, temporal_self_attention, AttentionParams, AttentionWeights,
    InitMode,
};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// The original cross-attention projections (`d_k = c`).
#[derive(Debug, Clone, PartialEq)]
pub struct CrossProjections {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundCross {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
}

impl CrossProjections {
    pub fn new(c: usize, rng: &mut CounterRng) -> Self {
        let s = 1.0 / libm::sqrt(c as f64);
        Self {
            wq: randn(&[c, c], s, rng),
            wk: randn(&[c, c], s, rng),
            wv: randn(&[c, c], s, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundCross {
        BoundCross {
            wq: tape.leaf(&self.wq),
            wk: tape.leaf(&self.wk),
            wv: tape.leaf(&self.wv),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtgmBlock {
    pub tii_self: AttentionWeights,
    pub tii_cross: AttentionWeights,
    pub cross: CrossProjections,
    /// Temporal self-attention over the affinity map; channels are tokens.
    pub tar_self: AttentionWeights,
    pub tfb_self: AttentionWeights,
    pub n_max: usize,
    /// Residual connections on the injector's two attentions.
    pub tii_residual: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundCtgm {
    pub tii_self: AttentionParams,
    pub tii_cross: AttentionParams,
    pub cross: BoundCross,
    pub tar_self: AttentionParams,
    pub tfb_self: AttentionParams,
    pub n_max: usize,
    pub tii_residual: bool,
}

/// Attention maps captured from one block, copied off the tape.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub block_id: usize,
    /// Scaled affinity before refinement, `[f, hw, n]`.
    pub a: Tensor,
    pub a_ref: Tensor,
    /// `softmax(a_ref)` over tokens.
    pub attn_probs: Tensor,
}

impl CtgmBlock {
    /// Random original projections; every inserted branch uses `branch_init`
    /// for its output projection.
    pub fn new(
        c: usize,
        attn_dim: usize,
        n_max: usize,
        branch_init: InitMode,
        rng: &mut CounterRng,
    ) -> Self {
        Self {
            cross: CrossProjections::new(c, &mut rng.fork(0)),
            tii_self: AttentionWeights::new(c, attn_dim, branch_init, &mut rng.fork(1)),
            tii_cross: AttentionWeights::new(c, attn_dim, branch_init, &mut rng.fork(2)),
            tar_self: AttentionWeights::new(n_max, n_max, branch_init, &mut rng.fork(3)),
            tfb_self: AttentionWeights::new(c, attn_dim, branch_init, &mut rng.fork(4)),
            n_max,
            tii_residual: true,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundCtgm {
        BoundCtgm {
            tii_self: self.tii_self.bind(tape),
            tii_cross: self.tii_cross.bind(tape),
            cross: self.cross.bind(tape),
            tar_self: self.tar_self.bind(tape),
            tfb_self: self.tfb_self.bind(tape),
            n_max: self.n_max,
            tii_residual: self.tii_residual,
        }
    }
}

fn check_tokens(tape: &Tape, t_rep: Var, n_max: usize) -> Result<()> {
    let s = tape.shape(t_rep);
    if s.len() != 3 {
        return Err(Error::Shape {
            op: "ctgm text embedding",
            lhs: s.to_vec(),
            rhs: alloc::vec![3],
        });
    }
    if s[1] != n_max {
        return Err(Error::TokenLength {
            got: s[1],
            expected: n_max,
        });
    }
    Ok(())
}

/// Temporal information injector: `Z_t = SelfAttn_t(Z)`,
/// `T_z = CrossAttn_s(queries = T_rep, keys/values = Z_t)`.
pub fn tii(tape: &mut Tape, z: Var, t_rep: Var, blk: &BoundCtgm) -> Result<(Var, Var)> {
    check_tokens(tape, t_rep, blk.n_max)?;
    let z_t = temporal_self_attention(tape, z, &blk.tii_self, blk.tii_residual)?;
    let t_z = spatial_cross_attention(tape, t_rep, z_t, &blk.tii_cross, blk.tii_residual)?;
    Ok((z_t, t_z))
}

/// `A = (Z_t W_q)(T_z W_k)ᵀ / √d_k` with `d_k` the query projection width.
pub fn affinity(tape: &mut Tape, z_t: Var, t_z: Var, cross: &BoundCross) -> Result<Var> {
    let q = tape.matmul(z_t, cross.wq)?;
    let k = tape.matmul(t_z, cross.wk)?;
    let d_k = *tape.shape(q).last().unwrap_or(&1);
    let a = tape.matmul_nt(q, k)?;
    Ok(tape.scale(a, 1.0 / libm::sqrt(d_k as f64)))
}

/// Temporal affinity refiner: residual temporal self-attention on `A`,
/// treating the `n` token scores of each patch as its channels.
pub fn tar(tape: &mut Tape, a: Var, blk: &BoundCtgm) -> Result<Var> {
    let n = *tape.shape(a).last().unwrap_or(&0);
    if n != blk.n_max {
        return Err(Error::TokenLength {
            got: n,
            expected: blk.n_max,
        });
    }
    temporal_self_attention(tape, a, &blk.tar_self, true)
}

/// Temporal feature booster: `SelfAttn_t(Z_ref) + Z_ref`.
pub fn tfb(tape: &mut Tape, z_ref: Var, blk: &BoundCtgm) -> Result<Var> {
    temporal_self_attention(tape, z_ref, &blk.tfb_self, true)
}

fn capture_trace(tape: &Tape, block_id: usize, a: Var, a_ref: Var, probs: Var) -> AttentionTrace {
    AttentionTrace {
        block_id,
        a: tape.value(a).clone(),
        a_ref: tape.value(a_ref).clone(),
        attn_probs: tape.value(probs).clone(),
    }
}

/// Full guidance block: `TFB(Softmax(TAR(A)) · (T_z W_v))`.
///
/// `z [f, hw, c]`, `t_rep [f, n_max, c]`; output has the shape of `z`.
pub fn ctgm_forward(
    tape: &mut Tape,
    z: Var,
    t_rep: Var,
    blk: &BoundCtgm,
    capture: Option<usize>,
) -> Result<(Var, Option<AttentionTrace>)> {
    let (z_t, t_z) = tii(tape, z, t_rep, blk)?;
    let a = affinity(tape, z_t, t_z, &blk.cross)?;
    let a_ref = tar(tape, a, blk)?;
    let probs = tape.softmax_last(a_ref)?;
    let values = tape.matmul(t_z, blk.cross.wv)?;
    let z_ref = tape.matmul(probs, values)?;
    let out = tfb(tape, z_ref, blk)?;
    let trace = capture.map(|id| capture_trace(tape, id, a, a_ref, probs));
    Ok((out, trace))
}

/// Per-frame text cross-attention `Softmax((Z W_q)(T W_k)ᵀ/√d_k)(T W_v)`.
/// The captured trace has `a_ref == a`.
pub fn vanilla_cross_attention(
    tape: &mut Tape,
    z: Var,
    t_rep: Var,
    cross: &BoundCross,
    capture: Option<usize>,
) -> Result<(Var, Option<AttentionTrace>)> {
    let sz = tape.shape(z);
    let st = tape.shape(t_rep);
    if sz.len() != 3 || st.len() != 3 || sz[0] != st[0] {
        return Err(Error::Shape {
            op: "vanilla_cross_attention",
            lhs: sz.to_vec(),
            rhs: st.to_vec(),
        });
    }
    let a = affinity(tape, z, t_rep, cross)?;
    let probs = tape.softmax_last(a)?;
    let values = tape.matmul(t_rep, cross.wv)?;
    let out = tape.matmul(probs, values)?;
    let trace = capture.map(|id| capture_trace(tape, id, a, a, probs));
    Ok((out, trace))
}
