//! A miniature pseudo-3D video denoiser predicting `v`.
//!
//! Each block runs `spatial self-attention + MLP` (the image-model stand-in),
//! then the text guidance (cross-frame or vanilla), then a temporal attention
//! block. Parameters live in one flat, named list so that optimizers and
//! checkpoints share a single canonical order.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::attention::{
    spatial_self_attention, temporal_self_attention, AttentionParams, AttentionWeights, InitMode,
};
use crate::ctgm::{
    ctgm_forward, vanilla_cross_attention, AttentionTrace, BoundCross, BoundCtgm, CrossProjections,
    CtgmBlock,
};
use crate::data::{encode_caption, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::{hash_str, CounterRng};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(serde::Serialize, serde::Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Guidance {
    /// Cross-frame textual guidance (injector, affinity refiner, booster).
    CrossFrame,
    /// Per-frame-identical text cross-attention.
    Vanilla,
}

#[derive(serde::Serialize, serde::Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Latent (pixel) channels.
    pub channels: usize,
    pub c_model: usize,
    pub n_max: usize,
    pub n_blocks: usize,
    /// Diffusion steps `T`; bounds the timestep input.
    pub steps: usize,
    pub seed: u64,
    /// Projection width of the spatial and temporal self-attentions.
    pub attn_dim: usize,
    pub mlp_hidden: usize,
    pub guidance: Guidance,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 16,
            width: 16,
            channels: 3,
            c_model: 64,
            n_max: 4,
            n_blocks: 2,
            steps: 1000,
            seed: 0,
            attn_dim: 16,
            mlp_hidden: 64,
            guidance: Guidance::CrossFrame,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.frames,
            self.height,
            self.width,
            self.channels,
            self.c_model,
            self.n_max,
            self.n_blocks,
            self.steps,
            self.attn_dim,
            self.mlp_hidden,
        ];
        if extents.contains(&0) {
            return Err(Error::Config(format!("all extents must be >= 1: {self:?}")));
        }
        if self.c_model < self.channels {
            return Err(Error::Config(format!(
                "c_model {} < channels {}",
                self.c_model, self.channels
            )));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        2 * self.channels + 1
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct AttnIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
}

#[derive(Debug, Clone, Copy)]
struct CrossIdx {
    wq: usize,
    wk: usize,
    wv: usize,
}

#[derive(Debug, Clone, Copy)]
enum TextIdx {
    Vanilla(CrossIdx),
    CrossFrame {
        cross: CrossIdx,
        tii_self: AttnIdx,
        tii_cross: AttnIdx,
        tar_self: AttnIdx,
        tfb_self: AttnIdx,
    },
}

#[derive(Debug, Clone, Copy)]
struct BlockIdx {
    spatial: AttnIdx,
    mlp: [usize; 4],
    text: TextIdx,
    temporal: AttnIdx,
}

#[derive(Debug, Clone)]
struct Layout {
    embedding: usize,
    input: [usize; 2],
    time: [usize; 4],
    blocks: Vec<BlockIdx>,
    output: [usize; 2],
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    cfg: ModelConfig,
    params: Vec<Param>,
    layout: Layout,
}

/// `[f, h, w, 2c + 1]` = concat(noisy latent, mask indicator, image indicator).
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserInput {
    tensor: Tensor,
}

impl DenoiserInput {
    pub fn new(noisy: &Tensor, mask: &Tensor, image: &Tensor) -> Result<Self> {
        let sn = noisy.shape();
        if sn.len() != 4 {
            return Err(Error::Shape {
                op: "denoiser input",
                lhs: sn.to_vec(),
                rhs: vec![4],
            });
        }
        let (f, h, w, c) = (sn[0], sn[1], sn[2], sn[3]);
        if mask.shape() != [f, h, w, 1] || image.shape() != sn {
            return Err(Error::Shape {
                op: "denoiser input",
                lhs: mask.shape().to_vec(),
                rhs: image.shape().to_vec(),
            });
        }
        let cin = 2 * c + 1;
        let mut data = Vec::with_capacity(f * h * w * cin);
        for px in 0..f * h * w {
            data.extend_from_slice(&noisy.data()[px * c..(px + 1) * c]);
            data.push(mask.data()[px]);
            data.extend_from_slice(&image.data()[px * c..(px + 1) * c]);
        }
        Ok(Self {
            tensor: Tensor::from_raw(vec![f, h, w, cin], data),
        })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }
}

/// Mask and image indicators. `images[i]` (`[h, w, c]`) conditions
/// `mask_frames[i]`; every other frame is zero in both.
pub fn build_indicators(
    mask_frames: &[usize],
    images: &[Tensor],
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<(Tensor, Tensor)> {
    let mut mask = Tensor::zeros(&[frames, height, width, 1]);
    let mut image = Tensor::zeros(&[frames, height, width, channels]);
    let plane = height * width;
    for (i, &fr) in mask_frames.iter().enumerate() {
        if fr >= frames {
            return Err(Error::Config(format!(
                "masked frame {fr} outside 0..{frames}"
            )));
        }
        let img = images.get(i).ok_or(Error::MissingImage(fr))?;
        if img.shape() != [height, width, channels] {
            return Err(Error::Shape {
                op: "build_indicators",
                lhs: img.shape().to_vec(),
                rhs: vec![height, width, channels],
            });
        }
        mask.data_mut()[fr * plane..(fr + 1) * plane].fill(1.0);
        image.data_mut()[fr * plane * channels..(fr + 1) * plane * channels]
            .copy_from_slice(img.data());
    }
    Ok((mask, image))
}

/// Sinusoidal embedding of a scalar position.
pub fn sinusoidal(position: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = libm::exp(-libm::log(10_000.0) * i as f64 / half as f64);
        out[i] = libm::sin(position * freq);
        out[i + half] = libm::cos(position * freq);
    }
    out
}

struct Builder {
    root: CounterRng,
    params: Vec<Param>,
}

impl Builder {
    fn push(&mut self, name: String, tensor: Tensor) -> usize {
        self.params.push(Param {
            name,
            tensor: tensor.with_requires_grad(true),
        });
        self.params.len() - 1
    }

    fn stream(&self, name: &str) -> CounterRng {
        self.root.fork(hash_str(name))
    }

    fn randn(&mut self, name: String, shape: &[usize], std: f64) -> usize {
        let mut rng = self.stream(&name);
        let t = Tensor::from_fn(shape, |_| rng.normal() * std);
        self.push(name, t)
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> usize {
        self.push(name, Tensor::zeros(shape))
    }

    fn attention(&mut self, prefix: &str, w: AttentionWeights) -> AttnIdx {
        let [q, k, v, o] = [w.wq, w.wk, w.wv, w.wo];
        AttnIdx {
            wq: self.push(format!("{prefix}.wq"), q),
            wk: self.push(format!("{prefix}.wk"), k),
            wv: self.push(format!("{prefix}.wv"), v),
            wo: self.push(format!("{prefix}.wo"), o),
        }
    }

    fn cross(&mut self, prefix: &str, c: CrossProjections) -> CrossIdx {
        CrossIdx {
            wq: self.push(format!("{prefix}.wq"), c.wq),
            wk: self.push(format!("{prefix}.wk"), c.wk),
            wv: self.push(format!("{prefix}.wv"), c.wv),
        }
    }
}

/// Registered parameter handles for one forward pass.
struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    fn attn(&self, i: &AttnIdx) -> AttentionParams {
        AttentionParams {
            wq: self.vars[i.wq],
            wk: self.vars[i.wk],
            wv: self.vars[i.wv],
            wo: self.vars[i.wo],
        }
    }

    fn cross(&self, i: &CrossIdx) -> BoundCross {
        BoundCross {
            wq: self.vars[i.wq],
            wk: self.vars[i.wk],
            wv: self.vars[i.wv],
        }
    }
}

/// Output of a forward pass recorded on a caller-owned tape.
pub struct ForwardPass {
    /// `[f, h, w, c]`.
    pub v_pred: Var,
    /// Parameter leaves in canonical order.
    pub params: Vec<Var>,
    pub traces: Vec<AttentionTrace>,
}

pub fn build_model(cfg: &ModelConfig) -> Result<Denoiser> {
    Denoiser::new(*cfg)
}

impl Denoiser {
    /// Deterministic initialization. Each tensor draws from a stream keyed by
    /// `(seed, name)`, so models that differ only in guidance share every
    /// common parameter bit-for-bit.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.c_model;
        let vocab = Vocabulary::default();
        let inv = |d: usize| 1.0 / libm::sqrt(d as f64);
        let mut b = Builder {
            root: CounterRng::new(cfg.seed),
            params: Vec::new(),
        };
        let embedding = b.randn("embedding".into(), &[vocab.len(), c], 1.0);
        let cin = cfg.input_channels();
        let input = [
            b.randn("input.w".into(), &[cin, c], inv(cin)),
            b.zeros("input.b".into(), &[c]),
        ];
        let time = [
            b.randn("time.w1".into(), &[c, c], inv(c)),
            b.zeros("time.b1".into(), &[c]),
            b.randn("time.w2".into(), &[c, c], inv(c)),
            b.zeros("time.b2".into(), &[c]),
        ];
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for i in 0..cfg.n_blocks {
            let p = format!("blocks.{i}");
            let name = format!("{p}.spatial");
            let w = AttentionWeights::new(c, cfg.attn_dim, InitMode::Random, &mut b.stream(&name));
            let spatial = b.attention(&name, w);
            let mlp = [
                b.randn(format!("{p}.mlp.w1"), &[c, cfg.mlp_hidden], inv(c)),
                b.zeros(format!("{p}.mlp.b1"), &[cfg.mlp_hidden]),
                b.randn(
                    format!("{p}.mlp.w2"),
                    &[cfg.mlp_hidden, c],
                    inv(cfg.mlp_hidden),
                ),
                b.zeros(format!("{p}.mlp.b2"), &[c]),
            ];
            let text_rng = b.stream(&format!("{p}.text"));
            let text = match cfg.guidance {
                Guidance::Vanilla => {
                    let cross = CrossProjections::new(c, &mut text_rng.fork(0));
                    TextIdx::Vanilla(b.cross(&format!("{p}.text.cross"), cross))
                }
                Guidance::CrossFrame => {
                    let blk = CtgmBlock::new(
                        c,
                        cfg.attn_dim,
                        cfg.n_max,
                        InitMode::ZeroOut,
                        &mut text_rng.clone(),
                    );
                    TextIdx::CrossFrame {
                        cross: b.cross(&format!("{p}.text.cross"), blk.cross),
                        tii_self: b.attention(&format!("{p}.text.tii_self"), blk.tii_self),
                        tii_cross: b.attention(&format!("{p}.text.tii_cross"), blk.tii_cross),
                        tar_self: b.attention(&format!("{p}.text.tar_self"), blk.tar_self),
                        tfb_self: b.attention(&format!("{p}.text.tfb_self"), blk.tfb_self),
                    }
                }
            };
            let name = format!("{p}.temporal");
            let w = AttentionWeights::new(c, cfg.attn_dim, InitMode::ZeroOut, &mut b.stream(&name));
            let temporal = b.attention(&name, w);
            blocks.push(BlockIdx {
                spatial,
                mlp,
                text,
                temporal,
            });
        }
        let output = [
            b.randn("output.w".into(), &[c, cfg.channels], inv(c)),
            b.zeros("output.b".into(), &[cfg.channels]),
        ];
        Ok(Self {
            cfg,
            params: b.params,
            layout: Layout {
                embedding,
                input,
                time,
                blocks,
                output,
            },
        })
    }

    /// Rebuilds a model from stored parameters, which must match the names,
    /// order and shapes that `cfg` produces.
    pub fn from_params(cfg: ModelConfig, params: Vec<Param>) -> Result<Self> {
        let mut model = Self::new(cfg)?;
        if params.len() != model.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                model.params.len(),
                params.len()
            )));
        }
        for (slot, p) in model.params.iter_mut().zip(params) {
            if slot.name != p.name {
                return Err(Error::Config(format!(
                    "parameter {:?} found where {:?} was expected",
                    p.name, slot.name
                )));
            }
            if slot.tensor.shape() != p.tensor.shape() {
                return Err(Error::Shape {
                    op: "from_params",
                    lhs: p.tensor.shape().to_vec(),
                    rhs: slot.tensor.shape().to_vec(),
                });
            }
            slot.tensor = p.tensor;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|p| p.name == name)
            .map(|p| &p.tensor)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.tensor)
    }

    /// `T_rep` for a padded caption, `[f, n_max, c_model]`, as plain values.
    pub fn text_embedding(&self, tokens: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let table = tape.constant(self.params[self.layout.embedding].tensor.clone());
        let t = self.encode(&mut tape, table, tokens)?;
        Ok(tape.value(t).clone())
    }

    fn encode(&self, tape: &mut Tape, table: Var, tokens: &[usize]) -> Result<Var> {
        if tokens.len() != self.cfg.n_max {
            return Err(Error::TokenLength {
                got: tokens.len(),
                expected: self.cfg.n_max,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= Vocabulary::default().len()) {
            return Err(Error::UnknownToken(format!("id {bad}")));
        }
        encode_caption(tape, table, tokens, self.cfg.frames)
    }

    /// Records a forward pass on `tape`; parameters are registered as leaves
    /// that require gradients.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        input: &DenoiserInput,
        tokens: &[usize],
        t: usize,
        capture: bool,
    ) -> Result<ForwardPass> {
        let params: Vec<Var> = self.params.iter().map(|p| tape.param(&p.tensor)).collect();
        let bound = Bound { vars: params };
        let table = bound.vars[self.layout.embedding];
        let t_rep = self.encode(tape, table, tokens)?;
        let x = tape.constant(input.tensor.clone());
        let (v_pred, traces) = self.forward_with_text(tape, &bound, x, t_rep, t, capture)?;
        Ok(ForwardPass {
            v_pred,
            params: bound.vars,
            traces,
        })
    }

    /// Same as [`Denoiser::forward_on_tape`] with an explicit `T_rep`
    /// (`[f, n_max, c_model]`) in place of token ids.
    pub fn forward_with_embedding(
        &self,
        tape: &mut Tape,
        input: &DenoiserInput,
        t_rep: Var,
        t: usize,
        capture: bool,
    ) -> Result<ForwardPass> {
        let params: Vec<Var> = self.params.iter().map(|p| tape.param(&p.tensor)).collect();
        let bound = Bound { vars: params };
        let x = tape.constant(input.tensor.clone());
        let (v_pred, traces) = self.forward_with_text(tape, &bound, x, t_rep, t, capture)?;
        Ok(ForwardPass {
            v_pred,
            params: bound.vars,
            traces,
        })
    }

    /// Inference: returns `v_pred [f, h, w, c]` and, when `capture`, one trace per block.
    pub fn forward(
        &self,
        input: &DenoiserInput,
        tokens: &[usize],
        t: usize,
        capture: bool,
    ) -> Result<(Tensor, Vec<AttentionTrace>)> {
        let mut tape = Tape::new();
        let pass = self.forward_on_tape(&mut tape, input, tokens, t, capture)?;
        Ok((tape.value(pass.v_pred).clone(), pass.traces))
    }

    fn forward_with_text(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        t_rep: Var,
        t: usize,
        capture: bool,
    ) -> Result<(Var, Vec<AttentionTrace>)> {
        let cfg = &self.cfg;
        let (f, hw, c) = (cfg.frames, cfg.pixels(), cfg.c_model);
        let want = [f, cfg.height, cfg.width, cfg.input_channels()];
        if tape.shape(x) != want {
            return Err(Error::Shape {
                op: "denoiser forward",
                lhs: tape.shape(x).to_vec(),
                rhs: want.to_vec(),
            });
        }
        if t > cfg.steps {
            return Err(Error::Timestep(format!("t={t} exceeds T={}", cfg.steps)));
        }
        let v = |i: usize| bound.vars[i];
        let l = &self.layout;

        let x = tape.reshape(x, &[f, hw, cfg.input_channels()])?;
        let mut h = tape.linear(x, v(l.input[0]), Some(v(l.input[1])))?;
        let frame_pos = self.frame_positions();
        let frame_pos = tape.constant(frame_pos);
        h = tape.add(h, frame_pos)?;

        let t_sin = tape.constant(Tensor::from_raw(vec![1, c], sinusoidal(t as f64, c)));
        let temb = tape.linear(t_sin, v(l.time[0]), Some(v(l.time[1])))?;
        let temb = tape.silu(temb);
        let temb = tape.linear(temb, v(l.time[2]), Some(v(l.time[3])))?;
        let temb = tape.reshape(temb, &[c])?;
        h = tape.add_bias(h, temb)?;

        let mut traces = Vec::new();
        for (bi, blk) in l.blocks.iter().enumerate() {
            let n = tape.layer_norm(h);
            let sa = spatial_self_attention(tape, n, &bound.attn(&blk.spatial), false)?;
            h = tape.add(h, sa)?;

            let n = tape.layer_norm(h);
            let m = tape.linear(n, v(blk.mlp[0]), Some(v(blk.mlp[1])))?;
            let m = tape.silu(m);
            let m = tape.linear(m, v(blk.mlp[2]), Some(v(blk.mlp[3])))?;
            h = tape.add(h, m)?;

            let n = tape.layer_norm(h);
            let id = capture.then_some(bi);
            let (g, trace) = match &blk.text {
                TextIdx::Vanilla(cross) => {
                    vanilla_cross_attention(tape, n, t_rep, &bound.cross(cross), id)?
                }
                TextIdx::CrossFrame {
                    cross,
                    tii_self,
                    tii_cross,
                    tar_self,
                    tfb_self,
                } => {
                    let bc = BoundCtgm {
                        tii_self: bound.attn(tii_self),
                        tii_cross: bound.attn(tii_cross),
                        cross: bound.cross(cross),
                        tar_self: bound.attn(tar_self),
                        tfb_self: bound.attn(tfb_self),
                        n_max: cfg.n_max,
                        tii_residual: true,
                    };
                    ctgm_forward(tape, n, t_rep, &bc, id)?
                }
            };
            traces.extend(trace);
            h = tape.add(h, g)?;

            let n = tape.layer_norm(h);
            let ta = temporal_self_attention(tape, n, &bound.attn(&blk.temporal), false)?;
            h = tape.add(h, ta)?;
        }

        let n = tape.layer_norm(h);
        let out = tape.linear(n, v(l.output[0]), Some(v(l.output[1])))?;
        let out = tape.reshape(out, &[f, cfg.height, cfg.width, cfg.channels])?;
        Ok((out, traces))
    }

    /// Constant sinusoidal frame-index embedding broadcast over pixels.
    fn frame_positions(&self) -> Tensor {
        let (f, hw, c) = (self.cfg.frames, self.cfg.pixels(), self.cfg.c_model);
        let mut data = Vec::with_capacity(f * hw * c);
        for fr in 0..f {
            let row = sinusoidal(fr as f64, c);
            for _ in 0..hw {
                data.extend_from_slice(&row);
            }
        }
        Tensor::from_raw(vec![f, hw, c], data)
    }
}
