//! DDIM sampling with classifier-free guidance.

use alloc::format;
use alloc::vec::Vec;

use crate::ctgm::AttentionTrace;
use crate::data::Vocabulary;
use crate::denoiser::{build_indicators, Denoiser, DenoiserInput};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::schedule::{cfg_combine, NoiseSchedule};
use crate::tensor::Tensor;

/// Conditioning indicators shared by every denoising step.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    /// `[f, h, w, 1]`, one on conditioned frames.
    pub mask: Tensor,
    /// `[f, h, w, c]`, the conditioning images on masked frames, zero elsewhere.
    pub image: Tensor,
}

/// Anything that predicts `v` for a noisy video. Implemented by the denoiser
/// and by test doubles.
pub trait VelocityModel {
    /// `[f, h, w, c]`.
    fn video_shape(&self) -> [usize; 4];
    fn n_max(&self) -> usize;
    fn predict(
        &self,
        z_t: &Tensor,
        cond: &Conditioning,
        tokens: &[usize],
        t: usize,
        capture: bool,
    ) -> Result<(Tensor, Vec<AttentionTrace>)>;
}

impl VelocityModel for Denoiser {
    fn video_shape(&self) -> [usize; 4] {
        let c = self.config();
        [c.frames, c.height, c.width, c.channels]
    }

    fn n_max(&self) -> usize {
        self.config().n_max
    }

    fn predict(
        &self,
        z_t: &Tensor,
        cond: &Conditioning,
        tokens: &[usize],
        t: usize,
        capture: bool,
    ) -> Result<(Tensor, Vec<AttentionTrace>)> {
        let input = DenoiserInput::new(z_t, &cond.mask, &cond.image)?;
        self.forward(&input, tokens, t, capture)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleConfig {
    pub steps: usize,
    pub cfg_scale: f64,
    pub seed: u64,
    /// Frames pinned by conditioning images (`images[i]` for `mask_frames[i]`).
    pub mask_frames: Vec<usize>,
    /// Capture attention traces on this many final steps.
    pub capture_last: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            cfg_scale: 7.5,
            seed: 0,
            mask_frames: Vec::new(),
            capture_last: 10,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampling steps must be >= 1".into()));
        }
        if !(self.cfg_scale >= 0.0) || !self.cfg_scale.is_finite() {
            return Err(Error::Config(format!(
                "cfg_scale must be finite and >= 0, got {}",
                self.cfg_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    /// `[f, h, w, c]`.
    pub video: Tensor,
    /// Timesteps at which traces were captured, in sampling order.
    pub captured_t: Vec<usize>,
    /// `traces[i]` holds one trace per block for `captured_t[i]`, taken from
    /// the conditional branch.
    pub traces: Vec<Vec<AttentionTrace>>,
}

/// Unit-normal `z_T` for a seed; valid as the terminal state because the
/// schedule ends at zero signal.
pub fn initial_noise(shape: [usize; 4], seed: u64) -> Tensor {
    let mut rng = CounterRng::new(seed).fork(0x6e6f_6973_65);
    Tensor::from_fn(&shape, |_| rng.normal())
}

/// Samples a video for `tokens` (already padded to `n_max`).
pub fn sample(
    model: &impl VelocityModel,
    schedule: &NoiseSchedule,
    tokens: &[usize],
    images: &[Tensor],
    cfg: &SampleConfig,
) -> Result<SampleOutput> {
    cfg.validate()?;
    let shape = model.video_shape();
    let [f, h, w, c] = shape;
    let (mask, image) = build_indicators(&cfg.mask_frames, images, f, h, w, c)?;
    let cond = Conditioning { mask, image };
    let null = Vocabulary::default().null_caption(model.n_max());
    let steps = schedule.ddim_timesteps(cfg.steps)?;
    let first_capture = steps.len().saturating_sub(cfg.capture_last);

    let mut z = initial_noise(shape, cfg.seed);
    let mut out = SampleOutput {
        video: Tensor::zeros(&shape),
        captured_t: Vec::new(),
        traces: Vec::new(),
    };
    for (i, &(t, t_prev)) in steps.iter().enumerate() {
        let capture = i >= first_capture;
        let (v_cond, traces) = model.predict(&z, &cond, tokens, t, capture)?;
        let (v_uncond, _) = model.predict(&z, &cond, &null, t, false)?;
        let v = cfg_combine(&v_uncond, &v_cond, cfg.cfg_scale)?;
        z = schedule.ddim_step(&z, &v, t, t_prev)?;
        if !z.all_finite() {
            return Err(Error::NonFinite(format!("sample at t={t_prev}")));
        }
        if capture {
            out.captured_t.push(t);
            out.traces.push(traces);
        }
    }
    out.video = z;
    Ok(out)
}
