//! Deterministic v-prediction training.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{generate_sample, DataConfig, Vocabulary};
use crate::denoiser::{build_indicators, Denoiser, DenoiserInput, ModelConfig};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng::CounterRng;
use crate::schedule::{make_schedule, NoiseSchedule, ScheduleConfig};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(serde::Serialize, serde::Deserialize, Debug, Clone, Copy, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub caption_dropout_p: f64,
    pub seed: u64,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    /// Side of the rendered shapes.
    pub shape_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            adam: AdamConfig::default(),
            caption_dropout_p: 0.1,
            seed: 0,
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            shape_size: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(0.0..1.0).contains(&self.caption_dropout_p) {
            return Err(Error::Config(format!(
                "caption_dropout_p must be in [0, 1), got {}",
                self.caption_dropout_p
            )));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.schedule.steps != self.model.steps {
            return Err(Error::Config(format!(
                "schedule T={} differs from model T={}",
                self.schedule.steps, self.model.steps
            )));
        }
        Ok(())
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            frames: self.model.frames,
            height: self.model.height,
            width: self.model.width,
            channels: self.model.channels,
            shape_size: self.shape_size,
            n_max: self.model.n_max,
        }
    }
}

/// Mean squared error between prediction and target over all elements.
pub fn training_loss(tape: &mut Tape, v_pred: Var, v_target: Var) -> Result<Var> {
    let d = tape.sub(v_pred, v_target)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean(sq))
}

/// One fully specified training example.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub input: DenoiserInput,
    pub tokens: Vec<usize>,
    pub t: usize,
    pub target: Tensor,
}

/// Builds the teacher-forced example: first frame of the clean video as the
/// conditioning image, mask on frame 0, noisy latent at `t`.
pub fn make_example(
    pixels: &Tensor,
    tokens: Vec<usize>,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<TrainExample> {
    let s = pixels.shape();
    let (f, h, w, c) = (s[0], s[1], s[2], s[3]);
    let first = Tensor::from_raw(vec![h, w, c], pixels.data()[..h * w * c].to_vec());
    let (mask, image) = build_indicators(&[0], &[first], f, h, w, c)?;
    let noisy = sched.forward_diffuse(pixels, t, eps)?;
    let target = sched.v_target(pixels, eps, t)?;
    Ok(TrainExample {
        input: DenoiserInput::new(&noisy, &mask, &image)?,
        tokens,
        t,
        target,
    })
}

/// Loss and per-parameter gradients for one example.
pub fn example_grads(model: &Denoiser, ex: &TrainExample) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let pass = model.forward_on_tape(&mut tape, &ex.input, &ex.tokens, ex.t, false)?;
    let target = tape.constant(ex.target.clone());
    let loss = training_loss(&mut tape, pass.v_pred, target)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite("example loss".into()));
    }
    tape.backward(loss)?;
    let grads = pass
        .params
        .iter()
        .zip(model.params())
        .map(|(&v, p)| match tape.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; p.tensor.len()],
        })
        .collect();
    Ok((value, grads))
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Denoiser,
    pub optimizer: Adam,
    pub rng: CounterRng,
    pub step: u64,
    schedule: NoiseSchedule,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Denoiser::new(config.model)?;
        let optimizer = Adam::new(config.adam, model.params().iter().map(|p| p.tensor.len()));
        let rng = CounterRng::new(config.seed).fork(0x7261_696e);
        Self::from_parts(config, model, optimizer, rng, 0)
    }

    pub fn from_parts(
        config: TrainConfig,
        model: Denoiser,
        optimizer: Adam,
        rng: CounterRng,
        step: u64,
    ) -> Result<Self> {
        config.validate()?;
        if *model.config() != config.model {
            return Err(Error::Config(
                "model config differs from training config".into(),
            ));
        }
        let schedule = make_schedule(&config.schedule)?;
        Ok(Self {
            config,
            model,
            optimizer,
            rng,
            step,
            schedule,
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// Draws the next batch. Slots consume the generator in order.
    pub fn next_batch(&mut self) -> Result<Vec<TrainExample>> {
        let data = self.config.data_config();
        let vocab = Vocabulary::default();
        let m = &self.config.model;
        let shape = [m.frames, m.height, m.width, m.channels];
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let seed = self.rng.next_u64();
            let sample = generate_sample(seed, &data)?;
            let t = 1 + self.rng.below(self.schedule.steps() as u64) as usize;
            let dropped = self.rng.bernoulli(self.config.caption_dropout_p);
            let eps = Tensor::from_fn(&shape, |_| self.rng.normal());
            let tokens = if dropped {
                vocab.null_caption(m.n_max)
            } else {
                sample.caption
            };
            batch.push(make_example(
                &sample.pixels,
                tokens,
                t,
                &eps,
                &self.schedule,
            )?);
        }
        Ok(batch)
    }

    /// One Adam step on the mean batch loss; returns that loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let batch = self.next_batch()?;
        let n = batch.len() as f64;
        let mut total = 0.0;
        let mut grads: Vec<Vec<f64>> = self
            .model
            .params()
            .iter()
            .map(|p| vec![0.0; p.tensor.len()])
            .collect();
        for ex in &batch {
            let (loss, g) = example_grads(&self.model, ex).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteLoss(self.step),
                other => other,
            })?;
            total += loss;
            for (acc, gi) in grads.iter_mut().zip(&g) {
                for (a, b) in acc.iter_mut().zip(gi) {
                    *a += b / n;
                }
            }
        }
        let loss = total / n;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(self.step));
        }
        self.optimizer.update(
            self.model.params_mut().iter_mut().map(|p| &mut p.tensor),
            &grads,
        );
        self.step += 1;
        Ok(loss)
    }
}
