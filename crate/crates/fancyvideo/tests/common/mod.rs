#![allow(dead_code)]

use fancyvideo::pipeline::{train, Inference};
use fancyvideo_core::denoiser::{Guidance, ModelConfig};
use fancyvideo_core::train::TrainConfig;

/// A model small enough to train and sample in well under a second.
pub fn tiny_config(steps: u64, guidance: Guidance) -> TrainConfig {
    let mut cfg = TrainConfig {
        steps,
        batch_size: 2,
        seed: 5,
        ..TrainConfig::default()
    };
    cfg.model = ModelConfig {
        frames: 3,
        height: 6,
        width: 6,
        channels: 3,
        c_model: 8,
        n_blocks: 1,
        attn_dim: 4,
        mlp_hidden: 8,
        guidance,
        ..cfg.model
    };
    cfg.shape_size = 2;
    cfg
}

pub fn tiny_inference(steps: u64, guidance: Guidance) -> Inference {
    let out = train(tiny_config(steps, guidance), |_, _| {}).unwrap();
    Inference::new(out.trainer.config, out.trainer.model).unwrap()
}
