//! Command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use fancyvideo_core::analysis::{centroid_drift, motion_energy};
use fancyvideo_core::ctgm::AttentionTrace;
use fancyvideo_core::sampling::SampleConfig;
use fancyvideo_core::train::TrainConfig;

use crate::blob::read_tensor;
use crate::error::{Error, Result};
use crate::images::read_image;
use crate::pipeline::{
    ablate, attn_dump, dump_corpus, summarize, train, write_ablation, write_attn_dump,
    write_sample, write_training, AblationConfig, BlockSelect, Inference, Prompt, SampleRequest,
};
use crate::tables::{read_trace_file, write_drift};

#[derive(Debug, Parser)]
#[command(
    name = "fancyvideo",
    version,
    about = "Toy cross-frame guided video diffusion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from a JSON config; writes checkpoint, loss log and schedule.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Sample a video; writes per-frame PPM/PGM images and the raw blob.
    Sample {
        #[command(flatten)]
        sampling: SamplingArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the verb token's attention maps, heatmaps and drift.
    Attn {
        #[command(flatten)]
        sampling: SamplingArgs,
        /// Block index, or `mean` to average over blocks.
        #[arg(long, default_value = "mean")]
        block: BlockArg,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(subcommand)]
    Metrics(Metrics),
    /// Write procedural training samples as blobs plus a JSON-lines index.
    Corpus {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        first_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub caption: String,
    /// Conditioning image (PGM/PPM); repeat for several masked frames.
    #[arg(long)]
    pub image: Vec<PathBuf>,
    /// Frames pinned by the images; defaults to 0..number of images.
    #[arg(long, value_delimiter = ',')]
    pub mask_frames: Option<Vec<usize>>,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long = "cfg", default_value_t = 7.5)]
    pub cfg_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of final sampling steps whose attention is captured.
    #[arg(long, default_value_t = 10)]
    pub capture_last: usize,
}

#[derive(Debug, Subcommand)]
pub enum Metrics {
    /// Centroid drift of one token's column in a trace CSV.
    Drift {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        token: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
    },
    /// Motion energy of a video blob (`video.json`/`video.f32`).
    Motion {
        #[arg(long)]
        video: PathBuf,
    },
    /// Compare two checkpoints that differ only in the guidance block.
    Ablate {
        #[arg(long)]
        ckpt_a: PathBuf,
        #[arg(long)]
        ckpt_b: PathBuf,
        /// Captions separated by `;`; defaults to every color/shape/verb combination.
        #[arg(long)]
        prompts: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long = "cfg", default_value_t = 7.5)]
        cfg_scale: f64,
        #[arg(long, default_value = "mean")]
        block: BlockArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct BlockArg(pub BlockSelect);

impl FromStr for BlockArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "mean" {
            return Ok(Self(BlockSelect::Mean));
        }
        s.parse()
            .map(|i| Self(BlockSelect::Index(i)))
            .map_err(|_| format!("expected a block index or `mean`, got {s:?}"))
    }
}

pub fn read_config(path: &Path) -> Result<TrainConfig> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    let cfg: TrainConfig = serde_json::from_slice(&bytes)?;
    cfg.validate()?;
    Ok(cfg)
}

impl SamplingArgs {
    fn request(&self, inf: &Inference) -> Result<SampleRequest> {
        let m = inf.model.config();
        let images = self
            .image
            .iter()
            .map(|p| read_image(p, m.height, m.width, m.channels))
            .collect::<Result<Vec<_>>>()?;
        let mask_frames = self
            .mask_frames
            .clone()
            .unwrap_or_else(|| (0..images.len()).collect());
        if images.len() > mask_frames.len() {
            return Err(Error::Usage(format!(
                "{} images for {} masked frames",
                images.len(),
                mask_frames.len()
            )));
        }
        Ok(SampleRequest {
            caption: self.caption.clone(),
            images,
            config: SampleConfig {
                steps: self.steps,
                cfg_scale: self.cfg_scale,
                seed: self.seed,
                mask_frames,
                capture_last: self.capture_last,
            },
        })
    }
}

/// Executes a parsed command; human-readable progress goes to `log`.
pub fn run(cli: Cli, log: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = read_config(&config)?;
            let outcome = train(cfg, |step, loss| {
                if step % 50 == 0 || step + 1 == cfg.steps {
                    let _ = writeln!(log, "step {step} loss {loss:.6}");
                }
            })?;
            write_training(&out, &outcome)?;
            let _ = writeln!(log, "wrote {}", out.join("checkpoint.fvckpt").display());
        }
        Command::Sample { sampling, out } => {
            let inf = Inference::load(&sampling.ckpt)?;
            let req = sampling.request(&inf)?;
            let sample = inf.sample(&req)?;
            write_sample(&out, &sample.video)?;
            let _ = writeln!(log, "wrote {}", out.display());
        }
        Command::Attn {
            sampling,
            block,
            out,
        } => {
            let inf = Inference::load(&sampling.ckpt)?;
            let req = sampling.request(&inf)?;
            let dump = attn_dump(&inf, &req, block.0)?;
            let m = inf.model.config();
            write_attn_dump(&out, &dump, m.height, m.width)?;
            let _ = writeln!(log, "total_drift {}", dump.drift.total_drift);
        }
        Command::Metrics(Metrics::Drift {
            trace,
            token,
            height,
            width,
        }) => {
            let probs = read_trace_file(&trace)?;
            let t = AttentionTrace {
                block_id: 0,
                a: probs.clone(),
                a_ref: probs.clone(),
                attn_probs: probs,
            };
            let report = centroid_drift(&t, token, height, width)?;
            write_drift(std::io::stdout().lock(), &[("trace".into(), report)])?;
        }
        Command::Metrics(Metrics::Motion { video }) => {
            let v = read_tensor(&video)?;
            println!("motion_energy\n{}", motion_energy(&v)?);
        }
        Command::Metrics(Metrics::Ablate {
            ckpt_a,
            ckpt_b,
            prompts,
            seeds,
            steps,
            cfg_scale,
            block,
            out,
        }) => {
            let a = Inference::load(&ckpt_a)?;
            let b = Inference::load(&ckpt_b)?;
            let mut cfg = AblationConfig {
                seeds,
                steps,
                cfg_scale,
                block: block.0,
                ..AblationConfig::default()
            };
            if let Some(list) = prompts {
                cfg.prompts = list
                    .split(';')
                    .filter(|s| !s.trim().is_empty())
                    .map(Prompt::parse)
                    .collect::<Result<_>>()?;
            }
            let rows = ablate(&a, &b, &cfg, |r| {
                let _ = writeln!(
                    log,
                    "{} seed {}: motion {:.5}/{:.5} drift {:.4}/{:.4}",
                    r.prompt, r.seed, r.motion_a, r.motion_b, r.drift_a, r.drift_b
                );
            })?;
            write_ablation(&out, &rows)?;
            for s in summarize(&rows) {
                let _ = writeln!(log, "{s:?}");
            }
        }
        Command::Corpus {
            config,
            count,
            first_seed,
            out,
        } => {
            let cfg = match config {
                Some(p) => read_config(&p)?,
                None => TrainConfig::default(),
            };
            dump_corpus(&out, &cfg.data_config(), first_seed..first_seed + count)?;
        }
    }
    Ok(())
}
