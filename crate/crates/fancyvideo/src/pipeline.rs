//! End-to-end operations shared by the CLI and the tests: training runs,
//! sampling, attention dumps and the guidance ablation.

use std::path::Path;

use fancyvideo_core::analysis::{
    average_traces, centroid_drift, motion_energy, token_heatmaps, DriftReport,
};
use fancyvideo_core::ctgm::AttentionTrace;
use fancyvideo_core::data::{
    generate_sample, generate_sample_with, Color, DataConfig, ShapeKind, Verb, Vocabulary,
};
use fancyvideo_core::denoiser::Denoiser;
use fancyvideo_core::rng::{hash_str, CounterRng};
use fancyvideo_core::sampling::{sample, SampleConfig, SampleOutput};
use fancyvideo_core::schedule::{make_schedule, NoiseSchedule};
use fancyvideo_core::train::{TrainConfig, Trainer};
use fancyvideo_core::Tensor;
use serde::Serialize;

use crate::blob::{encode_f32, write_tensor};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::images::{write_frames, write_pgm};
use crate::tables::{write_drift, write_loss_log, write_schedule, write_trace_file};

/// Padded token ids for a whitespace-separated caption.
pub fn parse_caption(caption: &str, n_max: usize) -> Result<Vec<usize>> {
    let vocab = Vocabulary::default();
    Ok(vocab.pad(&vocab.tokenize(caption)?, n_max)?)
}

pub struct TrainOutcome {
    pub trainer: Trainer,
    pub losses: Vec<f64>,
}

/// Runs `config.steps` optimizer steps from initialization, reporting each
/// step's loss to `progress`.
pub fn train(config: TrainConfig, mut progress: impl FnMut(u64, f64)) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config)?;
    let mut losses = Vec::with_capacity(config.steps as usize);
    while trainer.step < config.steps {
        let step = trainer.step;
        let loss = trainer.train_step()?;
        progress(step, loss);
        losses.push(loss);
    }
    Ok(TrainOutcome { trainer, losses })
}

/// Writes `checkpoint.fvckpt`, `loss.csv`, `schedule.csv` and `config.json`.
pub fn write_training(dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    Checkpoint::from_trainer(&outcome.trainer).save(&dir.join("checkpoint.fvckpt"))?;
    write_loss_log(&dir.join("loss.csv"), &outcome.losses)?;
    write_schedule(&dir.join("schedule.csv"), outcome.trainer.schedule())?;
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&outcome.trainer.config)?)
        .map_err(Error::io(&path))
}

/// A loaded checkpoint ready for inference.
pub struct Inference {
    pub config: TrainConfig,
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
}

impl Inference {
    pub fn new(config: TrainConfig, model: Denoiser) -> Result<Self> {
        let schedule = make_schedule(&config.schedule)?;
        Ok(Self {
            config,
            model,
            schedule,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        Self::new(ckpt.config, ckpt.model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    pub fn sample(&self, req: &SampleRequest) -> Result<SampleOutput> {
        let tokens = parse_caption(&req.caption, self.model.config().n_max)?;
        Ok(sample(
            &self.model,
            &self.schedule,
            &tokens,
            &req.images,
            &req.config,
        )?)
    }
}

#[derive(Debug, Clone)]
pub struct SampleRequest {
    pub caption: String,
    /// `images[i]` conditions `config.mask_frames[i]`.
    pub images: Vec<Tensor>,
    pub config: SampleConfig,
}

/// Per-frame images plus the raw `video.f32`/`video.json` blob.
pub fn write_sample(dir: &Path, video: &Tensor) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    write_frames(dir, video)?;
    write_tensor(dir, "video", video)
}

/// Which block's attention to analyze.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSelect {
    Index(usize),
    /// Elementwise mean over all blocks.
    Mean,
}

/// Averages captured traces over sampling steps, then selects or averages
/// blocks.
pub fn summarize_traces(
    captured: &[Vec<AttentionTrace>],
    block: BlockSelect,
) -> Result<AttentionTrace> {
    let n_blocks = captured.first().map_or(0, Vec::len);
    let per_block = |b: usize| -> Result<AttentionTrace> {
        let steps: Vec<AttentionTrace> = captured
            .iter()
            .map(|traces| traces.get(b).cloned())
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Usage(format!("block {b} missing from captured traces")))?;
        Ok(average_traces(&steps)?)
    };
    match block {
        BlockSelect::Index(b) if b >= n_blocks => {
            Err(Error::Usage(format!("block {b} outside 0..{n_blocks}")))
        }
        BlockSelect::Index(b) => per_block(b),
        BlockSelect::Mean => {
            let blocks = (0..n_blocks).map(per_block).collect::<Result<Vec<_>>>()?;
            Ok(average_traces(&blocks)?)
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttnDump {
    /// Block index, or `mean` when averaged over blocks.
    pub label: String,
    pub trace: AttentionTrace,
    pub verb_index: usize,
    pub heatmaps: Vec<Vec<u8>>,
    pub drift: DriftReport,
    pub video: Tensor,
}

/// Samples with capture enabled and extracts the verb token's attention.
pub fn attn_dump(inf: &Inference, req: &SampleRequest, block: BlockSelect) -> Result<AttnDump> {
    let cfg = inf.model.config();
    let tokens = parse_caption(&req.caption, cfg.n_max)?;
    let verb_index = Vocabulary::default()
        .verb_index(&tokens)
        .ok_or_else(|| Error::Usage(format!("caption {:?} has no verb token", req.caption)))?;
    let out = inf.sample(req)?;
    if out.traces.is_empty() {
        return Err(Error::Usage("no sampling steps were captured".into()));
    }
    let trace = summarize_traces(&out.traces, block)?;
    let heatmaps = token_heatmaps(&trace, verb_index)?;
    let drift = centroid_drift(&trace, verb_index, cfg.height, cfg.width)?;
    let label = match block {
        BlockSelect::Index(b) => b.to_string(),
        BlockSelect::Mean => "mean".into(),
    };
    Ok(AttnDump {
        label,
        trace,
        verb_index,
        heatmaps,
        drift,
        video: out.video,
    })
}

/// `probs.csv`, `a.csv`, `a_ref.csv` (trace format), `verb_XX.pgm` per frame
/// and `drift.csv`.
pub fn write_attn_dump(dir: &Path, dump: &AttnDump, height: usize, width: usize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    write_trace_file(&dir.join("probs.csv"), &dump.trace.attn_probs)?;
    write_trace_file(&dir.join("a.csv"), &dump.trace.a)?;
    write_trace_file(&dir.join("a_ref.csv"), &dump.trace.a_ref)?;
    for (fr, map) in dump.heatmaps.iter().enumerate() {
        write_pgm(&dir.join(format!("verb_{fr:02}.pgm")), map, width, height)?;
    }
    let path = dir.join("drift.csv");
    let file = std::fs::File::create(&path).map_err(Error::io(&path))?;
    write_drift(file, &[(dump.label.clone(), dump.drift.clone())])
}

/// One ablation prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prompt {
    pub color: Color,
    pub shape: ShapeKind,
    pub verb: Verb,
}

impl Prompt {
    pub fn caption(&self) -> String {
        let vocab = Vocabulary::default();
        vocab.render(&vocab.caption(self.color, self.shape, self.verb))
    }

    pub fn parse(caption: &str) -> Result<Self> {
        let vocab = Vocabulary::default();
        let tokens = vocab.tokenize(caption)?;
        prompts_for(&Verb::ALL)
            .into_iter()
            .find(|p| vocab.caption(p.color, p.shape, p.verb)[..] == tokens[..])
            .ok_or_else(|| {
                Error::Usage(format!(
                    "{caption:?} is not a `<color> <shape> <verb>` prompt"
                ))
            })
    }

    /// The conditioning first frame used for this prompt and seed.
    pub fn conditioning(&self, seed: u64, data: &DataConfig) -> Result<Tensor> {
        let sample_seed = CounterRng::new(seed)
            .fork(hash_str(&self.caption()))
            .next_u64();
        let s = generate_sample_with(sample_seed, data, self.color, self.shape, self.verb)?;
        Ok(first_frame(&s.pixels))
    }
}

pub fn first_frame(video: &Tensor) -> Tensor {
    let s = video.shape();
    let n = s[1] * s[2] * s[3];
    Tensor::new(s[1..].to_vec(), video.data()[..n].to_vec()).expect("frame shape")
}

/// All colors × shapes for the moving verbs, in verb-major order.
pub fn moving_prompts() -> Vec<Prompt> {
    prompts_for(&Verb::MOVING)
}

pub fn still_prompts() -> Vec<Prompt> {
    prompts_for(&[Verb::Still])
}

fn prompts_for(verbs: &[Verb]) -> Vec<Prompt> {
    let mut out = Vec::new();
    for &verb in verbs {
        for color in Color::ALL {
            for shape in ShapeKind::ALL {
                out.push(Prompt { color, shape, verb });
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub prompts: Vec<Prompt>,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub cfg_scale: f64,
    pub capture_last: usize,
    pub block: BlockSelect,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let mut prompts = moving_prompts();
        prompts.extend(still_prompts());
        Self {
            prompts,
            seeds: vec![0, 1, 2],
            steps: 50,
            cfg_scale: 7.5,
            capture_last: 10,
            block: BlockSelect::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub prompt: String,
    pub verb: String,
    pub seed: u64,
    pub motion_a: f64,
    pub motion_b: f64,
    pub drift_a: f64,
    pub drift_b: f64,
    pub delta_motion: f64,
    pub delta_drift: f64,
}

/// Rejects pairs whose training configs differ in anything but the guidance.
pub fn check_pair(a: &TrainConfig, b: &TrainConfig) -> Result<()> {
    let mut b_swapped = *b;
    b_swapped.model.guidance = a.model.guidance;
    if *a != b_swapped {
        return Err(Error::Usage(format!(
            "checkpoints differ beyond the guidance swap: {} vs {}",
            serde_json::to_string(a)?,
            serde_json::to_string(b)?
        )));
    }
    Ok(())
}

/// Motion energy and verb-attention drift for one prompt/seed.
pub fn measure(
    inf: &Inference,
    prompt: &Prompt,
    seed: u64,
    cfg: &AblationConfig,
) -> Result<(f64, f64)> {
    let data = inf.config.data_config();
    let req = SampleRequest {
        caption: prompt.caption(),
        images: vec![prompt.conditioning(seed, &data)?],
        config: SampleConfig {
            steps: cfg.steps,
            cfg_scale: cfg.cfg_scale,
            seed,
            mask_frames: vec![0],
            capture_last: cfg.capture_last,
        },
    };
    let dump = attn_dump(inf, &req, cfg.block)?;
    Ok((motion_energy(&dump.video)?, dump.drift.total_drift))
}

/// Runs both models on every prompt × seed, `progress` seeing each row.
pub fn ablate(
    a: &Inference,
    b: &Inference,
    cfg: &AblationConfig,
    mut progress: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    check_pair(&a.config, &b.config)?;
    let mut rows = Vec::with_capacity(cfg.prompts.len() * cfg.seeds.len());
    for prompt in &cfg.prompts {
        for &seed in &cfg.seeds {
            let (motion_a, drift_a) = measure(a, prompt, seed, cfg)?;
            let (motion_b, drift_b) = measure(b, prompt, seed, cfg)?;
            let row = AblationRow {
                prompt: prompt.caption(),
                verb: Vocabulary::default()
                    .word(Vocabulary::default().verb_id(prompt.verb))
                    .unwrap_or("?")
                    .into(),
                seed,
                motion_a,
                motion_b,
                drift_a,
                drift_b,
                delta_motion: motion_a - motion_b,
                delta_drift: drift_a - drift_b,
            };
            progress(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationSummary {
    pub subset: String,
    pub rows: usize,
    pub mean_motion_a: f64,
    pub mean_motion_b: f64,
    pub mean_drift_a: f64,
    pub mean_drift_b: f64,
    /// Fraction of rows where A's value is strictly higher.
    pub motion_win_rate_a: f64,
    pub drift_win_rate_a: f64,
}

/// Aggregates over `all`, `moving` and `still` rows (empty subsets skipped).
pub fn summarize(rows: &[AblationRow]) -> Vec<AblationSummary> {
    let still = Vocabulary::default()
        .word(Vocabulary::default().verb_id(Verb::Still))
        .unwrap_or("still");
    let subsets: [(&str, Box<dyn Fn(&AblationRow) -> bool>); 3] = [
        ("all", Box::new(|_| true)),
        ("moving", Box::new(move |r| r.verb != still)),
        ("still", Box::new(move |r| r.verb == still)),
    ];
    subsets
        .iter()
        .filter_map(|(name, keep)| {
            let rs: Vec<&AblationRow> = rows.iter().filter(|r| keep(r)).collect();
            let n = rs.len() as f64;
            let mean = |f: fn(&AblationRow) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            let wins = |f: fn(&AblationRow) -> bool| rs.iter().filter(|r| f(r)).count() as f64 / n;
            (!rs.is_empty()).then(|| AblationSummary {
                subset: (*name).into(),
                rows: rs.len(),
                mean_motion_a: mean(|r| r.motion_a),
                mean_motion_b: mean(|r| r.motion_b),
                mean_drift_a: mean(|r| r.drift_a),
                mean_drift_b: mean(|r| r.drift_b),
                motion_win_rate_a: wins(|r| r.motion_a > r.motion_b),
                drift_win_rate_a: wins(|r| r.drift_a > r.drift_b),
            })
        })
        .collect()
}

/// `ablate.csv` (one row per prompt × seed) and `summary.csv`.
pub fn write_ablation(dir: &Path, rows: &[AblationRow]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut w = csv::Writer::from_path(dir.join("ablate.csv"))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(Error::io(dir.join("ablate.csv")))?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    for s in summarize(rows) {
        w.serialize(s)?;
    }
    w.flush().map_err(Error::io(dir.join("summary.csv")))
}

#[derive(Debug, Serialize)]
struct CorpusEntry {
    seed: u64,
    caption_tokens: Vec<usize>,
    trajectory: Vec<(f64, f64)>,
}

/// `sample_XXXXX.f32` per sample plus `index.jsonl`.
pub fn dump_corpus(
    dir: &Path,
    data: &DataConfig,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<()> {
    use std::io::Write;
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let index_path = dir.join("index.jsonl");
    let mut index = std::fs::File::create(&index_path).map_err(Error::io(&index_path))?;
    for seed in seeds {
        let s = generate_sample(seed, data)?;
        let mut bytes = Vec::new();
        encode_f32(s.pixels.data(), &mut bytes)?;
        let path = dir.join(format!("sample_{seed:05}.f32"));
        std::fs::write(&path, bytes).map_err(Error::io(&path))?;
        let entry = CorpusEntry {
            seed,
            caption_tokens: s.caption,
            trajectory: s.trajectory,
        };
        writeln!(index, "{}", serde_json::to_string(&entry)?).map_err(Error::io(&index_path))?;
    }
    Ok(())
}
