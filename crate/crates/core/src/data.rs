//! Procedural moving-shape videos and the toy caption vocabulary.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const BACKGROUND: f64 = -1.0;
pub const FOREGROUND: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Color {
    Red,
    Green,
    Blue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Square,
    Circle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verb {
    MovingLeft,
    MovingRight,
    MovingUp,
    MovingDown,
    Still,
}

impl Color {
    pub const ALL: [Color; 3] = [Color::Red, Color::Green, Color::Blue];

    pub fn channel(self) -> usize {
        self as usize
    }
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 2] = [ShapeKind::Square, ShapeKind::Circle];
}

impl Verb {
    pub const ALL: [Verb; 5] = [
        Verb::MovingLeft,
        Verb::MovingRight,
        Verb::MovingUp,
        Verb::MovingDown,
        Verb::Still,
    ];
    pub const MOVING: [Verb; 4] = [
        Verb::MovingLeft,
        Verb::MovingRight,
        Verb::MovingUp,
        Verb::MovingDown,
    ];

    /// Per-frame displacement `(dx, dy)` in pixels; `y` grows downwards.
    pub fn velocity(self) -> (i64, i64) {
        match self {
            Verb::MovingLeft => (-1, 0),
            Verb::MovingRight => (1, 0),
            Verb::MovingUp => (0, -1),
            Verb::MovingDown => (0, 1),
            Verb::Still => (0, 0),
        }
    }
}

/// Dense token ids: `pad`, colors, shapes, verbs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<&'static str>,
}

pub const PAD: usize = 0;

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            words: vec![
                "<pad>",
                "red",
                "green",
                "blue",
                "square",
                "circle",
                "moving_left",
                "moving_right",
                "moving_up",
                "moving_down",
                "still",
            ],
        }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: usize) -> Option<&'static str> {
        self.words.get(id).copied()
    }

    pub fn id(&self, word: &str) -> Result<usize> {
        self.words
            .iter()
            .position(|w| *w == word)
            .ok_or_else(|| Error::UnknownToken(String::from(word)))
    }

    pub fn color_id(&self, c: Color) -> usize {
        1 + c as usize
    }

    pub fn shape_id(&self, s: ShapeKind) -> usize {
        4 + s as usize
    }

    pub fn verb_id(&self, v: Verb) -> usize {
        6 + v as usize
    }

    pub fn is_verb(&self, id: usize) -> bool {
        (6..11).contains(&id)
    }

    /// Whitespace-separated words to ids (no padding).
    pub fn tokenize(&self, caption: &str) -> Result<Vec<usize>> {
        caption.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn pad(&self, tokens: &[usize], n_max: usize) -> Result<Vec<usize>> {
        if tokens.len() > n_max {
            return Err(Error::TokenLength {
                got: tokens.len(),
                expected: n_max,
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.len()) {
            return Err(Error::UnknownToken(format!("id {bad}")));
        }
        let mut out = tokens.to_vec();
        out.resize(n_max, PAD);
        Ok(out)
    }

    pub fn null_caption(&self, n_max: usize) -> Vec<usize> {
        vec![PAD; n_max]
    }

    pub fn caption(&self, color: Color, shape: ShapeKind, verb: Verb) -> [usize; 3] {
        [
            self.color_id(color),
            self.shape_id(shape),
            self.verb_id(verb),
        ]
    }

    /// Index of the single verb token, if any.
    pub fn verb_index(&self, tokens: &[usize]) -> Option<usize> {
        tokens.iter().position(|&t| self.is_verb(t))
    }

    pub fn render(&self, tokens: &[usize]) -> String {
        let mut s = String::new();
        for &t in tokens.iter().filter(|&&t| t != PAD) {
            if !s.is_empty() {
                s.push(' ');
            }
            s.push_str(self.word(t).unwrap_or("?"));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Side of the shape's bounding box in pixels.
    pub shape_size: usize,
    pub n_max: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 16,
            width: 16,
            channels: 3,
            shape_size: 4,
            n_max: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub seed: u64,
    /// `[f, h, w, c]`, background `-1`.
    pub pixels: Tensor,
    /// Padded to `n_max`.
    pub caption: Vec<usize>,
    pub color: Color,
    pub shape: ShapeKind,
    pub verb: Verb,
    /// Per-frame shape centroid `(x, y)` in pixel-index coordinates.
    pub trajectory: Vec<(f64, f64)>,
}

const MAX_RETRIES: usize = 64;

fn shape_mask(kind: ShapeKind, size: usize) -> Vec<bool> {
    let r = size as f64 / 2.0;
    let mut m = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            m[y * size + x] = match kind {
                ShapeKind::Square => true,
                ShapeKind::Circle => {
                    let dx = x as f64 + 0.5 - r;
                    let dy = y as f64 + 0.5 - r;
                    dx * dx + dy * dy <= r * r
                }
            };
        }
    }
    m
}

/// Random color, shape and verb drawn from `seed`.
pub fn generate_sample(seed: u64, cfg: &DataConfig) -> Result<VideoSample> {
    let mut rng = CounterRng::new(seed);
    let verb = Verb::ALL[rng.below(Verb::ALL.len() as u64) as usize];
    let color = Color::ALL[rng.below(Color::ALL.len() as u64) as usize];
    let shape = ShapeKind::ALL[rng.below(ShapeKind::ALL.len() as u64) as usize];
    render_sample(seed, cfg, color, shape, verb, &mut rng)
}

/// A sample with fixed attributes; only the start position comes from `seed`.
pub fn generate_sample_with(
    seed: u64,
    cfg: &DataConfig,
    color: Color,
    shape: ShapeKind,
    verb: Verb,
) -> Result<VideoSample> {
    let mut rng = CounterRng::new(seed).fork(0x5eed);
    render_sample(seed, cfg, color, shape, verb, &mut rng)
}

fn render_sample(
    seed: u64,
    cfg: &DataConfig,
    color: Color,
    shape: ShapeKind,
    verb: Verb,
    rng: &mut CounterRng,
) -> Result<VideoSample> {
    let DataConfig {
        frames,
        height,
        width,
        channels,
        shape_size: s,
        n_max,
    } = *cfg;
    if frames == 0 || s == 0 || s > height || s > width || channels <= color.channel() {
        return Err(Error::Config(format!(
            "data config cannot hold a shape: {cfg:?}"
        )));
    }
    let (dx, dy) = verb.velocity();
    let span = frames as i64 - 1;
    let (max_x, max_y) = ((width - s) as i64, (height - s) as i64);
    let mut start = None;
    for _ in 0..MAX_RETRIES {
        let x0 = rng.below(max_x as u64 + 1) as i64;
        let y0 = rng.below(max_y as u64 + 1) as i64;
        let (x1, y1) = (x0 + dx * span, y0 + dy * span);
        if (0..=max_x).contains(&x1) && (0..=max_y).contains(&y1) {
            start = Some((x0, y0));
            break;
        }
    }
    let (x0, y0) = start.ok_or_else(|| {
        Error::Trajectory(format!(
            "{verb:?} over {frames} frames with shape size {s} in {width}x{height}"
        ))
    })?;

    let mask = shape_mask(shape, s);
    let mut pixels = Tensor::full(&[frames, height, width, channels], BACKGROUND);
    let mut trajectory = Vec::with_capacity(frames);
    let ch = color.channel();
    let centre = (s as f64 - 1.0) / 2.0;
    for fr in 0..frames {
        let ox = (x0 + dx * fr as i64) as usize;
        let oy = (y0 + dy * fr as i64) as usize;
        let data = pixels.data_mut();
        for yy in 0..s {
            for xx in 0..s {
                if mask[yy * s + xx] {
                    let at = ((fr * height + oy + yy) * width + ox + xx) * channels + ch;
                    data[at] = FOREGROUND;
                }
            }
        }
        trajectory.push((ox as f64 + centre, oy as f64 + centre));
    }
    let vocab = Vocabulary::default();
    let caption = vocab.pad(&vocab.caption(color, shape, verb), n_max)?;
    Ok(VideoSample {
        seed,
        pixels,
        caption,
        color,
        shape,
        verb,
        trajectory,
    })
}

/// `T_rep`: embedding lookup of the padded caption, repeated over `frames`.
pub fn encode_caption(tape: &mut Tape, table: Var, tokens: &[usize], frames: usize) -> Result<Var> {
    let rows = tape.gather_rows(table, tokens)?;
    tape.repeat(rows, frames)
}
