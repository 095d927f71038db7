//! Verb-attention drift, motion energy and heatmap quantization.

use alloc::format;
use alloc::vec::Vec;

use crate::ctgm::AttentionTrace;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-frame statistics of one block's attention to a single token.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub block_id: usize,
    /// Attention-weighted centroid `(x, y)` per frame, in pixel units.
    pub centroids: Vec<(f64, f64)>,
    /// Sum of distances between consecutive centroids.
    pub total_drift: f64,
    /// Shannon entropy (nats) of each frame's normalized attention map.
    pub entropy: Vec<f64>,
}

/// `attn_probs[:, :, token]` as `f` rows of `hw` values.
pub fn token_column(trace: &AttentionTrace, token: usize) -> Result<Vec<Vec<f64>>> {
    let s = trace.attn_probs.shape();
    if s.len() != 3 {
        return Err(Error::Analysis(format!(
            "attention map has shape {s:?}, expected [f, hw, n]"
        )));
    }
    let (f, hw, n) = (s[0], s[1], s[2]);
    if token >= n {
        return Err(Error::Analysis(format!(
            "token index {token} outside 0..{n}"
        )));
    }
    let d = trace.attn_probs.data();
    Ok((0..f)
        .map(|fr| (0..hw).map(|p| d[(fr * hw + p) * n + token]).collect())
        .collect())
}

/// Centroid trajectory and drift of the attention paid to `token`.
pub fn centroid_drift(
    trace: &AttentionTrace,
    token: usize,
    height: usize,
    width: usize,
) -> Result<DriftReport> {
    let column = token_column(trace, token)?;
    if column.first().map_or(0, Vec::len) != height * width {
        return Err(Error::Analysis(format!(
            "attention map covers {} pixels, expected {height}x{width}",
            column.first().map_or(0, Vec::len)
        )));
    }
    let mut centroids = Vec::with_capacity(column.len());
    let mut entropy = Vec::with_capacity(column.len());
    for (fr, map) in column.iter().enumerate() {
        let mass: f64 = map.iter().sum();
        if !(mass > 0.0) || map.iter().any(|&v| v < 0.0) {
            return Err(Error::Analysis(format!(
                "frame {fr}: attention column has no positive mass"
            )));
        }
        let (mut cx, mut cy, mut h) = (0.0, 0.0, 0.0);
        for (p, &v) in map.iter().enumerate() {
            cx += v * (p % width) as f64;
            cy += v * (p / width) as f64;
            let q = v / mass;
            if q > 0.0 {
                h -= q * libm::log(q);
            }
        }
        centroids.push((cx / mass, cy / mass));
        entropy.push(h);
    }
    let total_drift = centroids
        .windows(2)
        .map(|w| libm::hypot(w[1].0 - w[0].0, w[1].1 - w[0].1))
        .sum();
    Ok(DriftReport {
        block_id: trace.block_id,
        centroids,
        total_drift,
        entropy,
    })
}

/// Mean absolute difference between consecutive frames of `[f, h, w, c]`.
pub fn motion_energy(video: &Tensor) -> Result<f64> {
    let s = video.shape();
    if s.len() != 4 {
        return Err(Error::Analysis(format!(
            "video has shape {s:?}, expected [f, h, w, c]"
        )));
    }
    if s[0] < 2 {
        return Err(Error::Analysis(format!(
            "motion energy needs >= 2 frames, got {}",
            s[0]
        )));
    }
    let frame = s[1] * s[2] * s[3];
    let d = video.data();
    let total: f64 = d[frame..]
        .iter()
        .zip(&d[..d.len() - frame])
        .map(|(b, a)| (b - a).abs())
        .sum();
    Ok(total / (d.len() - frame) as f64)
}

/// Elementwise mean of traces with identical shapes (e.g. over sampling
/// timesteps or over blocks). The result keeps the first trace's `block_id`.
pub fn average_traces(traces: &[AttentionTrace]) -> Result<AttentionTrace> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Analysis("no traces to average".into()))?;
    let mean = |get: fn(&AttentionTrace) -> &Tensor| -> Result<Tensor> {
        let shape = get(first).shape();
        let mut acc = alloc::vec![0.0; get(first).len()];
        for t in traces {
            if get(t).shape() != shape {
                return Err(Error::Shape {
                    op: "average_traces",
                    lhs: shape.to_vec(),
                    rhs: get(t).shape().to_vec(),
                });
            }
            acc.iter_mut().zip(get(t).data()).for_each(|(a, v)| *a += v);
        }
        let n = traces.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Tensor::new(shape.to_vec(), acc)
    };
    Ok(AttentionTrace {
        block_id: first.block_id,
        a: mean(|t| &t.a)?,
        a_ref: mean(|t| &t.a_ref)?,
        attn_probs: mean(|t| &t.attn_probs)?,
    })
}

/// Min-max quantization to `0..=255`. The map is monotone, so pixel ordering
/// is preserved up to ties; a constant input maps to all zeros.
pub fn quantize_heatmap(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    values
        .iter()
        .map(|&v| {
            if range > 0.0 {
                libm::round((v - lo) / range * 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

/// One quantized `h × w` heatmap per frame for the attention paid to `token`.
pub fn token_heatmaps(trace: &AttentionTrace, token: usize) -> Result<Vec<Vec<u8>>> {
    Ok(token_column(trace, token)?
        .iter()
        .map(|m| quantize_heatmap(m))
        .collect())
}
