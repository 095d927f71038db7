//! PGM/PPM frames and heatmaps. Pixel values in `[-1, 1]` map linearly to
//! `0..=255`.

use std::io::Cursor;
use std::path::Path;

use fancyvideo_core::Tensor;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};

pub fn to_byte(v: f64) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn from_byte(b: u8) -> f64 {
    f64::from(b) / 127.5 - 1.0
}

/// Binary PGM (P5) or PPM (P6) bytes for `channels` = 1 or 3.
pub fn encode_pnm(pixels: &[u8], width: usize, height: usize, channels: usize) -> Result<Vec<u8>> {
    let (subtype, color) = match channels {
        1 => (
            PnmSubtype::Graymap(SampleEncoding::Binary),
            ExtendedColorType::L8,
        ),
        3 => (
            PnmSubtype::Pixmap(SampleEncoding::Binary),
            ExtendedColorType::Rgb8,
        ),
        c => {
            return Err(Error::Format(format!(
                "cannot write {c}-channel images as PGM/PPM"
            )))
        }
    };
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(pixels, width as u32, height as u32, color)?;
    Ok(out)
}

pub fn write_pgm(path: &Path, pixels: &[u8], width: usize, height: usize) -> Result<()> {
    std::fs::write(path, encode_pnm(pixels, width, height, 1)?).map_err(Error::io(path))
}

/// Decodes a PGM/PPM into `([h, w] bytes, width, height, channels)`.
pub fn decode_pnm(bytes: &[u8], channels: usize) -> Result<(Vec<u8>, usize, usize)> {
    let img = image::load(Cursor::new(bytes), ImageFormat::Pnm)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match channels {
        1 => img.to_luma8().into_raw(),
        3 => img.to_rgb8().into_raw(),
        c => {
            return Err(Error::Format(format!(
                "cannot read {c}-channel images from PGM/PPM"
            )))
        }
    };
    Ok((data, w, h))
}

/// Writes `frame_XX.ppm` (or `.pgm`) for every frame of `[f, h, w, c]`.
pub fn write_frames(dir: &Path, video: &Tensor) -> Result<()> {
    let s = video.shape();
    if s.len() != 4 {
        return Err(Error::Format(format!(
            "video has shape {s:?}, expected [f, h, w, c]"
        )));
    }
    let (f, h, w, c) = (s[0], s[1], s[2], s[3]);
    let ext = if c == 1 { "pgm" } else { "ppm" };
    for (fr, frame) in video.data().chunks_exact(h * w * c).enumerate().take(f) {
        let bytes: Vec<u8> = frame.iter().map(|&v| to_byte(v)).collect();
        let path = dir.join(format!("frame_{fr:02}.{ext}"));
        std::fs::write(&path, encode_pnm(&bytes, w, h, c)?).map_err(Error::io(&path))?;
    }
    Ok(())
}

/// Loads a conditioning image as `[height, width, channels]` in `[-1, 1]`.
pub fn read_image(path: &Path, height: usize, width: usize, channels: usize) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    let (data, w, h) = decode_pnm(&bytes, channels)?;
    if (h, w) != (height, width) {
        return Err(Error::Format(format!(
            "{}: image is {w}x{h}, model expects {width}x{height}",
            path.display()
        )));
    }
    Ok(Tensor::new(
        vec![height, width, channels],
        data.into_iter().map(from_byte).collect(),
    )?)
}

/// Writes `[h, w, c]` in `[-1, 1]` as PGM/PPM.
pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::Format(format!(
            "image has shape {s:?}, expected [h, w, c]"
        )));
    }
    let bytes: Vec<u8> = image.data().iter().map(|&v| to_byte(v)).collect();
    std::fs::write(path, encode_pnm(&bytes, s[1], s[0], s[2])?).map_err(Error::io(path))
}
