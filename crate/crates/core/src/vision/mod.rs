//! Frame preprocessing: crop the playfield out of an 840×480 capture,
//! bilinearly resize it to 84×84 and normalize to zero mean / unit norm.

mod frame;
pub mod ppm;

pub use frame::{Frame, Rgb};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::Tensor;

pub const RAW_WIDTH: usize = 840;
pub const RAW_HEIGHT: usize = 480;
pub const CROP_WIDTH: usize = 770;
pub const CROP_HEIGHT: usize = 310;
pub const STATE_SIZE: usize = 84;
pub const STATE_CHANNELS: usize = 3;
pub const STATE_SHAPE: [usize; 3] = [STATE_SIZE, STATE_SIZE, STATE_CHANNELS];

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("frame must be {expected_w}x{expected_h}, got {width}x{height}")]
    WrongSize {
        expected_w: usize,
        expected_h: usize,
        width: usize,
        height: usize,
    },
    #[error("invalid frame size {width}x{height}")]
    InvalidSize { width: usize, height: usize },
    #[error("pixel buffer holds {got} bytes, expected {expected}")]
    PixelCount { expected: usize, got: usize },
    #[error("crop window at ({x}, {y}) does not fit an {RAW_WIDTH}x{RAW_HEIGHT} frame")]
    CropOutOfBounds { x: usize, y: usize },
    #[error("ppm: {0}")]
    Ppm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    /// One mean over every value; whole-tensor L2 norm.
    #[default]
    Global,
    /// Per-channel means; whole-tensor L2 norm.
    PerChannel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Top-left corner of the playfield inside the raw capture.
    pub crop_x: usize,
    pub crop_y: usize,
    pub norm: NormMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            crop_x: 35,
            crop_y: 85,
            norm: NormMode::Global,
        }
    }
}

/// Network input plus a flag for frames with no variation at all.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub tensor: Tensor<f32>,
    pub degenerate: bool,
}

pub fn crop(frame: &Frame, config: &PipelineConfig) -> Result<Frame, VisionError> {
    if frame.width() != RAW_WIDTH || frame.height() != RAW_HEIGHT {
        return Err(VisionError::WrongSize {
            expected_w: RAW_WIDTH,
            expected_h: RAW_HEIGHT,
            width: frame.width(),
            height: frame.height(),
        });
    }
    if config.crop_x + CROP_WIDTH > RAW_WIDTH || config.crop_y + CROP_HEIGHT > RAW_HEIGHT {
        return Err(VisionError::CropOutOfBounds {
            x: config.crop_x,
            y: config.crop_y,
        });
    }
    Ok(frame.sub_image(config.crop_x, config.crop_y, CROP_WIDTH, CROP_HEIGHT))
}

/// Bilinear resize with pixel-center alignment: output pixel `i` samples the
/// source at `(i + 0.5) * src / dst - 0.5`, clamped to the edge. Results are
/// rounded to the nearest integer.
pub fn resize(frame: &Frame, width: usize, height: usize) -> Frame {
    if frame.width() == width && frame.height() == height {
        return frame.clone();
    }
    let xs = sample_positions(frame.width(), width);
    let ys = sample_positions(frame.height(), height);
    let mut out = Frame::filled(width, height, [0, 0, 0]);
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let p00 = frame.get(x0, y0);
            let p10 = frame.get(x1, y0);
            let p01 = frame.get(x0, y1);
            let p11 = frame.get(x1, y1);
            let mut c = [0u8; 3];
            for k in 0..3 {
                let top = p00[k] as f64 * (1.0 - fx) + p10[k] as f64 * fx;
                let bottom = p01[k] as f64 * (1.0 - fx) + p11[k] as f64 * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                c[k] = v.round().clamp(0.0, 255.0) as u8;
            }
            out.set(ox, oy, c);
        }
    }
    out
}

/// `(lower index, upper index, weight of upper)` for every output coordinate.
fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Zero-mean / unit-L2-norm normalization of interleaved channel values.
/// Returns the all-zero vector and `true` when nothing varies.
pub fn normalize_values(values: &[f64], channels: usize, mode: NormMode) -> (Vec<f64>, bool) {
    let mut out = values.to_vec();
    match mode {
        NormMode::Global => {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            out.iter_mut().for_each(|v| *v -= mean);
        }
        NormMode::PerChannel => {
            let per = values.len() / channels;
            for c in 0..channels {
                let mean = values.iter().skip(c).step_by(channels).sum::<f64>() / per as f64;
                out.iter_mut().skip(c).step_by(channels).for_each(|v| *v -= mean);
            }
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    // Centering a constant input leaves only rounding noise.
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if norm <= 1e-12 * scale * (values.len() as f64).sqrt() {
        return (vec![0.0; values.len()], true);
    }
    out.iter_mut().for_each(|v| *v /= norm);
    (out, false)
}

pub fn normalize(frame: &Frame, mode: NormMode) -> Normalized {
    let values: Vec<f64> = frame.pixels().iter().map(|&b| b as f64).collect();
    let (out, degenerate) = normalize_values(&values, 3, mode);
    let tensor = Tensor::from_vec(
        &[frame.height(), frame.width(), 3],
        out.into_iter().map(|v| v as f32).collect(),
    )
    .expect("frame dimensions are positive");
    Normalized { tensor, degenerate }
}

/// Crop and resize; this is the integer form stored in datasets.
pub fn downsample(frame: &Frame, config: &PipelineConfig) -> Result<Frame, VisionError> {
    Ok(resize(&crop(frame, config)?, STATE_SIZE, STATE_SIZE))
}

/// `normalize(resize(crop(frame)))`.
pub fn preprocess(frame: &Frame, config: &PipelineConfig) -> Result<Normalized, VisionError> {
    Ok(normalize(&downsample(frame, config)?, config.norm))
}
