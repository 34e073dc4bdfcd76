//! Grids and their on-disk formats: per-pixel probability maps (`.npy`,
//! `<f4`, shape `(H, W, C)`), 8-bit label masks (grayscale PNG, 255 =
//! ignore), scale normalisation by ground sample distance, and tiling.

mod mask;
pub mod npy;
mod resample;
mod tiles;

pub use mask::{load_label_mask, store_label_mask, LabelMask, IGNORE};
pub use npy::NpyError;
pub use resample::{rescale_label_mask, rescale_prob_map, scaled_dim, GsdSpec, DEFAULT_TARGET_GSD};
pub use tiles::{cut_tiles, plan_tiles, stitch_maps, Tile, TilePlan};

/// Tolerance on the per-pixel channel sum of a softmax output.
pub const SUM_TOLERANCE: f32 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error(transparent)]
    Npy(#[from] NpyError),
    #[error("grid data has {found} values, expected {expected}")]
    Length { expected: usize, found: usize },
    #[error("pixel ({row}, {col}) is not a probability distribution: {reason}")]
    NotADistribution { row: usize, col: usize, reason: String },
    #[error("label masks must be single-channel, found {0}")]
    MultiChannel(String),
    #[error("label masks must be 8-bit, found {0}-bit")]
    BitDepth(u8),
    #[error("png decode failed: {0}")]
    Decode(String),
    #[error("png encode failed: {0}")]
    Encode(String),
    #[error("label {value} at ({row}, {col}) is out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        col: usize,
        value: u8,
        classes: usize,
    },
    #[error("ground sample distances must be positive, got source {source_gsd} target {target_gsd}")]
    InvalidGsd { source_gsd: f64, target_gsd: f64 },
    #[error("rescaling a dimension of {dim} by {ratio} yields zero pixels")]
    ZeroDimension { dim: usize, ratio: f64 },
    #[error("tile size {tile} does not fit a {height}x{width} image")]
    TileTooLarge { tile: usize, height: usize, width: usize },
    #[error("tile overlap {overlap} must be smaller than the tile size {tile}")]
    BadOverlap { tile: usize, overlap: usize },
    #[error("tile at ({row}, {col}) lies outside the {height}x{width} image")]
    TileOutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("tiles disagree on channel count ({expected} vs {found})")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("pixel ({row}, {col}) is not covered by any tile")]
    Uncovered { row: usize, col: usize },
    #[error("grid shape {found:?} does not match {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
}

/// Row-major `H×W×C` grid of per-pixel class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self, GridError> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(GridError::Length {
                expected,
                found: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.channels.max(1))
    }

    /// Copies out the `height×width` window whose top-left corner is `origin`.
    pub fn crop(&self, origin: (usize, usize), height: usize, width: usize) -> ProbMap {
        let (r0, c0) = origin;
        let mut data = Vec::with_capacity(height * width * self.channels);
        for r in r0..r0 + height {
            let start = (r * self.width + c0) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        ProbMap {
            height,
            width,
            channels: self.channels,
            data,
        }
    }

    /// Checks that every pixel is a distribution: values in `[0, 1]` and a
    /// channel sum within [`SUM_TOLERANCE`] of one.
    pub fn check_distribution(&self) -> Result<(), GridError> {
        for (i, px) in self.pixels().enumerate() {
            let (row, col) = (i / self.width, i % self.width);
            if let Some(v) = px.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(GridError::NotADistribution {
                    row,
                    col,
                    reason: format!("value {v} outside [0, 1]"),
                });
            }
            let sum: f64 = px.iter().map(|&v| v as f64).sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE as f64 {
                return Err(GridError::NotADistribution {
                    row,
                    col,
                    reason: format!("channel sum {sum}"),
                });
            }
        }
        Ok(())
    }
}

/// Decodes a probability map from `.npy` bytes.
pub fn load_prob_map(bytes: &[u8]) -> Result<ProbMap, GridError> {
    let (shape, data) = npy::decode_f32(bytes)?;
    match shape[..] {
        [h, w, c] => ProbMap::new(h, w, c, data),
        _ => Err(NpyError::Dimensionality {
            expected: 3,
            found: shape,
        }
        .into()),
    }
}

pub fn store_prob_map(map: &ProbMap) -> Vec<u8> {
    npy::encode_f32(&[map.height, map.width, map.channels], &map.data)
}

/// Encodes an `H×W` real grid, as used for per-rank confidence maps.
pub fn store_scalar_grid(height: usize, width: usize, data: &[f32]) -> Vec<u8> {
    npy::encode_f32(&[height, width], data)
}

pub fn load_scalar_grid(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>), GridError> {
    let (shape, data) = npy::decode_f32(bytes)?;
    match shape[..] {
        [h, w] => Ok((h, w, data)),
        _ => Err(NpyError::Dimensionality {
            expected: 2,
            found: shape,
        }
        .into()),
    }
}
