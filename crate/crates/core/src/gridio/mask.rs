use std::io::Cursor;

use super::GridError;

/// Label value that marks a pixel as unannotated.
pub const IGNORE: u8 = 255;

/// Row-major `H×W` grid of leaf-channel indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, GridError> {
        if data.len() != height * width {
            return Err(GridError::Length {
                expected: height * width,
                found: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.data[row * self.width + col] = value;
    }

    /// Fails on the first non-ignore value that is not a valid channel.
    pub fn check_classes(&self, classes: usize) -> Result<(), GridError> {
        match self
            .data
            .iter()
            .position(|&v| v != IGNORE && v as usize >= classes)
        {
            None => Ok(()),
            Some(i) => Err(GridError::LabelOutOfRange {
                row: i / self.width,
                col: i % self.width,
                value: self.data[i],
                classes,
            }),
        }
    }
}

pub fn load_label_mask(bytes: &[u8]) -> Result<LabelMask, GridError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| GridError::Decode(e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale {
        return Err(GridError::MultiChannel(format!("{color:?}")));
    }
    if depth != png::BitDepth::Eight {
        return Err(GridError::BitDepth(depth as u8));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| GridError::Decode("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| GridError::Decode(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    buf.truncate(w * h);
    LabelMask::new(h, w, buf)
}

pub fn store_label_mask(mask: &LabelMask) -> Result<Vec<u8>, GridError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, mask.width as u32, mask.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| GridError::Encode(e.to_string()))?;
        writer
            .write_image_data(&mask.data)
            .map_err(|e| GridError::Encode(e.to_string()))?;
    }
    Ok(out)
}
