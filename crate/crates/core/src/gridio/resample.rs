use serde::{Deserialize, Serialize};

use super::{GridError, LabelMask, ProbMap};

/// Ground sample distance of the 35 mm full-frame drone configuration,
/// mm/pixel. Default normalisation target.
pub const DEFAULT_TARGET_GSD: f64 = 0.7543;

/// Source and target ground sample distances in mm/pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsdSpec {
    pub source_gsd: f64,
    pub target_gsd: f64,
}

impl GsdSpec {
    pub fn new(source_gsd: f64, target_gsd: f64) -> Result<Self, GridError> {
        let spec = Self {
            source_gsd,
            target_gsd,
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), GridError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.source_gsd) && ok(self.target_gsd) {
            Ok(())
        } else {
            Err(GridError::InvalidGsd {
                source_gsd: self.source_gsd,
                target_gsd: self.target_gsd,
            })
        }
    }

    /// Output pixels per input pixel.
    pub fn ratio(&self) -> f64 {
        self.source_gsd / self.target_gsd
    }

    pub fn is_identity(&self) -> bool {
        self.source_gsd == self.target_gsd
    }
}

/// `round(dim × source / target)`, rejecting a zero result.
pub fn scaled_dim(dim: usize, spec: &GsdSpec) -> Result<usize, GridError> {
    spec.check()?;
    let out = (dim as f64 * spec.ratio()).round() as usize;
    if out == 0 {
        return Err(GridError::ZeroDimension {
            dim,
            ratio: spec.ratio(),
        });
    }
    Ok(out)
}

// Half-pixel-centre mapping of output coordinate `x` into the input axis.
fn source_coord(x: usize, input: usize, output: usize) -> f64 {
    ((x as f64 + 0.5) * input as f64 / output as f64 - 0.5).clamp(0.0, (input - 1) as f64)
}

/// Bilinear resampling; every output pixel is a convex combination of at
/// most four input pixels, so channel sums and constant fields survive.
pub fn rescale_prob_map(map: &ProbMap, spec: &GsdSpec) -> Result<ProbMap, GridError> {
    let (h, w) = map.dims();
    let out_h = scaled_dim(h, spec)?;
    let out_w = scaled_dim(w, spec)?;
    if (out_h, out_w) == (h, w) {
        return Ok(map.clone());
    }
    let ch = map.channels();
    let cols: Vec<(usize, usize, f64)> = (0..out_w)
        .map(|x| {
            let s = source_coord(x, w, out_w);
            let x0 = s.floor() as usize;
            (x0, (x0 + 1).min(w - 1), s - x0 as f64)
        })
        .collect();
    let mut data = Vec::with_capacity(out_h * out_w * ch);
    for y in 0..out_h {
        let s = source_coord(y, h, out_h);
        let y0 = s.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = s - y0 as f64;
        for &(x0, x1, fx) in &cols {
            let (p00, p01) = (map.pixel(y0, x0), map.pixel(y0, x1));
            let (p10, p11) = (map.pixel(y1, x0), map.pixel(y1, x1));
            for c in 0..ch {
                let top = p00[c] as f64 * (1.0 - fx) + p01[c] as f64 * fx;
                let bottom = p10[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                data.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    ProbMap::new(out_h, out_w, ch, data)
}

/// Nearest-neighbour resampling, so no class value is invented.
pub fn rescale_label_mask(mask: &LabelMask, spec: &GsdSpec) -> Result<LabelMask, GridError> {
    let (h, w) = mask.dims();
    let out_h = scaled_dim(h, spec)?;
    let out_w = scaled_dim(w, spec)?;
    let nearest = |x: usize, input: usize, output: usize| {
        (((x as f64 + 0.5) * input as f64 / output as f64) as usize).min(input - 1)
    };
    let cols: Vec<usize> = (0..out_w).map(|x| nearest(x, w, out_w)).collect();
    let mut data = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let sy = nearest(y, h, out_h);
        data.extend(cols.iter().map(|&sx| mask.get(sy, sx)));
    }
    LabelMask::new(out_h, out_w, data)
}
