use serde::{Deserialize, Serialize};

use super::InferError;
use crate::gridio::ProbMap;

/// Grid symmetry applied to the input image before the upstream model ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    Hflip,
    Vflip,
    /// Quarter turn counter-clockwise.
    Rot90,
    Rot180,
    /// Quarter turn clockwise.
    Rot270,
}

impl Transform {
    pub const ALL: [Transform; 6] = [
        Transform::Identity,
        Transform::Hflip,
        Transform::Vflip,
        Transform::Rot90,
        Transform::Rot180,
        Transform::Rot270,
    ];

    pub fn inverse(self) -> Transform {
        match self {
            Transform::Rot90 => Transform::Rot270,
            Transform::Rot270 => Transform::Rot90,
            t => t,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Hflip => "hflip",
            Transform::Vflip => "vflip",
            Transform::Rot90 => "rot90",
            Transform::Rot180 => "rot180",
            Transform::Rot270 => "rot270",
        }
    }

    pub fn from_name(name: &str) -> Option<Transform> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }

    /// Applies the transform to every channel of a grid.
    pub fn apply(self, map: &ProbMap) -> ProbMap {
        let (h, w) = map.dims();
        let (oh, ow) = match self {
            Transform::Rot90 | Transform::Rot270 => (w, h),
            _ => (h, w),
        };
        // source pixel for output (i, j)
        let src = |i: usize, j: usize| match self {
            Transform::Identity => (i, j),
            Transform::Hflip => (i, w - 1 - j),
            Transform::Vflip => (h - 1 - i, j),
            Transform::Rot90 => (j, w - 1 - i),
            Transform::Rot180 => (h - 1 - i, w - 1 - j),
            Transform::Rot270 => (h - 1 - j, i),
        };
        let mut data = Vec::with_capacity(map.data().len());
        for i in 0..oh {
            for j in 0..ow {
                let (r, c) = src(i, j);
                data.extend_from_slice(map.pixel(r, c));
            }
        }
        ProbMap::new(oh, ow, map.channels(), data).expect("same element count")
    }
}

/// A probability map predicted on a transformed copy of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct TtaView {
    pub prob_map: ProbMap,
    pub transform: Transform,
}

/// Maps every view back to the original frame and averages them.
///
/// Returns the fused map and, per pixel, the fused probability of the
/// winning channel (lowest channel on ties). Each value is summed in sorted
/// order, so permuting the views gives bit-identical output.
pub fn fuse_tta(views: &[TtaView]) -> Result<(ProbMap, Vec<f32>), InferError> {
    let aligned: Vec<ProbMap> = views
        .iter()
        .map(|v| v.transform.inverse().apply(&v.prob_map))
        .collect();
    let first = aligned.first().ok_or(InferError::EmptyViews)?;
    let (h, w) = first.dims();
    let ch = first.channels();
    for (index, m) in aligned.iter().enumerate() {
        if m.dims() != (h, w) || m.channels() != ch {
            return Err(InferError::ViewShape {
                index,
                expected: (h, w, ch),
                found: (m.height(), m.width(), m.channels()),
            });
        }
    }

    let n = aligned.len() as f64;
    let mut scratch = Vec::with_capacity(aligned.len());
    let data: Vec<f32> = (0..h * w * ch)
        .map(|i| {
            scratch.clear();
            scratch.extend(aligned.iter().map(|m| m.data()[i]));
            scratch.sort_by(f32::total_cmp);
            (scratch.iter().map(|&v| v as f64).sum::<f64>() / n) as f32
        })
        .collect();
    let fused = ProbMap::new(h, w, ch, data).expect("dims agree");
    let confidence = fused
        .pixels()
        .map(|px| px.iter().copied().fold(f32::NEG_INFINITY, f32::max))
        .collect();
    Ok((fused, confidence))
}
