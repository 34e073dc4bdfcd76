use serde::{Deserialize, Serialize};

use super::{GridError, ProbMap};

/// Square tiles laid over an image at a fixed stride.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub tile_size: usize,
    pub overlap: usize,
    /// Top-left corners in row-major scan order.
    pub origins: Vec<(usize, usize)>,
}

/// A tile of a probability map, positioned by its top-left corner.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub origin: (usize, usize),
    pub map: ProbMap,
}

fn axis_origins(dim: usize, tile: usize, stride: usize) -> Vec<usize> {
    let last = dim - tile;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Origins at stride `tile_size - overlap`; the final tile on each axis is
/// pulled back to end on the image border instead of overhanging it.
pub fn plan_tiles(
    height: usize,
    width: usize,
    tile_size: usize,
    overlap: usize,
) -> Result<TilePlan, GridError> {
    if tile_size == 0 || tile_size > height.min(width) {
        return Err(GridError::TileTooLarge {
            tile: tile_size,
            height,
            width,
        });
    }
    if overlap >= tile_size {
        return Err(GridError::BadOverlap {
            tile: tile_size,
            overlap,
        });
    }
    let stride = tile_size - overlap;
    let rows = axis_origins(height, tile_size, stride);
    let cols = axis_origins(width, tile_size, stride);
    let origins = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    Ok(TilePlan {
        tile_size,
        overlap,
        origins,
    })
}

pub fn cut_tiles(map: &ProbMap, plan: &TilePlan) -> Vec<Tile> {
    plan.origins
        .iter()
        .map(|&origin| Tile {
            origin,
            map: map.crop(origin, plan.tile_size, plan.tile_size),
        })
        .collect()
}

/// Reassembles tiles into a `height×width` map, averaging overlaps.
///
/// Tiles are accumulated in origin order, so the result does not depend on
/// the order in which they arrive.
pub fn stitch_maps(tiles: &[Tile], height: usize, width: usize) -> Result<ProbMap, GridError> {
    let channels = tiles.first().map_or(0, |t| t.map.channels());
    let mut order: Vec<&Tile> = tiles.iter().collect();
    order.sort_by_key(|t| t.origin);

    let mut sum = vec![0f64; height * width * channels];
    let mut count = vec![0u32; height * width];
    for t in order {
        if t.map.channels() != channels {
            return Err(GridError::ChannelMismatch {
                expected: channels,
                found: t.map.channels(),
            });
        }
        let (r0, c0) = t.origin;
        let (th, tw) = t.map.dims();
        if r0 + th > height || c0 + tw > width {
            return Err(GridError::TileOutOfBounds {
                row: r0,
                col: c0,
                height,
                width,
            });
        }
        for r in 0..th {
            for c in 0..tw {
                let p = (r0 + r) * width + c0 + c;
                count[p] += 1;
                let acc = &mut sum[p * channels..(p + 1) * channels];
                for (a, &v) in acc.iter_mut().zip(t.map.pixel(r, c)) {
                    *a += v as f64;
                }
            }
        }
    }
    if let Some(p) = count.iter().position(|&n| n == 0) {
        return Err(GridError::Uncovered {
            row: p / width,
            col: p % width,
        });
    }
    let data = sum
        .chunks_exact(channels.max(1))
        .zip(&count)
        .flat_map(|(px, &n)| px.iter().map(move |&s| (s / n as f64) as f32))
        .collect();
    ProbMap::new(height, width, channels, data)
}
