//! Raster geometry on binary masks: exact distance transform, thinning,
//! component labeling, skeleton endpoints and ball rasterization.
//!
//! Foreground connectivity is full (8 in 2D, 26 in 3D); background is
//! face-connected.

mod edt;
mod labeling;
mod thinning;

pub use edt::{distance_transform, squared_distance_to_set};
pub use labeling::{beta0, connected_components, Connectivity, LabelMap};
pub use thinning::skeletonize;

use thiserror::Error;

use crate::image::{BinaryMask, Coord, Dims, ScalarGrid};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MorphError {
    #[error("mask has no background voxel")]
    AllForeground,
}

/// A skeleton plus the local vessel radius on each skeleton voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterlineMap {
    pub skeleton: BinaryMask,
    /// Distance-map value on skeleton voxels, 0 elsewhere.
    pub radii: ScalarGrid,
}

impl CenterlineMap {
    pub fn max_radius(&self) -> f64 {
        self.radii.max()
    }

    /// Skeleton voxels as `(linear index, radius)`, raster order.
    pub fn points(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.skeleton
            .foreground_indices()
            .into_iter()
            .map(|i| (i, self.radii.get_index(i)))
    }
}

pub fn centerline_radii(mask: &BinaryMask) -> Result<CenterlineMap, MorphError> {
    let dims = mask.dims();
    if !mask.has_foreground() {
        return Ok(CenterlineMap {
            skeleton: mask.clone(),
            radii: ScalarGrid::zeros(dims),
        });
    }
    let distances = distance_transform(mask)?;
    let skeleton = skeletonize(mask);
    let mut radii = ScalarGrid::zeros(dims);
    for i in skeleton.foreground_indices() {
        radii.set_index(i, distances.get_index(i));
    }
    Ok(CenterlineMap { skeleton, radii })
}

/// Neighbor offsets, padded to three components (`dz = 0` in 2D).
pub fn neighbor_offsets(ndim: usize, connectivity: Connectivity) -> Vec<[i64; 3]> {
    let zr = if ndim == 2 { 0i64..=0 } else { -1i64..=1 };
    let mut out = Vec::new();
    for dz in zr {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let n = dx.abs() + dy.abs() + dz.abs();
                let keep = match connectivity {
                    Connectivity::Face => n == 1,
                    Connectivity::Full => n > 0,
                };
                if keep {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// In-bounds neighbors of `c`.
pub fn neighbors(dims: Dims, c: Coord, connectivity: Connectivity) -> impl Iterator<Item = Coord> {
    let p = c.as_i64();
    neighbor_offsets(dims.ndim(), connectivity)
        .into_iter()
        .filter_map(move |o| dims.checked_coord([p[0] + o[0], p[1] + o[1], p[2] + o[2]]))
}

/// Skeleton voxels with at most one fully-connected skeleton neighbor,
/// raster order.
pub fn endpoints(skeleton: &BinaryMask) -> Vec<Coord> {
    let dims = skeleton.dims();
    skeleton
        .foreground()
        .filter(|&c| {
            neighbors(dims, c, Connectivity::Full)
                .filter(|&n| skeleton.get(n))
                .count()
                <= 1
        })
        .collect()
}

/// In-bounds voxels within Euclidean distance `radius` of `center`, raster
/// order.
pub fn rasterize_ball(center: Coord, radius: f64, dims: Dims) -> Vec<Coord> {
    let r = radius.max(0.0);
    let r2 = r * r;
    let reach = r.floor() as i64;
    let p = center.as_i64();
    let zr = if dims.ndim() == 2 {
        0..=0
    } else {
        -reach..=reach
    };
    let mut out = Vec::new();
    for dz in zr {
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                if ((dx * dx + dy * dy + dz * dz) as f64) > r2 {
                    continue;
                }
                if let Some(c) = dims.checked_coord([p[0] + dx, p[1] + dy, p[2] + dz]) {
                    out.push(c);
                }
            }
        }
    }
    out
}

/// Sets every voxel within `radius` of each point on the segment `a -> b`,
/// sampled at steps of at most half a voxel. Returns the voxels that changed.
pub fn stamp_segment(mask: &mut BinaryMask, a: [f64; 3], b: [f64; 3], radius: f64) -> usize {
    let dims = mask.dims();
    let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt();
    let steps = (len / 0.5).ceil().max(1.0) as usize;
    let r2 = radius * radius;
    let reach = radius.ceil() as i64 + 1;
    let zr = if dims.ndim() == 2 {
        0..=0
    } else {
        -reach..=reach
    };
    let mut changed = 0;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let q = [
            a[0] + t * (b[0] - a[0]),
            a[1] + t * (b[1] - a[1]),
            a[2] + t * (b[2] - a[2]),
        ];
        let base = [
            q[0].round() as i64,
            q[1].round() as i64,
            q[2].round() as i64,
        ];
        for dz in zr.clone() {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let v = [base[0] + dx, base[1] + dy, base[2] + dz];
                    let d2 = (v[0] as f64 - q[0]).powi(2)
                        + (v[1] as f64 - q[1]).powi(2)
                        + (v[2] as f64 - q[2]).powi(2);
                    if d2 > r2 {
                        continue;
                    }
                    if let Some(c) = dims.checked_coord(v) {
                        if !mask.get(c) {
                            mask.set(c, true);
                            changed += 1;
                        }
                    }
                }
            }
        }
    }
    changed
}
