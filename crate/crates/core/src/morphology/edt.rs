//! Exact Euclidean distance transform.
//!
//! Separable lower-envelope-of-parabolas transform applied one axis at a
//! time. All intermediate values are squared integer distances held in `f64`,
//! so the result is exact as long as squared distances stay below 2^53.

use super::MorphError;
use crate::image::{BinaryMask, Dims, ScalarGrid};

/// Distance from every foreground voxel to the nearest background voxel;
/// zero on the background.
pub fn distance_transform(mask: &BinaryMask) -> Result<ScalarGrid, MorphError> {
    let background = BinaryMask::from_fn(mask.dims(), |c| !mask.get(c));
    let sq = squared_distance_to_set(&background).ok_or(MorphError::AllForeground)?;
    let data = sq.into_iter().map(f64::sqrt).collect();
    Ok(ScalarGrid::new(mask.dims(), data).expect("finite non-negative distances"))
}

/// Squared Euclidean distance from every voxel to the nearest voxel of
/// `sites`, or `None` when `sites` is empty.
pub fn squared_distance_to_set(sites: &BinaryMask) -> Option<Vec<f64>> {
    if !sites.has_foreground() {
        return None;
    }
    let dims = sites.dims();
    let mut grid: Vec<f64> = sites
        .data()
        .iter()
        .map(|&v| if v != 0 { 0.0 } else { f64::INFINITY })
        .collect();
    for axis in 0..dims.ndim() {
        transform_axis(&mut grid, dims, axis);
    }
    Some(grid)
}

fn transform_axis(grid: &mut [f64], dims: Dims, axis: usize) {
    let [nx, ny, nz] = dims.extents3();
    let n = [nx, ny, nz][axis];
    if n == 1 {
        return;
    }
    let stride = match axis {
        0 => 1,
        1 => nx,
        _ => nx * ny,
    };
    let mut scratch = Envelope::with_capacity(n);
    let mut line = vec![0.0; n];
    let mut out = vec![0.0; n];

    // Every line along `axis` starts at a voxel whose `axis` component is 0.
    let starts = (0..dims.len()).filter(|&i| (i / stride) % n == 0);
    for start in starts {
        for (k, v) in line.iter_mut().enumerate() {
            *v = grid[start + k * stride];
        }
        scratch.transform(&line, &mut out);
        for (k, v) in out.iter().enumerate() {
            grid[start + k * stride] = *v;
        }
    }
}

/// Reusable buffers for the 1D lower-envelope pass.
struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Envelope {
            sites: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    /// `out[q] = min_p (q - p)^2 + f[p]` over the finite samples of `f`.
    fn transform(&mut self, f: &[f64], out: &mut [f64]) {
        self.sites.clear();
        self.bounds.clear();
        for (q, &fq) in f.iter().enumerate() {
            if !fq.is_finite() {
                continue;
            }
            let qf = q as f64;
            while let Some(&p) = self.sites.last() {
                let pf = p as f64;
                let s = ((fq + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf));
                if s <= *self.bounds.last().expect("one bound per site") {
                    self.sites.pop();
                    self.bounds.pop();
                } else {
                    self.sites.push(q);
                    self.bounds.push(s);
                    break;
                }
            }
            if self.sites.is_empty() {
                self.sites.push(q);
                self.bounds.push(f64::NEG_INFINITY);
            }
        }
        if self.sites.is_empty() {
            out.fill(f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            let qf = q as f64;
            while k + 1 < self.sites.len() && self.bounds[k + 1] < qf {
                k += 1;
            }
            let p = self.sites[k];
            let d = qf - p as f64;
            *o = d * d + f[p];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Coord;

    #[test]
    fn single_pixel_has_distance_one() {
        let dims = Dims::d2(5, 5);
        let m = BinaryMask::from_coords(dims, [Coord::d2(2, 2)]);
        let d = distance_transform(&m).unwrap();
        for i in 0..dims.len() {
            let expected = if i == dims.index(Coord::d2(2, 2)) {
                1.0
            } else {
                0.0
            };
            assert_eq!(d.get_index(i), expected);
        }
    }

    #[test]
    fn centred_block() {
        let dims = Dims::d2(5, 5);
        let m = BinaryMask::from_fn(dims, |c| (1..4).contains(&c.x()) && (1..4).contains(&c.y()));
        let d = distance_transform(&m).unwrap();
        assert_eq!(d.get(Coord::d2(2, 2)), 2.0);
        for (x, y) in [(1, 1), (1, 2), (3, 3), (2, 3), (3, 1)] {
            assert_eq!(d.get(Coord::d2(x, y)), 1.0);
        }
        assert_eq!(d.get(Coord::d2(0, 0)), 0.0);
    }

    #[test]
    fn all_foreground_is_an_error() {
        let m = BinaryMask::ones(Dims::d2(3, 3));
        assert!(matches!(
            distance_transform(&m),
            Err(MorphError::AllForeground)
        ));
    }

    #[test]
    fn border_is_not_background() {
        // A foreground row touching the border only has background on one side.
        let m = BinaryMask::from_fn(Dims::d2(1, 4), |c| c.y() < 3);
        let d = distance_transform(&m).unwrap();
        assert_eq!(d.data(), &[3.0, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn three_d_diagonal() {
        let dims = Dims::d3(4, 4, 4);
        let m = BinaryMask::from_fn(dims, |c| c != Coord::d3(0, 0, 0));
        let d = distance_transform(&m).unwrap();
        assert_eq!(d.get(Coord::d3(3, 3, 3)), 27f64.sqrt());
        assert_eq!(d.get(Coord::d3(1, 2, 0)), 5f64.sqrt());
    }
}
