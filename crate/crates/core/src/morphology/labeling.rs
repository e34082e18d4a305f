use serde::{Deserialize, Serialize};

use super::neighbor_offsets;
use crate::image::{BinaryMask, Dims};

/// Voxel adjacency used for foreground connectivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// 4-connectivity in 2D, 6 in 3D.
    Face,
    /// 8-connectivity in 2D, 26 in 3D.
    #[default]
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    dims: Dims,
    labels: Vec<u32>,
    count: usize,
}

impl LabelMap {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// 0 for background, `1..=count` for components.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// β0, the number of components.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Voxel count of each component, indexed by `label - 1`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            if l > 0 {
                sizes[l as usize - 1] += 1;
            }
        }
        sizes
    }
}

/// Labels components in raster order of their first voxel.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> LabelMap {
    let dims = mask.dims();
    let offsets = neighbor_offsets(dims.ndim(), connectivity);
    let mut labels = vec![0u32; dims.len()];
    let mut count = 0u32;
    let mut stack = Vec::new();
    for start in 0..dims.len() {
        if !mask.get_index(start) || labels[start] != 0 {
            continue;
        }
        count += 1;
        labels[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let p = dims.coord(i).as_i64();
            for o in &offsets {
                let Some(c) = dims.checked_coord([p[0] + o[0], p[1] + o[1], p[2] + o[2]]) else {
                    continue;
                };
                let j = dims.index(c);
                if mask.get_index(j) && labels[j] == 0 {
                    labels[j] = count;
                    stack.push(j);
                }
            }
        }
    }
    LabelMap {
        dims,
        labels,
        count: count as usize,
    }
}

/// Component count under the foreground connectivity used throughout.
pub fn beta0(mask: &BinaryMask) -> usize {
    connected_components(mask, Connectivity::Full).count()
}
