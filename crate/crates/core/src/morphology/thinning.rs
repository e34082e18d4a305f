//! Topology-preserving thinning to one-voxel-wide centerlines.
//!
//! Both variants work in subiterations. Each subiteration first marks
//! deletion candidates in parallel from the unmodified image, then deletes
//! them one at a time in raster order, re-checking on the current image that
//! the voxel is still simple and still qualifies. Deleting a single simple
//! voxel never changes topology, so the result keeps the component count of
//! the input under (8, 4) / (26, 6) connectivity. Thinning stops after a full
//! cycle of subiterations deletes nothing, which makes it idempotent.

use crate::image::{BinaryMask, Dims};

pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let mut grid = Padded::new(mask);
    if grid.dims.ndim() == 2 {
        thin_2d(&mut grid);
    } else {
        thin_3d(&mut grid);
    }
    grid.into_mask()
}

/// Copy of the mask with a one-voxel background frame, so neighborhood
/// lookups never need bounds checks.
struct Padded {
    dims: Dims,
    size: [usize; 3],
    data: Vec<u8>,
}

impl Padded {
    fn new(mask: &BinaryMask) -> Self {
        let dims = mask.dims();
        let [nx, ny, nz] = dims.extents3();
        let pz = if dims.ndim() == 2 { 1 } else { nz + 2 };
        let size = [nx + 2, ny + 2, pz];
        let mut data = vec![0u8; size.iter().product()];
        let zoff = usize::from(dims.ndim() == 3);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let src = x + nx * (y + ny * z);
                    let dst = (x + 1) + size[0] * ((y + 1) + size[1] * (z + zoff));
                    data[dst] = mask.data()[src];
                }
            }
        }
        Padded { dims, size, data }
    }

    fn into_mask(self) -> BinaryMask {
        let [nx, ny, nz] = self.dims.extents3();
        let zoff = usize::from(self.dims.ndim() == 3);
        let mut out = Vec::with_capacity(self.dims.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    out.push(
                        self.data[(x + 1) + self.size[0] * ((y + 1) + self.size[1] * (z + zoff))],
                    );
                }
            }
        }
        BinaryMask::new(self.dims, out).expect("thinning keeps values binary")
    }

    /// Linear indices of interior (non-frame) voxels, raster order.
    fn interior(&self) -> Vec<usize> {
        let [sx, sy, sz] = self.size;
        let zr = if self.dims.ndim() == 2 {
            0..1
        } else {
            1..sz - 1
        };
        let mut v = Vec::new();
        for z in zr {
            for y in 1..sy - 1 {
                for x in 1..sx - 1 {
                    v.push(x + sx * (y + sy * z));
                }
            }
        }
        v
    }
}

// ---------------------------------------------------------------------------
// 2D

/// Neighbors of `i` in the order N, NE, E, SE, S, SW, W, NW (y grows down).
fn ring_2d(g: &Padded, i: usize) -> [bool; 8] {
    let w = g.size[0];
    let d = &g.data;
    [
        d[i - w] != 0,
        d[i - w + 1] != 0,
        d[i + 1] != 0,
        d[i + w + 1] != 0,
        d[i + w] != 0,
        d[i + w - 1] != 0,
        d[i - 1] != 0,
        d[i - w - 1] != 0,
    ]
}

/// 8-simple iff exactly one 8-connected foreground run and one 4-adjacent
/// background run around the pixel (8-connectivity number equal to 1).
fn is_simple_2d(n: &[bool; 8]) -> bool {
    // Face neighbors sit at even positions in the ring.
    let mut count = 0;
    for k in [0usize, 2, 4, 6] {
        let a = !n[k];
        let b = !n[(k + 1) % 8];
        let c = !n[(k + 2) % 8];
        count += i32::from(a) - i32::from(a && b && c);
    }
    count == 1
}

/// Deletion rule of Guo and Hall's parallel thinning, first or second pass.
fn guo_hall_deletable(n: &[bool; 8], second: bool) -> bool {
    let [p2, p3, p4, p5, p6, p7, p8, p9] = n.map(u8::from);
    let not = |v: u8| 1 - v;
    let c = (not(p2) & (p3 | p4))
        + (not(p4) & (p5 | p6))
        + (not(p6) & (p7 | p8))
        + (not(p8) & (p9 | p2));
    let n1 = (p9 | p2) + (p3 | p4) + (p5 | p6) + (p7 | p8);
    let n2 = (p2 | p3) + (p4 | p5) + (p6 | p7) + (p8 | p9);
    let nmin = n1.min(n2);
    let m = if second {
        (p2 | p3 | not(p5)) & p4
    } else {
        (p6 | p7 | not(p9)) & p8
    };
    c == 1 && (2..=3).contains(&nmin) && m == 0
}

fn thin_2d(g: &mut Padded) {
    let interior = g.interior();
    loop {
        let mut changed = false;
        for second in [false, true] {
            let candidates: Vec<usize> = interior
                .iter()
                .copied()
                .filter(|&i| g.data[i] != 0 && guo_hall_deletable(&ring_2d(g, i), second))
                .collect();
            for i in candidates {
                let n = ring_2d(g, i);
                if guo_hall_deletable(&n, second) && is_simple_2d(&n) {
                    g.data[i] = 0;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

// ---------------------------------------------------------------------------
// 3D

/// Offsets of the 3x3x3 cube, index `(dx+1) + 3*(dy+1) + 9*(dz+1)`.
fn cube_offsets() -> [[i32; 3]; 27] {
    let mut o = [[0; 3]; 27];
    for (k, slot) in o.iter_mut().enumerate() {
        *slot = [
            (k % 3) as i32 - 1,
            ((k / 3) % 3) as i32 - 1,
            (k / 9) as i32 - 1,
        ];
    }
    o
}

const CENTER: usize = 13;

struct Cube {
    /// Linear offsets into the padded grid for each cube position.
    deltas: [isize; 27],
    /// 26-adjacency between the 26 neighbor positions.
    adj26: Vec<Vec<usize>>,
    /// 6-adjacency restricted to the 18-neighborhood.
    adj6_in18: Vec<Vec<usize>>,
    in18: [bool; 27],
    face: [bool; 27],
}

impl Cube {
    fn new(size: [usize; 3]) -> Self {
        let off = cube_offsets();
        let norm1 = |a: &[i32; 3]| a.iter().map(|v| v.abs()).sum::<i32>();
        let mut deltas = [0isize; 27];
        let mut in18 = [false; 27];
        let mut face = [false; 27];
        for k in 0..27 {
            let [dx, dy, dz] = off[k];
            deltas[k] =
                dx as isize + size[0] as isize * (dy as isize + size[1] as isize * dz as isize);
            let n = norm1(&off[k]);
            in18[k] = n == 1 || n == 2;
            face[k] = n == 1;
        }
        let mut adj26 = vec![Vec::new(); 27];
        let mut adj6_in18 = vec![Vec::new(); 27];
        for a in 0..27 {
            for b in 0..27 {
                if a == b || a == CENTER || b == CENTER {
                    continue;
                }
                let d = [
                    off[a][0] - off[b][0],
                    off[a][1] - off[b][1],
                    off[a][2] - off[b][2],
                ];
                if d.iter().all(|v| v.abs() <= 1) {
                    adj26[a].push(b);
                }
                if norm1(&d) == 1 && in18[a] && in18[b] {
                    adj6_in18[a].push(b);
                }
            }
        }
        Cube {
            deltas,
            adj26,
            adj6_in18,
            in18,
            face,
        }
    }

    fn load(&self, g: &Padded, i: usize) -> [bool; 27] {
        let mut n = [false; 27];
        for (k, slot) in n.iter_mut().enumerate() {
            *slot = g.data[(i as isize + self.deltas[k]) as usize] != 0;
        }
        n
    }

    fn neighbor_count(n: &[bool; 27]) -> usize {
        n.iter()
            .enumerate()
            .filter(|&(k, &v)| k != CENTER && v)
            .count()
    }

    /// 26/6 simple point: one 26-component of foreground in the punctured
    /// 26-neighborhood and one 6-component of background in the punctured
    /// 18-neighborhood that touches a face neighbor.
    fn is_simple(&self, n: &[bool; 27]) -> bool {
        let fg_components = count_components(|k| k != CENTER && n[k], &self.adj26, |_| true);
        if fg_components != 1 {
            return false;
        }
        let bg_components =
            count_components(|k| self.in18[k] && !n[k], &self.adj6_in18, |k| self.face[k]);
        bg_components == 1
    }
}

/// Components of the positions selected by `member`, counting only those
/// that contain at least one position satisfying `counted`.
fn count_components(
    member: impl Fn(usize) -> bool,
    adj: &[Vec<usize>],
    counted: impl Fn(usize) -> bool,
) -> usize {
    let mut seen = [false; 27];
    let mut stack = Vec::with_capacity(27);
    let mut components = 0;
    for start in 0..27 {
        if seen[start] || !member(start) {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut hit = false;
        while let Some(k) = stack.pop() {
            hit |= counted(k);
            for &j in &adj[k] {
                if !seen[j] && member(j) {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        if hit {
            components += 1;
        }
    }
    components
}

fn thin_3d(g: &mut Padded) {
    let cube = Cube::new(g.size);
    let interior = g.interior();
    // Border directions: up, down, north, south, east, west.
    let directions = [
        [0, 0, -1],
        [0, 0, 1],
        [0, -1, 0],
        [0, 1, 0],
        [1, 0, 0],
        [-1, 0, 0],
    ];
    let deletable =
        |n: &[bool; 27], dir: usize| !n[dir] && Cube::neighbor_count(n) > 1 && cube.is_simple(n);
    loop {
        let mut changed = false;
        for d in directions {
            let dir = ((d[0] + 1) + 3 * (d[1] + 1) + 9 * (d[2] + 1)) as usize;
            let candidates: Vec<usize> = interior
                .iter()
                .copied()
                .filter(|&i| g.data[i] != 0 && deletable(&cube.load(g, i), dir))
                .collect();
            for i in candidates {
                if deletable(&cube.load(g, i), dir) {
                    g.data[i] = 0;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Coord;

    #[test]
    fn simple_point_2d_cases() {
        // isolated
        assert!(!is_simple_2d(&[false; 8]));
        // interior
        assert!(!is_simple_2d(&[true; 8]));
        // end of a line: only E set
        assert!(is_simple_2d(&[
            false, false, true, false, false, false, false, false
        ]));
        // middle of a horizontal line: E and W set, removing splits it
        assert!(!is_simple_2d(&[
            false, false, true, false, false, false, true, false
        ]));
    }

    #[test]
    fn simple_point_3d_cases() {
        let g = Padded::new(&BinaryMask::zeros(Dims::d3(1, 1, 1)));
        let cube = Cube::new(g.size);
        let mut n = [false; 27];
        n[CENTER] = true;
        assert!(!cube.is_simple(&n));
        n[CENTER + 1] = true;
        assert!(cube.is_simple(&n));
        n[CENTER - 1] = true;
        assert!(!cube.is_simple(&n));
        let full = [true; 27];
        assert!(!cube.is_simple(&full));
    }

    #[test]
    fn thin_line_is_kept() {
        let m = BinaryMask::from_fn(Dims::d2(14, 5), |c| c.y() == 2 && (2..12).contains(&c.x()));
        assert_eq!(skeletonize(&m), m);
        let m3 = BinaryMask::from_fn(Dims::d3(5, 5, 14), |c| {
            c.x() == 2 && c.y() == 2 && c.z() > 1 && c.z() < 12
        });
        assert_eq!(skeletonize(&m3), m3);
    }

    #[test]
    fn bar_collapses_to_a_thin_curve() {
        let m = BinaryMask::from_fn(Dims::d2(24, 7), |c| {
            (2..22).contains(&c.x()) && (2..5).contains(&c.y())
        });
        let s = skeletonize(&m);
        assert!(s.is_subset_of(&m));
        assert!(s.count() >= 10 && s.count() < 30, "{}", s.count());
        // no 2x2 foreground block survives
        for y in 0..6 {
            for x in 0..23 {
                let block = [(x, y), (x + 1, y), (x, y + 1), (x + 1, y + 1)]
                    .iter()
                    .all(|&(a, b)| s.get(Coord::d2(a, b)));
                assert!(!block);
            }
        }
    }

    #[test]
    fn solid_block_3d_thins_to_a_small_set() {
        let m = BinaryMask::from_fn(Dims::d3(9, 9, 9), |c| {
            (2..7).contains(&c.x()) && (2..7).contains(&c.y()) && (1..8).contains(&c.z())
        });
        let s = skeletonize(&m);
        assert!(s.is_subset_of(&m));
        assert!(s.has_foreground());
        assert!(s.count() < 15, "{}", s.count());
    }
}
