//! Brute-force oracles shared by the integration tests. Each one is the
//! slowest obvious implementation of its definition, written independently
//! of the library code it checks.

#![allow(dead_code)]

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use vesselfix::image::{BinaryMask, Coord, Dims, ScalarGrid};

pub fn rng(seed: u64) -> Pcg64 {
    Pcg64::seed_from_u64(seed)
}

/// Random 2D (up to 32x32) or 3D (up to 16^3) mask of random density.
pub fn random_mask(seed: u64) -> BinaryMask {
    let mut r = rng(seed);
    let dims = if r.random_bool(0.5) {
        Dims::d2(r.random_range(1..=32), r.random_range(1..=32))
    } else {
        Dims::d3(
            r.random_range(1..=16),
            r.random_range(1..=16),
            r.random_range(1..=16),
        )
    };
    let density: f64 = r.random_range(0.05..0.95);
    BinaryMask::from_fn(dims, |_| r.random_bool(density))
}

/// Random mask of the given dims and density.
pub fn random_mask_in(dims: Dims, density: f64, seed: u64) -> BinaryMask {
    let mut r = rng(seed);
    BinaryMask::from_fn(dims, |_| r.random_bool(density))
}

pub fn all_coords(dims: Dims) -> Vec<Coord> {
    (0..dims.len()).map(|i| dims.coord(i)).collect()
}

fn dist2(a: Coord, b: Coord) -> f64 {
    let (a, b) = (a.as_f64(), b.as_f64());
    (0..3).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum()
}

/// Distance from every voxel to the nearest background voxel, by exhaustive scan.
pub fn brute_edt(mask: &BinaryMask) -> Vec<f64> {
    let coords = all_coords(mask.dims());
    let bg: Vec<Coord> = coords.iter().copied().filter(|&c| !mask.get(c)).collect();
    coords
        .iter()
        .map(|&c| {
            if !mask.get(c) {
                0.0
            } else {
                bg.iter()
                    .map(|&b| dist2(c, b))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            }
        })
        .collect()
}

fn offsets(ndim: usize, full: bool) -> Vec<[i64; 3]> {
    let zs: &[i64] = if ndim == 2 { &[0] } else { &[-1, 0, 1] };
    let mut v = Vec::new();
    for &dz in zs {
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let n = dx.abs() + dy.abs() + dz.abs();
                if n > 0 && (full || n == 1) {
                    v.push([dx, dy, dz]);
                }
            }
        }
    }
    v
}

fn shifted(dims: Dims, c: Coord, o: [i64; 3]) -> Option<Coord> {
    let e = dims.extents3();
    let p = [
        c.x() as i64 + o[0],
        c.y() as i64 + o[1],
        c.z() as i64 + o[2],
    ];
    if (0..3).all(|k| p[k] >= 0 && (p[k] as usize) < e[k]) {
        Some(if dims.ndim() == 2 {
            Coord::d2(p[0] as usize, p[1] as usize)
        } else {
            Coord::d3(p[0] as usize, p[1] as usize, p[2] as usize)
        })
    } else {
        None
    }
}

/// Number of foreground components by repeated flood fill (explicit stack).
pub fn flood_fill_count(mask: &BinaryMask, full: bool) -> usize {
    let dims = mask.dims();
    let offs = offsets(dims.ndim(), full);
    let mut seen = vec![false; dims.len()];
    let mut count = 0;
    for start in all_coords(dims) {
        if !mask.get(start) || seen[dims.index(start)] {
            continue;
        }
        count += 1;
        seen[dims.index(start)] = true;
        let mut stack = vec![start];
        while let Some(c) = stack.pop() {
            for &o in &offs {
                if let Some(n) = shifted(dims, c, o) {
                    if mask.get(n) && !seen[dims.index(n)] {
                        seen[dims.index(n)] = true;
                        stack.push(n);
                    }
                }
            }
        }
    }
    count
}

/// Foreground voxels with a face neighbor that is background or off-grid.
pub fn boundary(mask: &BinaryMask) -> Vec<Coord> {
    let dims = mask.dims();
    let offs = offsets(dims.ndim(), false);
    all_coords(dims)
        .into_iter()
        .filter(|&c| {
            mask.get(c)
                && offs
                    .iter()
                    .any(|&o| shifted(dims, c, o).is_none_or(|n| !mask.get(n)))
        })
        .collect()
}

pub fn brute_dice(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (mut both, mut na, mut nb) = (0usize, 0usize, 0usize);
    for i in 0..a.len() {
        let (x, y) = (a.data()[i] != 0, b.data()[i] != 0);
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        1.0
    } else {
        2.0 * both as f64 / (na + nb) as f64
    }
}

/// Symmetric mean surface distance over the two boundary point clouds.
pub fn brute_assd(a: &BinaryMask, b: &BinaryMask) -> Option<f64> {
    let (ba, bb) = (boundary(a), boundary(b));
    if ba.is_empty() || bb.is_empty() {
        return None;
    }
    let one_way = |from: &[Coord], to: &[Coord]| -> f64 {
        from.iter()
            .map(|&p| {
                to.iter()
                    .map(|&q| dist2(p, q))
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .sum()
    };
    Some((one_way(&ba, &bb) + one_way(&bb, &ba)) / (ba.len() + bb.len()) as f64)
}

/// Probability that a random foreground voxel outscores a random background one.
pub fn brute_auc(prob: &ScalarGrid, reference: &BinaryMask) -> Option<f64> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for i in 0..reference.len() {
        if reference.data()[i] != 0 {
            pos.push(prob.get_index(i));
        } else {
            neg.push(prob.get_index(i));
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut score = 0.0;
    for &p in &pos {
        for &n in &neg {
            score += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(score / (pos.len() * neg.len()) as f64)
}

/// Random probability map quantized to a few levels so ties occur.
pub fn random_prob(dims: Dims, seed: u64) -> ScalarGrid {
    let mut r = rng(seed);
    let levels = r.random_range(2..20u32);
    let data: Vec<f64> = (0..dims.len())
        .map(|_| f64::from(r.random_range(0..=levels)) / f64::from(levels))
        .collect();
    ScalarGrid::new(dims, data).unwrap()
}

/// Upper 1% point of the chi-square distribution for `df` degrees of freedom.
pub fn chi2_99(df: usize) -> f64 {
    [
        6.634897, 9.210340, 11.344867, 13.276704, 15.086272, 16.811894, 18.475307, 20.090235,
        21.665994,
    ][df - 1]
}

/// Pearson statistic of `counts` against `probs` over `n` draws.
pub fn chi_square(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum()
}

/// Two-sided exact binomial test p-value (sum of outcomes no more likely than `k`).
pub fn binomial_p_value(k: u64, n: u64, q: f64) -> f64 {
    let ln_pmf = |j: u64| -> f64 {
        let lf = |m: u64| (1..=m).map(|v| (v as f64).ln()).sum::<f64>();
        lf(n) - lf(j) - lf(n - j) + j as f64 * q.ln() + (n - j) as f64 * (1.0 - q).ln()
    };
    let observed = ln_pmf(k);
    (0..=n)
        .map(ln_pmf)
        .filter(|&l| l <= observed + 1e-9)
        .map(f64::exp)
        .sum::<f64>()
        .min(1.0)
}
