//! Radius-aware random disconnections and background artifacts.
//!
//! For every disconnection a vessel radius `i` is drawn with probability
//! `2^(p-i) / (2^p - 1)` (thin vessels are favored), a centerline voxel of
//! that rounded radius is picked, and a random subset of the vessel inside a
//! disc of radius `max(1, g / (i + 1))` around it is erased, where
//! `g ~ N(s, sigma)`. Artifacts are random subsets of small discs placed in
//! the background.
//!
//! All randomness comes from one PCG64 stream seeded with the spec seed and
//! consumed in a fixed order. Per disconnection: one radius draw per attempt,
//! one index draw for the centerline voxel, one normal draw for the size, one
//! normal draw for the removal count, then one index draw per removed voxel
//! (partial Fisher-Yates). Per artifact: one index draw for the center, one
//! normal draw for the radius, one for the count, then one index draw per
//! added voxel. Out-of-range normal draws are clamped, never redrawn.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, RngExt, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{self, BinaryMask, Coord, Dims, ImageError};
use crate::morphology::{centerline_radii, rasterize_ball, MorphError};

#[derive(Debug, Error)]
pub enum DisconnectError {
    #[error("mask has no foreground voxel")]
    EmptyMask,
    #[error("mask has no background voxel")]
    NoBackground,
    #[error("no centerline voxel matched a sampled radius after {attempts} attempts")]
    ExhaustedRetries { attempts: usize },
    #[error("radius bound p = {0} outside 1..=63")]
    InvalidP(u32),
    #[error("invalid disconnection spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("reading pair log: {0}")]
    Log(#[from] serde_json::Error),
}

impl From<MorphError> for DisconnectError {
    fn from(e: MorphError) -> Self {
        match e {
            MorphError::AllForeground => DisconnectError::NoBackground,
        }
    }
}

pub type Rng64 = Pcg64;

pub fn rng_from_seed(seed: u64) -> Rng64 {
    Pcg64::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisconnectionSpec {
    /// Mean disconnection size, pixels.
    pub s: f64,
    /// Standard deviation of the disconnection size, pixels.
    pub sigma: f64,
    pub n_disconnections: usize,
    pub n_artifacts: usize,
    pub seed: u64,
}

impl Default for DisconnectionSpec {
    fn default() -> Self {
        DisconnectionSpec {
            s: 8.0,
            sigma: 4.0,
            n_disconnections: 15,
            n_artifacts: 5,
            seed: 0,
        }
    }
}

impl DisconnectionSpec {
    pub fn validate(&self) -> Result<(), DisconnectError> {
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(DisconnectError::InvalidSpec(format!(
                "s = {} must be > 0",
                self.s
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(DisconnectError::InvalidSpec(format!(
                "sigma = {} must be >= 0",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// A connected mask, its damaged version and the edit log between them.
#[derive(Debug, Clone, PartialEq)]
pub struct DisconnectedSample {
    pub connected: BinaryMask,
    pub disconnected: BinaryMask,
    pub removed: Vec<Coord>,
    pub added: Vec<Coord>,
}

/// Draws `i` in `1..=p` with probability `2^(p-i) / (2^p - 1)`.
pub fn sample_radius<R: Rng + ?Sized>(p: u32, rng: &mut R) -> Result<u32, DisconnectError> {
    if !(1..=63).contains(&p) {
        return Err(DisconnectError::InvalidP(p));
    }
    // Slot k in [0, 2^p - 1); radius i owns 2^(p-i) consecutive slots.
    let total = (1u64 << p) - 1;
    let k = rng.random_range(0..total);
    let m = total - k;
    Ok(p - (63 - m.leading_zeros()))
}

pub fn radius_probability(p: u32, i: u32) -> f64 {
    2f64.powi((p - i) as i32) / (2f64.powi(p as i32) - 1.0)
}

fn round_half_up(v: f64) -> u32 {
    (v + 0.5).floor().max(0.0) as u32
}

fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + sd * z
}

/// `round(N(N/2, N/4))` clamped to `[0, n]`.
fn draw_count<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    let nf = n as f64;
    let v = normal(rng, nf / 2.0, nf / 4.0).round();
    v.clamp(0.0, nf) as usize
}

/// Moves a uniform random `k`-subset of `items` to its front.
fn choose_front<T, R: Rng + ?Sized>(rng: &mut R, items: &mut [T], k: usize) {
    let n = items.len();
    for j in 0..k.min(n) {
        let pick = rng.random_range(j..n);
        items.swap(j, pick);
    }
}

/// Disconnection radius for a drawn size `g` at vessel radius `i`.
pub fn disconnection_radius(g: f64, i: u32) -> f64 {
    (g / (f64::from(i) + 1.0)).max(1.0)
}

/// One applied disconnection, for inspection and tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisconnectionEvent {
    pub center: Coord,
    pub vessel_radius: u32,
    pub size: f64,
    pub radius: f64,
    pub removed: usize,
}

pub fn make_disconnections<R: Rng + ?Sized>(
    mask: &BinaryMask,
    spec: &DisconnectionSpec,
    rng: &mut R,
) -> Result<(BinaryMask, Vec<Coord>), DisconnectError> {
    let (out, removed, _) = make_disconnections_traced(mask, spec, rng)?;
    Ok((out, removed))
}

pub fn make_disconnections_traced<R: Rng + ?Sized>(
    mask: &BinaryMask,
    spec: &DisconnectionSpec,
    rng: &mut R,
) -> Result<(BinaryMask, Vec<Coord>, Vec<DisconnectionEvent>), DisconnectError> {
    spec.validate()?;
    if !mask.has_foreground() {
        return Err(DisconnectError::EmptyMask);
    }
    if !mask.has_background() {
        return Err(DisconnectError::NoBackground);
    }
    let mut out = mask.clone();
    let mut removed = Vec::new();
    let mut events = Vec::new();
    if spec.n_disconnections == 0 {
        return Ok((out, removed, events));
    }

    let dims = mask.dims();
    let centerline = centerline_radii(mask)?;
    let mut by_radius: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in centerline.points() {
        by_radius.entry(round_half_up(r)).or_default().push(i);
    }
    let p = round_half_up(centerline.max_radius()).max(1);
    let budget = 100 * spec.n_disconnections;
    let mut misses = 0;

    for _ in 0..spec.n_disconnections {
        let (i, candidates) = loop {
            let i = sample_radius(p, rng)?;
            if let Some(c) = by_radius.get(&i) {
                break (i, c);
            }
            misses += 1;
            if misses > budget {
                return Err(DisconnectError::ExhaustedRetries { attempts: misses });
            }
        };
        let center = dims.coord(candidates[rng.random_range(0..candidates.len())]);
        let size = normal(rng, spec.s, spec.sigma);
        let radius = disconnection_radius(size, i);
        let mut disc: Vec<Coord> = rasterize_ball(center, radius, dims)
            .into_iter()
            .filter(|&c| out.get(c))
            .collect();
        let n = draw_count(rng, disc.len());
        choose_front(rng, &mut disc, n);
        for &c in &disc[..n] {
            out.set(c, false);
            removed.push(c);
        }
        events.push(DisconnectionEvent {
            center,
            vessel_radius: i,
            size,
            radius,
            removed: n,
        });
    }
    Ok((out, removed, events))
}

/// One injected artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEvent {
    pub center: Coord,
    pub radius: f64,
    pub added: usize,
}

/// Adds artifacts to `mask` inside the background of `original`.
pub fn add_artifacts<R: Rng + ?Sized>(
    mask: &BinaryMask,
    original: &BinaryMask,
    spec: &DisconnectionSpec,
    rng: &mut R,
) -> Result<(BinaryMask, Vec<Coord>), DisconnectError> {
    let (out, added, _) = add_artifacts_traced(mask, original, spec, rng)?;
    Ok((out, added))
}

pub fn add_artifacts_traced<R: Rng + ?Sized>(
    mask: &BinaryMask,
    original: &BinaryMask,
    spec: &DisconnectionSpec,
    rng: &mut R,
) -> Result<(BinaryMask, Vec<Coord>, Vec<ArtifactEvent>), DisconnectError> {
    image::check_same_dims(mask.dims(), original.dims())?;
    let mut out = mask.clone();
    let mut added = Vec::new();
    let mut events = Vec::new();
    if spec.n_artifacts == 0 {
        return Ok((out, added, events));
    }
    let background = original.background_indices();
    if background.is_empty() {
        return Err(DisconnectError::NoBackground);
    }
    let dims = original.dims();
    for _ in 0..spec.n_artifacts {
        let center = dims.coord(background[rng.random_range(0..background.len())]);
        let radius = normal(rng, 3.0, 1.0).max(0.5);
        let mut disc: Vec<Coord> = rasterize_ball(center, radius, dims)
            .into_iter()
            .filter(|&c| !original.get(c))
            .collect();
        let n = draw_count(rng, disc.len());
        choose_front(rng, &mut disc, n);
        let before = added.len();
        for &c in &disc[..n] {
            if !out.get(c) {
                out.set(c, true);
                added.push(c);
            }
        }
        events.push(ArtifactEvent {
            center,
            radius,
            added: added.len() - before,
        });
    }
    Ok((out, added, events))
}

/// Disconnections then artifacts, from one RNG stream seeded by `spec.seed`.
pub fn generate_pair(
    mask: &BinaryMask,
    spec: &DisconnectionSpec,
) -> Result<DisconnectedSample, DisconnectError> {
    let mut rng = rng_from_seed(spec.seed);
    let (cut, removed) = make_disconnections(mask, spec, &mut rng)?;
    let (disconnected, added) = add_artifacts(&cut, mask, spec, &mut rng)?;
    Ok(DisconnectedSample {
        connected: mask.clone(),
        disconnected,
        removed,
        added,
    })
}

/// JSON sidecar written next to a pair's masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLog {
    pub dims: Dims,
    pub spec: DisconnectionSpec,
    pub removed: Vec<Coord>,
    pub added: Vec<Coord>,
}

fn mask_ext(dims: Dims) -> &'static str {
    if dims.ndim() == 2 {
        "pgm"
    } else {
        "vmsk"
    }
}

/// Writes `connected.<ext>`, `disconnected.<ext>` and `log.json` into `dir`.
pub fn write_pair(
    dir: &Path,
    sample: &DisconnectedSample,
    spec: &DisconnectionSpec,
) -> Result<(), DisconnectError> {
    fs::create_dir_all(dir).map_err(ImageError::from)?;
    let ext = mask_ext(sample.connected.dims());
    image::save_mask(&sample.connected, dir.join(format!("connected.{ext}")))?;
    image::save_mask(
        &sample.disconnected,
        dir.join(format!("disconnected.{ext}")),
    )?;
    let log = PairLog {
        dims: sample.connected.dims(),
        spec: spec.clone(),
        removed: sample.removed.clone(),
        added: sample.added.clone(),
    };
    let json = serde_json::to_string(&log)?;
    fs::write(dir.join("log.json"), json).map_err(ImageError::from)?;
    Ok(())
}

pub fn read_pair(dir: &Path) -> Result<(DisconnectedSample, DisconnectionSpec), DisconnectError> {
    let text = fs::read_to_string(dir.join("log.json")).map_err(ImageError::from)?;
    let log: PairLog = serde_json::from_str(&text)?;
    let ext = mask_ext(log.dims);
    let connected = image::load_mask(dir.join(format!("connected.{ext}")))?;
    let disconnected = image::load_mask(dir.join(format!("disconnected.{ext}")))?;
    let sample = DisconnectedSample {
        connected,
        disconnected,
        removed: log.removed,
        added: log.added,
    };
    Ok((sample, log.spec))
}
