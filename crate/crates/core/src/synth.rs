//! Synthetic 2D vessel trees.
//!
//! Each branch is a tortuous centerline from its parent's tip, stamped with
//! discs of the branch radius at sub-pixel steps so every branch is
//! connected to its parent by construction. Children split the parent
//! heading by random angles on either side and shrink their radius by the
//! Murray-style factor `2^(-1/gamma)`, floored at one pixel.

use std::f64::consts::PI;

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{BinaryMask, Dims};
use crate::morphology::stamp_segment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("canvas {width}x{height} cannot hold a root of radius {radius}")]
    CanvasTooSmall {
        width: usize,
        height: usize,
        radius: f64,
    },
    #[error("invalid tree parameters: {0}")]
    InvalidParams(String),
}

/// Per-level shrink of the branch length range.
const LENGTH_DECAY: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub width: usize,
    pub height: usize,
    /// Root radius in pixels.
    pub root_radius: f64,
    /// Number of branch generations; depth 1 is a single segment.
    pub depth: u32,
    /// Root branch length range in pixels; deeper levels shrink by 0.8 per level.
    pub length_range: (f64, f64),
    /// Deviation of each child from its parent heading, degrees.
    pub angle_range: (f64, f64),
    /// Murray exponent: child radius is `r * 2^(-1/gamma)`.
    pub gamma: f64,
    /// Peak lateral displacement of a branch centerline, pixels.
    pub tortuosity: f64,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            width: 256,
            height: 256,
            root_radius: 4.0,
            depth: 6,
            length_range: (45.0, 70.0),
            angle_range: (20.0, 45.0),
            gamma: 3.0,
            tortuosity: 2.0,
            seed: 0,
        }
    }
}

impl TreeParams {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidParams(m.to_string()));
        if !(self.root_radius >= 1.0) {
            return bad("root radius must be >= 1");
        }
        if self.depth < 1 {
            return bad("depth must be >= 1");
        }
        let (lmin, lmax) = self.length_range;
        if !(lmin > 0.0 && lmax >= lmin) {
            return bad("length range must be positive and ordered");
        }
        let (amin, amax) = self.angle_range;
        if !(amin >= 0.0 && amax >= amin && amax < 180.0) {
            return bad("angle range must be ordered within [0, 180)");
        }
        if !(self.gamma > 0.0) {
            return bad("gamma must be > 0");
        }
        if !(self.tortuosity >= 0.0) {
            return bad("tortuosity must be >= 0");
        }
        let min_side = self.width.min(self.height) as f64;
        if min_side < 2.0 * (self.root_radius + 1.0) + 1.0 {
            return Err(SynthError::CanvasTooSmall {
                width: self.width,
                height: self.height,
                radius: self.root_radius,
            });
        }
        Ok(())
    }

    pub fn child_radius(&self, radius: f64) -> f64 {
        (radius * 2f64.powf(-1.0 / self.gamma)).max(1.0)
    }
}

struct Branch {
    level: u32,
    start: [f64; 2],
    heading: f64,
    radius: f64,
}

pub fn generate_tree(params: &TreeParams) -> Result<BinaryMask, SynthError> {
    params.validate()?;
    let dims = Dims::new(&[params.width, params.height])
        .map_err(|e| SynthError::InvalidParams(e.to_string()))?;
    let mut rng = Pcg64::seed_from_u64(params.seed);
    let mut mask = BinaryMask::zeros(dims);

    let (w, h) = (params.width as f64, params.height as f64);
    let root = Branch {
        level: 0,
        start: [(w - 1.0) / 2.0, h - 2.0 - params.root_radius],
        heading: -PI / 2.0 + rng.random_range(-0.15..=0.15),
        radius: params.root_radius,
    };

    // Depth-first, first child before second, so RNG use is fixed by the seed.
    let mut stack = vec![root];
    while let Some(b) = stack.pop() {
        let Some(tip) = grow_branch(&b, params, &mut rng, &mut mask) else {
            continue;
        };
        if b.level + 1 >= params.depth {
            continue;
        }
        let (amin, amax) = params.angle_range;
        let left = rng.random_range(amin..=amax).to_radians();
        let right = rng.random_range(amin..=amax).to_radians();
        let radius = params.child_radius(b.radius);
        let child = |heading| Branch {
            level: b.level + 1,
            start: tip,
            heading,
            radius,
        };
        stack.push(child(b.heading + right));
        stack.push(child(b.heading - left));
    }
    Ok(mask)
}

/// Stamps one branch. Returns its tip, or `None` when the centerline left
/// the canvas (the branch is truncated there and gets no children).
fn grow_branch(
    b: &Branch,
    p: &TreeParams,
    rng: &mut Pcg64,
    mask: &mut BinaryMask,
) -> Option<[f64; 2]> {
    let decay = LENGTH_DECAY.powi(b.level as i32);
    let (lmin, lmax) = p.length_range;
    let length = rng.random_range(lmin..=lmax) * decay;
    let phase = rng.random_range(0.0..2.0 * PI);
    let waves = rng.random_range(0.5..2.0);

    let dir = [b.heading.cos(), b.heading.sin()];
    let normal = [-dir[1], dir[0]];
    let steps = (length / 0.25).ceil() as usize;
    let (w, h) = (p.width as f64, p.height as f64);
    let mut prev = b.start;
    for s in 1..=steps {
        let t = s as f64 / steps as f64;
        let offset = p.tortuosity * (PI * t).sin() * (2.0 * PI * waves * t + phase).sin();
        let q = [
            b.start[0] + t * length * dir[0] + offset * normal[0],
            b.start[1] + t * length * dir[1] + offset * normal[1],
        ];
        if q[0] < 0.0 || q[1] < 0.0 || q[0] > w - 1.0 || q[1] > h - 1.0 {
            return None;
        }
        stamp_segment(mask, [prev[0], prev[1], 0.0], [q[0], q[1], 0.0], b.radius);
        prev = q;
    }
    Some(prev)
}
