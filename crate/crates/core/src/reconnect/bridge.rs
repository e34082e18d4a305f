//! Geometric gap bridging between facing skeleton endpoints.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{ReconnectError, Reconnector};
use crate::image::{BinaryMask, Coord};
use crate::morphology::{
    centerline_radii, connected_components, endpoints, neighbors, stamp_segment, Connectivity,
};

/// Skeleton voxels used for the tangent fit at an endpoint.
const TANGENT_SUPPORT: usize = 5;

/// Joins pairs of skeleton endpoints that are close and point at each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "BridgerParams")]
pub struct EndpointBridger {
    /// Largest endpoint separation that may be bridged, voxels.
    pub d_max: f64,
    /// Largest angle between an endpoint tangent and the bridge, degrees.
    pub angle_tol: f64,
    /// Endpoints of different components closer than this are joined
    /// whatever their tangents: over a gap shorter than the tangent support
    /// the fitted direction says little about where the vessel continues.
    pub near_gap: f64,
    #[serde(skip)]
    name: String,
}

impl Default for EndpointBridger {
    fn default() -> Self {
        Self::new(12.0, 35.0)
    }
}

#[derive(Deserialize)]
struct BridgerParams {
    d_max: f64,
    angle_tol: f64,
    #[serde(default = "default_near_gap")]
    near_gap: f64,
}

impl From<BridgerParams> for EndpointBridger {
    fn from(p: BridgerParams) -> Self {
        Self::with_near_gap(p.d_max, p.angle_tol, p.near_gap)
    }
}

fn default_near_gap() -> f64 {
    (TANGENT_SUPPORT - 1) as f64
}

impl EndpointBridger {
    pub fn new(d_max: f64, angle_tol: f64) -> Self {
        Self::with_near_gap(d_max, angle_tol, default_near_gap())
    }

    pub fn with_near_gap(d_max: f64, angle_tol: f64, near_gap: f64) -> Self {
        EndpointBridger {
            d_max,
            angle_tol,
            near_gap,
            name: format!("baseline(d_max={d_max},angle={angle_tol},near={near_gap})"),
        }
    }

    /// Bridged mask together with the endpoint pairs that were joined.
    pub fn bridge(&self, mask: &BinaryMask) -> (BinaryMask, Vec<(Coord, Coord)>) {
        let mut out = mask.clone();
        if !mask.has_foreground() || !mask.has_background() {
            return (out, Vec::new());
        }
        let centerline = centerline_radii(mask).expect("mask has background");
        let skeleton = &centerline.skeleton;
        let tips = endpoints(skeleton);
        let tangents: Vec<Option<[f64; 3]>> = tips
            .iter()
            .map(|&e| endpoint_tangent(skeleton, e))
            .collect();
        let cos_tol = self.angle_tol.to_radians().cos();
        let labels = connected_components(mask, Connectivity::Full);
        let label = |c: Coord| labels.labels()[mask.dims().index(c)];

        let mut pairs = Vec::new();
        for a in 0..tips.len() {
            for b in a + 1..tips.len() {
                let d = tips[a].dist(&tips[b]);
                if d > self.d_max || d == 0.0 {
                    continue;
                }
                let ab = sub(tips[b].as_f64(), tips[a].as_f64());
                let ba = [-ab[0], -ab[1], -ab[2]];
                let near = d <= self.near_gap && label(tips[a]) != label(tips[b]);
                if near
                    || facing(tangents[a], ab, d, cos_tol) && facing(tangents[b], ba, d, cos_tol)
                {
                    pairs.push((d, a, b));
                }
            }
        }
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

        let mut used = vec![false; tips.len()];
        let mut joined = Vec::new();
        for (_, a, b) in pairs {
            if used[a] || used[b] {
                continue;
            }
            used[a] = true;
            used[b] = true;
            let radius = centerline
                .radii
                .get(tips[a])
                .min(centerline.radii.get(tips[b]));
            stamp_segment(&mut out, tips[a].as_f64(), tips[b].as_f64(), radius);
            joined.push((tips[a], tips[b]));
        }
        (out, joined)
    }
}

impl Reconnector for EndpointBridger {
    fn name(&self) -> &str {
        &self.name
    }

    fn apply(&self, mask: &BinaryMask) -> Result<BinaryMask, ReconnectError> {
        Ok(self.bridge(mask).0)
    }
}

pub fn bridge_endpoints(mask: &BinaryMask, d_max: f64, angle_tol: f64) -> BinaryMask {
    EndpointBridger::new(d_max, angle_tol).bridge(mask).0
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// An endpoint without a tangent (isolated voxel) faces every direction.
fn facing(tangent: Option<[f64; 3]>, toward: [f64; 3], len: f64, cos_tol: f64) -> bool {
    match tangent {
        None => true,
        Some(t) => dot(t, toward) / len >= cos_tol - 1e-12,
    }
}

/// Unit direction in which the skeleton leaves through `tip`.
///
/// Least-squares line through the `TANGENT_SUPPORT` skeleton voxels nearest
/// to `tip` along the skeleton, oriented from their centroid toward `tip`.
/// `None` when the tip has no skeleton neighbors.
pub fn endpoint_tangent(skeleton: &BinaryMask, tip: Coord) -> Option<[f64; 3]> {
    let dims = skeleton.dims();
    let mut seen = vec![tip];
    let mut queue = VecDeque::from([tip]);
    while let Some(c) = queue.pop_front() {
        if seen.len() >= TANGENT_SUPPORT {
            break;
        }
        for n in neighbors(dims, c, Connectivity::Full) {
            if skeleton.get(n) && !seen.contains(&n) && seen.len() < TANGENT_SUPPORT {
                seen.push(n);
                queue.push_back(n);
            }
        }
    }
    if seen.len() < 2 {
        return None;
    }
    let pts: Vec<[f64; 3]> = seen.iter().map(|c| c.as_f64()).collect();
    let k = pts.len() as f64;
    let mut centroid = [0.0; 3];
    for p in &pts {
        for a in 0..3 {
            centroid[a] += p[a] / k;
        }
    }
    let mut cov = [[0.0; 3]; 3];
    for p in &pts {
        let d = sub(*p, centroid);
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    let outward = sub(tip.as_f64(), centroid);
    let mut v = if dot(outward, outward) > 1e-12 {
        outward
    } else {
        [1.0, 0.0, 0.0]
    };
    // Power iteration on the scatter matrix.
    for _ in 0..64 {
        let next = [dot(cov[0], v), dot(cov[1], v), dot(cov[2], v)];
        let norm = dot(next, next).sqrt();
        if norm < 1e-12 {
            break;
        }
        v = [next[0] / norm, next[1] / norm, next[2] / norm];
    }
    let norm = dot(v, v).sqrt();
    let mut t = [v[0] / norm, v[1] / norm, v[2] / norm];
    if dot(t, outward) < 0.0 {
        t = [-t[0], -t[1], -t[2]];
    }
    Some(t)
}
