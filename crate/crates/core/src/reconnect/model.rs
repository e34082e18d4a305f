//! Learned reconnection through an ONNX model.
//!
//! The model takes a `1x1xHxW` (or `1x1xDxHxW`) `f32` patch in `[0, 1]` and
//! returns a same-shape map. The mask is covered by overlapping patches
//! (zero-padded at the borders when smaller than a patch), overlapping
//! predictions are averaged, thresholded, and united with the input so a
//! step never deletes voxels.

use std::path::Path;
use std::sync::Arc;

use tract_onnx::prelude::*;

use super::{ReconnectError, Reconnector};
use crate::image::{BinaryMask, ScalarGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct TileOptions {
    /// Patch extent per axis, x first.
    pub patch: Vec<usize>,
    /// Overlap between neighboring patches per axis.
    pub overlap: Vec<usize>,
    /// Voxels with averaged output strictly above this become foreground.
    pub threshold: f64,
}

impl TileOptions {
    pub fn default_2d() -> Self {
        TileOptions {
            patch: vec![64, 64],
            overlap: vec![32, 32],
            threshold: 0.5,
        }
    }

    pub fn default_3d() -> Self {
        TileOptions {
            patch: vec![32, 32, 32],
            overlap: vec![16, 16, 16],
            threshold: 0.5,
        }
    }
}

pub struct ModelReconnector {
    name: String,
    plan: Arc<TypedRunnableModel>,
    tiles: TileOptions,
}

impl std::fmt::Debug for ModelReconnector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelReconnector")
            .field("name", &self.name)
            .field("tiles", &self.tiles)
            .finish()
    }
}

/// Tensor shape `[1, 1, (z,) y, x]` for a patch given x-first.
fn tensor_shape(patch: &[usize]) -> Vec<usize> {
    let mut s = vec![1, 1];
    s.extend(patch.iter().rev());
    s
}

pub fn model_reconnector(
    path: impl AsRef<Path>,
    tiles: TileOptions,
) -> Result<ModelReconnector, ReconnectError> {
    let path = path.as_ref();
    let nd = tiles.patch.len();
    if !(nd == 2 || nd == 3) || tiles.overlap.len() != nd {
        return Err(ReconnectError::InvalidArgument(
            "patch and overlap need 2 or 3 matching extents".into(),
        ));
    }
    if tiles
        .patch
        .iter()
        .zip(&tiles.overlap)
        .any(|(&p, &o)| p == 0 || o >= p)
    {
        return Err(ReconnectError::InvalidArgument(
            "need patch > overlap >= 0 on every axis".into(),
        ));
    }
    let shape = tensor_shape(&tiles.patch);
    let load = |e: TractError| ReconnectError::ModelLoad(format!("{}: {e:#}", path.display()));
    let model = tract_onnx::onnx()
        .model_for_path(path)
        .map_err(load)?
        .with_input_fact(0, f32::fact(&shape).into())
        .map_err(load)?
        .into_optimized()
        .map_err(load)?;
    let output = model.output_fact(0).map_err(load)?;
    let got: Option<Vec<usize>> = output.shape.as_concrete().map(|s| s.to_vec());
    match got {
        Some(g) if g == shape => {}
        Some(g) => {
            return Err(ReconnectError::ShapeContractViolation {
                expected: shape,
                got: g,
            })
        }
        None => {
            return Err(ReconnectError::ModelLoad(
                "model output shape is not concrete".into(),
            ))
        }
    }
    let plan = model.into_runnable().map_err(load)?;
    let name = format!(
        "model({})",
        path.file_name()
            .map(|n| n.to_string_lossy())
            .unwrap_or_default()
    );
    Ok(ModelReconnector { name, plan, tiles })
}

/// Patch origins along one axis: stride `patch - overlap`, last patch flush
/// with the end.
fn origins(extent: usize, patch: usize, overlap: usize) -> Vec<usize> {
    if extent <= patch {
        return vec![0];
    }
    let stride = patch - overlap;
    let mut v: Vec<usize> = (0..)
        .map(|k| k * stride)
        .take_while(|&s| s + patch < extent)
        .collect();
    v.push(extent - patch);
    v
}

impl ModelReconnector {
    pub fn tiles(&self) -> &TileOptions {
        &self.tiles
    }

    /// Blended soft prediction over the whole mask, clamped to `[0, 1]`.
    pub fn predict(&self, mask: &BinaryMask) -> Result<ScalarGrid, ReconnectError> {
        let dims = mask.dims();
        if dims.ndim() != self.tiles.patch.len() {
            return Err(ReconnectError::InvalidArgument(format!(
                "{}D model applied to a {}D mask",
                self.tiles.patch.len(),
                dims.ndim()
            )));
        }
        let ext = dims.extents3();
        let mut patch = [1usize; 3];
        let mut overlap = [0usize; 3];
        let nd = dims.ndim();
        patch[..nd].copy_from_slice(&self.tiles.patch[..nd]);
        overlap[..nd].copy_from_slice(&self.tiles.overlap[..nd]);
        let starts: Vec<Vec<usize>> = (0..3)
            .map(|a| origins(ext[a], patch[a], overlap[a]))
            .collect();
        let shape = tensor_shape(&self.tiles.patch);
        let mut sum = vec![0f64; dims.len()];
        let mut hits = vec![0u32; dims.len()];
        let plen = patch[0] * patch[1] * patch[2];

        for &z0 in &starts[2] {
            for &y0 in &starts[1] {
                for &x0 in &starts[0] {
                    let mut input = vec![0f32; plen];
                    let mut targets = Vec::with_capacity(plen);
                    for dz in 0..patch[2] {
                        for dy in 0..patch[1] {
                            for dx in 0..patch[0] {
                                let (x, y, z) = (x0 + dx, y0 + dy, z0 + dz);
                                let pi = dx + patch[0] * (dy + patch[1] * dz);
                                if x < ext[0] && y < ext[1] && z < ext[2] {
                                    let gi = x + ext[0] * (y + ext[1] * z);
                                    input[pi] = f32::from(mask.data()[gi]);
                                    targets.push((pi, gi));
                                }
                            }
                        }
                    }
                    let out = self.run_patch(&shape, input)?;
                    for (pi, gi) in targets {
                        sum[gi] += f64::from(out[pi]);
                        hits[gi] += 1;
                    }
                }
            }
        }
        let data: Vec<f64> = sum
            .iter()
            .zip(&hits)
            .map(|(s, &h)| (s / f64::from(h)).clamp(0.0, 1.0))
            .collect();
        ScalarGrid::new(dims, data).map_err(|e| ReconnectError::Inference(e.to_string()))
    }

    fn run_patch(&self, shape: &[usize], input: Vec<f32>) -> Result<Vec<f32>, ReconnectError> {
        let infer = |e: TractError| ReconnectError::Inference(format!("{e:#}"));
        let tensor = Tensor::from_shape(shape, &input).map_err(infer)?;
        let result = self.plan.run(tvec!(tensor.into())).map_err(infer)?;
        let view = result[0].to_plain_array_view::<f32>().map_err(infer)?;
        if view.shape() != shape {
            return Err(ReconnectError::ShapeContractViolation {
                expected: shape.to_vec(),
                got: view.shape().to_vec(),
            });
        }
        let out: Vec<f32> = view.iter().copied().collect();
        if let Some(v) = out.iter().find(|v| v.is_nan()) {
            return Err(ReconnectError::Inference(format!("model produced {v}")));
        }
        Ok(out)
    }
}

impl Reconnector for ModelReconnector {
    fn name(&self) -> &str {
        &self.name
    }

    fn apply(&self, mask: &BinaryMask) -> Result<BinaryMask, ReconnectError> {
        let predicted = self.predict(mask)?.threshold(self.tiles.threshold);
        Ok(predicted.union(mask).expect("same dims"))
    }
}
