//! Reconnection operators and the fixed-point driver that applies them.
//!
//! An operator maps a binary mask to a binary mask of the same dims. The
//! driver re-feeds the binarized output until two consecutive masks differ
//! by at most `tol` voxels or `max_iter` applications have been made.

mod bridge;
#[cfg(feature = "onnx")]
mod model;

pub use bridge::{bridge_endpoints, endpoint_tangent, EndpointBridger};
#[cfg(feature = "onnx")]
pub use model::{model_reconnector, ModelReconnector, TileOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{voxel_diff_count, BinaryMask, Dims};
use crate::metrics::{self, MetricsError, MetricsReport};

#[derive(Debug, Error)]
pub enum ReconnectError {
    #[error("operator failed at iteration {iteration}: {source}")]
    OperatorFailure {
        iteration: usize,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("operator {name} returned dims {got} for input {expected}")]
    DimensionMismatch {
        name: String,
        expected: Dims,
        got: Dims,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cannot load model: {0}")]
    ModelLoad(String),
    #[error("model output shape {got:?} does not match input shape {expected:?}")]
    ShapeContractViolation {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("inference failed: {0}")]
    Inference(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// A mask-to-mask reconnection step.
pub trait Reconnector: Send + Sync {
    fn name(&self) -> &str;

    fn apply(&self, mask: &BinaryMask) -> Result<BinaryMask, ReconnectError>;
}

impl<T: Reconnector + ?Sized> Reconnector for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn apply(&self, mask: &BinaryMask) -> Result<BinaryMask, ReconnectError> {
        (**self).apply(mask)
    }
}

impl<T: Reconnector + ?Sized> Reconnector for std::sync::Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn apply(&self, mask: &BinaryMask) -> Result<BinaryMask, ReconnectError> {
        (**self).apply(mask)
    }
}

/// Returns its input.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Reconnector for Identity {
    fn name(&self) -> &str {
        "identity"
    }

    fn apply(&self, mask: &BinaryMask) -> Result<BinaryMask, ReconnectError> {
        Ok(mask.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterateOptions {
    pub max_iter: usize,
    /// Stop once consecutive masks differ by at most this many voxels.
    pub tol: usize,
}

impl Default for IterateOptions {
    fn default() -> Self {
        IterateOptions {
            max_iter: 20,
            tol: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iterations: usize,
    /// `diffs[k]` is the voxel difference between the outputs of steps `k`
    /// and `k + 1` (step 0 being the input).
    pub diffs: Vec<usize>,
    pub converged: bool,
    /// Metrics of each step's output against the reference, when one was given.
    #[serde(default)]
    pub metrics: Vec<MetricsReport>,
}

pub fn iterate(
    op: &dyn Reconnector,
    mask: &BinaryMask,
    options: IterateOptions,
) -> Result<(BinaryMask, IterationTrace), ReconnectError> {
    iterate_with(op, mask, options, None, |_, _| {})
}

/// [`iterate`] with optional per-step metrics against `reference` and a
/// callback receiving `(step, output)` after every application.
pub fn iterate_with(
    op: &dyn Reconnector,
    mask: &BinaryMask,
    options: IterateOptions,
    reference: Option<&BinaryMask>,
    mut observe: impl FnMut(usize, &BinaryMask),
) -> Result<(BinaryMask, IterationTrace), ReconnectError> {
    if options.max_iter < 1 {
        return Err(ReconnectError::InvalidArgument(
            "max_iter must be >= 1".into(),
        ));
    }
    let mut current = mask.clone();
    let mut trace = IterationTrace {
        iterations: 0,
        diffs: Vec::new(),
        converged: false,
        metrics: Vec::new(),
    };
    for step in 1..=options.max_iter {
        let next = op.apply(&current).map_err(|e| match e {
            e @ ReconnectError::DimensionMismatch { .. } => e,
            other => ReconnectError::OperatorFailure {
                iteration: step,
                source: Box::new(other),
            },
        })?;
        if next.dims() != current.dims() {
            return Err(ReconnectError::DimensionMismatch {
                name: op.name().to_string(),
                expected: current.dims(),
                got: next.dims(),
            });
        }
        let diff = voxel_diff_count(&next, &current).expect("dims checked");
        trace.iterations = step;
        trace.diffs.push(diff);
        if let Some(r) = reference {
            trace.metrics.push(metrics::report(&next, r, None)?);
        }
        observe(step, &next);
        current = next;
        if diff <= options.tol {
            trace.converged = true;
            break;
        }
    }
    Ok((current, trace))
}
