//! Ablation and convergence harnesses over a corpus of connected trees.
//!
//! Every test-size column cuts the whole corpus once; all train-size rows are
//! evaluated on that same damaged corpus, so the `before` row is a common
//! baseline. Images are processed in parallel and results are always
//! reported in corpus order.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::disconnect::{generate_pair, DisconnectError, DisconnectedSample, DisconnectionSpec};
use crate::image::BinaryMask;
use crate::metrics::{report, summarize, MetricsError, MetricsReport, Summary};
use crate::reconnect::{iterate_with, IterateOptions, ReconnectError, Reconnector};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("no operator for train size {0}")]
    MissingOperator(f64),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("image {index}: {source}")]
    Disconnect {
        index: usize,
        #[source]
        source: DisconnectError,
    },
    #[error("image {index}: {source}")]
    Reconnect {
        index: usize,
        #[source]
        source: ReconnectError,
    },
    #[error("image {index}: {source}")]
    Metrics {
        index: usize,
        #[source]
        source: MetricsError,
    },
}

/// How an operator is applied to a damaged image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Application {
    Once,
    Iterate(IterateOptions),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub train_sizes: Vec<f64>,
    pub test_sizes: Vec<f64>,
    /// Damage parameters for the test side; `s` and `seed` are overridden per column.
    pub test_spec: DisconnectionSpec,
    pub seed: u64,
    pub application: Application,
}

impl ExperimentPlan {
    pub fn new(train_sizes: Vec<f64>, test_sizes: Vec<f64>, seed: u64) -> Self {
        ExperimentPlan {
            train_sizes,
            test_sizes,
            test_spec: DisconnectionSpec::default(),
            seed,
            application: Application::Once,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |v: &[f64]| v.is_empty() || v.iter().any(|s| !(s.is_finite() && *s > 0.0));
        if bad(&self.train_sizes) || bad(&self.test_sizes) {
            return Err(ExperimentError::InvalidPlan(
                "sizes must be non-empty and positive".into(),
            ));
        }
        for v in [&self.train_sizes, &self.test_sizes] {
            for (i, a) in v.iter().enumerate() {
                if v[..i].contains(a) {
                    return Err(ExperimentError::InvalidPlan(format!(
                        "size {a} listed twice"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Damage spec for image `k` of test column `column`.
    pub fn cell_spec(&self, column: usize, k: usize) -> DisconnectionSpec {
        DisconnectionSpec {
            s: self.test_sizes[column],
            seed: derive_seed(self.seed, column as u64, k as u64),
            ..self.test_spec.clone()
        }
    }
}

/// Distinct, well-mixed seed per `(base, column, image)`.
pub fn derive_seed(base: u64, column: u64, image: u64) -> u64 {
    // splitmix64 finalizer over a combination of the three
    let mut z = base
        ^ column.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ image.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean and std of one metric over a cell's images; `None` when no image
/// produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub dsc: Option<Summary>,
    pub assd: Option<Summary>,
    pub eps_beta0: Option<Summary>,
}

impl CellSummary {
    pub fn of(reports: &[MetricsReport]) -> Self {
        CellSummary {
            dsc: summarize(reports.iter().map(|r| r.dsc)),
            assd: summarize(reports.iter().filter_map(|r| r.assd)),
            eps_beta0: summarize(reports.iter().filter_map(|r| r.eps_beta0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub test_sizes: Vec<f64>,
    /// Row label (`before` or the train size) and one summary per test size.
    pub rows: Vec<(String, Vec<CellSummary>)>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&[CellSummary]> {
        self.rows
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, r)| r.as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("train");
        for s in &self.test_sizes {
            for m in ["dsc", "assd", "eps_beta0"] {
                write!(out, ",test_{s}_{m}_mean,test_{s}_{m}_std").unwrap();
            }
        }
        out.push('\n');
        for (label, cells) in &self.rows {
            out.push_str(label);
            for c in cells {
                for s in [c.dsc, c.assd, c.eps_beta0] {
                    match s {
                        Some(s) => write!(out, ",{},{}", s.mean, s.std).unwrap(),
                        None => out.push_str(",,"),
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Cut every tree with `spec_for(k)`, in parallel, keeping corpus order.
pub fn cut_corpus(
    trees: &[BinaryMask],
    spec_for: impl Fn(usize) -> DisconnectionSpec + Sync,
) -> Result<Vec<DisconnectedSample>, ExperimentError> {
    trees
        .par_iter()
        .enumerate()
        .map(|(k, t)| {
            generate_pair(t, &spec_for(k))
                .map_err(|source| ExperimentError::Disconnect { index: k, source })
        })
        .collect()
}

fn apply(
    op: &dyn Reconnector,
    mask: &BinaryMask,
    how: Application,
) -> Result<BinaryMask, ReconnectError> {
    match how {
        Application::Once => op.apply(mask),
        Application::Iterate(opts) => iterate_with(op, mask, opts, None, |_, _| {}).map(|(m, _)| m),
    }
}

fn evaluate(
    op: Option<&dyn Reconnector>,
    samples: &[DisconnectedSample],
    how: Application,
) -> Result<Vec<MetricsReport>, ExperimentError> {
    samples
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let out = match op {
                Some(op) => apply(op, &s.disconnected, how)
                    .map_err(|source| ExperimentError::Reconnect { index: k, source })?,
                None => s.disconnected.clone(),
            };
            report(&out, &s.connected, None)
                .map_err(|source| ExperimentError::Metrics { index: k, source })
        })
        .collect()
}

/// Table of `before` plus one row per train size, one column group per test size.
///
/// `operators` pairs each train size with the operator trained (or tuned) for it.
pub fn run_ablation(
    trees: &[BinaryMask],
    plan: &ExperimentPlan,
    operators: &[(f64, &dyn Reconnector)],
) -> Result<AblationTable, ExperimentError> {
    plan.validate()?;
    if trees.is_empty() {
        return Err(ExperimentError::InvalidPlan("no images".into()));
    }
    let ops: Vec<&dyn Reconnector> = plan
        .train_sizes
        .iter()
        .map(|s| {
            operators
                .iter()
                .find(|(t, _)| t == s)
                .map(|(_, op)| *op)
                .ok_or(ExperimentError::MissingOperator(*s))
        })
        .collect::<Result<_, _>>()?;

    let mut before = Vec::new();
    let mut after = vec![Vec::new(); ops.len()];
    for column in 0..plan.test_sizes.len() {
        let samples = cut_corpus(trees, |k| plan.cell_spec(column, k))?;
        before.push(CellSummary::of(&evaluate(
            None,
            &samples,
            plan.application,
        )?));
        for (row, op) in ops.iter().enumerate() {
            after[row].push(CellSummary::of(&evaluate(
                Some(*op),
                &samples,
                plan.application,
            )?));
        }
    }
    let mut rows = vec![("before".to_string(), before)];
    rows.extend(
        plan.train_sizes
            .iter()
            .zip(after)
            .map(|(s, cells)| (s.to_string(), cells)),
    );
    Ok(AblationTable {
        test_sizes: plan.test_sizes.clone(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub image: String,
    pub iter: usize,
    pub diff: usize,
    pub dsc: f64,
    pub assd: Option<f64>,
    pub eps_beta0: Option<f64>,
}

pub const CONVERGENCE_COLUMNS: &str = "image,iter,diff,dsc,assd,eps_beta0";

/// Per-image outcome of a convergence run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRun {
    pub image: String,
    pub converged: bool,
    pub rows: Vec<ConvergenceRow>,
    /// Voxels changed by one more application of the operator to the final
    /// mask; zero at a true fixed point.
    pub extra_step_diff: usize,
}

/// Iterates `op` on each `(name, damaged, reference)` image, one row per step.
pub fn run_convergence(
    op: &dyn Reconnector,
    images: &[(String, BinaryMask, BinaryMask)],
    options: IterateOptions,
) -> Result<Vec<ConvergenceRun>, ExperimentError> {
    if images.is_empty() {
        return Err(ExperimentError::InvalidPlan("no images".into()));
    }
    images
        .par_iter()
        .enumerate()
        .map(|(k, (name, damaged, reference))| {
            let wrap = |source| ExperimentError::Reconnect { index: k, source };
            let (last, trace) =
                iterate_with(op, damaged, options, Some(reference), |_, _| {}).map_err(wrap)?;
            let again = op.apply(&last).map_err(wrap)?;
            let extra_step_diff = crate::image::voxel_diff_count(&again, &last)
                .map_err(|e| wrap(ReconnectError::InvalidArgument(e.to_string())))?;
            let rows = trace
                .diffs
                .iter()
                .zip(&trace.metrics)
                .enumerate()
                .map(|(i, (&diff, m))| ConvergenceRow {
                    image: name.clone(),
                    iter: i + 1,
                    diff,
                    dsc: m.dsc,
                    assd: m.assd,
                    eps_beta0: m.eps_beta0,
                })
                .collect();
            Ok(ConvergenceRun {
                image: name.clone(),
                converged: trace.converged,
                rows,
                extra_step_diff,
            })
        })
        .collect()
}

pub fn convergence_csv(runs: &[ConvergenceRun]) -> String {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut out = format!("{CONVERGENCE_COLUMNS}\n");
    for r in runs.iter().flat_map(|run| &run.rows) {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.image,
            r.iter,
            r.diff,
            r.dsc,
            opt(r.assd),
            opt(r.eps_beta0)
        )
        .unwrap();
    }
    out
}
