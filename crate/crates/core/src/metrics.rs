//! Segmentation quality: Dice, average symmetric surface distance, relative
//! component-count error and ROC AUC, plus table output.
//!
//! Distances are in voxel units (unit isotropic spacing). The surface of a
//! mask is its set of foreground voxels with at least one face-adjacent
//! background voxel; voxels outside the grid count as background.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{check_same_dims, BinaryMask, ImageError, ScalarGrid};
use crate::morphology::{connected_components, neighbors, squared_distance_to_set, Connectivity};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("surface distance undefined: {0} mask is empty")]
    EmptyMask(&'static str),
    #[error("reference has no connected component")]
    ZeroReferenceComponents,
    #[error("reference has a single class")]
    DegenerateReference,
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
}

impl From<ImageError> for MetricsError {
    fn from(e: ImageError) -> Self {
        MetricsError::ShapeMismatch(e.to_string())
    }
}

pub fn dice(seg: &BinaryMask, reference: &BinaryMask) -> Result<f64, MetricsError> {
    check_same_dims(seg.dims(), reference.dims())?;
    let (a, b) = (seg.count(), reference.count());
    if a + b == 0 {
        return Ok(1.0);
    }
    let both = seg
        .data()
        .iter()
        .zip(reference.data())
        .filter(|(x, y)| **x != 0 && **y != 0)
        .count();
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Foreground voxels with a face-adjacent background (or out-of-grid) voxel.
pub fn surface(mask: &BinaryMask) -> BinaryMask {
    let dims = mask.dims();
    let faces = 2 * dims.ndim();
    BinaryMask::from_fn(dims, |c| {
        if !mask.get(c) {
            return false;
        }
        let inside: Vec<_> = neighbors(dims, c, Connectivity::Face).collect();
        inside.len() < faces || inside.iter().any(|&n| !mask.get(n))
    })
}

/// Average symmetric surface distance: the mean, over both surfaces pooled,
/// of each surface voxel's distance to the other surface.
pub fn assd(seg: &BinaryMask, reference: &BinaryMask) -> Result<f64, MetricsError> {
    check_same_dims(seg.dims(), reference.dims())?;
    if !seg.has_foreground() {
        return Err(MetricsError::EmptyMask("segmentation"));
    }
    if !reference.has_foreground() {
        return Err(MetricsError::EmptyMask("reference"));
    }
    let sa = surface(seg);
    let sb = surface(reference);
    let to_b = squared_distance_to_set(&sb).expect("non-empty mask has a surface");
    let to_a = squared_distance_to_set(&sa).expect("non-empty mask has a surface");
    let mut total = 0.0;
    let mut n = 0usize;
    for i in sa.foreground_indices() {
        total += to_b[i].sqrt();
        n += 1;
    }
    for i in sb.foreground_indices() {
        total += to_a[i].sqrt();
        n += 1;
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beta0Error {
    pub beta0: usize,
    pub beta0_gt: usize,
    pub eps: f64,
}

/// `|β0 - β0_gt| / β0_gt` with components counted under full connectivity.
pub fn beta0_error(seg: &BinaryMask, reference: &BinaryMask) -> Result<Beta0Error, MetricsError> {
    check_same_dims(seg.dims(), reference.dims())?;
    let beta0_gt = connected_components(reference, Connectivity::Full).count();
    if beta0_gt == 0 {
        return Err(MetricsError::ZeroReferenceComponents);
    }
    let beta0 = connected_components(seg, Connectivity::Full).count();
    let eps = (beta0 as f64 - beta0_gt as f64).abs() / beta0_gt as f64;
    Ok(Beta0Error {
        beta0,
        beta0_gt,
        eps,
    })
}

/// Area under the ROC curve, by trapezoids over the distinct thresholds.
///
/// Ties between a foreground and a background voxel count one half, so the
/// result equals the Mann-Whitney statistic. Trapezoid areas are accumulated
/// as integers (twice the area in units of one TP x FP cell) and divided once.
pub fn auc(prob: &ScalarGrid, reference: &BinaryMask) -> Result<f64, MetricsError> {
    check_same_dims(prob.dims(), reference.dims())?;
    if let Some(&v) = prob.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(MetricsError::InvalidProbability(v));
    }
    let positives = reference.count() as u128;
    let negatives = reference.len() as u128 - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::DegenerateReference);
    }
    let mut order: Vec<usize> = (0..prob.data().len()).collect();
    order.sort_by(|&a, &b| prob.get_index(b).total_cmp(&prob.get_index(a)));

    let (mut tp, mut fp) = (0u128, 0u128);
    let mut twice_area = 0u128;
    let mut k = 0;
    while k < order.len() {
        let threshold = prob.get_index(order[k]);
        let (tp0, fp0) = (tp, fp);
        while k < order.len() && prob.get_index(order[k]) == threshold {
            if reference.get_index(order[k]) {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        twice_area += (fp - fp0) * (tp + tp0);
    }
    Ok(twice_area as f64 / (2 * positives * negatives) as f64)
}

/// All metrics for one segmentation against one reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dsc: f64,
    /// Absent when either mask is empty; the reason is in `notes`.
    pub assd: Option<f64>,
    pub beta0: usize,
    pub beta0_gt: usize,
    /// Absent when the reference has no component.
    pub eps_beta0: Option<f64>,
    /// Present only when a probability map was supplied.
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub const CSV_COLUMNS: [&str; 6] = ["dsc", "assd", "beta0", "beta0_gt", "eps_beta0", "auc"];

pub fn report(
    seg: &BinaryMask,
    reference: &BinaryMask,
    prob: Option<&ScalarGrid>,
) -> Result<MetricsReport, MetricsError> {
    let dsc = dice(seg, reference)?;
    let mut notes = Vec::new();
    let assd = match assd(seg, reference) {
        Ok(v) => Some(v),
        Err(e @ MetricsError::EmptyMask(_)) => {
            notes.push(format!("assd: {e}"));
            None
        }
        Err(e) => return Err(e),
    };
    let (beta0, beta0_gt, eps_beta0) = match beta0_error(seg, reference) {
        Ok(b) => (b.beta0, b.beta0_gt, Some(b.eps)),
        Err(MetricsError::ZeroReferenceComponents) => {
            notes.push("eps_beta0: reference has no component".to_string());
            (
                connected_components(seg, Connectivity::Full).count(),
                0,
                None,
            )
        }
        Err(e) => return Err(e),
    };
    let auc = prob.map(|p| auc(p, reference)).transpose()?;
    Ok(MetricsReport {
        dsc,
        assd,
        beta0,
        beta0_gt,
        eps_beta0,
        auc,
        notes,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.dsc,
            cell(self.assd),
            self.beta0,
            self.beta0_gt,
            cell(self.eps_beta0),
            cell(self.auc)
        )
    }
}

/// Mean and sample standard deviation over the present values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn summarize(values: impl IntoIterator<Item = f64>) -> Option<Summary> {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Summary { mean, std, n })
}

/// Column-wise summaries of a batch, in CSV column order.
pub fn summarize_batch(reports: &[MetricsReport]) -> [Option<Summary>; 6] {
    [
        summarize(reports.iter().map(|r| r.dsc)),
        summarize(reports.iter().filter_map(|r| r.assd)),
        summarize(reports.iter().map(|r| r.beta0 as f64)),
        summarize(reports.iter().map(|r| r.beta0_gt as f64)),
        summarize(reports.iter().filter_map(|r| r.eps_beta0)),
        summarize(reports.iter().filter_map(|r| r.auc)),
    ]
}

/// CSV for one report: header plus one row, LF line endings.
pub fn report_csv(report: &MetricsReport) -> String {
    format!("{}\n{}\n", CSV_COLUMNS.join(","), report.csv_row())
}

/// Per-image rows followed by `mean` and `std` rows.
pub fn batch_csv(rows: &[(String, MetricsReport)]) -> String {
    let mut out = format!("image,{}\n", CSV_COLUMNS.join(","));
    for (name, r) in rows {
        let _ = writeln!(out, "{name},{}", r.csv_row());
    }
    let reports: Vec<MetricsReport> = rows.iter().map(|(_, r)| r.clone()).collect();
    let summaries = summarize_batch(&reports);
    for (label, pick) in [("mean", 0), ("std", 1)] {
        let cells: Vec<String> = summaries
            .iter()
            .map(|s| {
                s.map(|s| if pick == 0 { s.mean } else { s.std }.to_string())
                    .unwrap_or_default()
            })
            .collect();
        let _ = writeln!(out, "{label},{}", cells.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{Coord, Dims};

    fn mask(dims: Dims, pts: &[(usize, usize)]) -> BinaryMask {
        BinaryMask::from_coords(dims, pts.iter().map(|&(x, y)| Coord::d2(x, y)))
    }

    #[test]
    fn dice_cases() {
        let d = Dims::d2(6, 2);
        let a = mask(d, &[(0, 0), (1, 0), (2, 0), (3, 0), (4, 0), (5, 0)]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = mask(d, &[(0, 1), (1, 1)]);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let c = mask(d, &[(0, 0), (1, 0), (2, 0), (0, 1)]);
        assert_eq!(dice(&a, &c).unwrap(), 0.6);
        let e = BinaryMask::zeros(d);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(matches!(
            dice(&a, &BinaryMask::zeros(Dims::d2(2, 6))),
            Err(MetricsError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn assd_cases() {
        let d = Dims::d2(10, 3);
        let a = mask(d, &[(1, 1)]);
        let b = mask(d, &[(6, 1)]);
        assert_eq!(assd(&a, &a).unwrap(), 0.0);
        assert_eq!(assd(&a, &b).unwrap(), 5.0);
        assert!(matches!(
            assd(&BinaryMask::zeros(d), &a),
            Err(MetricsError::EmptyMask(_))
        ));
        assert!(matches!(
            assd(&a, &BinaryMask::zeros(d)),
            Err(MetricsError::EmptyMask(_))
        ));
    }

    #[test]
    fn surface_excludes_interior() {
        let d = Dims::d2(5, 5);
        let block = BinaryMask::from_fn(d, |c| (1..4).contains(&c.x()) && (1..4).contains(&c.y()));
        let s = surface(&block);
        assert_eq!(s.count(), 8);
        assert!(!s.get(Coord::d2(2, 2)));
        // touching the border counts as surface
        assert_eq!(surface(&BinaryMask::ones(d)).count(), 16);
    }

    #[test]
    fn beta0_cases() {
        let d = Dims::d2(9, 1);
        let r = mask(d, &[(0, 0), (2, 0)]);
        let s = mask(d, &[(0, 0), (2, 0), (4, 0), (6, 0), (8, 0)]);
        let b = beta0_error(&s, &r).unwrap();
        assert_eq!((b.beta0, b.beta0_gt, b.eps), (5, 2, 1.5));
        assert_eq!(beta0_error(&r, &r).unwrap().eps, 0.0);
        assert_eq!(
            beta0_error(&r, &BinaryMask::zeros(d)),
            Err(MetricsError::ZeroReferenceComponents)
        );
    }

    #[test]
    fn auc_cases() {
        let d = Dims::d2(4, 4);
        let r = BinaryMask::from_fn(d, |c| c.x() < 2);
        assert_eq!(auc(&ScalarGrid::from_mask(&r), &r).unwrap(), 1.0);
        let flat = ScalarGrid::new(d, vec![0.5; 16]).unwrap();
        assert_eq!(auc(&flat, &r).unwrap(), 0.5);
        assert_eq!(
            auc(&flat, &BinaryMask::zeros(d)),
            Err(MetricsError::DegenerateReference)
        );
        let over = ScalarGrid::new(d, vec![2.0; 16]).unwrap();
        assert!(matches!(
            auc(&over, &r),
            Err(MetricsError::InvalidProbability(_))
        ));
        let inverted = ScalarGrid::from_mask(&BinaryMask::from_fn(d, |c| c.x() >= 2));
        assert_eq!(auc(&inverted, &r).unwrap(), 0.0);
    }

    #[test]
    fn report_identity_and_empty_segmentation() {
        let d = Dims::d2(8, 8);
        let r = mask(d, &[(1, 1), (1, 2), (5, 5)]);
        let rep = report(&r, &r, None).unwrap();
        assert_eq!(
            (rep.dsc, rep.assd, rep.beta0, rep.beta0_gt, rep.eps_beta0),
            (1.0, Some(0.0), 2, 2, Some(0.0))
        );
        assert_eq!(rep.auc, None);
        assert_eq!(
            report_csv(&rep),
            "dsc,assd,beta0,beta0_gt,eps_beta0,auc\n1,0,2,2,0,\n"
        );

        let empty = report(&BinaryMask::zeros(d), &r, None).unwrap();
        assert_eq!(empty.dsc, 0.0);
        assert_eq!(empty.assd, None);
        assert_eq!(empty.notes.len(), 1);
        assert_eq!(empty.eps_beta0, Some(1.0));

        let with_prob = report(&r, &r, Some(&ScalarGrid::from_mask(&r))).unwrap();
        assert_eq!(with_prob.auc, Some(1.0));
    }

    #[test]
    fn batch_summary_rows() {
        let row = |dsc: f64, b: usize| MetricsReport {
            dsc,
            assd: Some(dsc * 2.0),
            beta0: b,
            beta0_gt: 1,
            eps_beta0: Some(b as f64 - 1.0),
            auc: None,
            notes: vec![],
        };
        let rows = vec![
            ("a".to_string(), row(0.5, 1)),
            ("b".to_string(), row(0.75, 3)),
            ("c".to_string(), row(1.0, 5)),
        ];
        let csv = batch_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "image,dsc,assd,beta0,beta0_gt,eps_beta0,auc");
        assert_eq!(lines.len(), 6);
        // hand computed: mean dsc 0.75, sample std 0.25; beta0 mean 3 std 2
        assert_eq!(lines[4], "mean,0.75,1.5,3,1,2,");
        assert_eq!(lines[5], "std,0.25,0.5,2,0,2,");
    }
}
