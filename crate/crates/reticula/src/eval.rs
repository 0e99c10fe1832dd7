//! Evaluation against ground truth: per-slice component matching, confusion
//! counts, and the precision/recall report.
//!
//! Counting is strictly per cross-section: a 3D object threading k slices
//! contributes k truth components, and each predicted component is judged on
//! its own slice. The report file records this basis so downstream readers
//! cannot misinterpret the counts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::AnnotationSet;
use crate::detect::{Component, Status};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid match criterion: {0}")]
    BadCriterion(String),
    #[error("annotation sets cover different volumes: {0}")]
    DimensionMismatch(String),
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed report {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_path_to_error::Error<serde_json::Error>,
    },
}

/// True/false positives and false negatives. True negatives are meaningless
/// for sparse blob detection (almost every pixel is background) and are not
/// counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Rule deciding whether a predicted component and a truth component are the
/// same object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchCriterion {
    /// Centroids within `tol` pixels (Euclidean).
    CentroidDistance { tol: f64 },
    /// Pixel-set intersection over union at least `min_iou`.
    PixelOverlap { min_iou: f64 },
}

impl MatchCriterion {
    pub fn centroid_distance(tol: f64) -> Result<Self, EvalError> {
        if !tol.is_finite() || tol < 0.0 {
            return Err(EvalError::BadCriterion(format!(
                "centroid tolerance must be finite and >= 0, got {tol}"
            )));
        }
        Ok(Self::CentroidDistance { tol })
    }

    pub fn pixel_overlap(min_iou: f64) -> Result<Self, EvalError> {
        if !min_iou.is_finite() || min_iou <= 0.0 || min_iou > 1.0 {
            return Err(EvalError::BadCriterion(format!(
                "min_iou must lie in (0, 1], got {min_iou}"
            )));
        }
        Ok(Self::PixelOverlap { min_iou })
    }

    /// Match quality of a candidate pair: lower is better. `None` when the
    /// pair does not qualify at all.
    fn score(&self, pred: &Component, truth: &Component) -> Option<f64> {
        match *self {
            Self::CentroidDistance { tol } => {
                let d = pred.centroid_distance(truth);
                (d <= tol).then_some(d)
            }
            Self::PixelOverlap { min_iou } => {
                let iou = intersection_over_union(pred, truth);
                (iou >= min_iou).then_some(-iou)
            }
        }
    }
}

fn intersection_over_union(a: &Component, b: &Component) -> f64 {
    let set: std::collections::HashSet<(u32, u32)> = a.pixels().iter().copied().collect();
    let inter = b.pixels().iter().filter(|p| set.contains(p)).count();
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Matches predictions against ground truth slice by slice with a greedy
/// one-to-one assignment: qualifying (pred, truth) pairs are consumed in
/// order of ascending score (ties broken by pred id, then truth id), each
/// component matching at most once. Deleted components on either side are
/// ignored; provisional and confirmed predictions both count, so a
/// pre-tracking detection result can be scored the same way as a tracked
/// one.
pub fn match_annotations(
    pred: &AnnotationSet,
    truth: &AnnotationSet,
    m: &MatchCriterion,
) -> Result<ConfusionCounts, EvalError> {
    if pred.width() != truth.width()
        || pred.height() != truth.height()
        || pred.depth() != truth.depth()
    {
        return Err(EvalError::DimensionMismatch(format!(
            "predictions {}x{}x{} vs truth {}x{}x{}",
            pred.width(),
            pred.height(),
            pred.depth(),
            truth.width(),
            truth.height(),
            truth.depth()
        )));
    }
    let mut counts = ConfusionCounts {
        tp: 0,
        fp: 0,
        fn_: 0,
    };
    for z in 0..pred.depth() {
        let preds: Vec<&Component> = pred
            .slice_components(z)
            .iter()
            .filter(|c| c.status() != Status::Deleted)
            .collect();
        let truths: Vec<&Component> = truth
            .slice_components(z)
            .iter()
            .filter(|c| c.status() != Status::Deleted)
            .collect();

        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (pi, p) in preds.iter().enumerate() {
            for (ti, t) in truths.iter().enumerate() {
                if let Some(score) = m.score(p, t) {
                    candidates.push((score, pi, ti));
                }
            }
        }
        candidates.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("scores are finite")
                .then_with(|| preds[a.1].id().cmp(&preds[b.1].id()))
                .then_with(|| truths[a.2].id().cmp(&truths[b.2].id()))
        });

        let mut pred_taken = vec![false; preds.len()];
        let mut truth_taken = vec![false; truths.len()];
        let mut matched = 0u64;
        for (_, pi, ti) in candidates {
            if !pred_taken[pi] && !truth_taken[ti] {
                pred_taken[pi] = true;
                truth_taken[ti] = true;
                matched += 1;
            }
        }
        counts.tp += matched;
        counts.fp += preds.len() as u64 - matched;
        counts.fn_ += truths.len() as u64 - matched;
    }
    Ok(counts)
}

/// tp / (tp + fp); `None` when nothing was predicted, because reporting 0
/// for an empty prediction set would be misleading.
pub fn precision(c: &ConfusionCounts) -> Option<f64> {
    let denom = c.tp + c.fp;
    (denom > 0).then(|| c.tp as f64 / denom as f64)
}

/// tp / (tp + fn); `None` when there is no ground truth to recall.
pub fn recall(c: &ConfusionCounts) -> Option<f64> {
    let denom = c.tp + c.fn_;
    (denom > 0).then(|| c.tp as f64 / denom as f64)
}

/// The counting basis recorded in every report file.
pub const COUNTING_BASIS: &str =
    "per-slice cross-sections: an object spanning k slices counts as k components";

/// What `report.json` holds. Undefined ratios serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub counting: String,
}

impl Report {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        Self {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: precision(c),
            recall: recall(c),
            counting: COUNTING_BASIS.to_string(),
        }
    }
}

pub fn write_report(path: &Path, counts: &ConfusionCounts) -> Result<(), EvalError> {
    let report = Report::from_counts(counts);
    let mut text = serde_json::to_string_pretty(&report).expect("report serialization");
    text.push('\n');
    fs::write(path, text).map_err(|source| EvalError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_report(path: &Path) -> Result<Report, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut deserializer = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut deserializer).map_err(|source| EvalError::Json {
        path: path.to_path_buf(),
        source,
    })
}
