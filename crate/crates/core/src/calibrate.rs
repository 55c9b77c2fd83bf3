//! Per-patient line calibration with lateral-distance matching.
//!
//! A training set holds one least-squares line `spo2 = slope * r + intercept`
//! per wide-range patient. A new patient supplies five (R, SpO2) pairs from
//! the 90-95 % band; each pair votes for the line with the smallest lateral
//! distance (the R-axis gap between the point and the line at that SpO2), and
//! the line with the most votes models the patient from then on.

use crate::ratio::WindowSample;
use crate::{SPO2_MAX, SPO2_MIN};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Patients whose SpO2 span does not exceed this are kept out of the
/// training set.
pub const DEFAULT_MIN_RANGE_SPO2: f64 = 15.0;
/// SpO2 band the calibration points are drawn from.
pub const DEFAULT_CALIBRATION_BAND: (f64, f64) = (90.0, 95.0);
/// Number of calibration points.
pub const CALIBRATION_POINTS: usize = 5;
/// Slopes flatter than this are treated as degenerate.
pub const MIN_SLOPE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("line for {patient_id} is degenerate (|slope| < {MIN_SLOPE})")]
    DegenerateLine { patient_id: String },
    #[error("SpO2 span {span:.2} does not exceed the admission threshold {min_range:.2}")]
    RangeTooNarrow { span: f64, min_range: f64 },
    #[error("no patient qualified for the training set")]
    EmptyTrainingSet,
    #[error("duplicate patient id {0} in training set")]
    DuplicatePatient(String),
    #[error("calibration needs exactly {CALIBRATION_POINTS} points, got {0}")]
    WrongPointCount(usize),
    #[error("calibration point SpO2 {spo2} outside band [{lo}, {hi}]")]
    PointOutOfBand { spo2: f64, lo: f64, hi: f64 },
    #[error("calibration point R {0} must be finite and positive")]
    BadPointR(f64),
    #[error("only {found} usable windows in the calibration band, need {CALIBRATION_POINTS}")]
    InsufficientCalibrationPoints { found: usize },
}

/// Least-squares SpO2-vs-R line for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientLine {
    pub patient_id: String,
    pub slope: f64,
    pub intercept: f64,
    pub n_points: usize,
    pub fit_r2: f64,
}

impl PatientLine {
    /// The R this line assigns to a given SpO2.
    pub fn r_at(&self, spo2: f64) -> f64 {
        (spo2 - self.intercept) / self.slope
    }

    /// Unclamped SpO2 prediction.
    pub fn spo2_at(&self, r: f64) -> f64 {
        self.slope * r + self.intercept
    }
}

/// Why a patient was left out of the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum ExclusionReason {
    RangeTooNarrow { span: f64 },
    DegenerateFit { detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedPatient {
    pub patient_id: String,
    #[serde(flatten)]
    pub reason: ExclusionReason,
}

/// The training set: one line per admitted patient, plus the exclusion log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub lines: Vec<PatientLine>,
    pub min_range_spo2: f64,
    pub excluded: Vec<ExcludedPatient>,
}

impl TrainingSet {
    pub fn new(
        lines: Vec<PatientLine>,
        min_range_spo2: f64,
        excluded: Vec<ExcludedPatient>,
    ) -> Result<Self, CalibrateError> {
        if lines.is_empty() {
            return Err(CalibrateError::EmptyTrainingSet);
        }
        let mut ids = BTreeSet::new();
        for l in &lines {
            if l.slope.abs() < MIN_SLOPE {
                return Err(CalibrateError::DegenerateLine {
                    patient_id: l.patient_id.clone(),
                });
            }
            if !ids.insert(l.patient_id.as_str()) {
                return Err(CalibrateError::DuplicatePatient(l.patient_id.clone()));
            }
        }
        Ok(Self {
            lines,
            min_range_spo2,
            excluded,
        })
    }
}

/// Five (R, SpO2) pairs from a new patient, all inside the calibration band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    points: [(f64, f64); CALIBRATION_POINTS],
}

impl CalibrationSet {
    /// Validates against the default 90-95 band.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, CalibrateError> {
        Self::with_band(points, DEFAULT_CALIBRATION_BAND)
    }

    /// Validates against a caller-supplied band.
    pub fn with_band(points: Vec<(f64, f64)>, band: (f64, f64)) -> Result<Self, CalibrateError> {
        if points.len() != CALIBRATION_POINTS {
            return Err(CalibrateError::WrongPointCount(points.len()));
        }
        for &(r, spo2) in &points {
            if !(r.is_finite() && r > 0.0) {
                return Err(CalibrateError::BadPointR(r));
            }
            if !(spo2 >= band.0 && spo2 <= band.1) {
                return Err(CalibrateError::PointOutOfBand {
                    spo2,
                    lo: band.0,
                    hi: band.1,
                });
            }
        }
        let mut arr = [(0.0, 0.0); CALIBRATION_POINTS];
        arr.copy_from_slice(&points);
        Ok(Self { points: arr })
    }

    pub fn points(&self) -> &[(f64, f64); CALIBRATION_POINTS] {
        &self.points
    }
}

/// Ordinary least squares of SpO2 on R.
pub fn fit_patient_line(
    patient_id: &str,
    pairs: &[(f64, f64)],
) -> Result<PatientLine, CalibrateError> {
    if pairs.len() < 2 {
        return Err(CalibrateError::DegenerateFit(format!(
            "need at least 2 points, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().all(|p| p.0 == pairs[0].0) {
        return Err(CalibrateError::DegenerateFit(
            "all R values are equal".into(),
        ));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for &(x, y) in pairs {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    if !slope.is_finite() || slope.abs() < MIN_SLOPE {
        return Err(CalibrateError::DegenerateFit(format!(
            "slope {slope} below {MIN_SLOPE}"
        )));
    }
    let intercept = my - slope * mx;
    let ss_res: f64 = pairs
        .iter()
        .map(|&(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    let fit_r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(PatientLine {
        patient_id: patient_id.to_string(),
        slope,
        intercept,
        n_points: pairs.len(),
        fit_r2,
    })
}

/// Lateral distance: the absolute R-axis gap between a point and a line at
/// the point's SpO2, `| r - (spo2 - intercept) / slope |`.
pub fn lateral_distance(point: (f64, f64), line: &PatientLine) -> Result<f64, CalibrateError> {
    if line.slope.abs() < MIN_SLOPE {
        return Err(CalibrateError::DegenerateLine {
            patient_id: line.patient_id.clone(),
        });
    }
    Ok((point.0 - line.r_at(point.1)).abs())
}

/// Each calibration point votes for its nearest line by lateral distance;
/// the line with the most votes wins. Ties break by smallest summed LD over
/// all five points, then by patient id, so the result does not depend on the
/// order of lines or points.
pub fn match_line<'a>(
    calibration: &CalibrationSet,
    training: &'a TrainingSet,
) -> Result<&'a PatientLine, CalibrateError> {
    if training.lines.is_empty() {
        return Err(CalibrateError::EmptyTrainingSet);
    }
    let n = training.lines.len();
    let mut votes = vec![0usize; n];
    let mut total_ld = vec![0.0f64; n];
    for &point in calibration.points() {
        let mut best: Option<(f64, usize)> = None;
        for (j, line) in training.lines.iter().enumerate() {
            let ld = lateral_distance(point, line)?;
            total_ld[j] += ld;
            let better = match best {
                None => true,
                Some((best_ld, best_j)) => {
                    ld < best_ld
                        || (ld == best_ld
                            && training.lines[j].patient_id < training.lines[best_j].patient_id)
                }
            };
            if better {
                best = Some((ld, j));
            }
        }
        votes[best.expect("training set is non-empty").1] += 1;
    }
    let mut winner = 0usize;
    for j in 1..n {
        let better = votes[j] > votes[winner]
            || (votes[j] == votes[winner]
                && (total_ld[j] < total_ld[winner]
                    || (total_ld[j] == total_ld[winner]
                        && training.lines[j].patient_id < training.lines[winner].patient_id)));
        if better {
            winner = j;
        }
    }
    Ok(&training.lines[winner])
}

/// SpO2 from the selected line, clamped to [50, 100].
pub fn estimate_spo2(line: &PatientLine, r: f64) -> f64 {
    line.spo2_at(r).clamp(SPO2_MIN, SPO2_MAX)
}

/// Fits every patient and admits those whose SpO2 span strictly exceeds
/// `min_range`. Patient order in the input decides nothing: lines come out
/// sorted by id.
pub fn build_training_set(
    patient_series: &[(String, Vec<(f64, f64)>)],
    min_range: f64,
) -> Result<TrainingSet, CalibrateError> {
    let mut sorted: Vec<&(String, Vec<(f64, f64)>)> = patient_series.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut lines = Vec::new();
    let mut excluded = Vec::new();
    for (patient_id, pairs) in sorted {
        let span = spo2_span(pairs);
        if span.is_nan() || span <= min_range {
            excluded.push(ExcludedPatient {
                patient_id: patient_id.clone(),
                reason: ExclusionReason::RangeTooNarrow { span },
            });
            continue;
        }
        match fit_patient_line(patient_id, pairs) {
            Ok(line) => lines.push(line),
            Err(e) => excluded.push(ExcludedPatient {
                patient_id: patient_id.clone(),
                reason: ExclusionReason::DegenerateFit {
                    detail: e.to_string(),
                },
            }),
        }
    }
    if lines.is_empty() {
        return Err(CalibrateError::EmptyTrainingSet);
    }
    TrainingSet::new(lines, min_range, excluded)
}

fn spo2_span(pairs: &[(f64, f64)]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(_, s) in pairs {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    if pairs.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Picks the five calibration windows for a new patient: non-anomalous
/// labelled windows inside the band, greedily matched to five evenly spaced
/// SpO2 targets (ties break towards the earlier window).
pub fn select_calibration_points(
    samples: &[WindowSample],
    band: (f64, f64),
) -> Result<CalibrationSet, CalibrateError> {
    let candidates: Vec<(f64, f64, usize)> = samples
        .iter()
        .filter(|s| !s.high_dc_anomaly)
        .filter_map(|s| {
            s.ref_spo2
                .filter(|v| *v >= band.0 && *v <= band.1)
                .map(|v| (s.r_value, v, s.window_start))
        })
        .collect();
    if candidates.len() < CALIBRATION_POINTS {
        return Err(CalibrateError::InsufficientCalibrationPoints {
            found: candidates.len(),
        });
    }
    let mut used = vec![false; candidates.len()];
    let mut points = Vec::with_capacity(CALIBRATION_POINTS);
    for i in 0..CALIBRATION_POINTS {
        let target = band.0 + i as f64 * (band.1 - band.0) / (CALIBRATION_POINTS - 1) as f64;
        let mut best: Option<(f64, usize)> = None;
        for (j, &(_, spo2, start)) in candidates.iter().enumerate() {
            if used[j] {
                continue;
            }
            let d = (spo2 - target).abs();
            let better = match best {
                None => true,
                Some((bd, bj)) => d < bd || (d == bd && start < candidates[bj].2),
            };
            if better {
                best = Some((d, j));
            }
        }
        let j = best.expect("at least 5 candidates").1;
        used[j] = true;
        points.push((candidates[j].0, candidates[j].1));
    }
    CalibrationSet::with_band(points, band)
}
