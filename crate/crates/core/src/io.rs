//! File formats shared by the CLI stages.
//!
//! CSV schemas:
//! - waveform: `t,red,ir`
//! - truth sidecar: `t,spo2`
//! - window diagnostics: `start_index,score,passed,n_peaks_red,n_peaks_ir`
//! - pairs: `window_start,r_value,ref_spo2,high_dc_anomaly`
//! - features: pairs joined with the per-window feature vector
//! - calibration: `r_value,spo2` (exactly 5 rows)
//! - predictions: per-window predicted vs reference SpO2 plus the matched
//!   line id
//!
//! JSON documents: the cohort manifest and the persisted training set.
//! Floats are written with the shortest round-trip formatting, so rerunning
//! a stage on identical inputs reproduces files byte for byte.

use crate::baseline::FeatureVector;
use crate::calibrate::TrainingSet;
use crate::evaluate::{AgreementReport, BoxStats, PerPatientMae};
use crate::preprocess::{PpgRecord, ProbeSite, Window};
use crate::ratio::WindowSample;
use crate::synth::{CohortConfig, PatientProfile, Spo2Trajectory};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, source: csv::Error) -> IoError {
    IoError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn parse_f64(path: &Path, line: usize, field: &str, value: &str) -> Result<f64, IoError> {
    value
        .trim()
        .parse::<f64>()
        .map_err(|e| parse_err(path, line, format!("bad {field} value {value:?}: {e}")))
}

fn parse_usize(path: &Path, line: usize, field: &str, value: &str) -> Result<usize, IoError> {
    value
        .trim()
        .parse::<usize>()
        .map_err(|e| parse_err(path, line, format!("bad {field} value {value:?}: {e}")))
}

fn parse_bool(path: &Path, line: usize, field: &str, value: &str) -> Result<bool, IoError> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(parse_err(
            path,
            line,
            format!("bad {field} value {other:?}: expected true or false"),
        )),
    }
}

fn expect_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<(), IoError> {
    let got_cols: Vec<&str> = got.iter().map(str::trim).collect();
    if got_cols != want {
        return Err(parse_err(
            path,
            1,
            format!("unexpected header {got_cols:?}, want {want:?}"),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Waveforms and truth
// ---------------------------------------------------------------------------

pub fn write_waveform_csv(path: &Path, rec: &PpgRecord) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["t", "red", "ir"])
        .map_err(|e| csv_err(path, e))?;
    for k in 0..rec.len() {
        let t = k as f64 / rec.rate;
        w.write_record([
            format!("{t}"),
            format!("{}", rec.red[k]),
            format!("{}", rec.ir[k]),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

/// Reads a `t,red,ir` waveform. The sampling rate comes from the caller (the
/// manifest or a flag); the `t` column is carried for humans and plotting.
pub fn read_waveform_csv(
    path: &Path,
    patient_id: &str,
    rate: f64,
    site: ProbeSite,
) -> Result<PpgRecord, IoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    expect_header(
        path,
        rdr.headers().map_err(|e| csv_err(path, e))?,
        &["t", "red", "ir"],
    )?;
    let mut red = Vec::new();
    let mut ir = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2; // header is line 1
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.len() != 3 {
            return Err(parse_err(
                path,
                line,
                format!("expected 3 fields, got {}", row.len()),
            ));
        }
        red.push(parse_f64(path, line, "red", &row[1])?);
        ir.push(parse_f64(path, line, "ir", &row[2])?);
    }
    if red.is_empty() {
        return Err(parse_err(path, 2, "waveform has no samples"));
    }
    Ok(PpgRecord {
        patient_id: patient_id.to_string(),
        rate,
        red,
        ir,
        site,
    })
}

pub fn write_truth_csv(path: &Path, rate: f64, truth: &[f64]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["t", "spo2"])
        .map_err(|e| csv_err(path, e))?;
    for (k, v) in truth.iter().enumerate() {
        let t = k as f64 / rate;
        w.write_record([format!("{t}"), format!("{v}")])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

// ---------------------------------------------------------------------------
// Window diagnostics and pairs
// ---------------------------------------------------------------------------

pub fn write_diagnostics_csv(path: &Path, windows: &[Window]) -> Result<(), IoError> {
    use crate::preprocess::ExtremumKind;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "start_index",
        "score",
        "passed",
        "n_peaks_red",
        "n_peaks_ir",
    ])
    .map_err(|e| csv_err(path, e))?;
    for win in windows {
        let peaks = |ex: &[crate::preprocess::Extremum]| {
            ex.iter().filter(|e| e.kind == ExtremumKind::Peak).count()
        };
        w.write_record([
            format!("{}", win.start_index),
            format!("{}", win.quality.score),
            format!("{}", win.quality.passed),
            format!("{}", peaks(&win.red_extrema)),
            format!("{}", peaks(&win.ir_extrema)),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

pub fn write_pairs_csv(path: &Path, samples: &[WindowSample]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["window_start", "r_value", "ref_spo2", "high_dc_anomaly"])
        .map_err(|e| csv_err(path, e))?;
    for s in samples {
        w.write_record([
            format!("{}", s.window_start),
            format!("{}", s.r_value),
            s.ref_spo2.map_or(String::new(), |v| format!("{v}")),
            format!("{}", s.high_dc_anomaly),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

pub fn read_pairs_csv(path: &Path) -> Result<Vec<WindowSample>, IoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    expect_header(
        path,
        rdr.headers().map_err(|e| csv_err(path, e))?,
        &["window_start", "r_value", "ref_spo2", "high_dc_anomaly"],
    )?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.len() != 4 {
            return Err(parse_err(
                path,
                line,
                format!("expected 4 fields, got {}", row.len()),
            ));
        }
        let ref_spo2 = if row[2].trim().is_empty() {
            None
        } else {
            Some(parse_f64(path, line, "ref_spo2", &row[2])?)
        };
        out.push(WindowSample {
            window_start: parse_usize(path, line, "window_start", &row[0])?,
            r_value: parse_f64(path, line, "r_value", &row[1])?,
            ref_spo2,
            high_dc_anomaly: parse_bool(path, line, "high_dc_anomaly", &row[3])?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

const FEATURE_HEADER: [&str; 10] = [
    "window_start",
    "r_value",
    "red_ac",
    "red_dc",
    "ir_ac",
    "ir_dc",
    "red_ac_over_dc",
    "ir_ac_over_dc",
    "heart_rate_hz",
    "label",
];

pub fn write_features_csv(path: &Path, rows: &[(usize, FeatureVector)]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(FEATURE_HEADER)
        .map_err(|e| csv_err(path, e))?;
    for (start, fv) in rows {
        w.write_record([
            format!("{start}"),
            format!("{}", fv.r_value),
            format!("{}", fv.red_ac),
            format!("{}", fv.red_dc),
            format!("{}", fv.ir_ac),
            format!("{}", fv.ir_dc),
            format!("{}", fv.red_ac_over_dc),
            format!("{}", fv.ir_ac_over_dc),
            format!("{}", fv.heart_rate_hz),
            format!("{}", fv.label),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

pub fn read_features_csv(path: &Path) -> Result<Vec<(usize, FeatureVector)>, IoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    expect_header(
        path,
        rdr.headers().map_err(|e| csv_err(path, e))?,
        &FEATURE_HEADER,
    )?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.len() != FEATURE_HEADER.len() {
            return Err(parse_err(
                path,
                line,
                format!(
                    "expected {} fields, got {}",
                    FEATURE_HEADER.len(),
                    row.len()
                ),
            ));
        }
        out.push((
            parse_usize(path, line, "window_start", &row[0])?,
            FeatureVector {
                r_value: parse_f64(path, line, "r_value", &row[1])?,
                red_ac: parse_f64(path, line, "red_ac", &row[2])?,
                red_dc: parse_f64(path, line, "red_dc", &row[3])?,
                ir_ac: parse_f64(path, line, "ir_ac", &row[4])?,
                ir_dc: parse_f64(path, line, "ir_dc", &row[5])?,
                red_ac_over_dc: parse_f64(path, line, "red_ac_over_dc", &row[6])?,
                ir_ac_over_dc: parse_f64(path, line, "ir_ac_over_dc", &row[7])?,
                heart_rate_hz: parse_f64(path, line, "heart_rate_hz", &row[8])?,
                label: parse_f64(path, line, "label", &row[9])?,
            },
        ));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Calibration and predictions
// ---------------------------------------------------------------------------

/// Reads a 5-row `r_value,spo2` calibration file.
pub fn read_calibration_csv(path: &Path) -> Result<Vec<(f64, f64)>, IoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    expect_header(
        path,
        rdr.headers().map_err(|e| csv_err(path, e))?,
        &["r_value", "spo2"],
    )?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.len() != 2 {
            return Err(parse_err(
                path,
                line,
                format!("expected 2 fields, got {}", row.len()),
            ));
        }
        out.push((
            parse_f64(path, line, "r_value", &row[0])?,
            parse_f64(path, line, "spo2", &row[1])?,
        ));
    }
    Ok(out)
}

/// One estimated window of a calibrated patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub window_start: usize,
    pub r_value: f64,
    pub ref_spo2: Option<f64>,
    pub predicted_spo2: f64,
    pub high_dc_anomaly: bool,
    pub matched_patient_id: String,
}

const PREDICTION_HEADER: [&str; 6] = [
    "window_start",
    "r_value",
    "ref_spo2",
    "predicted_spo2",
    "high_dc_anomaly",
    "matched_patient_id",
];

pub fn write_predictions_csv(path: &Path, rows: &[PredictionRow]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(PREDICTION_HEADER)
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            format!("{}", r.window_start),
            format!("{}", r.r_value),
            r.ref_spo2.map_or(String::new(), |v| format!("{v}")),
            format!("{}", r.predicted_spo2),
            format!("{}", r.high_dc_anomaly),
            r.matched_patient_id.clone(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionRow>, IoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    expect_header(
        path,
        rdr.headers().map_err(|e| csv_err(path, e))?,
        &PREDICTION_HEADER,
    )?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.len() != PREDICTION_HEADER.len() {
            return Err(parse_err(
                path,
                line,
                format!(
                    "expected {} fields, got {}",
                    PREDICTION_HEADER.len(),
                    row.len()
                ),
            ));
        }
        let ref_spo2 = if row[2].trim().is_empty() {
            None
        } else {
            Some(parse_f64(path, line, "ref_spo2", &row[2])?)
        };
        out.push(PredictionRow {
            window_start: parse_usize(path, line, "window_start", &row[0])?,
            r_value: parse_f64(path, line, "r_value", &row[1])?,
            ref_spo2,
            predicted_spo2: parse_f64(path, line, "predicted_spo2", &row[3])?,
            high_dc_anomaly: parse_bool(path, line, "high_dc_anomaly", &row[4])?,
            matched_patient_id: row[5].to_string(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// JSON documents
// ---------------------------------------------------------------------------

/// One patient's entry in the cohort manifest; file paths are relative to
/// the manifest location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub profile: PatientProfile,
    pub trajectory: Spo2Trajectory,
    pub reflectance: String,
    pub transmittance: String,
    pub truth: String,
}

/// The cohort's source of truth: seed, config and per-patient files. Every
/// later stage replays from here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub seed: u64,
    pub config: CohortConfig,
    pub patients: Vec<ManifestEntry>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let file = File::create(path).map_err(|e| file_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    w.write_all(b"\n").map_err(|e| file_err(path, e))?;
    w.flush().map_err(|e| file_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, IoError> {
    let file = File::open(path).map_err(|e| file_err(path, e))?;
    serde_json::from_reader(file).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn write_trainset_json(path: &Path, trainset: &TrainingSet) -> Result<(), IoError> {
    write_json(path, trainset)
}

pub fn read_trainset_json(path: &Path) -> Result<TrainingSet, IoError> {
    read_json(path)
}

// ---------------------------------------------------------------------------
// Report artifacts
// ---------------------------------------------------------------------------

/// Per-point rows followed by one summary row carrying the agreement fields.
pub fn write_bland_altman_csv(
    path: &Path,
    points: &[(f64, f64)],
    report: &AgreementReport,
) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "mean_of_pair",
        "diff",
        "mean_diff",
        "sd_diff",
        "loa_low",
        "loa_high",
        "pct_within_loa",
        "pct_within_band",
        "n",
    ])
    .map_err(|e| csv_err(path, e))?;
    for (m, d) in points {
        w.write_record([
            format!("{m}"),
            format!("{d}"),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.write_record([
        String::new(),
        String::new(),
        format!("{}", report.mean_diff),
        format!("{}", report.sd_diff),
        format!("{}", report.loa_low),
        format!("{}", report.loa_high),
        format!("{}", report.pct_within_loa),
        format!("{}", report.pct_within_band),
        format!("{}", report.n),
    ])
    .map_err(|e| csv_err(path, e))?;
    w.flush().map_err(|e| file_err(path, e))
}

pub fn write_box_stats_csv(path: &Path, stats: &[BoxStats]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "patient_id",
        "q1",
        "median",
        "q3",
        "whisker_low",
        "whisker_high",
        "n_outliers",
        "outliers",
    ])
    .map_err(|e| csv_err(path, e))?;
    for s in stats {
        let outliers = s
            .outliers
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            s.patient_id.clone(),
            format!("{}", s.q1),
            format!("{}", s.median),
            format!("{}", s.q3),
            format!("{}", s.whisker_low),
            format!("{}", s.whisker_high),
            format!("{}", s.outliers.len()),
            outliers,
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

pub fn write_per_patient_mae_csv(path: &Path, table: &PerPatientMae) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["patient_id", "mae", "n_windows"])
        .map_err(|e| csv_err(path, e))?;
    let mut total = 0usize;
    for (id, mae, n) in &table.rows {
        total += n;
        w.write_record([id.clone(), format!("{mae}"), format!("{n}")])
            .map_err(|e| csv_err(path, e))?;
    }
    w.write_record([
        "average".to_string(),
        format!("{}", table.average),
        format!("{total}"),
    ])
    .map_err(|e| csv_err(path, e))?;
    w.flush().map_err(|e| file_err(path, e))
}

/// `model,avg_mse,avg_mae,avg_r2,split` rows, one per split.
pub fn write_baseline_report_csv(
    path: &Path,
    report: &crate::baseline::ProtocolReport,
) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["model", "avg_mse", "avg_mae", "avg_r2", "split"])
        .map_err(|e| csv_err(path, e))?;
    for (metrics, split) in [(&report.validation, "validation"), (&report.test, "test")] {
        w.write_record([
            report.model.clone(),
            format!("{}", metrics.mse),
            format!("{}", metrics.mae),
            format!("{}", metrics.r2),
            split.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}
