//! Run configuration: defaults, JSON config file, flag overrides.

use oxiline::ratio::ReferenceCurve;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Numeric knobs shared by the pipeline stages. A JSON config file sets any
/// subset; command-line flags override the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Sampling rate in Hz.
    pub rate: f64,
    /// Analysis window length in seconds.
    pub window_s: f64,
    /// Window overlap fraction.
    pub overlap: f64,
    /// Red/IR correlation threshold for the quality gate.
    pub quality_threshold: f64,
    /// Multiple of the median red DC that flags a high-DC window.
    pub high_dc_k: f64,
    /// SpO2 span a patient must exceed to enter the training set.
    pub min_range_spo2: f64,
    /// SpO2 band the calibration points come from.
    pub calibration_band: (f64, f64),
    pub reference_curve: ReferenceCurve,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            rate: 600.0,
            window_s: oxiline::preprocess::DEFAULT_WINDOW_S,
            overlap: oxiline::preprocess::DEFAULT_OVERLAP,
            quality_threshold: oxiline::preprocess::DEFAULT_QUALITY_THRESHOLD,
            high_dc_k: oxiline::ratio::DEFAULT_HIGH_DC_K,
            min_range_spo2: oxiline::calibrate::DEFAULT_MIN_RANGE_SPO2,
            calibration_band: oxiline::calibrate::DEFAULT_CALIBRATION_BAND,
            reference_curve: ReferenceCurve::default(),
        }
    }
}

/// A bad flag or config value; exits with the usage code.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => Ok(oxiline::io::read_json(p)?),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let checks = [
            (
                self.rate > 0.0,
                format!("rate must be positive, got {}", self.rate),
            ),
            (
                self.window_s > 0.0,
                format!("window seconds must be positive, got {}", self.window_s),
            ),
            (
                (0.0..1.0).contains(&self.overlap),
                format!("overlap must be in [0, 1), got {}", self.overlap),
            ),
            (
                (-1.0..=1.0).contains(&self.quality_threshold),
                format!(
                    "quality threshold must be in [-1, 1], got {}",
                    self.quality_threshold
                ),
            ),
            (
                self.high_dc_k > 1.0,
                format!("high-DC multiplier must exceed 1, got {}", self.high_dc_k),
            ),
            (
                self.min_range_spo2 >= 0.0,
                format!(
                    "min SpO2 range must be non-negative, got {}",
                    self.min_range_spo2
                ),
            ),
            (
                self.calibration_band.0 < self.calibration_band.1
                    && self.calibration_band.0 >= oxiline::SPO2_MIN
                    && self.calibration_band.1 <= oxiline::SPO2_MAX,
                format!(
                    "calibration band ({}, {}) must be an ordered range inside [{}, {}]",
                    self.calibration_band.0,
                    self.calibration_band.1,
                    oxiline::SPO2_MIN,
                    oxiline::SPO2_MAX
                ),
            ),
            (
                self.reference_curve.scale > 0.0,
                format!(
                    "reference curve scale must be positive, got {}",
                    self.reference_curve.scale
                ),
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(UsageError(msg));
            }
        }
        Ok(())
    }

    pub fn windowing(&self) -> oxiline::preprocess::WindowingParams {
        oxiline::preprocess::WindowingParams {
            win_s: self.window_s,
            overlap: self.overlap,
            smooth_len: oxiline::preprocess::DEFAULT_SMOOTH_LEN,
            quality_threshold: self.quality_threshold,
        }
    }
}
