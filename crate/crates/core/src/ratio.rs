//! AC/DC extraction and the ratio of ratios.
//!
//! Per quality-passing window, each channel contributes a DC level (mean of
//! the raw slice) and an AC amplitude (mean peak-to-following-valley height).
//! The two combine into `R = (RED_AC/RED_DC) / (IR_AC/IR_DC)`, which a
//! transmittance probe maps to SpO2 through the classical linear
//! approximation `SpO2 = 110 - 25 * R`.

use crate::preprocess::{Extremum, ExtremumKind, PpgRecord, Window, WindowingParams};
use crate::{SPO2_MAX, SPO2_MIN};
use thiserror::Error;

/// Default multiple of the median red DC above which a window is flagged as
/// a high-DC anomaly.
pub const DEFAULT_HIGH_DC_K: f64 = 2.0;

#[derive(Debug, Error)]
pub enum RatioError {
    #[error("window failed the quality gate (score {score:.3})")]
    QualityFailed { score: f64 },
    #[error("insufficient beats in {channel} channel: found {found}, need at least 2")]
    InsufficientBeats { channel: &'static str, found: usize },
    #[error("non-positive {component} component")]
    NonPositiveComponent { component: &'static str },
    #[error("need at least 3 windows to flag high-DC anomalies, got {0}")]
    TooFewWindows(usize),
    #[error("samples and DC list lengths differ: {samples} vs {dcs}")]
    FlagLengthMismatch { samples: usize, dcs: usize },
}

/// The four scalars feeding the R-value, plus the number of beats averaged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcDc {
    pub red_ac: f64,
    pub red_dc: f64,
    pub ir_ac: f64,
    pub ir_dc: f64,
    pub n_beats: usize,
}

/// Per-window result: the R-value, an optional transmittance-derived SpO2
/// label, and the high-DC anomaly flag.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub window_start: usize,
    pub r_value: f64,
    pub ref_spo2: Option<f64>,
    pub high_dc_anomaly: bool,
}

/// Linear transmittance calibration curve `spo2 = offset - scale * r`.
///
/// The defaults are the textbook approximation (110, 25); both coefficients
/// are configurable.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReferenceCurve {
    pub offset: f64,
    pub scale: f64,
}

impl Default for ReferenceCurve {
    fn default() -> Self {
        Self {
            offset: 110.0,
            scale: 25.0,
        }
    }
}

impl ReferenceCurve {
    /// SpO2 for an R-value, clamped to [50, 100].
    pub fn spo2(&self, r: f64) -> f64 {
        (self.offset - self.scale * r).clamp(SPO2_MIN, SPO2_MAX)
    }

    /// The R-value that maps to `spo2`; `None` when the curve cannot produce
    /// it with a positive R.
    pub fn r_for(&self, spo2: f64) -> Option<f64> {
        let r = (self.offset - spo2) / self.scale;
        (r.is_finite() && r > 0.0).then_some(r)
    }
}

/// SpO2 from an R-value under the default reference curve.
pub fn reference_spo2(r: f64) -> f64 {
    ReferenceCurve::default().spo2(r)
}

fn channel_ac(smoothed: &[f64], extrema: &[Extremum]) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    for pair in extrema.windows(2) {
        if pair[0].kind == ExtremumKind::Peak && pair[1].kind == ExtremumKind::Valley {
            sum += smoothed[pair[0].index] - smoothed[pair[1].index];
            n += 1;
        }
    }
    (sum, n)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Extracts the AC and DC components of a quality-passing window.
///
/// DC is the mean of the raw (pre-detrend) slice. AC is the mean over beats
/// of the peak-to-following-valley height, with extrema located on the
/// detrended slice and amplitudes read from the smoothed slice (detrending
/// exists to ease detection; reading amplitudes off the detrended series
/// would distort them whenever the beat period does not divide the baseline
/// window).
pub fn extract_ac_dc(w: &Window) -> Result<AcDc, RatioError> {
    if !w.quality.passed {
        return Err(RatioError::QualityFailed {
            score: w.quality.score,
        });
    }
    let (red_sum, red_beats) = channel_ac(&w.smoothed_red, &w.red_extrema);
    if red_beats < 2 {
        return Err(RatioError::InsufficientBeats {
            channel: "red",
            found: red_beats,
        });
    }
    let (ir_sum, ir_beats) = channel_ac(&w.smoothed_ir, &w.ir_extrema);
    if ir_beats < 2 {
        return Err(RatioError::InsufficientBeats {
            channel: "ir",
            found: ir_beats,
        });
    }
    let acdc = AcDc {
        red_ac: red_sum / red_beats as f64,
        red_dc: mean(&w.raw_red),
        ir_ac: ir_sum / ir_beats as f64,
        ir_dc: mean(&w.raw_ir),
        n_beats: red_beats.min(ir_beats),
    };
    for (v, component) in [
        (acdc.red_ac, "red AC"),
        (acdc.red_dc, "red DC"),
        (acdc.ir_ac, "ir AC"),
        (acdc.ir_dc, "ir DC"),
    ] {
        if v.is_nan() || v <= 0.0 {
            return Err(RatioError::NonPositiveComponent { component });
        }
    }
    Ok(acdc)
}

/// The ratio of ratios `(RED_AC/RED_DC) / (IR_AC/IR_DC)`.
pub fn compute_r(c: &AcDc) -> f64 {
    (c.red_ac / c.red_dc) / (c.ir_ac / c.ir_dc)
}

/// Flags windows whose red DC exceeds `k` times the median red DC of the
/// record. `red_dc` runs parallel to `samples`.
pub fn flag_high_dc(
    samples: &mut [WindowSample],
    red_dc: &[f64],
    k: f64,
) -> Result<(), RatioError> {
    if samples.len() != red_dc.len() {
        return Err(RatioError::FlagLengthMismatch {
            samples: samples.len(),
            dcs: red_dc.len(),
        });
    }
    if samples.len() < 3 {
        return Err(RatioError::TooFewWindows(samples.len()));
    }
    let mut sorted = red_dc.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("DC values are finite"));
    let m = sorted.len();
    let median = if m.is_multiple_of(2) {
        (sorted[m / 2 - 1] + sorted[m / 2]) / 2.0
    } else {
        sorted[m / 2]
    };
    for (s, &dc) in samples.iter_mut().zip(red_dc) {
        s.high_dc_anomaly = dc > k * median;
    }
    Ok(())
}

/// Runs AC/DC extraction and the R-value over every usable window of one
/// record. Windows that fail the quality gate or lack beats are skipped.
/// With `curve` set, each sample carries the transmittance SpO2 label.
/// High-DC flags are set when at least 3 windows survive.
pub fn record_samples(
    windows: &[Window],
    curve: Option<&ReferenceCurve>,
    high_dc_k: f64,
) -> Vec<WindowSample> {
    let mut samples = Vec::new();
    let mut red_dcs = Vec::new();
    for w in windows {
        let Ok(acdc) = extract_ac_dc(w) else {
            continue;
        };
        let r = compute_r(&acdc);
        samples.push(WindowSample {
            window_start: w.start_index,
            r_value: r,
            ref_spo2: curve.map(|c| c.spo2(r)),
            high_dc_anomaly: false,
        });
        red_dcs.push(acdc.red_dc);
    }
    if samples.len() >= 3 {
        flag_high_dc(&mut samples, &red_dcs, high_dc_k).expect("parallel lists");
    }
    samples
}

/// Joins reflectance and transmittance samples on window start: the R-value
/// and anomaly flag come from the reflectance side, the SpO2 label from the
/// transmittance side.
pub fn pair_samples(
    reflectance: &[WindowSample],
    transmittance: &[WindowSample],
) -> Vec<WindowSample> {
    let mut out = Vec::new();
    let mut j = 0usize;
    for r in reflectance {
        while j < transmittance.len() && transmittance[j].window_start < r.window_start {
            j += 1;
        }
        if j < transmittance.len() && transmittance[j].window_start == r.window_start {
            out.push(WindowSample {
                window_start: r.window_start,
                r_value: r.r_value,
                ref_spo2: transmittance[j].ref_spo2,
                high_dc_anomaly: r.high_dc_anomaly,
            });
        }
    }
    out
}

/// Full per-patient pipeline: windows both records, extracts samples from
/// each and joins them. This is the path behind the `pipeline` CLI stage.
pub fn process_pair(
    reflectance: &PpgRecord,
    transmittance: &PpgRecord,
    params: &WindowingParams,
    curve: &ReferenceCurve,
    high_dc_k: f64,
) -> Result<Vec<WindowSample>, crate::preprocess::PreprocessError> {
    let refl_windows = crate::preprocess::segment_windows(reflectance, params)?;
    let trans_windows = crate::preprocess::segment_windows(transmittance, params)?;
    let refl = record_samples(&refl_windows, None, high_dc_k);
    let trans = record_samples(&trans_windows, Some(curve), high_dc_k);
    Ok(pair_samples(&refl, &trans))
}
