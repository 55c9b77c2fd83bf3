//! Evaluation statistics: MSE/MAE/R², Bland-Altman agreement and box-plot
//! summaries of per-window absolute error.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Clinical error band for Bland-Altman analysis, in SpO2 percent.
pub const DEFAULT_ERROR_BAND: f64 = 2.0;
/// Limits of agreement sit at this many standard deviations around the mean
/// difference.
pub const LOA_SIGMA: f64 = 1.96;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("input lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("input is empty")]
    Empty,
    #[error("R^2 is undefined: the true values have zero variance")]
    ZeroVariance,
    #[error("Bland-Altman needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("box stats need at least 4 errors per patient, {patient_id} has {found}")]
    TooFewErrors { patient_id: String, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub r2: f64,
}

/// Standard regression metrics; `r2 = 1 - SS_res / SS_tot`.
pub fn metrics(y: &[f64], y_pred: &[f64]) -> Result<Metrics, EvalError> {
    if y.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            left: y.len(),
            right: y_pred.len(),
        });
    }
    if y.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = y.len() as f64;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut abs = 0.0;
    for (&t, &p) in y.iter().zip(y_pred) {
        let e = p - t;
        ss_res += e * e;
        abs += e.abs();
        let d = t - mean_y;
        ss_tot += d * d;
    }
    if ss_tot == 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    Ok(Metrics {
        mse: ss_res / n,
        mae: abs / n,
        r2: 1.0 - ss_res / ss_tot,
    })
}

/// Bland-Altman summary over differences `y_pred - y`.
///
/// The standard deviation is the sample convention (divide by n-1); limits of
/// agreement are `mean +- 1.96 sd`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    /// Fraction of differences inside [loa_low, loa_high].
    pub pct_within_loa: f64,
    /// Fraction of differences with |diff| <= the error band.
    pub pct_within_band: f64,
    pub n: usize,
}

pub fn bland_altman(y: &[f64], y_pred: &[f64], band: f64) -> Result<AgreementReport, EvalError> {
    if y.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            left: y.len(),
            right: y_pred.len(),
        });
    }
    if y.len() < 3 {
        return Err(EvalError::TooFewPoints(y.len()));
    }
    let n = y.len() as f64;
    let diffs: Vec<f64> = y.iter().zip(y_pred).map(|(&t, &p)| p - t).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let loa_low = mean - LOA_SIGMA * sd;
    let loa_high = mean + LOA_SIGMA * sd;
    let within_loa = diffs
        .iter()
        .filter(|&&d| d >= loa_low && d <= loa_high)
        .count();
    let within_band = diffs.iter().filter(|&&d| d.abs() <= band).count();
    Ok(AgreementReport {
        mean_diff: mean,
        sd_diff: sd,
        loa_low,
        loa_high,
        pct_within_loa: within_loa as f64 / n,
        pct_within_band: within_band as f64 / n,
        n: y.len(),
    })
}

/// Per-point Bland-Altman rows: (mean of the pair, difference).
pub fn bland_altman_points(y: &[f64], y_pred: &[f64]) -> Vec<(f64, f64)> {
    y.iter()
        .zip(y_pred)
        .map(|(&t, &p)| ((t + p) / 2.0, p - t))
        .collect()
}

/// Quantile by linear interpolation between order statistics
/// (`h = (n - 1) q`).
pub fn quantile(sorted: &[f64], q: f64) -> Result<f64, EvalError> {
    if sorted.is_empty() {
        return Err(EvalError::Empty);
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Quartiles (q1, median, q3) of unsorted data.
pub fn quartiles(data: &[f64]) -> Result<(f64, f64, f64), EvalError> {
    if data.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("data is finite"));
    Ok((
        quantile(&sorted, 0.25)?,
        quantile(&sorted, 0.5)?,
        quantile(&sorted, 0.75)?,
    ))
}

/// Five-number box summary with Tukey 1.5 IQR whiskers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub patient_id: String,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Smallest datum at or above `q1 - 1.5 IQR`.
    pub whisker_low: f64,
    /// Largest datum at or below `q3 + 1.5 IQR`.
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Box summaries of per-window absolute errors, one per patient.
pub fn box_stats(abs_errors: &BTreeMap<String, Vec<f64>>) -> Result<Vec<BoxStats>, EvalError> {
    let mut out = Vec::with_capacity(abs_errors.len());
    for (patient_id, errors) in abs_errors {
        if errors.len() < 4 {
            return Err(EvalError::TooFewErrors {
                patient_id: patient_id.clone(),
                found: errors.len(),
            });
        }
        let mut sorted = errors.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("errors are finite"));
        let q1 = quantile(&sorted, 0.25)?;
        let median = quantile(&sorted, 0.5)?;
        let q3 = quantile(&sorted, 0.75)?;
        let iqr = q3 - q1;
        let lo_fence = q1 - 1.5 * iqr;
        let hi_fence = q3 + 1.5 * iqr;
        let whisker_low = *sorted
            .iter()
            .find(|&&v| v >= lo_fence)
            .expect("q1 is within fences");
        let whisker_high = *sorted
            .iter()
            .rev()
            .find(|&&v| v <= hi_fence)
            .expect("q3 is within fences");
        let outliers: Vec<f64> = sorted
            .iter()
            .copied()
            .filter(|&v| v < lo_fence || v > hi_fence)
            .collect();
        out.push(BoxStats {
            patient_id: patient_id.clone(),
            q1,
            median,
            q3,
            whisker_low,
            whisker_high,
            outliers,
        });
    }
    Ok(out)
}

/// Per-patient MAE table plus the cohort average (mean of the per-patient
/// values).
#[derive(Debug, Clone, PartialEq)]
pub struct PerPatientMae {
    /// (patient id, MAE, window count) per patient.
    pub rows: Vec<(String, f64, usize)>,
    pub average: f64,
}

/// `pairs` maps patient id to (true, predicted) rows.
pub fn per_patient_mae(
    pairs: &BTreeMap<String, Vec<(f64, f64)>>,
) -> Result<PerPatientMae, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut rows = Vec::with_capacity(pairs.len());
    for (patient_id, windows) in pairs {
        if windows.is_empty() {
            return Err(EvalError::Empty);
        }
        let mae = windows.iter().map(|(t, p)| (p - t).abs()).sum::<f64>() / windows.len() as f64;
        rows.push((patient_id.clone(), mae, windows.len()));
    }
    let average = rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64;
    Ok(PerPatientMae { rows, average })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metrics_perfect_prediction() {
        let y = [90.0, 94.0, 88.0];
        let m = metrics(&y, &y).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.r2, 1.0);
    }

    #[test]
    fn metrics_hand_arithmetic() {
        let m = metrics(&[90.0, 94.0], &[92.0, 92.0]).unwrap();
        assert_eq!(m.mse, 4.0);
        assert_eq!(m.mae, 2.0);
        assert_eq!(m.r2, 0.0);
    }

    #[test]
    fn metrics_constant_prediction_scores_zero_r2() {
        let y = [88.0, 92.0, 96.0];
        let mean = 92.0;
        let m = metrics(&y, &[mean, mean, mean]).unwrap();
        assert!(m.r2.abs() < 1e-12);
    }

    #[test]
    fn metrics_zero_variance_truth_is_error() {
        assert!(matches!(
            metrics(&[95.0, 95.0], &[94.0, 96.0]),
            Err(EvalError::ZeroVariance)
        ));
    }

    #[test]
    fn bland_altman_zero_differences() {
        let y = [95.0, 92.0, 90.0, 87.0];
        let r = bland_altman(&y, &y, DEFAULT_ERROR_BAND).unwrap();
        assert_eq!(r.mean_diff, 0.0);
        assert_eq!(r.sd_diff, 0.0);
        assert_eq!((r.loa_low, r.loa_high), (0.0, 0.0));
        assert_eq!(r.pct_within_band, 1.0);
        assert_eq!(r.pct_within_loa, 1.0);
    }

    #[test]
    fn bland_altman_hand_arithmetic() {
        // diffs -1, 0, +1: mean 0, sample sd 1, LoA [-1.96, 1.96].
        let y = [90.0, 90.0, 90.0];
        let p = [89.0, 90.0, 91.0];
        let r = bland_altman(&y, &p, DEFAULT_ERROR_BAND).unwrap();
        assert!(r.mean_diff.abs() < 1e-12);
        assert!((r.sd_diff - 1.0).abs() < 1e-12);
        assert!((r.loa_low + 1.96).abs() < 1e-12);
        assert!((r.loa_high - 1.96).abs() < 1e-12);
        assert!((r.loa_high - r.loa_low - 2.0 * 1.96 * r.sd_diff).abs() < 1e-12);
    }

    #[test]
    fn bland_altman_gaussian_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 10_000;
        let y = vec![92.0; n];
        let p: Vec<f64> = (0..n)
            .map(|_| {
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen();
                92.0 + 0.5 * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let r = bland_altman(&y, &p, DEFAULT_ERROR_BAND).unwrap();
        assert!(
            (0.94..=0.96).contains(&r.pct_within_loa),
            "coverage {}",
            r.pct_within_loa
        );
    }

    #[test]
    fn bland_altman_needs_three_points() {
        assert!(matches!(
            bland_altman(&[1.0, 2.0], &[1.0, 2.0], 2.0),
            Err(EvalError::TooFewPoints(2))
        ));
    }

    #[test]
    fn bland_altman_points_are_pair_means_and_diffs() {
        let pts = bland_altman_points(&[90.0, 94.0], &[92.0, 92.0]);
        assert_eq!(pts, vec![(91.0, 2.0), (93.0, -2.0)]);
    }

    #[test]
    fn quartiles_linear_interpolation_example() {
        let data: Vec<f64> = (1..=8).map(|v| v as f64).collect();
        let (q1, med, q3) = quartiles(&data).unwrap();
        assert_eq!(q1, 2.75);
        assert_eq!(med, 4.5);
        assert_eq!(q3, 6.25);
    }

    fn single_patient(errors: &[f64]) -> Vec<BoxStats> {
        let mut m = BTreeMap::new();
        m.insert("p".to_string(), errors.to_vec());
        box_stats(&m).unwrap()
    }

    #[test]
    fn box_stats_degenerate_distribution() {
        let b = &single_patient(&[1.5, 1.5, 1.5, 1.5, 1.5])[0];
        assert_eq!((b.q1, b.median, b.q3), (1.5, 1.5, 1.5));
        assert_eq!((b.whisker_low, b.whisker_high), (1.5, 1.5));
        assert!(b.outliers.is_empty());
    }

    #[test]
    fn box_stats_outlier_with_zero_iqr() {
        let b = &single_patient(&[1.0, 1.0, 1.0, 1.0, 10.0])[0];
        assert_eq!((b.q1, b.median, b.q3), (1.0, 1.0, 1.0));
        assert_eq!((b.whisker_low, b.whisker_high), (1.0, 1.0));
        assert_eq!(b.outliers, vec![10.0]);
    }

    #[test]
    fn box_stats_whiskers_bracket_quartiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let errors: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..3.0)).collect();
        let b = &single_patient(&errors)[0];
        assert!(b.whisker_low <= b.q1);
        assert!(b.q1 <= b.median && b.median <= b.q3);
        assert!(b.whisker_high >= b.q3);
    }

    #[test]
    fn box_stats_rejects_tiny_groups() {
        let mut m = BTreeMap::new();
        m.insert("p".to_string(), vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            box_stats(&m),
            Err(EvalError::TooFewErrors { found: 3, .. })
        ));
    }

    #[test]
    fn per_patient_mae_rows_and_average() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![(95.0, 96.0), (90.0, 89.0)]); // MAE 1
        m.insert("b".to_string(), vec![(95.0, 98.0)]); // MAE 3
        let t = per_patient_mae(&m).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0], ("a".to_string(), 1.0, 2));
        assert_eq!(t.rows[1], ("b".to_string(), 3.0, 1));
        assert_eq!(t.average, 2.0);
    }

    #[test]
    fn per_patient_mae_perfect_prediction() {
        let mut m = BTreeMap::new();
        m.insert("a".to_string(), vec![(95.0, 95.0), (82.0, 82.0)]);
        let t = per_patient_mae(&m).unwrap();
        assert_eq!(t.rows[0].1, 0.0);
        assert_eq!(t.average, 0.0);
    }
}
