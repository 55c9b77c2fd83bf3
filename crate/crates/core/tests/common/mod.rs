//! Shared fixtures for the acceptance suite.

use oxiline::calibrate::{
    build_training_set, estimate_spo2, match_line, select_calibration_points, TrainingSet,
    DEFAULT_CALIBRATION_BAND, DEFAULT_MIN_RANGE_SPO2,
};
use oxiline::preprocess::WindowingParams;
use oxiline::ratio::{process_pair, ReferenceCurve, WindowSample, DEFAULT_HIGH_DC_K};
use oxiline::synth::{synth_cohort, CohortConfig, SynthPair};
use std::sync::OnceLock;
use std::time::Instant;

pub fn pipeline_pairs(pair: &SynthPair) -> Vec<WindowSample> {
    process_pair(
        &pair.reflectance,
        &pair.transmittance,
        &WindowingParams::default(),
        &ReferenceCurve::default(),
        DEFAULT_HIGH_DC_K,
    )
    .expect("pipeline runs on generated records")
}

/// (r, ref_spo2) pairs from labelled, non-anomalous windows.
pub fn line_fit_pairs(samples: &[WindowSample]) -> Vec<(f64, f64)> {
    samples
        .iter()
        .filter(|s| !s.high_dc_anomaly)
        .filter_map(|s| s.ref_spo2.map(|v| (s.r_value, v)))
        .collect()
}

pub struct EstimatedPatient {
    pub patient_id: String,
    pub matched_id: String,
    /// (reference, predicted) over labelled non-anomalous windows.
    pub windows: Vec<(f64, f64)>,
    /// Same, over flagged windows only.
    pub anomalous_windows: Vec<(f64, f64)>,
}

impl EstimatedPatient {
    pub fn refs(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.0).collect()
    }

    pub fn preds(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.1).collect()
    }

    pub fn mae(&self) -> f64 {
        self.windows.iter().map(|(r, p)| (p - r).abs()).sum::<f64>() / self.windows.len() as f64
    }

    /// MAE with the flagged windows folded back in.
    pub fn mae_including_anomalous(&self) -> f64 {
        let n = self.windows.len() + self.anomalous_windows.len();
        let sum: f64 = self
            .windows
            .iter()
            .chain(&self.anomalous_windows)
            .map(|(r, p)| (p - r).abs())
            .sum();
        sum / n as f64
    }
}

/// Calibrates one new patient against the training set and estimates every
/// labelled window.
pub fn estimate_patient(pair: &SynthPair, trainset: &TrainingSet) -> EstimatedPatient {
    let samples = pipeline_pairs(pair);
    let calibration =
        select_calibration_points(&samples, DEFAULT_CALIBRATION_BAND).expect("calibration band");
    let line = match_line(&calibration, trainset).expect("non-empty training set");
    let mut windows = Vec::new();
    let mut anomalous_windows = Vec::new();
    for s in &samples {
        let Some(reference) = s.ref_spo2 else {
            continue;
        };
        let predicted = estimate_spo2(line, s.r_value);
        if s.high_dc_anomaly {
            anomalous_windows.push((reference, predicted));
        } else {
            windows.push((reference, predicted));
        }
    }
    EstimatedPatient {
        patient_id: pair.profile.patient_id.clone(),
        matched_id: line.patient_id.clone(),
        windows,
        anomalous_windows,
    }
}

pub struct ClinicalCohort {
    pub trainset: TrainingSet,
    pub patients: Vec<EstimatedPatient>,
    pub build_seconds: f64,
}

/// The fixed-seed cohort behind the clinical-band, agreement and box-plot
/// criteria: 10 wide-range training patients and 12 test patients at nominal
/// noise (1 % DC) and wander (2 % DC).
pub fn clinical_cohort() -> &'static ClinicalCohort {
    static COHORT: OnceLock<ClinicalCohort> = OnceLock::new();
    COHORT.get_or_init(|| {
        let start = Instant::now();
        let train_cfg = CohortConfig {
            rate: 200.0,
            duration_s: 480.0,
            id_prefix: "train".into(),
            spo2_span: (17.0, 26.0),
            slope: (-28.0, -24.0),
            intercept: (112.0, 120.0),
            ir_perfusion: (0.12, 0.18),
            noise_sigma: (0.01, 0.01),
            wander_amplitude: (0.02, 0.02),
            ..CohortConfig::default()
        };
        let test_cfg = CohortConfig {
            id_prefix: "test".into(),
            spo2_span: (12.0, 20.0),
            ..train_cfg.clone()
        };
        let train = synth_cohort(10, 2024, &train_cfg).expect("training cohort");
        let test = synth_cohort(12, 4048, &test_cfg).expect("test cohort");

        let series: Vec<(String, Vec<(f64, f64)>)> = train
            .iter()
            .map(|p| {
                (
                    p.profile.patient_id.clone(),
                    line_fit_pairs(&pipeline_pairs(p)),
                )
            })
            .collect();
        let trainset =
            build_training_set(&series, DEFAULT_MIN_RANGE_SPO2).expect("10 admitted lines");
        let patients = test
            .iter()
            .map(|p| estimate_patient(p, &trainset))
            .collect();
        ClinicalCohort {
            trainset,
            patients,
            build_seconds: start.elapsed().as_secs_f64(),
        }
    })
}

pub fn report_pass(criterion: &str, detail: String, seconds: f64) {
    println!("PASS {criterion}: {detail} ({seconds:.2} s)");
}
