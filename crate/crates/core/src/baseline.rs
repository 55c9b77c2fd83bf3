//! Pooled-window regression baseline with a patient-wise evaluation
//! protocol.
//!
//! Windows from the training patients are pooled, class-balanced by majority
//! undersampling, split into 10 validation folds, and fed to a k-nearest-
//! neighbor regressor over reflectance features. Validation folds share
//! patients with the training pool; the test set never does. On cohorts
//! where patients have distinct R-to-SpO2 lines the model looks fine in
//! validation and falls apart on test patients, which is exactly the gap the
//! calibration method exists to close.

use crate::derive_seed;
use crate::evaluate::{self, Metrics};
use crate::preprocess::{ExtremumKind, Window};
use crate::ratio::{extract_ac_dc, WindowSample};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Feature dimensionality of [`FeatureVector::features`].
pub const FEATURE_DIM: usize = 8;
/// Default neighbor count.
pub const DEFAULT_K: usize = 5;
/// Default validation fold count.
pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("input is empty")]
    EmptyInput,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds training size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("protocol needs at least 2 test patients, got {0}")]
    TooFewTestPatients(usize),
    #[error("metric failure: {0}")]
    Metric(#[from] evaluate::EvalError),
}

/// Per-window features from the reflectance record, labelled with the
/// transmittance SpO2.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub r_value: f64,
    pub red_ac: f64,
    pub red_dc: f64,
    pub ir_ac: f64,
    pub ir_dc: f64,
    pub red_ac_over_dc: f64,
    pub ir_ac_over_dc: f64,
    pub heart_rate_hz: f64,
    /// Transmittance SpO2 label in percent.
    pub label: f64,
}

impl FeatureVector {
    pub fn features(&self) -> [f64; FEATURE_DIM] {
        [
            self.r_value,
            self.red_ac,
            self.red_dc,
            self.ir_ac,
            self.ir_dc,
            self.red_ac_over_dc,
            self.ir_ac_over_dc,
            self.heart_rate_hz,
        ]
    }
}

/// Heart rate from the median peak-to-peak interval of the IR extrema.
fn heart_rate_hz(w: &Window, rate: f64) -> Option<f64> {
    let peaks: Vec<usize> = w
        .ir_extrema
        .iter()
        .filter(|e| e.kind == ExtremumKind::Peak)
        .map(|e| e.index)
        .collect();
    if peaks.len() < 2 {
        return None;
    }
    let mut gaps: Vec<usize> = peaks.windows(2).map(|p| p[1] - p[0]).collect();
    gaps.sort_unstable();
    let m = gaps.len();
    let median = if m.is_multiple_of(2) {
        (gaps[m / 2 - 1] + gaps[m / 2]) as f64 / 2.0
    } else {
        gaps[m / 2] as f64
    };
    (median > 0.0).then(|| rate / median)
}

/// Builds one feature row per labelled window, keyed by window start.
/// Windows without a usable extraction or label are skipped.
pub fn features_for_record(
    windows: &[Window],
    samples: &[WindowSample],
    rate: f64,
) -> Vec<(usize, FeatureVector)> {
    let by_start: BTreeMap<usize, &Window> = windows.iter().map(|w| (w.start_index, w)).collect();
    let mut out = Vec::new();
    for s in samples {
        let Some(label) = s.ref_spo2 else { continue };
        let Some(w) = by_start.get(&s.window_start) else {
            continue;
        };
        let Ok(acdc) = extract_ac_dc(w) else { continue };
        let Some(hr) = heart_rate_hz(w, rate) else {
            continue;
        };
        out.push((
            s.window_start,
            FeatureVector {
                r_value: s.r_value,
                red_ac: acdc.red_ac,
                red_dc: acdc.red_dc,
                ir_ac: acdc.ir_ac,
                ir_dc: acdc.ir_dc,
                red_ac_over_dc: acdc.red_ac / acdc.red_dc,
                ir_ac_over_dc: acdc.ir_ac / acdc.ir_dc,
                heart_rate_hz: hr,
                label,
            },
        ));
    }
    out
}

/// Majority undersampling: labels rounded to integers define classes, and
/// every class is downsampled (seeded, without replacement) to the minimum
/// class count. Selected rows keep their original relative order within each
/// class; classes come out in ascending label order.
pub fn undersample(data: &[FeatureVector], seed: u64) -> Result<Vec<FeatureVector>, BaselineError> {
    if data.is_empty() {
        return Err(BaselineError::EmptyInput);
    }
    let mut classes: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, fv) in data.iter().enumerate() {
        classes.entry(fv.label.round() as i64).or_default().push(i);
    }
    let min_count = classes.values().map(Vec::len).min().expect("non-empty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(min_count * classes.len());
    for indices in classes.values() {
        let mut pool = indices.clone();
        for i in 0..min_count {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut chosen = pool[..min_count].to_vec();
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|i| data[i].clone()));
    }
    Ok(out)
}

/// Anything that predicts a label from window features.
pub trait Regressor {
    fn predict(&self, fv: &FeatureVector) -> f64;
    fn name(&self) -> &str;
}

/// k-nearest-neighbor regression under z-score-normalized Euclidean
/// distance. Normalization statistics come from the training rows only.
pub struct KnnRegressor {
    k: usize,
    means: [f64; FEATURE_DIM],
    stds: [f64; FEATURE_DIM],
    rows: Vec<([f64; FEATURE_DIM], f64)>,
    name: String,
}

/// Fits a kNN regressor; errors when `k` exceeds the training size.
pub fn fit_knn(train: &[FeatureVector], k: usize) -> Result<KnnRegressor, BaselineError> {
    if k == 0 {
        return Err(BaselineError::ZeroK);
    }
    if train.len() < k {
        return Err(BaselineError::KTooLarge { k, n: train.len() });
    }
    let n = train.len() as f64;
    let mut means = [0.0; FEATURE_DIM];
    for fv in train {
        for (m, v) in means.iter_mut().zip(fv.features()) {
            *m += v;
        }
    }
    for m in means.iter_mut() {
        *m /= n;
    }
    let mut stds = [0.0; FEATURE_DIM];
    for fv in train {
        for ((s, m), v) in stds.iter_mut().zip(means).zip(fv.features()) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in stds.iter_mut() {
        *s = (*s / n).sqrt();
        if *s == 0.0 {
            *s = 1.0; // constant feature: leave it centered, not exploded
        }
    }
    let rows = train
        .iter()
        .map(|fv| (normalize(&fv.features(), &means, &stds), fv.label))
        .collect();
    Ok(KnnRegressor {
        k,
        means,
        stds,
        rows,
        name: format!("knn(k={k})"),
    })
}

fn normalize(
    x: &[f64; FEATURE_DIM],
    means: &[f64; FEATURE_DIM],
    stds: &[f64; FEATURE_DIM],
) -> [f64; FEATURE_DIM] {
    let mut out = [0.0; FEATURE_DIM];
    for i in 0..FEATURE_DIM {
        out[i] = (x[i] - means[i]) / stds[i];
    }
    out
}

impl Regressor for KnnRegressor {
    fn predict(&self, fv: &FeatureVector) -> f64 {
        let q = normalize(&fv.features(), &self.means, &self.stds);
        let mut dist: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, (x, _))| {
                let d: f64 = x.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        dist.sort_unstable_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("distances are finite")
                .then(a.1.cmp(&b.1))
        });
        dist[..self.k]
            .iter()
            .map(|&(_, i)| self.rows[i].1)
            .sum::<f64>()
            / self.k as f64
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Patient-wise split: windows of the training patients are partitioned into
/// validation folds; test patients never contribute a window to training,
/// undersampling or normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub train_patients: Vec<String>,
    pub test_patients: Vec<String>,
    /// Each fold is a list of (patient id, window index) keys.
    pub val_folds: Vec<Vec<(String, usize)>>,
}

impl SplitPlan {
    /// Splits the cohort: `test_patients` are held out entirely, and the
    /// remaining patients' windows are shuffled (seeded) into `n_folds`
    /// round-robin folds.
    pub fn build(
        features: &BTreeMap<String, Vec<FeatureVector>>,
        test_patients: &BTreeSet<String>,
        n_folds: usize,
        seed: u64,
    ) -> Result<Self, BaselineError> {
        if n_folds == 0 {
            return Err(BaselineError::InvalidSplit("need at least 1 fold".into()));
        }
        for t in test_patients {
            if !features.contains_key(t) {
                return Err(BaselineError::InvalidSplit(format!(
                    "test patient {t} not in cohort"
                )));
            }
        }
        let train_patients: Vec<String> = features
            .keys()
            .filter(|k| !test_patients.contains(*k))
            .cloned()
            .collect();
        if train_patients.is_empty() {
            return Err(BaselineError::InvalidSplit(
                "no training patients left".into(),
            ));
        }
        let mut keys: Vec<(String, usize)> = train_patients
            .iter()
            .flat_map(|pid| (0..features[pid].len()).map(move |i| (pid.clone(), i)))
            .collect();
        if keys.len() < n_folds {
            return Err(BaselineError::InvalidSplit(format!(
                "{} train windows cannot fill {n_folds} folds",
                keys.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..keys.len()).rev() {
            let j = rng.gen_range(0..=i);
            keys.swap(i, j);
        }
        let mut val_folds: Vec<Vec<(String, usize)>> = vec![Vec::new(); n_folds];
        for (i, key) in keys.into_iter().enumerate() {
            val_folds[i % n_folds].push(key);
        }
        Ok(Self {
            train_patients,
            test_patients: test_patients.iter().cloned().collect(),
            val_folds,
        })
    }

    pub fn validate(
        &self,
        features: &BTreeMap<String, Vec<FeatureVector>>,
    ) -> Result<(), BaselineError> {
        let train: BTreeSet<&String> = self.train_patients.iter().collect();
        let test: BTreeSet<&String> = self.test_patients.iter().collect();
        if train.intersection(&test).next().is_some() {
            return Err(BaselineError::InvalidSplit(
                "train and test patients overlap".into(),
            ));
        }
        let mut seen: BTreeSet<(&String, usize)> = BTreeSet::new();
        let mut total = 0usize;
        for fold in &self.val_folds {
            for (pid, idx) in fold {
                if !train.contains(pid) {
                    return Err(BaselineError::InvalidSplit(format!(
                        "fold window from non-train patient {pid}"
                    )));
                }
                if *idx >= features.get(pid).map_or(0, Vec::len) {
                    return Err(BaselineError::InvalidSplit(format!(
                        "fold window {pid}/{idx} out of range"
                    )));
                }
                if !seen.insert((pid, *idx)) {
                    return Err(BaselineError::InvalidSplit(format!(
                        "window {pid}/{idx} in two folds"
                    )));
                }
                total += 1;
            }
        }
        let expect: usize = self.train_patients.iter().map(|p| features[p].len()).sum();
        if total != expect {
            return Err(BaselineError::InvalidSplit(format!(
                "folds cover {total} windows, train patients have {expect}"
            )));
        }
        Ok(())
    }
}

/// Averaged metrics of one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolMetrics {
    pub mse: f64,
    pub mae: f64,
    pub r2: f64,
}

/// Outcome of the full protocol: fold-averaged validation metrics and
/// fold-averaged metrics on the held-out test patients.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolReport {
    pub model: String,
    pub validation: ProtocolMetrics,
    pub test: ProtocolMetrics,
}

fn average(ms: &[Metrics]) -> ProtocolMetrics {
    let n = ms.len() as f64;
    ProtocolMetrics {
        mse: ms.iter().map(|m| m.mse).sum::<f64>() / n,
        mae: ms.iter().map(|m| m.mae).sum::<f64>() / n,
        r2: ms.iter().map(|m| m.r2).sum::<f64>() / n,
    }
}

/// Runs the protocol: per fold, train on the undersampled remainder of the
/// train pool, evaluate on the fold and on the full test set; report the
/// averages over folds.
pub fn run_protocol(
    features: &BTreeMap<String, Vec<FeatureVector>>,
    plan: &SplitPlan,
    k: usize,
    seed: u64,
) -> Result<ProtocolReport, BaselineError> {
    plan.validate(features)?;
    if plan.test_patients.len() < 2 {
        return Err(BaselineError::TooFewTestPatients(plan.test_patients.len()));
    }
    let test_rows: Vec<&FeatureVector> = plan
        .test_patients
        .iter()
        .flat_map(|pid| features[pid].iter())
        .collect();

    let mut val_metrics = Vec::with_capacity(plan.val_folds.len());
    let mut test_metrics = Vec::with_capacity(plan.val_folds.len());
    let mut model_name = String::new();
    for (f, fold) in plan.val_folds.iter().enumerate() {
        let in_fold: BTreeSet<(&String, usize)> = fold.iter().map(|(pid, i)| (pid, *i)).collect();
        let train_rows: Vec<FeatureVector> = plan
            .train_patients
            .iter()
            .flat_map(|pid| {
                features[pid]
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !in_fold.contains(&(pid, *i)))
                    .map(|(_, fv)| fv.clone())
            })
            .collect();
        let sampled = undersample(&train_rows, derive_seed(seed, f as u64))?;
        let model = fit_knn(&sampled, k)?;
        model_name = model.name().to_string();

        let fold_rows: Vec<&FeatureVector> =
            fold.iter().map(|(pid, i)| &features[pid][*i]).collect();
        val_metrics.push(split_metrics(&model, &fold_rows)?);
        test_metrics.push(split_metrics(&model, &test_rows)?);
    }
    Ok(ProtocolReport {
        model: model_name,
        validation: average(&val_metrics),
        test: average(&test_metrics),
    })
}

fn split_metrics(model: &dyn Regressor, rows: &[&FeatureVector]) -> Result<Metrics, BaselineError> {
    let y: Vec<f64> = rows.iter().map(|r| r.label).collect();
    let y_pred: Vec<f64> = rows.iter().map(|r| model.predict(r)).collect();
    Ok(evaluate::metrics(&y, &y_pred)?)
}
