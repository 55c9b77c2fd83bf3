//! Seeded synthetic cohorts of paired transmittance/reflectance PPG records.
//!
//! Each patient owns a ground-truth reflectance line `spo2 = slope * R +
//! intercept` and an SpO2 trajectory. The generator inverts both estimators:
//! per analysis window it sets the reflectance red perfusion so the window's
//! true R equals `(spo2 - intercept) / slope`, and the transmittance red
//! perfusion so R equals the inverse of the reference curve. IR perfusion is
//! held constant. On top of the pulsatile component sit optional baseline
//! wander (one sinusoid), white noise scaled by the DC level, and additive
//! red-channel DC steps that reproduce the high-DC anomaly.
//!
//! Everything is a pure function of its inputs: the same profile, trajectory,
//! rate and seed give bit-identical records.

use crate::preprocess::{self, PpgRecord, ProbeSite};
use crate::ratio::ReferenceCurve;
use crate::{derive_seed, SPO2_MAX, SPO2_MIN};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid profile for {patient_id}: {reason}")]
    InvalidProfile { patient_id: String, reason: String },
    #[error("trajectory has no segments")]
    EmptyTrajectory,
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("trough {trough} exceeds baseline {baseline}")]
    TroughAboveBaseline { baseline: f64, trough: f64 },
    #[error("total duration must be at least 60 s, got {0}")]
    DurationTooShort(f64),
    #[error("sampling rate must be at least 100 Hz, got {0}")]
    RateTooLow(f64),
    #[error("SpO2 {spo2} is outside the invertible range of the {curve} line")]
    OutsideInvertibleRange { spo2: f64, curve: &'static str },
    #[error("target perfusion {perfusion:.3} for SpO2 {spo2} is not physical")]
    NonPhysicalPerfusion { spo2: f64, perfusion: f64 },
    #[error("cohort must have at least one patient")]
    EmptyCohort,
    #[error("invalid cohort config: {0}")]
    InvalidConfig(String),
    #[error("could not draw a unique line for patient {0}")]
    LineCollision(String),
}

/// A red-channel DC step: an additive offset of `(dc_multiplier - 1) * DC`
/// applied to the reflectance red channel for `start_s <= t < end_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalySegment {
    pub start_s: f64,
    pub end_s: f64,
    pub dc_multiplier: f64,
}

impl AnomalySegment {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }
}

/// Everything that makes one synthetic patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientProfile {
    pub patient_id: String,
    /// SpO2-% per R-unit of the reflectance line; negative.
    pub reflectance_slope: f64,
    /// SpO2-% at R = 0 of the reflectance line.
    pub reflectance_intercept: f64,
    /// Beats per minute.
    pub heart_rate: f64,
    /// AC/DC ratio of the IR channel, dimensionless.
    pub ir_perfusion: f64,
    pub red_dc_level: f64,
    pub ir_dc_level: f64,
    /// Baseline wander amplitude as a fraction of DC.
    pub wander_amplitude: f64,
    /// Baseline wander frequency in Hz.
    pub wander_frequency: f64,
    /// White-noise sigma as a fraction of DC.
    pub noise_sigma: f64,
    pub anomaly_segments: Vec<AnomalySegment>,
}

impl PatientProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |reason: String| {
            Err(SynthError::InvalidProfile {
                patient_id: self.patient_id.clone(),
                reason,
            })
        };
        if self.reflectance_slope.is_nan() || self.reflectance_slope >= 0.0 {
            return fail(format!(
                "slope must be negative, got {}",
                self.reflectance_slope
            ));
        }
        if self.ir_perfusion.is_nan() || self.ir_perfusion <= 0.0 || self.ir_perfusion > 0.2 {
            return fail(format!(
                "ir_perfusion must be in (0, 0.2], got {}",
                self.ir_perfusion
            ));
        }
        if !(40.0..=180.0).contains(&self.heart_rate) {
            return fail(format!(
                "heart_rate must be in [40, 180], got {}",
                self.heart_rate
            ));
        }
        if !(self.red_dc_level > 0.0 && self.ir_dc_level > 0.0) {
            return fail("DC levels must be positive".into());
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return fail(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            ));
        }
        if [self.wander_amplitude, self.wander_frequency]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return fail("wander parameters must be non-negative".into());
        }
        for seg in &self.anomaly_segments {
            if seg.dc_multiplier.is_nan() || seg.dc_multiplier <= 1.0 {
                return fail(format!(
                    "anomaly dc_multiplier must exceed 1, got {}",
                    seg.dc_multiplier
                ));
            }
            if seg.end_s.is_nan() || seg.end_s <= seg.start_s || seg.start_s < 0.0 {
                return fail(format!(
                    "anomaly segment [{}, {}) is empty or negative",
                    seg.start_s, seg.end_s
                ));
            }
        }
        Ok(())
    }

    /// The patient's reflectance R for a given SpO2.
    pub fn r_for(&self, spo2: f64) -> Option<f64> {
        let r = (spo2 - self.reflectance_intercept) / self.reflectance_slope;
        (r.is_finite() && r > 0.0).then_some(r)
    }
}

/// One linear piece of an SpO2 trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub duration_s: f64,
    pub start_spo2: f64,
    pub end_spo2: f64,
}

/// A piecewise-linear SpO2-over-time curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spo2Trajectory {
    segments: Vec<TrajectorySegment>,
}

impl Spo2Trajectory {
    pub fn new(segments: Vec<TrajectorySegment>) -> Result<Self, SynthError> {
        if segments.is_empty() {
            return Err(SynthError::EmptyTrajectory);
        }
        for (i, seg) in segments.iter().enumerate() {
            if seg.duration_s.is_nan() || seg.duration_s <= 0.0 {
                return Err(SynthError::InvalidTrajectory(format!(
                    "segment {i} has non-positive duration {}",
                    seg.duration_s
                )));
            }
            for v in [seg.start_spo2, seg.end_spo2] {
                if !(SPO2_MIN..=SPO2_MAX).contains(&v) {
                    return Err(SynthError::InvalidTrajectory(format!(
                        "segment {i} SpO2 {v} outside [{SPO2_MIN}, {SPO2_MAX}]"
                    )));
                }
            }
            if i > 0 && segments[i - 1].end_spo2 != seg.start_spo2 {
                return Err(SynthError::InvalidTrajectory(format!(
                    "segment {i} starts at {} but previous ends at {}",
                    seg.start_spo2,
                    segments[i - 1].end_spo2
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[TrajectorySegment] {
        &self.segments
    }

    pub fn total_s(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    /// SpO2 at time `t`, holding the end value past the final segment.
    pub fn value_at(&self, t: f64) -> f64 {
        let mut offset = 0.0;
        for seg in &self.segments {
            if t < offset + seg.duration_s {
                let frac = (t - offset) / seg.duration_s;
                return seg.start_spo2 + frac * (seg.end_spo2 - seg.start_spo2);
            }
            offset += seg.duration_s;
        }
        self.segments.last().expect("validated non-empty").end_spo2
    }

    /// Smallest and largest SpO2 reached (piecewise linear, so extremes sit
    /// at segment endpoints).
    pub fn span(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for seg in &self.segments {
            lo = lo.min(seg.start_spo2).min(seg.end_spo2);
            hi = hi.max(seg.start_spo2).max(seg.end_spo2);
        }
        (lo, hi)
    }
}

/// The four-phase shape of a desaturation run: plateau at `baseline`, descent
/// to `trough`, trough hold, recovery back to `baseline`, each a quarter of
/// `total_s`. `trough == baseline` degenerates to a flat trajectory.
pub fn default_trajectory(
    baseline: f64,
    trough: f64,
    total_s: f64,
) -> Result<Spo2Trajectory, SynthError> {
    if !(SPO2_MIN..=SPO2_MAX).contains(&baseline) || !(SPO2_MIN..=SPO2_MAX).contains(&trough) {
        return Err(SynthError::InvalidTrajectory(format!(
            "baseline {baseline} and trough {trough} must be in [{SPO2_MIN}, {SPO2_MAX}]"
        )));
    }
    if trough > baseline {
        return Err(SynthError::TroughAboveBaseline { baseline, trough });
    }
    if total_s.is_nan() || total_s < 60.0 {
        return Err(SynthError::DurationTooShort(total_s));
    }
    let quarter = total_s / 4.0;
    Spo2Trajectory::new(vec![
        TrajectorySegment {
            duration_s: quarter,
            start_spo2: baseline,
            end_spo2: baseline,
        },
        TrajectorySegment {
            duration_s: quarter,
            start_spo2: baseline,
            end_spo2: trough,
        },
        TrajectorySegment {
            duration_s: quarter,
            start_spo2: trough,
            end_spo2: trough,
        },
        TrajectorySegment {
            duration_s: quarter,
            start_spo2: trough,
            end_spo2: baseline,
        },
    ])
}

/// Paired records plus per-sample ground truth for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub transmittance: PpgRecord,
    pub reflectance: PpgRecord,
    /// Ground-truth SpO2 at every sample timestamp.
    pub truth: Vec<f64>,
    pub profile: PatientProfile,
}

/// One pulse period: raised-cosine upstroke into an exponential decay tail
/// tapered back to zero, then shifted to zero mean and scaled to unit
/// peak-to-valley amplitude.
pub fn beat_template(period: usize) -> Vec<f64> {
    const RISE: f64 = 0.3;
    const TAIL_TAU: f64 = 0.25;
    let mut raw = Vec::with_capacity(period);
    let decay_at_end = (-(1.0 - RISE) / TAIL_TAU).exp();
    for k in 0..period {
        let u = k as f64 / period as f64;
        let v = if u < RISE {
            0.5 * (1.0 - (std::f64::consts::PI * u / RISE).cos())
        } else {
            let d = (u - RISE) / (1.0 - RISE);
            (-d * (1.0 - RISE) / TAIL_TAU).exp() - decay_at_end * d
        };
        raw.push(v);
    }
    let mean = raw.iter().sum::<f64>() / period as f64;
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let p2v = hi - lo;
    raw.iter().map(|v| (v - mean) / p2v).collect()
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = loop {
        let v: f64 = rng.gen();
        if v > 0.0 {
            break v;
        }
    };
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

fn interp_knots(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let mut lo = 0;
    let mut hi = last;
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if xs[mid] <= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

struct ChannelSpec<'a> {
    dc: f64,
    /// Per-sample perfusion, either constant (IR) or interpolated from
    /// window-center targets (red).
    perfusion: Perfusion<'a>,
    noise_sigma: f64,
    anomalies: &'a [AnomalySegment],
}

enum Perfusion<'a> {
    Constant(f64),
    PerSample(&'a [f64]),
}

struct Wander {
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

fn synth_channel(
    n: usize,
    rate: f64,
    template: &[f64],
    wander: &Wander,
    spec: &ChannelSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let period = template.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / rate;
        let perf = match spec.perfusion {
            Perfusion::Constant(p) => p,
            Perfusion::PerSample(p) => p[k],
        };
        let mut rel = 1.0 + perf * template[k % period];
        if wander.amplitude > 0.0 {
            rel += wander.amplitude * (TAU * wander.frequency * t + wander.phase).sin();
        }
        if spec.noise_sigma > 0.0 {
            rel += spec.noise_sigma * standard_normal(rng);
        }
        let mut v = spec.dc * rel;
        for seg in spec.anomalies {
            if seg.contains(t) {
                v += spec.dc * (seg.dc_multiplier - 1.0);
            }
        }
        out.push(v);
    }
    out
}

/// Generates the paired records for one patient.
///
/// Per-window perfusion targets are taken at the centers of the default
/// 4 s / 25 %-overlap analysis grid and linearly interpolated in between, so
/// the pulsatile amplitude is continuous across window edges. Deterministic
/// for a fixed seed.
pub fn synthesize(
    profile: &PatientProfile,
    trajectory: &Spo2Trajectory,
    rate: f64,
    seed: u64,
) -> Result<SynthPair, SynthError> {
    profile.validate()?;
    if rate < 100.0 {
        return Err(SynthError::RateTooLow(rate));
    }
    let n = (trajectory.total_s() * rate).round() as usize;
    if n == 0 {
        return Err(SynthError::InvalidTrajectory("zero-length record".into()));
    }
    let truth: Vec<f64> = (0..n)
        .map(|k| trajectory.value_at(k as f64 / rate))
        .collect();

    // Window centers of the default analysis grid, in samples.
    let l = preprocess::window_len(rate, preprocess::DEFAULT_WINDOW_S);
    let hop = preprocess::hop_len(l, preprocess::DEFAULT_OVERLAP).max(1);
    let count = preprocess::window_count(n, l, hop);
    let centers: Vec<f64> = if count == 0 {
        vec![(n as f64 - 1.0) / 2.0]
    } else {
        (0..count)
            .map(|k| (k * hop) as f64 + (l as f64 - 1.0) / 2.0)
            .collect()
    };

    let curve = ReferenceCurve::default();
    let mut refl_targets = Vec::with_capacity(centers.len());
    let mut trans_targets = Vec::with_capacity(centers.len());
    for &c in &centers {
        let spo2 = trajectory.value_at(c / rate);
        let refl_r = profile
            .r_for(spo2)
            .ok_or(SynthError::OutsideInvertibleRange {
                spo2,
                curve: "reflectance",
            })?;
        let trans_r = curve
            .r_for(spo2)
            .ok_or(SynthError::OutsideInvertibleRange {
                spo2,
                curve: "transmittance",
            })?;
        for (r, label) in [(refl_r, "reflectance"), (trans_r, "transmittance")] {
            let p = r * profile.ir_perfusion;
            if !(p > 0.0 && p < 1.0) {
                let _ = label;
                return Err(SynthError::NonPhysicalPerfusion { spo2, perfusion: p });
            }
        }
        refl_targets.push(refl_r * profile.ir_perfusion);
        trans_targets.push(trans_r * profile.ir_perfusion);
    }

    let perf_refl_red: Vec<f64> = (0..n)
        .map(|k| interp_knots(&centers, &refl_targets, k as f64))
        .collect();
    let perf_trans_red: Vec<f64> = (0..n)
        .map(|k| interp_knots(&centers, &trans_targets, k as f64))
        .collect();

    let period = (rate * 60.0 / profile.heart_rate).round().max(2.0) as usize;
    let template = beat_template(period);

    let mut phase_rng = ChaCha8Rng::seed_from_u64(seed);
    phase_rng.set_stream(1);
    let wander = Wander {
        amplitude: profile.wander_amplitude,
        frequency: profile.wander_frequency,
        phase: phase_rng.gen_range(0.0..TAU),
    };

    let channel_rng = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    };

    let refl_red = synth_channel(
        n,
        rate,
        &template,
        &wander,
        &ChannelSpec {
            dc: profile.red_dc_level,
            perfusion: Perfusion::PerSample(&perf_refl_red),
            noise_sigma: profile.noise_sigma,
            anomalies: &profile.anomaly_segments,
        },
        &mut channel_rng(2),
    );
    let refl_ir = synth_channel(
        n,
        rate,
        &template,
        &wander,
        &ChannelSpec {
            dc: profile.ir_dc_level,
            perfusion: Perfusion::Constant(profile.ir_perfusion),
            noise_sigma: profile.noise_sigma,
            anomalies: &[],
        },
        &mut channel_rng(3),
    );
    let trans_red = synth_channel(
        n,
        rate,
        &template,
        &wander,
        &ChannelSpec {
            dc: profile.red_dc_level,
            perfusion: Perfusion::PerSample(&perf_trans_red),
            noise_sigma: profile.noise_sigma,
            anomalies: &[],
        },
        &mut channel_rng(4),
    );
    let trans_ir = synth_channel(
        n,
        rate,
        &template,
        &wander,
        &ChannelSpec {
            dc: profile.ir_dc_level,
            perfusion: Perfusion::Constant(profile.ir_perfusion),
            noise_sigma: profile.noise_sigma,
            anomalies: &[],
        },
        &mut channel_rng(5),
    );

    let reflectance = PpgRecord {
        patient_id: profile.patient_id.clone(),
        rate,
        red: refl_red,
        ir: refl_ir,
        site: ProbeSite::Finger,
    };
    let transmittance = PpgRecord {
        patient_id: profile.patient_id.clone(),
        rate,
        red: trans_red,
        ir: trans_ir,
        site: ProbeSite::TransmittanceFinger,
    };
    for rec in [&reflectance, &transmittance] {
        if rec
            .red
            .iter()
            .chain(rec.ir.iter())
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(SynthError::InvalidProfile {
                patient_id: profile.patient_id.clone(),
                reason: "generated non-positive intensity; noise or wander too large".into(),
            });
        }
    }

    Ok(SynthPair {
        transmittance,
        reflectance,
        truth,
        profile: profile.clone(),
    })
}

/// A closed range to draw a parameter from; `lo == hi` pins the value.
pub type Range = (f64, f64);

/// How a cohort is drawn. All per-patient parameters come from seeded
/// uniform ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub rate: f64,
    pub duration_s: f64,
    pub id_prefix: String,
    pub spo2_baseline: Range,
    /// Width of the desaturation, baseline minus trough.
    pub spo2_span: Range,
    pub slope: Range,
    pub intercept: Range,
    pub heart_rate: Range,
    pub ir_perfusion: Range,
    pub red_dc: Range,
    pub ir_dc: Range,
    pub wander_amplitude: Range,
    pub wander_frequency: Range,
    pub noise_sigma: Range,
    /// Force one shared reflectance line on every patient (control cohorts).
    pub shared_line: Option<(f64, f64)>,
    pub anomaly: Option<CohortAnomaly>,
}

/// Injects the same red-channel DC steps into every `every_nth` patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortAnomaly {
    pub segments: Vec<AnomalySegment>,
    pub every_nth: usize,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            rate: 600.0,
            duration_s: 600.0,
            id_prefix: "p".into(),
            spo2_baseline: (95.0, 99.0),
            spo2_span: (16.0, 28.0),
            slope: (-30.0, -22.0),
            intercept: (110.0, 122.0),
            heart_rate: (60.0, 100.0),
            ir_perfusion: (0.05, 0.09),
            red_dc: (1.2, 2.4),
            ir_dc: (1.8, 3.2),
            wander_amplitude: (0.005, 0.02),
            wander_frequency: (0.15, 0.35),
            noise_sigma: (0.005, 0.01),
            shared_line: None,
            anomaly: None,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let ranges = [
            ("spo2_baseline", self.spo2_baseline),
            ("spo2_span", self.spo2_span),
            ("slope", self.slope),
            ("intercept", self.intercept),
            ("heart_rate", self.heart_rate),
            ("ir_perfusion", self.ir_perfusion),
            ("red_dc", self.red_dc),
            ("ir_dc", self.ir_dc),
            ("wander_amplitude", self.wander_amplitude),
            ("wander_frequency", self.wander_frequency),
            ("noise_sigma", self.noise_sigma),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(SynthError::InvalidConfig(format!(
                    "{name} range ({lo}, {hi}) is not an ordered finite pair"
                )));
            }
        }
        if self.rate < 100.0 {
            return Err(SynthError::InvalidConfig(format!(
                "rate must be at least 100 Hz, got {}",
                self.rate
            )));
        }
        if self.duration_s < 60.0 {
            return Err(SynthError::InvalidConfig(format!(
                "duration must be at least 60 s, got {}",
                self.duration_s
            )));
        }
        if let Some(a) = &self.anomaly {
            if a.every_nth == 0 {
                return Err(SynthError::InvalidConfig(
                    "anomaly every_nth must be >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): Range) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Draws `n_patients` profiles from `config` and synthesizes each one.
/// Profiles are drawn on independent seeded streams, so the cohort is
/// deterministic and no two patients share a line (unless `shared_line`
/// pins one).
pub fn synth_cohort(
    n_patients: usize,
    seed: u64,
    config: &CohortConfig,
) -> Result<Vec<SynthPair>, SynthError> {
    if n_patients == 0 {
        return Err(SynthError::EmptyCohort);
    }
    config.validate()?;
    let mut used_lines: BTreeSet<(u64, u64)> = BTreeSet::new();
    let mut out = Vec::with_capacity(n_patients);
    for i in 0..n_patients {
        let patient_seed = derive_seed(seed, i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(patient_seed);
        rng.set_stream(0);
        let patient_id = format!("{}{:02}", config.id_prefix, i + 1);

        let (slope, intercept) = match config.shared_line {
            Some(line) => line,
            None => {
                let mut attempt = 0;
                loop {
                    let s = sample_range(&mut rng, config.slope);
                    let b = sample_range(&mut rng, config.intercept);
                    if used_lines.insert((s.to_bits(), b.to_bits())) {
                        break (s, b);
                    }
                    attempt += 1;
                    if attempt > 64 {
                        return Err(SynthError::LineCollision(patient_id));
                    }
                }
            }
        };

        let baseline = sample_range(&mut rng, config.spo2_baseline);
        let span = sample_range(&mut rng, config.spo2_span);
        let trough = (baseline - span).max(SPO2_MIN);
        let trajectory = default_trajectory(baseline, trough, config.duration_s)?;

        let anomaly_segments = match &config.anomaly {
            Some(a) if i % a.every_nth == 0 => a.segments.clone(),
            _ => Vec::new(),
        };

        let profile = PatientProfile {
            patient_id,
            reflectance_slope: slope,
            reflectance_intercept: intercept,
            heart_rate: sample_range(&mut rng, config.heart_rate),
            ir_perfusion: sample_range(&mut rng, config.ir_perfusion),
            red_dc_level: sample_range(&mut rng, config.red_dc),
            ir_dc_level: sample_range(&mut rng, config.ir_dc),
            wander_amplitude: sample_range(&mut rng, config.wander_amplitude),
            wander_frequency: sample_range(&mut rng, config.wander_frequency),
            noise_sigma: sample_range(&mut rng, config.noise_sigma),
            anomaly_segments,
        };
        out.push(synthesize(
            &profile,
            &trajectory,
            config.rate,
            patient_seed,
        )?);
    }
    Ok(out)
}
