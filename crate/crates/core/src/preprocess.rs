//! Waveform preprocessing: smoothing, detrending, extrema detection and
//! overlapped windowing.
//!
//! A raw two-channel record goes through four steps per analysis window:
//!
//! 1. moving-average smoothing (50 samples) to knock out high-frequency noise,
//! 2. detrending against a 1 s moving-average baseline so peaks and valleys
//!    sit on a flat line,
//! 3. peak/valley detection with relative prominence and spacing-based
//!    pruning of spurious extrema,
//! 4. a red/IR cross-correlation quality gate.
//!
//! Windows are 4 s long with 25 % overlap by default.

use thiserror::Error;

/// Default analysis window length in seconds.
pub const DEFAULT_WINDOW_S: f64 = 4.0;
/// Default overlap fraction between consecutive windows.
pub const DEFAULT_OVERLAP: f64 = 0.25;
/// Default smoothing filter length in samples.
pub const DEFAULT_SMOOTH_LEN: usize = 50;
/// Default red/IR Pearson correlation threshold for the quality gate.
pub const DEFAULT_QUALITY_THRESHOLD: f64 = 0.9;
/// Minimum prominence of a kept extremum, as a fraction of the window
/// peak-to-peak amplitude.
pub const PROMINENCE_FRAC: f64 = 0.25;
/// An extremum closer than this fraction of the median same-kind interval to
/// its predecessor is discarded.
pub const SPACING_FRAC: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("moving average window length must be at least 1")]
    ZeroWindow,
    #[error("series is empty")]
    EmptySeries,
    #[error("series too short: {found} samples, need at least {required}")]
    SeriesTooShort { required: usize, found: usize },
    #[error("record too short: {found} samples, need at least one window of {required}")]
    RecordTooShort { required: usize, found: usize },
    #[error("sampling rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("channel lengths differ: red {red}, ir {ir}")]
    ChannelLengthMismatch { red: usize, ir: usize },
    #[error("record contains non-finite samples")]
    NonFiniteSamples,
    #[error("invalid windowing parameters: {0}")]
    InvalidParams(String),
}

/// Probe placement of a PPG record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeSite {
    Finger,
    Wrist,
    Forehead,
    TransmittanceFinger,
}

/// A two-channel (red/IR) raw waveform for one patient and probe.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgRecord {
    pub patient_id: String,
    /// Sampling rate in Hz.
    pub rate: f64,
    pub red: Vec<f64>,
    pub ir: Vec<f64>,
    pub site: ProbeSite,
}

impl PpgRecord {
    pub fn len(&self) -> usize {
        self.red.len()
    }

    pub fn is_empty(&self) -> bool {
        self.red.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.rate
    }

    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.rate <= 0.0 {
            return Err(PreprocessError::NonPositiveRate(self.rate));
        }
        if self.red.len() != self.ir.len() {
            return Err(PreprocessError::ChannelLengthMismatch {
                red: self.red.len(),
                ir: self.ir.len(),
            });
        }
        if self.red.is_empty() {
            return Err(PreprocessError::EmptySeries);
        }
        if self
            .red
            .iter()
            .chain(self.ir.iter())
            .any(|v| !v.is_finite())
        {
            return Err(PreprocessError::NonFiniteSamples);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremumKind {
    Peak,
    Valley,
}

/// One detected extremum, indexed relative to its window slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extremum {
    pub index: usize,
    pub kind: ExtremumKind,
}

/// Outcome of the red/IR cross-correlation quality gate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quality {
    pub passed: bool,
    /// Zero-lag Pearson correlation of the detrended channels, in [-1, 1].
    /// Reported as 0 when either channel has zero variance.
    pub score: f64,
}

/// One fully processed analysis window.
///
/// `raw_*` are slices of the original record, `smoothed_*` the moving-average
/// filtered versions used for amplitude readout, `detrended_*` the
/// baseline-subtracted versions used for extrema detection and the quality
/// gate. Extrema indices are relative to the window start.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start_index: usize,
    pub raw_red: Vec<f64>,
    pub raw_ir: Vec<f64>,
    pub smoothed_red: Vec<f64>,
    pub smoothed_ir: Vec<f64>,
    pub detrended_red: Vec<f64>,
    pub detrended_ir: Vec<f64>,
    pub red_extrema: Vec<Extremum>,
    pub ir_extrema: Vec<Extremum>,
    pub quality: Quality,
}

/// Parameters for [`segment_windows`].
#[derive(Debug, Clone, Copy)]
pub struct WindowingParams {
    pub win_s: f64,
    pub overlap: f64,
    pub smooth_len: usize,
    pub quality_threshold: f64,
}

impl Default for WindowingParams {
    fn default() -> Self {
        Self {
            win_s: DEFAULT_WINDOW_S,
            overlap: DEFAULT_OVERLAP,
            smooth_len: DEFAULT_SMOOTH_LEN,
            quality_threshold: DEFAULT_QUALITY_THRESHOLD,
        }
    }
}

impl WindowingParams {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if self.win_s.is_nan() || self.win_s <= 0.0 {
            return Err(PreprocessError::InvalidParams(format!(
                "window seconds must be positive, got {}",
                self.win_s
            )));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(PreprocessError::InvalidParams(format!(
                "overlap must be in [0, 1), got {}",
                self.overlap
            )));
        }
        if self.smooth_len == 0 {
            return Err(PreprocessError::ZeroWindow);
        }
        if !(-1.0..=1.0).contains(&self.quality_threshold) {
            return Err(PreprocessError::InvalidParams(format!(
                "quality threshold must be in [-1, 1], got {}",
                self.quality_threshold
            )));
        }
        Ok(())
    }
}

/// Window length in samples for a given rate.
pub fn window_len(rate: f64, win_s: f64) -> usize {
    (win_s * rate).round() as usize
}

/// Hop length in samples for a given window length and overlap fraction.
pub fn hop_len(window_len: usize, overlap: f64) -> usize {
    (window_len as f64 * (1.0 - overlap)).round() as usize
}

/// Number of windows that fit in `n` samples: `floor((n - l) / hop) + 1`.
pub fn window_count(n: usize, l: usize, hop: usize) -> usize {
    if n < l || hop == 0 {
        return 0;
    }
    (n - l) / hop + 1
}

/// Centered moving average with the window clamped to the series bounds.
///
/// Element `i` is the mean of `x[i-(len-1)/2 ..= i+len/2]` intersected with
/// the series, so the effective window shrinks near the edges. The output is
/// clamped to `[min(x), max(x)]`, which keeps the filter exact on constant
/// input.
pub fn moving_average(x: &[f64], len: usize) -> Result<Vec<f64>, PreprocessError> {
    if len == 0 {
        return Err(PreprocessError::ZeroWindow);
    }
    if x.is_empty() {
        return Err(PreprocessError::EmptySeries);
    }
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in x {
        acc += v;
        prefix.push(acc);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let left = (len - 1) / 2;
    let right = len / 2;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let a = i.saturating_sub(left);
        let b = (i + right + 1).min(n);
        let mean = (prefix[b] - prefix[a]) / (b - a) as f64;
        out.push(mean.clamp(lo, hi));
    }
    Ok(out)
}

/// Removes baseline wander by subtracting a 1 s moving-average baseline:
/// `x - moving_average(x, round(rate))`.
pub fn detrend(x: &[f64], rate: f64) -> Result<Vec<f64>, PreprocessError> {
    if rate <= 0.0 {
        return Err(PreprocessError::NonPositiveRate(rate));
    }
    let base = (rate.round() as usize).max(1);
    if x.len() < base {
        return Err(PreprocessError::SeriesTooShort {
            required: base,
            found: x.len(),
        });
    }
    let baseline = moving_average(x, base)?;
    Ok(x.iter().zip(&baseline).map(|(v, b)| v - b).collect())
}

/// Finds alternating peaks and valleys in a detrended series.
///
/// Candidates are plateau-aware local extrema. A candidate is kept when its
/// prominence reaches [`PROMINENCE_FRAC`] of the series peak-to-peak
/// amplitude; per kind, an extremum closer than [`SPACING_FRAC`] of the
/// median same-kind interval to its kept predecessor is discarded; finally
/// peaks and valleys are forced to alternate by keeping the more extreme of
/// two consecutive same-kind entries.
///
/// Returns an empty list (not an error) when fewer than 2 peaks survive.
pub fn detect_extrema(x: &[f64], rate: f64) -> Result<Vec<Extremum>, PreprocessError> {
    if rate <= 0.0 {
        return Err(PreprocessError::NonPositiveRate(rate));
    }
    // Two beat periods at the 40 bpm lower bound.
    let min_len = (2.0 * (60.0 / 40.0) * rate).round() as usize;
    if x.len() < min_len {
        return Err(PreprocessError::SeriesTooShort {
            required: min_len,
            found: x.len(),
        });
    }
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let p2p = hi - lo;
    if p2p <= 0.0 || p2p.is_nan() {
        return Ok(Vec::new());
    }
    let threshold = PROMINENCE_FRAC * p2p;

    let mut peaks = Vec::new();
    let mut valleys = Vec::new();
    for e in local_extrema(x) {
        match e.kind {
            ExtremumKind::Peak if peak_prominence(x, e.index) >= threshold => peaks.push(e.index),
            ExtremumKind::Valley if valley_prominence(x, e.index) >= threshold => {
                valleys.push(e.index)
            }
            _ => {}
        }
    }
    let peaks = prune_by_spacing(&peaks);
    let valleys = prune_by_spacing(&valleys);

    let mut merged = Vec::with_capacity(peaks.len() + valleys.len());
    let (mut i, mut j) = (0, 0);
    while i < peaks.len() || j < valleys.len() {
        let take_peak = match (peaks.get(i), valleys.get(j)) {
            (Some(&p), Some(&v)) => p < v,
            (Some(_), None) => true,
            _ => false,
        };
        if take_peak {
            merged.push(Extremum {
                index: peaks[i],
                kind: ExtremumKind::Peak,
            });
            i += 1;
        } else {
            merged.push(Extremum {
                index: valleys[j],
                kind: ExtremumKind::Valley,
            });
            j += 1;
        }
    }

    let alternated = enforce_alternation(x, merged);
    let n_peaks = alternated
        .iter()
        .filter(|e| e.kind == ExtremumKind::Peak)
        .count();
    if n_peaks < 2 {
        return Ok(Vec::new());
    }
    Ok(alternated)
}

/// Plateau-aware local extrema; a plateau is reported at its midpoint.
fn local_extrema(x: &[f64]) -> Vec<Extremum> {
    let n = x.len();
    let mut out = Vec::new();
    if n < 3 {
        return out;
    }
    let mut i = 1;
    while i < n - 1 {
        // Run of equal values [i, j].
        let mut j = i;
        while j + 1 < n && x[j + 1] == x[i] {
            j += 1;
        }
        if j < n - 1 {
            let left = x[i - 1];
            let right = x[j + 1];
            let mid = (i + j) / 2;
            if left < x[i] && right < x[i] {
                out.push(Extremum {
                    index: mid,
                    kind: ExtremumKind::Peak,
                });
            } else if left > x[i] && right > x[i] {
                out.push(Extremum {
                    index: mid,
                    kind: ExtremumKind::Valley,
                });
            }
        }
        i = j + 1;
    }
    out
}

/// Topographic prominence of a peak: height above the higher of the two
/// bases, where each base is the minimum between the peak and the nearest
/// strictly higher sample (or the series end).
fn peak_prominence(x: &[f64], p: usize) -> f64 {
    let v = x[p];
    let mut left_min = v;
    let mut i = p;
    while i > 0 {
        i -= 1;
        if x[i] > v {
            break;
        }
        left_min = left_min.min(x[i]);
    }
    let mut right_min = v;
    let mut i = p + 1;
    while i < x.len() {
        if x[i] > v {
            break;
        }
        right_min = right_min.min(x[i]);
        i += 1;
    }
    v - left_min.max(right_min)
}

fn valley_prominence(x: &[f64], p: usize) -> f64 {
    let v = x[p];
    let mut left_max = v;
    let mut i = p;
    while i > 0 {
        i -= 1;
        if x[i] < v {
            break;
        }
        left_max = left_max.max(x[i]);
    }
    let mut right_max = v;
    let mut i = p + 1;
    while i < x.len() {
        if x[i] < v {
            break;
        }
        right_max = right_max.max(x[i]);
        i += 1;
    }
    left_max.min(right_max) - v
}

/// Drops same-kind extrema closer than `SPACING_FRAC` of the median interval
/// to their kept predecessor. The median is computed from the unpruned
/// intervals.
fn prune_by_spacing(indices: &[usize]) -> Vec<usize> {
    if indices.len() < 2 {
        return indices.to_vec();
    }
    let mut intervals: Vec<f64> = indices.windows(2).map(|w| (w[1] - w[0]) as f64).collect();
    intervals.sort_by(|a, b| a.partial_cmp(b).expect("intervals are finite"));
    let m = intervals.len();
    let median = if m.is_multiple_of(2) {
        (intervals[m / 2 - 1] + intervals[m / 2]) / 2.0
    } else {
        intervals[m / 2]
    };
    let limit = SPACING_FRAC * median;
    let mut kept = vec![indices[0]];
    for &idx in &indices[1..] {
        let last = *kept.last().expect("kept is non-empty");
        if ((idx - last) as f64) < limit {
            continue;
        }
        kept.push(idx);
    }
    kept
}

/// Keeps the more extreme of two consecutive same-kind extrema.
fn enforce_alternation(x: &[f64], merged: Vec<Extremum>) -> Vec<Extremum> {
    let mut out: Vec<Extremum> = Vec::with_capacity(merged.len());
    for e in merged {
        if let Some(last) = out.last_mut() {
            if last.kind == e.kind {
                let better = match e.kind {
                    ExtremumKind::Peak => x[e.index] > x[last.index],
                    ExtremumKind::Valley => x[e.index] < x[last.index],
                };
                if better {
                    *last = e;
                }
                continue;
            }
        }
        out.push(e);
    }
    out
}

/// Zero-lag Pearson correlation; `None` when either input has (numerically)
/// zero variance.
fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if variance_is_zero(va, n, ma) || variance_is_zero(vb, n, mb) {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

fn variance_is_zero(dev_sq_sum: f64, n: f64, mean: f64) -> bool {
    dev_sq_sum == 0.0 || (dev_sq_sum / n).sqrt() <= 16.0 * f64::EPSILON * n.sqrt() * mean.abs()
}

/// Scores a window by the Pearson correlation of its detrended channels and
/// sets the pass flag against `threshold`. A zero-variance channel scores 0
/// and fails.
pub fn quality_check(mut w: Window, threshold: f64) -> Window {
    let score = pearson(&w.detrended_red, &w.detrended_ir).unwrap_or(0.0);
    w.quality = Quality {
        passed: score >= threshold,
        score,
    };
    w
}

/// Cuts a record into fully processed overlapping windows.
///
/// Window length is `round(win_s * rate)` and the hop is
/// `round(len * (1 - overlap))`, giving `floor((n - len) / hop) + 1` windows.
/// Each window is smoothed, detrended, extrema-detected and quality-checked
/// independently, so windows of one record can be consumed in any order.
pub fn segment_windows(
    rec: &PpgRecord,
    params: &WindowingParams,
) -> Result<Vec<Window>, PreprocessError> {
    rec.validate()?;
    params.validate()?;
    let l = window_len(rec.rate, params.win_s);
    if l == 0 {
        return Err(PreprocessError::InvalidParams(
            "window length rounds to zero samples".into(),
        ));
    }
    if rec.len() < l {
        return Err(PreprocessError::RecordTooShort {
            required: l,
            found: rec.len(),
        });
    }
    let hop = hop_len(l, params.overlap).max(1);
    let count = window_count(rec.len(), l, hop);
    let mut windows = Vec::with_capacity(count);
    for k in 0..count {
        let s = k * hop;
        let raw_red = rec.red[s..s + l].to_vec();
        let raw_ir = rec.ir[s..s + l].to_vec();
        let smoothed_red = moving_average(&raw_red, params.smooth_len)?;
        let smoothed_ir = moving_average(&raw_ir, params.smooth_len)?;
        let detrended_red = detrend(&smoothed_red, rec.rate)?;
        let detrended_ir = detrend(&smoothed_ir, rec.rate)?;
        let red_extrema = detect_extrema(&detrended_red, rec.rate)?;
        let ir_extrema = detect_extrema(&detrended_ir, rec.rate)?;
        let w = Window {
            start_index: s,
            raw_red,
            raw_ir,
            smoothed_red,
            smoothed_ir,
            detrended_red,
            detrended_ir,
            red_extrema,
            ir_extrema,
            quality: Quality::default(),
        };
        windows.push(quality_check(w, params.quality_threshold));
    }
    Ok(windows)
}
