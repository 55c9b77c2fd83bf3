//! Reflectance pulse oximetry with per-patient line calibration.
//!
//! Estimating SpO2 from a reflectance probe is patient dependent: the red and
//! IR light paths differ from person to person, so a single factory
//! calibration curve does not transfer. This crate implements the full chain
//! needed to study and work around that:
//!
//! - [`synth`]: seeded generator for paired transmittance/reflectance PPG
//!   records with known ground-truth SpO2 trajectories and per-patient
//!   R-to-SpO2 lines.
//! - [`preprocess`]: moving-average smoothing, detrending, peak/valley
//!   detection with spacing-based pruning, red/IR cross-correlation quality
//!   gate, and 4 s / 25 %-overlap windowing.
//! - [`ratio`]: per-window AC/DC extraction, the R-value
//!   `(RED_AC/RED_DC) / (IR_AC/IR_DC)`, the reference transmittance curve,
//!   and high-DC anomaly flagging.
//! - [`calibrate`]: per-patient line fitting, the wide-range training set,
//!   lateral-distance matching of a 5-point calibration set, and SpO2
//!   estimation from the selected line.
//! - [`baseline`]: pooled-window kNN regression with a patient-wise
//!   train/validation/test protocol, demonstrating why pooled models fail on
//!   unseen patients.
//! - [`evaluate`]: MSE/MAE/R², per-patient box-plot summaries and
//!   Bland-Altman agreement analysis.
//! - [`io`]: the CSV and JSON formats shared by the CLI stages.

pub mod baseline;
pub mod calibrate;
pub mod evaluate;
pub mod io;
pub mod preprocess;
pub mod ratio;
pub mod synth;

/// Lowest SpO2 value handled anywhere in the pipeline, in percent.
pub const SPO2_MIN: f64 = 50.0;
/// Highest SpO2 value handled anywhere in the pipeline, in percent.
pub const SPO2_MAX: f64 = 100.0;

/// Derives an independent stream seed from a base seed and an index
/// (splitmix64 finalizer).
pub(crate) fn derive_seed(seed: u64, idx: u64) -> u64 {
    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix64(seed ^ splitmix64(idx.wrapping_add(1)))
}
