//! Command-line pipeline: cohort synthesis, preprocessing, training-set
//! construction, calibration and estimation, the pooled-regression baseline,
//! and evaluation reports.
//!
//! Exit codes: 0 on success, 1 on runtime or data errors, 2 on usage errors.

mod config;
mod svg;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use config::{RunConfig, UsageError};
use oxiline::baseline::{features_for_record, run_protocol, SplitPlan};
use oxiline::calibrate::{
    build_training_set, estimate_spo2, match_line, select_calibration_points, CalibrationSet,
};
use oxiline::evaluate::{
    bland_altman, bland_altman_points, box_stats, per_patient_mae, DEFAULT_ERROR_BAND,
};
use oxiline::io::{self, CohortManifest, ManifestEntry, PredictionRow};
use oxiline::preprocess::{segment_windows, PpgRecord, ProbeSite};
use oxiline::ratio::{pair_samples, record_samples, WindowSample};
use oxiline::synth::{synth_cohort, CohortConfig};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "oxiline",
    version,
    about = "Reflectance pulse-oximetry pipeline: synthesis, preprocessing, line calibration and reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort of paired PPG records.
    Synth(SynthArgs),
    /// Window paired records and emit per-window R-values and labels.
    Pipeline(PipelineArgs),
    /// Fit per-patient lines and build the training set.
    Trainset(TrainsetArgs),
    /// Match a new patient's calibration points and estimate SpO2.
    Calibrate(CalibrateArgs),
    /// Run the pooled-window regression protocol.
    Baseline(BaselineArgs),
    /// Aggregate predictions into MAE, box-plot and agreement reports.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of patients to generate.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    patients: u32,
    /// Cohort seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Cohort config JSON; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sampling rate override in Hz.
    #[arg(long)]
    rate: Option<f64>,
    /// Record duration override in seconds.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Cohort directory holding manifest.json (batch mode).
    #[arg(long, conflicts_with_all = ["reflectance", "transmittance"])]
    cohort: Option<PathBuf>,
    /// Single reflectance waveform CSV.
    #[arg(long, requires = "patient_id")]
    reflectance: Option<PathBuf>,
    /// Matching transmittance waveform CSV supplying SpO2 labels.
    #[arg(long)]
    transmittance: Option<PathBuf>,
    /// Patient id for single-file mode.
    #[arg(long)]
    patient_id: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Run config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    window_s: Option<f64>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    quality_threshold: Option<f64>,
    #[arg(long)]
    high_dc_k: Option<f64>,
}

#[derive(Args)]
struct TrainsetArgs {
    /// Directory of per-patient pipeline outputs.
    #[arg(long)]
    pairs_dir: PathBuf,
    /// Comma-separated patient ids to admit; all found when omitted.
    #[arg(long, value_delimiter = ',')]
    patients: Vec<String>,
    /// Training-set JSON to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// SpO2 span a patient must exceed for admission.
    #[arg(long)]
    min_range: Option<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Training-set JSON from the trainset stage.
    #[arg(long)]
    trainset: PathBuf,
    /// The new patient's pairs CSV.
    #[arg(long)]
    pairs: PathBuf,
    /// Predictions CSV to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Calibration band override, as lo,hi.
    #[arg(long, value_delimiter = ',')]
    band: Vec<f64>,
    /// Explicit 5-row calibration CSV (r_value,spo2); auto-selected from the
    /// pairs when omitted.
    #[arg(long, conflicts_with = "point")]
    calibration: Option<PathBuf>,
    /// Inline calibration point as r,spo2; give exactly five.
    #[arg(long, value_parser = parse_point)]
    point: Vec<(f64, f64)>,
}

#[derive(Args)]
struct BaselineArgs {
    /// Directory of per-patient pipeline outputs with features.csv files.
    #[arg(long)]
    features_dir: PathBuf,
    /// Comma-separated ids of held-out test patients.
    #[arg(long, value_delimiter = ',', conflicts_with = "n_test")]
    test_patients: Vec<String>,
    /// Hold out the last N patients (sorted by id) instead.
    #[arg(long)]
    n_test: Option<usize>,
    /// Validation fold count.
    #[arg(long, default_value_t = oxiline::baseline::DEFAULT_FOLDS)]
    folds: usize,
    /// Neighbor count for the kNN regressor.
    #[arg(long, default_value_t = oxiline::baseline::DEFAULT_K)]
    k: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Report CSV to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory of per-patient prediction CSVs (file stem = patient id).
    #[arg(long)]
    predictions_dir: PathBuf,
    /// Output directory for the report artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Clinical error band in SpO2 percent.
    #[arg(long, default_value_t = DEFAULT_ERROR_BAND)]
    band: f64,
    /// Keep windows flagged as high-DC anomalies in the statistics.
    #[arg(long)]
    include_anomalous: bool,
    /// Also render SVG plots.
    #[arg(long)]
    svg: bool,
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (r, spo2) = s
        .split_once(',')
        .ok_or_else(|| format!("expected r,spo2 but got {s:?}"))?;
    let parse = |v: &str, name: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|e| format!("bad {name} in {s:?}: {e}"))
    };
    Ok((parse(r, "r_value")?, parse(spo2, "spo2")?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::Pipeline(args) => cmd_pipeline(args),
        Command::Trainset(args) => cmd_trainset(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Baseline(args) => cmd_baseline(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn require_file(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("input file not found: {}", path.display());
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let mut cohort_cfg: CohortConfig = match &args.config {
        Some(p) => io::read_json(p)?,
        None => CohortConfig::default(),
    };
    if let Some(rate) = args.rate {
        cohort_cfg.rate = rate;
    }
    if let Some(duration) = args.duration {
        cohort_cfg.duration_s = duration;
    }
    cohort_cfg
        .validate()
        .map_err(|e| anyhow!(UsageError(e.to_string())))?;
    let seed = args.seed.unwrap_or(RunConfig::default().seed);

    let cohort = synth_cohort(args.patients as usize, seed, &cohort_cfg)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut entries = Vec::with_capacity(cohort.len());
    for pair in &cohort {
        let pid = &pair.profile.patient_id;
        let dir = args.out.join(pid);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        io::write_waveform_csv(&dir.join("reflectance.csv"), &pair.reflectance)?;
        io::write_waveform_csv(&dir.join("transmittance.csv"), &pair.transmittance)?;
        io::write_truth_csv(&dir.join("truth.csv"), cohort_cfg.rate, &pair.truth)?;
        // The drawn trajectory starts at its baseline and holds its trough
        // for a full quarter, so both values sit in the truth series exactly.
        let baseline = pair.truth[0];
        let trough = pair.truth.iter().cloned().fold(f64::INFINITY, f64::min);
        entries.push(ManifestEntry {
            patient_id: pid.clone(),
            profile: pair.profile.clone(),
            trajectory: oxiline::synth::default_trajectory(
                baseline,
                trough,
                cohort_cfg.duration_s,
            )?,
            reflectance: format!("{pid}/reflectance.csv"),
            transmittance: format!("{pid}/transmittance.csv"),
            truth: format!("{pid}/truth.csv"),
        });
    }
    let manifest = CohortManifest {
        seed,
        config: cohort_cfg,
        patients: entries,
    };
    io::write_json(&args.out.join("manifest.json"), &manifest)?;
    println!("wrote {} patients to {}", cohort.len(), args.out.display());
    Ok(())
}

/// Windows one patient's records, writes diagnostics, pairs and features.
fn process_patient(
    patient_id: &str,
    reflectance: &PpgRecord,
    transmittance: Option<&PpgRecord>,
    cfg: &RunConfig,
    out_dir: &Path,
) -> anyhow::Result<usize> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let params = cfg.windowing();
    let refl_windows = segment_windows(reflectance, &params)?;
    io::write_diagnostics_csv(&out_dir.join("diagnostics_reflectance.csv"), &refl_windows)?;
    for w in &refl_windows {
        if !w.quality.passed {
            eprintln!(
                "warning: {patient_id} reflectance window {} skipped: correlation {:.3} below {}",
                w.start_index, w.quality.score, cfg.quality_threshold
            );
        }
    }
    let refl_samples = record_samples(&refl_windows, None, cfg.high_dc_k);

    let samples = match transmittance {
        Some(trans) => {
            let trans_windows = segment_windows(trans, &params)?;
            io::write_diagnostics_csv(
                &out_dir.join("diagnostics_transmittance.csv"),
                &trans_windows,
            )?;
            let trans_samples =
                record_samples(&trans_windows, Some(&cfg.reference_curve), cfg.high_dc_k);
            pair_samples(&refl_samples, &trans_samples)
        }
        None => refl_samples,
    };
    io::write_pairs_csv(&out_dir.join("pairs.csv"), &samples)?;
    if transmittance.is_some() {
        let features = features_for_record(&refl_windows, &samples, reflectance.rate);
        io::write_features_csv(&out_dir.join("features.csv"), &features)?;
    }
    if samples.is_empty() {
        eprintln!("warning: {patient_id} produced no usable windows");
    }
    Ok(samples.len())
}

fn cmd_pipeline(args: PipelineArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(v) = args.rate {
        cfg.rate = v;
    }
    if let Some(v) = args.window_s {
        cfg.window_s = v;
    }
    if let Some(v) = args.overlap {
        cfg.overlap = v;
    }
    if let Some(v) = args.quality_threshold {
        cfg.quality_threshold = v;
    }
    if let Some(v) = args.high_dc_k {
        cfg.high_dc_k = v;
    }

    match (&args.cohort, &args.reflectance) {
        (Some(cohort_dir), _) => {
            let manifest_path = cohort_dir.join("manifest.json");
            require_file(&manifest_path)?;
            let manifest: CohortManifest = io::read_json(&manifest_path)?;
            if args.rate.is_none() {
                cfg.rate = manifest.config.rate;
            }
            cfg.validate()?;
            let mut total = 0usize;
            for entry in &manifest.patients {
                let refl_path = cohort_dir.join(&entry.reflectance);
                let trans_path = cohort_dir.join(&entry.transmittance);
                require_file(&refl_path)?;
                require_file(&trans_path)?;
                let refl = io::read_waveform_csv(
                    &refl_path,
                    &entry.patient_id,
                    cfg.rate,
                    ProbeSite::Finger,
                )?;
                let trans = io::read_waveform_csv(
                    &trans_path,
                    &entry.patient_id,
                    cfg.rate,
                    ProbeSite::TransmittanceFinger,
                )?;
                total += process_patient(
                    &entry.patient_id,
                    &refl,
                    Some(&trans),
                    &cfg,
                    &args.out.join(&entry.patient_id),
                )?;
            }
            println!(
                "processed {} patients, {total} windows -> {}",
                manifest.patients.len(),
                args.out.display()
            );
        }
        (None, Some(refl_path)) => {
            cfg.validate()?;
            let pid = args.patient_id.as_deref().unwrap_or("patient");
            require_file(refl_path)?;
            let refl = io::read_waveform_csv(refl_path, pid, cfg.rate, ProbeSite::Finger)?;
            let trans = match &args.transmittance {
                Some(p) => {
                    require_file(p)?;
                    Some(io::read_waveform_csv(
                        p,
                        pid,
                        cfg.rate,
                        ProbeSite::TransmittanceFinger,
                    )?)
                }
                None => None,
            };
            let n = process_patient(pid, &refl, trans.as_ref(), &cfg, &args.out.join(pid))?;
            println!("processed {pid}, {n} windows -> {}", args.out.display());
        }
        (None, None) => {
            return Err(anyhow!(UsageError(
                "pass either --cohort or --reflectance".into()
            )));
        }
    }
    Ok(())
}

fn discover_patients(dir: &Path) -> anyhow::Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let entry = entry?;
        if entry.path().join("pairs.csv").is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        bail!("no per-patient pairs.csv files under {}", dir.display());
    }
    Ok(ids)
}

fn cmd_trainset(args: TrainsetArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(v) = args.min_range {
        cfg.min_range_spo2 = v;
    }
    cfg.validate()?;
    let patients = if args.patients.is_empty() {
        discover_patients(&args.pairs_dir)?
    } else {
        args.patients.clone()
    };
    let mut series = Vec::with_capacity(patients.len());
    for pid in &patients {
        let path = args.pairs_dir.join(pid).join("pairs.csv");
        require_file(&path)?;
        let samples = io::read_pairs_csv(&path)?;
        let pairs: Vec<(f64, f64)> = samples
            .iter()
            .filter(|s| !s.high_dc_anomaly)
            .filter_map(|s| s.ref_spo2.map(|v| (s.r_value, v)))
            .collect();
        series.push((pid.clone(), pairs));
    }
    let trainset = build_training_set(&series, cfg.min_range_spo2)?;
    for ex in &trainset.excluded {
        eprintln!("excluded {}: {:?}", ex.patient_id, ex.reason);
    }
    io::write_trainset_json(&args.out, &trainset)?;
    println!(
        "admitted {} of {} patients -> {}",
        trainset.lines.len(),
        patients.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if !args.band.is_empty() {
        if args.band.len() != 2 {
            return Err(anyhow!(UsageError(format!(
                "--band takes exactly two values lo,hi, got {}",
                args.band.len()
            ))));
        }
        cfg.calibration_band = (args.band[0], args.band[1]);
    }
    cfg.validate()?;
    if !args.point.is_empty() && args.point.len() != oxiline::calibrate::CALIBRATION_POINTS {
        return Err(anyhow!(UsageError(format!(
            "--point must be given exactly {} times, got {}",
            oxiline::calibrate::CALIBRATION_POINTS,
            args.point.len()
        ))));
    }
    require_file(&args.trainset)?;
    require_file(&args.pairs)?;
    let trainset = io::read_trainset_json(&args.trainset)?;
    let samples: Vec<WindowSample> = io::read_pairs_csv(&args.pairs)?;

    let calibration = if let Some(path) = &args.calibration {
        require_file(path)?;
        CalibrationSet::with_band(io::read_calibration_csv(path)?, cfg.calibration_band)?
    } else if !args.point.is_empty() {
        CalibrationSet::with_band(args.point.clone(), cfg.calibration_band)?
    } else {
        select_calibration_points(&samples, cfg.calibration_band)?
    };
    let line = match_line(&calibration, &trainset)?;
    let rows: Vec<PredictionRow> = samples
        .iter()
        .map(|s| PredictionRow {
            window_start: s.window_start,
            r_value: s.r_value,
            ref_spo2: s.ref_spo2,
            predicted_spo2: estimate_spo2(line, s.r_value),
            high_dc_anomaly: s.high_dc_anomaly,
            matched_patient_id: line.patient_id.clone(),
        })
        .collect();
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    io::write_predictions_csv(&args.out, &rows)?;
    println!(
        "matched line {} (slope {:.3}, intercept {:.3}), {} windows -> {}",
        line.patient_id,
        line.slope,
        line.intercept,
        rows.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_baseline(args: BaselineArgs) -> anyhow::Result<()> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    cfg.validate()?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let patients = discover_patients(&args.features_dir)?;
    let mut features = BTreeMap::new();
    for pid in &patients {
        let path = args.features_dir.join(pid).join("features.csv");
        require_file(&path)?;
        let rows: Vec<_> = io::read_features_csv(&path)?
            .into_iter()
            .map(|(_, fv)| fv)
            .collect();
        features.insert(pid.clone(), rows);
    }
    let test: BTreeSet<String> = if !args.test_patients.is_empty() {
        args.test_patients.iter().cloned().collect()
    } else if let Some(n) = args.n_test {
        if n == 0 || n >= patients.len() {
            return Err(anyhow!(UsageError(format!(
                "--n-test must be between 1 and {}",
                patients.len() - 1
            ))));
        }
        patients[patients.len() - n..].iter().cloned().collect()
    } else {
        return Err(anyhow!(UsageError(
            "pass --test-patients or --n-test".into()
        )));
    };
    let plan = SplitPlan::build(&features, &test, args.folds, seed)?;
    let report = run_protocol(&features, &plan, args.k, seed)?;
    io::write_baseline_report_csv(&args.out, &report)?;
    println!(
        "{}: validation mse/mae/r2 {:.3}/{:.3}/{:.3}, test {:.3}/{:.3}/{:.3} -> {}",
        report.model,
        report.validation.mse,
        report.validation.mae,
        report.validation.r2,
        report.test.mse,
        report.test.mae,
        report.test.r2,
        args.out.display()
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<()> {
    if !args.predictions_dir.is_dir() {
        bail!(
            "predictions directory not found: {}",
            args.predictions_dir.display()
        );
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&args.predictions_dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no prediction CSVs in {}", args.predictions_dir.display());
    }
    std::fs::create_dir_all(&args.out)?;

    let mut mae_input = BTreeMap::new();
    let mut abs_errors = BTreeMap::new();
    for path in &files {
        let pid = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let rows = io::read_predictions_csv(path)?;
        let pairs: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| args.include_anomalous || !r.high_dc_anomaly)
            .filter_map(|r| r.ref_spo2.map(|y| (y, r.predicted_spo2)))
            .collect();
        if pairs.len() < 4 {
            eprintln!(
                "warning: {pid} has only {} labelled windows, skipped",
                pairs.len()
            );
            continue;
        }
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y_pred: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let report = bland_altman(&y, &y_pred, args.band)?;
        let points = bland_altman_points(&y, &y_pred);
        io::write_bland_altman_csv(
            &args.out.join(format!("bland_altman_{pid}.csv")),
            &points,
            &report,
        )?;
        if args.svg {
            svg::bland_altman_svg(
                &args.out.join(format!("bland_altman_{pid}.svg")),
                &pid,
                &points,
                &report,
                args.band,
            )?;
        }
        abs_errors.insert(
            pid.clone(),
            pairs
                .iter()
                .map(|(y, p)| (p - y).abs())
                .collect::<Vec<f64>>(),
        );
        mae_input.insert(pid, pairs);
    }
    if mae_input.is_empty() {
        bail!("no patient had enough labelled windows to report on");
    }
    let mae = per_patient_mae(&mae_input)?;
    io::write_per_patient_mae_csv(&args.out.join("per_patient_mae.csv"), &mae)?;
    let stats = box_stats(&abs_errors)?;
    io::write_box_stats_csv(&args.out.join("box_stats.csv"), &stats)?;
    if args.svg {
        svg::box_plot_svg(&args.out.join("box_plot.svg"), &stats, args.band)?;
    }
    for (pid, value, n) in &mae.rows {
        println!("{pid}: MAE {value:.3} % over {n} windows");
    }
    println!(
        "cohort average MAE {:.3} % over {} patients -> {}",
        mae.average,
        mae.rows.len(),
        args.out.display()
    );
    Ok(())
}
