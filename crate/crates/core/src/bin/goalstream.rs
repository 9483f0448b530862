//! Command-line driver for the situation-aware streaming simulator.
//!
//! Exit codes: 0 success, 1 I/O, 2 parse/validation/domain, 3 contract,
//! 4 calibration or infeasibility.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use goalstream::annotate::{
    build_frame_vector, frame_vector_document, lift_to_gops, parse_frame_vector,
};
use goalstream::channel::{link_frames_document, link_gops_document, transmit, ChannelConfig};
use goalstream::detection::{
    parse_detection_log, target_probability_series, track_unique_objects, unique_vehicle_count,
    VehicleDescriptor, DEFAULT_GAP_TOLERANCE,
};
use goalstream::orchestrate::{
    baseline_rsv, build_rsv, calibrate_alpha, calibrate_alpha_for_savings, calibrate_from_totals,
    parse_rsv, power_report, power_report_document, rsv_document, SnrProfile,
    DEFAULT_SNR_LOW_LINEAR,
};
use goalstream::pipeline::{
    run_experiment, write_report, ExperimentConfig, ExperimentInputs, GoalSpec, Recommendation,
};
use goalstream::video::{gop_sizes, parse_manifest, VideoManifest};
use goalstream::{synth, Error, Result};

#[derive(Parser)]
#[command(
    name = "goalstream",
    version,
    about = "Situation-aware video streaming simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and cross-check a manifest and detection logs
    Validate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        gap_tolerance: Option<usize>,
    },
    /// Build a frame vector for one threshold
    Annotate {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the resource summary vector from a frame vector
    Orchestrate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        frame_vector: PathBuf,
        #[command(flatten)]
        profile: ProfileArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Send the manifest over the emulated QPSK/AWGN link
    Transmit {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        rsv: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2.0e7)]
        bandwidth_hz: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Power report for an RSV against the all-important baseline
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        rsv: PathBuf,
        #[arg(long)]
        snr_cap: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full chain for every threshold
    Run(RunArgs),
    /// Solve SNR profile parameters from target power figures
    Calibrate(CalibrateArgs),
    /// Write the synthetic fixture tree
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct TargetArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    #[arg(long, default_value = "*")]
    vehicle_type: String,
    #[arg(long, default_value = "*")]
    vehicle_make: String,
    #[arg(long, default_value_t = DEFAULT_GAP_TOLERANCE)]
    gap_tolerance: usize,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_SNR_LOW_LINEAR)]
    snr_low: f64,
    #[arg(long)]
    snr_cap: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; flags below override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    vehicle_type: Option<String>,
    #[arg(long)]
    vehicle_make: Option<String>,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long)]
    gap_tolerance: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    snr_low: Option<f64>,
    #[arg(long)]
    snr_cap: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    bandwidth_hz: Option<f64>,
    /// `THRESHOLD=PATH`, repeatable
    #[arg(long = "receiver-log")]
    receiver_logs: Vec<String>,
    #[arg(long)]
    target_detection: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    goal_gops: Option<Vec<usize>>,
    #[arg(long)]
    emit_payloads: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    target: TargetArgs,
    #[arg(long, default_value_t = 0.8)]
    threshold: f64,
    /// Total power with every GOP important; solves alpha and the low SNR together
    #[arg(long, requires = "si_total")]
    baseline_total: Option<f64>,
    /// Total power at the threshold
    #[arg(long)]
    si_total: Option<f64>,
    /// Saving fraction relative to the baseline
    #[arg(long, conflicts_with_all = ["si_total", "baseline_total"])]
    savings: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SNR_LOW_LINEAR)]
    snr_low: f64,
    #[arg(long)]
    snr_cap: Option<f64>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_manifest(path: &Path) -> Result<VideoManifest> {
    parse_manifest(&read(path)?)
}

fn target_series(args: &TargetArgs) -> Result<(VideoManifest, Vec<f64>)> {
    let manifest = load_manifest(&args.manifest)?;
    let records = parse_detection_log(&read(&args.detections)?)?;
    let descriptor = VehicleDescriptor::new(&args.vehicle_type, &args.vehicle_make)?;
    let tracks = track_unique_objects(&records, args.gap_tolerance);
    let series = target_probability_series(&tracks, &descriptor, manifest.frame_count())?;
    Ok((manifest, series))
}

fn run_config(args: RunArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let missing =
                |name: &str| Error::Domain(format!("--{name} is required without --config"));
            ExperimentConfig {
                manifest_path: args.manifest.clone().ok_or_else(|| missing("manifest"))?,
                detection_log_path: args
                    .detections
                    .clone()
                    .ok_or_else(|| missing("detections"))?,
                receiver_logs: Vec::new(),
                descriptor: VehicleDescriptor::new(
                    args.vehicle_type.as_deref().unwrap_or("*"),
                    args.vehicle_make.as_deref().unwrap_or("*"),
                )?,
                thresholds: goalstream::annotate::DEFAULT_THRESHOLDS.to_vec(),
                gap_tolerance: DEFAULT_GAP_TOLERANCE,
                snr_profile: SnrProfile::new(
                    args.alpha.ok_or_else(|| missing("alpha"))?,
                    DEFAULT_SNR_LOW_LINEAR,
                    None,
                )?,
                channel: ChannelConfig::default(),
                output_dir: None,
                emit_payloads: false,
                goal: None,
            }
        }
    };
    if let Some(p) = args.manifest {
        config.manifest_path = p;
    }
    if let Some(p) = args.detections {
        config.detection_log_path = p;
    }
    if args.vehicle_type.is_some() || args.vehicle_make.is_some() {
        config.descriptor = VehicleDescriptor::new(
            args.vehicle_type.as_deref().unwrap_or("*"),
            args.vehicle_make.as_deref().unwrap_or("*"),
        )?;
    }
    if let Some(t) = args.thresholds {
        config.thresholds = t;
    }
    if let Some(g) = args.gap_tolerance {
        config.gap_tolerance = g;
    }
    let p = config.snr_profile;
    config.snr_profile = SnrProfile::new(
        args.alpha.unwrap_or(p.alpha),
        args.snr_low.unwrap_or(p.snr_low_linear),
        args.snr_cap.or(p.snr_cap_linear),
    )?;
    config.channel = ChannelConfig::new(
        args.bandwidth_hz.unwrap_or(config.channel.bandwidth_hz),
        args.seed.unwrap_or(config.channel.seed),
    )?;
    for spec in &args.receiver_logs {
        let (t, path) = spec.split_once('=').ok_or_else(|| {
            Error::Domain(format!(
                "--receiver-log expects THRESHOLD=PATH, got `{spec}`"
            ))
        })?;
        let t: f64 = t
            .trim()
            .parse()
            .map_err(|_| Error::Domain(format!("bad threshold in `{spec}`")))?;
        config.receiver_logs.retain(|(x, _)| *x != t);
        config.receiver_logs.push((t, PathBuf::from(path)));
    }
    if let Some(target) = args.target_detection {
        config.goal = Some(GoalSpec {
            target_detection: target,
            gops: args.goal_gops.clone(),
        });
    } else if let (Some(goal), Some(gops)) = (config.goal.as_mut(), args.goal_gops) {
        goal.gops = Some(gops);
    }
    config.emit_payloads |= args.emit_payloads;
    if let Some(d) = args.out_dir {
        config.output_dir = Some(d);
    }
    config.validate()?;
    Ok(config)
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Validate {
            manifest,
            detections,
            gap_tolerance,
        } => {
            let m = load_manifest(&manifest)?;
            println!(
                "manifest ok: {} {} frames, {} GOPs, {} bytes",
                m.resolution_label,
                m.frame_count(),
                m.gop_count(),
                m.total_bytes()
            );
            if let Some(d) = detections {
                let records = parse_detection_log(&read(&d)?)?;
                if let Some(r) = records.iter().find(|r| r.frame_index >= m.frame_count()) {
                    return Err(Error::Contract(format!(
                        "detection at frame {} beyond the {} manifest frames",
                        r.frame_index,
                        m.frame_count()
                    )));
                }
                let tracks =
                    track_unique_objects(&records, gap_tolerance.unwrap_or(DEFAULT_GAP_TOLERANCE));
                println!(
                    "detection log ok: {} records, {} tracks, {} unique vehicles",
                    records.len(),
                    tracks.len(),
                    unique_vehicle_count(&tracks)
                );
            }
            Ok(())
        }
        Command::Annotate {
            target,
            threshold,
            out,
        } => {
            let (_, series) = target_series(&target)?;
            let fv = build_frame_vector(&series, threshold)?;
            emit(out.as_deref(), &frame_vector_document(&fv))
        }
        Command::Orchestrate {
            manifest,
            frame_vector,
            profile,
            out,
        } => {
            let m = load_manifest(&manifest)?;
            let fv = parse_frame_vector(&read(&frame_vector)?)?;
            let importance = lift_to_gops(&fv, &m)?;
            let profile = SnrProfile::new(profile.alpha, profile.snr_low, profile.snr_cap)?;
            let rsv = build_rsv(&gop_sizes(&m), &importance, &profile)?;
            if let Some(w) = rsv.low_snr_warning(&gop_sizes(&m)) {
                log::warn!("{w}");
            }
            emit(out.as_deref(), &rsv_document(&rsv))
        }
        Command::Transmit {
            manifest,
            rsv,
            seed,
            bandwidth_hz,
            out_dir,
        } => {
            let m = load_manifest(&manifest)?;
            let rsv = parse_rsv(&read(&rsv)?)?;
            let report = transmit(&m, &rsv, &ChannelConfig::new(bandwidth_hz, seed)?)?;
            fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            emit(
                Some(&out_dir.join("link_gops.csv")),
                &link_gops_document(&report),
            )?;
            emit(
                Some(&out_dir.join("link_frames.csv")),
                &link_frames_document(&report),
            )
        }
        Command::Report {
            manifest,
            rsv,
            snr_cap,
            out,
        } => {
            let m = load_manifest(&manifest)?;
            let rsv = parse_rsv(&read(&rsv)?)?;
            let profile = SnrProfile::new(rsv.alpha, rsv.snr_low_linear, snr_cap)?;
            let baseline = baseline_rsv(&gop_sizes(&m), &profile)?;
            let report = power_report(&rsv, &baseline, &m.gop_durations_s())?;
            emit(out.as_deref(), &power_report_document(&report))
        }
        Command::Run(args) => {
            let config = run_config(args)?;
            let out_dir = config.output_dir.clone().ok_or_else(|| {
                Error::Domain("an output directory is required (--out-dir)".into())
            })?;
            let inputs = ExperimentInputs::load(&config)?;
            let report = run_experiment(&config, &inputs)?;
            write_report(&report, &out_dir)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            for run in &report.runs {
                println!(
                    "threshold {}: important GOPs {:?}, power {:.4} / {:.4}, savings {:.2}%",
                    run.threshold,
                    run.importance.important_gops(),
                    run.power.total_power_si,
                    run.power.total_power_baseline,
                    100.0 * run.power.savings_fraction
                );
            }
            match &report.recommendation {
                Some(Recommendation::Selected { threshold, .. }) => {
                    println!("recommended threshold: {threshold}");
                }
                Some(Recommendation::Infeasible { shortfalls }) => {
                    return Err(Error::Infeasible(format!(
                        "no threshold meets the detection target ({} shortfalls, see summary.txt)",
                        shortfalls.len()
                    )));
                }
                None => {}
            }
            Ok(())
        }
        Command::Calibrate(args) => {
            let (m, series) = target_series(&args.target)?;
            let importance = lift_to_gops(&build_frame_vector(&series, args.threshold)?, &m)?;
            let gops = gop_sizes(&m);
            let durations = m.gop_durations_s();
            let profile = match (args.baseline_total, args.si_total, args.savings) {
                (Some(base), Some(si), _) => {
                    calibrate_from_totals(&gops, &importance, &durations, base, si)?
                }
                (None, Some(si), _) => {
                    let alpha = calibrate_alpha(
                        &gops,
                        &importance,
                        &durations,
                        si,
                        args.snr_low,
                        args.snr_cap,
                    )?;
                    SnrProfile::new(alpha, args.snr_low, args.snr_cap)?
                }
                (None, None, Some(savings)) => {
                    let alpha = calibrate_alpha_for_savings(
                        &gops,
                        &importance,
                        &durations,
                        savings,
                        args.snr_low,
                    )?;
                    SnrProfile::new(alpha, args.snr_low, None)?
                }
                _ => {
                    return Err(Error::Domain(
                        "give --si-total (optionally with --baseline-total) or --savings".into(),
                    ))
                }
            };
            let rsv = build_rsv(&gops, &importance, &profile)?;
            let report = power_report(&rsv, &baseline_rsv(&gops, &profile)?, &durations)?;
            println!("alpha={:e}", profile.alpha);
            println!("snr_low_linear={}", profile.snr_low_linear);
            print!("{}", power_report_document(&report));
            Ok(())
        }
        Command::Synth { out_dir } => synth::write_fixture_tree(&out_dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
