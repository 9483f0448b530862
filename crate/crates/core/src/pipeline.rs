//! End-to-end experiment driver.
//!
//! For each threshold: frame vector, GOP importance, RSV, channel
//! transmission, power report and goal report. Goal reports come from a
//! receiver-side detection log when one is supplied for the threshold;
//! otherwise from a degradation proxy (sender probability scaled by the
//! fraction of clean slices). Every output records which path produced it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::annotate::{
    build_frame_vector, check_threshold, frame_vector_document, frames_selected, lift_to_gops,
    FrameVector, GopImportance, DEFAULT_THRESHOLDS,
};
use crate::channel::{
    link_frames_document, link_gops_document, transmit_with, ChannelConfig, LinkReport,
    DEFAULT_BANDWIDTH_HZ,
};
use crate::detection::{
    parse_detection_log, target_probability_series, track_unique_objects, unique_vehicle_count,
    DetectionRecord, VehicleDescriptor, DEFAULT_GAP_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::orchestrate::{
    baseline_rsv, build_rsv, format_significant, power_report, power_report_document, rsv_document,
    PowerReport, ResourceSummaryVector, SnrProfile, DEFAULT_SNR_LOW_LINEAR,
};
use crate::video::{gop_sizes, parse_manifest, VideoManifest};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub manifest_path: PathBuf,
    pub detection_log_path: PathBuf,
    /// Receiver-side detection logs, one per threshold.
    pub receiver_logs: Vec<(f64, PathBuf)>,
    pub descriptor: VehicleDescriptor,
    pub thresholds: Vec<f64>,
    pub gap_tolerance: usize,
    pub snr_profile: SnrProfile,
    pub channel: ChannelConfig,
    pub output_dir: Option<PathBuf>,
    pub emit_payloads: bool,
    pub goal: Option<GoalSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalSpec {
    pub target_detection: f64,
    /// GOPs on which the target must hold; defaults to the GOPs important at
    /// the strictest threshold.
    pub gops: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    manifest: PathBuf,
    detection_log: PathBuf,
    output_dir: Option<PathBuf>,
    #[serde(default = "default_thresholds")]
    thresholds: Vec<f64>,
    #[serde(default = "default_gap_tolerance")]
    gap_tolerance: usize,
    #[serde(default)]
    emit_payloads: bool,
    descriptor: DescriptorFile,
    snr_profile: ProfileFile,
    #[serde(default)]
    channel: ChannelFile,
    goal: Option<GoalFile>,
    #[serde(default)]
    receiver_log: Vec<ReceiverLogFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptorFile {
    #[serde(default = "wildcard")]
    vehicle_type: String,
    #[serde(default = "wildcard")]
    vehicle_make: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    alpha: f64,
    #[serde(default = "default_snr_low")]
    snr_low_linear: f64,
    snr_cap_linear: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelFile {
    #[serde(default = "default_bandwidth")]
    bandwidth_hz: f64,
    #[serde(default)]
    seed: u64,
}

impl Default for ChannelFile {
    fn default() -> Self {
        ChannelFile {
            bandwidth_hz: DEFAULT_BANDWIDTH_HZ,
            seed: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoalFile {
    target_detection: f64,
    gops: Option<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReceiverLogFile {
    threshold: f64,
    path: PathBuf,
}

fn default_thresholds() -> Vec<f64> {
    DEFAULT_THRESHOLDS.to_vec()
}
fn default_gap_tolerance() -> usize {
    DEFAULT_GAP_TOLERANCE
}
fn wildcard() -> String {
    "*".into()
}
fn default_snr_low() -> f64 {
    DEFAULT_SNR_LOW_LINEAR
}
fn default_bandwidth() -> f64 {
    DEFAULT_BANDWIDTH_HZ
}

impl ExperimentConfig {
    /// Parses a TOML config; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start].matches('\n').count() + 1);
            Error::parse(line, "config", e.message().to_string())
        })?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
        let config = ExperimentConfig {
            manifest_path: resolve(file.manifest),
            detection_log_path: resolve(file.detection_log),
            receiver_logs: file
                .receiver_log
                .into_iter()
                .map(|r| (r.threshold, resolve(r.path)))
                .collect(),
            descriptor: VehicleDescriptor::new(
                &file.descriptor.vehicle_type,
                &file.descriptor.vehicle_make,
            )?,
            thresholds: file.thresholds,
            gap_tolerance: file.gap_tolerance,
            snr_profile: SnrProfile::new(
                file.snr_profile.alpha,
                file.snr_profile.snr_low_linear,
                file.snr_profile.snr_cap_linear,
            )?,
            channel: ChannelConfig::new(file.channel.bandwidth_hz, file.channel.seed)?,
            output_dir: file.output_dir.map(resolve),
            emit_payloads: file.emit_payloads,
            goal: file.goal.map(|g| GoalSpec {
                target_detection: g.target_detection,
                gops: g.gops,
            }),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Domain("at least one threshold is required".into()));
        }
        for &t in &self.thresholds {
            check_threshold(t)?;
        }
        for (t, _) in &self.receiver_logs {
            if !self.thresholds.contains(t) {
                return Err(Error::Contract(format!(
                    "receiver log given for threshold {t}, which is not being run"
                )));
            }
        }
        Ok(())
    }
}

/// Parsed experiment inputs.
#[derive(Debug, Clone)]
pub struct ExperimentInputs {
    pub manifest: VideoManifest,
    pub detections: Vec<DetectionRecord>,
    pub receiver_logs: Vec<(f64, Vec<DetectionRecord>)>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl ExperimentInputs {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let manifest = parse_manifest(&read(&config.manifest_path)?)?;
        let detections = parse_detection_log(&read(&config.detection_log_path)?)?;
        let receiver_logs = config
            .receiver_logs
            .iter()
            .map(|(t, p)| Ok((*t, parse_detection_log(&read(p)?)?)))
            .collect::<Result<_>>()?;
        Ok(ExperimentInputs {
            manifest,
            detections,
            receiver_logs,
        })
    }

    /// Rejects logs that reference frames beyond the manifest.
    pub fn cross_validate(&self) -> Result<()> {
        let n = self.manifest.frame_count();
        let logs = std::iter::once(("detection log".to_string(), &self.detections)).chain(
            self.receiver_logs
                .iter()
                .map(|(t, r)| (format!("receiver log for threshold {t}"), r)),
        );
        for (name, records) in logs {
            if let Some(r) = records.iter().find(|r| r.frame_index >= n) {
                return Err(Error::Contract(format!(
                    "{name} references frame {} but the manifest has {n} frames",
                    r.frame_index
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalSource {
    ReceiverLog,
    DegradationModel,
}

impl GoalSource {
    pub fn label(self) -> &'static str {
        match self {
            GoalSource::ReceiverLog => "receiver_log",
            GoalSource::DegradationModel => "degradation_model",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalReport {
    pub threshold: f64,
    pub source: GoalSource,
    /// Mean receiver detection probability over each GOP's member frames.
    pub gop_means: Vec<f64>,
}

impl GoalReport {
    /// Highest GOP mean and its GOP id.
    pub fn peak(&self) -> Option<(usize, f64)> {
        self.gop_means
            .iter()
            .copied()
            .enumerate()
            .reduce(|a, b| if b.1 > a.1 { b } else { a })
    }
}

/// Averages a per-frame receiver probability series over each GOP.
///
/// A second pass over the residuals removes the rounding drift of the plain
/// sum, so a GOP of identical values averages to that value.
pub fn gop_means(series: &[f64], manifest: &VideoManifest) -> Result<Vec<f64>> {
    if series.len() != manifest.frame_count() {
        return Err(Error::Contract(format!(
            "receiver series has {} frames, manifest has {}",
            series.len(),
            manifest.frame_count()
        )));
    }
    let len = manifest.gop_length_frames as usize;
    Ok(series
        .chunks(len)
        .map(|c| {
            let n = c.len() as f64;
            let rough = c.iter().sum::<f64>() / n;
            let mean = rough + c.iter().map(|x| x - rough).sum::<f64>() / n;
            mean.clamp(0.0, 1.0)
        })
        .collect())
}

/// Receiver probability under the built-in proxy: sender probability times
/// the fraction of the frame's slices that arrived clean.
pub fn degraded_series(sender: &[f64], link: &LinkReport) -> Vec<f64> {
    sender
        .iter()
        .zip(&link.frames)
        .map(|(&p, f)| p * (1.0 - f.slice_error_fraction()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRun {
    pub threshold: f64,
    pub frame_vector: FrameVector,
    pub importance: GopImportance,
    pub rsv: ResourceSummaryVector,
    pub power: PowerReport,
    pub link: LinkReport,
    pub received: Option<Vec<Vec<u8>>>,
    pub goal: GoalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub resolution: String,
    pub descriptor: String,
    pub sender_series: Vec<f64>,
    pub track_count: usize,
    pub unique_vehicles: usize,
    pub gops: Vec<(usize, u64)>,
    pub baseline: ResourceSummaryVector,
    pub runs: Vec<ThresholdRun>,
    pub recommendation: Option<Recommendation>,
    pub warnings: Vec<String>,
}

/// Runs every threshold through annotation, orchestration and the channel.
pub fn run_experiment(
    config: &ExperimentConfig,
    inputs: &ExperimentInputs,
) -> Result<ExperimentReport> {
    config.validate()?;
    inputs.cross_validate()?;
    let manifest = &inputs.manifest;
    let frame_count = manifest.frame_count();
    let mut warnings = Vec::new();

    let tracks = track_unique_objects(&inputs.detections, config.gap_tolerance);
    if !tracks
        .iter()
        .any(|t| config.descriptor.matches(&t.vehicle_type, &t.vehicle_make))
    {
        warnings.push(format!(
            "descriptor {} matches no tracked object",
            config.descriptor
        ));
    }
    let sender_series = target_probability_series(&tracks, &config.descriptor, frame_count)?;
    let gops = gop_sizes(manifest);
    let durations = manifest.gop_durations_s();
    let baseline = baseline_rsv(&gops, &config.snr_profile)?;

    let receiver_series: BTreeMap<u64, Vec<f64>> = inputs
        .receiver_logs
        .iter()
        .map(|(t, records)| {
            let tracks = track_unique_objects(records, config.gap_tolerance);
            Ok((
                t.to_bits(),
                target_probability_series(&tracks, &config.descriptor, frame_count)?,
            ))
        })
        .collect::<Result<_>>()?;

    let runs: Vec<ThresholdRun> = config
        .thresholds
        .par_iter()
        .map(|&threshold| {
            let frame_vector = build_frame_vector(&sender_series, threshold)?;
            let importance = lift_to_gops(&frame_vector, manifest)?;
            let rsv = build_rsv(&gops, &importance, &config.snr_profile)?;
            let power = power_report(&rsv, &baseline, &durations)?;
            let tx = transmit_with(
                manifest,
                &rsv,
                &config.channel,
                |f| Ok(f.synth_payload()),
                config.emit_payloads,
            )?;
            let goal = match receiver_series.get(&threshold.to_bits()) {
                Some(series) => GoalReport {
                    threshold,
                    source: GoalSource::ReceiverLog,
                    gop_means: gop_means(series, manifest)?,
                },
                None => GoalReport {
                    threshold,
                    source: GoalSource::DegradationModel,
                    gop_means: gop_means(&degraded_series(&sender_series, &tx.report), manifest)?,
                },
            };
            Ok(ThresholdRun {
                threshold,
                frame_vector,
                importance,
                rsv,
                power,
                link: tx.report,
                received: tx.received,
                goal,
            })
        })
        .collect::<Result<_>>()?;

    for run in &runs {
        if let Some(w) = run.rsv.low_snr_warning(&gops) {
            warnings.push(format!("threshold {}: {w}", run.threshold));
        }
    }

    let recommendation = config.goal.as_ref().map(|goal| {
        let candidates: Vec<Candidate> = runs
            .iter()
            .map(|r| Candidate {
                threshold: r.threshold,
                total_power_si: r.power.total_power_si,
                gop_means: r.goal.gop_means.clone(),
            })
            .collect();
        let goal_gops = goal.gops.clone().unwrap_or_else(|| {
            let strictest = runs
                .iter()
                .max_by(|a, b| a.threshold.total_cmp(&b.threshold))
                .expect("thresholds are non-empty");
            let set: Vec<usize> = strictest.importance.important_gops().into_iter().collect();
            if set.is_empty() {
                (0..gops.len()).collect()
            } else {
                set
            }
        });
        threshold_recommendation(&candidates, goal.target_detection, &goal_gops)
    });

    Ok(ExperimentReport {
        resolution: manifest.resolution_label.to_string(),
        descriptor: config.descriptor.to_string(),
        sender_series,
        track_count: tracks.len(),
        unique_vehicles: unique_vehicle_count(&tracks),
        gops,
        baseline,
        runs,
        recommendation,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub threshold: f64,
    pub total_power_si: f64,
    pub gop_means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shortfall {
    pub threshold: f64,
    pub gop_id: usize,
    pub mean: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Recommendation {
    Selected { threshold: f64, total_power_si: f64 },
    Infeasible { shortfalls: Vec<Shortfall> },
}

/// Picks the cheapest threshold whose receiver detection meets `target` on
/// every goal GOP; equal power prefers the larger threshold.
pub fn threshold_recommendation(
    candidates: &[Candidate],
    target: f64,
    goal_gops: &[usize],
) -> Recommendation {
    let mut shortfalls = Vec::new();
    let mut best: Option<&Candidate> = None;
    for c in candidates {
        let misses: Vec<Shortfall> = goal_gops
            .iter()
            .map(|&g| Shortfall {
                threshold: c.threshold,
                gop_id: g,
                mean: c.gop_means.get(g).copied().unwrap_or(0.0),
                target,
            })
            .filter(|s| !(s.mean >= target))
            .collect();
        if !misses.is_empty() {
            shortfalls.extend(misses);
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                c.total_power_si < b.total_power_si
                    || (c.total_power_si == b.total_power_si && c.threshold > b.threshold)
            }
        };
        if better {
            best = Some(c);
        }
    }
    match best {
        Some(c) => Recommendation::Selected {
            threshold: c.threshold,
            total_power_si: c.total_power_si,
        },
        None => Recommendation::Infeasible { shortfalls },
    }
}

pub struct PlotData {
    /// `frame_index,probability`
    pub detection: String,
    /// `threshold,gop_id,required_snr_linear,important`
    pub snr: String,
}

pub fn emit_plot_data(report: &ExperimentReport) -> PlotData {
    let mut detection = String::from("frame_index,probability\n");
    for (f, p) in report.sender_series.iter().enumerate() {
        detection.push_str(&format!("{f},{p}\n"));
    }
    let mut snr = String::from("threshold,gop_id,required_snr_linear,important\n");
    for run in &report.runs {
        for e in &run.rsv.entries {
            snr.push_str(&format!(
                "{},{},{},{}\n",
                run.threshold,
                e.gop_id,
                e.required_snr_linear,
                u8::from(e.important)
            ));
        }
    }
    PlotData { detection, snr }
}

pub fn goal_document(goal: &GoalReport) -> String {
    let mut out = format!(
        "threshold={}\nsource={}\ngop_id,mean_receiver_detection_prob\n",
        goal.threshold,
        goal.source.label()
    );
    for (g, m) in goal.gop_means.iter().enumerate() {
        out.push_str(&format!("{g},{}\n", format_significant(*m, 6)));
    }
    out
}

fn join_ids(ids: impl IntoIterator<Item = usize>) -> String {
    ids.into_iter()
        .map(|g| g.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn summary_document(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
    kv("resolution", report.resolution.clone());
    kv("descriptor", report.descriptor.clone());
    kv("frames", report.sender_series.len().to_string());
    kv("gops", report.gops.len().to_string());
    kv("tracks", report.track_count.to_string());
    kv("unique_vehicles", report.unique_vehicles.to_string());
    kv("alpha", report.baseline.alpha.to_string());
    kv("snr_low_linear", report.baseline.snr_low_linear.to_string());
    kv("snr_profile_origin", "calibrated reconstruction".into());
    kv(
        "ber_model",
        "analytic Gray-coded QPSK over AWGN (reconstructed injector mapping)".into(),
    );
    kv("bs_arbitration", "granted == requested".into());
    for run in &report.runs {
        out.push_str(&format!("\n[threshold {}]\n", run.threshold));
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k}={v}\n"));
        kv(
            "frames_selected",
            frames_selected(&run.frame_vector).len().to_string(),
        );
        kv("important_gops", join_ids(run.importance.important_gops()));
        kv(
            "total_power_si",
            format_significant(run.power.total_power_si, 6),
        );
        kv(
            "total_power_baseline",
            format_significant(run.power.total_power_baseline, 6),
        );
        kv(
            "savings_fraction",
            format_significant(run.power.savings_fraction, 6),
        );
        let flipped: u64 = run.link.gops.iter().map(|g| g.bits_flipped).sum();
        let corrupted = run.link.frames.iter().filter(|f| f.corrupted).count();
        kv("bits_flipped", flipped.to_string());
        kv("corrupted_frames", corrupted.to_string());
        kv("goal_source", run.goal.source.label().into());
        if let Some((g, p)) = run.goal.peak() {
            kv(
                "peak_gop_detection_probability",
                format!("{} (gop {g})", format_significant(p, 6)),
            );
        }
    }
    out.push('\n');
    match &report.recommendation {
        None => {}
        Some(Recommendation::Selected {
            threshold,
            total_power_si,
        }) => {
            out.push_str(&format!(
                "recommended_threshold={threshold}\nrecommended_total_power_si={}\n",
                format_significant(*total_power_si, 6)
            ));
        }
        Some(Recommendation::Infeasible { shortfalls }) => {
            out.push_str("recommended_threshold=infeasible\n");
            for s in shortfalls {
                out.push_str(&format!(
                    "shortfall=threshold {} gop {} mean {} target {}\n",
                    s.threshold,
                    s.gop_id,
                    format_significant(s.mean, 6),
                    s.target
                ));
            }
        }
    }
    for w in &report.warnings {
        out.push_str(&format!("warning={w}\n"));
    }
    out
}

pub fn threshold_dir_name(threshold: f64) -> String {
    format!("si_{threshold}")
}

/// Writes `contents` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Writes the full output tree. Each threshold directory is staged and then
/// renamed into place.
pub fn write_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    report.runs.par_iter().try_for_each(|run| -> Result<()> {
        let name = threshold_dir_name(run.threshold);
        let final_dir = dir.join(&name);
        let staging = dir.join(format!(".{name}.partial"));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        let files = [
            ("frame_vector.txt", frame_vector_document(&run.frame_vector)),
            ("rsv.txt", rsv_document(&run.rsv)),
            ("power.txt", power_report_document(&run.power)),
            ("link_gops.csv", link_gops_document(&run.link)),
            ("link_frames.csv", link_frames_document(&run.link)),
            ("goal.csv", goal_document(&run.goal)),
        ];
        for (file, text) in files {
            let p = staging.join(file);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        if let Some(received) = &run.received {
            let payload_dir = staging.join("payloads");
            fs::create_dir_all(&payload_dir).map_err(|e| Error::io(&payload_dir, e))?;
            for (i, bytes) in received.iter().enumerate() {
                let p = payload_dir.join(format!("frame_{i:06}.bin"));
                fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
            }
        }
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir).map_err(|e| Error::io(&final_dir, e))?;
        }
        fs::rename(&staging, &final_dir).map_err(|e| Error::io(&final_dir, e))
    })?;

    let plots = emit_plot_data(report);
    write_atomic(
        &dir.join("baseline_rsv.txt"),
        rsv_document(&report.baseline).as_bytes(),
    )?;
    write_atomic(&dir.join("plot_detection.csv"), plots.detection.as_bytes())?;
    write_atomic(&dir.join("plot_snr.csv"), plots.snr.as_bytes())?;
    write_atomic(
        &dir.join("summary.txt"),
        summary_document(report).as_bytes(),
    )
}
