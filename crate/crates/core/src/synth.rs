//! Deterministic fixture generator.
//!
//! Produces a ten-second traffic scene at five resolutions: per-frame
//! manifests with identical frame counts and resolution-scaled byte sizes,
//! sender-side detection logs for thirteen vehicles, receiver-side logs
//! holding the reference per-GOP receiver detection probabilities, and
//! experiment configs whose SNR profiles are calibrated to the reference
//! power totals.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotate::{build_frame_vector, lift_to_gops};
use crate::detection::{
    target_probability_series, track_unique_objects, DetectionRecord, VehicleDescriptor,
};
use crate::error::{Error, Result};
use crate::orchestrate::{
    calibrate_alpha_for_savings, calibrate_from_totals, SnrProfile, DEFAULT_SNR_LOW_LINEAR,
};
use crate::video::{gop_sizes, FrameRecord, FrameType, Resolution, VideoManifest};

pub const FRAMES: usize = 300;
pub const GOP_LENGTH: u32 = 30;
pub const TARGET_TYPE: &str = "suv";
pub const TARGET_MAKE: &str = "Ford Expedition 2017";

/// Reference 720p totals: without annotation, and at threshold 0.8.
pub const P720_BASELINE_TOTAL: f64 = 15.48;
pub const P720_SI_TOTAL: f64 = 15.14;
/// Reference 2160p saving at threshold 0.8.
pub const P2160_SAVINGS: f64 = 0.385;
pub const CALIBRATION_THRESHOLD: f64 = 0.8;
pub const FIXTURE_SEED: u64 = 2021;

/// Receiver detection probability of the target, per GOP 1..=3 (rows) and
/// threshold 0.4 / 0.8 / 0.9 (columns).
pub const REFERENCE_RECEIVER_2160P: [[f64; 3]; 3] = [
    [0.321, 0.4, 0.385],
    [0.9921, 0.975, 0.964],
    [0.742, 0.738, 0.75],
];
pub const REFERENCE_RECEIVER_720P: [[f64; 3]; 3] =
    [[0.26, 0.11, 0.13], [0.91, 0.89, 0.053], [0.74, 0.73, 0.67]];
pub const REFERENCE_THRESHOLDS: [f64; 3] = [0.4, 0.8, 0.9];
/// GOP ids covered by the receiver table.
pub const REFERENCE_GOPS: [usize; 3] = [1, 2, 3];

/// Relative GOP weight: motion of the target makes GOP 2 > GOP 3 > GOP 4 the
/// largest. The rest stay level so every GOP's important SNR clears the
/// calibrated 720p low SNR and the baseline dominates at each threshold.
const GOP_WEIGHT: [f64; 10] = [1.0, 1.0, 1.6, 1.45, 1.15, 1.0, 1.0, 1.0, 1.0, 1.0];

fn base_sizes(res: Resolution) -> (f64, f64, f64) {
    match res {
        Resolution::P144 => (1800.0, 450.0, 220.0),
        Resolution::P360 => (6000.0, 1500.0, 700.0),
        Resolution::P720 => (16000.0, 4000.0, 1900.0),
        Resolution::P1080 => (30000.0, 7500.0, 3600.0),
        Resolution::P2160 => (60000.0, 14000.0, 6500.0),
    }
}

fn res_code(res: Resolution) -> u64 {
    Resolution::ALL.iter().position(|&r| r == res).unwrap() as u64
}

/// I B B P B B P ... within each GOP.
fn frame_type(index: usize) -> FrameType {
    match index % GOP_LENGTH as usize {
        0 => FrameType::I,
        k if k % 3 == 0 => FrameType::P,
        _ => FrameType::B,
    }
}

pub fn synth_manifest(res: Resolution) -> VideoManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(FIXTURE_SEED ^ (res_code(res) << 32));
    let (i_size, p_size, b_size) = base_sizes(res);
    let frames = (0..FRAMES)
        .map(|index| {
            let ft = frame_type(index);
            let base = match ft {
                FrameType::I => i_size,
                FrameType::P => p_size,
                FrameType::B => b_size,
            };
            let jitter = rng.random_range(0.97..1.03);
            let weight = GOP_WEIGHT[index / GOP_LENGTH as usize];
            FrameRecord {
                index,
                frame_type: ft,
                size_bytes: (base * weight * jitter).round().max(1.0) as u64,
                payload_seed: res_code(res) * 1_000_000 + index as u64,
                gop_id: 0,
            }
        })
        .collect();
    VideoManifest::new(res, 30, GOP_LENGTH, 1500, frames).expect("synthetic manifest is valid")
}

/// Target detection profile at full resolution: enters in GOP 1 below 0.4,
/// peaks under 0.9 in GOP 2, above 0.9 in GOP 3, fades through GOP 4.
fn target_profile(frame: usize) -> Option<f64> {
    let p = match frame {
        40..=59 => 0.10 + 0.25 * (frame - 40) as f64 / 19.0,
        60..=89 => 0.50 + 0.38 * ((frame - 60) as f64 / 29.0).sqrt(),
        90..=119 => {
            let x = (frame as f64 - 104.5) / 15.0;
            0.97 - 0.12 * x * x
        }
        120..=149 => 0.78 - 0.56 * (frame - 120) as f64 / 29.0,
        _ => return None,
    };
    Some(p)
}

fn resolution_scale(res: Resolution) -> f64 {
    match res {
        Resolution::P144 => 0.4 / 0.97,
        Resolution::P360 => 0.75,
        Resolution::P720 | Resolution::P1080 | Resolution::P2160 => 1.0,
    }
}

/// (type, make, first frame, last frame, peak probability)
const OTHER_VEHICLES: [(&str, &str, usize, usize, f64); 12] = [
    ("car", "Toyota Camry 2018", 0, 45, 0.82),
    ("car", "Honda Civic 2019", 10, 70, 0.76),
    ("truck", "Volvo FH16", 25, 95, 0.88),
    ("bus", "Mercedes Citaro", 50, 130, 0.91),
    ("car", "BMW 320i 2016", 80, 140, 0.69),
    ("suv", "Jeep Wrangler 2018", 100, 175, 0.84),
    ("car", "Audi A4 2017", 130, 190, 0.73),
    ("truck", "Ford F-150 2019", 150, 220, 0.87),
    ("car", "Hyundai Elantra 2020", 170, 240, 0.66),
    ("motorcycle", "Yamaha MT-07", 200, 250, 0.58),
    ("car", "Tesla Model 3 2019", 215, 285, 0.8),
    ("suv", "Nissan Rogue 2017", 240, 299, 0.78),
];

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Sender-side (tiny detector) log for the scene at `res`.
pub fn synth_detection_log(res: Resolution) -> Vec<DetectionRecord> {
    let scale = resolution_scale(res);
    let mut rng = ChaCha8Rng::seed_from_u64(FIXTURE_SEED ^ 0xD37 ^ (res_code(res) << 40));
    let mut records = Vec::new();
    for frame in 0..FRAMES {
        let visible = match res {
            // fewer frames detected at the lowest resolution
            Resolution::P144 => (70..=115).contains(&frame),
            _ => true,
        };
        if let Some(p) = target_profile(frame).filter(|_| visible) {
            records.push(DetectionRecord {
                frame_index: frame,
                vehicle_type: TARGET_TYPE.into(),
                vehicle_make: TARGET_MAKE.into(),
                probability: round3((p * scale).clamp(0.0, 1.0)),
                bbox_id: None,
            });
        }
        for &(t, m, first, last, peak) in &OTHER_VEHICLES {
            if !(first..=last).contains(&frame) {
                continue;
            }
            let mid = (first + last) as f64 / 2.0;
            let half = (last - first) as f64 / 2.0;
            let x = (frame as f64 - mid) / half;
            let p = peak * scale * (1.0 - 0.5 * x * x) * rng.random_range(0.95..1.0);
            records.push(DetectionRecord {
                frame_index: frame,
                vehicle_type: t.into(),
                vehicle_make: m.into(),
                probability: round3(p.clamp(0.001, 1.0)),
                bbox_id: None,
            });
        }
    }
    records
}

/// Receiver-side log reproducing one column of the reference receiver table.
pub fn reference_receiver_log(res: Resolution, threshold: f64) -> Option<Vec<DetectionRecord>> {
    let table = match res {
        Resolution::P720 => &REFERENCE_RECEIVER_720P,
        Resolution::P2160 => &REFERENCE_RECEIVER_2160P,
        _ => return None,
    };
    let col = REFERENCE_THRESHOLDS.iter().position(|&t| t == threshold)?;
    let mut records = Vec::new();
    for (row, &gop) in REFERENCE_GOPS.iter().enumerate() {
        let start = gop * GOP_LENGTH as usize;
        for frame in start..start + GOP_LENGTH as usize {
            records.push(DetectionRecord {
                frame_index: frame,
                vehicle_type: TARGET_TYPE.into(),
                vehicle_make: TARGET_MAKE.into(),
                probability: table[row][col],
                bbox_id: None,
            });
        }
    }
    Some(records)
}

pub fn target_descriptor() -> VehicleDescriptor {
    VehicleDescriptor::new("*", TARGET_MAKE).expect("concrete make")
}

/// Calibrated SNR profile for the fixture at `res`, if reference totals exist.
///
/// 720p solves alpha and the low SNR from the two reference totals; 2160p
/// keeps the default low SNR and solves alpha for the reference saving.
pub fn calibrated_profile(res: Resolution) -> Result<Option<SnrProfile>> {
    let manifest = synth_manifest(res);
    let records = synth_detection_log(res);
    let tracks = track_unique_objects(&records, 1);
    let series = target_probability_series(&tracks, &target_descriptor(), manifest.frame_count())?;
    let importance = lift_to_gops(
        &build_frame_vector(&series, CALIBRATION_THRESHOLD)?,
        &manifest,
    )?;
    let gops = gop_sizes(&manifest);
    let durations = manifest.gop_durations_s();
    match res {
        Resolution::P720 => calibrate_from_totals(
            &gops,
            &importance,
            &durations,
            P720_BASELINE_TOTAL,
            P720_SI_TOTAL,
        )
        .map(Some),
        Resolution::P2160 => {
            let alpha = calibrate_alpha_for_savings(
                &gops,
                &importance,
                &durations,
                P2160_SAVINGS,
                DEFAULT_SNR_LOW_LINEAR,
            )?;
            SnrProfile::new(alpha, DEFAULT_SNR_LOW_LINEAR, None).map(Some)
        }
        _ => Ok(None),
    }
}

fn experiment_toml(res: Resolution, profile: &SnrProfile, with_receiver_logs: bool) -> String {
    let mut out = format!(
        "# {res} traffic scene, SNR profile calibrated to the reference totals\n\
         manifest = \"manifest.json\"\n\
         detection_log = \"detections.csv\"\n\
         thresholds = [0.4, 0.8, 0.9]\n\
         gap_tolerance = 1\n\
         \n\
         [descriptor]\n\
         vehicle_type = \"*\"\n\
         vehicle_make = \"{TARGET_MAKE}\"\n\
         \n\
         [snr_profile]\n\
         alpha = {:e}\n\
         snr_low_linear = {}\n\
         \n\
         [channel]\n\
         bandwidth_hz = 2.0e7\n\
         seed = {FIXTURE_SEED}\n\
         \n\
         [goal]\n\
         target_detection = 0.7\n\
         gops = [2, 3]\n",
        profile.alpha, profile.snr_low_linear
    );
    if with_receiver_logs {
        for t in REFERENCE_THRESHOLDS {
            out.push_str(&format!(
                "\n[[receiver_log]]\nthreshold = {t}\npath = \"receiver/si_{t}.csv\"\n"
            ));
        }
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the whole fixture tree under `dir`, one subdirectory per resolution.
pub fn write_fixture_tree(dir: &Path) -> Result<()> {
    use crate::detection::detection_log_document;
    for res in Resolution::ALL {
        let sub = dir.join(res.label());
        write(
            &sub.join("manifest.json"),
            &synth_manifest(res).to_document(),
        )?;
        write(
            &sub.join("detections.csv"),
            &detection_log_document(&synth_detection_log(res)),
        )?;
        let Some(profile) = calibrated_profile(res)? else {
            continue;
        };
        for t in REFERENCE_THRESHOLDS {
            let log = reference_receiver_log(res, t).expect("table exists for this resolution");
            write(
                &sub.join(format!("receiver/si_{t}.csv")),
                &detection_log_document(&log),
            )?;
        }
        write(
            &sub.join("experiment.toml"),
            &experiment_toml(res, &profile, true),
        )?;
        write(
            &sub.join("experiment_model.toml"),
            &experiment_toml(res, &profile, false),
        )?;
    }
    Ok(())
}
