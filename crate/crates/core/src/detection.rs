//! Detection-log ingest, unique-object tracking and descriptor resolution.
//!
//! A detection log is delimited text with one row per detection:
//! `frame_index, vehicle_type, vehicle_make, probability[, bbox_id]`.
//! An optional header row naming those columns and `#` comment lines are
//! accepted. Frames without detections simply have no rows.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use crate::error::{Error, Result};

pub const DEFAULT_GAP_TOLERANCE: usize = 1;

const COLUMNS: [&str; 5] = [
    "frame_index",
    "vehicle_type",
    "vehicle_make",
    "probability",
    "bbox_id",
];

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub frame_index: usize,
    pub vehicle_type: String,
    pub vehicle_make: String,
    pub probability: f64,
    pub bbox_id: Option<u32>,
}

impl DetectionRecord {
    pub fn identity(&self) -> (String, String) {
        (
            normalize_label(&self.vehicle_type),
            normalize_label(&self.vehicle_make),
        )
    }
}

/// Case-folds and collapses internal whitespace.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn parse_detection_log(text: &str) -> Result<Vec<DetectionRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (row, result) in reader.records().enumerate() {
        let rec = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, "row", e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if row == 0 && rec.get(0) == Some(COLUMNS[0]) {
            continue;
        }
        if rec.len() != 4 && rec.len() != 5 {
            return Err(Error::parse(
                line,
                "row",
                format!("expected 4 or 5 fields, found {}", rec.len()),
            ));
        }
        let frame_index = rec[0]
            .parse::<usize>()
            .map_err(|e| Error::parse(line, COLUMNS[0], e.to_string()))?;
        let probability = rec[3]
            .parse::<f64>()
            .map_err(|e| Error::parse(line, COLUMNS[3], e.to_string()))?;
        let bbox_id = match rec.get(4) {
            None | Some("") => None,
            Some(s) => Some(
                s.parse::<u32>()
                    .map_err(|e| Error::parse(line, COLUMNS[4], e.to_string()))?,
            ),
        };
        if rec[1].is_empty() || rec[2].is_empty() {
            return Err(Error::parse(
                line,
                "vehicle_type/vehicle_make",
                "empty label",
            ));
        }
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::Validation(format!(
                "line {line}: probability {probability} outside [0, 1]"
            )));
        }
        let record = DetectionRecord {
            frame_index,
            vehicle_type: rec[1].to_string(),
            vehicle_make: rec[2].to_string(),
            probability,
            bbox_id,
        };
        let (t, m) = record.identity();
        if !seen.insert((frame_index, t, m, bbox_id)) {
            return Err(Error::Validation(format!(
                "line {line}: duplicate detection for frame {frame_index}, `{}`, `{}`",
                record.vehicle_type, record.vehicle_make
            )));
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes records in the ingest schema, with a header row.
pub fn detection_log_document(records: &[DetectionRecord]) -> String {
    let mut out = String::from("frame_index,vehicle_type,vehicle_make,probability,bbox_id\n");
    for r in records {
        let bbox = r.bbox_id.map(|b| b.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.frame_index,
            csv_field(&r.vehicle_type),
            csv_field(&r.vehicle_make),
            r.probability,
            bbox
        ));
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// A vehicle identity followed across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedObject {
    pub track_id: usize,
    pub vehicle_type: String,
    pub vehicle_make: String,
    pub per_frame_prob: BTreeMap<usize, f64>,
}

impl TrackedObject {
    pub fn frame_span(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_frame_prob.keys().copied()
    }

    pub fn first_frame(&self) -> usize {
        *self
            .per_frame_prob
            .keys()
            .next()
            .expect("tracks are non-empty")
    }

    pub fn last_frame(&self) -> usize {
        *self
            .per_frame_prob
            .keys()
            .next_back()
            .expect("tracks are non-empty")
    }
}

/// Groups detections into tracks of identical (type, make).
///
/// A detection extends a track of the same identity when the frame gap to
/// the track's last appearance is at most `gap_tolerance`. Several
/// detections of one identity in the same frame (distinct `bbox_id`) are
/// paired with eligible tracks in creation order, lowest `bbox_id` first;
/// leftovers open new tracks. Records sharing frame, identity and `bbox_id`
/// collapse to their maximum probability.
pub fn track_unique_objects(
    records: &[DetectionRecord],
    gap_tolerance: usize,
) -> Vec<TrackedObject> {
    type FrameDets = BTreeMap<Option<u32>, (f64, usize)>;
    // identity -> frame -> bbox -> (max prob, index of first record)
    let mut by_identity: BTreeMap<(String, String), BTreeMap<usize, FrameDets>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let slot = by_identity
            .entry(r.identity())
            .or_default()
            .entry(r.frame_index)
            .or_default()
            .entry(r.bbox_id)
            .or_insert((r.probability, i));
        slot.0 = slot.0.max(r.probability);
    }

    struct Open {
        first_record: usize,
        frames: BTreeMap<usize, f64>,
        last: usize,
    }

    let mut built: Vec<Open> = Vec::new();
    for frames in by_identity.values() {
        let mut mine: Vec<usize> = Vec::new();
        for (&frame, dets) in frames {
            let eligible: Vec<usize> = mine
                .iter()
                .copied()
                .filter(|&t| frame - built[t].last <= gap_tolerance)
                .collect();
            let mut eligible = eligible.into_iter();
            for &(prob, rec_idx) in dets.values() {
                match eligible.next() {
                    Some(t) => {
                        built[t].frames.insert(frame, prob);
                        built[t].last = frame;
                    }
                    None => {
                        mine.push(built.len());
                        built.push(Open {
                            first_record: rec_idx,
                            frames: BTreeMap::from([(frame, prob)]),
                            last: frame,
                        });
                    }
                }
            }
        }
    }

    built.sort_by_key(|t| (*t.frames.keys().next().unwrap(), t.first_record));
    built
        .into_iter()
        .enumerate()
        .map(|(track_id, t)| TrackedObject {
            track_id,
            vehicle_type: records[t.first_record].vehicle_type.clone(),
            vehicle_make: records[t.first_record].vehicle_make.clone(),
            per_frame_prob: t.frames,
        })
        .collect()
}

/// Number of distinct (type, make) identities among the tracks.
pub fn unique_vehicle_count(tracks: &[TrackedObject]) -> usize {
    tracks
        .iter()
        .map(|t| {
            (
                normalize_label(&t.vehicle_type),
                normalize_label(&t.vehicle_make),
            )
        })
        .collect::<HashSet<_>>()
        .len()
}

/// A law-enforcement vehicle description. `None` is a wildcard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VehicleDescriptor {
    vehicle_type: Option<String>,
    vehicle_make: Option<String>,
}

impl VehicleDescriptor {
    /// `"*"` or an empty string is a wildcard; at least one field must be concrete.
    pub fn new(vehicle_type: &str, vehicle_make: &str) -> Result<Self> {
        let field = |s: &str| {
            let n = normalize_label(s);
            (!n.is_empty() && n != "*").then_some(n)
        };
        let d = VehicleDescriptor {
            vehicle_type: field(vehicle_type),
            vehicle_make: field(vehicle_make),
        };
        if d.vehicle_type.is_none() && d.vehicle_make.is_none() {
            return Err(Error::Domain(
                "vehicle descriptor needs a type or a make".into(),
            ));
        }
        Ok(d)
    }

    pub fn matches(&self, vehicle_type: &str, vehicle_make: &str) -> bool {
        let ok = |want: &Option<String>, have: &str| {
            want.as_ref().is_none_or(|w| *w == normalize_label(have))
        };
        ok(&self.vehicle_type, vehicle_type) && ok(&self.vehicle_make, vehicle_make)
    }
}

impl fmt::Display for VehicleDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}",
            self.vehicle_type.as_deref().unwrap_or("*"),
            self.vehicle_make.as_deref().unwrap_or("*")
        )
    }
}

/// Per-frame maximum probability over all tracks matching `descriptor`;
/// 0.0 where nothing matches.
pub fn target_probability_series(
    tracks: &[TrackedObject],
    descriptor: &VehicleDescriptor,
    frame_count: usize,
) -> Result<Vec<f64>> {
    if let Some(max) = tracks.iter().map(TrackedObject::last_frame).max() {
        if max >= frame_count {
            return Err(Error::Contract(format!(
                "detection at frame {max} but the video has {frame_count} frames"
            )));
        }
    }
    let mut series = vec![0.0; frame_count];
    let mut matched = 0;
    for track in tracks
        .iter()
        .filter(|t| descriptor.matches(&t.vehicle_type, &t.vehicle_make))
    {
        matched += 1;
        for (&f, &p) in &track.per_frame_prob {
            series[f] = f64::max(series[f], p);
        }
    }
    if matched == 0 {
        log::warn!("descriptor {descriptor} matches no tracked object");
    }
    Ok(series)
}
