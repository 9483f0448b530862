//! Scale-of-importance annotation: probability series to per-frame bits,
//! and frame bits to per-GOP importance.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::video::VideoManifest;

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.4, 0.8, 0.9];

#[derive(Debug, Clone, PartialEq)]
pub struct FrameVector {
    pub threshold: f64,
    pub si: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GopImportance {
    pub threshold: f64,
    pub important: Vec<bool>,
}

impl GopImportance {
    pub fn important_gops(&self) -> BTreeSet<usize> {
        self.important
            .iter()
            .enumerate()
            .filter_map(|(g, &b)| b.then_some(g))
            .collect()
    }
}

pub fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "threshold {threshold} outside (0, 1]"
        )))
    }
}

/// Marks frame `f` important iff `series[f] >= threshold`.
pub fn build_frame_vector(series: &[f64], threshold: f64) -> Result<FrameVector> {
    check_threshold(threshold)?;
    if let Some((f, p)) = series
        .iter()
        .enumerate()
        .find(|(_, p)| !(0.0..=1.0).contains(*p))
    {
        return Err(Error::Domain(format!(
            "probability {p} at frame {f} outside [0, 1]"
        )));
    }
    Ok(FrameVector {
        threshold,
        si: series.iter().map(|&p| p >= threshold).collect(),
    })
}

pub fn frames_selected(fv: &FrameVector) -> BTreeSet<usize> {
    fv.si
        .iter()
        .enumerate()
        .filter_map(|(f, &b)| b.then_some(f))
        .collect()
}

/// A GOP is important when any of its frames is.
pub fn lift_to_gops(fv: &FrameVector, manifest: &VideoManifest) -> Result<GopImportance> {
    if fv.si.len() != manifest.frame_count() {
        return Err(Error::Contract(format!(
            "frame vector has {} bits but the manifest has {} frames",
            fv.si.len(),
            manifest.frame_count()
        )));
    }
    let len = manifest.gop_length_frames as usize;
    let important = if len == 0 {
        Vec::new()
    } else {
        fv.si.chunks(len).map(|c| c.iter().any(|&b| b)).collect()
    };
    Ok(GopImportance {
        threshold: fv.threshold,
        important,
    })
}

pub fn frame_vector_document(fv: &FrameVector) -> String {
    let mut out = format!("threshold={}\n", fv.threshold);
    for &bit in &fv.si {
        out.push_str(if bit { "1\n" } else { "0\n" });
    }
    out
}

pub fn parse_frame_vector(text: &str) -> Result<FrameVector> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (line, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "threshold", "missing header"))?;
    let value = header
        .strip_prefix("threshold=")
        .ok_or_else(|| Error::parse(line, "threshold", "expected `threshold=<value>`"))?;
    let threshold: f64 = value
        .trim()
        .parse()
        .map_err(|e: std::num::ParseFloatError| Error::parse(line, "threshold", e.to_string()))?;
    check_threshold(threshold)?;
    let si = lines
        .map(|(line, l)| match l {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::parse(
                line,
                "si",
                format!("expected 0 or 1, found `{other}`"),
            )),
        })
        .collect::<Result<_>>()?;
    Ok(FrameVector { threshold, si })
}
