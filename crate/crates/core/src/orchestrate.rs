//! Resource summary vector (per-GOP required SNR) and noise-normalized
//! power accounting.
//!
//! Important GOPs request a linear SNR proportional to their byte size
//! (`alpha * bytes`, optionally capped); unimportant GOPs request a fixed
//! low SNR. Power of a GOP is its linear SNR times its duration, and the
//! baseline is the same vector with every GOP important.

use crate::annotate::GopImportance;
use crate::error::{Error, Result};

pub const DEFAULT_SNR_LOW_LINEAR: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrProfile {
    /// Linear SNR per byte for important GOPs.
    pub alpha: f64,
    pub snr_low_linear: f64,
    pub snr_cap_linear: Option<f64>,
}

impl SnrProfile {
    pub fn new(alpha: f64, snr_low_linear: f64, snr_cap_linear: Option<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !(snr_low_linear >= 0.0 && snr_low_linear.is_finite()) {
            return Err(Error::Domain(format!(
                "snr_low_linear must be non-negative, got {snr_low_linear}"
            )));
        }
        if let Some(cap) = snr_cap_linear {
            if !(cap > 0.0) {
                return Err(Error::Domain(format!(
                    "snr cap must be positive, got {cap}"
                )));
            }
        }
        Ok(SnrProfile {
            alpha,
            snr_low_linear,
            snr_cap_linear,
        })
    }

    pub fn important_snr(&self, gop_bytes: u64) -> f64 {
        let snr = self.alpha * gop_bytes as f64;
        self.snr_cap_linear.map_or(snr, |cap| snr.min(cap))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsvEntry {
    pub gop_id: usize,
    pub required_snr_linear: f64,
    pub important: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceSummaryVector {
    /// `None` for the all-important baseline.
    pub threshold: Option<f64>,
    pub alpha: f64,
    pub snr_low_linear: f64,
    pub entries: Vec<RsvEntry>,
}

impl ResourceSummaryVector {
    /// Per-frame view: every frame of a GOP shares the GOP's SNR.
    pub fn frame_snr(&self, gop_length_frames: usize, frame_count: usize) -> Vec<f64> {
        (0..frame_count)
            .map(|f| self.entries[f / gop_length_frames].required_snr_linear)
            .collect()
    }

    /// Returns a message when the low SNR is not below the cheapest important
    /// GOP, in which case savings are meaningless.
    pub fn low_snr_warning(&self, gops: &[(usize, u64)]) -> Option<String> {
        let smallest = self
            .entries
            .iter()
            .zip(gops)
            .filter(|(e, _)| e.important)
            .map(|(_, &(_, bytes))| self.alpha * bytes as f64)
            .reduce(f64::min)?;
        (self.snr_low_linear >= smallest).then(|| {
            format!(
                "snr_low_linear {} is not below the smallest important GOP SNR {}",
                self.snr_low_linear, smallest
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerReport {
    pub total_power_si: f64,
    pub total_power_baseline: f64,
    pub savings_fraction: f64,
}

fn check_gop_set(gops: &[(usize, u64)], importance: &GopImportance) -> Result<()> {
    if gops.len() != importance.important.len() {
        return Err(Error::Contract(format!(
            "{} GOP sizes but {} importance bits",
            gops.len(),
            importance.important.len()
        )));
    }
    if let Some((pos, &(id, _))) = gops.iter().enumerate().find(|(pos, (id, _))| pos != id) {
        return Err(Error::Contract(format!("GOP id {id} at position {pos}")));
    }
    Ok(())
}

pub fn build_rsv(
    gops: &[(usize, u64)],
    importance: &GopImportance,
    profile: &SnrProfile,
) -> Result<ResourceSummaryVector> {
    check_gop_set(gops, importance)?;
    let entries = gops
        .iter()
        .zip(&importance.important)
        .map(|(&(gop_id, bytes), &important)| RsvEntry {
            gop_id,
            required_snr_linear: if important {
                profile.important_snr(bytes)
            } else {
                profile.snr_low_linear
            },
            important,
        })
        .collect();
    Ok(ResourceSummaryVector {
        threshold: Some(importance.threshold),
        alpha: profile.alpha,
        snr_low_linear: profile.snr_low_linear,
        entries,
    })
}

/// The no-annotation reference: every GOP treated as important.
pub fn baseline_rsv(gops: &[(usize, u64)], profile: &SnrProfile) -> Result<ResourceSummaryVector> {
    let all = GopImportance {
        threshold: f64::NAN,
        important: vec![true; gops.len()],
    };
    let mut rsv = build_rsv(gops, &all, profile)?;
    rsv.threshold = None;
    Ok(rsv)
}

pub fn total_power(rsv: &ResourceSummaryVector, gop_durations_s: &[f64]) -> Result<f64> {
    if rsv.entries.len() != gop_durations_s.len() {
        return Err(Error::Contract(format!(
            "RSV has {} GOPs but {} durations were given",
            rsv.entries.len(),
            gop_durations_s.len()
        )));
    }
    Ok(rsv
        .entries
        .iter()
        .zip(gop_durations_s)
        .map(|(e, d)| e.required_snr_linear * d)
        .sum())
}

pub fn power_report(
    rsv: &ResourceSummaryVector,
    baseline: &ResourceSummaryVector,
    gop_durations_s: &[f64],
) -> Result<PowerReport> {
    if rsv.entries.len() != baseline.entries.len() {
        return Err(Error::Contract(
            "RSV and baseline cover different GOP sets".into(),
        ));
    }
    let total_power_si = total_power(rsv, gop_durations_s)?;
    let total_power_baseline = total_power(baseline, gop_durations_s)?;
    let savings_fraction = if total_power_baseline > 0.0 {
        (total_power_baseline - total_power_si) / total_power_baseline
    } else {
        0.0
    };
    Ok(PowerReport {
        total_power_si,
        total_power_baseline,
        savings_fraction,
    })
}

struct Split {
    /// (bytes, duration) for each important GOP
    important: Vec<(f64, f64)>,
    unimportant_duration: f64,
    all_byte_seconds: f64,
}

fn split(gops: &[(usize, u64)], importance: &GopImportance, durations: &[f64]) -> Result<Split> {
    check_gop_set(gops, importance)?;
    if durations.len() != gops.len() {
        return Err(Error::Contract("durations do not cover the GOP set".into()));
    }
    let mut s = Split {
        important: Vec::new(),
        unimportant_duration: 0.0,
        all_byte_seconds: 0.0,
    };
    for ((&(_, bytes), &imp), &d) in gops.iter().zip(&importance.important).zip(durations) {
        s.all_byte_seconds += bytes as f64 * d;
        if imp {
            s.important.push((bytes as f64, d));
        } else {
            s.unimportant_duration += d;
        }
    }
    Ok(s)
}

/// Solves for the `alpha` that makes the annotated total power equal
/// `target_total_power`, given the low SNR and optional cap.
///
/// Total power is piecewise linear and non-decreasing in alpha (linear when
/// uncapped), so the solution is found segment by segment in closed form.
pub fn calibrate_alpha(
    gops: &[(usize, u64)],
    importance: &GopImportance,
    gop_durations_s: &[f64],
    target_total_power: f64,
    snr_low_linear: f64,
    snr_cap_linear: Option<f64>,
) -> Result<f64> {
    let s = split(gops, importance, gop_durations_s)?;
    if s.important.is_empty() {
        return Err(Error::Calibration("no important GOP to scale".into()));
    }
    let fixed = snr_low_linear * s.unimportant_duration;
    let need = target_total_power - fixed;
    if !(need > 0.0) {
        return Err(Error::Calibration(format!(
            "target {target_total_power} does not exceed the unimportant contribution {fixed}"
        )));
    }
    let Some(cap) = snr_cap_linear else {
        let slope: f64 = s.important.iter().map(|(b, d)| b * d).sum();
        return Ok(need / slope);
    };

    // GOPs saturate in order of decreasing size as alpha grows.
    let mut imp = s.important;
    imp.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut capped_power = 0.0;
    let mut slope: f64 = imp.iter().map(|(b, d)| b * d).sum();
    for (bytes, d) in &imp {
        let breakpoint = cap / bytes;
        // power at this breakpoint with the GOPs so far saturated
        let at_break = capped_power + slope * breakpoint;
        if need <= at_break {
            return Ok((need - capped_power) / slope);
        }
        capped_power += cap * d;
        slope -= bytes * d;
    }
    Err(Error::Calibration(format!(
        "target {target_total_power} unreachable: every important GOP saturates at the cap {cap}"
    )))
}

/// Solves `alpha` and the low SNR from the all-important baseline total and
/// the annotated total (uncapped profile).
pub fn calibrate_from_totals(
    gops: &[(usize, u64)],
    importance: &GopImportance,
    gop_durations_s: &[f64],
    baseline_total: f64,
    annotated_total: f64,
) -> Result<SnrProfile> {
    let s = split(gops, importance, gop_durations_s)?;
    if !(baseline_total > 0.0) || s.all_byte_seconds <= 0.0 {
        return Err(Error::Calibration("baseline total must be positive".into()));
    }
    if s.unimportant_duration <= 0.0 {
        return Err(Error::Calibration(
            "every GOP is important; the low SNR is undetermined".into(),
        ));
    }
    let alpha = baseline_total / s.all_byte_seconds;
    let important_power: f64 = s.important.iter().map(|(b, d)| alpha * b * d).sum();
    let snr_low = (annotated_total - important_power) / s.unimportant_duration;
    if snr_low < 0.0 {
        return Err(Error::Calibration(format!(
            "annotated total {annotated_total} is below the important-GOP power {important_power}"
        )));
    }
    SnrProfile::new(alpha, snr_low, None).map_err(|e| Error::Calibration(e.to_string()))
}

/// Solves `alpha` so that the annotated run saves `savings_fraction` of the
/// baseline power at a fixed low SNR (uncapped profile).
pub fn calibrate_alpha_for_savings(
    gops: &[(usize, u64)],
    importance: &GopImportance,
    gop_durations_s: &[f64],
    savings_fraction: f64,
    snr_low_linear: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&savings_fraction) {
        return Err(Error::Calibration(format!(
            "savings fraction {savings_fraction} outside [0, 1)"
        )));
    }
    let s = split(gops, importance, gop_durations_s)?;
    let important_bs: f64 = s.important.iter().map(|(b, d)| b * d).sum();
    let unimportant_bs = s.all_byte_seconds - important_bs;
    // alpha * (unimportant_bs - f * all) = snr_low * unimportant_duration
    let denom = unimportant_bs - savings_fraction * s.all_byte_seconds;
    let numer = snr_low_linear * s.unimportant_duration;
    if !(denom > 0.0) || !(numer > 0.0) {
        return Err(Error::Calibration(format!(
            "savings {savings_fraction} unreachable for this importance pattern"
        )));
    }
    Ok(numer / denom)
}

/// Formats `x` with `digits` significant digits in plain decimal notation.
pub fn format_significant(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{:.*}", digits.saturating_sub(1), x);
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn rsv_document(rsv: &ResourceSummaryVector) -> String {
    let threshold = rsv
        .threshold
        .map_or_else(|| "baseline".to_string(), |t| t.to_string());
    let mut out = format!(
        "threshold={threshold}\nalpha={}\nsnr_low_linear={}\ngop_id,required_snr_linear,important\n",
        rsv.alpha, rsv.snr_low_linear
    );
    for e in &rsv.entries {
        out.push_str(&format!(
            "{},{},{}\n",
            e.gop_id,
            e.required_snr_linear,
            u8::from(e.important)
        ));
    }
    out
}

pub fn parse_rsv(text: &str) -> Result<ResourceSummaryVector> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let mut header = |key: &str| -> Result<(usize, String)> {
        let (line, l) = lines
            .next()
            .ok_or_else(|| Error::parse(0, key, "missing header"))?;
        let value = l
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix('='))
            .ok_or_else(|| Error::parse(line, key, format!("expected `{key}=<value>`")))?;
        Ok((line, value.trim().to_string()))
    };
    let num = |(line, v): (usize, String), key: &str| -> Result<f64> {
        v.parse()
            .map_err(|e: std::num::ParseFloatError| Error::parse(line, key, e.to_string()))
    };
    let (tline, tval) = header("threshold")?;
    let threshold = if tval == "baseline" {
        None
    } else {
        Some(num((tline, tval), "threshold")?)
    };
    let alpha = num(header("alpha")?, "alpha")?;
    let snr_low_linear = num(header("snr_low_linear")?, "snr_low_linear")?;
    let (line, cols) = lines
        .next()
        .ok_or_else(|| Error::parse(0, "columns", "missing column header"))?;
    if cols.replace(' ', "") != "gop_id,required_snr_linear,important" {
        return Err(Error::parse(
            line,
            "columns",
            format!("unexpected column header `{cols}`"),
        ));
    }
    let mut entries = Vec::new();
    for (line, l) in lines {
        let fields: Vec<&str> = l.split(',').map(str::trim).collect();
        let [gop, snr, imp] = fields[..] else {
            return Err(Error::parse(line, "row", "expected 3 fields"));
        };
        let gop_id: usize = gop
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::parse(line, "gop_id", e.to_string()))?;
        if gop_id != entries.len() {
            return Err(Error::Validation(format!(
                "line {line}: gop_id {gop_id} out of order"
            )));
        }
        let required_snr_linear = num((line, snr.to_string()), "required_snr_linear")?;
        let important = match imp {
            "0" => false,
            "1" => true,
            _ => return Err(Error::parse(line, "important", "expected 0 or 1")),
        };
        entries.push(RsvEntry {
            gop_id,
            required_snr_linear,
            important,
        });
    }
    Ok(ResourceSummaryVector {
        threshold,
        alpha,
        snr_low_linear,
        entries,
    })
}

pub fn power_report_document(report: &PowerReport) -> String {
    format!(
        "total_power_si={}\ntotal_power_baseline={}\nsavings_fraction={}\n",
        format_significant(report.total_power_si, 6),
        format_significant(report.total_power_baseline, 6),
        format_significant(report.savings_fraction, 6),
    )
}
