//! Uplink emulation over a Gray-coded QPSK / AWGN link.
//!
//! Each GOP's requested SNR is mapped to Eb/N0 through the channel bandwidth
//! and the GOP's own bitrate, then to an analytic bit-error rate. Payload
//! bits are flipped independently with that probability by a seeded
//! generator. Every frame draws from its own sub-stream keyed by
//! `(seed, frame_index)`, so results do not depend on processing order.
//! Within a frame each bit consumes exactly one draw, which couples runs at
//! different error rates: with the same seed, a lower rate flips a subset
//! of the bits a higher rate flips.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::orchestrate::ResourceSummaryVector;
use crate::video::{slice_frame, FrameRecord, VideoManifest};

pub const DEFAULT_BANDWIDTH_HZ: f64 = 2.0e7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Modulation {
    #[default]
    Qpsk,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub bandwidth_hz: f64,
    pub modulation: Modulation,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn new(bandwidth_hz: f64, seed: u64) -> Result<Self> {
        if !(bandwidth_hz > 0.0 && bandwidth_hz.is_finite()) {
            return Err(Error::Domain(format!(
                "bandwidth must be positive, got {bandwidth_hz}"
            )));
        }
        Ok(ChannelConfig {
            bandwidth_hz,
            modulation: Modulation::Qpsk,
            seed,
        })
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            bandwidth_hz: DEFAULT_BANDWIDTH_HZ,
            modulation: Modulation::Qpsk,
            seed: 0,
        }
    }
}

/// Eb/N0 = SNR * B / Rb (all linear).
pub fn snr_to_ebn0(snr_linear: f64, bandwidth_hz: f64, bitrate_bps: f64) -> Result<f64> {
    if !(bandwidth_hz > 0.0) || !(bitrate_bps > 0.0) {
        return Err(Error::Domain(format!(
            "bandwidth ({bandwidth_hz}) and bitrate ({bitrate_bps}) must be positive"
        )));
    }
    if !(snr_linear >= 0.0) {
        return Err(Error::Domain(format!(
            "SNR must be non-negative, got {snr_linear}"
        )));
    }
    Ok(snr_linear * bandwidth_hz / bitrate_bps)
}

/// Bit-error probability of Gray-coded QPSK on AWGN: `Q(sqrt(2 Eb/N0))`.
///
/// Strictly positive until the tail underflows `f64` near Eb/N0 = 745.
pub fn qpsk_ber(ebn0_linear: f64) -> Result<f64> {
    if !(ebn0_linear >= 0.0) {
        return Err(Error::Domain(format!(
            "Eb/N0 must be non-negative, got {ebn0_linear}"
        )));
    }
    Ok(0.5 * libm::erfc(ebn0_linear.sqrt()))
}

/// Flips each bit independently with probability `ber`.
///
/// Returns the corrupted copy and the number of flipped bits. Identical
/// `(payload, ber, stream_seed)` always give identical output.
pub fn corrupt_payload(payload: &[u8], ber: f64, stream_seed: u64) -> Result<(Vec<u8>, u64)> {
    if !(0.0..=0.5).contains(&ber) {
        return Err(Error::Domain(format!("BER {ber} outside [0, 0.5]")));
    }
    let mut out = payload.to_vec();
    if ber == 0.0 {
        return Ok((out, 0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let mut flipped = 0u64;
    for byte in &mut out {
        let mut mask = 0u8;
        for bit in (0..8).rev() {
            if unit_f64(rng.next_u64()) < ber {
                mask |= 1 << bit;
            }
        }
        flipped += u64::from(mask.count_ones());
        *byte ^= mask;
    }
    Ok((out, flipped))
}

/// Uniform in [0, 1) with 53 bits of resolution.
fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-frame sub-seed.
pub fn frame_seed(seed: u64, frame_index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(frame_index as u64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GopLink {
    pub gop_id: usize,
    pub snr_linear: f64,
    pub ebn0_linear: f64,
    pub ber: f64,
    pub bits_sent: u64,
    pub bits_flipped: u64,
    pub slices_sent: usize,
    pub slice_errors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameLink {
    pub frame_index: usize,
    pub gop_id: usize,
    pub bits_flipped: u64,
    pub slices: usize,
    pub slice_errors: usize,
    pub corrupted: bool,
}

impl FrameLink {
    pub fn slice_error_fraction(&self) -> f64 {
        if self.slices == 0 {
            0.0
        } else {
            self.slice_errors as f64 / self.slices as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkReport {
    pub gops: Vec<GopLink>,
    pub frames: Vec<FrameLink>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub report: LinkReport,
    /// Corrupted payloads in frame order, when requested.
    pub received: Option<Vec<Vec<u8>>>,
}

/// Sends every frame at its GOP's requested SNR using seeded pseudo-payloads.
pub fn transmit(
    manifest: &VideoManifest,
    rsv: &ResourceSummaryVector,
    config: &ChannelConfig,
) -> Result<LinkReport> {
    transmit_with(manifest, rsv, config, |f| Ok(f.synth_payload()), false).map(|t| t.report)
}

/// Like [`transmit`] with caller-supplied payloads; optionally keeps the
/// corrupted payloads.
pub fn transmit_with<F>(
    manifest: &VideoManifest,
    rsv: &ResourceSummaryVector,
    config: &ChannelConfig,
    payload_of: F,
    keep_received: bool,
) -> Result<Transmission>
where
    F: Fn(&FrameRecord) -> Result<Vec<u8>> + Sync,
{
    let gop_count = manifest.gop_count();
    if rsv.entries.len() < gop_count {
        return Err(Error::Contract(format!(
            "RSV has no entry for GOP {}",
            rsv.entries.len()
        )));
    }
    if rsv.entries.len() > gop_count {
        return Err(Error::Contract(format!(
            "RSV covers {} GOPs but the manifest has {gop_count}",
            rsv.entries.len()
        )));
    }

    let mut gops = Vec::with_capacity(gop_count);
    for (gop_id, entry) in rsv.entries.iter().enumerate() {
        let frames = manifest.gop_frames(gop_id);
        let bits: u64 = frames.iter().map(FrameRecord::bits).sum();
        let bitrate = bits as f64 / manifest.gop_duration_s(gop_id);
        let ebn0 = snr_to_ebn0(entry.required_snr_linear, config.bandwidth_hz, bitrate)?;
        gops.push(GopLink {
            gop_id,
            snr_linear: entry.required_snr_linear,
            ebn0_linear: ebn0,
            ber: qpsk_ber(ebn0)?,
            bits_sent: bits,
            bits_flipped: 0,
            slices_sent: 0,
            slice_errors: 0,
        });
    }

    let per_frame: Vec<(FrameLink, Option<Vec<u8>>)> = manifest
        .frames
        .par_iter()
        .map(|frame| {
            let payload = payload_of(frame)?;
            if payload.len() as u64 != frame.size_bytes {
                return Err(Error::Contract(format!(
                    "payload of frame {} has {} bytes, manifest says {}",
                    frame.index,
                    payload.len(),
                    frame.size_bytes
                )));
            }
            let ber = gops[frame.gop_id].ber;
            let (received, bits_flipped) =
                corrupt_payload(&payload, ber, frame_seed(config.seed, frame.index))?;
            let slices = slice_frame(frame, manifest.mtu_bytes)?;
            let slice_errors = slices
                .iter()
                .filter(|s| {
                    let r = s.offset..s.offset + s.size_bytes;
                    payload[r.clone()] != received[r]
                })
                .count();
            let link = FrameLink {
                frame_index: frame.index,
                gop_id: frame.gop_id,
                bits_flipped,
                slices: slices.len(),
                slice_errors,
                corrupted: bits_flipped > 0,
            };
            Ok((link, keep_received.then_some(received)))
        })
        .collect::<Result<_>>()?;

    let mut frames = Vec::with_capacity(per_frame.len());
    let mut received = keep_received.then(|| Vec::with_capacity(per_frame.len()));
    for (link, payload) in per_frame {
        let g = &mut gops[link.gop_id];
        g.bits_flipped += link.bits_flipped;
        g.slices_sent += link.slices;
        g.slice_errors += link.slice_errors;
        if let (Some(all), Some(p)) = (received.as_mut(), payload) {
            all.push(p);
        }
        frames.push(link);
    }
    Ok(Transmission {
        report: LinkReport { gops, frames },
        received,
    })
}

pub fn link_gops_document(report: &LinkReport) -> String {
    let mut out =
        String::from("gop_id,snr_linear,ebn0_linear,ber,bits_sent,bits_flipped,slice_errors\n");
    for g in &report.gops {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            g.gop_id,
            g.snr_linear,
            g.ebn0_linear,
            g.ber,
            g.bits_sent,
            g.bits_flipped,
            g.slice_errors
        ));
    }
    out
}

pub fn link_frames_document(report: &LinkReport) -> String {
    let mut out = String::from("frame_index,corrupted\n");
    for f in &report.frames {
        out.push_str(&format!("{},{}\n", f.frame_index, u8::from(f.corrupted)));
    }
    out
}
