//! Abstract encoded video: a manifest of closed GOPs, typed frames and MTU slices.
//!
//! The manifest stands in for the H.264 bitstream. Everything downstream
//! (power accounting, bit corruption) needs only byte sizes, so each frame
//! carries its size and a seed for a reproducible pseudo-payload.
//!
//! On disk a manifest is a JSON object with the header fields
//! `resolution_label`, `fps`, `gop_length_frames`, `mtu_bytes` and a
//! `frames` array holding one `{index, frame_type, size_bytes, payload_seed}`
//! record per line. Unknown fields are rejected.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FPS: u32 = 30;
pub const DEFAULT_GOP_LENGTH: u32 = 30;
pub const DEFAULT_MTU_BYTES: u32 = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resolution {
    #[serde(rename = "144p")]
    P144,
    #[serde(rename = "360p")]
    P360,
    #[serde(rename = "720p")]
    P720,
    #[serde(rename = "1080p")]
    P1080,
    #[serde(rename = "2160p")]
    P2160,
}

impl Resolution {
    pub const ALL: [Resolution; 5] = [
        Resolution::P144,
        Resolution::P360,
        Resolution::P720,
        Resolution::P1080,
        Resolution::P2160,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Resolution::P144 => "144p",
            Resolution::P360 => "360p",
            Resolution::P720 => "720p",
            Resolution::P1080 => "1080p",
            Resolution::P2160 => "2160p",
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Resolution::ALL
            .into_iter()
            .find(|r| r.label() == s)
            .ok_or_else(|| Error::Domain(format!("unknown resolution label `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameType {
    I,
    P,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub index: usize,
    pub frame_type: FrameType,
    pub size_bytes: u64,
    pub payload_seed: u64,
    /// Derived from `index` at parse time; not part of the document.
    #[serde(skip)]
    pub gop_id: usize,
}

impl FrameRecord {
    /// Reproducible pseudo-payload of exactly `size_bytes` bytes.
    pub fn synth_payload(&self) -> Vec<u8> {
        let mut buf = vec![0u8; self.size_bytes as usize];
        ChaCha8Rng::seed_from_u64(self.payload_seed).fill_bytes(&mut buf);
        buf
    }

    pub fn bits(&self) -> u64 {
        self.size_bytes * 8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slice {
    pub frame_index: usize,
    pub slice_index: usize,
    /// Byte offset of the slice within its frame payload.
    pub offset: usize,
    pub size_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoManifest {
    pub resolution_label: Resolution,
    #[serde(default = "default_fps")]
    pub fps: u32,
    #[serde(default = "default_gop_length")]
    pub gop_length_frames: u32,
    #[serde(default = "default_mtu")]
    pub mtu_bytes: u32,
    pub frames: Vec<FrameRecord>,
}

fn default_fps() -> u32 {
    DEFAULT_FPS
}
fn default_gop_length() -> u32 {
    DEFAULT_GOP_LENGTH
}
fn default_mtu() -> u32 {
    DEFAULT_MTU_BYTES
}

impl VideoManifest {
    /// Builds a manifest from raw frame records, assigning GOP ids and validating.
    pub fn new(
        resolution_label: Resolution,
        fps: u32,
        gop_length_frames: u32,
        mtu_bytes: u32,
        frames: Vec<FrameRecord>,
    ) -> Result<Self> {
        let mut manifest = VideoManifest {
            resolution_label,
            fps,
            gop_length_frames,
            mtu_bytes,
            frames,
        };
        manifest.assign_gops_and_validate()?;
        Ok(manifest)
    }

    fn assign_gops_and_validate(&mut self) -> Result<()> {
        if self.fps == 0 {
            return Err(Error::Validation("fps must be positive".into()));
        }
        if self.gop_length_frames == 0 {
            return Err(Error::Validation(
                "gop_length_frames must be positive".into(),
            ));
        }
        if self.mtu_bytes == 0 {
            return Err(Error::Validation("mtu_bytes must be positive".into()));
        }
        let gop_len = self.gop_length_frames as usize;
        for (pos, frame) in self.frames.iter_mut().enumerate() {
            if frame.index != pos {
                return Err(Error::Validation(format!(
                    "frame {} out of order: expected index {pos}",
                    frame.index
                )));
            }
            if frame.size_bytes == 0 {
                return Err(Error::Validation(format!("frame {pos} has size_bytes 0")));
            }
            let gop_start = pos % gop_len == 0;
            match (gop_start, frame.frame_type) {
                (true, FrameType::I) | (false, FrameType::P | FrameType::B) => {}
                (true, _) => return Err(Error::Validation(format!("frame {pos} must be I"))),
                (false, FrameType::I) => {
                    return Err(Error::Validation(format!(
                        "frame {pos} must not be I inside a closed GOP"
                    )))
                }
            }
            frame.gop_id = pos / gop_len;
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn gop_count(&self) -> usize {
        self.frames.len().div_ceil(self.gop_length_frames as usize)
    }

    /// Member frames of GOP `gop_id` (the last GOP may be short).
    pub fn gop_frames(&self, gop_id: usize) -> &[FrameRecord] {
        let len = self.gop_length_frames as usize;
        let start = (gop_id * len).min(self.frames.len());
        let end = ((gop_id + 1) * len).min(self.frames.len());
        &self.frames[start..end]
    }

    pub fn gop_duration_s(&self, gop_id: usize) -> f64 {
        self.gop_frames(gop_id).len() as f64 / f64::from(self.fps)
    }

    pub fn gop_durations_s(&self) -> Vec<f64> {
        (0..self.gop_count())
            .map(|g| self.gop_duration_s(g))
            .collect()
    }

    pub fn total_bytes(&self) -> u64 {
        self.frames.iter().map(|f| f.size_bytes).sum()
    }

    /// Serializes with one frame record per line.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        out.push_str("{\n");
        out.push_str(&format!(
            "  \"resolution_label\": \"{}\",\n  \"fps\": {},\n  \"gop_length_frames\": {},\n  \"mtu_bytes\": {},\n",
            self.resolution_label, self.fps, self.gop_length_frames, self.mtu_bytes
        ));
        out.push_str("  \"frames\": [");
        for (i, frame) in self.frames.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str("\n    ");
            out.push_str(&serde_json::to_string(frame).expect("frame record serializes"));
        }
        if !self.frames.is_empty() {
            out.push_str("\n  ");
        }
        out.push_str("]\n}\n");
        out
    }
}

/// Parses and validates a manifest document.
pub fn parse_manifest(text: &str) -> Result<VideoManifest> {
    let mut manifest: VideoManifest = serde_json::from_str(text).map_err(|e| {
        let message = e.to_string();
        let field = backticked(&message).unwrap_or("document").to_string();
        Error::parse(e.line(), field, message)
    })?;
    manifest.assign_gops_and_validate()?;
    Ok(manifest)
}

fn backticked(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}

/// Total bytes per GOP, ordered by GOP id.
pub fn gop_sizes(manifest: &VideoManifest) -> Vec<(usize, u64)> {
    (0..manifest.gop_count())
        .map(|g| (g, manifest.gop_frames(g).iter().map(|f| f.size_bytes).sum()))
        .collect()
}

/// Splits a frame into MTU-sized slices; only the last slice may be short.
pub fn slice_frame(frame: &FrameRecord, mtu_bytes: u32) -> Result<Vec<Slice>> {
    if mtu_bytes == 0 {
        return Err(Error::Domain("mtu_bytes must be at least 1".into()));
    }
    let mtu = mtu_bytes as usize;
    let size = frame.size_bytes as usize;
    Ok((0..size.div_ceil(mtu))
        .map(|i| {
            let offset = i * mtu;
            Slice {
                frame_index: frame.index,
                slice_index: i,
                offset,
                size_bytes: mtu.min(size - offset),
            }
        })
        .collect())
}
