#![allow(dead_code, clippy::excessive_precision)]

use goalstream::annotate::GopImportance;
use goalstream::detection::DetectionRecord;
use goalstream::orchestrate::SnrProfile;
use goalstream::video::{FrameRecord, FrameType, Resolution, VideoManifest};
use proptest::prelude::*;

pub fn frames_from_sizes(sizes: &[u64], gop_length: u32) -> Vec<FrameRecord> {
    sizes
        .iter()
        .enumerate()
        .map(|(index, &size_bytes)| FrameRecord {
            index,
            frame_type: match index % gop_length as usize {
                0 => FrameType::I,
                k if k % 2 == 0 => FrameType::P,
                _ => FrameType::B,
            },
            size_bytes,
            payload_seed: index as u64 * 7919,
            gop_id: 0,
        })
        .collect()
}

pub fn manifest_from_sizes(sizes: &[u64], gop_length: u32, fps: u32) -> VideoManifest {
    VideoManifest::new(
        Resolution::P720,
        fps,
        gop_length,
        1500,
        frames_from_sizes(sizes, gop_length),
    )
    .unwrap()
}

pub fn arb_manifest() -> impl Strategy<Value = VideoManifest> {
    (
        1u32..40,
        1u32..61,
        1u32..9001,
        prop::sample::select(Resolution::ALL.to_vec()),
    )
        .prop_flat_map(|(gop, fps, mtu, res)| {
            prop::collection::vec(1u64..200_000, 0..200).prop_map(move |sizes| {
                VideoManifest::new(res, fps, gop, mtu, frames_from_sizes(&sizes, gop)).unwrap()
            })
        })
}

pub fn arb_series(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![
            3 => 0.0f64..=1.0,
            1 => prop::sample::select(vec![0.0, 0.4, 0.8, 0.9, 1.0]),
        ],
        1..max_len,
    )
}

/// A threshold in (0, 1], biased toward the defaults.
pub fn arb_threshold() -> impl Strategy<Value = f64> {
    prop_oneof![
        3 => 1e-9f64..=1.0,
        1 => prop::sample::select(vec![0.4, 0.8, 0.9, 1.0]),
    ]
}

const LABELS: [(&str, &str); 4] = [
    ("car", "Ford Expedition 2017"),
    ("car", "Honda Civic 2019"),
    ("truck", "Volvo FH16"),
    ("SUV", "Ford  Expedition 2017"),
];

/// Detection records with unique (frame, identity, bbox) keys.
pub fn arb_records() -> impl Strategy<Value = Vec<DetectionRecord>> {
    prop::collection::vec(
        (
            0usize..80,
            0usize..LABELS.len(),
            prop::option::of(0u32..3),
            0.0f64..=1.0,
        ),
        0..120,
    )
    .prop_map(|rows| {
        let mut seen = std::collections::BTreeSet::new();
        rows.into_iter()
            .filter_map(|(frame, l, bbox, p)| {
                let (t, m) = LABELS[l];
                let r = DetectionRecord {
                    frame_index: frame,
                    vehicle_type: t.into(),
                    vehicle_make: m.into(),
                    probability: p,
                    bbox_id: bbox,
                };
                seen.insert((frame, r.identity(), bbox)).then_some(r)
            })
            .collect()
    })
}

/// GOP sizes with a profile whose low SNR stays below every GOP's
/// important SNR, as the orchestrator expects when savings are reported.
pub fn arb_power_fixture() -> impl Strategy<Value = (Vec<(usize, u64)>, Vec<f64>, SnrProfile)> {
    (
        prop::collection::vec(1_000u64..2_000_000, 1..20),
        1e-7f64..1e-3,
        0.0f64..1.0,
        prop::option::of(1.0f64..4.0),
        prop::collection::vec(0.1f64..2.0, 20),
    )
        .prop_map(|(bytes, alpha, low_frac, cap_mult, durations)| {
            let min_snr = alpha * *bytes.iter().min().unwrap() as f64;
            let snr_low = low_frac * min_snr;
            let cap = cap_mult.map(|m| min_snr * m);
            let gops: Vec<(usize, u64)> = bytes.into_iter().enumerate().collect();
            let durations = durations[..gops.len()].to_vec();
            (
                gops,
                durations,
                SnrProfile::new(alpha, snr_low, cap).unwrap(),
            )
        })
}

pub fn importance_from_subset(
    threshold: f64,
    gop_count: usize,
    important: &[usize],
) -> GopImportance {
    GopImportance {
        threshold,
        important: (0..gop_count).map(|g| important.contains(&g)).collect(),
    }
}

/// Gaussian tail Q(x) for x >= 0 by adaptive Gauss-Kronrod quadrature of
/// Q(x) = phi(x) * integral_0^inf exp(-x u - u^2 / 2) du, independent of erfc.
pub fn q_oracle(x: f64) -> f64 {
    assert!(x >= 0.0);
    let phi = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let f = |u: f64| (-x * u - 0.5 * u * u).exp();
    // integrand < 1e-300 beyond u = 40 for every x >= 0
    let (rough, _) = gk15(&f, 0.0, 40.0);
    phi * adaptive_gk(&f, 0.0, 40.0, 1e-15 * rough, 40)
}

const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const GK_WK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const GK_WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * GK_WK[7];
    let mut gauss = fc * GK_WG[3];
    for (j, &x) in GK_NODES[..7].iter().enumerate() {
        let s = f(c - h * x) + f(c + h * x);
        kronrod += GK_WK[j] * s;
        if j % 2 == 1 {
            gauss += GK_WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adaptive_gk(f: &dyn Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64, depth: u32) -> f64 {
    let (whole, err) = gk15(f, a, b);
    if depth == 0 || err <= abs_tol.max(50.0 * f64::EPSILON * whole.abs()) {
        return whole;
    }
    let m = 0.5 * (a + b);
    adaptive_gk(f, a, m, 0.5 * abs_tol, depth - 1) + adaptive_gk(f, m, b, 0.5 * abs_tol, depth - 1)
}
