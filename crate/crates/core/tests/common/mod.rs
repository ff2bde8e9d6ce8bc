//! Shared fixtures: the MS-SSIM image pairs whose reference values were
//! produced by TensorFlow's `ssim_multiscale` (see
//! `data/ms_ssim_reference.py`, which builds the same pairs).
#![allow(dead_code)]

use objstitch::model::Raster;

const M: u64 = 0xFFFF_FFFF;

pub fn hash_px(x: u64, y: u64, c: u64, seed: u64) -> u64 {
    let mut h = ((x * 73856093) ^ (y * 19349663) ^ (c * 25165843) ^ (seed * 83492791)) & M;
    h ^= h >> 13;
    h = (h * 0x5BD1E995) & M;
    h ^= h >> 15;
    h
}

pub fn clamp(v: i64) -> i64 {
    v.clamp(0, 255)
}

type Formula = fn(u64, u64, u64) -> i64;

fn checker(x: u64, y: u64) -> i64 {
    if ((x / 8) + (y / 8)) % 2 == 1 {
        200
    } else {
        50
    }
}

fn color_base(x: u64, y: u64, c: u64) -> i64 {
    ((x * (c + 1) + 3 * y + hash_px(x, y, c, 3) % 16) % 256) as i64
}

fn pairs() -> Vec<(&'static str, usize, usize, usize, Formula, Formula)> {
    vec![
        (
            "gradient_noise",
            192,
            192,
            1,
            |x, y, _| ((2 * x + y) % 256) as i64,
            |x, y, c| clamp(((2 * x + y) % 256) as i64 + (hash_px(x, y, c, 1) % 41) as i64 - 20),
        ),
        (
            "texture_shift",
            200,
            224,
            1,
            |x, y, c| (hash_px(x / 3, y / 3, c, 2) % 256) as i64,
            |x, y, c| (hash_px((x + 1) / 3, y / 3, c, 2) % 256) as i64,
        ),
        ("color_gain", 208, 192, 3, color_base, |x, y, c| {
            4 * color_base(x, y, c) / 5 + 10
        }),
        ("checker_noise", 256, 192, 1, |x, y, _| checker(x, y), |x, y, c| {
            clamp(checker(x, y) + (hash_px(x, y, c, 4) % 61) as i64 - 30)
        }),
        (
            "independent",
            196,
            196,
            3,
            |x, y, c| (hash_px(x / 2, y / 2, c, 5) % 256) as i64,
            |x, y, c| (hash_px(x / 2, y / 2, c, 6) % 256) as i64,
        ),
    ]
}

fn raster(w: usize, h: usize, ch: usize, f: Formula) -> Raster {
    Raster::from_fn(w, h, ch, |x, y, c| f(x as u64, y as u64, c as u64) as f32).unwrap()
}

/// `(name, a, b, reference value)` for every stored pair.
pub fn reference_pairs() -> Vec<(&'static str, Raster, Raster, f64)> {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/ms_ssim_reference.json")).unwrap();
    let refs: Vec<serde_json::Value> = serde_json::from_str(&text).unwrap();
    pairs()
        .into_iter()
        .zip(&refs)
        .map(|((name, w, h, ch, fa, fb), r)| {
            assert_eq!(r["name"], name);
            (name, raster(w, h, ch, fa), raster(w, h, ch, fb), r["value"].as_f64().unwrap())
        })
        .collect()
}
