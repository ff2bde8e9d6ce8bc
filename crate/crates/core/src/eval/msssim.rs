//! Multi-scale structural similarity.
//!
//! Follows the widely used TensorFlow formulation: valid-mode Gaussian
//! statistics, symmetric one-pixel padding before each 2×2 average pool,
//! contrast-structure terms at every scale but the last, full SSIM at the
//! last, negative terms clipped to zero, and a mean over channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Raster;

pub const DEFAULT_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsSsimConfig {
    pub scales: usize,
    /// One exponent per scale, finest first.
    pub weights: Vec<f64>,
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of pixel values.
    pub max_value: f64,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        Self {
            scales: 5,
            weights: DEFAULT_WEIGHTS.to_vec(),
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            max_value: 255.0,
        }
    }
}

impl MsSsimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.weights.len() != self.scales {
            return Err(Error::Config(format!(
                "ms-ssim needs one weight per scale ({} scales, {} weights)",
                self.scales,
                self.weights.len()
            )));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-3 || self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config(format!("ms-ssim weights must sum to 1, got {sum}")));
        }
        if self.window == 0 || !(self.sigma > 0.0) || !(self.max_value > 0.0) {
            return Err(Error::Config("ms-ssim window, sigma and range must be positive".into()));
        }
        Ok(())
    }

    /// Smallest side length accepted with `scales` scales.
    pub fn min_side(&self) -> usize {
        (self.window - 1) * (1 << (self.scales - 1)) + 1
    }

    /// The same metric on the first `k` scales, weights renormalized.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.clamp(1, self.scales);
        let sum: f64 = self.weights[..k].iter().sum();
        Self {
            scales: k,
            weights: self.weights[..k].iter().map(|w| w / sum).collect(),
            ..self.clone()
        }
    }

    /// Most scales (up to `scales`) that fit a `w × h` image.
    pub fn fitting(&self, w: usize, h: usize) -> Option<Self> {
        (1..=self.scales)
            .rev()
            .map(|k| self.truncated(k))
            .find(|c| w.min(h) >= c.min_side())
    }
}

/// Single-channel f64 plane.
#[derive(Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn map2(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// Valid-mode separable filter.
    fn filter(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let ow = self.w + 1 - n;
        let oh = self.h + 1 - n;
        let mut rows = vec![0.0; ow * self.h];
        for y in 0..self.h {
            let row = &self.v[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                rows[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut v = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                v[y * ow + x] = k.iter().enumerate().map(|(i, a)| a * rows[(y + i) * ow + x]).sum();
            }
        }
        Plane { w: ow, h: oh, v }
    }

    /// Pads odd sides by repeating the last row/column, then 2×2 mean.
    fn downsample(&self) -> Plane {
        let w = self.w.div_ceil(2);
        let h = self.h.div_ceil(2);
        let at = |x: usize, y: usize| self.v[y.min(self.h - 1) * self.w + x.min(self.w - 1)];
        let mut v = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (x2, y2) = (2 * x, 2 * y);
                v[y * w + x] = (at(x2, y2) + at(x2 + 1, y2) + at(x2, y2 + 1) + at(x2 + 1, y2 + 1)) / 4.0;
            }
        }
        Plane { w, h, v }
    }
}

fn gaussian(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM and mean contrast-structure of one scale.
fn ssim_terms(x: &Plane, y: &Plane, k: &[f64], cfg: &MsSsimConfig) -> (f64, f64) {
    let c1 = (cfg.k1 * cfg.max_value).powi(2);
    let c2 = (cfg.k2 * cfg.max_value).powi(2);
    let mx = x.filter(k);
    let my = y.filter(k);
    let mxy = x.map2(y, |a, b| a * b).filter(k);
    let msq = x.map2(y, |a, b| a * a + b * b).filter(k);
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.v.len() {
        let num0 = 2.0 * mx.v[i] * my.v[i];
        let den0 = mx.v[i] * mx.v[i] + my.v[i] * my.v[i];
        let lum = (num0 + c1) / (den0 + c1);
        let c = (2.0 * mxy.v[i] - num0 + c2) / (msq.v[i] - den0 + c2);
        ssim += lum * c;
        cs += c;
    }
    let n = mx.v.len() as f64;
    (ssim / n, cs / n)
}

/// MS-SSIM of two equally sized rasters, averaged over channels.
/// Symmetric in its arguments; masks are ignored.
pub fn ms_ssim(a: &Raster, b: &Raster, cfg: &MsSsimConfig) -> Result<f64> {
    cfg.validate()?;
    if a.dims() != b.dims() || a.channels() != b.channels() {
        return Err(Error::DimensionMismatch(format!(
            "ms-ssim inputs {:?}x{} vs {:?}x{}",
            a.dims(),
            a.channels(),
            b.dims(),
            b.channels()
        )));
    }
    let (w, h) = a.dims();
    let min = cfg.min_side();
    if w.min(h) < min {
        return Err(Error::TooSmallForScales {
            scales: cfg.scales,
            min,
            got: w.min(h),
        });
    }
    let k = gaussian(cfg.window, cfg.sigma);
    let ch = a.channels();
    let plane = |r: &Raster, c: usize| Plane {
        w,
        h,
        v: r.data().iter().skip(c).step_by(ch).map(|&v| v as f64).collect(),
    };
    let mut total = 0.0;
    for c in 0..ch {
        let (mut x, mut y) = (plane(a, c), plane(b, c));
        let mut score = 1.0;
        for s in 0..cfg.scales {
            if s > 0 {
                x = x.downsample();
                y = y.downsample();
            }
            let (ssim, cs) = ssim_terms(&x, &y, &k, cfg);
            let term = if s + 1 == cfg.scales { ssim } else { cs };
            score *= term.max(0.0).powf(cfg.weights[s]);
        }
        total += score;
    }
    Ok(total / ch as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize, seed: u32) -> Raster {
        Raster::from_fn(w, h, 1, |x, y, _| {
            let v = (x as u32).wrapping_mul(2654435761) ^ (y as u32).wrapping_mul(40503) ^ seed;
            ((v >> 7) % 256) as f32
        })
        .unwrap()
    }

    #[test]
    fn self_score_is_one() {
        let a = textured(180, 170, 1);
        let s = ms_ssim(&a, &a, &MsSsimConfig::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "{s}");
    }

    #[test]
    fn symmetric() {
        let a = textured(176, 176, 1);
        let b = textured(176, 176, 2);
        let cfg = MsSsimConfig::default();
        assert_eq!(ms_ssim(&a, &b, &cfg).unwrap(), ms_ssim(&b, &a, &cfg).unwrap());
    }

    #[test]
    fn too_small_reports_minimum() {
        let a = textured(160, 200, 1);
        match ms_ssim(&a, &a, &MsSsimConfig::default()) {
            Err(Error::TooSmallForScales { scales: 5, min: 161, got: 160 }) => {}
            other => panic!("{other:?}"),
        }
        let fit = MsSsimConfig::default().fitting(160, 200).unwrap();
        assert_eq!(fit.scales, 4);
        assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn downsample_repeats_edge_on_odd_sides() {
        let p = Plane {
            w: 3,
            h: 1,
            v: vec![1.0, 3.0, 5.0],
        };
        let d = p.downsample();
        assert_eq!((d.w, d.h), (2, 1));
        assert_eq!(d.v, vec![2.0, 5.0]);
    }
}
