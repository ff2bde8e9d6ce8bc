//! Mosaic canvas layout and inverse-mapped resampling.

use rayon::prelude::*;

use super::cpw::MeshWarp;
use super::homography::Homography;
use crate::error::{Error, Result};
use crate::model::{Point, Raster};

/// Canvases larger than this many pixels are treated as a runaway warp.
pub const MAX_CANVAS_PIXELS: usize = 1 << 26;

/// The mosaic frame: its size and the integer offset of the reference image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    /// Reference pixel `(x, y)` lands on canvas pixel `(x + ox, y + oy)`.
    pub offset: (i64, i64),
}

impl Canvas {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Reference frame → canvas.
    pub fn reference_transform(&self) -> Homography {
        Homography::translation(self.offset.0 as f64, self.offset.1 as f64)
    }

    /// Bounding box of the reference frame and every candidate frame mapped
    /// through its `candidate → reference` homography, shifted so the origin
    /// is non-negative. The origin is floored so the reference offset stays integral.
    pub fn enclosing(
        ref_dims: (usize, usize),
        candidates: &[(Homography, (usize, usize))],
    ) -> Result<Self> {
        let mut pts: Vec<Point> = Homography::frame_corners(ref_dims).to_vec();
        for (h, dims) in candidates {
            for c in Homography::frame_corners(*dims) {
                pts.push(h.apply(c).ok_or_else(|| {
                    Error::DegenerateWarp("candidate corner maps to infinity".into())
                })?);
            }
        }
        let min_x = pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).floor();
        let min_y = pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).floor();
        let max_x = pts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).ceil();
        let max_y = pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).ceil();
        let (w, h) = (max_x - min_x, max_y - min_y);
        if !(w.is_finite() && h.is_finite()) || w * h > MAX_CANVAS_PIXELS as f64 {
            return Err(Error::DegenerateWarp(format!("canvas {w}x{h} is too large")));
        }
        Ok(Self {
            width: w as usize,
            height: h as usize,
            offset: (-min_x as i64, -min_y as i64),
        })
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Inverts `s ↦ h(s) + D(s)` at canvas point `c` by fixed-point iteration.
fn invert_mesh(h_inv: &Homography, mesh: &MeshWarp, c: Point) -> Option<Point> {
    let mut s = h_inv.apply(c)?;
    for _ in 0..50 {
        let next = h_inv.apply(c - mesh.displacement_at(s))?;
        let step = next.dist(s);
        s = next;
        if step < 1e-7 {
            return Some(s);
        }
    }
    None
}

/// Resamples `src` into a `canvas`-sized raster. `h` maps source → canvas;
/// `mesh`, when given, adds its displacement field on top of `h`. Each canvas
/// pixel center is mapped back into the source and sampled bilinearly; it is
/// valid only if all four taps are valid source pixels.
pub fn warp_image(
    src: &Raster,
    h: &Homography,
    mesh: Option<&MeshWarp>,
    canvas: (usize, usize),
) -> Result<Raster> {
    let h_inv = h.inverse()?;
    let (w, hh) = canvas;
    let ch = src.channels();
    let rows: Vec<(Vec<f32>, Vec<bool>)> = (0..hh)
        .into_par_iter()
        .map(|y| {
            let mut data = vec![0f32; w * ch];
            let mut mask = vec![false; w];
            let mut px = [0f32; 3];
            for x in 0..w {
                let c = Point::new(x as f64 + 0.5, y as f64 + 0.5);
                let s = match mesh {
                    Some(m) => invert_mesh(&h_inv, m, c),
                    None => h_inv.apply(c),
                };
                let Some(s) = s else { continue };
                if src.sample_bilinear(snap(s.x - 0.5), snap(s.y - 0.5), &mut px) {
                    mask[x] = true;
                    data[x * ch..(x + 1) * ch].copy_from_slice(&px[..ch]);
                }
            }
            (data, mask)
        })
        .collect();
    let mut data = Vec::with_capacity(w * hh * ch);
    let mut mask = Vec::with_capacity(w * hh);
    for (d, m) in rows {
        data.extend(d);
        mask.extend(m);
    }
    Raster::new(w, hh, ch, data, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize) -> Raster {
        Raster::from_fn(w, h, 1, |x, y, _| (x * 10 + y * 3) as f32).unwrap()
    }

    #[test]
    fn identity_is_bit_exact() {
        let src = pattern(7, 5);
        let out = warp_image(&src, &Homography::identity(), None, (7, 5)).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn integer_translation() {
        let src = pattern(8, 9);
        let out = warp_image(&src, &Homography::translation(3.0, 5.0), None, (8, 9)).unwrap();
        for y in 0..9 {
            for x in 0..8 {
                if x < 3 || y < 5 {
                    assert!(!out.is_valid(x, y));
                } else {
                    assert!(out.is_valid(x, y));
                    assert_eq!(out.get(x, y, 0), src.get(x - 3, y - 5, 0));
                }
            }
        }
    }

    #[test]
    fn quarter_turn_of_3x3() {
        let vals = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let src = Raster::new(3, 3, 1, vals.to_vec(), vec![true; 9]).unwrap();
        // (x, y) -> (3 - y, x): the top row becomes the right column
        let h = Homography::from_rows([[0.0, -1.0, 3.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let out = warp_image(&src, &h, None, (3, 3)).unwrap();
        let expect = [7.0, 4.0, 1.0, 8.0, 5.0, 2.0, 9.0, 6.0, 3.0];
        assert_eq!(out.data(), &expect);
        assert!(out.mask().iter().all(|&m| m));
    }

    #[test]
    fn round_trip_on_smooth_image() {
        let src = Raster::from_fn(60, 50, 1, |x, y, _| {
            (128.0 + 60.0 * ((x as f64) * 0.15).sin() * ((y as f64) * 0.11).cos()) as f32
        })
        .unwrap();
        let t = Homography::similarity(1.0, 0.07, 2.3, -1.7).unwrap();
        let there = warp_image(&src, &t, None, (60, 50)).unwrap();
        let back = warp_image(&there, &t.inverse().unwrap(), None, (60, 50)).unwrap();
        let (mut err, mut n) = (0.0f64, 0usize);
        for i in 0..60 * 50 {
            if back.mask()[i] {
                err += (back.data()[i] - src.data()[i]).abs() as f64;
                n += 1;
            }
        }
        assert!(n > 1000);
        assert!(err / (n as f64) < 2.0);
    }

    #[test]
    fn canvas_encloses_translated_candidate() {
        let c = Canvas::enclosing((100, 80), &[(Homography::translation(-30.5, 10.0), (100, 80))]).unwrap();
        assert_eq!(c.offset, (31, 0));
        assert_eq!((c.width, c.height), (131, 90));
    }

    #[test]
    fn singular_warp_rejected() {
        assert!(Homography::from_rows([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
    }
}
