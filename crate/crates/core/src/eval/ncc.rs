//! Normalized cross-correlation template matching.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Raster;

/// Best response of a template over every placement in an image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NccMatch {
    pub score: f64,
    pub x: usize,
    pub y: usize,
}

/// NCC of two equally sized value slices. Zero variance on either side
/// gives 0.
pub fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - ma, y - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    let den = (saa * sbb).sqrt();
    if den <= 1e-9 * n {
        0.0
    } else {
        (sab / den).clamp(-1.0, 1.0)
    }
}

/// Template response per placement, row-major over
/// `(iw - tw + 1) × (ih - th + 1)` placements.
#[derive(Debug, Clone, PartialEq)]
pub struct NccMap {
    pub width: usize,
    pub height: usize,
    pub scores: Vec<f64>,
}

/// NCC of `template` at every placement in `image`. Mismatched channel
/// counts are compared in grayscale.
pub fn ncc_map(template: &Raster, image: &Raster) -> Result<NccMap> {
    let (tw, th) = template.dims();
    let (iw, ih) = image.dims();
    if tw > iw || th > ih || tw == 0 || th == 0 {
        return Err(Error::TemplateTooLarge {
            template: (tw, th),
            image: (iw, ih),
        });
    }
    let (t, im) = if template.channels() == image.channels() {
        (template.clone(), image.clone())
    } else {
        (template.to_gray(), image.to_gray())
    };
    let ch = t.channels();
    let tv: Vec<f64> = t.data().iter().map(|&v| v as f64).collect();
    let iv: Vec<f64> = im.data().iter().map(|&v| v as f64).collect();
    let n = tv.len() as f64;
    let tmean = tv.iter().sum::<f64>() / n;
    let tc: Vec<f64> = tv.iter().map(|v| v - tmean).collect();
    let tss: f64 = tc.iter().map(|v| v * v).sum();
    let row_len = tw * ch;
    let (mw, mh) = (iw - tw + 1, ih - th + 1);

    let scores: Vec<f64> = (0..mh)
        .into_par_iter()
        .flat_map_iter(|y| {
            let (iv, tc) = (&iv, &tc);
            (0..mw).map(move |x| {
                let (mut s, mut ss, mut cross) = (0.0, 0.0, 0.0);
                for ty in 0..th {
                    let start = ((y + ty) * iw + x) * ch;
                    let win = &iv[start..start + row_len];
                    let trow = &tc[ty * row_len..(ty + 1) * row_len];
                    for (w, c) in win.iter().zip(trow) {
                        s += w;
                        ss += w * w;
                        cross += w * c;
                    }
                }
                // Σ (w - mean_w) * tc = Σ w * tc since Σ tc = 0
                let wss = ss - s * s / n;
                let den = (wss.max(0.0) * tss).sqrt();
                if den <= 1e-9 * n {
                    0.0
                } else {
                    (cross / den).clamp(-1.0, 1.0)
                }
            })
        })
        .collect();
    Ok(NccMap {
        width: mw,
        height: mh,
        scores,
    })
}

/// Best placement of `template` in `image`. Ties keep the first placement
/// in row-major order.
pub fn ncc_match(template: &Raster, image: &Raster) -> Result<NccMatch> {
    let map = ncc_map(template, image)?;
    let mut best = 0;
    for (i, &s) in map.scores.iter().enumerate() {
        if s > map.scores[best] {
            best = i;
        }
    }
    Ok(NccMatch {
        score: map.scores[best],
        x: best % map.width,
        y: best / map.width,
    })
}
