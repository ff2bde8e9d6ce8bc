//! Compositing, gradient-domain seam blending, and occlusion rendering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Label, LabelField, Raster};

pub const MAGENTA: [f32; 3] = [255.0, 0.0, 255.0];

/// How occluded pixels appear in the final mosaic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionMode {
    #[default]
    Mark,
    Crop,
    Fill,
}

impl std::str::FromStr for OcclusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mark" => Ok(Self::Mark),
            "crop" => Ok(Self::Crop),
            "fill" => Ok(Self::Fill),
            other => Err(Error::Config(format!("unknown occlusion mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlendConfig {
    /// Half-width of the solved band around seams; `None` solves the whole canvas.
    pub band: Option<usize>,
    /// Relative residual target of the linear solve.
    pub tolerance: f64,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            band: Some(16),
            tolerance: 1e-6,
        }
    }
}

/// The direct per-label copy of the sources.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub mosaic: Raster,
    /// Pixels with a 4-neighbour carrying a different non-occluded label.
    pub seams: Vec<bool>,
    pub occluded: Vec<bool>,
}

fn neighbours(w: usize, h: usize, i: usize) -> impl Iterator<Item = usize> {
    let (x, y) = (i % w, i / w);
    [
        (x > 0).then(|| i - 1),
        (x + 1 < w).then(|| i + 1),
        (y > 0).then(|| i - w),
        (y + 1 < h).then(|| i + w),
    ]
    .into_iter()
    .flatten()
}

/// Copies each pixel from the source its label names. Occluded pixels are
/// left empty (mask 0); out-of-mask selections keep the source's mask.
pub fn composite(labeling: &LabelField, sources: &[Raster]) -> Result<Composite> {
    let first = sources
        .first()
        .ok_or_else(|| Error::InvalidParams("no sources to composite".into()))?;
    let (w, h) = first.dims();
    if (labeling.width(), labeling.height()) != (w, h) {
        return Err(Error::DimensionMismatch("labeling vs sources".into()));
    }
    let ch = first.channels();
    let n = w * h;
    let mut data = vec![0f32; n * ch];
    let mut mask = vec![false; n];
    let mut occluded = vec![false; n];
    for i in 0..n {
        match labeling.at(i) {
            Label::Occluded => occluded[i] = true,
            Label::Source(s) => {
                let src = sources
                    .get(s as usize)
                    .ok_or_else(|| Error::InvalidParams(format!("label {} has no source", s + 1)))?;
                data[i * ch..(i + 1) * ch].copy_from_slice(src.pixel(i));
                mask[i] = src.mask()[i];
            }
        }
    }
    let seams = (0..n)
        .map(|i| {
            let l = labeling.at(i);
            !l.is_occluded()
                && neighbours(w, h, i).any(|j| {
                    let m = labeling.at(j);
                    !m.is_occluded() && m != l
                })
        })
        .collect();
    Ok(Composite {
        mosaic: Raster::new(w, h, ch, data, mask)?,
        seams,
        occluded,
    })
}

/// Outcome of a linear solve.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SolveStats {
    pub unknowns: usize,
    /// Largest iteration count over channels.
    pub iterations: usize,
    /// Largest final `‖r‖ / ‖b‖` over channels.
    pub relative_residual: f64,
}

/// A 5-point Laplacian over a set of unknown pixels. Edges into pixels
/// that are neither unknown nor usable are dropped.
struct Laplacian {
    /// Unknown index per pixel, `usize::MAX` otherwise.
    slot: Vec<usize>,
    pixels: Vec<usize>,
    /// Usable neighbours (unknown or fixed) of each unknown pixel.
    nbrs: Vec<Vec<usize>>,
}

impl Laplacian {
    fn new(w: usize, h: usize, unknown: &[bool], usable: &[bool]) -> Self {
        let mut slot = vec![usize::MAX; w * h];
        let mut pixels = Vec::new();
        for (i, &u) in unknown.iter().enumerate() {
            if u {
                slot[i] = pixels.len();
                pixels.push(i);
            }
        }
        let nbrs = pixels
            .iter()
            .map(|&i| neighbours(w, h, i).filter(|&j| unknown[j] || usable[j]).collect())
            .collect();
        Self {
            slot,
            pixels,
            nbrs,
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (k, nb) in self.nbrs.iter().enumerate() {
            let mut v = nb.len() as f64 * x[k];
            for &j in nb {
                let s = self.slot[j];
                if s != usize::MAX {
                    v -= x[s];
                }
            }
            out[k] = v;
        }
    }

    /// Jacobi-preconditioned conjugate gradients from `x`.
    fn solve(&self, b: &[f64], x: &mut [f64], tol: f64) -> Result<(usize, f64)> {
        let n = self.pixels.len();
        if n == 0 {
            return Ok((0, 0.0));
        }
        let diag: Vec<f64> = self.nbrs.iter().map(|nb| (nb.len() as f64).max(1.0)).collect();
        let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let target = tol * bnorm;
        let mut ax = vec![0.0; n];
        self.apply(x, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let mut rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = |rn: f64| if bnorm > 0.0 { rn / bnorm } else { rn };
        if rnorm <= target || rnorm == 0.0 {
            return Ok((0, rel(rnorm)));
        }
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let cap = 10 * n;
        let mut ap = vec![0.0; n];
        for it in 1..=cap {
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for k in 0..n {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rnorm <= target {
                return Ok((it, rel(rnorm)));
            }
            for k in 0..n {
                z[k] = r[k] / diag[k];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for k in 0..n {
                p[k] = z[k] + beta * p[k];
            }
        }
        // recompute the true residual before giving up
        self.apply(x, &mut ax);
        let true_r = b.iter().zip(&ax).map(|(b, a)| (b - a).powi(2)).sum::<f64>().sqrt();
        if true_r <= target {
            return Ok((cap, rel(true_r)));
        }
        Err(Error::NoConvergence {
            residual: rel(true_r),
            iterations: cap,
        })
    }

    /// Marks, in every connected set of unknowns that touches no fixed
    /// pixel, its first pixel as fixed. Returns the pixels promoted.
    fn pin_floating(w: usize, h: usize, unknown: &mut [bool], usable: &[bool]) -> Vec<usize> {
        let mut seen = vec![false; w * h];
        let mut pinned = Vec::new();
        for start in 0..w * h {
            if !unknown[start] || seen[start] {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut anchored = false;
            while let Some(i) = stack.pop() {
                for j in neighbours(w, h, i) {
                    if unknown[j] {
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    } else if usable[j] {
                        anchored = true;
                    }
                }
            }
            if !anchored {
                unknown[start] = false;
                pinned.push(start);
            }
        }
        pinned
    }
}

/// Square dilation of `bits` by `radius`.
fn dilate(bits: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    let mut rows = vec![false; w * h];
    for y in 0..h {
        let mut last: Option<usize> = None;
        // distance to nearest set pixel along the row, both directions
        let mut left = vec![usize::MAX; w];
        for x in 0..w {
            if bits[y * w + x] {
                last = Some(x);
            }
            if let Some(l) = last {
                left[x] = x - l;
            }
        }
        last = None;
        for x in (0..w).rev() {
            if bits[y * w + x] {
                last = Some(x);
            }
            let right = last.map_or(usize::MAX, |l| l - x);
            rows[y * w + x] = left[x].min(right) <= radius;
        }
    }
    let mut out = vec![false; w * h];
    for x in 0..w {
        let mut up = vec![usize::MAX; h];
        let mut last: Option<usize> = None;
        for y in 0..h {
            if rows[y * w + x] {
                last = Some(y);
            }
            if let Some(l) = last {
                up[y] = y - l;
            }
        }
        last = None;
        for y in (0..h).rev() {
            if rows[y * w + x] {
                last = Some(y);
            }
            let down = last.map_or(usize::MAX, |l| l - y);
            out[y * w + x] = up[y].min(down) <= radius;
        }
    }
    out
}

/// Gradient-domain blend. Unknowns are the non-occluded pixels within the
/// band around seams (or, without a band, every non-occluded pixel except
/// non-seam pixels of the first source); all other non-occluded pixels are
/// fixed at their composite value. Guidance along an edge comes from the
/// shared label's source, or is the mean over the two labels' sources
/// that are valid at both ends.
pub fn poisson_blend(
    comp: &Composite,
    labeling: &LabelField,
    sources: &[Raster],
    cfg: &BlendConfig,
) -> Result<(Raster, SolveStats)> {
    let (w, h) = comp.mosaic.dims();
    let n = w * h;
    let ch = comp.mosaic.channels();
    let usable: Vec<bool> = comp.occluded.iter().map(|o| !o).collect();
    let mut unknown: Vec<bool> = match cfg.band {
        Some(b) => {
            let near = dilate(&comp.seams, w, h, b);
            (0..n).map(|i| near[i] && usable[i]).collect()
        }
        None => (0..n)
            .map(|i| usable[i] && (comp.seams[i] || labeling.at(i) != Label::Source(0)))
            .collect(),
    };
    Laplacian::pin_floating(w, h, &mut unknown, &usable);
    let fixed: Vec<bool> = (0..n).map(|i| usable[i] && !unknown[i]).collect();
    let lap = Laplacian::new(w, h, &unknown, &fixed);

    let grad = |s: usize, i: usize, j: usize, c: usize| -> Option<f64> {
        let src = &sources[s];
        (src.mask()[i] && src.mask()[j])
            .then(|| src.pixel(i)[c] as f64 - src.pixel(j)[c] as f64)
    };

    let mut out = comp.mosaic.clone();
    let mut stats = SolveStats {
        unknowns: lap.pixels.len(),
        ..Default::default()
    };
    for c in 0..ch {
        let mut b = vec![0.0; lap.pixels.len()];
        let mut x: Vec<f64> = lap
            .pixels
            .iter()
            .map(|&i| comp.mosaic.pixel(i)[c] as f64)
            .collect();
        for (k, &i) in lap.pixels.iter().enumerate() {
            let li = labeling.at(i);
            for &j in &lap.nbrs[k] {
                let lj = labeling.at(j);
                let (a, bsrc) = (li.source().unwrap(), lj.source().unwrap());
                let g = if a == bsrc {
                    grad(a, i, j, c).unwrap_or(0.0)
                } else {
                    let gs: Vec<f64> = [a, bsrc].iter().filter_map(|&s| grad(s, i, j, c)).collect();
                    if gs.is_empty() {
                        0.0
                    } else {
                        gs.iter().sum::<f64>() / gs.len() as f64
                    }
                };
                b[k] += g;
                if lap.slot[j] == usize::MAX {
                    b[k] += comp.mosaic.pixel(j)[c] as f64;
                }
            }
        }
        let (it, rel) = lap.solve(&b, &mut x, cfg.tolerance)?;
        stats.iterations = stats.iterations.max(it);
        stats.relative_residual = stats.relative_residual.max(rel);
        for (k, &i) in lap.pixels.iter().enumerate() {
            out.pixel_mut(i)[c] = x[k].clamp(0.0, 255.0) as f32;
        }
    }
    Ok((out, stats))
}

/// Largest axis-aligned rectangle of `true` cells, as `(x, y, w, h)`.
/// Ties keep the first rectangle found scanning rows top to bottom.
pub fn max_rectangle(ok: &[bool], w: usize, h: usize) -> Option<(usize, usize, usize, usize)> {
    let mut heights = vec![0usize; w];
    let mut best: Option<(usize, usize, usize, usize)> = None;
    let mut best_area = 0;
    for y in 0..h {
        for x in 0..w {
            heights[x] = if ok[y * w + x] { heights[x] + 1 } else { 0 };
        }
        // largest rectangle in the histogram with a monotone stack
        let mut stack: Vec<usize> = Vec::new();
        for x in 0..=w {
            let cur = if x < w { heights[x] } else { 0 };
            while let Some(&top) = stack.last() {
                if heights[top] <= cur {
                    break;
                }
                stack.pop();
                let height = heights[top];
                let left = stack.last().map_or(0, |&s| s + 1);
                let area = height * (x - left);
                if area > best_area {
                    best_area = area;
                    best = Some((left, y + 1 - height, x - left, height));
                }
            }
            stack.push(x);
        }
    }
    best
}

/// Applies the occlusion policy. With no occluded pixel the input is
/// returned unchanged in every mode.
pub fn render_occlusion(blended: &Raster, labeling: &LabelField, mode: OcclusionMode) -> Result<Raster> {
    let (w, h) = blended.dims();
    let occ: Vec<bool> = labeling.labels().iter().map(|l| l.is_occluded()).collect();
    if !occ.iter().any(|&o| o) {
        return Ok(blended.clone());
    }
    match mode {
        OcclusionMode::Mark => {
            let mut out = blended.to_rgb();
            for (i, _) in occ.iter().enumerate().filter(|(_, &o)| o) {
                out.pixel_mut(i).copy_from_slice(&MAGENTA);
                out.mask_mut()[i] = true;
            }
            Ok(out)
        }
        OcclusionMode::Crop => {
            let ok: Vec<bool> = (0..w * h).map(|i| !occ[i] && blended.mask()[i]).collect();
            let (x, y, cw, chh) = max_rectangle(&ok, w, h).ok_or(Error::NoCropRectangle)?;
            blended.crop(x, y, cw, chh)
        }
        OcclusionMode::Fill => {
            let usable: Vec<bool> = (0..w * h).map(|i| !occ[i] && blended.mask()[i]).collect();
            let mut unknown = occ.clone();
            let floating = Laplacian::pin_floating(w, h, &mut unknown, &usable);
            let lap = Laplacian::new(w, h, &unknown, &usable);
            let mut out = blended.clone();
            for c in 0..blended.channels() {
                let mut b = vec![0.0; lap.pixels.len()];
                for (k, nb) in lap.nbrs.iter().enumerate() {
                    for &j in nb {
                        if lap.slot[j] == usize::MAX {
                            b[k] += blended.pixel(j)[c] as f64;
                        }
                    }
                }
                let mut x = vec![0.0; lap.pixels.len()];
                lap.solve(&b, &mut x, 1e-6)?;
                for (k, &i) in lap.pixels.iter().enumerate() {
                    out.pixel_mut(i)[c] = x[k].clamp(0.0, 255.0) as f32;
                }
            }
            for &i in &lap.pixels {
                out.mask_mut()[i] = true;
            }
            // occluded regions with no valid border stay empty
            for i in floating {
                out.mask_mut()[i] = false;
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(w: usize, h: usize, v: f32) -> Raster {
        Raster::filled(w, h, 1, v).unwrap()
    }

    fn split(w: usize, h: usize, at: usize) -> LabelField {
        let mut f = LabelField::uniform(w, h, Label::Source(0));
        for y in 0..h {
            for x in at..w {
                f.set(x, y, Label::Source(1));
            }
        }
        f
    }

    #[test]
    fn uniform_label_copies_source() {
        let a = Raster::from_fn(4, 3, 3, |x, y, c| (x + 10 * y + c) as f32).unwrap();
        let b = constant(4, 3, 0.0).to_rgb();
        let c = composite(&LabelField::uniform(4, 3, Label::Source(0)), &[a.clone(), b]).unwrap();
        assert_eq!(c.mosaic, a);
        assert!(c.seams.iter().all(|s| !s));
    }

    #[test]
    fn split_and_checkerboard_seams() {
        let srcs = [constant(6, 2, 1.0), constant(6, 2, 2.0)];
        let c = composite(&split(6, 2, 3), &srcs).unwrap();
        for y in 0..2 {
            for x in 0..6 {
                assert_eq!(c.seams[y * 6 + x], x == 2 || x == 3);
                assert_eq!(c.mosaic.get(x, y, 0), if x < 3 { 1.0 } else { 2.0 });
            }
        }
        let mut f = LabelField::uniform(4, 4, Label::Source(0));
        for y in 0..4 {
            for x in 0..4 {
                if (x + y) % 2 == 1 {
                    f.set(x, y, Label::Source(1));
                }
            }
        }
        let srcs = [constant(4, 4, 1.0), constant(4, 4, 2.0)];
        assert!(composite(&f, &srcs).unwrap().seams.iter().all(|&s| s));
    }

    #[test]
    fn identical_sources_blend_to_themselves() {
        let a = Raster::from_fn(40, 30, 1, |x, y, _| ((x * 7 + y * 13) % 200) as f32).unwrap();
        let f = split(40, 30, 17);
        let srcs = [a.clone(), a.clone()];
        let c = composite(&f, &srcs).unwrap();
        let (out, _) = poisson_blend(&c, &f, &srcs, &BlendConfig::default()).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn two_constants_ramp_linearly() {
        let (w, h, at) = (60, 4, 30);
        let srcs = [constant(w, h, 10.0), constant(w, h, 30.0)];
        let f = split(w, h, at);
        let c = composite(&f, &srcs).unwrap();
        let (out, stats) = poisson_blend(&c, &f, &srcs, &BlendConfig::default()).unwrap();
        assert!(stats.relative_residual < 1e-6);
        // unknown columns: seam columns 29, 30 dilated by 16 -> 13..=46;
        // fixed anchors at 12 (10) and 47 (30): a straight line between them
        for y in 0..h {
            for x in 0..w {
                let expect = if x <= 12 {
                    10.0
                } else if x >= 47 {
                    30.0
                } else {
                    10.0 + 20.0 * (x as f64 - 12.0) / 35.0
                };
                assert!((out.get(x, y, 0) as f64 - expect).abs() < 1e-3, "x={x}");
            }
        }
    }

    #[test]
    fn anchors_are_preserved() {
        let a = Raster::from_fn(50, 10, 1, |x, _, _| x as f32).unwrap();
        let b = Raster::from_fn(50, 10, 1, |x, _, _| 100.0 - x as f32).unwrap();
        let f = split(50, 10, 25);
        let srcs = [a, b];
        let c = composite(&f, &srcs).unwrap();
        let (out, _) = poisson_blend(&c, &f, &srcs, &BlendConfig::default()).unwrap();
        for y in 0..10 {
            for x in (0..5).chain(45..50) {
                assert_eq!(out.get(x, y, 0), c.mosaic.get(x, y, 0));
            }
        }
    }

    #[test]
    fn max_rectangle_against_exhaustive() {
        let (w, h) = (7, 6);
        let ok: Vec<bool> = (0..w * h).map(|i| !(i % 5 == 0 || i % 11 == 3)).collect();
        let got = max_rectangle(&ok, w, h).unwrap();
        let mut best = 0;
        for y0 in 0..h {
            for x0 in 0..w {
                for y1 in y0 + 1..=h {
                    for x1 in x0 + 1..=w {
                        let all = (y0..y1).all(|y| (x0..x1).all(|x| ok[y * w + x]));
                        if all {
                            best = best.max((x1 - x0) * (y1 - y0));
                        }
                    }
                }
            }
        }
        assert_eq!(got.2 * got.3, best);
        assert!((got.1..got.1 + got.3).all(|y| (got.0..got.0 + got.2).all(|x| ok[y * w + x])));
    }

    #[test]
    fn occlusion_modes() {
        let img = Raster::from_fn(9, 9, 1, |x, y, _| (x + y) as f32 * 5.0).unwrap();
        let clean = LabelField::uniform(9, 9, Label::Source(0));
        for m in [OcclusionMode::Mark, OcclusionMode::Crop, OcclusionMode::Fill] {
            assert_eq!(render_occlusion(&img, &clean, m).unwrap(), img);
        }
        let mut one = clean.clone();
        one.set(4, 4, Label::Occluded);
        let marked = render_occlusion(&img, &one, OcclusionMode::Mark).unwrap();
        let magenta = (0..81).filter(|&i| marked.pixel(i) == MAGENTA).count();
        assert_eq!(magenta, 1);
        let filled = render_occlusion(&img, &one, OcclusionMode::Fill).unwrap();
        // the linear ramp is harmonic, so inpainting restores it
        assert!((filled.get(4, 4, 0) - 40.0).abs() < 1e-3);
        let cropped = render_occlusion(&img, &one, OcclusionMode::Crop).unwrap();
        assert_eq!(cropped.width() * cropped.height(), 36);
    }
}
