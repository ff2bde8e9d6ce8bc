//! Shared raster, label and detection types.
//!
//! Everything here lives in one pixel frame: either a source image frame or
//! the mosaic canvas. Pixel `(x, y)` covers the half-open square
//! `[x, x+1) × [y, y+1)` and its center is `(x + 0.5, y + 0.5)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A continuous 2-D point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    /// The pixel containing this point, if it falls inside a `width × height` grid.
    pub fn pixel(self, width: usize, height: usize) -> Option<(usize, usize)> {
        let (fx, fy) = (self.x.floor(), self.y.floor());
        if fx < 0.0 || fy < 0.0 || fx >= width as f64 || fy >= height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// One image plane (1 or 3 channels) plus a per-pixel validity mask.
///
/// Intensities are stored as `f32` in `[0, 255]` so warped (resampled) images
/// keep their sub-level precision. Values under `mask == false` carry no
/// meaning and are ignored by every consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
    mask: Vec<bool>,
}

impl Raster {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!(
                "empty raster {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidRaster(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidRaster(format!(
                "data length {} != {width}*{height}*{channels}",
                data.len()
            )));
        }
        if mask.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "mask length {} != {width}*{height}",
                mask.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
            mask,
        })
    }

    /// A raster with every pixel set to `value` and marked valid.
    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
            vec![true; width * height],
        )
    }

    /// Builds a fully valid raster from `f(x, y, channel)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data, vec![true; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn mask_mut(&mut self) -> &mut [bool] {
        &mut self.mask
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// All channels of pixel `idx` (linear index).
    #[inline]
    pub fn pixel(&self, idx: usize) -> &[f32] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, idx: usize) -> &mut [f32] {
        let c = self.channels;
        &mut self.data[idx * c..(idx + 1) * c]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    /// Channel-mean grayscale copy (mask preserved).
    pub fn to_gray(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f32>() / self.channels as f32)
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
            mask: self.mask.clone(),
        }
    }

    /// Copy with three channels; grayscale input is replicated.
    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
            mask: self.mask.clone(),
        }
    }

    /// Sub-rectangle copy `[x0, x0+w) × [y0, y0+h)`; must lie inside the raster.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Raster> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidRaster(format!(
                "crop ({x0},{y0},{w},{h}) outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * self.channels);
        let mut mask = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = self.index(x0, y);
            data.extend_from_slice(&self.data[row * self.channels..(row + w) * self.channels]);
            mask.extend_from_slice(&self.mask[row..row + w]);
        }
        Raster::new(w, h, self.channels, data, mask)
    }

    /// Bilinear sample of channel `c` at a continuous position in pixel-center
    /// coordinates (`(x, y)` is the center of pixel `(x, y)`). Returns `false`
    /// unless all four taps are inside the raster and valid.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f32]) -> bool {
        if !(x >= 0.0 && y >= 0.0) {
            return false;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        // An exact integer coordinate needs only its own tap.
        let x1 = if fx == 0.0 { x0 } else { x0 + 1 };
        let y1 = if fy == 0.0 { y0 } else { y0 + 1 };
        if x1 >= self.width || y1 >= self.height {
            return false;
        }
        let taps = [
            self.index(x0, y0),
            self.index(x1, y0),
            self.index(x0, y1),
            self.index(x1, y1),
        ];
        if taps.iter().any(|&t| !self.mask[t]) {
            return false;
        }
        let w = [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ];
        for (c, o) in out.iter_mut().enumerate().take(self.channels) {
            let mut acc = 0.0f64;
            for k in 0..4 {
                if w[k] != 0.0 {
                    acc += w[k] * self.data[taps[k] * self.channels + c] as f64;
                }
            }
            *o = acc as f32;
        }
        true
    }
}

/// Binary intersection of two raster validity masks.
pub fn overlap_mask(a: &Raster, b: &Raster) -> Result<Vec<bool>> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(a.mask.iter().zip(&b.mask).map(|(&x, &y)| x && y).collect())
}

/// Per-pixel label: a source image index or the occlusion label.
///
/// Sources are numbered from 0 here; on disk (label maps, reports) source
/// `i` is written as `i + 1` and occlusion as `0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Occluded,
    Source(u16),
}

impl Label {
    pub fn source(self) -> Option<usize> {
        match self {
            Label::Occluded => None,
            Label::Source(i) => Some(i as usize),
        }
    }

    pub fn is_occluded(self) -> bool {
        matches!(self, Label::Occluded)
    }

    /// Palette / wire index: `0` for occlusion, `i + 1` for source `i`.
    pub fn code(self) -> u16 {
        match self {
            Label::Occluded => 0,
            Label::Source(i) => i + 1,
        }
    }

    pub fn from_code(code: u16) -> Label {
        if code == 0 {
            Label::Occluded
        } else {
            Label::Source(code - 1)
        }
    }

    /// All labels for `k` sources in a fixed order: occlusion first, then sources.
    pub fn all(k: usize) -> Vec<Label> {
        std::iter::once(Label::Occluded)
            .chain((0..k).map(|i| Label::Source(i as u16)))
            .collect()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Occluded => write!(f, "⊥"),
            Label::Source(i) => write!(f, "{}", i + 1),
        }
    }
}

/// One label per mosaic pixel, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelField {
    width: usize,
    height: usize,
    labels: Vec<Label>,
}

impl LabelField {
    pub fn new(width: usize, height: usize, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != width * height || labels.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {width}x{height} field",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn uniform(width: usize, height: usize, label: Label) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [Label] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Label {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn at(&self, idx: usize) -> Label {
        self.labels[idx]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, l: Label) {
        self.labels[y * self.width + x] = l;
    }
}

/// Axis-aligned box `(x, y, w, h)` in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    /// Integer pixel range `[x0, x1) × [y0, y1)` of pixels whose centers fall
    /// in the box, clipped to a `width × height` grid.
    pub fn pixel_range(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let lo = |v: f64, max: usize| ((v - 0.5).ceil().max(0.0) as usize).min(max);
        (
            lo(self.x, width),
            lo(self.y, height),
            lo(self.x + self.w, width),
            lo(self.y + self.h, height),
        )
    }

    /// Clamp to `[0, width] × [0, height]`.
    pub fn clamped(&self, width: usize, height: usize) -> BBox {
        let x0 = self.x.clamp(0.0, width as f64);
        let y0 = self.y.clamp(0.0, height as f64);
        let x1 = (self.x + self.w).clamp(0.0, width as f64);
        let y1 = (self.y + self.h).clamp(0.0, height as f64);
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn union(&self, other: &BBox) -> BBox {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = (self.x + self.w).max(other.x + other.w);
        let y1 = (self.y + self.h).max(other.y + other.h);
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// Pixel membership of one object, stored as a bitmap over its tight extent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectMask {
    x0: usize,
    y0: usize,
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl ObjectMask {
    /// Build from a full-canvas bitmap; the stored extent is the tight bound
    /// of the set pixels.
    pub fn from_canvas(bits: &[bool], width: usize, height: usize) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask of {} pixels for {width}x{height} canvas",
                bits.len()
            )));
        }
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..height {
            for x in 0..width {
                if bits[y * width + x] {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        if x0 == usize::MAX {
            return Err(Error::EmptyObject);
        }
        let (w, h) = (x1 - x0, y1 - y0);
        let mut local = Vec::with_capacity(w * h);
        for y in y0..y1 {
            local.extend_from_slice(&bits[y * width + x0..y * width + x1]);
        }
        Ok(Self {
            x0,
            y0,
            width: w,
            height: h,
            bits: local,
        })
    }

    /// Every pixel of the rectangle `[x0, x0+w) × [y0, y0+h)`.
    pub fn rect(x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::EmptyObject);
        }
        Ok(Self {
            x0,
            y0,
            width: w,
            height: h,
            bits: vec![true; w * h],
        })
    }

    /// From an explicit pixel list.
    pub fn from_pixels(pixels: &[(usize, usize)]) -> Result<Self> {
        let x0 = pixels.iter().map(|p| p.0).min().ok_or(Error::EmptyObject)?;
        let y0 = pixels.iter().map(|p| p.1).min().unwrap();
        let x1 = pixels.iter().map(|p| p.0).max().unwrap() + 1;
        let y1 = pixels.iter().map(|p| p.1).max().unwrap() + 1;
        let (w, h) = (x1 - x0, y1 - y0);
        let mut bits = vec![false; w * h];
        for &(x, y) in pixels {
            bits[(y - y0) * w + (x - x0)] = true;
        }
        Ok(Self {
            x0,
            y0,
            width: w,
            height: h,
            bits,
        })
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0
            && y >= self.y0
            && x < self.x0 + self.width
            && y < self.y0 + self.height
            && self.bits[(y - self.y0) * self.width + (x - self.x0)]
    }

    pub fn contains_point(&self, p: Point) -> bool {
        if p.x < 0.0 || p.y < 0.0 {
            return false;
        }
        self.contains(p.x.floor() as usize, p.y.floor() as usize)
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Tight pixel extent as `(x0, y0, w, h)`.
    pub fn extent(&self) -> (usize, usize, usize, usize) {
        (self.x0, self.y0, self.width, self.height)
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height).flat_map(move |dy| {
            (0..self.width).filter_map(move |dx| {
                self.bits[dy * self.width + dx].then_some((self.x0 + dx, self.y0 + dy))
            })
        })
    }

    /// Drops pixels outside a `width × height` canvas.
    pub fn clipped(&self, width: usize, height: usize) -> Result<Self> {
        let px: Vec<_> = self.pixels().filter(|&(x, y)| x < width && y < height).collect();
        Self::from_pixels(&px)
    }
}

/// One detection in one source, in whatever frame its owner works in
/// (source frame on ingest, mosaic frame once warped).
#[derive(Debug, Clone, PartialEq)]
pub struct DetectedObject {
    pub source: usize,
    pub category: String,
    pub score: f64,
    pub bbox: BBox,
    pub mask: ObjectMask,
}

impl DetectedObject {
    pub fn new(
        source: usize,
        category: impl Into<String>,
        score: f64,
        bbox: BBox,
        mask: ObjectMask,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidDetection(format!("score {score} outside [0,1]")));
        }
        if !(bbox.w > 0.0 && bbox.h > 0.0) {
            return Err(Error::DegenerateBox(bbox.as_array()));
        }
        let (mx, my, mw, mh) = mask.extent();
        let eps = 1e-9;
        if (mx as f64) < bbox.x.floor() - eps
            || (my as f64) < bbox.y.floor() - eps
            || ((mx + mw) as f64) > (bbox.x + bbox.w).ceil() + eps
            || ((my + mh) as f64) > (bbox.y + bbox.h).ceil() + eps
        {
            return Err(Error::InvalidDetection(format!(
                "mask extent {:?} exceeds bbox {:?}",
                mask.extent(),
                bbox.as_array()
            )));
        }
        Ok(Self {
            source,
            category: category.into(),
            score,
            bbox,
            mask,
        })
    }

    /// Box-only detection: the mask is every pixel whose center lies in the box.
    pub fn from_box(
        source: usize,
        category: impl Into<String>,
        score: f64,
        bbox: BBox,
        canvas: (usize, usize),
    ) -> Result<Self> {
        let (x0, y0, x1, y1) = bbox.pixel_range(canvas.0, canvas.1);
        let mask = ObjectMask::rect(x0, y0, x1.saturating_sub(x0), y1.saturating_sub(y0))?;
        Self::new(source, category, score, bbox, mask)
    }
}

/// A correspondence between a point in image A and a point in image B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMatch {
    pub p: Point,
    pub q: Point,
    pub score: f64,
}

/// Point correspondences between one ordered pair of images.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointMatchSet {
    pub image_a: usize,
    pub image_b: usize,
    pub pairs: Vec<PointMatch>,
}

impl PointMatchSet {
    pub fn new(image_a: usize, image_b: usize, pairs: Vec<PointMatch>) -> Self {
        Self {
            image_a,
            image_b,
            pairs,
        }
    }

    /// Checks every point against its image bounds.
    pub fn validate(&self, dims_a: (usize, usize), dims_b: (usize, usize)) -> Result<()> {
        let inside = |p: Point, d: (usize, usize)| {
            p.x >= 0.0 && p.y >= 0.0 && p.x <= d.0 as f64 && p.y <= d.1 as f64
        };
        for (i, m) in self.pairs.iter().enumerate() {
            if !inside(m.p, dims_a) || !inside(m.q, dims_b) {
                return Err(Error::InvalidMatch(format!(
                    "match {i} ({:?} -> {:?}) outside image bounds",
                    m.p, m.q
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// The same correspondences with the roles of A and B swapped.
    pub fn reversed(&self) -> Self {
        Self {
            image_a: self.image_b,
            image_b: self.image_a,
            pairs: self
                .pairs
                .iter()
                .map(|m| PointMatch {
                    p: m.q,
                    q: m.p,
                    score: m.score,
                })
                .collect(),
        }
    }
}
