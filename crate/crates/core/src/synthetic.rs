//! Procedural test data: a two-view "walking object" scene, a template
//! detector for it, geometric matches, and small random energy instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::correspondence::{ObjectMatchSet, ObjectRef};
use crate::energy::{EnergyModel, EnergyParams};
use crate::error::Result;
use crate::eval::ncc_map;
use crate::model::{BBox, DetectedObject, ObjectMask, Point, PointMatch, PointMatchSet, Raster};
use crate::registration::Homography;

pub const SCENE_WIDTH: usize = 320;
pub const SCENE_HEIGHT: usize = 240;
pub const SPRITE_WIDTH: usize = 28;
pub const SPRITE_HEIGHT: usize = 60;
pub const CATEGORY: &str = "walker";

fn hash(x: i64, y: i64, c: u64, seed: u64) -> u64 {
    let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ c.wrapping_mul(0x1656_67B1_9E37_79F9)
        ^ seed.wrapping_mul(0x27D4_EB2F_1656_67C5);
    h ^= h >> 31;
    h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    h ^ (h >> 29)
}

/// Smooth value noise in `[0, 1]` with lattice spacing `cell`.
fn value_noise(x: f64, y: f64, cell: f64, c: u64, seed: u64) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (ix, iy) = (gx.floor() as i64, gy.floor() as i64);
    let s = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
    let (tx, ty) = (s(gx - ix as f64), s(gy - iy as f64));
    let v = |a: i64, b: i64| (hash(a, b, c, seed) >> 11) as f64 / (1u64 << 53) as f64;
    let top = v(ix, iy) * (1.0 - tx) + v(ix + 1, iy) * tx;
    let bot = v(ix, iy + 1) * (1.0 - tx) + v(ix + 1, iy + 1) * tx;
    top * (1.0 - ty) + bot * ty
}

/// Layout of the walking-object scene, in reference-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneLayout {
    /// Object position seen by the reference image.
    pub first: Point,
    /// Object position seen by the candidate image.
    pub second: Point,
    /// Columns of untextured background between the two positions.
    pub flat_band: (f64, f64),
    /// Candidate → reference rotation (radians) and translation.
    pub angle: f64,
    pub shift: (f64, f64),
}

impl Default for SceneLayout {
    fn default() -> Self {
        Self {
            first: Point::new(172.0, 90.0),
            second: Point::new(255.0, 95.0),
            flat_band: (212.0, 242.0),
            angle: 0.5f64.to_radians(),
            shift: (150.5, 3.0),
        }
    }
}

/// Texture amplitude: zero inside the flat band and along the top and
/// bottom margins, ramping to one over a few pixels.
fn amplitude(p: Point, layout: &SceneLayout) -> f64 {
    let ramp = |d: f64| (d / 6.0).clamp(0.0, 1.0);
    let (b0, b1) = layout.flat_band;
    let bx = if p.x < b0 { ramp(b0 - p.x) } else if p.x > b1 { ramp(p.x - b1) } else { 0.0 };
    let m = 12.0;
    let by = ramp((p.y - m).min(SCENE_HEIGHT as f64 - m - p.y));
    bx * by
}

fn background(p: Point, seed: u64, layout: &SceneLayout) -> [f32; 3] {
    let a = amplitude(p, layout);
    let base = [96.0, 124.0, 84.0];
    let mut out = [0f32; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let n = 0.7 * value_noise(p.x, p.y, 24.0, c as u64, seed) + 0.3 * value_noise(p.x, p.y, 11.0, c as u64 + 3, seed);
        *o = (base[c] + a * 70.0 * (n - 0.5)) as f32;
    }
    out
}

/// Object appearance at offset `(u, v)` inside its box.
pub fn sprite(u: f64, v: f64) -> [f32; 3] {
    let r = 170.0 + 55.0 * (u / 3.5).sin() * (v / 9.0).cos();
    let g = 45.0 + 35.0 * (v / 6.0).sin();
    let b = 70.0 + 50.0 * ((u + v) / 7.0).cos();
    [r as f32, g as f32, b as f32]
}

/// The sprite rendered at pixel centers: the detector's template.
pub fn sprite_template() -> Raster {
    Raster::from_fn(SPRITE_WIDTH, SPRITE_HEIGHT, 3, |x, y, c| {
        sprite(x as f64 + 0.5, y as f64 + 0.5)[c]
    })
    .expect("positive size")
}

fn in_sprite(p: Point, at: Point) -> bool {
    p.x >= at.x && p.x < at.x + SPRITE_WIDTH as f64 && p.y >= at.y && p.y < at.y + SPRITE_HEIGHT as f64
}

/// Two views of a scene in which one object moves between exposures.
#[derive(Debug, Clone)]
pub struct WalkingScene {
    pub layout: SceneLayout,
    /// Index 0 is the reference view, 1 the candidate.
    pub images: Vec<Raster>,
    /// Ground-truth candidate → reference homography.
    pub truth: Homography,
    pub detections: Vec<Vec<DetectedObject>>,
    /// Reference ↔ candidate matches: background flow plus points that
    /// follow the object.
    pub matches: Vec<PointMatchSet>,
}

/// Builds the scene for `seed` (texture and match noise vary with it).
pub fn walking_scene(seed: u64, layout: SceneLayout) -> Result<WalkingScene> {
    let (w, h) = (SCENE_WIDTH, SCENE_HEIGHT);
    let truth = Homography::similarity(1.0, layout.angle, layout.shift.0, layout.shift.1)?;
    let to_cand = truth.inverse()?;
    let world = |p: Point, obj: Point| -> [f32; 3] {
        if in_sprite(p, obj) {
            sprite(p.x - obj.x, p.y - obj.y)
        } else {
            background(p, seed, &layout)
        }
    };
    let render = |map: &dyn Fn(Point) -> Point, obj: Point| {
        let mut r = Raster::filled(w, h, 3, 0.0).expect("positive size");
        let mut bits = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let p = map(Point::new(x as f64 + 0.5, y as f64 + 0.5));
                let v = world(p, obj);
                for c in 0..3 {
                    r.set(x, y, c, v[c]);
                }
                bits[y * w + x] = in_sprite(p, obj);
            }
        }
        (r, bits)
    };
    let (reference, ref_bits) = render(&|p| p, layout.first);
    let (candidate, cand_bits) = render(&|p| truth.apply(p).expect("similarity is affine"), layout.second);

    let detection = |source: usize, bits: &[bool]| -> Result<DetectedObject> {
        let mask = ObjectMask::from_canvas(bits, w, h)?;
        let (x, y, bw, bh) = mask.extent();
        DetectedObject::new(source, CATEGORY, 0.99, BBox::new(x as f64, y as f64, bw as f64, bh as f64), mask)
    };
    let detections = vec![vec![detection(0, &ref_bits)?], vec![detection(1, &cand_bits)?]];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = |p: Point| Point::new(p.x + rng.gen_range(-0.25..0.25), p.y + rng.gen_range(-0.25..0.25));
    let mut pairs = Vec::new();
    let inside = |q: Point| q.x >= 0.0 && q.y >= 0.0 && q.x < w as f64 && q.y < h as f64;
    for y in (3..h).step_by(6) {
        for x in (3..w).step_by(6) {
            let p = Point::new(x as f64, y as f64);
            if in_sprite(p, layout.first) || in_sprite(p, layout.second) {
                continue;
            }
            let q = to_cand.apply(p).expect("affine");
            if inside(q) {
                pairs.push(PointMatch { p, q: noise(q), score: 1.0 });
            }
        }
    }
    for v in (1..SPRITE_HEIGHT).step_by(2) {
        for u in (1..SPRITE_WIDTH).step_by(2) {
            let off = Point::new(u as f64, v as f64);
            let p = layout.first + off;
            let q = to_cand.apply(layout.second + off).expect("affine");
            if inside(q) {
                pairs.push(PointMatch { p, q: noise(q), score: 1.0 });
            }
        }
    }
    Ok(WalkingScene {
        layout,
        images: vec![reference, candidate],
        truth,
        detections,
        matches: vec![PointMatchSet::new(0, 1, pairs)],
    })
}

/// Template detector: NCC peaks above `threshold`, strongest first, with
/// any peak whose box overlaps an accepted one suppressed.
pub fn detect_template(image: &Raster, template: &Raster, threshold: f64, source: usize) -> Result<Vec<DetectedObject>> {
    let map = ncc_map(template, image)?;
    let (tw, th) = template.dims();
    let mut peaks: Vec<(usize, f64)> = map
        .scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > threshold)
        .map(|(i, &s)| (i, s))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut kept: Vec<(usize, usize, f64)> = Vec::new();
    for (i, s) in peaks {
        let (x, y) = (i % map.width, i / map.width);
        if kept.iter().all(|&(kx, ky, _)| kx.abs_diff(x) >= tw || ky.abs_diff(y) >= th) {
            kept.push((x, y, s));
        }
    }
    kept.into_iter()
        .map(|(x, y, s)| {
            let bbox = BBox::new(x as f64, y as f64, tw as f64, th as f64);
            DetectedObject::from_box(source, CATEGORY, s.clamp(0.0, 1.0), bbox, image.dims())
        })
        .collect()
}

/// Matches on a regular grid of image A carried into image B by `a_to_b`,
/// kept where they land inside B.
pub fn geometric_matches(
    a_to_b: &Homography,
    dims_a: (usize, usize),
    dims_b: (usize, usize),
    step: usize,
    ids: (usize, usize),
) -> PointMatchSet {
    let mut pairs = Vec::new();
    for y in (0..dims_a.1).step_by(step.max(1)) {
        for x in (0..dims_a.0).step_by(step.max(1)) {
            let p = Point::new(x as f64 + 0.5, y as f64 + 0.5);
            if let Some(q) = a_to_b.apply(p) {
                if q.x >= 0.0 && q.y >= 0.0 && q.x < dims_b.0 as f64 && q.y < dims_b.1 as f64 {
                    pairs.push(PointMatch { p, q, score: 1.0 });
                }
            }
        }
    }
    PointMatchSet::new(ids.0, ids.1, pairs)
}

/// Options for [`random_instance`].
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub width: usize,
    pub height: usize,
    pub sources: usize,
    /// Probability that a source has data at a pixel.
    pub coverage: f64,
    /// Plant a matched 2×2 object in sources 0 and 1.
    pub objects: bool,
    /// Intensity levels are multiples of this step in `[0, 255]`.
    pub intensity_step: u32,
    pub params: EnergyParams,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            width: 4,
            height: 4,
            sources: 2,
            coverage: 0.8,
            objects: true,
            intensity_step: 1,
            params: EnergyParams::default(),
        }
    }
}

/// A small random model: gray sources with random intensities and random
/// masks, optionally with one planted 2×2 object pair matched across
/// sources 0 and 1.
pub fn random_instance(seed: u64, spec: &InstanceSpec) -> Result<EnergyModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (spec.width, spec.height);
    let levels = 255 / spec.intensity_step.max(1);
    let sources: Vec<Raster> = (0..spec.sources)
        .map(|_| {
            let data = (0..w * h)
                .map(|_| (rng.gen_range(0..=levels) * spec.intensity_step) as f32)
                .collect();
            let mask = (0..w * h).map(|_| rng.gen_bool(spec.coverage)).collect();
            Raster::new(w, h, 1, data, mask)
        })
        .collect::<Result<_>>()?;
    let mut objects = vec![Vec::new(); spec.sources];
    let mut matches = ObjectMatchSet::singletons(&vec![0; spec.sources]);
    if spec.objects && spec.sources >= 2 && w >= 2 && h >= 2 {
        for (s, list) in objects.iter_mut().enumerate().take(2) {
            let (x, y) = (rng.gen_range(0..w - 1), rng.gen_range(0..h - 1));
            let bbox = BBox::new(x as f64, y as f64, 2.0, 2.0);
            list.push(DetectedObject::new(s, CATEGORY, 0.9, bbox, ObjectMask::rect(x, y, 2, 2)?)?);
        }
        matches = ObjectMatchSet {
            classes: vec![vec![ObjectRef { source: 0, index: 0 }, ObjectRef { source: 1, index: 0 }]],
            pairs: Vec::new(),
            threshold: 0.0,
        };
    }
    EnergyModel::new(sources, objects, matches, spec.params.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_truth_maps_candidate_content_onto_reference() {
        let s = walking_scene(1, SceneLayout::default()).unwrap();
        // a textured background pixel of the candidate shows the same world point
        let p = Point::new(100.5, 30.5);
        let q = s.truth.apply(p).unwrap();
        let mut expect = [0f32; 3];
        assert!(s.images[0].sample_bilinear(q.x - 0.5, q.y - 0.5, &mut expect));
        for c in 0..3 {
            assert!((s.images[1].get(100, 30, c) - expect[c]).abs() < 1.0);
        }
    }

    #[test]
    fn detector_finds_each_view_once() {
        let s = walking_scene(2, SceneLayout::default()).unwrap();
        let t = sprite_template();
        let a = detect_template(&s.images[0], &t, 0.8, 0).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!((a[0].bbox.x, a[0].bbox.y), (172.0, 90.0));
        assert_eq!(detect_template(&s.images[1], &t, 0.8, 1).unwrap().len(), 1);
    }

    #[test]
    fn random_instances_are_reproducible() {
        let spec = InstanceSpec::default();
        let a = random_instance(5, &spec).unwrap();
        let b = random_instance(5, &spec).unwrap();
        assert_eq!(a.sources(), b.sources());
        assert_eq!(a.objects(), b.objects());
    }
}
