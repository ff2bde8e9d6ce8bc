//! Object-centered scoring of a stitched image: expected counts, omission
//! and duplication flags, and crop scores.

mod msssim;
mod ncc;

pub use msssim::{ms_ssim, MsSsimConfig, DEFAULT_WEIGHTS};
pub use ncc::{ncc, ncc_map, ncc_match, NccMap, NccMatch};

use std::collections::BTreeMap;

use serde::Serialize;

use crate::correspondence::{ObjectMatchSet, ObjectRef};
use crate::error::Result;
use crate::model::{BBox, DetectedObject, Raster};

/// Count summary for one category (or all of them).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryCount {
    pub category: String,
    /// Objects detected in the output.
    pub detected: usize,
    /// Equivalence classes across the inputs.
    pub expected: usize,
    pub delta: i64,
    /// Largest per-input count.
    pub max_input: usize,
    /// Sum of per-input counts.
    pub sum_input: usize,
    /// `detected < max_input`: some object is surely missing.
    pub omission_certain: bool,
    /// `detected > sum_input`: some object is surely repeated.
    pub duplication_certain: bool,
    pub verdict: String,
}

impl CategoryCount {
    fn new(category: String, detected: usize, expected: usize, per_input: &[usize]) -> Self {
        let max_input = per_input.iter().copied().max().unwrap_or(0);
        let sum_input = per_input.iter().sum();
        let delta = detected as i64 - expected as i64;
        let verdict = match delta.signum() {
            -1 => "omission suspected",
            1 => "duplication suspected",
            _ => "consistent",
        };
        Self {
            category,
            detected,
            expected,
            delta,
            max_input,
            sum_input,
            omission_certain: detected < max_input,
            duplication_certain: detected > sum_input,
            verdict: verdict.into(),
        }
    }
}

/// Crop scores of one output detection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectScore {
    pub output_index: usize,
    pub category: String,
    /// Input detections it was paired with.
    pub matched: Vec<ObjectRef>,
    pub ms_ssim_avg: Option<f64>,
    pub ms_ssim_max: Option<f64>,
    /// Best NCC over the searched images.
    pub template: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub categories: Vec<CategoryCount>,
    pub all: CategoryCount,
    pub objects: Vec<ObjectScore>,
}

/// Number of equivalence classes per category. A class takes the category
/// of its first member.
pub fn expected_count(
    inputs: &[Vec<DetectedObject>],
    matches: &ObjectMatchSet,
) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for class in &matches.classes {
        if let Some(first) = class.first() {
            let cat = inputs[first.source][first.index].category.clone();
            *out.entry(cat).or_insert(0) += 1;
        }
    }
    out
}

/// Counts part of the evaluation; `objects` is left empty.
pub fn count_report(
    output: &[DetectedObject],
    inputs: &[Vec<DetectedObject>],
    matches: &ObjectMatchSet,
) -> EvaluationReport {
    let expected = expected_count(inputs, matches);
    let mut cats: BTreeMap<String, ()> = expected.keys().map(|k| (k.clone(), ())).collect();
    for d in output.iter().chain(inputs.iter().flatten()) {
        cats.insert(d.category.clone(), ());
    }
    let categories = cats
        .keys()
        .map(|c| {
            let detected = output.iter().filter(|d| &d.category == c).count();
            let per_input: Vec<usize> = inputs
                .iter()
                .map(|ds| ds.iter().filter(|d| &d.category == c).count())
                .collect();
            CategoryCount::new(c.clone(), detected, expected.get(c).copied().unwrap_or(0), &per_input)
        })
        .collect();
    let per_input: Vec<usize> = inputs.iter().map(Vec::len).collect();
    let all = CategoryCount::new("*".into(), output.len(), matches.classes.len(), &per_input);
    EvaluationReport {
        categories,
        all,
        objects: Vec::new(),
    }
}

/// Bilinear resize sampling at pixel centers; edges clamp.
pub fn resize_bilinear(r: &Raster, w: usize, h: usize) -> Result<Raster> {
    let (sw, sh) = r.dims();
    let ch = r.channels();
    let sx = sw as f64 / w as f64;
    let sy = sh as f64 / h as f64;
    let mut data = vec![0f32; w * h * ch];
    for y in 0..h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = fy - y0 as f64;
        for x in 0..w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = fx - x0 as f64;
            for c in 0..ch {
                let v = (1.0 - ty) * ((1.0 - tx) * r.get(x0, y0, c) as f64 + tx * r.get(x1, y0, c) as f64)
                    + ty * ((1.0 - tx) * r.get(x0, y1, c) as f64 + tx * r.get(x1, y1, c) as f64);
                data[(y * w + x) * ch + c] = v as f32;
            }
        }
    }
    Raster::new(w, h, ch, data, vec![true; w * h])
}

fn crop_box(r: &Raster, b: &BBox) -> Option<Raster> {
    let (x0, y0, x1, y1) = b.pixel_range(r.width(), r.height());
    (x1 > x0 && y1 > y0).then(|| r.crop(x0, y0, x1 - x0, y1 - y0).ok()).flatten()
}

/// MS-SSIM between two boxed regions. Each is cropped by its own box and
/// the smaller is resized to the larger. Regions too small for the
/// configured scales use as many scales as fit; below one scale both are
/// enlarged until the shorter side equals the window.
pub fn region_similarity(
    a: &Raster,
    abox: &BBox,
    b: &Raster,
    bbox: &BBox,
    cfg: &MsSsimConfig,
) -> Result<Option<f64>> {
    let (Some(mut ra), Some(mut rb)) = (crop_box(a, abox), crop_box(b, bbox)) else {
        return Ok(None);
    };
    if ra.channels() != rb.channels() {
        ra = ra.to_gray();
        rb = rb.to_gray();
    }
    let (mut w, mut h) = if ra.width() * ra.height() >= rb.width() * rb.height() {
        ra.dims()
    } else {
        rb.dims()
    };
    let short = w.min(h);
    if short < cfg.window {
        let f = cfg.window as f64 / short as f64;
        w = ((w as f64 * f).ceil() as usize).max(cfg.window);
        h = ((h as f64 * f).ceil() as usize).max(cfg.window);
    }
    if ra.dims() != (w, h) {
        ra = resize_bilinear(&ra, w, h)?;
    }
    if rb.dims() != (w, h) {
        rb = resize_bilinear(&rb, w, h)?;
    }
    let fit = cfg.fitting(w, h).unwrap_or_else(|| cfg.truncated(1));
    ms_ssim(&ra, &rb, &fit).map(Some)
}

/// An input carried into the output frame: the warped image and its
/// detections in output coordinates.
#[derive(Debug, Clone)]
pub struct WarpedInput {
    pub image: Raster,
    pub objects: Vec<DetectedObject>,
}

/// Average and maximum MS-SSIM of each output object against its paired
/// input objects. `pairs` holds `(output index, input object)`; objects
/// with no pair score `None`.
pub fn crop_score_direct(
    output: &Raster,
    output_objects: &[DetectedObject],
    inputs: &[WarpedInput],
    pairs: &[(usize, ObjectRef)],
    cfg: &MsSsimConfig,
) -> Result<Vec<(Option<f64>, Option<f64>)>> {
    output_objects
        .iter()
        .enumerate()
        .map(|(k, o)| {
            let mut scores = Vec::new();
            for (_, r) in pairs.iter().filter(|(i, _)| *i == k) {
                let inp = &inputs[r.source];
                let obj = &inp.objects[r.index];
                if let Some(s) = region_similarity(output, &o.bbox, &inp.image, &obj.bbox, cfg)? {
                    scores.push(s);
                }
            }
            if scores.is_empty() {
                return Ok((None, None));
            }
            let avg = scores.iter().sum::<f64>() / scores.len() as f64;
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok((Some(avg), Some(max)))
        })
        .collect()
}

/// Best NCC of each output object region against every search image.
/// Search images smaller than the region are skipped; with none left the
/// score is `None`.
pub fn crop_score_template(
    output: &Raster,
    output_objects: &[DetectedObject],
    searches: &[&Raster],
) -> Result<Vec<Option<f64>>> {
    output_objects
        .iter()
        .map(|o| {
            let Some(t) = crop_box(output, &o.bbox) else {
                return Ok(None);
            };
            let mut best: Option<f64> = None;
            for s in searches {
                if t.width() > s.width() || t.height() > s.height() {
                    continue;
                }
                let m = ncc_match(&t, s)?;
                best = Some(best.map_or(m.score, |b| b.max(m.score)));
            }
            Ok(best)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::ObjectMatchSet;

    fn det(source: usize, cat: &str, x: f64) -> DetectedObject {
        DetectedObject::from_box(source, cat, 0.9, BBox::new(x, 0.0, 4.0, 4.0), (64, 64)).unwrap()
    }

    fn r(source: usize, index: usize) -> ObjectRef {
        ObjectRef { source, index }
    }

    #[test]
    fn expected_counts_follow_classes() {
        let inputs = vec![vec![det(0, "person", 0.0)], vec![det(1, "person", 10.0)]];
        let matched = ObjectMatchSet {
            classes: vec![vec![r(0, 0), r(1, 0)]],
            pairs: vec![],
            threshold: 0.05,
        };
        assert_eq!(expected_count(&inputs, &matched)["person"], 1);
        let apart = ObjectMatchSet::singletons(&[1, 1]);
        assert_eq!(expected_count(&inputs, &apart)["person"], 2);

        // chain across three inputs plus a singleton
        let inputs = vec![
            vec![det(0, "person", 0.0)],
            vec![det(1, "person", 0.0), det(1, "person", 20.0)],
            vec![det(2, "person", 0.0)],
        ];
        let chain = ObjectMatchSet {
            classes: vec![vec![r(0, 0), r(1, 0), r(2, 0)], vec![r(1, 1)]],
            pairs: vec![],
            threshold: 0.05,
        };
        assert_eq!(expected_count(&inputs, &chain)["person"], 2);
    }

    #[test]
    fn flags_agree_with_delta() {
        let inputs = vec![vec![det(0, "person", 0.0)], vec![det(1, "person", 10.0)]];
        let apart = ObjectMatchSet::singletons(&[1, 1]);
        let one = count_report(&[det(0, "person", 0.0)], &inputs, &apart);
        assert_eq!(one.all.delta, -1);
        assert_eq!(one.all.verdict, "omission suspected");
        let three: Vec<_> = (0..3).map(|i| det(0, "person", 10.0 * i as f64)).collect();
        let dup = count_report(&three, &inputs, &apart);
        assert!(dup.all.duplication_certain);
        assert!(dup.all.delta > 0);
        let perfect = count_report(&three[..2], &inputs, &apart);
        assert_eq!(perfect.all.delta, 0);
        assert!(!perfect.all.omission_certain && !perfect.all.duplication_certain);
    }

    #[test]
    fn categories_are_reported_separately() {
        let inputs = vec![vec![det(0, "person", 0.0), det(0, "dog", 10.0)]];
        let rep = count_report(&[det(0, "dog", 0.0)], &inputs, &ObjectMatchSet::singletons(&[2]));
        let by: BTreeMap<_, _> = rep.categories.iter().map(|c| (c.category.as_str(), c.delta)).collect();
        assert_eq!(by["dog"], 0);
        assert_eq!(by["person"], -1);
        assert_eq!(rep.all.delta, -1);
    }

    fn textured(w: usize, h: usize) -> Raster {
        Raster::from_fn(w, h, 1, |x, y, _| ((x * 37 + y * 91 + (x * y) % 17) % 256) as f32).unwrap()
    }

    #[test]
    fn identical_region_scores_one_and_damage_lowers_it() {
        let img = textured(100, 100);
        let b = BBox::new(20.0, 20.0, 40.0, 50.0);
        let cfg = MsSsimConfig::default();
        let s = region_similarity(&img, &b, &img, &b, &cfg).unwrap().unwrap();
        assert!((s - 1.0).abs() < 1e-9);
        let mut damaged = img.clone();
        for y in 20..70 {
            for x in 20..40 {
                damaged.set(x, y, 0, 128.0);
            }
        }
        let d = region_similarity(&damaged, &b, &img, &b, &cfg).unwrap().unwrap();
        assert!(d < s);
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let img = textured(13, 7);
        assert_eq!(resize_bilinear(&img, 13, 7).unwrap().data(), img.data());
    }

    #[test]
    fn unpaired_objects_have_no_direct_score() {
        let img = textured(64, 64);
        let o = det(0, "person", 8.0);
        let scores = crop_score_direct(&img, &[o], &[], &[], &MsSsimConfig::default()).unwrap();
        assert_eq!(scores, vec![(None, None)]);
    }
}
