//! JSON interchange: detections, point matches and dense flow.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::mask_codec::{decode_object_mask, EncodedMask};
use crate::model::{BBox, DetectedObject, ObjectMask, Point, PointMatch, PointMatchSet};
use crate::registration::FlowSample;

/// One detection record. `image_id` indexes the input list; `bbox` is
/// `[x, y, w, h]` in that image's pixel frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: usize,
    pub category: String,
    pub score: f64,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<EncodedMask>,
    /// Fields this tool does not interpret, kept for the report.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

/// Detections grouped per image plus the uninterpreted fields of each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub objects: Vec<Vec<DetectedObject>>,
    /// `(image_id, index within that image, extra fields)` for records
    /// that carried any.
    pub extras: Vec<(usize, usize, Map<String, Value>)>,
}

/// Turns one record into a detection in an image of `dims`. The box is
/// clamped to the image and the mask is clipped to the clamped box; a
/// record without a segmentation gets a box mask.
pub fn detection_from_record(rec: &DetectionRecord, dims: (usize, usize)) -> Result<DetectedObject> {
    let (w, h) = dims;
    let [x, y, bw, bh] = rec.bbox;
    if !rec.bbox.iter().all(|v| v.is_finite()) || bw <= 0.0 || bh <= 0.0 {
        return Err(Error::DegenerateBox(rec.bbox));
    }
    let bbox = BBox::new(x, y, bw, bh).clamped(w, h);
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(Error::InvalidDetection(format!(
            "box {:?} lies outside the {w}x{h} image",
            rec.bbox
        )));
    }
    let Some(seg) = &rec.segmentation else {
        return DetectedObject::from_box(rec.image_id, rec.category.clone(), rec.score, bbox, dims);
    };
    let mut bits = decode_object_mask(seg, w, h)?;
    let (x0, y0, x1, y1) = (
        bbox.x.floor() as usize,
        bbox.y.floor() as usize,
        (bbox.x + bbox.w).ceil() as usize,
        (bbox.y + bbox.h).ceil() as usize,
    );
    for py in 0..h {
        for px in 0..w {
            if px < x0 || px >= x1 || py < y0 || py >= y1 {
                bits[py * w + px] = false;
            }
        }
    }
    let mask = ObjectMask::from_canvas(&bits, w, h)?;
    DetectedObject::new(rec.image_id, rec.category.clone(), rec.score, bbox, mask)
}

/// Parses a JSON array of detection records for images of the given sizes.
pub fn parse_detections(text: &str, dims: &[(usize, usize)]) -> Result<DetectionSet> {
    let records: Vec<DetectionRecord> = serde_json::from_str(text)?;
    let mut set = DetectionSet {
        objects: vec![Vec::new(); dims.len()],
        extras: Vec::new(),
    };
    for (k, rec) in records.iter().enumerate() {
        let d = dims.get(rec.image_id).ok_or_else(|| {
            Error::InvalidDetection(format!(
                "record {k}: image_id {} but only {} images given",
                rec.image_id,
                dims.len()
            ))
        })?;
        let obj = detection_from_record(rec, *d)
            .map_err(|e| Error::InvalidDetection(format!("record {k}: {e}")))?;
        let list = &mut set.objects[rec.image_id];
        if !rec.extra.is_empty() {
            set.extras.push((rec.image_id, list.len(), rec.extra.clone()));
        }
        list.push(obj);
    }
    Ok(set)
}

/// Serializes detections (box plus run-length mask) as records.
pub fn detections_to_records(objects: &[Vec<DetectedObject>], dims: &[(usize, usize)]) -> Vec<DetectionRecord> {
    let mut out = Vec::new();
    for (img, list) in objects.iter().enumerate() {
        let (w, h) = dims[img];
        for o in list {
            let mut bits = vec![false; w * h];
            for (x, y) in o.mask.pixels() {
                if x < w && y < h {
                    bits[y * w + x] = true;
                }
            }
            out.push(DetectionRecord {
                image_id: img,
                category: o.category.clone(),
                score: o.score,
                bbox: o.bbox.as_array(),
                segmentation: Some(crate::mask_codec::encode_object_mask(&bits, w, h)),
                extra: Map::new(),
            });
        }
    }
    out
}

/// One point correspondence between two images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub image_a: usize,
    pub image_b: usize,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    #[serde(default = "one")]
    pub score: f64,
}

fn one() -> f64 {
    1.0
}

/// Parses a JSON array of match records into one set per ordered image
/// pair, in order of first appearance, validated against image sizes.
pub fn parse_matches(text: &str, dims: &[(usize, usize)]) -> Result<Vec<PointMatchSet>> {
    let records: Vec<MatchRecord> = serde_json::from_str(text)?;
    let mut sets: Vec<PointMatchSet> = Vec::new();
    for (k, r) in records.iter().enumerate() {
        if r.image_a >= dims.len() || r.image_b >= dims.len() || r.image_a == r.image_b {
            return Err(Error::InvalidMatch(format!(
                "record {k}: image pair ({}, {}) is not valid for {} images",
                r.image_a,
                r.image_b,
                dims.len()
            )));
        }
        let m = PointMatch {
            p: Point::new(r.x1, r.y1),
            q: Point::new(r.x2, r.y2),
            score: r.score,
        };
        match sets.iter_mut().find(|s| s.image_a == r.image_a && s.image_b == r.image_b) {
            Some(s) => s.pairs.push(m),
            None => sets.push(PointMatchSet::new(r.image_a, r.image_b, vec![m])),
        }
    }
    for s in &sets {
        s.validate(dims[s.image_a], dims[s.image_b])?;
    }
    Ok(sets)
}

pub fn matches_to_records(sets: &[PointMatchSet]) -> Vec<MatchRecord> {
    sets.iter()
        .flat_map(|s| {
            s.pairs.iter().map(move |m| MatchRecord {
                image_a: s.image_a,
                image_b: s.image_b,
                x1: m.p.x,
                y1: m.p.y,
                x2: m.q.x,
                y2: m.q.y,
                score: m.score,
            })
        })
        .collect()
}

/// Dense residual flow for one candidate, gridded over the reference
/// frame: at reference pixel `(x, y)` the globally warped candidate should
/// move by `(dx[i], dy[i])`, `i = y * width + x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowFile {
    pub image: usize,
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl FlowFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: FlowFile = serde_json::from_str(text)?;
        let n = f.width * f.height;
        if f.dx.len() != n || f.dy.len() != n {
            return Err(Error::Format(format!(
                "flow grid {}x{} needs {n} values per component, got {} and {}",
                f.width,
                f.height,
                f.dx.len(),
                f.dy.len()
            )));
        }
        if f.dx.iter().chain(&f.dy).any(|v| !v.is_finite()) {
            return Err(Error::Format("flow values must be finite".into()));
        }
        Ok(f)
    }

    /// Pixel-center samples every `stride` pixels, shifted by `offset`
    /// (reference frame to mosaic frame).
    pub fn samples(&self, stride: usize, offset: (f64, f64)) -> Vec<FlowSample> {
        let stride = stride.max(1);
        let mut out = Vec::new();
        for y in (0..self.height).step_by(stride) {
            for x in (0..self.width).step_by(stride) {
                let i = y * self.width + x;
                out.push(FlowSample {
                    at: Point::new(x as f64 + 0.5 + offset.0, y as f64 + 0.5 + offset.1),
                    flow: Point::new(self.dx[i], self.dy[i]),
                });
            }
        }
        out
    }
}
