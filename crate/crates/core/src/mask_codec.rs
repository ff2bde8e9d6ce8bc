//! Object mask encodings: run-length (counts array or compressed string) and
//! polygons.
//!
//! Run-length masks follow the common detection-interchange layout: pixels are
//! visited in column-major order (down each column, then the next column) and
//! the runs alternate starting with a run of unset pixels, which may be empty.
//! The compressed string form packs the run deltas into 5-bit groups offset
//! by ASCII 48.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A mask as it appears on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EncodedMask {
    /// Run-length encoding; `size` is `[height, width]` of the frame it was made for.
    Rle { size: [usize; 2], counts: RleCounts },
    /// One or more closed polygons, each a flat `[x0, y0, x1, y1, ...]` list.
    Polygons(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    Compressed(String),
    Runs(Vec<u32>),
}

/// Expands run lengths into a row-major `width × height` bitmap.
pub fn decode_rle(counts: &[u32], width: usize, height: usize) -> Result<Vec<bool>> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total != (width * height) as u64 {
        return Err(Error::MaskParse {
            field: "counts",
            position: counts.len(),
            reason: format!("runs cover {total} pixels, frame has {}", width * height),
        });
    }
    let mut out = vec![false; width * height];
    let mut pos = 0usize;
    for (i, &run) in counts.iter().enumerate() {
        let set = i % 2 == 1;
        for k in pos..pos + run as usize {
            if set {
                let (x, y) = (k / height, k % height);
                out[y * width + x] = true;
            }
        }
        pos += run as usize;
    }
    Ok(out)
}

/// Run lengths of a row-major bitmap, in column-major visiting order.
pub fn encode_rle(bits: &[bool], width: usize, height: usize) -> Vec<u32> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..width {
        for y in 0..height {
            let b = bits[y * width + x];
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}

/// Packs run lengths into the compressed string form.
pub fn rle_to_string(counts: &[u32]) -> String {
    let mut s = String::new();
    for i in 0..counts.len() {
        let mut x = counts[i] as i64;
        if i > 2 {
            x -= counts[i - 2] as i64;
        }
        loop {
            let mut c = (x & 0x1f) as u8;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            s.push((c + 48) as char);
            if !more {
                break;
            }
        }
    }
    s
}

/// Unpacks the compressed string form.
pub fn rle_from_string(s: &str) -> Result<Vec<u32>> {
    let bytes = s.as_bytes();
    let mut counts: Vec<u32> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let start = p;
        let mut x: i64 = 0;
        let mut k = 0;
        loop {
            let Some(&b) = bytes.get(p) else {
                return Err(Error::MaskParse {
                    field: "counts",
                    position: p,
                    reason: "string ends inside a continued group".into(),
                });
            };
            if !(48..48 + 64).contains(&b) {
                return Err(Error::MaskParse {
                    field: "counts",
                    position: p,
                    reason: format!("byte {b:#04x} outside the encoding alphabet"),
                });
            }
            if k >= 12 {
                return Err(Error::MaskParse {
                    field: "counts",
                    position: p,
                    reason: "run length overflows".into(),
                });
            }
            let c = (b - 48) as i64;
            x |= (c & 0x1f) << (5 * k);
            p += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2] as i64;
        }
        if x < 0 || x > u32::MAX as i64 {
            return Err(Error::MaskParse {
                field: "counts",
                position: start,
                reason: format!("decoded run {x} is negative or too large"),
            });
        }
        counts.push(x as u32);
    }
    Ok(counts)
}

/// Rasterizes a closed polygon: pixel `(x, y)` is inside iff its center
/// `(x + 0.5, y + 0.5)` is inside under the even-odd rule, with edges treated
/// half-open in `y` so shared borders never count twice.
pub fn rasterize_polygon(flat: &[f64], width: usize, height: usize) -> Result<Vec<bool>> {
    if flat.len() % 2 != 0 {
        return Err(Error::InvalidPolygon(format!(
            "odd coordinate count {}",
            flat.len()
        )));
    }
    let mut verts: Vec<(f64, f64)> = flat.chunks_exact(2).map(|c| (c[0], c[1])).collect();
    if verts.len() > 1 && verts.first() == verts.last() {
        verts.pop();
    }
    if verts.len() < 3 {
        return Err(Error::InvalidPolygon(format!(
            "{} vertices, need at least 3",
            verts.len()
        )));
    }
    if verts.iter().any(|v| !v.0.is_finite() || !v.1.is_finite()) {
        return Err(Error::InvalidPolygon("non-finite vertex".into()));
    }
    let mut out = vec![false; width * height];
    let n = verts.len();
    let mut xs = Vec::new();
    for y in 0..height {
        let cy = y as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (x0, y0) = verts[i];
            let (x1, y1) = verts[(i + 1) % n];
            if (y0 <= cy && cy < y1) || (y1 <= cy && cy < y0) {
                xs.push(x0 + (cy - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for span in xs.chunks_exact(2) {
            // centers with span[0] <= cx < span[1]
            let lo = (span[0] - 0.5).ceil().max(0.0) as usize;
            let hi = ((span[1] - 0.5).ceil().max(0.0) as usize).min(width);
            for x in lo..hi {
                out[y * width + x] = true;
            }
        }
    }
    Ok(out)
}

/// Decodes a wire mask into a row-major bitmap over a `width × height` canvas.
pub fn decode_object_mask(encoded: &EncodedMask, width: usize, height: usize) -> Result<Vec<bool>> {
    match encoded {
        EncodedMask::Rle { size, counts } => {
            if size[0] != height || size[1] != width {
                return Err(Error::MaskParse {
                    field: "size",
                    position: 0,
                    reason: format!(
                        "RLE size [{}, {}] does not match canvas [{height}, {width}]",
                        size[0], size[1]
                    ),
                });
            }
            let runs = match counts {
                RleCounts::Runs(r) => r.clone(),
                RleCounts::Compressed(s) => rle_from_string(s)?,
            };
            decode_rle(&runs, width, height)
        }
        EncodedMask::Polygons(polys) => {
            if polys.is_empty() {
                return Err(Error::InvalidPolygon("no polygons".into()));
            }
            let mut out = vec![false; width * height];
            for poly in polys {
                let bits = rasterize_polygon(poly, width, height)?;
                for (o, b) in out.iter_mut().zip(bits) {
                    *o |= b;
                }
            }
            Ok(out)
        }
    }
}

/// Compressed RLE wire form of a bitmap.
pub fn encode_object_mask(bits: &[bool], width: usize, height: usize) -> EncodedMask {
    EncodedMask::Rle {
        size: [height, width],
        counts: RleCounts::Compressed(rle_to_string(&encode_rle(bits, width, height))),
    }
}
