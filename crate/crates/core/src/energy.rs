//! The object-aware seam energy.
//!
//! Five weighted terms over a label field on the mosaic canvas:
//! data (`λ_d`), patch smoothness (`λ_s`), local crop (`λ_c`), bounding-box
//! duplication (`λ_r`) and occlusion promotion (`λ_o`). Each term can be
//! queried on its own; [`EnergyModel::total_energy`] sums them.
//!
//! Besides the definitional evaluators the model keeps a factor-graph view
//! (unary table, 4-neighbour edges, long-range edges) that the solvers use.
//! Both views give the same number for every labeling.

use serde::{Deserialize, Serialize};

use crate::correspondence::{ObjectMatchSet, ObjectRef};
use crate::error::{Error, Result};
use crate::model::{BBox, DetectedObject, Label, LabelField, Point, Raster};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyParams {
    pub lambda_d: f64,
    pub lambda_s: f64,
    pub lambda_c: f64,
    pub lambda_r: f64,
    /// Falls back to `lambda_d` when unset.
    pub lambda_o: Option<f64>,
    /// Extra data cost of the occlusion label.
    pub delta: f64,
    /// Patch radius (L1) of the smoothness comparison.
    pub radius: usize,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            lambda_d: 50.0,
            lambda_s: 1.0,
            lambda_c: 4.0,
            lambda_r: 4.0,
            lambda_o: None,
            delta: 0.5,
            radius: 1,
        }
    }
}

impl EnergyParams {
    pub fn lambda_o(&self) -> f64 {
        self.lambda_o.unwrap_or(self.lambda_d)
    }

    /// Copy with `lambda_o` made explicit.
    pub fn resolved(&self) -> Self {
        Self {
            lambda_o: Some(self.lambda_o()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [
            self.lambda_d,
            self.lambda_s,
            self.lambda_c,
            self.lambda_r,
            self.lambda_o(),
        ];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("energy weights must be finite and >= 0".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Config("energy.delta must be > 0".into()));
        }
        Ok(())
    }
}

/// Weighted per-term energies.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EnergyBreakdown {
    pub data: f64,
    pub smoothness: f64,
    pub crop: f64,
    pub duplication: f64,
    pub occlusion: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.data + self.smoothness + self.crop + self.duplication + self.occlusion
    }
}

/// A pairwise term between arbitrary pixels: costs `weight` when
/// `x_p = la` and `x_q = lb` (labels as wire codes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongEdge {
    pub p: usize,
    pub q: usize,
    pub la: usize,
    pub lb: usize,
    pub weight: f64,
}

/// Maps `p` from `b1` to the point with the same normalized coordinates in `b2`.
pub fn bbox_bilinear_map(p: Point, b1: &BBox, b2: &BBox) -> Result<Point> {
    for b in [b1, b2] {
        if !(b.w > 0.0 && b.h > 0.0) {
            return Err(Error::DegenerateBox(b.as_array()));
        }
    }
    let u = (p.x - b1.x) / b1.w;
    let v = (p.y - b1.y) / b1.h;
    Ok(Point::new(b2.x + u * b2.w, b2.y + v * b2.h))
}

/// Offsets (relative to `p`) of every pixel within L1 distance `r` of `p`
/// or of `p + step`, each listed once.
fn patch_offsets(r: usize, step: (i64, i64)) -> Vec<(i64, i64)> {
    let r = r as i64;
    let mut out = Vec::new();
    for dy in -r - 1..=r + 1 {
        for dx in -r - 1..=r + 1 {
            let near_p = dx.abs() + dy.abs() <= r;
            let near_q = (dx - step.0).abs() + (dy - step.1).abs() <= r;
            if near_p || near_q {
                out.push((dx, dy));
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct EnergyModel {
    width: usize,
    height: usize,
    sources: Vec<Raster>,
    objects: Vec<Vec<DetectedObject>>,
    matches: ObjectMatchSet,
    params: EnergyParams,
    i_max: f64,
    h_offsets: Vec<(i64, i64)>,
    v_offsets: Vec<(i64, i64)>,
    // factor-graph view
    edges: Vec<(usize, usize)>,
    /// Per edge, per unordered source pair: unweighted patch difference.
    pair_smooth: Vec<f64>,
    /// Per pixel, per label code: number of objects of that source covering it.
    crop_count: Vec<u32>,
    unary: Vec<f64>,
    long_edges: Vec<LongEdge>,
}

impl EnergyModel {
    /// `sources` are the warped rasters on a common canvas; `objects[i]`
    /// are the detections of source `i` in the canvas frame.
    pub fn new(
        sources: Vec<Raster>,
        objects: Vec<Vec<DetectedObject>>,
        matches: ObjectMatchSet,
        params: EnergyParams,
    ) -> Result<Self> {
        params.validate()?;
        let first = sources
            .first()
            .ok_or_else(|| Error::InvalidParams("at least one source is required".into()))?;
        let (width, height) = first.dims();
        for s in &sources {
            if s.dims() != (width, height) {
                return Err(Error::DimensionMismatch(format!(
                    "source {:?} vs canvas {:?}",
                    s.dims(),
                    (width, height)
                )));
            }
            if s.channels() != first.channels() {
                return Err(Error::DimensionMismatch("sources differ in channel count".into()));
            }
        }
        if sources.len() >= u16::MAX as usize {
            return Err(Error::InvalidParams("too many sources".into()));
        }
        if objects.len() != sources.len() {
            return Err(Error::InvalidParams(format!(
                "{} detection lists for {} sources",
                objects.len(),
                sources.len()
            )));
        }
        let mut clipped = Vec::with_capacity(objects.len());
        for (s, list) in objects.into_iter().enumerate() {
            let mut out = Vec::with_capacity(list.len());
            for mut o in list {
                if o.source != s {
                    return Err(Error::InvalidDetection(format!(
                        "detection of source {} listed under source {s}",
                        o.source
                    )));
                }
                o.mask = o.mask.clipped(width, height)?;
                out.push(o);
            }
            clipped.push(out);
        }
        for c in &matches.classes {
            for r in c {
                if r.source >= clipped.len() || r.index >= clipped[r.source].len() {
                    return Err(Error::InvalidParams(format!("match class refers to missing {r:?}")));
                }
            }
        }
        let mut model = Self {
            width,
            height,
            sources,
            objects: clipped,
            matches,
            h_offsets: patch_offsets(params.radius, (1, 0)),
            v_offsets: patch_offsets(params.radius, (0, 1)),
            params,
            i_max: 0.0,
            edges: Vec::new(),
            pair_smooth: Vec::new(),
            crop_count: Vec::new(),
            unary: Vec::new(),
            long_edges: Vec::new(),
        };
        model.build_graph();
        Ok(model)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    /// `k + 1`: the sources plus the occlusion label.
    pub fn num_labels(&self) -> usize {
        self.sources.len() + 1
    }

    pub fn sources(&self) -> &[Raster] {
        &self.sources
    }

    pub fn objects(&self) -> &[Vec<DetectedObject>] {
        &self.objects
    }

    pub fn object(&self, r: ObjectRef) -> &DetectedObject {
        &self.objects[r.source][r.index]
    }

    pub fn matches(&self) -> &ObjectMatchSet {
        &self.matches
    }

    pub fn params(&self) -> &EnergyParams {
        &self.params
    }

    /// Largest patch difference over all neighbour pairs and source pairs;
    /// the cost of stepping into or out of the occlusion label.
    pub fn i_max(&self) -> f64 {
        self.i_max
    }

    fn in_mask(&self, idx: usize, l: Label) -> bool {
        l.source().is_some_and(|s| self.sources[s].mask()[idx])
    }

    /// Unweighted data cost: 0 for an in-mask source, 1 for an out-of-mask
    /// source, `1 + δ` for occlusion.
    pub fn data_cost(&self, p: (usize, usize), l: Label) -> f64 {
        match l {
            Label::Occluded => 1.0 + self.params.delta,
            Label::Source(_) => {
                if self.in_mask(p.1 * self.width + p.0, l) {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }

    /// L1 colour difference of sources `a` and `b` at pixel `k`; 0 where
    /// either is invalid.
    fn pixel_diff(&self, a: usize, b: usize, k: usize) -> f64 {
        let (sa, sb) = (&self.sources[a], &self.sources[b]);
        if !(sa.mask()[k] && sb.mask()[k]) {
            return 0.0;
        }
        sa.pixel(k)
            .iter()
            .zip(sb.pixel(k))
            .map(|(&x, &y)| (x as f64 - y as f64).abs())
            .sum()
    }

    fn patch_diff(&self, p: (usize, usize), offsets: &[(i64, i64)], a: usize, b: usize) -> f64 {
        let mut sum = 0.0;
        for &(dx, dy) in offsets {
            let (x, y) = (p.0 as i64 + dx, p.1 as i64 + dy);
            if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
                continue;
            }
            sum += self.pixel_diff(a, b, y as usize * self.width + x as usize);
        }
        sum
    }

    /// Unweighted smoothness cost of neighbours `p`, `q` labeled `lp`, `lq`.
    pub fn smoothness_cost(
        &self,
        p: (usize, usize),
        q: (usize, usize),
        lp: Label,
        lq: Label,
    ) -> Result<f64> {
        let adjacent = p.0.abs_diff(q.0) + p.1.abs_diff(q.1) == 1;
        if !adjacent || q.0 >= self.width || q.1 >= self.height || p.0 >= self.width || p.1 >= self.height {
            return Err(Error::NotAdjacent(p, q));
        }
        if lp == lq {
            return Ok(0.0);
        }
        match (lp.source(), lq.source()) {
            (Some(a), Some(b)) => {
                let first = if (p.1, p.0) < (q.1, q.0) { p } else { q };
                let offsets = if p.1 == q.1 { &self.h_offsets } else { &self.v_offsets };
                Ok(self.patch_diff(first, offsets, a, b))
            }
            _ => Ok(self.i_max),
        }
    }

    /// Unweighted local crop cost of object `o` for label `l`: ordered pairs
    /// `(p ∈ o, q ∈ N(p))` with `x_p = l` and `x_q ≠ l`.
    pub fn crop_cost(&self, labeling: &LabelField, o: &DetectedObject, l: Label) -> f64 {
        let mut n = 0u64;
        for (x, y) in o.mask.pixels() {
            if labeling.get(x, y) != l {
                continue;
            }
            for (nx, ny) in self.neighbours(x, y) {
                if labeling.get(nx, ny) != l {
                    n += 1;
                }
            }
        }
        n as f64
    }

    fn neighbours(&self, x: usize, y: usize) -> impl Iterator<Item = (usize, usize)> {
        let (w, h) = (self.width, self.height);
        [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ]
        .into_iter()
        .filter(move |&(a, b)| a < w && b < h)
    }

    /// Canvas pixel paired with `p ∈ o1` in `o2`: the bounding-box map of
    /// the pixel center, taken to the pixel containing it. `None` off canvas.
    pub fn mapped_pixel(&self, p: (usize, usize), o1: &DetectedObject, o2: &DetectedObject) -> Option<(usize, usize)> {
        let c = Point::new(p.0 as f64 + 0.5, p.1 as f64 + 0.5);
        bbox_bilinear_map(c, &o1.bbox, &o2.bbox)
            .ok()?
            .pixel(self.width, self.height)
    }

    /// Unweighted duplication cost of a matched pair: pixels `p ∈ o1` with
    /// `x_p` = source of `o1` while the mapped pixel carries the source of `o2`.
    pub fn duplication_cost(&self, labeling: &LabelField, o1: &DetectedObject, o2: &DetectedObject) -> f64 {
        let (l1, l2) = (Label::Source(o1.source as u16), Label::Source(o2.source as u16));
        let mut n = 0u64;
        for p in o1.mask.pixels() {
            if labeling.get(p.0, p.1) != l1 {
                continue;
            }
            if let Some(q) = self.mapped_pixel(p, o1, o2) {
                if q != p && labeling.get(q.0, q.1) == l2 {
                    n += 1;
                }
            }
        }
        n as f64
    }

    /// Unweighted occlusion cost of a matched pair: `2δ` for every pixel of
    /// either object labeled with that object's source where the source has no data.
    pub fn occlusion_cost(&self, labeling: &LabelField, o1: &DetectedObject, o2: &DetectedObject) -> f64 {
        let mut n = 0u64;
        for o in [o1, o2] {
            let l = Label::Source(o.source as u16);
            for (x, y) in o.mask.pixels() {
                if labeling.get(x, y) == l && !self.in_mask(y * self.width + x, l) {
                    n += 1;
                }
            }
        }
        2.0 * self.params.delta * n as f64
    }

    /// The weighted energy of `labeling`, term by term.
    pub fn total_energy(&self, labeling: &LabelField) -> Result<EnergyBreakdown> {
        if (labeling.width(), labeling.height()) != (self.width, self.height) {
            return Err(Error::DimensionMismatch(format!(
                "labeling {}x{} on canvas {}x{}",
                labeling.width(),
                labeling.height(),
                self.width,
                self.height
            )));
        }
        let k = self.num_sources();
        if let Some(bad) = labeling.labels().iter().find(|l| l.source().is_some_and(|s| s >= k)) {
            return Err(Error::InvalidParams(format!("label {bad} exceeds {k} sources")));
        }
        let p = &self.params;
        let mut data = 0.0;
        let mut smooth = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let l = labeling.get(x, y);
                data += self.data_cost((x, y), l);
                if x + 1 < self.width {
                    smooth += self.smoothness_cost((x, y), (x + 1, y), l, labeling.get(x + 1, y))?;
                }
                if y + 1 < self.height {
                    smooth += self.smoothness_cost((x, y), (x, y + 1), l, labeling.get(x, y + 1))?;
                }
            }
        }
        let mut crop = 0.0;
        for (s, list) in self.objects.iter().enumerate() {
            for o in list {
                crop += self.crop_cost(labeling, o, Label::Source(s as u16));
            }
        }
        let mut dup = 0.0;
        let mut occ = 0.0;
        for (a, b) in self.matches.member_pairs() {
            let (o1, o2) = (self.object(a), self.object(b));
            dup += self.duplication_cost(labeling, o1, o2);
            occ += self.occlusion_cost(labeling, o1, o2);
        }
        Ok(EnergyBreakdown {
            data: p.lambda_d * data,
            smoothness: p.lambda_s * smooth,
            crop: p.lambda_c * crop,
            duplication: p.lambda_r * dup,
            occlusion: p.lambda_o() * occ,
        })
    }

    // ---- factor-graph view ----

    fn pair_index(&self, a: usize, b: usize) -> usize {
        let (i, j) = (a.min(b), a.max(b));
        let k = self.num_sources();
        i * k - i * (i + 1) / 2 + (j - i - 1)
    }

    fn build_graph(&mut self) {
        let (w, h) = (self.width, self.height);
        let k = self.num_sources();
        let nl = k + 1;
        let npairs = k * k.saturating_sub(1) / 2;
        for y in 0..h {
            for x in 0..w {
                if x + 1 < w {
                    self.edges.push((y * w + x, y * w + x + 1));
                }
                if y + 1 < h {
                    self.edges.push((y * w + x, (y + 1) * w + x));
                }
            }
        }
        let mut pair_smooth = vec![0.0; self.edges.len() * npairs];
        for (e, &(p, q)) in self.edges.iter().enumerate() {
            let offsets = if q == p + 1 { &self.h_offsets } else { &self.v_offsets };
            for a in 0..k {
                for b in a + 1..k {
                    pair_smooth[e * npairs + self.pair_index(a, b)] =
                        self.patch_diff((p % w, p / w), offsets, a, b);
                }
            }
        }
        self.i_max = pair_smooth.iter().copied().fold(0.0, f64::max);
        self.pair_smooth = pair_smooth;

        let mut crop_count = vec![0u32; w * h * nl];
        for (s, list) in self.objects.iter().enumerate() {
            for o in list {
                for (x, y) in o.mask.pixels() {
                    crop_count[(y * w + x) * nl + s + 1] += 1;
                }
            }
        }
        self.crop_count = crop_count;

        let prm = self.params.clone();
        let mut occl_count = vec![0u32; w * h * nl];
        let mut long_edges = Vec::new();
        for (ra, rb) in self.matches.member_pairs() {
            let (o1, o2) = (self.object(ra), self.object(rb));
            for o in [o1, o2] {
                for (x, y) in o.mask.pixels() {
                    let idx = y * w + x;
                    if !self.sources[o.source].mask()[idx] {
                        occl_count[idx * nl + o.source + 1] += 1;
                    }
                }
            }
            if prm.lambda_r > 0.0 {
                for p in o1.mask.pixels() {
                    if let Some(q) = self.mapped_pixel(p, o1, o2) {
                        if q != p {
                            long_edges.push(LongEdge {
                                p: p.1 * w + p.0,
                                q: q.1 * w + q.0,
                                la: o1.source + 1,
                                lb: o2.source + 1,
                                weight: prm.lambda_r,
                            });
                        }
                    }
                }
            }
        }
        self.long_edges = long_edges;

        let lo = prm.lambda_o();
        let mut unary = vec![0.0; w * h * nl];
        for idx in 0..w * h {
            unary[idx * nl] = prm.lambda_d * (1.0 + prm.delta);
            for s in 0..k {
                let d = if self.sources[s].mask()[idx] { 0.0 } else { 1.0 };
                let oc = occl_count[idx * nl + s + 1];
                let mut u = prm.lambda_d * d;
                if oc > 0 {
                    u += lo * (2.0 * prm.delta * oc as f64);
                }
                unary[idx * nl + s + 1] = u;
            }
        }
        self.unary = unary;
    }

    /// Weighted unary cost of label code `l` at pixel index `p`.
    #[inline]
    pub fn unary(&self, p: usize, l: usize) -> f64 {
        self.unary[p * self.num_labels() + l]
    }

    /// 4-neighbour edges `(p, q)` with `p < q`, as pixel indices.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Weighted smoothness plus crop cost of edge `e` for label codes `a`, `b`.
    #[inline]
    pub fn edge_cost(&self, e: usize, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        let nl = self.num_labels();
        let (p, q) = self.edges[e];
        let s = if a == 0 || b == 0 {
            self.i_max
        } else {
            let npairs = self.num_sources() * (self.num_sources() - 1) / 2;
            self.pair_smooth[e * npairs + self.pair_index(a - 1, b - 1)]
        };
        let crop = self.crop_count[p * nl + a] + self.crop_count[q * nl + b];
        let mut c = self.params.lambda_s * s;
        if crop > 0 {
            c += self.params.lambda_c * crop as f64;
        }
        c
    }

    pub fn long_edges(&self) -> &[LongEdge] {
        &self.long_edges
    }

    /// Energy of a labeling given as label codes, through the factor graph.
    pub fn graph_energy(&self, codes: &[usize]) -> f64 {
        let mut e = 0.0;
        for (p, &l) in codes.iter().enumerate() {
            e += self.unary(p, l);
        }
        for (i, &(p, q)) in self.edges.iter().enumerate() {
            e += self.edge_cost(i, codes[p], codes[q]);
        }
        for le in &self.long_edges {
            if codes[le.p] == le.la && codes[le.q] == le.lb {
                e += le.weight;
            }
        }
        e
    }

    /// Label codes of a field, for the factor-graph interface.
    pub fn codes_of(labeling: &LabelField) -> Vec<usize> {
        labeling.labels().iter().map(|l| l.code() as usize).collect()
    }

    pub fn field_from_codes(&self, codes: &[usize]) -> LabelField {
        LabelField::new(
            self.width,
            self.height,
            codes.iter().map(|&c| Label::from_code(c as u16)).collect(),
        )
        .expect("codes cover the canvas")
    }
}
