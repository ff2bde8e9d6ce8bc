//! End-to-end runs: stitching, evaluation of a finished mosaic, and the
//! exact-versus-heuristic comparison on tiny models.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::blend::{composite, poisson_blend, render_occlusion, SolveStats};
use crate::correspondence::{build_equivalence, match_objects, ObjectMatchSet, ObjectPair, ObjectRef};
use crate::energy::{EnergyBreakdown, EnergyModel, EnergyParams};
use crate::error::{Error, Result};
use crate::eval::{count_report, crop_score_direct, crop_score_template, CategoryCount, ObjectScore, WarpedInput};
use crate::io::{CanvasPolicy, DetectionSet, FlowFile, StitchConfig};
use crate::model::{BBox, DetectedObject, Label, LabelField, ObjectMask, Point, PointMatch, PointMatchSet, Raster};
use crate::registration::{
    cpw_refine, estimate_homography, similarity_deviation, warp_image, Canvas, FlowSample, Homography, MeshWarp,
};
use crate::solver::{alpha_expansion, brute_force_minimize, initial_labeling, MoveStat, MAX_LABELINGS};

/// Format tag carried by every report.
pub const REPORT_VERSION: &str = "spec=1";

/// How one image was placed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegistrationSummary {
    pub image: usize,
    /// Row-major homography into the target frame.
    pub homography: [[f64; 3]; 3],
    pub inliers: usize,
    pub similarity_deviation: f64,
    /// Surviving candidate homographies; the first was used.
    pub candidates: usize,
    pub mesh: Option<MeshSummary>,
}

/// Mesh refinement applied on top of a homography.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshSummary {
    /// `"flow"` for a flow file, `"matches"` for the registration inliers.
    pub source: &'static str,
    pub samples: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CanvasSummary {
    pub width: usize,
    pub height: usize,
    pub offset: (i64, i64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtraFields {
    pub image_id: usize,
    pub index: usize,
    pub fields: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectSummary {
    pub per_image: Vec<usize>,
    pub classes: Vec<Vec<ObjectRef>>,
    pub pairs: Vec<ObjectPair>,
    pub threshold: f64,
    /// Detections that fell entirely off the canvas.
    pub dropped: Vec<ObjectRef>,
    pub extras: Vec<ExtraFields>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermEnergies {
    pub data: f64,
    pub smoothness: f64,
    pub crop: f64,
    pub duplication: f64,
    pub occlusion: f64,
    pub total: f64,
}

impl From<EnergyBreakdown> for TermEnergies {
    fn from(e: EnergyBreakdown) -> Self {
        Self {
            data: e.data,
            smoothness: e.smoothness,
            crop: e.crop,
            duplication: e.duplication,
            occlusion: e.occlusion,
            total: e.total(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSummary {
    pub initial: TermEnergies,
    pub energy_trace: Vec<f64>,
    pub cycles: usize,
    pub converged: bool,
    pub moves: Vec<MoveStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StitchReport {
    pub version: &'static str,
    pub command: &'static str,
    pub canvas: CanvasSummary,
    pub registration: Vec<RegistrationSummary>,
    pub objects: ObjectSummary,
    pub energy: TermEnergies,
    pub solver: SolverSummary,
    pub blend: SolveStats,
    /// Pixel count per label, occlusion first.
    pub label_counts: Vec<(String, usize)>,
    pub config: StitchConfig,
}

#[derive(Debug, Clone)]
pub struct StitchOutput {
    /// Blended and occlusion-rendered mosaic.
    pub mosaic: Raster,
    pub labeling: LabelField,
    /// Each input resampled onto the canvas.
    pub warped: Vec<Raster>,
    /// Input → canvas homography of each input.
    pub to_canvas: Vec<Homography>,
    /// Detections in canvas coordinates, per input.
    pub objects: Vec<Vec<DetectedObject>>,
    pub report: StitchReport,
}

/// Matches between `a` and `b` oriented so `p` lies in `a`.
fn oriented(matches: &[PointMatchSet], a: usize, b: usize) -> Option<PointMatchSet> {
    matches.iter().find_map(|m| {
        if (m.image_a, m.image_b) == (a, b) {
            Some(m.clone())
        } else if (m.image_a, m.image_b) == (b, a) {
            Some(m.reversed())
        } else {
            None
        }
    })
}

/// Homography from image `a` into image `b` with its summary and the
/// inlier matches that support it.
fn register(
    matches: &[PointMatchSet],
    a: usize,
    b: usize,
    dims_a: (usize, usize),
    cfg: &StitchConfig,
) -> Result<(Homography, RegistrationSummary, Vec<PointMatch>)> {
    let ms = oriented(matches, a, b).ok_or(Error::InsufficientMatches(0))?;
    let cands = estimate_homography(&ms, &cfg.ransac, dims_a, cfg.seed.wrapping_add(a as u64))?;
    let best = cands.first().ok_or(Error::NoRegistration)?;
    let summary = RegistrationSummary {
        image: a,
        homography: best.homography.to_rows(),
        inliers: best.inliers.len(),
        similarity_deviation: similarity_deviation(&best.homography, dims_a),
        candidates: cands.len(),
        mesh: None,
    };
    let inliers = best.inliers.iter().map(|&k| ms.pairs[k]).collect();
    Ok((best.homography, summary, inliers))
}

/// Carries a detection onto the canvas with the same resampling as its
/// image. `None` when nothing of it lands on the canvas.
pub fn warp_object(
    o: &DetectedObject,
    src_dims: (usize, usize),
    to_canvas: &Homography,
    mesh: Option<&MeshWarp>,
    canvas: (usize, usize),
) -> Result<Option<DetectedObject>> {
    let (w, h) = src_dims;
    let mut ind = Raster::filled(w, h, 1, 0.0)?;
    for (x, y) in o.mask.pixels() {
        if x < w && y < h {
            ind.set(x, y, 0, 1.0);
        }
    }
    let warped = warp_image(&ind, to_canvas, mesh, canvas)?;
    let bits: Vec<bool> = (0..canvas.0 * canvas.1)
        .map(|i| warped.mask()[i] && warped.pixel(i)[0] >= 0.5)
        .collect();
    if !bits.iter().any(|&b| b) {
        return Ok(None);
    }
    let mask = ObjectMask::from_canvas(&bits, canvas.0, canvas.1)?;
    let (x, y, bw, bh) = mask.extent();
    let bbox = BBox::new(x as f64, y as f64, bw as f64, bh as f64);
    DetectedObject::new(o.source, o.category.clone(), o.score, bbox, mask).map(Some)
}

/// Residual motion of inlier matches (candidate `p`, reference `q`) left
/// after the global warp, as flow samples in the canvas frame.
fn inlier_flow(inliers: &[PointMatch], to_canvas: &Homography, offset: (f64, f64)) -> Vec<FlowSample> {
    inliers
        .iter()
        .filter_map(|m| {
            let at = to_canvas.apply(m.p)?;
            let target = Point::new(m.q.x + offset.0, m.q.y + offset.1);
            Some(FlowSample { at, flow: target - at })
        })
        .collect()
}

/// Drops detections and renumbers the match set to the survivors.
fn retain_objects(
    objects: Vec<Vec<Option<DetectedObject>>>,
    matches: ObjectMatchSet,
) -> (Vec<Vec<DetectedObject>>, ObjectMatchSet, Vec<ObjectRef>) {
    let mut remap: Vec<Vec<Option<usize>>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (s, list) in objects.into_iter().enumerate() {
        let mut ids = Vec::new();
        let mut out = Vec::new();
        for (i, o) in list.into_iter().enumerate() {
            match o {
                Some(o) => {
                    ids.push(Some(out.len()));
                    out.push(o);
                }
                None => {
                    ids.push(None);
                    dropped.push(ObjectRef { source: s, index: i });
                }
            }
        }
        remap.push(ids);
        kept.push(out);
    }
    let map = |r: &ObjectRef| {
        remap[r.source][r.index].map(|index| ObjectRef {
            source: r.source,
            index,
        })
    };
    let classes = matches
        .classes
        .iter()
        .map(|c| c.iter().filter_map(map).collect::<Vec<_>>())
        .filter(|c| !c.is_empty())
        .collect();
    let pairs = matches
        .pairs
        .iter()
        .filter_map(|p| {
            Some(ObjectPair {
                a: map(&p.a)?,
                b: map(&p.b)?,
                density: p.density,
            })
        })
        .collect();
    (
        kept,
        ObjectMatchSet {
            classes,
            pairs,
            threshold: matches.threshold,
        },
        dropped,
    )
}

/// Registration, object matching, seam optimization, blending and
/// occlusion rendering. Image 0 is the reference.
pub fn stitch(
    images: &[Raster],
    detections: &DetectionSet,
    matches: &[PointMatchSet],
    flows: &[FlowFile],
    cfg: &StitchConfig,
) -> Result<StitchOutput> {
    cfg.validate()?;
    if images.len() < 2 {
        return Err(Error::InvalidParams("at least two images are required".into()));
    }
    // mixed gray and colour inputs are all stitched in colour
    let channels = images.iter().map(Raster::channels).max().unwrap_or(1);
    let images: Vec<Raster> = images
        .iter()
        .map(|r| if r.channels() == channels { r.clone() } else { r.to_rgb() })
        .collect();
    let dims: Vec<(usize, usize)> = images.iter().map(Raster::dims).collect();
    let mut objects_src = detections.objects.clone();
    objects_src.resize(images.len(), Vec::new());

    // registration into the reference frame
    let mut to_ref = vec![Homography::identity()];
    let mut registration = vec![RegistrationSummary {
        image: 0,
        homography: Homography::identity().to_rows(),
        inliers: 0,
        similarity_deviation: 0.0,
        candidates: 1,
        mesh: None,
    }];
    let mut inliers = vec![Vec::new()];
    for i in 1..images.len() {
        let (h, s, inl) = register(matches, i, 0, dims[i], cfg)?;
        to_ref.push(h);
        registration.push(s);
        inliers.push(inl);
    }
    let canvas = match cfg.canvas {
        CanvasPolicy::Union => {
            let cands: Vec<(Homography, (usize, usize))> =
                (1..images.len()).map(|i| (to_ref[i], dims[i])).collect();
            Canvas::enclosing(dims[0], &cands)?
        }
        CanvasPolicy::Reference => Canvas {
            width: dims[0].0,
            height: dims[0].1,
            offset: (0, 0),
        },
    };
    let cdims = canvas.dims();
    let shift = canvas.reference_transform();
    let to_canvas: Vec<Homography> = to_ref.iter().map(|h| shift.compose(h)).collect::<Result<_>>()?;

    let mut meshes: Vec<Option<MeshWarp>> = vec![None; images.len()];
    if cfg.use_mesh {
        let offset = (canvas.offset.0 as f64, canvas.offset.1 as f64);
        for i in 1..images.len() {
            // a flow file wins; otherwise the registration inliers serve as sparse flow
            let (source, samples) = match flows.iter().find(|f| f.image == i) {
                Some(f) => ("flow", f.samples(cfg.flow_stride, offset)),
                None => ("matches", inlier_flow(&inliers[i], &to_canvas[i], offset)),
            };
            match cpw_refine(&to_canvas[i], dims[i], &samples, &cfg.mesh) {
                Ok(m) => {
                    registration[i].mesh = Some(MeshSummary {
                        source,
                        samples: samples.len(),
                        objective: m.objective(),
                    });
                    meshes[i] = Some(m);
                }
                // too few samples to pin the mesh: keep the plain homography
                Err(Error::IllPosed(_)) if source == "matches" => {}
                Err(e) => return Err(e),
            }
        }
    }

    let warped: Vec<Raster> = (0..images.len())
        .map(|i| warp_image(&images[i], &to_canvas[i], meshes[i].as_ref(), cdims))
        .collect::<Result<_>>()?;
    let warped_objects: Vec<Vec<Option<DetectedObject>>> = (0..images.len())
        .map(|i| {
            objects_src[i]
                .iter()
                .map(|o| warp_object(o, dims[i], &to_canvas[i], meshes[i].as_ref(), cdims))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    let equivalence = build_equivalence(&objects_src, matches, &cfg.density)?;
    let (objects, equivalence, dropped) = retain_objects(warped_objects, equivalence);

    let params = cfg.energy.resolved();
    let model = EnergyModel::new(warped.clone(), objects.clone(), equivalence.clone(), params.clone())?;
    let init = initial_labeling(&model);
    let initial = model.total_energy(&init)?;
    let solved = alpha_expansion(&model, &init, &cfg.solver)?;
    let labeling = solved.labeling.clone();

    let comp = composite(&labeling, &warped)?;
    let (blended, blend_stats) = poisson_blend(&comp, &labeling, &warped, &cfg.blend)?;
    let mosaic = render_occlusion(&blended, &labeling, cfg.occlusion_mode)?;

    let mut label_counts: Vec<(String, usize)> = Label::all(images.len())
        .into_iter()
        .map(|l| (l.to_string(), 0))
        .collect();
    for l in labeling.labels() {
        label_counts[l.code() as usize].1 += 1;
    }
    let mut resolved = cfg.clone();
    resolved.energy = params;
    let report = StitchReport {
        version: REPORT_VERSION,
        command: "stitch",
        canvas: CanvasSummary {
            width: canvas.width,
            height: canvas.height,
            offset: canvas.offset,
        },
        registration,
        objects: ObjectSummary {
            per_image: objects.iter().map(Vec::len).collect(),
            classes: equivalence.classes.clone(),
            pairs: equivalence.pairs.clone(),
            threshold: equivalence.threshold,
            dropped,
            extras: detections
                .extras
                .iter()
                .map(|(image_id, index, fields)| ExtraFields {
                    image_id: *image_id,
                    index: *index,
                    fields: fields.clone(),
                })
                .collect(),
        },
        energy: solved.energy.into(),
        solver: SolverSummary {
            initial: initial.into(),
            energy_trace: solved.energy_trace.clone(),
            cycles: solved.cycles,
            converged: solved.converged,
            moves: solved.moves.clone(),
        },
        blend: blend_stats,
        label_counts,
        config: resolved,
    };
    Ok(StitchOutput {
        mosaic,
        labeling,
        warped,
        to_canvas,
        objects,
        report,
    })
}

/// Registration of one input into the evaluated mosaic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlausibleWarp {
    pub image: usize,
    /// `None` when the input could not be registered; its crop scores are skipped.
    pub registration: Option<RegistrationSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluateReport {
    pub version: &'static str,
    pub command: &'static str,
    pub warps: Vec<PlausibleWarp>,
    pub classes: Vec<Vec<ObjectRef>>,
    pub categories: Vec<CategoryCount>,
    pub all: CategoryCount,
    pub objects: Vec<ObjectScore>,
    pub config: StitchConfig,
}

/// Scores a finished mosaic against its inputs. Detections and matches
/// index inputs `0..n` and the mosaic as `n`; input-to-input matches build
/// the expected classes, mosaic-to-input matches register each input onto
/// the mosaic and pair objects.
pub fn evaluate(
    mosaic: &Raster,
    inputs: &[Raster],
    detections: &DetectionSet,
    matches: &[PointMatchSet],
    cfg: &StitchConfig,
) -> Result<EvaluateReport> {
    cfg.validate()?;
    let n = inputs.len();
    let mut dets = detections.objects.clone();
    dets.resize(n + 1, Vec::new());
    let out_objs = dets[n].clone();
    let in_objs: Vec<Vec<DetectedObject>> = dets[..n].to_vec();
    let input_matches: Vec<PointMatchSet> = matches
        .iter()
        .filter(|m| m.image_a < n && m.image_b < n)
        .cloned()
        .collect();
    let equivalence = build_equivalence(&in_objs, &input_matches, &cfg.density)?;
    let mut report = count_report(&out_objs, &in_objs, &equivalence);

    let mdims = mosaic.dims();
    let mut warps = Vec::new();
    let mut warped_inputs = Vec::new();
    let mut pairs: Vec<(usize, ObjectRef)> = Vec::new();
    for (i, img) in inputs.iter().enumerate() {
        match register(matches, i, n, img.dims(), cfg) {
            Ok((h, s, _)) => {
                let image = warp_image(img, &h, None, mdims)?;
                let mut objects = Vec::new();
                for o in &in_objs[i] {
                    // keep indices aligned; off-mosaic objects become empty boxes
                    objects.push(warp_object(o, img.dims(), &h, None, mdims)?.unwrap_or_else(|| o.clone()));
                }
                if let Some(ms) = oriented(matches, n, i) {
                    for (o, j, _) in match_objects(&out_objs, &in_objs[i], &ms, &cfg.density)? {
                        pairs.push((o, ObjectRef { source: i, index: j }));
                    }
                }
                warped_inputs.push(WarpedInput { image, objects });
                warps.push(PlausibleWarp {
                    image: i,
                    registration: Some(s),
                    error: None,
                });
            }
            Err(e) => {
                warped_inputs.push(WarpedInput {
                    image: Raster::filled(1, 1, img.channels(), 0.0)?,
                    objects: Vec::new(),
                });
                warps.push(PlausibleWarp {
                    image: i,
                    registration: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    pairs.sort();
    let direct = crop_score_direct(mosaic, &out_objs, &warped_inputs, &pairs, &cfg.ms_ssim)?;
    let mut searches: Vec<&Raster> = warps
        .iter()
        .zip(&warped_inputs)
        .filter(|(w, _)| w.registration.is_some())
        .map(|(_, wi)| &wi.image)
        .collect();
    if let Some(first) = inputs.first() {
        searches.push(first);
    }
    let template = crop_score_template(mosaic, &out_objs, &searches)?;
    report.objects = out_objs
        .iter()
        .enumerate()
        .map(|(k, o)| ObjectScore {
            output_index: k,
            category: o.category.clone(),
            matched: pairs.iter().filter(|(i, _)| *i == k).map(|(_, r)| *r).collect(),
            ms_ssim_avg: direct[k].0,
            ms_ssim_max: direct[k].1,
            template: template[k],
        })
        .collect();
    Ok(EvaluateReport {
        version: REPORT_VERSION,
        command: "evaluate",
        warps,
        classes: equivalence.classes,
        categories: report.categories,
        all: report.all,
        objects: report.objects,
        config: cfg.clone(),
    })
}

/// A serialized tiny model for exact comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleInstance {
    pub width: usize,
    pub height: usize,
    #[serde(default = "one")]
    pub channels: usize,
    pub sources: Vec<InstanceSource>,
    #[serde(default)]
    pub objects: Vec<Vec<InstanceObject>>,
    /// Equivalence classes over `objects`.
    #[serde(default)]
    pub classes: Vec<Vec<ObjectRef>>,
    /// Overrides the configured energy parameters.
    #[serde(default)]
    pub params: Option<EnergyParams>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSource {
    /// Row-major, interleaved channels.
    pub data: Vec<f32>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceObject {
    pub category: String,
    pub pixels: Vec<[usize; 2]>,
}

impl OracleInstance {
    pub fn to_model(&self, fallback: &EnergyParams) -> Result<EnergyModel> {
        let sources = self
            .sources
            .iter()
            .map(|s| Raster::new(self.width, self.height, self.channels, s.data.clone(), s.mask.clone()))
            .collect::<Result<Vec<_>>>()?;
        let mut objects = vec![Vec::new(); sources.len()];
        for (s, list) in self.objects.iter().enumerate() {
            if s >= sources.len() {
                return Err(Error::InvalidDetection(format!("objects listed for missing source {s}")));
            }
            for o in list {
                let px: Vec<(usize, usize)> = o.pixels.iter().map(|p| (p[0], p[1])).collect();
                let mask = ObjectMask::from_pixels(&px)?;
                let (x, y, w, h) = mask.extent();
                let bbox = BBox::new(x as f64, y as f64, w as f64, h as f64);
                objects[s].push(DetectedObject::new(s, o.category.clone(), 1.0, bbox, mask)?);
            }
        }
        let classes = if self.classes.is_empty() {
            ObjectMatchSet::singletons(&objects.iter().map(Vec::len).collect::<Vec<_>>())
        } else {
            ObjectMatchSet {
                classes: self.classes.clone(),
                pairs: Vec::new(),
                threshold: 0.0,
            }
        };
        let params = self.params.clone().unwrap_or_else(|| fallback.clone());
        EnergyModel::new(sources, objects, classes, params)
    }

    pub fn from_model(model: &EnergyModel) -> Self {
        let (w, h) = model.dims();
        Self {
            width: w,
            height: h,
            channels: model.sources()[0].channels(),
            sources: model
                .sources()
                .iter()
                .map(|s| InstanceSource {
                    data: s.data().to_vec(),
                    mask: s.mask().to_vec(),
                })
                .collect(),
            objects: model
                .objects()
                .iter()
                .map(|list| {
                    list.iter()
                        .map(|o| InstanceObject {
                            category: o.category.clone(),
                            pixels: o.mask.pixels().map(|(x, y)| [x, y]).collect(),
                        })
                        .collect()
                })
                .collect(),
            classes: model.matches().classes.clone(),
            params: Some(model.params().clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSide {
    pub energy: f64,
    /// Label codes, row-major (0 occluded, `i + 1` source `i`).
    pub labels: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub version: &'static str,
    pub command: &'static str,
    pub labelings: f64,
    pub brute_force: OracleSide,
    pub expansion: OracleSide,
    /// Expansion energy over the optimum (1 when both are 0).
    pub ratio: f64,
    pub identical: bool,
    pub params: EnergyParams,
}

/// Exact minimum against alpha-expansion on a tiny model.
pub fn oracle(model: &EnergyModel, cfg: &StitchConfig) -> Result<OracleReport> {
    let (w, h) = model.dims();
    let size = (model.num_labels() as f64).powi((w * h) as i32);
    if size > MAX_LABELINGS {
        return Err(Error::InstanceTooLarge {
            size,
            bound: MAX_LABELINGS,
        });
    }
    let (best, e_best) = brute_force_minimize(model)?;
    let solved = alpha_expansion(model, &initial_labeling(model), &cfg.solver)?;
    let e_exp = solved.energy.total();
    let codes = |f: &LabelField| f.labels().iter().map(|l| l.code()).collect::<Vec<_>>();
    let ratio = if e_best == 0.0 {
        if e_exp == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        e_exp / e_best
    };
    Ok(OracleReport {
        version: REPORT_VERSION,
        command: "oracle",
        labelings: size,
        identical: best == solved.labeling,
        brute_force: OracleSide {
            energy: e_best,
            labels: codes(&best),
        },
        expansion: OracleSide {
            energy: e_exp,
            labels: codes(&solved.labeling),
        },
        ratio,
        params: model.params().clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{random_instance, walking_scene, InstanceSpec, SceneLayout};

    #[test]
    fn instance_round_trips_through_json() {
        let model = random_instance(4, &InstanceSpec::default()).unwrap();
        let inst = OracleInstance::from_model(&model);
        let text = serde_json::to_string(&inst).unwrap();
        let back: OracleInstance = serde_json::from_str(&text).unwrap();
        let rebuilt = back.to_model(&EnergyParams::default()).unwrap();
        let f = crate::solver::initial_labeling(&model);
        assert_eq!(model.total_energy(&f).unwrap(), rebuilt.total_energy(&f).unwrap());
    }

    #[test]
    fn oracle_reports_both_solutions() {
        let spec = InstanceSpec {
            width: 3,
            height: 3,
            ..Default::default()
        };
        let model = random_instance(9, &spec).unwrap();
        let r = oracle(&model, &StitchConfig::default()).unwrap();
        assert_eq!(r.labelings, 3f64.powi(9));
        assert!(r.expansion.energy >= r.brute_force.energy);
        assert!(r.ratio >= 1.0);
        assert_eq!(r.brute_force.labels.len(), 9);
    }

    #[test]
    fn oversize_instance_is_refused() {
        let spec = InstanceSpec {
            width: 6,
            height: 5,
            ..Default::default()
        };
        let model = random_instance(1, &spec).unwrap();
        assert!(matches!(
            oracle(&model, &StitchConfig::default()),
            Err(Error::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn missing_match_set_is_reported() {
        let scene = walking_scene(0, SceneLayout::default()).unwrap();
        let dets = DetectionSet {
            objects: scene.detections.clone(),
            extras: Vec::new(),
        };
        let err = stitch(&scene.images, &dets, &[], &[], &StitchConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientMatches(0)));
    }

    #[test]
    fn report_embeds_the_resolved_config() {
        let scene = walking_scene(2, SceneLayout::default()).unwrap();
        let dets = DetectionSet {
            objects: scene.detections.clone(),
            extras: Vec::new(),
        };
        let cfg = StitchConfig {
            canvas: CanvasPolicy::Reference,
            ..Default::default()
        };
        let out = stitch(&scene.images, &dets, &scene.matches, &[], &cfg).unwrap();
        assert_eq!(out.report.config.energy.lambda_o, Some(cfg.energy.lambda_d));
        assert_eq!(out.mosaic.dims(), scene.images[0].dims());
        let text = serde_json::to_string(&out.report.config).unwrap();
        let again = StitchConfig::parse(&text).unwrap();
        let rerun = stitch(&scene.images, &dets, &scene.matches, &[], &again).unwrap();
        assert_eq!(rerun.labeling, out.labeling);
    }
}
