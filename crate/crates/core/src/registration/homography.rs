//! Projective transforms, normalized DLT, and RANSAC candidate generation.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Point, PointMatch, PointMatchSet};

const DET_EPS: f64 = 1e-12;

/// A 3×3 projective transform, scaled so the bottom-right entry is 1 when
/// that entry is nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateWarp("non-finite homography".into()));
        }
        let m = if m[(2, 2)].abs() > 1e-15 {
            m / m[(2, 2)]
        } else {
            m / m.norm()
        };
        if m.determinant().abs() <= DET_EPS {
            return Err(Error::DegenerateWarp(format!(
                "singular homography (det {:.3e})",
                m.determinant()
            )));
        }
        Ok(Self { m })
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            m: Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0),
        }
    }

    /// Rotation by `angle` radians and uniform `scale` about the origin, then translation.
    pub fn similarity(scale: f64, angle: f64, tx: f64, ty: f64) -> Result<Self> {
        let (s, c) = angle.sin_cos();
        Self::from_rows([
            [scale * c, -scale * s, tx],
            [scale * s, scale * c, ty],
            [0.0, 0.0, 1.0],
        ])
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[(i, j)];
            }
        }
        r
    }

    /// Maps a point; `None` when it lands on the line at infinity.
    pub fn apply(&self, p: Point) -> Option<Point> {
        let v = self.m * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() < 1e-12 {
            return None;
        }
        Some(Point::new(v.x / v.z, v.y / v.z))
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| Error::DegenerateWarp("homography not invertible".into()))?;
        Self::new(inv)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Self::new(self.m * other.m)
    }

    /// Corners of a `w × h` frame in drawing order.
    pub fn frame_corners(dims: (usize, usize)) -> [Point; 4] {
        let (w, h) = (dims.0 as f64, dims.1 as f64);
        [
            Point::new(0.0, 0.0),
            Point::new(w, 0.0),
            Point::new(w, h),
            Point::new(0.0, h),
        ]
    }

    /// Largest distance between where `self` and `other` send the frame corners.
    pub fn max_corner_displacement(&self, other: &Homography, dims: (usize, usize)) -> f64 {
        Self::frame_corners(dims)
            .iter()
            .map(|&c| match (self.apply(c), other.apply(c)) {
                (Some(a), Some(b)) => a.dist(b),
                _ => f64::INFINITY,
            })
            .fold(0.0, f64::max)
    }
}

/// RANSAC and candidate-filter settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Reprojection distance (px) under which a match counts as an inlier.
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    /// Candidates whose [`similarity_deviation`] exceeds this are dropped.
    pub max_similarity_deviation: f64,
    /// Survivors must differ from every better candidate by at least this
    /// much (max corner displacement, px).
    pub min_distinctness: f64,
    /// Distinct inlier sets refit and considered, best first.
    pub max_candidates: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            inlier_threshold: 3.0,
            min_inliers: 12,
            max_similarity_deviation: 0.15,
            min_distinctness: 10.0,
            max_candidates: 16,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("ransac.iterations must be >= 1".into()));
        }
        if !(self.inlier_threshold > 0.0
            && self.max_similarity_deviation > 0.0
            && self.min_distinctness > 0.0)
        {
            return Err(Error::Config("ransac thresholds must be > 0".into()));
        }
        if self.max_candidates == 0 {
            return Err(Error::Config("ransac.max_candidates must be >= 1".into()));
        }
        Ok(())
    }
}

/// A refit homography together with its support.
#[derive(Debug, Clone, PartialEq)]
pub struct HomographyCandidate {
    pub homography: Homography,
    /// Indices into the match list, ascending.
    pub inliers: Vec<usize>,
}

impl HomographyCandidate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.len()
    }
}

fn normalizing_transform(pts: &[Point]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let mean_dist = pts
        .iter()
        .map(|p| ((p.x - cx).powi(2) + (p.y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

/// Normalized direct linear transform: the homography `H` with `q ≈ H p`
/// for every pair, in the algebraic least-squares sense.
pub fn fit_homography_dlt(pairs: &[(Point, Point)]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::InsufficientMatches(pairs.len()));
    }
    let ps: Vec<Point> = pairs.iter().map(|p| p.0).collect();
    let qs: Vec<Point> = pairs.iter().map(|p| p.1).collect();
    let tp = normalizing_transform(&ps);
    let tq = normalizing_transform(&qs);
    let rows = 2 * pairs.len().max(5);
    // pad to at least 9 rows so the SVD exposes the full right basis
    let mut a = DMatrix::<f64>::zeros(rows.max(9), 9);
    for (i, (p, q)) in pairs.iter().enumerate() {
        let pn = tp * Vector3::new(p.x, p.y, 1.0);
        let qn = tq * Vector3::new(q.x, q.y, 1.0);
        let (x, y) = (pn.x / pn.z, pn.y / pn.z);
        let (u, v) = (qn.x / qn.z, qn.y / qn.z);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateWarp("SVD failed in DLT".into()))?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let tq_inv = tq
        .try_inverse()
        .ok_or_else(|| Error::DegenerateWarp("degenerate normalization".into()))?;
    Homography::new(tq_inv * hn * tp)
}

fn reprojection_error(h: &Homography, m: &PointMatch) -> f64 {
    h.apply(m.p).map_or(f64::INFINITY, |q| q.dist(m.q))
}

fn inliers_of(h: &Homography, pairs: &[PointMatch], threshold: f64) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, m)| reprojection_error(h, m) < threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Refit from an inlier set. Inputs are put in canonical coordinate order
/// first so the result depends only on the set, not on list order.
fn refit(pairs: &[PointMatch], inliers: &[usize]) -> Result<Homography> {
    let mut pts: Vec<(Point, Point)> = inliers.iter().map(|&i| (pairs[i].p, pairs[i].q)).collect();
    pts.sort_by(|a, b| {
        a.0.x
            .total_cmp(&b.0.x)
            .then(a.0.y.total_cmp(&b.0.y))
            .then(a.1.x.total_cmp(&b.1.x))
            .then(a.1.y.total_cmp(&b.1.y))
    });
    fit_homography_dlt(&pts)
}

/// Deviation of `h` from the nearest similarity transform: RMS residual of
/// the least-squares similarity fit to the images of the frame corners,
/// divided by the frame diagonal. Zero exactly for similarities.
pub fn similarity_deviation(h: &Homography, dims: (usize, usize)) -> f64 {
    let corners = Homography::frame_corners(dims);
    let mut targets = [Point::default(); 4];
    for (t, &c) in targets.iter_mut().zip(&corners) {
        match h.apply(c) {
            Some(p) => *t = p,
            None => return f64::INFINITY,
        }
    }
    let mean = |ps: &[Point; 4]| {
        Point::new(
            ps.iter().map(|p| p.x).sum::<f64>() / 4.0,
            ps.iter().map(|p| p.y).sum::<f64>() / 4.0,
        )
    };
    let (cm, tm) = (mean(&corners), mean(&targets));
    let (mut sxx, mut dot, mut cross) = (0.0, 0.0, 0.0);
    for (c, t) in corners.iter().zip(&targets) {
        let (c, t) = (*c - cm, *t - tm);
        sxx += c.x * c.x + c.y * c.y;
        dot += c.x * t.x + c.y * t.y;
        cross += c.x * t.y - c.y * t.x;
    }
    let (a, b) = (dot / sxx, cross / sxx);
    let mut ss = 0.0;
    for (c, t) in corners.iter().zip(&targets) {
        let (c, t) = (*c - cm, *t - tm);
        let fx = a * c.x - b * c.y;
        let fy = b * c.x + a * c.y;
        ss += (fx - t.x).powi(2) + (fy - t.y).powi(2);
    }
    let diag = ((dims.0 * dims.0 + dims.1 * dims.1) as f64).sqrt();
    (ss / 4.0).sqrt() / diag
}

/// Drops candidates that are too far from a similarity, then any candidate
/// within `min_distinctness` (max corner displacement) of an earlier survivor.
/// Input order is priority order.
pub fn filter_candidates(
    hs: &[Homography],
    cfg: &RansacConfig,
    dims: (usize, usize),
) -> Vec<Homography> {
    let idx = filter_indices(hs, cfg, dims);
    idx.into_iter().map(|i| hs[i]).collect()
}

fn filter_indices(hs: &[Homography], cfg: &RansacConfig, dims: (usize, usize)) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, h) in hs.iter().enumerate() {
        if similarity_deviation(h, dims) > cfg.max_similarity_deviation {
            continue;
        }
        if kept
            .iter()
            .all(|&k| hs[k].max_corner_displacement(h, dims) >= cfg.min_distinctness)
        {
            kept.push(i);
        }
    }
    kept
}

/// Alternates refitting and rescoring until the inlier set stops changing
/// (at most 10 rounds), so the returned homography is fit to exactly the
/// returned inliers.
fn refit_until_stable(pairs: &[PointMatch], mut inl: Vec<usize>, threshold: f64) -> Option<(Homography, Vec<usize>)> {
    let mut h = refit(pairs, &inl).ok()?;
    for _ in 0..10 {
        let rescored = inliers_of(&h, pairs, threshold);
        if rescored == inl || rescored.len() < 4 {
            break;
        }
        inl = rescored;
        h = refit(pairs, &inl).ok()?;
    }
    let final_set = inliers_of(&h, pairs, threshold);
    Some((h, final_set))
}

/// RANSAC over 4-point samples. Every distinct consensus set with at least
/// `min_inliers` members is a potential candidate; the best `max_candidates`
/// are refit on their inliers, rescored, sorted by support (descending) and
/// passed through [`filter_candidates`] over the frame of image A.
pub fn estimate_homography(
    matches: &PointMatchSet,
    cfg: &RansacConfig,
    dims_a: (usize, usize),
    seed: u64,
) -> Result<Vec<HomographyCandidate>> {
    cfg.validate()?;
    let pairs = &matches.pairs;
    let n = pairs.len();
    if n < 4 {
        return Err(Error::InsufficientMatches(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // hash of inlier set -> (first iteration seen, inliers)
    let mut sets: HashMap<u64, (usize, Vec<usize>)> = HashMap::new();
    for it in 0..cfg.iterations {
        let idx = sample(&mut rng, n, 4);
        let sample_pairs: Vec<(Point, Point)> =
            idx.iter().map(|i| (pairs[i].p, pairs[i].q)).collect();
        let Ok(h) = fit_homography_dlt(&sample_pairs) else {
            continue;
        };
        let inl = inliers_of(&h, pairs, cfg.inlier_threshold);
        if inl.len() < cfg.min_inliers.max(4) {
            continue;
        }
        let mut hasher = DefaultHasher::new();
        inl.hash(&mut hasher);
        sets.entry(hasher.finish()).or_insert((it, inl));
    }
    let mut ranked: Vec<(usize, Vec<usize>)> = sets.into_values().collect();
    ranked.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    ranked.truncate(cfg.max_candidates);

    let mut candidates: Vec<HomographyCandidate> = Vec::new();
    for (_, inl) in ranked {
        let Some((h, rescored)) = refit_until_stable(pairs, inl, cfg.inlier_threshold) else {
            continue;
        };
        if rescored.len() < cfg.min_inliers {
            continue;
        }
        candidates.push(HomographyCandidate {
            homography: h,
            inliers: rescored,
        });
    }
    candidates.sort_by(|a, b| b.inlier_count().cmp(&a.inlier_count()));
    let hs: Vec<Homography> = candidates.iter().map(|c| c.homography).collect();
    let keep = filter_indices(&hs, cfg, dims_a);
    let out: Vec<HomographyCandidate> = keep.into_iter().map(|i| candidates[i].clone()).collect();
    if out.is_empty() {
        return Err(Error::NoRegistration);
    }
    Ok(out)
}
