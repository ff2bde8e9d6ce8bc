//! Cross-image object correspondence by match density.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DetectedObject, PointMatchSet};

/// Raise factor applied to the density threshold when transitive closure
/// puts two objects of one image into the same class.
pub const THRESHOLD_STEP: f64 = 1.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    /// Matches per pixel an object pair must strictly exceed.
    pub threshold: f64,
    /// Only pair detections of equal category.
    pub category_strict: bool,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            threshold: 0.05,
            category_strict: true,
        }
    }
}

impl DensityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::Config("density.threshold must be > 0".into()));
        }
        Ok(())
    }
}

/// Identifies one detection: its source image and its index in that image's list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectRef {
    pub source: usize,
    pub index: usize,
}

/// An accepted pairing with its density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectPair {
    pub a: ObjectRef,
    pub b: ObjectRef,
    pub density: f64,
}

/// Matches with `p ∈ o1` and `q ∈ o2`, divided by the pixel area of `o1`.
/// `p` and `q` must be in the frames of `o1` and `o2` respectively.
pub fn correspondence_density(
    o1: &DetectedObject,
    o2: &DetectedObject,
    matches: &PointMatchSet,
) -> Result<f64> {
    let area = o1.mask.area();
    if area == 0 {
        return Err(Error::EmptyObject);
    }
    let hits = matches
        .pairs
        .iter()
        .filter(|m| o1.mask.contains_point(m.p) && o2.mask.contains_point(m.q))
        .count();
    Ok(hits as f64 / area as f64)
}

/// Density for every `(i, j)` pair; `NaN` where categories differ under a
/// strict config (never matched).
pub fn density_table(
    o1: &[DetectedObject],
    o2: &[DetectedObject],
    matches: &PointMatchSet,
    category_strict: bool,
) -> Result<Vec<Vec<f64>>> {
    o1.iter()
        .map(|a| {
            o2.iter()
                .map(|b| {
                    if category_strict && a.category != b.category {
                        Ok(f64::NAN)
                    } else {
                        correspondence_density(a, b, matches)
                    }
                })
                .collect()
        })
        .collect()
}

/// Greedy best-first one-to-one assignment over a density table. Only
/// entries strictly above `threshold` are eligible; ties go to the lower
/// `(i, j)`. Returns `(i, j, density)` in acceptance order.
pub fn greedy_assign(table: &[Vec<f64>], threshold: f64) -> Vec<(usize, usize, f64)> {
    let mut cands: Vec<(usize, usize, f64)> = Vec::new();
    for (i, row) in table.iter().enumerate() {
        for (j, &d) in row.iter().enumerate() {
            if d > threshold {
                cands.push((i, j, d));
            }
        }
    }
    cands.sort_by(|a, b| b.2.total_cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
    let n_b = table.first().map_or(0, |r| r.len());
    let mut used_a = vec![false; table.len()];
    let mut used_b = vec![false; n_b];
    let mut out = Vec::new();
    for (i, j, d) in cands {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j, d));
        }
    }
    out
}

/// Pairs detections of two images (`o1` from image A, `o2` from image B of
/// `matches`).
pub fn match_objects(
    o1: &[DetectedObject],
    o2: &[DetectedObject],
    matches: &PointMatchSet,
    cfg: &DensityConfig,
) -> Result<Vec<(usize, usize, f64)>> {
    cfg.validate()?;
    let table = density_table(o1, o2, matches, cfg.category_strict)?;
    Ok(greedy_assign(&table, cfg.threshold))
}

/// Equivalence classes of detections across all sources.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectMatchSet {
    /// Disjoint classes, each sorted; classes ordered by their first member.
    pub classes: Vec<Vec<ObjectRef>>,
    /// Accepted pairwise matches at the final threshold.
    pub pairs: Vec<ObjectPair>,
    /// Threshold at which the classes became consistent.
    pub threshold: f64,
}

impl ObjectMatchSet {
    /// Each detection in its own class.
    pub fn singletons(counts: &[usize]) -> Self {
        let classes = counts
            .iter()
            .enumerate()
            .flat_map(|(s, &n)| (0..n).map(move |i| vec![ObjectRef { source: s, index: i }]))
            .collect();
        Self {
            classes,
            pairs: Vec::new(),
            threshold: 0.0,
        }
    }

    pub fn class_of(&self, r: ObjectRef) -> Option<usize> {
        self.classes.iter().position(|c| c.contains(&r))
    }

    /// Cross-source member pairs of every class, ordered `(lower, higher)`.
    pub fn member_pairs(&self) -> Vec<(ObjectRef, ObjectRef)> {
        let mut out = Vec::new();
        for c in &self.classes {
            for (i, a) in c.iter().enumerate() {
                for b in &c[i + 1..] {
                    if a.source != b.source {
                        out.push((*a, *b));
                    }
                }
            }
        }
        out
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut y = x;
        while self.parent[y] != r {
            let next = self.parent[y];
            self.parent[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Precomputed densities for one ordered image pair `(a, b)`, `a < b`.
#[derive(Debug, Clone)]
pub struct PairDensities {
    pub a: usize,
    pub b: usize,
    pub table: Vec<Vec<f64>>,
}

/// Density tables for every image pair that has a match set. Match sets
/// given as `(b, a)` are reversed so tables always run lower → higher source.
pub fn pair_densities(
    detections: &[Vec<DetectedObject>],
    match_sets: &[PointMatchSet],
    category_strict: bool,
) -> Result<Vec<PairDensities>> {
    let mut out: Vec<PairDensities> = Vec::new();
    for ms in match_sets {
        if ms.image_a == ms.image_b
            || ms.image_a >= detections.len()
            || ms.image_b >= detections.len()
        {
            continue;
        }
        let ms = if ms.image_a < ms.image_b {
            ms.clone()
        } else {
            ms.reversed()
        };
        if out.iter().any(|p| p.a == ms.image_a && p.b == ms.image_b) {
            continue;
        }
        let table = density_table(
            &detections[ms.image_a],
            &detections[ms.image_b],
            &ms,
            category_strict,
        )?;
        out.push(PairDensities {
            a: ms.image_a,
            b: ms.image_b,
            table,
        });
    }
    out.sort_by_key(|p| (p.a, p.b));
    Ok(out)
}

/// Transitive closure of per-pair matches. When a class would hold two
/// detections of the same source, the threshold is multiplied by
/// [`THRESHOLD_STEP`] and matching is redone; this stops at the latest once
/// the threshold exceeds every density.
pub fn build_equivalence(
    detections: &[Vec<DetectedObject>],
    match_sets: &[PointMatchSet],
    cfg: &DensityConfig,
) -> Result<ObjectMatchSet> {
    cfg.validate()?;
    let tables = pair_densities(detections, match_sets, cfg.category_strict)?;
    Ok(equivalence_from_tables(
        &detections.iter().map(Vec::len).collect::<Vec<_>>(),
        &tables,
        cfg.threshold,
    ))
}

/// [`build_equivalence`] over precomputed density tables.
pub fn equivalence_from_tables(
    counts: &[usize],
    tables: &[PairDensities],
    threshold: f64,
) -> ObjectMatchSet {
    let mut offsets = vec![0usize; counts.len() + 1];
    for (s, &n) in counts.iter().enumerate() {
        offsets[s + 1] = offsets[s] + n;
    }
    let total = offsets[counts.len()];
    let refs: Vec<ObjectRef> = (0..counts.len())
        .flat_map(|s| (0..counts[s]).map(move |i| ObjectRef { source: s, index: i }))
        .collect();
    let mut tau = threshold;
    loop {
        let mut uf = UnionFind::new(total);
        let mut pairs = Vec::new();
        for t in tables {
            for (i, j, d) in greedy_assign(&t.table, tau) {
                uf.union(offsets[t.a] + i, offsets[t.b] + j);
                pairs.push(ObjectPair {
                    a: ObjectRef { source: t.a, index: i },
                    b: ObjectRef { source: t.b, index: j },
                    density: d,
                });
            }
        }
        let mut by_root: Vec<Vec<ObjectRef>> = vec![Vec::new(); total];
        for (k, r) in refs.iter().enumerate() {
            let root = uf.find(k);
            by_root[root].push(*r);
        }
        let classes: Vec<Vec<ObjectRef>> = by_root.into_iter().filter(|c| !c.is_empty()).collect();
        let consistent = classes
            .iter()
            .all(|c| c.windows(2).all(|w| w[0].source != w[1].source));
        if consistent || pairs.is_empty() {
            return ObjectMatchSet {
                classes,
                pairs,
                threshold: tau,
            };
        }
        tau *= THRESHOLD_STEP;
    }
}

/// Experimental alternative score, not used by the pipeline: mean difference
/// between the displacement vectors of every two matches that fall inside
/// both objects. Spatially coherent matches give values near 0. `None` with
/// fewer than two qualifying matches.
pub fn displacement_coherence(
    o1: &DetectedObject,
    o2: &DetectedObject,
    matches: &PointMatchSet,
) -> Option<f64> {
    let disp: Vec<_> = matches
        .pairs
        .iter()
        .filter(|m| o1.mask.contains_point(m.p) && o2.mask.contains_point(m.q))
        .map(|m| m.q - m.p)
        .collect();
    if disp.len() < 2 {
        return None;
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, a) in disp.iter().enumerate() {
        for b in &disp[i + 1..] {
            sum += a.dist(*b);
            n += 1;
        }
    }
    Some(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BBox, ObjectMask, Point, PointMatch};

    fn rect_obj(source: usize, cat: &str, x: usize, y: usize, w: usize, h: usize) -> DetectedObject {
        DetectedObject::new(
            source,
            cat,
            0.9,
            BBox::new(x as f64, y as f64, w as f64, h as f64),
            ObjectMask::rect(x, y, w, h).unwrap(),
        )
        .unwrap()
    }

    fn mset(a: usize, b: usize, pts: &[((f64, f64), (f64, f64))]) -> PointMatchSet {
        PointMatchSet::new(
            a,
            b,
            pts.iter()
                .map(|&(p, q)| PointMatch {
                    p: Point::new(p.0, p.1),
                    q: Point::new(q.0, q.1),
                    score: 1.0,
                })
                .collect(),
        )
    }

    #[test]
    fn density_arithmetic() {
        let o1 = rect_obj(0, "person", 0, 0, 25, 20);
        let o2 = rect_obj(1, "person", 100, 0, 25, 20);
        let none = mset(0, 1, &[((1.0, 1.0), (50.0, 1.0))]);
        assert_eq!(correspondence_density(&o1, &o2, &none).unwrap(), 0.0);
        let pts: Vec<_> = (0..50)
            .map(|k| (((k % 25) as f64 + 0.5, (k / 25) as f64 + 0.5), (100.5 + (k % 25) as f64, 3.5)))
            .collect();
        assert_eq!(correspondence_density(&o1, &o2, &mset(0, 1, &pts)).unwrap(), 0.1);
    }

    #[test]
    fn duplicating_matches_doubles_density() {
        let o1 = rect_obj(0, "car", 2, 2, 5, 5);
        let o2 = rect_obj(1, "car", 2, 2, 5, 5);
        let m = mset(0, 1, &[((3.0, 3.0), (3.0, 3.0)), ((4.0, 6.0), (5.0, 5.0)), ((0.0, 0.0), (3.0, 3.0))]);
        let mut doubled = m.clone();
        doubled.pairs.extend(m.pairs.clone());
        let d1 = correspondence_density(&o1, &o2, &m).unwrap();
        let d2 = correspondence_density(&o1, &o2, &doubled).unwrap();
        assert_eq!(d2, 2.0 * d1);
    }

    #[test]
    fn category_filter_and_threshold() {
        let car = rect_obj(0, "car", 0, 0, 2, 2);
        let bike = rect_obj(1, "bike", 0, 0, 2, 2);
        let m = mset(0, 1, &[((0.5, 0.5), (0.5, 0.5)), ((1.5, 1.5), (1.5, 1.5))]);
        let cfg = DensityConfig::default();
        assert!(match_objects(&[car.clone()], &[bike.clone()], &m, &cfg).unwrap().is_empty());
        let loose = DensityConfig { category_strict: false, ..cfg };
        assert_eq!(match_objects(&[car], &[bike], &m, &loose).unwrap(), vec![(0, 0, 0.5)]);
    }

    fn best_matching_score(t: &[Vec<f64>], tau: f64) -> f64 {
        // exhaustive over partial one-to-one assignments
        fn rec(t: &[Vec<f64>], i: usize, used: &mut Vec<bool>, tau: f64) -> f64 {
            if i == t.len() {
                return 0.0;
            }
            let mut best = rec(t, i + 1, used, tau);
            for j in 0..used.len() {
                if !used[j] && t[i][j] > tau {
                    used[j] = true;
                    best = best.max(t[i][j] + rec(t, i + 1, used, tau));
                    used[j] = false;
                }
            }
            best
        }
        rec(t, 0, &mut vec![false; t[0].len()], tau)
    }

    #[test]
    fn greedy_prefers_dominant_cross_pairing() {
        let t = vec![vec![0.2, 0.9], vec![0.8, 0.1]];
        let got = greedy_assign(&t, 0.05);
        assert_eq!(got, vec![(0, 1, 0.9), (1, 0, 0.8)]);
        let total: f64 = got.iter().map(|g| g.2).sum();
        assert!((total - best_matching_score(&t, 0.05)).abs() < 1e-12);
    }

    #[test]
    fn threshold_is_strict_and_monotone() {
        let t = vec![vec![0.1, 0.05], vec![0.06, 0.3]];
        assert_eq!(greedy_assign(&t, 0.1).len(), 1);
        let mut last = usize::MAX;
        for tau in [0.01, 0.055, 0.07, 0.2, 0.5] {
            let n = greedy_assign(&t, tau).len();
            assert!(n <= last);
            last = n;
        }
    }

    fn table(a: usize, b: usize, t: Vec<Vec<f64>>) -> PairDensities {
        PairDensities { a, b, table: t }
    }

    #[test]
    fn two_images_give_pairs_plus_singletons() {
        let m = equivalence_from_tables(&[2, 1], &[table(0, 1, vec![vec![0.3], vec![0.01]])], 0.05);
        let r = |s, i| ObjectRef { source: s, index: i };
        assert_eq!(m.classes, vec![vec![r(0, 0), r(1, 0)], vec![r(0, 1)]]);
    }

    #[test]
    fn chain_closes_transitively() {
        let m = equivalence_from_tables(
            &[1, 1, 1],
            &[table(0, 1, vec![vec![0.2]]), table(1, 2, vec![vec![0.2]])],
            0.05,
        );
        assert_eq!(m.classes.len(), 1);
        assert_eq!(m.classes[0].len(), 3);
    }

    #[test]
    fn planted_conflict_raises_threshold() {
        // a1~b (0.4), b~c (0.3), c~a2 (0.08): closure puts a1 and a2 together
        // until tau passes 0.08: 0.05 -> 0.0625 -> 0.078125 -> 0.09765625
        let tables = [
            table(0, 1, vec![vec![0.4], vec![0.0]]),
            table(1, 2, vec![vec![0.3]]),
            table(0, 2, vec![vec![0.0], vec![0.08]]),
        ];
        let m = equivalence_from_tables(&[2, 1, 1], &tables, 0.05);
        let r = |s, i| ObjectRef { source: s, index: i };
        assert_eq!(m.threshold, 0.09765625);
        assert_eq!(m.classes, vec![vec![r(0, 0), r(1, 0), r(2, 0)], vec![r(0, 1)]]);
    }

    #[test]
    fn coherence_stub() {
        let o1 = rect_obj(0, "car", 0, 0, 4, 4);
        let o2 = rect_obj(1, "car", 10, 0, 4, 4);
        let m = mset(0, 1, &[((0.5, 0.5), (10.5, 0.5)), ((2.5, 2.5), (12.5, 2.5))]);
        assert_eq!(displacement_coherence(&o1, &o2, &m), Some(0.0));
    }
}
