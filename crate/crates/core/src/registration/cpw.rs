//! Content-preserving mesh refinement of a homography warp.
//!
//! The unknowns are per-vertex displacements `d_v` added to the h-mapped
//! grid. Each flow sample contributes the residual
//! `Σ_k w_k d_k − flow` through the bilinear weights of the cell that
//! contains its source position; every cell contributes four triangle
//! residuals that vanish exactly when the cell moves by a similarity.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::homography::Homography;
use crate::error::{Error, Result};
use crate::model::Point;

/// Mesh resolution in cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    pub cols: usize,
    pub rows: usize,
    pub lambda_reg: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            cols: 16,
            rows: 16,
            lambda_reg: 1.0,
        }
    }
}

/// One flow observation in the mosaic frame: content of the h-warped
/// candidate at `at` should move by `flow`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub at: Point,
    pub flow: Point,
}

/// A bilinear control mesh over the candidate image.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshWarp {
    cols: usize,
    rows: usize,
    src_dims: (usize, usize),
    /// Vertex positions in the candidate frame, row-major, `(rows+1)·(cols+1)`.
    source: Vec<Point>,
    /// Displacements added to the homography image of each vertex.
    displacement: Vec<Point>,
    /// `h(source) + displacement`.
    deformed: Vec<Point>,
    objective: f64,
}

impl MeshWarp {
    pub fn grid(&self) -> (usize, usize) {
        (self.cols, self.rows)
    }

    pub fn source_vertices(&self) -> &[Point] {
        &self.source
    }

    pub fn deformed_vertices(&self) -> &[Point] {
        &self.deformed
    }

    pub fn displacements(&self) -> &[Point] {
        &self.displacement
    }

    /// Value of the minimized quadratic objective.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    fn cell_of(&self, s: Point) -> (usize, usize, f64, f64) {
        cell_of(s, self.src_dims, self.cols, self.rows)
    }

    /// Bilinearly interpolated displacement at candidate-frame point `s`
    /// (clamped to the grid outside it).
    pub fn displacement_at(&self, s: Point) -> Point {
        let (i, j, u, v) = self.cell_of(s);
        let (u, v) = (u.clamp(0.0, 1.0), v.clamp(0.0, 1.0));
        let stride = self.cols + 1;
        let ids = [j * stride + i, j * stride + i + 1, (j + 1) * stride + i, (j + 1) * stride + i + 1];
        let w = [(1.0 - u) * (1.0 - v), u * (1.0 - v), (1.0 - u) * v, u * v];
        let mut out = Point::default();
        for k in 0..4 {
            out.x += w[k] * self.displacement[ids[k]].x;
            out.y += w[k] * self.displacement[ids[k]].y;
        }
        out
    }

    /// True when every cell keeps its orientation: the Jacobian of the
    /// deformed bilinear cell at its center has positive determinant.
    pub fn is_fold_free(&self) -> bool {
        let stride = self.cols + 1;
        (0..self.rows).all(|j| {
            (0..self.cols).all(|i| {
                let a = self.deformed[j * stride + i];
                let b = self.deformed[j * stride + i + 1];
                let c = self.deformed[(j + 1) * stride + i + 1];
                let e = self.deformed[(j + 1) * stride + i];
                let du = ((b - a) + (c - e)) * 0.5;
                let dv = ((e - a) + (c - b)) * 0.5;
                du.x * dv.y - du.y * dv.x > 0.0
            })
        })
    }
}

fn cell_of(s: Point, dims: (usize, usize), cols: usize, rows: usize) -> (usize, usize, f64, f64) {
    let cw = dims.0 as f64 / cols as f64;
    let ch = dims.1 as f64 / rows as f64;
    let fx = s.x / cw;
    let fy = s.y / ch;
    let i = (fx.floor().max(0.0) as usize).min(cols - 1);
    let j = (fy.floor().max(0.0) as usize).min(rows - 1);
    (i, j, fx - i as f64, fy - j as f64)
}

/// Sparse row of the least-squares system: `(column, coefficient)` pairs and a target.
struct Row {
    terms: Vec<(usize, f64)>,
    rhs: f64,
}

/// Fits a mesh over a `src_dims` candidate image whose global warp is `h`
/// (candidate → mosaic). Samples whose source position falls outside the
/// candidate image are ignored.
pub fn cpw_refine(
    h: &Homography,
    src_dims: (usize, usize),
    flow: &[FlowSample],
    mesh: &MeshConfig,
) -> Result<MeshWarp> {
    if mesh.cols < 2 || mesh.rows < 2 {
        return Err(Error::InvalidParams("mesh must be at least 2x2 cells".into()));
    }
    if !(mesh.lambda_reg >= 0.0 && mesh.lambda_reg.is_finite()) {
        return Err(Error::InvalidParams("lambda_reg must be finite and >= 0".into()));
    }
    let (cols, rows) = (mesh.cols, mesh.rows);
    let stride = cols + 1;
    let nv = stride * (rows + 1);
    let cw = src_dims.0 as f64 / cols as f64;
    let ch = src_dims.1 as f64 / rows as f64;
    let source: Vec<Point> = (0..=rows)
        .flat_map(|j| (0..=cols).map(move |i| Point::new(i as f64 * cw, j as f64 * ch)))
        .collect();
    let mapped: Vec<Point> = source
        .iter()
        .map(|&s| h.apply(s).ok_or_else(|| Error::DegenerateWarp("grid vertex maps to infinity".into())))
        .collect::<Result<_>>()?;
    let h_inv = h.inverse()?;

    let mut lsq: Vec<Row> = Vec::new();
    for f in flow {
        let Some(s) = h_inv.apply(f.at) else { continue };
        if !(s.x >= 0.0 && s.y >= 0.0 && s.x <= src_dims.0 as f64 && s.y <= src_dims.1 as f64) {
            continue;
        }
        let (i, j, u, v) = cell_of(s, src_dims, cols, rows);
        let ids = [j * stride + i, j * stride + i + 1, (j + 1) * stride + i, (j + 1) * stride + i + 1];
        let w = [(1.0 - u) * (1.0 - v), u * (1.0 - v), (1.0 - u) * v, u * v];
        for (axis, target) in [(0, f.flow.x), (1, f.flow.y)] {
            lsq.push(Row {
                terms: ids.iter().zip(w).map(|(&id, wk)| (2 * id + axis, wk)).collect(),
                rhs: target,
            });
        }
    }

    let sw = mesh.lambda_reg.sqrt();
    if sw > 0.0 {
        for j in 0..rows {
            for i in 0..cols {
                // counter-clockwise corner loop of the cell
                let ring = [j * stride + i, j * stride + i + 1, (j + 1) * stride + i + 1, (j + 1) * stride + i];
                for k in 0..4 {
                    let v1 = ring[k];
                    let v2 = ring[(k + 1) % 4];
                    let v3 = ring[(k + 3) % 4];
                    // express v1 in the local frame of edge v2 -> v3
                    let e = mapped[v3] - mapped[v2];
                    let f = mapped[v1] - mapped[v2];
                    let ee = e.x * e.x + e.y * e.y;
                    let u = (f.x * e.x + f.y * e.y) / ee;
                    let v = (-f.x * e.y + f.y * e.x) / ee;
                    // x: d1x - d2x - u(d3x - d2x) + v(d3y - d2y)
                    lsq.push(Row {
                        terms: vec![
                            (2 * v1, sw),
                            (2 * v2, -sw * (1.0 - u)),
                            (2 * v3, -sw * u),
                            (2 * v3 + 1, sw * v),
                            (2 * v2 + 1, -sw * v),
                        ],
                        rhs: 0.0,
                    });
                    // y: d1y - d2y - u(d3y - d2y) - v(d3x - d2x)
                    lsq.push(Row {
                        terms: vec![
                            (2 * v1 + 1, sw),
                            (2 * v2 + 1, -sw * (1.0 - u)),
                            (2 * v3 + 1, -sw * u),
                            (2 * v3, -sw * v),
                            (2 * v2, sw * v),
                        ],
                        rhs: 0.0,
                    });
                }
            }
        }
    }

    let n = 2 * nv;
    let mut ata = DMatrix::<f64>::zeros(n, n);
    let mut atb = DVector::<f64>::zeros(n);
    for row in &lsq {
        for &(a, wa) in &row.terms {
            atb[a] += wa * row.rhs;
            for &(b, wb) in &row.terms {
                ata[(a, b)] += wa * wb;
            }
        }
    }
    let max_diag = (0..n).map(|i| ata[(i, i)]).fold(0.0, f64::max);
    let chol = ata
        .clone()
        .cholesky()
        .ok_or_else(|| Error::IllPosed("normal equations are singular".into()))?;
    let l = chol.l();
    let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if max_diag <= 0.0 || min_pivot <= 1e-10 * max_diag {
        return Err(Error::IllPosed(format!(
            "normal equations are numerically singular (pivot ratio {:.2e})",
            if max_diag > 0.0 { min_pivot / max_diag } else { 0.0 }
        )));
    }
    let d = chol.solve(&atb);
    let objective: f64 = lsq
        .iter()
        .map(|r| {
            let pred: f64 = r.terms.iter().map(|&(c, w)| w * d[c]).sum();
            (pred - r.rhs).powi(2)
        })
        .sum();
    let displacement: Vec<Point> = (0..nv).map(|v| Point::new(d[2 * v], d[2 * v + 1])).collect();
    let deformed = mapped.iter().zip(&displacement).map(|(&m, &dv)| m + dv).collect();
    Ok(MeshWarp {
        cols,
        rows,
        src_dims,
        source,
        displacement,
        deformed,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h() -> Homography {
        Homography::similarity(1.05, 0.05, 30.0, 10.0).unwrap()
    }

    fn samples(h: &Homography, dims: (usize, usize), step: usize, flow: Point) -> Vec<FlowSample> {
        let mut out = Vec::new();
        for y in (0..dims.1).step_by(step) {
            for x in (0..dims.0).step_by(step) {
                let at = h.apply(Point::new(x as f64 + 0.5, y as f64 + 0.5)).unwrap();
                out.push(FlowSample { at, flow });
            }
        }
        out
    }

    #[test]
    fn zero_flow_is_the_homography() {
        let dims = (64, 48);
        let cfg = MeshConfig { cols: 4, rows: 3, lambda_reg: 1.0 };
        let m = cpw_refine(&h(), dims, &samples(&h(), dims, 4, Point::default()), &cfg).unwrap();
        for (s, d) in m.source_vertices().iter().zip(m.deformed_vertices()) {
            assert!(h().apply(*s).unwrap().dist(*d) < 1e-9);
        }
        assert!(m.objective() < 1e-18);
        assert!(m.is_fold_free());
    }

    #[test]
    fn uniform_flow_translates_every_vertex() {
        let dims = (40, 40);
        let cfg = MeshConfig { cols: 2, rows: 2, lambda_reg: 1e-3 };
        let m = cpw_refine(&h(), dims, &samples(&h(), dims, 3, Point::new(2.0, 0.0)), &cfg).unwrap();
        for d in m.displacements() {
            assert!((d.x - 2.0).abs() < 1e-6 && d.y.abs() < 1e-6, "{d:?}");
        }
    }

    #[test]
    fn empty_data_without_regularizer_is_ill_posed() {
        let cfg = MeshConfig { cols: 2, rows: 2, lambda_reg: 0.0 };
        assert!(matches!(cpw_refine(&h(), (40, 40), &[], &cfg), Err(Error::IllPosed(_))));
    }

    #[test]
    fn lone_sample_leaves_similarity_null_space() {
        let cfg = MeshConfig { cols: 2, rows: 2, lambda_reg: 100.0 };
        let s = FlowSample { at: h().apply(Point::new(10.0, 10.0)).unwrap(), flow: Point::new(3.0, 0.0) };
        assert!(matches!(cpw_refine(&h(), (40, 40), &[s], &cfg), Err(Error::IllPosed(_))));
    }

    #[test]
    fn regularizer_shrinks_an_isolated_bump() {
        // dense zero flow pins the mesh; one sample pulls on a single cell
        let dims = (40, 40);
        let mut flow = samples(&h(), dims, 5, Point::default());
        let at = h().apply(Point::new(12.0, 12.0)).unwrap();
        flow.retain(|f| f.at.dist(at) > 1e-9);
        flow.push(FlowSample { at, flow: Point::new(4.0, 0.0) });
        let cfg = MeshConfig { cols: 4, rows: 4, lambda_reg: 100.0 };
        let m = cpw_refine(&h(), dims, &flow, &cfg).unwrap();
        let max = m
            .displacements()
            .iter()
            .map(|d| (d.x * d.x + d.y * d.y).sqrt())
            .fold(0.0, f64::max);
        assert!(max > 0.0 && max < 4.0, "{max}");
    }

    #[test]
    fn objective_nondecreasing_in_lambda() {
        let dims = (40, 40);
        let mut flow = samples(&h(), dims, 4, Point::default());
        for (k, f) in flow.iter_mut().enumerate() {
            f.flow = Point::new(((k * 7) % 5) as f64 * 0.3, ((k * 3) % 4) as f64 * -0.2);
        }
        let mut last = f64::INFINITY;
        for lam in [10.0, 1.0, 0.1, 0.01, 0.001] {
            let cfg = MeshConfig { cols: 4, rows: 4, lambda_reg: lam };
            let o = cpw_refine(&h(), dims, &flow, &cfg).unwrap().objective();
            assert!(o <= last + 1e-9, "{o} > {last}");
            last = o;
        }
    }
}
