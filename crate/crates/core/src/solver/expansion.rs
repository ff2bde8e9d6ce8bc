//! Alpha-expansion over the factor-graph view of an [`EnergyModel`].

use serde::{Deserialize, Serialize};

use super::qpbo::{qpbo_solve, BinaryProblem};
use crate::energy::{EnergyBreakdown, EnergyModel};
use crate::error::Result;
use crate::model::{Label, LabelField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Upper bound on full passes over the label set.
    pub max_cycles: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_cycles: 20 }
    }
}

/// The binary "keep or switch to α" subproblem of one expansion move.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionProblem {
    pub alpha: usize,
    pub problem: BinaryProblem,
    /// Pixel index of each binary node; pixels already labeled α are not nodes.
    pub nodes: Vec<usize>,
    /// `problem.energy(b) - constant` is the energy of the moved labeling.
    pub constant: f64,
}

impl ExpansionProblem {
    /// Label codes after switching the nodes with `b = 1` to α.
    pub fn apply(&self, codes: &[usize], b: &[bool]) -> Vec<usize> {
        let mut out = codes.to_vec();
        for (k, &p) in self.nodes.iter().enumerate() {
            if b[k] {
                out[p] = self.alpha;
            }
        }
        out
    }
}

/// Builds the expansion subproblem for label code `alpha` from `codes`.
pub fn build_expansion(model: &EnergyModel, codes: &[usize], alpha: usize) -> ExpansionProblem {
    let n = codes.len();
    let mut node_of = vec![usize::MAX; n];
    let mut nodes = Vec::new();
    for (p, &c) in codes.iter().enumerate() {
        if c != alpha {
            node_of[p] = nodes.len();
            nodes.push(p);
        }
    }
    let mut bp = BinaryProblem::new(nodes.len());
    let mut fixed = 0.0;
    for (p, &c) in codes.iter().enumerate() {
        match node_of[p] {
            usize::MAX => fixed += model.unary(p, alpha),
            k => bp.add_unary(k, model.unary(p, c), model.unary(p, alpha)),
        }
    }
    let mut pair = |p: usize, q: usize, cost: &dyn Fn(usize, usize) -> f64| {
        let (cp, cq) = (codes[p], codes[q]);
        match (node_of[p], node_of[q]) {
            (usize::MAX, usize::MAX) => fixed += cost(alpha, alpha),
            (usize::MAX, kq) => bp.add_unary(kq, cost(alpha, cq), cost(alpha, alpha)),
            (kp, usize::MAX) => bp.add_unary(kp, cost(cp, alpha), cost(alpha, alpha)),
            (kp, kq) => {
                let e = [cost(cp, cq), cost(cp, alpha), cost(alpha, cq), cost(alpha, alpha)];
                if e.iter().any(|&v| v != 0.0) {
                    bp.add_pairwise(kp, kq, e);
                }
            }
        }
    };
    for (e, &(p, q)) in model.edges().iter().enumerate() {
        pair(p, q, &|a, b| model.edge_cost(e, a, b));
    }
    for le in model.long_edges() {
        let w = le.weight;
        let (la, lb) = (le.la, le.lb);
        pair(le.p, le.q, &move |a, b| if a == la && b == lb { w } else { 0.0 });
    }
    ExpansionProblem {
        alpha,
        problem: bp,
        nodes,
        constant: -fixed,
    }
}

/// Statistics of one attempted move.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoveStat {
    pub cycle: usize,
    /// Wire code of α (0 = occlusion).
    pub alpha: u16,
    pub changed: usize,
    pub unlabeled: usize,
    pub accepted: bool,
    /// Energy after the move (unchanged if rejected).
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub labeling: LabelField,
    /// Initial energy followed by the energy after every accepted move.
    pub energy_trace: Vec<f64>,
    pub moves: Vec<MoveStat>,
    pub cycles: usize,
    pub converged: bool,
    pub energy: EnergyBreakdown,
}

/// Each pixel takes its lowest-index source with data there, else occlusion.
pub fn initial_labeling(model: &EnergyModel) -> LabelField {
    let (w, h) = model.dims();
    let labels = (0..w * h)
        .map(|i| {
            model
                .sources()
                .iter()
                .position(|s| s.mask()[i])
                .map_or(Label::Occluded, |s| Label::Source(s as u16))
        })
        .collect();
    LabelField::new(w, h, labels).expect("labels cover the canvas")
}

/// Expansion order: sources by index, occlusion last.
pub fn alpha_order(model: &EnergyModel) -> Vec<usize> {
    (1..model.num_labels()).chain(std::iter::once(0)).collect()
}

/// Repeated expansion moves, each solved with QPBO (unlabeled nodes keep
/// their label) and applied only when the exact energy strictly drops.
pub fn alpha_expansion(model: &EnergyModel, init: &LabelField, cfg: &SolverConfig) -> Result<SolveReport> {
    let mut labeling = init.clone();
    let mut energy = model.total_energy(&labeling)?;
    let mut trace = vec![energy.total()];
    let mut moves = Vec::new();
    let mut converged = false;
    let mut cycles = 0;
    while cycles < cfg.max_cycles {
        cycles += 1;
        let mut improved = false;
        for alpha in alpha_order(model) {
            let codes = EnergyModel::codes_of(&labeling);
            let ep = build_expansion(model, &codes, alpha);
            let res = qpbo_solve(&ep.problem);
            let b: Vec<bool> = res.labels.iter().map(|l| l.unwrap_or(false)).collect();
            let changed = b.iter().filter(|&&x| x).count();
            let mut stat = MoveStat {
                cycle: cycles,
                alpha: alpha as u16,
                changed,
                unlabeled: res.unlabeled(),
                accepted: false,
                energy: energy.total(),
            };
            if changed > 0 {
                let moved = model.field_from_codes(&ep.apply(&codes, &b));
                let e = model.total_energy(&moved)?;
                if e.total() < energy.total() {
                    labeling = moved;
                    energy = e;
                    trace.push(e.total());
                    stat.accepted = true;
                    stat.energy = e.total();
                    improved = true;
                }
            }
            moves.push(stat);
        }
        if !improved {
            converged = true;
            break;
        }
    }
    Ok(SolveReport {
        labeling,
        energy_trace: trace,
        moves,
        cycles,
        converged,
        energy,
    })
}
