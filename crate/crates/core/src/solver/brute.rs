//! Exact minimization of tiny instances by branch and bound.

use std::collections::BTreeMap;

use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::model::LabelField;

/// Largest labeling space the exhaustive search accepts.
pub const MAX_LABELINGS: f64 = 1e8;

/// Exact minimizer over all labelings (including occlusion). Among equal
/// energies the lexicographically smallest label-code sequence wins.
/// Labelings are visited in lexicographic order and a branch is cut only
/// when its lower bound cannot beat the incumbent, which keeps the result
/// identical to plain enumeration.
pub fn brute_force_minimize(model: &EnergyModel) -> Result<(LabelField, f64)> {
    let (w, h) = model.dims();
    let n = w * h;
    let nl = model.num_labels();
    let size = (nl as f64).powi(n as i32);
    if size > MAX_LABELINGS {
        return Err(Error::InstanceTooLarge {
            size,
            bound: MAX_LABELINGS,
        });
    }

    // pairwise tables between pixel pairs (p < q), grid and long-range merged
    let mut tables: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for (e, &(p, q)) in model.edges().iter().enumerate() {
        let t = tables.entry((p, q)).or_insert_with(|| vec![0.0; nl * nl]);
        for a in 0..nl {
            for b in 0..nl {
                t[a * nl + b] += model.edge_cost(e, a, b);
            }
        }
    }
    for le in model.long_edges() {
        let (p, q, la, lb) = if le.p < le.q {
            (le.p, le.q, le.la, le.lb)
        } else {
            (le.q, le.p, le.lb, le.la)
        };
        let t = tables.entry((p, q)).or_insert_with(|| vec![0.0; nl * nl]);
        t[la * nl + lb] += le.weight;
    }
    // for each q, the tables linking it to an earlier p
    let mut back: Vec<Vec<(usize, Vec<f64>)>> = vec![Vec::new(); n];
    for ((p, q), t) in tables {
        back[q].push((p, t));
    }
    // for each p, the later nodes it constrains
    let mut fwd: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (q, list) in back.iter().enumerate() {
        for (k, (p, _)) in list.iter().enumerate() {
            fwd[*p].push((q, k));
        }
    }

    struct Search<'a> {
        n: usize,
        nl: usize,
        back: &'a [Vec<(usize, Vec<f64>)>],
        fwd: &'a [Vec<(usize, usize)>],
        /// Running best-case cost of each label at each not-yet-assigned node.
        m: Vec<f64>,
        codes: Vec<usize>,
        best: Option<(Vec<usize>, f64)>,
        ub: f64,
    }

    impl Search<'_> {
        fn bound_rest(&self, from: usize) -> f64 {
            (from..self.n)
                .map(|u| {
                    self.m[u * self.nl..(u + 1) * self.nl]
                        .iter()
                        .copied()
                        .fold(f64::INFINITY, f64::min)
                })
                .sum()
        }

        fn prune(&self, lower: f64) -> bool {
            match &self.best {
                Some((_, e)) => lower >= *e,
                None => lower > self.ub,
            }
        }

        fn run(&mut self, d: usize, partial: f64) {
            if d == self.n {
                let better = match &self.best {
                    Some((_, e)) => partial < *e,
                    None => partial <= self.ub,
                };
                if better {
                    self.best = Some((self.codes.clone(), partial));
                }
                return;
            }
            for l in 0..self.nl {
                let step = self.m[d * self.nl + l];
                let acc = partial + step;
                self.codes[d] = l;
                // saved exactly so backtracking leaves no rounding drift
                let saved: Vec<f64> = self.fwd[d]
                    .iter()
                    .flat_map(|&(q, _)| self.m[q * self.nl..(q + 1) * self.nl].to_vec())
                    .collect();
                for &(q, k) in &self.fwd[d] {
                    let t = &self.back[q][k].1;
                    for b in 0..self.nl {
                        self.m[q * self.nl + b] += t[l * self.nl + b];
                    }
                }
                if !self.prune(acc + self.bound_rest(d + 1)) {
                    self.run(d + 1, acc);
                }
                for (i, &(q, _)) in self.fwd[d].iter().enumerate().rev() {
                    self.m[q * self.nl..(q + 1) * self.nl]
                        .copy_from_slice(&saved[i * self.nl..(i + 1) * self.nl]);
                }
            }
        }
    }

    let mut m = vec![0.0; n * nl];
    for p in 0..n {
        for l in 0..nl {
            m[p * nl + l] = model.unary(p, l);
        }
    }
    // upper bound from the per-pixel unary argmin
    let greedy: Vec<usize> = (0..n)
        .map(|p| {
            (0..nl)
                .min_by(|&a, &b| model.unary(p, a).total_cmp(&model.unary(p, b)))
                .unwrap()
        })
        .collect();
    let ub = model.graph_energy(&greedy) * (1.0 + 1e-9) + 1e-9;
    let mut s = Search {
        n,
        nl,
        back: &back,
        fwd: &fwd,
        m,
        codes: vec![0; n],
        best: None,
        ub,
    };
    s.run(0, 0.0);
    let (codes, _) = s.best.expect("the unary argmin labeling is always within the bound");
    let energy = model.total_energy(&model.field_from_codes(&codes))?.total();
    Ok((model.field_from_codes(&codes), energy))
}
