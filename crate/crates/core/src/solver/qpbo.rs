//! Roof-duality partial optimization of binary pairwise energies.
//!
//! Each variable `x_p` gets two graph nodes, `p` (standing for `x_p`) and
//! `p̄` (standing for `1 − x_p`). Every term is added twice, once per
//! orientation, so submodular and supermodular pairs both become
//! non-negative arcs. After a max-flow the flow is symmetrized; nodes
//! reachable from the source (or reaching the sink) get their label, and
//! the rest are labeled by the strongly connected components of the
//! residual graph where that is consistent.

use serde::Serialize;

use super::maxflow::Graph;

/// Binary pairwise energy `Σ_p U_p(x_p) + Σ_(p,q) E_pq(x_p, x_q)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BinaryProblem {
    /// `[cost of 0, cost of 1]` per node.
    pub unary: Vec<[f64; 2]>,
    /// `(p, q, [E00, E01, E10, E11])`.
    pub pairwise: Vec<(usize, usize, [f64; 4])>,
}

impl BinaryProblem {
    pub fn new(n: usize) -> Self {
        Self {
            unary: vec![[0.0; 2]; n],
            pairwise: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.unary.len()
    }

    pub fn add_unary(&mut self, p: usize, c0: f64, c1: f64) {
        self.unary[p][0] += c0;
        self.unary[p][1] += c1;
    }

    pub fn add_pairwise(&mut self, p: usize, q: usize, e: [f64; 4]) {
        assert!(p != q, "pairwise term needs two distinct nodes");
        self.pairwise.push((p, q, e));
    }

    pub fn energy(&self, x: &[bool]) -> f64 {
        let mut e = 0.0;
        for (p, u) in self.unary.iter().enumerate() {
            e += u[x[p] as usize];
        }
        for &(p, q, t) in &self.pairwise {
            e += t[2 * x[p] as usize + x[q] as usize];
        }
        e
    }

    pub fn is_submodular(&self) -> bool {
        self.pairwise
            .iter()
            .all(|(_, _, e)| e[1] + e[2] >= e[0] + e[3])
    }
}

/// Result of [`qpbo_solve`]: `Some(bit)` for persistent nodes, `None` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct QpboResult {
    pub labels: Vec<Option<bool>>,
}

impl QpboResult {
    pub fn unlabeled(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

struct DoubledGraph {
    g: Graph,
    /// For every arc, the arc that carries its mirrored term.
    mirror: Vec<usize>,
    n: usize,
}

impl DoubledGraph {
    fn new(n: usize) -> Self {
        Self {
            g: Graph::new(2 * n),
            mirror: Vec::new(),
            n,
        }
    }

    fn bar(&self, v: usize) -> usize {
        if v < self.n {
            v + self.n
        } else {
            v - self.n
        }
    }

    /// Arc `u → v` and its mirror `v̄ → ū`, both with capacity `w`.
    fn add_pair(&mut self, u: usize, v: usize, w: f64) {
        let a = self.g.add_edge(u, v, w, 0.0);
        let b = self.g.add_edge(self.bar(v), self.bar(u), w, 0.0);
        self.mirror.extend([b, b + 1, a, a + 1]);
    }
}

/// Roof-duality labeling with the persistence property: for any full
/// assignment `y`, overwriting `y` on the labeled nodes does not raise the
/// energy. Fully labeled and optimal when every pair is submodular.
pub fn qpbo_solve(problem: &BinaryProblem) -> QpboResult {
    let n = problem.num_nodes();
    // net cost of x_p = 1 over x_p = 0, after normal-form reduction
    let mut a: Vec<f64> = problem.unary.iter().map(|u| u[1] - u[0]).collect();
    let mut dg = DoubledGraph::new(n);
    let mut scale = 0.0f64;
    for &(p, q, [e00, e01, e10, e11]) in &problem.pairwise {
        let w = e01 + e10 - e00 - e11;
        if w >= 0.0 {
            // e00 + (e10-e00) x_p + (e11-e10) x_q + w [x_p=0, x_q=1]
            a[p] += e10 - e00;
            a[q] += e11 - e10;
            if w > 0.0 {
                dg.add_pair(p, q, w);
            }
        } else {
            // (e01+e10-e11) + (e11-e01) x_p + (e11-e10) x_q + (-w) [x_p=0, x_q=0]
            a[p] += e11 - e01;
            a[q] += e11 - e10;
            dg.add_pair(p, q + n, -w);
        }
        scale = scale.max(w.abs());
    }
    for (p, &ap) in a.iter().enumerate() {
        if ap > 0.0 {
            // cost for x_p = 1: s -> p and p̄ -> t
            dg.g.add_tweights(p, ap, 0.0);
            dg.g.add_tweights(p + n, 0.0, ap);
        } else if ap < 0.0 {
            dg.g.add_tweights(p, 0.0, -ap);
            dg.g.add_tweights(p + n, -ap, 0.0);
        }
        scale = scale.max(ap.abs());
    }
    dg.g.maxflow();

    // symmetrize the residual network
    let m = dg.g.num_arcs();
    let res: Vec<f64> = (0..m)
        .map(|k| 0.5 * (dg.g.residual(k) + dg.g.residual(dg.mirror[k])))
        .collect();
    for (k, r) in res.into_iter().enumerate() {
        dg.g.set_residual(k, r);
    }
    let tr: Vec<f64> = (0..2 * n)
        .map(|v| 0.5 * (dg.g.terminal_residual(v) - dg.g.terminal_residual(dg.bar(v))))
        .collect();
    for (v, t) in tr.into_iter().enumerate() {
        dg.g.set_terminal_residual(v, t);
    }

    let eps = 1e-9 * scale.max(1.0);
    let from_s = dg.g.source_reachable(eps);
    let to_t = dg.g.sink_reaching(eps);
    let mut labels: Vec<Option<bool>> = (0..n)
        .map(|p| {
            if from_s[p] {
                Some(false)
            } else if to_t[p] {
                Some(true)
            } else {
                None
            }
        })
        .collect();

    // residual components among the remaining nodes
    let free: Vec<bool> = (0..2 * n).map(|v| !from_s[v] && !to_t[v]).collect();
    if free.iter().any(|&f| f) {
        let comps = tarjan(&dg.g, &free, eps);
        let mut comp_of = vec![usize::MAX; 2 * n];
        for (c, nodes) in comps.iter().enumerate() {
            for &v in nodes {
                comp_of[v] = c;
            }
        }
        // None = undecided; Some(true) = source side
        let mut side: Vec<Option<bool>> = vec![None; comps.len()];
        for (c, nodes) in comps.iter().enumerate() {
            let mirror_c = comp_of[dg.bar(nodes[0])];
            if mirror_c == c || side[c].is_some() {
                continue;
            }
            side[c] = Some(true);
            side[mirror_c] = Some(false);
        }
        for p in 0..n {
            if labels[p].is_none() {
                let c = comp_of[p];
                if comp_of[p + n] != c {
                    // p on the source side means x_p = 0
                    labels[p] = side[c].map(|s| !s);
                }
            }
        }
    }
    QpboResult { labels }
}

/// Strongly connected components of the residual graph restricted to
/// `active` nodes, in Tarjan emission order (sink components first).
fn tarjan(g: &Graph, active: &[bool], eps: f64) -> Vec<Vec<usize>> {
    let n = active.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut counter = 0usize;
    let succ = |u: usize| -> Vec<usize> {
        g.arcs_of(u)
            .filter(|&a| g.residual(a) > eps && active[g.arc_head(a)])
            .map(|a| g.arc_head(a))
            .collect()
    };
    for root in 0..n {
        if !active[root] || index[root] != usize::MAX {
            continue;
        }
        // iterative DFS: (node, successors, next position)
        let mut call: Vec<(usize, Vec<usize>, usize)> = Vec::new();
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        call.push((root, succ(root), 0));
        while let Some((v, next, pos)) = call.last_mut() {
            let v = *v;
            if *pos < next.len() {
                let w = next[*pos];
                *pos += 1;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    let s = succ(w);
                    call.push((w, s, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some((u, _, _)) = call.last() {
                    low[*u] = low[*u].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comps.push(comp);
                }
            }
        }
    }
    comps
}
