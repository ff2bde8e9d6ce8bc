//! Boykov–Kolmogorov augmenting-path max-flow with search-tree reuse.
//!
//! Terminal capacities are stored per node as a single signed residual
//! (`> 0`: residual from the source, `< 0`: residual to the sink).

use std::collections::VecDeque;

const NONE: usize = usize::MAX;
const TERMINAL: usize = usize::MAX - 1;
const ORPHAN: usize = usize::MAX - 2;

#[derive(Debug, Clone)]
struct Node {
    first: usize,
    /// Arc from this node to its tree parent, or one of the markers above.
    parent: usize,
    is_sink: bool,
    active: bool,
    ts: u64,
    dist: u32,
    tr_cap: f64,
}

#[derive(Debug, Clone)]
struct Arc {
    head: usize,
    next: usize,
    r_cap: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    arcs: Vec<Arc>,
    flow: f64,
    active: VecDeque<usize>,
    orphans: VecDeque<usize>,
    time: u64,
}

impl Graph {
    pub fn new(n: usize) -> Self {
        Self {
            nodes: vec![
                Node {
                    first: NONE,
                    parent: NONE,
                    is_sink: false,
                    active: false,
                    ts: 0,
                    dist: 0,
                    tr_cap: 0.0,
                };
                n
            ],
            ..Default::default()
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Adds source → `i` and `i` → sink capacities.
    pub fn add_tweights(&mut self, i: usize, cap_source: f64, cap_sink: f64) {
        let (mut cs, mut ct) = (cap_source, cap_sink);
        let delta = self.nodes[i].tr_cap;
        if delta > 0.0 {
            cs += delta;
        } else {
            ct -= delta;
        }
        self.flow += cs.min(ct);
        self.nodes[i].tr_cap = cs - ct;
    }

    /// Adds arc `i → j` with capacity `cap` and `j → i` with `rev_cap`.
    /// Returns the index of the forward arc; its sister is `index ^ 1`.
    pub fn add_edge(&mut self, i: usize, j: usize, cap: f64, rev_cap: f64) -> usize {
        let a = self.arcs.len();
        self.arcs.push(Arc {
            head: j,
            next: self.nodes[i].first,
            r_cap: cap,
        });
        self.nodes[i].first = a;
        self.arcs.push(Arc {
            head: i,
            next: self.nodes[j].first,
            r_cap: rev_cap,
        });
        self.nodes[j].first = a + 1;
        a
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn arc_head(&self, a: usize) -> usize {
        self.arcs[a].head
    }

    /// Tail of arc `a`.
    pub fn arc_tail(&self, a: usize) -> usize {
        self.arcs[a ^ 1].head
    }

    pub fn residual(&self, a: usize) -> f64 {
        self.arcs[a].r_cap
    }

    pub fn set_residual(&mut self, a: usize, v: f64) {
        self.arcs[a].r_cap = v;
    }

    pub fn terminal_residual(&self, i: usize) -> f64 {
        self.nodes[i].tr_cap
    }

    pub fn set_terminal_residual(&mut self, i: usize, v: f64) {
        self.nodes[i].tr_cap = v;
    }

    /// Outgoing arcs of `i`.
    pub fn arcs_of(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let mut a = self.nodes[i].first;
        std::iter::from_fn(move || {
            if a == NONE {
                return None;
            }
            let cur = a;
            a = self.arcs[a].next;
            Some(cur)
        })
    }

    fn set_active(&mut self, i: usize) {
        if !self.nodes[i].active {
            self.nodes[i].active = true;
            self.active.push_back(i);
        }
    }

    fn next_active(&mut self) -> Option<usize> {
        while let Some(i) = self.active.pop_front() {
            self.nodes[i].active = false;
            if self.nodes[i].parent != NONE {
                return Some(i);
            }
        }
        None
    }

    fn set_orphan(&mut self, i: usize) {
        self.nodes[i].parent = ORPHAN;
        self.orphans.push_back(i);
    }

    /// Runs to completion and returns the flow value.
    pub fn maxflow(&mut self) -> f64 {
        self.active.clear();
        self.orphans.clear();
        for i in 0..self.nodes.len() {
            let n = &mut self.nodes[i];
            n.active = false;
            n.ts = 0;
            if n.tr_cap > 0.0 {
                n.is_sink = false;
                n.parent = TERMINAL;
                n.dist = 1;
            } else if n.tr_cap < 0.0 {
                n.is_sink = true;
                n.parent = TERMINAL;
                n.dist = 1;
            } else {
                n.parent = NONE;
                continue;
            }
            self.set_active(i);
        }

        let mut current: Option<usize> = None;
        loop {
            let i = match current.take() {
                Some(i) if self.nodes[i].parent != NONE => i,
                _ => match self.next_active() {
                    Some(i) => i,
                    None => break,
                },
            };
            let found = self.grow(i);
            self.time += 1;
            if let Some(mid) = found {
                // keep expanding from the same node after augmenting
                current = Some(i);
                self.augment(mid);
                while let Some(o) = self.orphans.pop_front() {
                    self.process_orphan(o);
                }
            }
        }
        self.flow
    }

    /// Expands the tree at `i`; returns an arc from the source tree to the
    /// sink tree when the trees touch.
    fn grow(&mut self, i: usize) -> Option<usize> {
        let is_sink = self.nodes[i].is_sink;
        let mut a = self.nodes[i].first;
        while a != NONE {
            let cap = if is_sink {
                self.arcs[a ^ 1].r_cap
            } else {
                self.arcs[a].r_cap
            };
            if cap > 0.0 {
                let j = self.arcs[a].head;
                if self.nodes[j].parent == NONE {
                    let (ts, dist) = (self.nodes[i].ts, self.nodes[i].dist);
                    let nj = &mut self.nodes[j];
                    nj.is_sink = is_sink;
                    nj.parent = a ^ 1;
                    nj.ts = ts;
                    nj.dist = dist + 1;
                    self.set_active(j);
                } else if self.nodes[j].is_sink != is_sink {
                    return Some(if is_sink { a ^ 1 } else { a });
                } else if self.nodes[j].ts <= self.nodes[i].ts
                    && self.nodes[j].dist > self.nodes[i].dist
                {
                    let (ts, dist) = (self.nodes[i].ts, self.nodes[i].dist);
                    let nj = &mut self.nodes[j];
                    nj.parent = a ^ 1;
                    nj.ts = ts;
                    nj.dist = dist + 1;
                }
            }
            a = self.arcs[a].next;
        }
        None
    }

    fn augment(&mut self, mid: usize) {
        let mut bottleneck = self.arcs[mid].r_cap;
        // source side
        let mut i = self.arcs[mid ^ 1].head;
        loop {
            let a = self.nodes[i].parent;
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.arcs[a ^ 1].r_cap);
            i = self.arcs[a].head;
        }
        bottleneck = bottleneck.min(self.nodes[i].tr_cap);
        // sink side
        let mut i = self.arcs[mid].head;
        loop {
            let a = self.nodes[i].parent;
            if a == TERMINAL {
                break;
            }
            bottleneck = bottleneck.min(self.arcs[a].r_cap);
            i = self.arcs[a].head;
        }
        bottleneck = bottleneck.min(-self.nodes[i].tr_cap);

        self.arcs[mid ^ 1].r_cap += bottleneck;
        self.arcs[mid].r_cap -= bottleneck;

        let mut i = self.arcs[mid ^ 1].head;
        loop {
            let a = self.nodes[i].parent;
            if a == TERMINAL {
                break;
            }
            self.arcs[a].r_cap += bottleneck;
            self.arcs[a ^ 1].r_cap -= bottleneck;
            if self.arcs[a ^ 1].r_cap <= 0.0 {
                self.arcs[a ^ 1].r_cap = 0.0;
                self.set_orphan_front(i);
            }
            i = self.arcs[a].head;
        }
        self.nodes[i].tr_cap -= bottleneck;
        if self.nodes[i].tr_cap <= 0.0 {
            self.nodes[i].tr_cap = 0.0;
            self.set_orphan_front(i);
        }

        let mut i = self.arcs[mid].head;
        loop {
            let a = self.nodes[i].parent;
            if a == TERMINAL {
                break;
            }
            self.arcs[a ^ 1].r_cap += bottleneck;
            self.arcs[a].r_cap -= bottleneck;
            if self.arcs[a].r_cap <= 0.0 {
                self.arcs[a].r_cap = 0.0;
                self.set_orphan_front(i);
            }
            i = self.arcs[a].head;
        }
        self.nodes[i].tr_cap += bottleneck;
        if self.nodes[i].tr_cap >= 0.0 {
            self.nodes[i].tr_cap = 0.0;
            self.set_orphan_front(i);
        }
        self.flow += bottleneck;
    }

    fn set_orphan_front(&mut self, i: usize) {
        self.nodes[i].parent = ORPHAN;
        self.orphans.push_front(i);
    }

    fn process_orphan(&mut self, i: usize) {
        let is_sink = self.nodes[i].is_sink;
        let mut best_arc = NONE;
        let mut best_d = u32::MAX;
        let mut a0 = self.nodes[i].first;
        while a0 != NONE {
            let cap = if is_sink {
                self.arcs[a0].r_cap
            } else {
                self.arcs[a0 ^ 1].r_cap
            };
            let j = self.arcs[a0].head;
            if cap > 0.0 && self.nodes[j].is_sink == is_sink && self.nodes[j].parent != NONE {
                // distance to the terminal, if j's path is rooted there
                let mut d: u32 = 0;
                let mut k = j;
                let rooted = loop {
                    if self.nodes[k].ts == self.time {
                        d += self.nodes[k].dist;
                        break true;
                    }
                    let a = self.nodes[k].parent;
                    d += 1;
                    if a == TERMINAL {
                        self.nodes[k].ts = self.time;
                        self.nodes[k].dist = 1;
                        break true;
                    }
                    if a == ORPHAN {
                        break false;
                    }
                    k = self.arcs[a].head;
                };
                if rooted {
                    if d < best_d {
                        best_arc = a0;
                        best_d = d;
                    }
                    let mut k = j;
                    let mut dd = d;
                    while self.nodes[k].ts != self.time {
                        self.nodes[k].ts = self.time;
                        self.nodes[k].dist = dd;
                        dd -= 1;
                        k = self.arcs[self.nodes[k].parent].head;
                    }
                }
            }
            a0 = self.arcs[a0].next;
        }

        if best_arc != NONE {
            self.nodes[i].parent = best_arc;
            self.nodes[i].ts = self.time;
            self.nodes[i].dist = best_d + 1;
            return;
        }
        self.nodes[i].parent = NONE;
        let mut a0 = self.nodes[i].first;
        while a0 != NONE {
            let j = self.arcs[a0].head;
            let pj = self.nodes[j].parent;
            if self.nodes[j].is_sink == is_sink && pj != NONE {
                let cap = if is_sink {
                    self.arcs[a0].r_cap
                } else {
                    self.arcs[a0 ^ 1].r_cap
                };
                if cap > 0.0 {
                    self.set_active(j);
                }
                if pj != TERMINAL && pj != ORPHAN && self.arcs[pj].head == i {
                    self.set_orphan(j);
                }
            }
            a0 = self.arcs[a0].next;
        }
    }

    /// Nodes reachable from the source in the residual graph (`eps` is the
    /// smallest capacity treated as usable).
    pub fn source_reachable(&self, eps: f64) -> Vec<bool> {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        let mut q: VecDeque<usize> = VecDeque::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.tr_cap > eps {
                seen[i] = true;
                q.push_back(i);
            }
        }
        while let Some(u) = q.pop_front() {
            for a in self.arcs_of(u) {
                let v = self.arcs[a].head;
                if !seen[v] && self.arcs[a].r_cap > eps {
                    seen[v] = true;
                    q.push_back(v);
                }
            }
        }
        seen
    }

    /// Nodes that reach the sink in the residual graph.
    pub fn sink_reaching(&self, eps: f64) -> Vec<bool> {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        let mut q: VecDeque<usize> = VecDeque::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.tr_cap < -eps {
                seen[i] = true;
                q.push_back(i);
            }
        }
        while let Some(v) = q.pop_front() {
            // arcs u -> v with residual: sisters of v's outgoing arcs
            for a in self.arcs_of(v) {
                let u = self.arcs[a].head;
                if !seen[u] && self.arcs[a ^ 1].r_cap > eps {
                    seen[u] = true;
                    q.push_back(u);
                }
            }
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Edmonds–Karp on a dense matrix, as an independent reference.
    fn reference_flow(n: usize, src: &[f64], snk: &[f64], edges: &[(usize, usize, f64, f64)]) -> f64 {
        let s = n;
        let t = n + 1;
        let m = n + 2;
        let mut cap = vec![vec![0.0; m]; m];
        for i in 0..n {
            cap[s][i] += src[i];
            cap[i][t] += snk[i];
        }
        for &(i, j, c, r) in edges {
            cap[i][j] += c;
            cap[j][i] += r;
        }
        let mut flow = 0.0;
        loop {
            let mut prev = vec![usize::MAX; m];
            prev[s] = s;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for v in 0..m {
                    if prev[v] == usize::MAX && cap[u][v] > 1e-12 {
                        prev[v] = u;
                        q.push_back(v);
                    }
                }
            }
            if prev[t] == usize::MAX {
                return flow;
            }
            let mut b = f64::INFINITY;
            let mut v = t;
            while v != s {
                b = b.min(cap[prev[v]][v]);
                v = prev[v];
            }
            let mut v = t;
            while v != s {
                cap[prev[v]][v] -= b;
                cap[v][prev[v]] += b;
                v = prev[v];
            }
            flow += b;
        }
    }

    #[test]
    fn two_node_cut() {
        let mut g = Graph::new(2);
        g.add_tweights(0, 5.0, 0.0);
        g.add_tweights(1, 0.0, 3.0);
        g.add_edge(0, 1, 4.0, 0.0);
        assert_eq!(g.maxflow(), 3.0);
        let s = g.source_reachable(0.0);
        assert!(s[0] && s[1]);
    }

    #[test]
    fn matches_reference_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.gen_range(2..14);
            let src: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { rng.gen_range(0..10) as f64 } else { 0.0 }).collect();
            let snk: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.5) { rng.gen_range(0..10) as f64 } else { 0.0 }).collect();
            let mut edges = Vec::new();
            for _ in 0..rng.gen_range(0..3 * n) {
                let i = rng.gen_range(0..n);
                let j = rng.gen_range(0..n);
                if i != j {
                    edges.push((i, j, rng.gen_range(0..8) as f64, rng.gen_range(0..8) as f64));
                }
            }
            let mut g = Graph::new(n);
            for i in 0..n {
                g.add_tweights(i, src[i], snk[i]);
            }
            for &(i, j, c, r) in &edges {
                g.add_edge(i, j, c, r);
            }
            let got = g.maxflow();
            let expect = reference_flow(n, &src, &snk, &edges);
            assert_eq!(got, expect);
            // no residual path remains
            let s = g.source_reachable(0.0);
            let t = g.sink_reaching(0.0);
            assert!(s.iter().zip(&t).all(|(a, b)| !(a & b)));
        }
    }

    #[test]
    fn grid_flow_matches_reference() {
        let (w, h) = (12, 9);
        let n = w * h;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let src: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64).collect();
        let snk: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64).collect();
        let mut edges = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if x + 1 < w {
                    edges.push((i, i + 1, rng.gen_range(0..15) as f64, rng.gen_range(0..15) as f64));
                }
                if y + 1 < h {
                    edges.push((i, i + w, rng.gen_range(0..15) as f64, rng.gen_range(0..15) as f64));
                }
            }
        }
        let mut g = Graph::new(n);
        for i in 0..n {
            g.add_tweights(i, src[i], snk[i]);
        }
        for &(i, j, c, r) in &edges {
            g.add_edge(i, j, c, r);
        }
        assert_eq!(g.maxflow(), reference_flow(n, &src, &snk, &edges));
    }
}
