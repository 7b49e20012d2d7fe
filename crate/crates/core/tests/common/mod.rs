//! Test-only oracles. Nothing here calls into the metric or ordering code
//! it is used to check.
#![allow(dead_code)]

use std::collections::VecDeque;

use htcit::graph::{BinaryMatrix, Dag};
use htcit::ordering::CiTester;
use htcit::prune::{NodeFit, ParentSignificance};
use htcit::Result;

/// Directed graph over integer nodes, adjacency lists.
#[derive(Debug, Clone)]
pub struct Digraph {
    pub children: Vec<Vec<usize>>,
    pub parents: Vec<Vec<usize>>,
}

impl Digraph {
    pub fn new(n: usize) -> Self {
        Self {
            children: vec![Vec::new(); n],
            parents: vec![Vec::new(); n],
        }
    }

    pub fn add(&mut self, a: usize, b: usize) {
        self.children[a].push(b);
        self.parents[b].push(a);
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    fn ancestors_of(&self, seeds: &[usize]) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack: Vec<usize> = seeds.to_vec();
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend(self.parents[v].iter().copied());
            }
        }
        seen
    }

    /// d-separation by the moralized ancestral graph criterion.
    pub fn d_separated(&self, x: &[usize], y: &[usize], z: &[usize]) -> bool {
        let mut seeds = x.to_vec();
        seeds.extend_from_slice(y);
        seeds.extend_from_slice(z);
        let keep = self.ancestors_of(&seeds);
        let n = self.len();
        let mut und = vec![Vec::new(); n];
        for v in (0..n).filter(|&v| keep[v]) {
            let ps: Vec<usize> = self.parents[v].iter().copied().filter(|&p| keep[p]).collect();
            for &p in &ps {
                und[v].push(p);
                und[p].push(v);
            }
            for a in 0..ps.len() {
                for b in (a + 1)..ps.len() {
                    und[ps[a]].push(ps[b]);
                    und[ps[b]].push(ps[a]);
                }
            }
        }
        let mut blocked = vec![false; n];
        for &v in z {
            blocked[v] = true;
        }
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = x.iter().copied().filter(|&v| !blocked[v]).collect();
        for &v in &queue {
            seen[v] = true;
        }
        while let Some(v) = queue.pop_front() {
            if y.contains(&v) {
                return false;
            }
            for &w in &und[v] {
                if !seen[w] && !blocked[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        true
    }
}

/// The rollout `X^0 .. X^t` as one DAG. Slice 0 has no within-slice edges.
/// An intervened variable's slice-τ node is a fresh root whose only child is
/// its own next-step copy; the value it replaced stays latent and keeps its
/// within-slice role.
pub struct Unrolled {
    pub graph: Digraph,
    pub d: usize,
    pub tau: usize,
    pub t: usize,
}

impl Unrolled {
    pub fn new(dag: &Dag, tau: usize, t: usize, intervened: &[bool]) -> Self {
        let d = dag.d();
        // observed nodes s*d + m, latent originals (t+1)*d + m
        let latent = |m: usize| (t + 1) * d + m;
        let mut g = Digraph::new((t + 2) * d);
        let node = |s: usize, m: usize| s * d + m;
        // node holding X_m at step s as seen by same-step children
        let within = |s: usize, m: usize| {
            if s == tau && tau > 0 && intervened[m] {
                latent(m)
            } else {
                node(s, m)
            }
        };
        for s in 1..=t {
            for m in 0..d {
                g.add(node(s - 1, m), within(s, m));
            }
            for (a, b) in dag.edges() {
                g.add(within(s, a), within(s, b));
            }
        }
        Self { graph: g, d, tau, t }
    }

    pub fn at(&self, s: usize, m: usize) -> usize {
        s * self.d + m
    }
}

/// d-separation answers in place of kernel tests: p = 1 when separated,
/// p = 0 otherwise.
pub struct OracleTester {
    pub unrolled: Unrolled,
}

impl OracleTester {
    pub fn new(dag: &Dag, tau: usize, t: usize, intervened: &[bool]) -> Self {
        Self {
            unrolled: Unrolled::new(dag, tau, t, intervened),
        }
    }
}

fn pvalue(separated: bool) -> f64 {
    if separated {
        1.0
    } else {
        0.0
    }
}

impl CiTester for OracleTester {
    fn d(&self) -> usize {
        self.unrolled.d
    }

    fn tau_pair(&self, i: usize, j: usize) -> Result<f64> {
        let u = &self.unrolled;
        Ok(pvalue(u.graph.d_separated(&[u.at(u.tau, i)], &[u.at(u.tau, j)], &[])))
    }

    fn descendant_row(&self, i: usize, cond: &[usize], targets: &[usize]) -> Result<Vec<f64>> {
        let u = &self.unrolled;
        let z: Vec<usize> = cond.iter().map(|&k| u.at(u.tau, k)).collect();
        Ok(targets
            .iter()
            .map(|&j| pvalue(u.graph.d_separated(&[u.at(u.tau, i)], &[u.at(u.t, j)], &z)))
            .collect())
    }
}

/// Pruning stand-in: a candidate is significant iff it is a true parent.
pub struct OracleSignificance<'a> {
    pub truth: &'a Dag,
}

impl ParentSignificance for OracleSignificance<'_> {
    fn d(&self) -> usize {
        self.truth.d()
    }

    fn candidate_pvalues(&self, target: usize, candidates: &[usize]) -> Result<NodeFit> {
        Ok(NodeFit {
            pvalues: candidates
                .iter()
                .map(|&c| pvalue(!self.truth.has_edge(c, target)))
                .collect(),
            warning: None,
        })
    }
}

pub fn to_digraph(dag: &Dag) -> Digraph {
    let mut g = Digraph::new(dag.d());
    for (a, b) in dag.edges() {
        g.add(a, b);
    }
    g
}

/// Descendants by DFS, including `v` itself.
pub fn descendants_incl(dag: &Dag, v: usize) -> Vec<bool> {
    let mut seen = vec![false; dag.d()];
    let mut stack = vec![v];
    while let Some(u) = stack.pop() {
        if !seen[u] {
            seen[u] = true;
            stack.extend(dag.children(u));
        }
    }
    seen
}

/// Independent cycle check by colored DFS.
pub fn has_cycle(adj: &BinaryMatrix) -> bool {
    fn visit(adj: &BinaryMatrix, v: usize, color: &mut [u8]) -> bool {
        color[v] = 1;
        for w in 0..adj.dim() {
            if adj.get(v, w) {
                if color[w] == 1 || (color[w] == 0 && visit(adj, w, color)) {
                    return true;
                }
            }
        }
        color[v] = 2;
        false
    }
    let mut color = vec![0u8; adj.dim()];
    (0..adj.dim()).any(|v| color[v] == 0 && visit(adj, v, &mut color))
}

/// Longest directed path from `v` to any sink, by memoized recursion.
pub fn height(dag: &Dag) -> Vec<usize> {
    fn go(dag: &Dag, v: usize, memo: &mut [Option<usize>]) -> usize {
        if let Some(h) = memo[v] {
            return h;
        }
        let h = dag
            .children(v)
            .into_iter()
            .map(|c| 1 + go(dag, c, memo))
            .max()
            .unwrap_or(0);
        memo[v] = Some(h);
        h
    }
    let mut memo = vec![None; dag.d()];
    (0..dag.d()).map(|v| go(dag, v, &mut memo)).collect()
}

/// Pair-status SHD: 0 none, 1 forward, 2 backward.
pub fn shd_pairs(a: &Dag, b: &Dag) -> usize {
    let status = |g: &Dag, i: usize, j: usize| {
        if g.has_edge(i, j) {
            1
        } else if g.has_edge(j, i) {
            2
        } else {
            0
        }
    };
    let d = a.d();
    (0..d)
        .flat_map(|i| ((i + 1)..d).map(move |j| (i, j)))
        .filter(|&(i, j)| status(a, i, j) != status(b, i, j))
        .count()
}

/// All simple paths between `x` and `y` in the skeleton of `g`, each given
/// as a node sequence.
fn simple_paths(g: &Dag, x: usize, y: usize) -> Vec<Vec<usize>> {
    fn extend(g: &Dag, path: &mut Vec<usize>, y: usize, out: &mut Vec<Vec<usize>>) {
        let v = *path.last().unwrap();
        if v == y {
            out.push(path.clone());
            return;
        }
        for w in 0..g.d() {
            if (g.has_edge(v, w) || g.has_edge(w, v)) && !path.contains(&w) {
                path.push(w);
                extend(g, path, y, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(g, &mut vec![x], y, &mut out);
    out
}

fn is_causal(g: &Dag, path: &[usize]) -> bool {
    path.windows(2).all(|w| g.has_edge(w[0], w[1]))
}

fn blocked(g: &Dag, path: &[usize], z: &[usize]) -> bool {
    for k in 1..path.len() - 1 {
        let (a, v, b) = (path[k - 1], path[k], path[k + 1]);
        let collider = g.has_edge(a, v) && g.has_edge(b, v);
        if collider {
            let de = descendants_incl(g, v);
            if !z.iter().any(|&w| de[w]) {
                return true;
            }
        } else if z.contains(&v) {
            return true;
        }
    }
    false
}

/// Structural intervention distance by explicit path enumeration: `(i, j)` is
/// an error unless the parents of `i` in `est` form a valid adjustment set
/// for the effect of `i` on `j` in `truth`.
pub fn sid_by_paths(est: &Dag, truth: &Dag) -> usize {
    let d = truth.d();
    let mut errors = 0;
    for i in 0..d {
        let z = est.parents(i);
        for j in (0..d).filter(|&j| j != i) {
            if z.contains(&j) {
                // est claims no effect of i on j
                if descendants_incl(truth, i)[j] {
                    errors += 1;
                }
                continue;
            }
            let paths = simple_paths(truth, i, j);
            let mut forbidden = vec![false; d];
            for p in paths.iter().filter(|p| is_causal(truth, p)) {
                for &w in &p[1..] {
                    for (u, f) in descendants_incl(truth, w).into_iter().enumerate() {
                        forbidden[u] |= f;
                    }
                }
            }
            let valid = !z.iter().any(|&w| forbidden[w])
                && paths
                    .iter()
                    .filter(|p| !is_causal(truth, p))
                    .all(|p| blocked(truth, p, &z));
            if !valid {
                errors += 1;
            }
        }
    }
    errors
}

/// Every labeled DAG on `d` nodes.
pub fn all_dags(d: usize) -> Vec<Dag> {
    let pairs: Vec<(usize, usize)> = (0..d)
        .flat_map(|i| ((i + 1)..d).map(move |j| (i, j)))
        .collect();
    let total = 3usize.pow(pairs.len() as u32);
    let mut out = Vec::new();
    for mut code in 0..total {
        let mut adj = BinaryMatrix::zeros(d);
        for &(i, j) in &pairs {
            match code % 3 {
                1 => adj.set(i, j, true),
                2 => adj.set(j, i, true),
                _ => {}
            }
            code /= 3;
        }
        if !has_cycle(&adj) {
            out.push(Dag::from_adjacency(adj).unwrap());
        }
    }
    out
}
