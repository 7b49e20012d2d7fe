//! Directed graphs over `d` labelled nodes stored as dense binary adjacency matrices.
//!
//! `adj[i][j] = 1` always means an edge `i → j`. The same matrix type backs
//! ground-truth DAGs, estimated DAGs and the (possibly cyclic) ordering graph.

use std::collections::VecDeque;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Square 0/1 matrix. Serializes as nested arrays of integers.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMatrix {
    d: usize,
    bits: Vec<bool>,
}

impl BinaryMatrix {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            bits: vec![false; d * d],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let d = rows.len();
        let mut m = Self::zeros(d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => m.set(i, j, true),
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "adjacency entry ({i}, {j}) is {other}, expected 0 or 1"
                        )))
                    }
                }
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.d + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[i * self.d + j] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Edges `(i, j)` in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let d = self.d;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(k, _)| (k / d, k % d))
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.d..(i + 1) * self.d]
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.d)
            .map(|i| self.row(i).iter().map(|&b| b as u8).collect())
            .collect()
    }

    /// Returns a topological order (Kahn's algorithm), or `None` if a directed
    /// cycle exists. Self-loops count as cycles.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let d = self.d;
        let mut indeg = vec![0usize; d];
        for (_, j) in self.edges() {
            indeg[j] += 1;
        }
        let mut queue: VecDeque<usize> = (0..d).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(d);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for w in 0..d {
                if self.get(v, w) {
                    indeg[w] -= 1;
                    if indeg[w] == 0 {
                        queue.push_back(w);
                    }
                }
            }
        }
        (order.len() == d).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Strict reachability: `r[i][j] = 1` iff a directed path of length ≥ 1 leads from i to j.
    pub fn transitive_closure(&self) -> BinaryMatrix {
        let d = self.d;
        let mut out = BinaryMatrix::zeros(d);
        let mut stack = Vec::new();
        for src in 0..d {
            stack.clear();
            stack.extend((0..d).filter(|&w| self.get(src, w)));
            while let Some(v) = stack.pop() {
                if out.get(src, v) {
                    continue;
                }
                out.set(src, v, true);
                stack.extend((0..d).filter(|&w| self.get(v, w) && !out.get(src, w)));
            }
        }
        out
    }

    /// Returns true if every edge of `self` is also present in `other`.
    pub fn is_subgraph_of(&self, other: &BinaryMatrix) -> bool {
        self.d == other.d && self.edges().all(|(i, j)| other.get(i, j))
    }
}

impl fmt::Debug for BinaryMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMatrix({})", self.d)?;
        for i in 0..self.d {
            let line: String = self.row(i).iter().map(|&b| if b { '1' } else { '.' }).collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

impl Serialize for BinaryMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BinaryMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<u8>>::deserialize(deserializer)?;
        BinaryMatrix::from_rows(&rows).map_err(D::Error::custom)
    }
}

pub fn default_labels(d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("X{i}")).collect()
}

/// A directed acyclic graph with node labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Dag {
    labels: Vec<String>,
    adj: BinaryMatrix,
}

#[derive(Deserialize)]
struct DagRepr {
    labels: Vec<String>,
    adj: BinaryMatrix,
}

impl<'de> Deserialize<'de> for Dag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = DagRepr::deserialize(deserializer)?;
        Dag::with_labels(repr.adj, repr.labels).map_err(D::Error::custom)
    }
}

impl Dag {
    pub fn empty(d: usize) -> Self {
        Self {
            labels: default_labels(d),
            adj: BinaryMatrix::zeros(d),
        }
    }

    pub fn from_adjacency(adj: BinaryMatrix) -> Result<Self> {
        let d = adj.dim();
        Self::with_labels(adj, default_labels(d))
    }

    pub fn with_labels(adj: BinaryMatrix, labels: Vec<String>) -> Result<Self> {
        if labels.len() != adj.dim() {
            return Err(Error::DimensionMismatch {
                expected: adj.dim(),
                found: labels.len(),
            });
        }
        if !adj.is_acyclic() {
            return Err(Error::Cyclic);
        }
        Ok(Self { labels, adj })
    }

    pub fn from_edges(d: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = BinaryMatrix::zeros(d);
        for &(i, j) in edges {
            if i >= d || j >= d {
                return Err(Error::InvalidConfig(format!(
                    "edge ({i}, {j}) out of range for {d} nodes"
                )));
            }
            adj.set(i, j, true);
        }
        Self::from_adjacency(adj)
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.adj.dim()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn adjacency(&self) -> &BinaryMatrix {
        &self.adj
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj.get(i, j)
    }

    pub fn n_edges(&self) -> usize {
        self.adj.count_ones()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj.edges()
    }

    pub fn parents(&self, j: usize) -> Vec<usize> {
        (0..self.d()).filter(|&i| self.adj.get(i, j)).collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.d()).filter(|&j| self.adj.get(i, j)).collect()
    }

    pub fn topological_order(&self) -> Vec<usize> {
        self.adj
            .topological_order()
            .expect("Dag invariant: adjacency is acyclic")
    }

    /// Strict descendant matrix (reachability by paths of length ≥ 1).
    pub fn reachability(&self) -> BinaryMatrix {
        self.adj.transitive_closure()
    }

    /// Writes `src,dst` rows using node labels.
    pub fn write_edge_list<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["src", "dst"])?;
        for (i, j) in self.edges() {
            w.write_record([&self.labels[i], &self.labels[j]])?;
        }
        w.flush().map_err(|e| Error::io("<edge list>", e))?;
        Ok(())
    }
}
