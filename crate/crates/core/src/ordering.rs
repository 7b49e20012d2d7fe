//! Hierarchical topological ordering from two time-slices.
//!
//! For every variable `i` the earlier-slice copy `X_i^τ` acts as a conditional
//! instrument: it is dependent on `X_j^t` given the conditioning set of `i`
//! exactly when `j` is a descendant of `i`. One row of tests per variable
//! fills the p-value matrix `P`; thresholding at `alpha` gives the ordering
//! adjacency `A^TP` (`a_tp[i][j] = 1` means "j is a descendant of i").
//! [`adjust_layers`] then peels leaves bottom-up and breaks any cycle left
//! by test errors by discarding the weakest significant edge.
//!
//! Conditioning sets are built from marginal HSIC tests on the earlier
//! slice. Conditioning only on the variables dependent on `X_i^τ` can open a
//! collider `i → c ← k` through a dependent descendant `X_c^τ`, so the default
//! [`ConditioningRule::DependenceClosure`] takes the whole connected component
//! of `i` in the dependence graph. Variables outside that component are
//! independent of it at every slice, which makes the closure rule as exact
//! as conditioning on the entire earlier slice under a d-separation oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::BinaryMatrix;
use crate::kerneltest::{
    hsic_prepared, salt, test_prepared, CenteredGram, KernelConfig, PreparedX, PreparedY,
};
use crate::simgen::TwoSliceDataset;

pub const DEFAULT_ALPHA: f64 = 0.01;

/// d×d matrix of p-values, row = earlier-slice variable, column = later-slice variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueMatrix {
    d: usize,
    p: Vec<f64>,
    pub alpha: f64,
}

impl PValueMatrix {
    /// All-ones matrix (nothing significant).
    pub fn ones(d: usize, alpha: f64) -> Self {
        Self {
            d,
            p: vec![1.0; d * d],
            alpha,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>], alpha: f64) -> Result<Self> {
        let d = rows.len();
        let mut pm = Self::ones(d, alpha);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if i != j {
                    pm.set(i, j, v)?;
                }
            }
        }
        Ok(pm)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.d + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidConfig(format!(
                "p-value {value} at ({i}, {j}) outside [0, 1]"
            )));
        }
        if i == j {
            return Err(Error::InvalidConfig("diagonal p-values are fixed at 1".into()));
        }
        self.p[i * self.d + j] = value;
        Ok(())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.p.chunks(self.d.max(1)).take(self.d).map(|r| r.to_vec()).collect()
    }
}

/// Thresholded ordering adjacency `A^TP`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingGraph {
    pub a_tp: BinaryMatrix,
}

impl OrderingGraph {
    pub fn from_pvalues(pm: &PValueMatrix) -> Self {
        let d = pm.d();
        let mut a_tp = BinaryMatrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                if i != j && pm.get(i, j) <= pm.alpha {
                    a_tp.set(i, j, true);
                }
            }
        }
        Self { a_tp }
    }

    pub fn d(&self) -> usize {
        self.a_tp.dim()
    }

    pub fn n_edges(&self) -> usize {
        self.a_tp.count_ones()
    }

    /// `a_tp[i][j] = 1 ⇔ p[i][j] ≤ alpha`, zero diagonal.
    pub fn is_consistent_with(&self, pm: &PValueMatrix) -> bool {
        self.d() == pm.d() && *self == Self::from_pvalues(pm)
    }
}

/// Layers `L_1..L_K`, `L_1` holding the leaves. `layer_of[v]` is the
/// zero-based index of the layer containing `v`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayeredOrdering {
    pub layers: Vec<Vec<usize>>,
    pub layer_of: Vec<usize>,
}

impl LayeredOrdering {
    /// Every edge must point from a strictly higher layer to a lower one.
    pub fn respects(&self, g: &BinaryMatrix) -> bool {
        g.edges().all(|(i, j)| self.layer_of[i] > self.layer_of[j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestMode {
    /// Conditional test given the node's conditioning set.
    Cit,
    /// Marginal test: the earlier slice of this node was randomized.
    It,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ConditioningRule {
    /// Earlier-slice variables dependent on `X_i^τ` under a marginal test.
    Dependent,
    /// The connected component of `X_i^τ` in the marginal-dependence graph
    /// of the earlier slice, minus `i` itself.
    #[default]
    DependenceClosure,
    /// Every other earlier-slice variable.
    AllOthers,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditioningPlan {
    pub cond_sets: Vec<Vec<usize>>,
    pub modes: Vec<TestMode>,
}

impl ConditioningPlan {
    /// All sets empty, marginal tests everywhere.
    pub fn independence_only(d: usize) -> Self {
        Self {
            cond_sets: vec![Vec::new(); d],
            modes: vec![TestMode::It; d],
        }
    }

    pub fn d(&self) -> usize {
        self.cond_sets.len()
    }
}

/// Source of p-values for the ordering stage. The kernel implementation is
/// [`KernelCiTester`]; tests substitute a d-separation oracle.
pub trait CiTester: Sync {
    fn d(&self) -> usize;

    /// p-value of `X_i^τ ⊥ X_j^τ`.
    fn tau_pair(&self, i: usize, j: usize) -> Result<f64>;

    /// p-values of `X_i^τ ⊥ X_j^t | X_cond^τ` for every `j` in `targets`.
    fn descendant_row(&self, i: usize, cond: &[usize], targets: &[usize]) -> Result<Vec<f64>>;
}

/// Kernel HSIC/KCI tests on a dataset.
pub struct KernelCiTester<'a> {
    data: &'a TwoSliceDataset,
    cfg: KernelConfig,
    rows: Option<Vec<usize>>,
}

impl<'a> KernelCiTester<'a> {
    pub fn new(data: &'a TwoSliceDataset, cfg: &KernelConfig) -> Result<Self> {
        cfg.validate()?;
        if data.n() < crate::kerneltest::MIN_SAMPLES {
            return Err(Error::DegenerateInput(format!(
                "{} samples, at least {} required",
                data.n(),
                crate::kerneltest::MIN_SAMPLES
            )));
        }
        Ok(Self {
            data,
            cfg: cfg.clone(),
            rows: cfg.subsample_rows(data.n()),
        })
    }

    fn column(&self, m: &nalgebra::DMatrix<f64>, j: usize) -> Vec<f64> {
        let col = m.column(j);
        match &self.rows {
            Some(rows) => rows.iter().map(|&r| col[r]).collect(),
            None => col.iter().copied().collect(),
        }
    }

    fn tau(&self, j: usize) -> Vec<f64> {
        self.column(&self.data.x_tau, j)
    }

    fn later(&self, j: usize) -> Vec<f64> {
        self.column(&self.data.x_t, j)
    }
}

impl CiTester for KernelCiTester<'_> {
    fn d(&self) -> usize {
        self.data.d()
    }

    fn tau_pair(&self, i: usize, j: usize) -> Result<f64> {
        let kx = CenteredGram::new(&self.tau(i), &self.cfg).map_err(|e| e.at_node(i))?;
        let ky = CenteredGram::new(&self.tau(j), &self.cfg).map_err(|e| e.at_node(j))?;
        let seed = salt(self.cfg.seed, (i * self.d() + j) as u64 | 1 << 62);
        Ok(hsic_prepared(&kx, &ky, &self.cfg, seed).p_value)
    }

    fn descendant_row(&self, i: usize, cond: &[usize], targets: &[usize]) -> Result<Vec<f64>> {
        let z: Vec<Vec<f64>> = cond.iter().map(|&k| self.tau(k)).collect();
        let px = PreparedX::new(&self.tau(i), &z, &self.cfg).map_err(|e| e.at_node(i))?;
        let need_features = matches!(px, PreparedX::Conditional(_));
        targets
            .iter()
            .map(|&j| {
                let py = PreparedY::new(&self.later(j), &self.cfg, need_features)
                    .map_err(|e| e.at_pair(i, j))?;
                let seed = salt(self.cfg.seed, (i * self.d() + j) as u64);
                test_prepared(&px, &py, &self.cfg, seed)
                    .map(|r| r.p_value)
                    .map_err(|e| e.at_pair(i, j))
            })
            .collect()
    }
}

/// Conditioning sets from marginal dependence in the earlier slice.
/// Intervened variables get an empty set and a marginal test.
pub fn plan_with<T: CiTester + ?Sized>(
    tester: &T,
    intervened: &[bool],
    alpha: f64,
    rule: ConditioningRule,
) -> Result<ConditioningPlan> {
    let d = tester.d();
    if intervened.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: intervened.len(),
        });
    }
    let mut dependent = BinaryMatrix::zeros(d);
    if rule != ConditioningRule::AllOthers {
        let pairs: Vec<(usize, usize)> = (0..d)
            .flat_map(|i| ((i + 1)..d).map(move |j| (i, j)))
            .filter(|&(i, j)| !intervened[i] || !intervened[j])
            .collect();
        let pvals = pairs
            .par_iter()
            .map(|&(i, j)| tester.tau_pair(i, j))
            .collect::<Result<Vec<_>>>()?;
        for (&(i, j), p) in pairs.iter().zip(pvals) {
            if p <= alpha {
                dependent.set(i, j, true);
                dependent.set(j, i, true);
            }
        }
    }
    let component = dependence_components(&dependent);
    let mut plan = ConditioningPlan {
        cond_sets: Vec::with_capacity(d),
        modes: Vec::with_capacity(d),
    };
    for i in 0..d {
        if intervened[i] {
            plan.cond_sets.push(Vec::new());
            plan.modes.push(TestMode::It);
            continue;
        }
        let set = match rule {
            ConditioningRule::Dependent => (0..d).filter(|&j| dependent.get(i, j)).collect(),
            ConditioningRule::DependenceClosure => (0..d)
                .filter(|&j| j != i && component[j] == component[i])
                .collect(),
            ConditioningRule::AllOthers => (0..d).filter(|&j| j != i).collect(),
        };
        plan.cond_sets.push(set);
        plan.modes.push(TestMode::Cit);
    }
    Ok(plan)
}

/// Component label per node of a symmetric dependence matrix.
fn dependence_components(dep: &BinaryMatrix) -> Vec<usize> {
    let d = dep.dim();
    let mut label = vec![usize::MAX; d];
    for root in 0..d {
        if label[root] != usize::MAX {
            continue;
        }
        label[root] = root;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for v in 0..d {
                if dep.get(u, v) && label[v] == usize::MAX {
                    label[v] = root;
                    stack.push(v);
                }
            }
        }
    }
    label
}

/// Kernel-test conditioning plan with the default rule.
pub fn build_conditioning_plan(
    data: &TwoSliceDataset,
    kcfg: &KernelConfig,
    alpha: f64,
) -> Result<ConditioningPlan> {
    let tester = KernelCiTester::new(data, kcfg)?;
    plan_with(&tester, &data.intervened, alpha, ConditioningRule::default())
}

/// Fills `P` row by row and thresholds it.
pub fn ordering_with<T: CiTester + ?Sized>(
    tester: &T,
    plan: &ConditioningPlan,
    alpha: f64,
) -> Result<(PValueMatrix, OrderingGraph)> {
    let d = tester.d();
    if plan.d() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: plan.d(),
        });
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside (0, 0.5)")));
    }
    for (i, set) in plan.cond_sets.iter().enumerate() {
        if set.iter().any(|&k| k == i || k >= d) {
            return Err(Error::InvalidConfig(format!(
                "conditioning set of node {i} is invalid: {set:?}"
            )));
        }
    }
    let rows = (0..d)
        .into_par_iter()
        .map(|i| {
            let targets: Vec<usize> = (0..d).filter(|&j| j != i).collect();
            tester
                .descendant_row(i, &plan.cond_sets[i], &targets)
                .map(|ps| (targets, ps))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pm = PValueMatrix::ones(d, alpha);
    for (i, (targets, ps)) in rows.into_iter().enumerate() {
        for (j, p) in targets.into_iter().zip(ps) {
            pm.set(i, j, p.clamp(0.0, 1.0))?;
        }
    }
    let og = OrderingGraph::from_pvalues(&pm);
    Ok((pm, og))
}

pub fn build_ordering(
    data: &TwoSliceDataset,
    plan: &ConditioningPlan,
    kcfg: &KernelConfig,
    alpha: f64,
) -> Result<(PValueMatrix, OrderingGraph)> {
    let tester = KernelCiTester::new(data, kcfg)?;
    ordering_with(&tester, plan, alpha)
}

/// Bottom-up layer assignment with cycle repair.
///
/// Layer `L_k` collects the unassigned nodes with no ordering edge to another
/// unassigned node. If there is none, the significant entry with the largest
/// p-value inside the unassigned submatrix (ties: smallest `(i, j)`) is set
/// to `2·alpha` and its edge removed, until a leaf appears. Returns the
/// layering, the repaired (acyclic) ordering graph and the updated p-values.
pub fn adjust_layers_full(
    pm: &PValueMatrix,
    og: &OrderingGraph,
) -> Result<(LayeredOrdering, OrderingGraph, PValueMatrix)> {
    let d = pm.d();
    if og.d() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: og.d(),
        });
    }
    let mut pm = pm.clone();
    let mut a = og.a_tp.clone();
    let alpha = pm.alpha;
    let mut unassigned = vec![true; d];
    let mut remaining = d;
    let mut layers = Vec::new();
    let mut layer_of = vec![usize::MAX; d];

    let is_leaf = |a: &BinaryMatrix, unassigned: &[bool], i: usize| {
        (0..d).all(|j| j == i || !unassigned[j] || !a.get(i, j))
    };

    while remaining > 0 {
        let mut leaves: Vec<usize> = (0..d)
            .filter(|&i| unassigned[i] && is_leaf(&a, &unassigned, i))
            .collect();
        while leaves.is_empty() {
            let mut best: Option<(usize, usize, f64)> = None;
            for i in (0..d).filter(|&i| unassigned[i]) {
                for j in (0..d).filter(|&j| j != i && unassigned[j]) {
                    if a.get(i, j) {
                        let p = pm.get(i, j);
                        if best.is_none_or(|(_, _, bp)| p > bp) {
                            best = Some((i, j, p));
                        }
                    }
                }
            }
            let (i, j, _) = best.expect("a node without leaves has an outgoing edge");
            pm.p[i * d + j] = (2.0 * alpha).min(1.0);
            a.set(i, j, false);
            leaves = (0..d)
                .filter(|&v| unassigned[v] && is_leaf(&a, &unassigned, v))
                .collect();
        }
        let k = layers.len();
        for &v in &leaves {
            unassigned[v] = false;
            layer_of[v] = k;
        }
        remaining -= leaves.len();
        layers.push(leaves);
    }
    let og = OrderingGraph { a_tp: a };
    debug_assert!(og.is_consistent_with(&pm));
    Ok((LayeredOrdering { layers, layer_of }, og, pm))
}

/// [`adjust_layers_full`] without the repaired p-values.
pub fn adjust_layers(
    pm: &PValueMatrix,
    og: &OrderingGraph,
) -> Result<(LayeredOrdering, OrderingGraph)> {
    adjust_layers_full(pm, og).map(|(l, g, _)| (l, g))
}

/// Output of stages 1–2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingOutcome {
    pub plan: ConditioningPlan,
    /// p-values as tested, before any repair.
    pub initial_pvalues: PValueMatrix,
    /// p-values after cycle repair.
    pub pvalues: PValueMatrix,
    pub initial_graph: OrderingGraph,
    pub graph: OrderingGraph,
    pub layers: LayeredOrdering,
}

pub fn discover_with<T: CiTester + ?Sized>(
    tester: &T,
    plan: ConditioningPlan,
    alpha: f64,
) -> Result<OrderingOutcome> {
    let (pm0, og0) = ordering_with(tester, &plan, alpha)?;
    let (layers, graph, pvalues) = adjust_layers_full(&pm0, &og0)?;
    Ok(OrderingOutcome {
        plan,
        initial_pvalues: pm0,
        pvalues,
        initial_graph: og0,
        graph,
        layers,
    })
}

/// Stages 1–2 with kernel tests: conditioning plan, p-value matrix,
/// layer assignment. Returns the repaired p-values and ordering graph.
pub fn discover_ordering(
    data: &TwoSliceDataset,
    kcfg: &KernelConfig,
    alpha: f64,
) -> Result<(PValueMatrix, OrderingGraph, LayeredOrdering)> {
    let tester = KernelCiTester::new(data, kcfg)?;
    let plan = plan_with(&tester, &data.intervened, alpha, ConditioningRule::default())?;
    let out = discover_with(&tester, plan, alpha)?;
    Ok((out.pvalues, out.graph, out.layers))
}
