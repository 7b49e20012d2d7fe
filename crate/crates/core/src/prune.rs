//! Pruning of the ordering graph by additive-model significance tests.
//!
//! Each node `j` is regressed on spline expansions of its candidate parents
//! (the nodes with an ordering edge into `j`), all taken from the later
//! slice. An edge `i → j` survives iff the F-test for dropping `i`'s basis
//! block has p-value ≤ `beta`. With `lag_adjust` the node's own earlier-slice
//! value enters as an always-kept covariate, matching the lagged term of the
//! generating equation.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::graph::{BinaryMatrix, Dag};
use crate::ordering::OrderingGraph;
use crate::simgen::TwoSliceDataset;

pub const DEFAULT_BETA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    /// Cubic B-splines on `knots` quantile knots (boundaries included).
    CubicSpline { knots: usize },
    Polynomial { degree: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    pub beta: f64,
    pub basis: Basis,
    pub min_samples: usize,
    pub lag_adjust: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            basis: Basis::CubicSpline { knots: 10 },
            min_samples: 30,
            lag_adjust: true,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidConfig(format!("beta {} outside (0, 1)", self.beta)));
        }
        match self.basis {
            Basis::CubicSpline { knots } if knots < 4 => Err(Error::InvalidConfig(
                "cubic spline basis needs at least 4 knots".into(),
            )),
            Basis::Polynomial { degree } if degree < 1 => Err(Error::InvalidConfig(
                "polynomial basis needs degree ≥ 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Centred basis expansion of one covariate, one column per basis function
/// (the constant direction is left to the intercept).
pub fn basis_expansion(x: &[f64], basis: Basis) -> DMatrix<f64> {
    let mut m = match basis {
        Basis::CubicSpline { knots } => bspline_design(x, knots),
        Basis::Polynomial { degree } => {
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
            DMatrix::from_fn(x.len(), degree, |r, c| ((x[r] - mean) / sd).powi(c as i32 + 1))
        }
    };
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    m
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Clamped cubic B-spline design with knots at empirical quantiles; the
/// first basis function is dropped since the rows sum to one.
fn bspline_design(x: &[f64], knots: usize) -> DMatrix<f64> {
    const DEG: usize = 3;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0];
    let hi = *sorted.last().expect("non-empty");
    let mut inner: Vec<f64> = (1..knots - 1)
        .map(|k| quantile(&sorted, k as f64 / (knots - 1) as f64))
        .filter(|&v| v > lo && v < hi)
        .collect();
    inner.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (hi - lo));
    let mut t = vec![lo; DEG + 1];
    t.extend(&inner);
    t.extend(std::iter::repeat_n(hi, DEG + 1));
    let nb = t.len() - DEG - 1;
    let mut m = DMatrix::<f64>::zeros(x.len(), nb - 1);
    let mut b = vec![0.0; t.len()];
    for (r, &v) in x.iter().enumerate() {
        bspline_row(&t, v, &mut b);
        for c in 1..nb {
            m[(r, c - 1)] = b[c];
        }
    }
    m
}

/// Cox–de Boor recursion; writes the `len(t) - 4` cubic basis values into `out`.
fn bspline_row(t: &[f64], x: f64, out: &mut [f64]) {
    const DEG: usize = 3;
    let m = t.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    // span index with t[s] <= x < t[s+1]; the right boundary belongs to the last span
    let last = m - DEG - 2;
    let mut s = DEG;
    while s < last && x >= t[s + 1] {
        s += 1;
    }
    out[s] = 1.0;
    for k in 1..=DEG {
        for i in (s.saturating_sub(k))..=s {
            let left = if t[i + k] > t[i] {
                (x - t[i]) / (t[i + k] - t[i]) * out[i]
            } else {
                0.0
            };
            let right = if i + 1 < m && t[i + k + 1] > t[i + 1] {
                (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * out[i + 1]
            } else {
                0.0
            };
            out[i] = left + right;
        }
    }
}

/// p-values of candidate parents of one node. Implementations must return
/// one value per candidate, in order.
pub trait ParentSignificance: Sync {
    fn d(&self) -> usize;

    fn candidate_pvalues(&self, target: usize, candidates: &[usize]) -> Result<NodeFit>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFit {
    pub pvalues: Vec<f64>,
    pub warning: Option<String>,
}

/// Additive spline regression with per-covariate F-tests.
pub struct AdditiveModelTester<'a> {
    data: &'a TwoSliceDataset,
    cfg: PruneConfig,
}

impl<'a> AdditiveModelTester<'a> {
    pub fn new(data: &'a TwoSliceDataset, cfg: &PruneConfig) -> Result<Self> {
        cfg.validate()?;
        if data.n() < cfg.min_samples {
            return Err(Error::DegenerateInput(format!(
                "{} samples, pruning needs at least {}",
                data.n(),
                cfg.min_samples
            )));
        }
        Ok(Self {
            data,
            cfg: cfg.clone(),
        })
    }
}

/// Least squares on the normal equations restricted to `cols`. Returns the
/// residual sum of squares and whether the ridge fallback was needed.
fn rss_subset(xtx: &DMatrix<f64>, xty: &DVector<f64>, yty: f64, cols: &[usize]) -> (f64, bool) {
    let p = cols.len();
    let a = DMatrix::from_fn(p, p, |r, c| xtx[(cols[r], cols[c])]);
    let b = DVector::from_fn(p, |r, _| xty[cols[r]]);
    let solve = |a: DMatrix<f64>| Cholesky::new(a).map(|ch| ch.solve(&b));
    let (coef, ridged) = match solve(a.clone()) {
        Some(c) if c.iter().all(|v| v.is_finite()) => (c, false),
        _ => {
            let lambda = 1e-8 * (a.trace() / p as f64).max(1e-12);
            let mut a2 = a.clone();
            for k in 0..p {
                a2[(k, k)] += lambda;
            }
            let c = solve(a2).expect("ridge-stabilized Gram matrix is positive definite");
            (c, true)
        }
    };
    // rss = yᵀy - 2 bᵀXᵀy + bᵀXᵀX b
    let rss = yty - 2.0 * coef.dot(&b) + coef.dot(&(&a * &coef));
    (rss.max(0.0), ridged)
}

impl ParentSignificance for AdditiveModelTester<'_> {
    fn d(&self) -> usize {
        self.data.d()
    }

    fn candidate_pvalues(&self, target: usize, candidates: &[usize]) -> Result<NodeFit> {
        if candidates.is_empty() {
            return Ok(NodeFit {
                pvalues: Vec::new(),
                warning: None,
            });
        }
        let n = self.data.n();
        let y: Vec<f64> = self.data.x_t.column(target).iter().copied().collect();
        let mut blocks: Vec<DMatrix<f64>> = Vec::new();
        if self.cfg.lag_adjust {
            let lag: Vec<f64> = self.data.x_tau.column(target).iter().copied().collect();
            blocks.push(basis_expansion(&lag, self.cfg.basis));
        }
        let first_candidate_block = blocks.len();
        for &c in candidates {
            let xc: Vec<f64> = self.data.x_t.column(c).iter().copied().collect();
            blocks.push(basis_expansion(&xc, self.cfg.basis));
        }
        let p_total = 1 + blocks.iter().map(|b| b.ncols()).sum::<usize>();
        let mut design = DMatrix::<f64>::zeros(n, p_total);
        design.column_mut(0).fill(1.0);
        let mut ranges = Vec::with_capacity(blocks.len());
        let mut offset = 1;
        for b in &blocks {
            design.columns_mut(offset, b.ncols()).copy_from(b);
            ranges.push(offset..offset + b.ncols());
            offset += b.ncols();
        }
        let yv = DVector::from_vec(y);
        let xtx = design.transpose() * &design;
        let xty = design.transpose() * &yv;
        let yty = yv.norm_squared();

        let all: Vec<usize> = (0..p_total).collect();
        let (rss_full, mut ridged) = rss_subset(&xtx, &xty, yty, &all);
        let df_resid = n as isize - p_total as isize;
        let mut warning = None;
        if df_resid < 1 {
            warning = Some(format!(
                "{p_total} regression parameters for {n} samples; residual degrees of freedom clamped to 1"
            ));
        }
        let df2 = df_resid.max(1) as f64;
        let mut pvalues = Vec::with_capacity(candidates.len());
        for k in 0..candidates.len() {
            let drop = &ranges[first_candidate_block + k];
            let keep: Vec<usize> = all.iter().copied().filter(|c| !drop.contains(c)).collect();
            let (rss_reduced, r) = rss_subset(&xtx, &xty, yty, &keep);
            ridged |= r;
            let q = drop.len() as f64;
            pvalues.push(f_test_pvalue(rss_reduced, rss_full, q, df2));
        }
        if ridged && warning.is_none() {
            warning = Some("rank-deficient design; ridge-stabilized fit used".into());
        }
        Ok(NodeFit { pvalues, warning })
    }
}

fn f_test_pvalue(rss_reduced: f64, rss_full: f64, q: f64, df2: f64) -> f64 {
    let gain = (rss_reduced - rss_full).max(0.0);
    if rss_full <= 1e-14 * rss_reduced.max(1e-300) {
        return if gain > 0.0 { 0.0 } else { 1.0 };
    }
    let f = (gain / q) / (rss_full / df2);
    match FisherSnedecor::new(q, df2) {
        Ok(dist) => dist.sf(f).clamp(0.0, 1.0),
        Err(_) => 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub dag: Dag,
    /// `edge_pvalues[j]` lists `(candidate, p)` for node `j`.
    pub edge_pvalues: Vec<Vec<(usize, f64)>>,
    pub warnings: Vec<(usize, String)>,
    pub n_pruned: usize,
}

pub fn prune_with<S: ParentSignificance + ?Sized>(
    sig: &S,
    og: &OrderingGraph,
    beta: f64,
    labels: Vec<String>,
) -> Result<PruneOutcome> {
    use rayon::prelude::*;

    let d = og.d();
    if sig.d() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: sig.d(),
        });
    }
    if !og.a_tp.is_acyclic() {
        return Err(Error::Cyclic);
    }
    let fits = (0..d)
        .into_par_iter()
        .map(|j| {
            let cands: Vec<usize> = (0..d).filter(|&i| og.a_tp.get(i, j)).collect();
            sig.candidate_pvalues(j, &cands)
                .map_err(|e| e.at_node(j))
                .map(|fit| (cands, fit))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut adj = BinaryMatrix::zeros(d);
    let mut edge_pvalues = Vec::with_capacity(d);
    let mut warnings = Vec::new();
    for (j, (cands, fit)) in fits.into_iter().enumerate() {
        if fit.pvalues.len() != cands.len() {
            return Err(Error::DimensionMismatch {
                expected: cands.len(),
                found: fit.pvalues.len(),
            });
        }
        for (&i, &p) in cands.iter().zip(&fit.pvalues) {
            if p <= beta {
                adj.set(i, j, true);
            }
        }
        if let Some(w) = fit.warning {
            log::warn!("node {j}: {w}");
            warnings.push((j, w));
        }
        edge_pvalues.push(cands.into_iter().zip(fit.pvalues).collect());
    }
    let dag = Dag::with_labels(adj, labels)?;
    let n_pruned = og.n_edges() - dag.n_edges();
    Ok(PruneOutcome {
        dag,
        edge_pvalues,
        warnings,
        n_pruned,
    })
}

/// Prunes `og` on `data` and returns the final DAG.
pub fn prune(data: &TwoSliceDataset, og: &OrderingGraph, cfg: &PruneConfig) -> Result<Dag> {
    prune_detailed(data, og, cfg).map(|o| o.dag)
}

pub fn prune_detailed(
    data: &TwoSliceDataset,
    og: &OrderingGraph,
    cfg: &PruneConfig,
) -> Result<PruneOutcome> {
    let tester = AdditiveModelTester::new(data, cfg)?;
    prune_with(&tester, og, cfg.beta, data.labels.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bspline_partition_of_unity() {
        let x: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[0], sorted[199]);
        let mut inner: Vec<f64> = (1..9).map(|k| quantile(&sorted, k as f64 / 9.0)).collect();
        inner.dedup();
        let mut t = vec![lo; 4];
        t.extend(&inner);
        t.extend([hi; 4]);
        let mut b = vec![0.0; t.len()];
        for &v in x.iter().chain([lo, hi].iter()) {
            bspline_row(&t, v, &mut b);
            let nb = t.len() - 4;
            let s: f64 = b[..nb].iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "sum {s} at {v}");
            assert!(b[..nb].iter().all(|&v| v >= -1e-15));
        }
    }

    #[test]
    fn spline_basis_width() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        // 10 knots: 8 interior + 4 → 12 functions, one dropped
        assert_eq!(basis_expansion(&x, Basis::CubicSpline { knots: 10 }).ncols(), 11);
        assert_eq!(basis_expansion(&x, Basis::Polynomial { degree: 3 }).ncols(), 3);
    }

    #[test]
    fn f_test_edge_cases() {
        assert_eq!(f_test_pvalue(5.0, 0.0, 2.0, 10.0), 0.0);
        assert_eq!(f_test_pvalue(1.0, 1.0, 2.0, 10.0), 1.0);
        let p = f_test_pvalue(12.0, 10.0, 1.0, 100.0);
        // F = 20 on (1, 100)
        assert!(p > 1e-5 && p < 1e-4, "p = {p}");
    }

    #[test]
    fn config_validation() {
        assert!(PruneConfig::default().validate().is_ok());
        let bad = PruneConfig {
            basis: Basis::CubicSpline { knots: 3 },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PruneConfig {
            beta: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
