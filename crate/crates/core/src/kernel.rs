//! Gaussian-kernel primitives shared by the independence tests: column
//! standardization, the median-distance bandwidth, dense centred Gram
//! matrices and pivoted incomplete Cholesky factors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row-major `n × dim` point cloud.
#[derive(Debug, Clone)]
pub struct Points {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn from_columns(cols: &[&[f64]]) -> Self {
        let dim = cols.len();
        let n = cols.first().map_or(0, |c| c.len());
        let mut data = Vec::with_capacity(n * dim);
        for r in 0..n {
            data.extend(cols.iter().map(|c| c[r]));
        }
        Self { n, dim, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    #[inline]
    pub fn sq_dist(&self, a: usize, b: usize) -> f64 {
        self.row(a)
            .iter()
            .zip(self.row(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    }
}

/// Zero mean, unit (sample) variance. Fails on a constant column.
pub fn standardize(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::DegenerateInput("fewer than two samples".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite value".into()));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 1e-12 * (1.0 + mean.abs())) {
        return Err(Error::DegenerateInput(
            "constant vector (bandwidth undefined)".into(),
        ));
    }
    Ok(x.iter().map(|v| (v - mean) / sd).collect())
}

/// Rows used for the bandwidth estimate are capped; beyond this an evenly
/// spaced subset is taken.
const MEDIAN_MAX_ROWS: usize = 1000;

/// Median of pairwise Euclidean distances. Falls back to the mean distance if
/// more than half of the pairs coincide.
pub fn median_distance(p: &Points) -> Result<f64> {
    let n = p.n();
    let rows: Vec<usize> = if n > MEDIAN_MAX_ROWS {
        (0..MEDIAN_MAX_ROWS).map(|k| k * n / MEDIAN_MAX_ROWS).collect()
    } else {
        (0..n).collect()
    };
    let m = rows.len();
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in (a + 1)..m {
            dists.push(p.sq_dist(rows[a], rows[b]).sqrt());
        }
    }
    if dists.is_empty() {
        return Err(Error::DegenerateInput("fewer than two samples".into()));
    }
    let mid = dists.len() / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let median = *median;
    if median > 0.0 {
        return Ok(median);
    }
    let mean = dists.iter().sum::<f64>() / dists.len() as f64;
    if mean > 0.0 {
        Ok(mean)
    } else {
        Err(Error::DegenerateInput("all points coincide".into()))
    }
}

#[inline]
fn gauss(sq: f64, inv_two_sigma2: f64) -> f64 {
    (-sq * inv_two_sigma2).exp()
}

/// Dense Gaussian Gram matrix `exp(-|a-b|² / 2σ²)`.
pub fn gram(p: &Points, sigma: f64) -> DMatrix<f64> {
    let n = p.n();
    let c = 1.0 / (2.0 * sigma * sigma);
    let mut k = DMatrix::<f64>::zeros(n, n);
    for b in 0..n {
        k[(b, b)] = 1.0;
        for a in (b + 1)..n {
            let v = gauss(p.sq_dist(a, b), c);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    k
}

/// `H K H` with `H = I - 11ᵀ/n`, in place.
pub fn center_gram(k: &mut DMatrix<f64>) {
    let n = k.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| k.column(j).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    for j in 0..n {
        for i in 0..n {
            k[(i, j)] += grand - row_means[i] - col_means[j];
        }
    }
}

/// Subtracts column means, so `G Gᵀ` becomes `H G Gᵀ H`.
pub fn center_columns(g: &mut DMatrix<f64>) {
    let n = g.nrows() as f64;
    for mut col in g.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
}

/// Pivoted incomplete Cholesky of the Gaussian Gram matrix: returns `G`
/// (`n × r`) with `K ≈ G Gᵀ`, stopping once the trace of the residual drops
/// below `rel_tol · n` or `max_rank` columns are built.
pub fn incomplete_cholesky(p: &Points, sigma: f64, rel_tol: f64, max_rank: usize) -> DMatrix<f64> {
    let n = p.n();
    let c = 1.0 / (2.0 * sigma * sigma);
    let max_rank = max_rank.min(n);
    let stop = rel_tol * n as f64;
    let mut diag = vec![1.0f64; n];
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut col = vec![0.0; n];
    while cols.len() < max_rank {
        let residual: f64 = diag.iter().sum();
        if residual <= stop {
            break;
        }
        let (pivot, &dmax) = diag
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("n > 0");
        if dmax <= 1e-12 {
            break;
        }
        for (i, v) in col.iter_mut().enumerate() {
            *v = gauss(p.sq_dist(i, pivot), c);
        }
        for prev in &cols {
            let f = prev[pivot];
            for (v, &g) in col.iter_mut().zip(prev) {
                *v -= f * g;
            }
        }
        let s = 1.0 / dmax.sqrt();
        col.iter_mut().for_each(|v| *v *= s);
        for (d, &g) in diag.iter_mut().zip(&col) {
            *d = (*d - g * g).max(0.0);
        }
        diag[pivot] = 0.0;
        cols.push(col.clone());
    }
    let r = cols.len();
    let mut g = DMatrix::<f64>::zeros(n, r);
    for (k, cvec) in cols.into_iter().enumerate() {
        g.set_column(k, &DVector::from_vec(cvec));
    }
    g
}

/// Elementwise inner product `Σ A∘B`.
pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .sum()
}

/// Upper tail of the gamma distribution matched to the given null mean and
/// variance. Returns `None` if the moments are degenerate.
pub fn gamma_upper_tail(stat: f64, mean: f64, var: f64) -> Option<f64> {
    use statrs::distribution::{ContinuousCDF, Gamma};
    if !(mean > 0.0 && var > 0.0 && mean.is_finite() && var.is_finite()) {
        return None;
    }
    let shape = mean * mean / var;
    let rate = mean / var;
    let dist = Gamma::new(shape, rate).ok()?;
    let p = dist.sf(stat.max(0.0));
    p.is_finite().then(|| p.clamp(0.0, 1.0))
}
