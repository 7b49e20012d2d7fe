//! Kernel independence tests with Gaussian kernels.
//!
//! [`hsic_test`] is the marginal HSIC test; [`kci_test`] is the kernel
//! conditional independence test, which residualizes the centred Gram
//! matrices of `(x, z)` and `y` by kernel ridge regression on `z` before
//! forming the HSIC-style statistic. Both default to a gamma approximation of
//! the null distribution matched on its first two moments.
//!
//! The conditional test works on low-rank factors (`K ≈ G Gᵀ`) from pivoted
//! incomplete Cholesky, so the ridge projection and all traces cost
//! `O(n r²)` instead of `O(n³)`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    center_columns, center_gram, frobenius_inner, gamma_upper_tail, gram, incomplete_cholesky,
    median_distance, standardize, Points,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BandwidthRule {
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NullKind {
    GammaApprox,
    Permutation,
}

/// Null distribution actually used for a reported p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NullMethod {
    GammaApprox,
    Permutation(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub bandwidth_rule: BandwidthRule,
    /// Kernel ridge regularizer per sample: the conditional test uses `ridge · n`.
    pub ridge: f64,
    pub null: NullKind,
    pub permutations: usize,
    /// Uniformly subsample rows before kernelization when `n` exceeds this.
    pub subsample_cap: Option<usize>,
    /// Incomplete Cholesky stops once the residual trace is below `rank_tolerance · n`.
    pub rank_tolerance: f64,
    /// Multiplies the median-heuristic bandwidth of the conditional test's
    /// joint `(x, z)` and `z` kernels. Univariate kernels are unscaled.
    pub conditional_bandwidth_scale: f64,
    /// Seed for permutations and row subsampling.
    pub seed: u64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            bandwidth_rule: BandwidthRule::MedianHeuristic,
            ridge: 1e-3,
            null: NullKind::GammaApprox,
            permutations: 500,
            subsample_cap: None,
            rank_tolerance: 1e-6,
            conditional_bandwidth_scale: 0.5,
            seed: 0,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge > 0.0) {
            return Err(Error::InvalidConfig("ridge must be positive".into()));
        }
        if self.null == NullKind::Permutation && self.permutations < 99 {
            return Err(Error::InvalidConfig(
                "permutation null needs at least 99 permutations".into(),
            ));
        }
        if let BandwidthRule::Fixed(s) = self.bandwidth_rule {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig("fixed bandwidth must be positive".into()));
            }
        }
        if !(self.conditional_bandwidth_scale > 0.0 && self.conditional_bandwidth_scale.is_finite()) {
            return Err(Error::InvalidConfig(
                "conditional_bandwidth_scale must be positive".into(),
            ));
        }
        if !(self.rank_tolerance > 0.0 && self.rank_tolerance < 1.0) {
            return Err(Error::InvalidConfig("rank_tolerance must lie in (0, 1)".into()));
        }
        if self.subsample_cap.is_some_and(|c| c < 20) {
            return Err(Error::InvalidConfig("subsample_cap must be at least 20".into()));
        }
        Ok(())
    }

    /// Rows kept for a test on `n` samples; `None` keeps all of them.
    pub fn subsample_rows(&self, n: usize) -> Option<Vec<usize>> {
        let cap = self.subsample_cap?;
        if n <= cap {
            return None;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_5eed_5eed_5eed);
        let mut rows = rand::seq::index::sample(&mut rng, n, cap).into_vec();
        rows.sort_unstable();
        Some(rows)
    }

    fn bandwidth(&self, p: &Points) -> Result<f64> {
        match self.bandwidth_rule {
            BandwidthRule::MedianHeuristic => median_distance(p),
            BandwidthRule::Fixed(s) => Ok(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub null_method: NullMethod,
    pub n_used: usize,
    /// Conditioning columns dropped because they were constant.
    pub dropped_conditioning: Vec<usize>,
}

pub const MIN_SAMPLES: usize = 20;

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

fn take_rows(x: &[f64], rows: Option<&[usize]>) -> Vec<f64> {
    match rows {
        Some(rows) => rows.iter().map(|&r| x[r]).collect(),
        None => x.to_vec(),
    }
}

/// Per-test salt mixed into the permutation seed.
pub(crate) fn salt(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_add(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 31)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 29)
}

/// One side of a marginal HSIC test: a doubly-centred Gram matrix.
#[derive(Debug, Clone)]
pub struct CenteredGram {
    kc: DMatrix<f64>,
    trace: f64,
    fro2: f64,
}

impl CenteredGram {
    /// Standardizes `x` (already row-subsampled) and builds `H K H`.
    pub fn new(x: &[f64], cfg: &KernelConfig) -> Result<Self> {
        let z = standardize(x)?;
        let p = Points::from_columns(&[&z]);
        let sigma = cfg.bandwidth(&p)?;
        let mut kc = gram(&p, sigma);
        center_gram(&mut kc);
        let trace = kc.trace();
        let fro2 = kc.norm_squared();
        Ok(Self { kc, trace, fro2 })
    }

    pub fn n(&self) -> usize {
        self.kc.nrows()
    }
}

/// HSIC test between two prepared sides. `perm_seed` drives the permutation null.
pub fn hsic_prepared(
    kx: &CenteredGram,
    ky: &CenteredGram,
    cfg: &KernelConfig,
    perm_seed: u64,
) -> TestResult {
    let n = kx.n();
    let nf = n as f64;
    let t = frobenius_inner(&kx.kc, &ky.kc);
    let statistic = (t / (nf * nf)).max(0.0);
    let gamma = || gamma_upper_tail(t, kx.trace * ky.trace / nf, 2.0 * kx.fro2 * ky.fro2 / (nf * nf));
    let (p_value, null_method) = match cfg.null {
        NullKind::GammaApprox => match gamma() {
            Some(p) => (p, NullMethod::GammaApprox),
            None => hsic_permutation(kx, ky, t, cfg.permutations.max(99), perm_seed),
        },
        NullKind::Permutation => hsic_permutation(kx, ky, t, cfg.permutations, perm_seed),
    };
    TestResult {
        statistic,
        p_value,
        null_method,
        n_used: n,
        dropped_conditioning: Vec::new(),
    }
}

fn hsic_permutation(
    kx: &CenteredGram,
    ky: &CenteredGram,
    observed: f64,
    b: usize,
    seed: u64,
) -> (f64, NullMethod) {
    let n = kx.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    let tol = 1e-12 * observed.abs().max(1e-300);
    let mut exceed = 0usize;
    for _ in 0..b {
        perm.shuffle(&mut rng);
        let mut t = 0.0;
        for c in 0..n {
            let lc = ky.kc.column(perm[c]);
            let kcol = kx.kc.column(c);
            for r in 0..n {
                t += kcol[r] * lc[perm[r]];
            }
        }
        if t >= observed - tol {
            exceed += 1;
        }
    }
    (
        (exceed + 1) as f64 / (b + 1) as f64,
        NullMethod::Permutation(b),
    )
}

/// Marginal HSIC independence test.
///
/// Statistic `(1/n²) tr(K_c L_c)` on standardized inputs; p-value from the
/// configured null.
pub fn hsic_test(x: &[f64], y: &[f64], cfg: &KernelConfig) -> Result<TestResult> {
    cfg.validate()?;
    check_len(x.len(), y.len())?;
    if x.len() < MIN_SAMPLES {
        return Err(Error::DegenerateInput(format!(
            "{} samples, at least {MIN_SAMPLES} required",
            x.len()
        )));
    }
    let rows = cfg.subsample_rows(x.len());
    let kx = CenteredGram::new(&take_rows(x, rows.as_deref()), cfg)?;
    let ky = CenteredGram::new(&take_rows(y, rows.as_deref()), cfg)?;
    Ok(hsic_prepared(&kx, &ky, cfg, cfg.seed))
}

/// Low-rank centred kernel features `G` with `H K H ≈ G Gᵀ`.
#[derive(Debug, Clone)]
pub struct Features {
    g: DMatrix<f64>,
}

impl Features {
    fn from_points(p: &Points, cfg: &KernelConfig, scale: f64) -> Result<Self> {
        let sigma = match cfg.bandwidth_rule {
            BandwidthRule::MedianHeuristic => scale * cfg.bandwidth(p)?,
            BandwidthRule::Fixed(s) => s,
        };
        let mut g = incomplete_cholesky(p, sigma, cfg.rank_tolerance, p.n());
        center_columns(&mut g);
        Ok(Self { g })
    }

    /// Features of a single variable (already row-subsampled).
    pub fn univariate(y: &[f64], cfg: &KernelConfig) -> Result<Self> {
        let z = standardize(y)?;
        Self::from_points(&Points::from_columns(&[&z]), cfg, 1.0)
    }

    pub fn rank(&self) -> usize {
        self.g.ncols()
    }
}

/// `R = ε (K_z + ε I)^{-1} = I - U diag(w) Uᵀ` for `K_z = G Gᵀ`.
#[derive(Debug, Clone)]
struct Residualizer {
    u: DMatrix<f64>,
    w: Vec<f64>,
}

impl Residualizer {
    fn new(gz: &DMatrix<f64>, eps: f64) -> Self {
        let gram = gz.transpose() * gz;
        let eig = nalgebra::SymmetricEigen::new(gram);
        let smax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..eig.eigenvalues.len())
            .filter(|&k| eig.eigenvalues[k] > 1e-12 * smax.max(1e-300))
            .collect();
        let n = gz.nrows();
        let mut u = DMatrix::<f64>::zeros(n, keep.len());
        let mut w = Vec::with_capacity(keep.len());
        for (c, &k) in keep.iter().enumerate() {
            let s = eig.eigenvalues[k];
            let v = eig.eigenvectors.column(k);
            let col = (gz * v) / s.sqrt();
            u.set_column(c, &col);
            w.push(s / (s + eps));
        }
        Self { u, w }
    }

    fn apply(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mut proj = self.u.transpose() * g;
        for (k, &wk) in self.w.iter().enumerate() {
            proj.row_mut(k).scale_mut(wk);
        }
        g - &self.u * proj
    }
}

/// The `(x, z)` side of a conditional test, reusable against many `y`.
#[derive(Debug, Clone)]
pub struct ConditionalSide {
    fx: DMatrix<f64>,
    resid: Residualizer,
    trace: f64,
    fro2: f64,
    dropped: Vec<usize>,
}

/// Either a genuine conditional side or, when no usable conditioning column
/// remains, a marginal one.
#[derive(Debug, Clone)]
pub enum PreparedX {
    Conditional(ConditionalSide),
    Marginal(CenteredGram, Vec<usize>),
}

impl PreparedX {
    /// `x` and the columns of `z` must already be row-subsampled.
    pub fn new(x: &[f64], z: &[Vec<f64>], cfg: &KernelConfig) -> Result<Self> {
        let xs = standardize(x)?;
        let mut dropped = Vec::new();
        let mut zs = Vec::with_capacity(z.len());
        for (k, col) in z.iter().enumerate() {
            check_len(x.len(), col.len())?;
            match standardize(col) {
                Ok(s) => zs.push(s),
                Err(Error::DegenerateInput(_)) => dropped.push(k),
                Err(e) => return Err(e),
            }
        }
        if zs.is_empty() {
            return Ok(PreparedX::Marginal(CenteredGram::new(x, cfg)?, dropped));
        }
        let n = x.len();
        let half: Vec<Vec<f64>> = zs.iter().map(|c| c.iter().map(|v| 0.5 * v).collect()).collect();
        let mut xz_cols: Vec<&[f64]> = vec![&xs];
        xz_cols.extend(half.iter().map(|c| c.as_slice()));
        let scale = cfg.conditional_bandwidth_scale;
        let fx_raw = Features::from_points(&Points::from_columns(&xz_cols), cfg, scale)?;
        let z_cols: Vec<&[f64]> = zs.iter().map(|c| c.as_slice()).collect();
        let gz = Features::from_points(&Points::from_columns(&z_cols), cfg, scale)?;
        let resid = Residualizer::new(&gz.g, cfg.ridge * n as f64);
        let fx = resid.apply(&fx_raw.g);
        let trace = fx.norm_squared();
        let fro2 = (fx.transpose() * &fx).norm_squared();
        Ok(PreparedX::Conditional(ConditionalSide {
            fx,
            resid,
            trace,
            fro2,
            dropped,
        }))
    }
}

/// The `y` side, prepared once per variable.
#[derive(Debug, Clone)]
pub struct PreparedY {
    raw: Vec<f64>,
    features: Option<Features>,
}

impl PreparedY {
    pub fn new(y: &[f64], cfg: &KernelConfig, need_features: bool) -> Result<Self> {
        standardize(y)?;
        let features = if need_features {
            Some(Features::univariate(y, cfg)?)
        } else {
            None
        };
        Ok(Self {
            raw: y.to_vec(),
            features,
        })
    }
}

/// Runs the test `x ⊥ y | z` on prepared sides.
pub fn test_prepared(
    px: &PreparedX,
    py: &PreparedY,
    cfg: &KernelConfig,
    perm_seed: u64,
) -> Result<TestResult> {
    match px {
        PreparedX::Marginal(kx, dropped) => {
            let ky = CenteredGram::new(&py.raw, cfg)?;
            let mut res = hsic_prepared(kx, &ky, cfg, perm_seed);
            res.dropped_conditioning = dropped.clone();
            Ok(res)
        }
        PreparedX::Conditional(side) => {
            let owned;
            let fy_raw = match &py.features {
                Some(f) => f,
                None => {
                    owned = Features::univariate(&py.raw, cfg)?;
                    &owned
                }
            };
            Ok(kci_prepared(side, fy_raw, cfg, perm_seed))
        }
    }
}

fn kci_prepared(side: &ConditionalSide, fy: &Features, cfg: &KernelConfig, perm_seed: u64) -> TestResult {
    let n = side.fx.nrows();
    let nf = n as f64;
    let fy = side.resid.apply(&fy.g);
    let cross = side.fx.transpose() * &fy;
    let t = cross.norm_squared();
    let tr_y = fy.norm_squared();
    let fro2_y = (fy.transpose() * &fy).norm_squared();
    let gamma = || gamma_upper_tail(t, side.trace * tr_y / nf, 2.0 * side.fro2 * fro2_y / (nf * nf));
    let (p_value, null_method) = match cfg.null {
        NullKind::GammaApprox => match gamma() {
            Some(p) => (p, NullMethod::GammaApprox),
            None => kci_permutation(&side.fx, &fy, t, cfg.permutations.max(99), perm_seed),
        },
        NullKind::Permutation => kci_permutation(&side.fx, &fy, t, cfg.permutations, perm_seed),
    };
    TestResult {
        statistic: (t / (nf * nf)).max(0.0),
        p_value,
        null_method,
        n_used: n,
        dropped_conditioning: side.dropped.clone(),
    }
}

/// Permutes the rows of the residualized `y` features.
fn kci_permutation(
    fx: &DMatrix<f64>,
    fy: &DMatrix<f64>,
    observed: f64,
    b: usize,
    seed: u64,
) -> (f64, NullMethod) {
    let n = fx.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    let fxt = fx.transpose();
    let tol = 1e-12 * observed.abs().max(1e-300);
    let mut exceed = 0usize;
    for _ in 0..b {
        perm.shuffle(&mut rng);
        let permuted = fy.select_rows(perm.iter());
        if (&fxt * permuted).norm_squared() >= observed - tol {
            exceed += 1;
        }
    }
    (
        (exceed + 1) as f64 / (b + 1) as f64,
        NullMethod::Permutation(b),
    )
}

/// Kernel conditional independence test of `x ⊥ y | z`, `z` being `n × m`.
/// With `m = 0` this is exactly [`hsic_test`].
pub fn kci_test(x: &[f64], y: &[f64], z: &DMatrix<f64>, cfg: &KernelConfig) -> Result<TestResult> {
    if z.ncols() == 0 {
        return hsic_test(x, y, cfg);
    }
    cfg.validate()?;
    check_len(x.len(), y.len())?;
    check_len(x.len(), z.nrows())?;
    if x.len() < MIN_SAMPLES {
        return Err(Error::DegenerateInput(format!(
            "{} samples, at least {MIN_SAMPLES} required",
            x.len()
        )));
    }
    let rows = cfg.subsample_rows(x.len());
    let rows = rows.as_deref();
    let zc: Vec<Vec<f64>> = z
        .column_iter()
        .map(|c| take_rows(c.as_slice(), rows))
        .collect();
    let px = PreparedX::new(&take_rows(x, rows), &zc, cfg)?;
    let py = PreparedY::new(&take_rows(y, rows), cfg, matches!(px, PreparedX::Conditional(_)))?;
    test_prepared(&px, &py, cfg, cfg.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn perfect_dependence_is_detected() {
        let x = normals(200, 1);
        let r = hsic_test(&x, &x, &KernelConfig::default()).unwrap();
        assert!(r.p_value < 1e-6, "p = {}", r.p_value);
        assert!(r.statistic > 0.0);
    }

    #[test]
    fn constant_input_is_degenerate() {
        let x = normals(50, 2);
        let c = vec![3.0; 50];
        assert!(matches!(
            hsic_test(&x, &c, &KernelConfig::default()),
            Err(Error::DegenerateInput(_))
        ));
        let z = DMatrix::from_column_slice(50, 1, &normals(50, 3));
        assert!(matches!(
            kci_test(&c, &x, &z, &KernelConfig::default()),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn too_few_samples_or_length_mismatch() {
        let x = normals(10, 4);
        assert!(hsic_test(&x, &x, &KernelConfig::default()).is_err());
        let y = normals(30, 5);
        assert!(matches!(
            hsic_test(&normals(31, 6), &y, &KernelConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn empty_conditioning_delegates_to_hsic() {
        let x = normals(120, 7);
        let y: Vec<f64> = x.iter().zip(normals(120, 8)).map(|(a, b)| a.sin() + b).collect();
        let cfg = KernelConfig::default();
        let z = DMatrix::<f64>::zeros(120, 0);
        assert_eq!(kci_test(&x, &y, &z, &cfg).unwrap(), hsic_test(&x, &y, &cfg).unwrap());
    }

    #[test]
    fn constant_conditioning_column_is_dropped() {
        let x = normals(100, 9);
        let y = normals(100, 10);
        let mut z = DMatrix::<f64>::zeros(100, 2);
        z.set_column(1, &nalgebra::DVector::from_vec(normals(100, 11)));
        let r = kci_test(&x, &y, &z, &KernelConfig::default()).unwrap();
        assert_eq!(r.dropped_conditioning, vec![0]);
        let all_const = DMatrix::<f64>::from_element(100, 1, 2.0);
        let r = kci_test(&x, &y, &all_const, &KernelConfig::default()).unwrap();
        assert_eq!(r.dropped_conditioning, vec![0]);
        assert_eq!(r.p_value, hsic_test(&x, &y, &KernelConfig::default()).unwrap().p_value);
    }

    #[test]
    fn permutation_pvalue_on_grid() {
        let x = normals(40, 12);
        let y = normals(40, 13);
        let cfg = KernelConfig {
            null: NullKind::Permutation,
            permutations: 99,
            ..Default::default()
        };
        let r = hsic_test(&x, &y, &cfg).unwrap();
        assert_eq!(r.null_method, NullMethod::Permutation(99));
        let k = r.p_value * 100.0;
        assert!((k - k.round()).abs() < 1e-9 && k >= 1.0);
    }

    #[test]
    fn config_validation() {
        let bad = KernelConfig {
            ridge: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = KernelConfig {
            null: NullKind::Permutation,
            permutations: 50,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn subsampling_caps_rows() {
        let x = normals(300, 14);
        let y = normals(300, 15);
        let cfg = KernelConfig {
            subsample_cap: Some(100),
            ..Default::default()
        };
        assert_eq!(hsic_test(&x, &y, &cfg).unwrap().n_used, 100);
    }
}
