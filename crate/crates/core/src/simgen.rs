//! Random DAGs and two-time-slice data from the additive-noise rollout
//!
//! `X_i^s = link(pa_i^s) + link(X_i^{s-1}) + eps_i^s`, starting from an
//! independent initial state `X^0`. Within each step nodes are evaluated in
//! topological order, so parents contribute their already-noised values of
//! the same step.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{default_labels, BinaryMatrix, Dag};

/// RNG streams derived from one seed. Each consumer owns a stream so that
/// changing one stage never shifts the random numbers of another.
mod stream {
    pub const DAG: u64 = 0;
    pub const DATA: u64 = 1;
    pub const INTERVENTION: u64 = 2;
    pub const CHILD_SEED: u64 = 3;
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of replication `rep` under `master`. Replications are reproducible
/// independently of each other and of the worker schedule.
pub fn child_seed(master: u64, rep: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream::CHILD_SEED);
    rng.set_word_pos(u128::from(rep) * 2);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Link {
    Sin,
    Sigmoid,
    Poly,
}

impl Link {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Link::Sin => x.sin(),
            Link::Sigmoid => 3.0 / (1.0 + (-x).exp()),
            Link::Poly => (x + 2.0) * (x + 2.0) / 10.0,
        }
    }
}

impl std::str::FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sin" => Ok(Link::Sin),
            "sigmoid" => Ok(Link::Sigmoid),
            "poly" => Ok(Link::Poly),
            _ => Err(Error::InvalidConfig(format!("unknown link function '{s}'"))),
        }
    }
}

/// Noise family. The initial state `X^0` is drawn from the matching init
/// distribution of the same family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseFamily {
    /// noise N(0, 0.4), init N(0, 1)
    Gaussian,
    /// noise Laplace(0, 1/√2), init Laplace(0, 1)
    Laplace,
    /// noise U(-1, 1), init U(-1, 1)
    Uniform,
}

impl std::str::FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "gauss" | "normal" => Ok(NoiseFamily::Gaussian),
            "laplace" => Ok(NoiseFamily::Laplace),
            "uniform" => Ok(NoiseFamily::Uniform),
            _ => Err(Error::InvalidConfig(format!("unknown noise family '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Univariate {
    Normal { sd: f64 },
    Laplace { scale: f64 },
    Uniform { half_width: f64 },
}

impl Univariate {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Univariate::Normal { sd } => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }
            Univariate::Laplace { scale } => {
                // inverse CDF on u ∈ (-1/2, 1/2)
                let u: f64 = rng.random::<f64>() - 0.5;
                let tail = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
                -scale * u.signum() * tail.ln()
            }
            Univariate::Uniform { half_width } => rng.random_range(-half_width..half_width),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Univariate::Normal { sd } => sd * sd,
            Univariate::Laplace { scale } => 2.0 * scale * scale,
            Univariate::Uniform { half_width } => half_width * half_width / 3.0,
        }
    }

    fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        if let Univariate::Normal { sd } = *self {
            let normal = Normal::new(0.0, sd).expect("finite sd");
            out.iter_mut().for_each(|v| *v = normal.sample(rng));
        } else {
            out.iter_mut().for_each(|v| *v = self.sample(rng));
        }
    }
}

impl NoiseFamily {
    pub fn noise(self) -> Univariate {
        match self {
            NoiseFamily::Gaussian => Univariate::Normal { sd: 0.4f64.sqrt() },
            NoiseFamily::Laplace => Univariate::Laplace {
                scale: std::f64::consts::FRAC_1_SQRT_2,
            },
            NoiseFamily::Uniform => Univariate::Uniform { half_width: 1.0 },
        }
    }

    pub fn init(self) -> Univariate {
        match self {
            NoiseFamily::Gaussian => Univariate::Normal { sd: 1.0 },
            NoiseFamily::Laplace => Univariate::Laplace { scale: 1.0 },
            NoiseFamily::Uniform => Univariate::Uniform { half_width: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScmConfig {
    pub d: usize,
    pub e: usize,
    pub link: Link,
    pub noise: NoiseFamily,
    /// `(tau, t)`: indices of the earlier and later slice, `tau < t`.
    pub t_slices: (usize, usize),
    pub intervention_fraction: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for ScmConfig {
    fn default() -> Self {
        Self {
            d: 10,
            e: 10,
            link: Link::Sin,
            noise: NoiseFamily::Gaussian,
            t_slices: (1, 2),
            intervention_fraction: 0.0,
            n: 1000,
            seed: 0,
        }
    }
}

impl ScmConfig {
    pub fn validate(&self) -> Result<()> {
        let max_e = self.d * self.d.saturating_sub(1) / 2;
        if self.e > max_e {
            return Err(Error::InvalidConfig(format!(
                "{} edges requested but a DAG on {} nodes has at most {max_e}",
                self.e, self.d
            )));
        }
        let (tau, t) = self.t_slices;
        if tau >= t {
            return Err(Error::InvalidConfig(format!(
                "slices must satisfy tau < t, got ({tau}, {t})"
            )));
        }
        if !(0.0..=1.0).contains(&self.intervention_fraction) {
            return Err(Error::InvalidConfig(format!(
                "intervention_fraction {} outside [0, 1]",
                self.intervention_fraction
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of variables whose slice-τ values are randomized.
    pub fn n_intervened(&self) -> usize {
        (self.intervention_fraction * self.d as f64 + 1e-9).floor() as usize
    }
}

/// Two slices of the same `d` variables, `n` samples each.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoSliceDataset {
    pub x_tau: DMatrix<f64>,
    pub x_t: DMatrix<f64>,
    pub intervened: Vec<bool>,
    pub labels: Vec<String>,
    pub truth: Option<Dag>,
}

impl TwoSliceDataset {
    pub fn new(x_tau: DMatrix<f64>, x_t: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if x_tau.shape() != x_t.shape() {
            return Err(Error::InvalidConfig(format!(
                "slice shapes differ: {:?} vs {:?}",
                x_tau.shape(),
                x_t.shape()
            )));
        }
        if labels.len() != x_tau.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x_tau.ncols(),
                found: labels.len(),
            });
        }
        let d = x_tau.ncols();
        Ok(Self {
            x_tau,
            x_t,
            intervened: vec![false; d],
            labels,
            truth: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x_tau.nrows()
    }

    pub fn d(&self) -> usize {
        self.x_tau.ncols()
    }

    pub fn fully_intervened(&self) -> bool {
        !self.intervened.is_empty() && self.intervened.iter().all(|&b| b)
    }
}

/// Erdős–Rényi DAG with exactly `e` edges: `e` unordered pairs are drawn
/// uniformly without replacement and oriented along a random permutation.
pub fn sample_dag(d: usize, e: usize, seed: u64) -> Result<Dag> {
    let max_e = d * d.saturating_sub(1) / 2;
    if e > max_e {
        return Err(Error::InvalidConfig(format!(
            "{e} edges requested but a DAG on {d} nodes has at most {max_e}"
        )));
    }
    let mut rng = rng_for(seed, stream::DAG);
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(&mut rng);
    let mut adj = BinaryMatrix::zeros(d);
    for k in index::sample(&mut rng, max_e, e) {
        let (a, b) = unrank_pair(k);
        // a < b in permutation positions, so the edge points forward in perm
        adj.set(perm[a], perm[b], true);
    }
    Dag::from_adjacency(adj)
}

/// Maps `k ∈ [0, d(d-1)/2)` to the k-th pair `(a, b)` with `a < b` in
/// colexicographic order (independent of `d`).
fn unrank_pair(k: usize) -> (usize, usize) {
    // largest b with b(b-1)/2 <= k
    let mut b = ((1.0 + (1.0 + 8.0 * k as f64).sqrt()) / 2.0).floor() as usize;
    while b * (b - 1) / 2 > k {
        b -= 1;
    }
    while (b + 1) * b / 2 <= k {
        b += 1;
    }
    (k - b * (b - 1) / 2, b)
}

/// Full rollout `X^0 .. X^{t}` (one `n × d` matrix per step), with the
/// intervention applied at step `tau`.
pub fn rollout(cfg: &ScmConfig, dag: &Dag) -> Result<(Vec<DMatrix<f64>>, Vec<bool>)> {
    cfg.validate()?;
    if dag.d() != cfg.d {
        return Err(Error::DimensionMismatch {
            expected: cfg.d,
            found: dag.d(),
        });
    }
    let (tau, t) = cfg.t_slices;
    let (n, d) = (cfg.n, cfg.d);
    let init = cfg.noise.init();
    let noise = cfg.noise.noise();
    let order = dag.topological_order();
    let parents: Vec<Vec<usize>> = (0..d).map(|j| dag.parents(j)).collect();

    let mut flags = vec![false; d];
    {
        let mut rng = rng_for(cfg.seed, stream::INTERVENTION);
        for v in index::sample(&mut rng, d, cfg.n_intervened()) {
            flags[v] = true;
        }
    }

    let mut rng = rng_for(cfg.seed, stream::DATA);
    let mut steps = Vec::with_capacity(t + 1);
    let mut x0 = DMatrix::<f64>::zeros(n, d);
    for j in 0..d {
        init.fill(&mut rng, x0.column_mut(j).as_mut_slice());
    }
    if tau == 0 {
        intervene(&mut x0, &flags, init, &mut rng);
    }
    steps.push(x0);

    let mut eps = vec![0.0; n];
    for s in 1..=t {
        let prev = &steps[s - 1];
        let mut cur = DMatrix::<f64>::zeros(n, d);
        for &j in &order {
            noise.fill(&mut rng, &mut eps);
            for r in 0..n {
                let mut v = cfg.link.apply(prev[(r, j)]) + eps[r];
                for &p in &parents[j] {
                    v += cfg.link.apply(cur[(r, p)]);
                }
                cur[(r, j)] = v;
            }
        }
        steps.push(cur);
        if s == tau {
            intervene(&mut steps[s], &flags, init, &mut rng);
        }
    }
    Ok((steps, flags))
}

fn intervene(x: &mut DMatrix<f64>, flags: &[bool], init: Univariate, rng: &mut ChaCha8Rng) {
    for (j, _) in flags.iter().enumerate().filter(|(_, &f)| f) {
        init.fill(rng, x.column_mut(j).as_mut_slice());
    }
}

/// Generates the two requested slices. Deterministic in `(cfg, dag)`.
pub fn simulate(cfg: &ScmConfig, dag: &Dag) -> Result<TwoSliceDataset> {
    let (tau, t) = cfg.t_slices;
    let (mut steps, flags) = rollout(cfg, dag)?;
    let x_t = steps.swap_remove(t);
    let x_tau = steps.swap_remove(tau);
    Ok(TwoSliceDataset {
        x_tau,
        x_t,
        intervened: flags,
        labels: dag.labels().to_vec(),
        truth: Some(dag.clone()),
    })
}

/// Optional column selection for CSV ingestion. Without explicit columns the
/// header order of the slice-τ file is used.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub columns: Option<Vec<String>>,
}

struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_csv_table(path: &Path) -> Result<CsvTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.into(),
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().any(|h| h.is_empty()) {
        return Err(Error::Parse {
            path: path.into(),
            message: "missing or empty header".into(),
        });
    }
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        // 1-based data row numbers, header excluded
        let row_no = r + 1;
        let record = record.map_err(|e| Error::Parse {
            path: path.into(),
            message: format!("row {row_no}: {e}"),
        })?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                path: path.into(),
                message: format!(
                    "row {row_no}: {} fields, header has {}",
                    record.len(),
                    header.len()
                ),
            });
        }
        let mut values = Vec::with_capacity(header.len());
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::CsvCell {
                path: path.into(),
                row: row_no,
                column: header[c].clone(),
                message: format!("non-numeric cell '{cell}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::CsvCell {
                    path: path.into(),
                    row: row_no,
                    column: header[c].clone(),
                    message: format!("non-finite cell '{cell}'"),
                });
            }
            values.push(v);
        }
        rows.push(values);
    }
    Ok(CsvTable { header, rows })
}

fn select_columns(table: &CsvTable, path: &Path, columns: &[String]) -> Result<DMatrix<f64>> {
    let idx = columns
        .iter()
        .map(|name| {
            table
                .header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Parse {
                    path: path.into(),
                    message: format!("missing column '{name}'"),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(table.rows.len(), idx.len(), |r, c| {
        table.rows[r][idx[c]]
    }))
}

/// Reads a pair of headered CSV files (one per slice) and aligns their
/// columns by header name.
pub fn load_two_slice_csv(
    path_tau: impl AsRef<Path>,
    path_t: impl AsRef<Path>,
    schema: &CsvSchema,
) -> Result<TwoSliceDataset> {
    let (path_tau, path_t) = (path_tau.as_ref(), path_t.as_ref());
    let tau = read_csv_table(path_tau)?;
    let t = read_csv_table(path_t)?;
    let columns = match &schema.columns {
        Some(cols) => cols.clone(),
        None => {
            let mut a = tau.header.clone();
            let mut b = t.header.clone();
            a.sort();
            b.sort();
            if a != b {
                return Err(Error::Parse {
                    path: path_t.into(),
                    message: format!(
                        "column set {:?} differs from {:?} in {}",
                        t.header,
                        tau.header,
                        path_tau.display()
                    ),
                });
            }
            tau.header.clone()
        }
    };
    if tau.rows.len() != t.rows.len() {
        return Err(Error::Parse {
            path: path_t.into(),
            message: format!(
                "{} rows but {} has {}",
                t.rows.len(),
                path_tau.display(),
                tau.rows.len()
            ),
        });
    }
    let x_tau = select_columns(&tau, path_tau, &columns)?;
    let x_t = select_columns(&t, path_t, &columns)?;
    TwoSliceDataset::new(x_tau, x_t, columns)
}

/// JSON sidecar written next to an exported CSV pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub tau_csv: PathBuf,
    pub t_csv: PathBuf,
    pub labels: Vec<String>,
    pub intervened: Vec<bool>,
    pub truth: Option<BinaryMatrix>,
    pub config: Option<ScmConfig>,
}

fn write_matrix_csv(path: &Path, labels: &[String], x: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(labels)?;
    let mut row = Vec::with_capacity(x.ncols());
    for r in 0..x.nrows() {
        row.clear();
        row.extend((0..x.ncols()).map(|c| format!("{:?}", x[(r, c)])));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

impl TwoSliceDataset {
    /// Writes `<stem>_tau.csv`, `<stem>_t.csv` and `<stem>.json` into `dir`,
    /// returning the sidecar path.
    pub fn export(&self, dir: &Path, stem: &str, config: Option<&ScmConfig>) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tau_name = PathBuf::from(format!("{stem}_tau.csv"));
        let t_name = PathBuf::from(format!("{stem}_t.csv"));
        write_matrix_csv(&dir.join(&tau_name), &self.labels, &self.x_tau)?;
        write_matrix_csv(&dir.join(&t_name), &self.labels, &self.x_t)?;
        let sidecar = DatasetSidecar {
            tau_csv: tau_name,
            t_csv: t_name,
            labels: self.labels.clone(),
            intervened: self.intervened.clone(),
            truth: self.truth.as_ref().map(|g| g.adjacency().clone()),
            config: config.cloned(),
        };
        let path = dir.join(format!("{stem}.json"));
        let json = serde_json::to_string_pretty(&sidecar)?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Loads a dataset via its JSON sidecar; CSV paths resolve relative to it.
    pub fn load_sidecar(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let sidecar: DatasetSidecar = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let schema = CsvSchema {
            columns: Some(sidecar.labels.clone()),
        };
        let mut ds = load_two_slice_csv(
            base.join(&sidecar.tau_csv),
            base.join(&sidecar.t_csv),
            &schema,
        )?;
        if sidecar.intervened.len() != ds.d() {
            return Err(Error::Parse {
                path: path.into(),
                message: format!(
                    "{} intervention flags for {} variables",
                    sidecar.intervened.len(),
                    ds.d()
                ),
            });
        }
        ds.intervened = sidecar.intervened;
        if let Some(adj) = sidecar.truth {
            ds.truth = Some(Dag::with_labels(adj, ds.labels.clone()).map_err(|e| {
                Error::Parse {
                    path: path.into(),
                    message: format!("truth: {e}"),
                }
            })?);
        }
        Ok(ds)
    }
}

/// Labels `X1..Xd` for simulated data.
pub fn simulated_labels(d: usize) -> Vec<String> {
    default_labels(d)
}
