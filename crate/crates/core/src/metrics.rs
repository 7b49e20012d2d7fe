//! Structural metrics between an estimated and a true DAG.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BinaryMatrix, Dag};
use crate::ordering::OrderingGraph;

fn same_dim(est: &Dag, truth: &Dag) -> Result<()> {
    if est.d() != truth.d() {
        return Err(Error::DimensionMismatch {
            expected: truth.d(),
            found: est.d(),
        });
    }
    Ok(())
}

/// Structural Hamming distance: node pairs whose edge status differs. A
/// reversed edge counts once.
pub fn shd(est: &Dag, truth: &Dag) -> Result<usize> {
    same_dim(est, truth)?;
    let d = est.d();
    let mut count = 0;
    for i in 0..d {
        for j in (i + 1)..d {
            let a = (est.has_edge(i, j), est.has_edge(j, i));
            let b = (truth.has_edge(i, j), truth.has_edge(j, i));
            if a != b {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Frobenius distance of the adjacency matrices. A reversal contributes two
/// differing entries, so `dis = √2` where `shd = 1`.
pub fn dis(est: &Dag, truth: &Dag) -> Result<f64> {
    same_dim(est, truth)?;
    Ok((entrywise_hamming(est.adjacency(), truth.adjacency()) as f64).sqrt())
}

pub fn entrywise_hamming(a: &BinaryMatrix, b: &BinaryMatrix) -> usize {
    let d = a.dim();
    (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .filter(|&(i, j)| a.get(i, j) != b.get(i, j))
        .count()
}

/// Harmonic mean of directed-edge precision and recall; 1 when both graphs
/// are empty and 0 when exactly one is.
pub fn f1(est: &Dag, truth: &Dag) -> Result<f64> {
    same_dim(est, truth)?;
    let (ne, nt) = (est.n_edges(), truth.n_edges());
    match (ne, nt) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let tp = est.edges().filter(|&(i, j)| truth.has_edge(i, j)).count();
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / ne as f64;
    let recall = tp as f64 / nt as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Spurious ordering edges removed by pruning.
pub fn n_prune(og: &OrderingGraph, final_dag: &Dag) -> usize {
    og.n_edges().saturating_sub(final_dag.n_edges())
}

/// Structural intervention distance.
///
/// Counts ordered pairs `(i, j)` whose interventional distribution
/// `p(x_j | do(x_i))` is wrong when computed by adjusting for the estimated
/// parents of `i` in data generated by `truth`. If `j` is an estimated parent
/// of `i` the estimate is "no effect", which is right iff `j` is not a true
/// descendant of `i`. Otherwise `Z = pa_est(i)` must be a valid adjustment
/// set: it avoids descendants of every non-`i` node on a causal path `i ⇝ j`,
/// and d-separates `i` from `j` once the first edges of those causal paths are
/// removed.
pub fn sid(est: &Dag, truth: &Dag) -> Result<usize> {
    same_dim(est, truth)?;
    let d = truth.d();
    let reach = truth.reachability();
    let children: Vec<Vec<usize>> = (0..d).map(|v| truth.children(v)).collect();
    let parents: Vec<Vec<usize>> = (0..d).map(|v| truth.parents(v)).collect();
    let mut count = 0;
    for i in 0..d {
        let z = est.parents(i);
        let mut in_z = vec![false; d];
        z.iter().for_each(|&v| in_z[v] = true);
        let z_has_descendant_of = |w: usize| in_z[w] || (0..d).any(|v| in_z[v] && reach.get(w, v));
        for j in (0..d).filter(|&j| j != i) {
            if in_z[j] {
                if reach.get(i, j) {
                    count += 1;
                }
                continue;
            }
            // nodes other than i on causal paths i ⇝ j
            let causal: Vec<usize> = (0..d)
                .filter(|&w| w != i && reach.get(i, w) && (w == j || reach.get(w, j)))
                .collect();
            if causal.iter().any(|&w| z_has_descendant_of(w)) {
                count += 1;
                continue;
            }
            let mut cut = vec![false; d];
            causal.iter().for_each(|&w| cut[w] = true);
            let open = d_connected(i, j, &in_z, &children, &parents, |from, to| {
                from == i && cut[to]
            });
            if open {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Reachability of `target` from `source` along active trails given the
/// conditioning mask (Bayes-ball). `removed(a, b)` hides the edge `a → b`.
fn d_connected(
    source: usize,
    target: usize,
    given: &[bool],
    children: &[Vec<usize>],
    parents: &[Vec<usize>],
    removed: impl Fn(usize, usize) -> bool,
) -> bool {
    let d = given.len();
    // ancestors of the conditioning set (including it): colliders there are open
    let mut anc = given.to_vec();
    let mut stack: Vec<usize> = (0..d).filter(|&v| given[v]).collect();
    while let Some(v) = stack.pop() {
        for &p in &parents[v] {
            if !removed(p, v) && !anc[p] {
                anc[p] = true;
                stack.push(p);
            }
        }
    }
    // state: (node, arrived from a child = moving up)
    let mut seen_up = vec![false; d];
    let mut seen_down = vec![false; d];
    let mut queue = vec![(source, true)];
    while let Some((v, up)) = queue.pop() {
        let seen = if up { &mut seen_up } else { &mut seen_down };
        if seen[v] {
            continue;
        }
        seen[v] = true;
        if v == target && v != source {
            return true;
        }
        if up && !given[v] {
            for &p in &parents[v] {
                if !removed(p, v) {
                    queue.push((p, true));
                }
            }
            for &c in &children[v] {
                if !removed(v, c) {
                    queue.push((c, false));
                }
            }
        } else if !up {
            if !given[v] {
                for &c in &children[v] {
                    if !removed(v, c) {
                        queue.push((c, false));
                    }
                }
            }
            if anc[v] {
                for &p in &parents[v] {
                    if !removed(p, v) {
                        queue.push((p, true));
                    }
                }
            }
        }
    }
    false
}

/// Metrics of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rep: usize,
    pub seed: u64,
    pub shd: usize,
    pub sid: usize,
    pub f1: f64,
    pub dis: f64,
    pub n_prune: usize,
    pub ordering_edges: usize,
    pub runtime_s: f64,
}

impl RunMetrics {
    pub fn evaluate(
        rep: usize,
        seed: u64,
        est: &Dag,
        truth: &Dag,
        og: &OrderingGraph,
        runtime_s: f64,
    ) -> Result<Self> {
        Ok(Self {
            rep,
            seed,
            shd: shd(est, truth)?,
            sid: sid(est, truth)?,
            f1: f1(est, truth)?,
            dis: dis(est, truth)?,
            n_prune: n_prune(og, est),
            ordering_edges: og.n_edges(),
            runtime_s,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation (ddof = 0).
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2}±{:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub shd: MeanStd,
    pub sid: MeanStd,
    pub f1: MeanStd,
    pub dis: MeanStd,
    pub n_prune: MeanStd,
    pub ordering_edges: MeanStd,
    pub runtime_s: MeanStd,
}

impl Aggregates {
    pub fn of(runs: &[RunMetrics]) -> Self {
        let col = |f: fn(&RunMetrics) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            shd: col(|r| r.shd as f64),
            sid: col(|r| r.sid as f64),
            f1: col(|r| r.f1),
            dis: col(|r| r.dis),
            n_prune: col(|r| r.n_prune as f64),
            ordering_edges: col(|r| r.ordering_edges as f64),
            runtime_s: col(|r| r.runtime_s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub rep: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub runs: Vec<RunMetrics>,
    pub failures: Vec<FailedRun>,
    pub aggregates: Aggregates,
}

impl EvalReport {
    pub fn from_runs(mut runs: Vec<RunMetrics>, mut failures: Vec<FailedRun>) -> Self {
        runs.sort_by_key(|r| r.rep);
        failures.sort_by_key(|f| f.rep);
        let aggregates = Aggregates::of(&runs);
        Self {
            runs,
            failures,
            aggregates,
        }
    }
}

pub const METRICS_SCHEMA: &str = "# htcit-metrics v1";
pub const METRICS_COLUMNS: [&str; 8] = [
    "rep",
    "seed",
    "SHD",
    "SID",
    "F1",
    "Dis.",
    "#Prune",
    "ordering_edges",
];

/// Metrics CSV with a versioned schema comment on the first line. Wall-clock
/// runtimes go to a separate timing file so that this one is reproducible
/// byte for byte.
pub fn write_metrics_csv<W: Write>(mut w: W, runs: &[RunMetrics]) -> Result<()> {
    writeln!(w, "{METRICS_SCHEMA}").map_err(|e| Error::io("<metrics>", e))?;
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record(METRICS_COLUMNS)?;
    for r in runs {
        cw.write_record([
            r.rep.to_string(),
            r.seed.to_string(),
            r.shd.to_string(),
            r.sid.to_string(),
            format!("{:.6}", r.f1),
            format!("{:.6}", r.dis),
            r.n_prune.to_string(),
            r.ordering_edges.to_string(),
        ])?;
    }
    cw.flush().map_err(|e| Error::io("<metrics>", e))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<RunMetrics>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = std::io::BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    if first.trim_end() != METRICS_SCHEMA {
        return Err(Error::Parse {
            path: path.into(),
            message: format!("expected schema line '{METRICS_SCHEMA}', found '{}'", first.trim_end()),
        });
    }
    let mut cr = csv::Reader::from_reader(reader);
    let header: Vec<String> = cr.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_COLUMNS {
        return Err(Error::Parse {
            path: path.into(),
            message: format!("unexpected columns {header:?}"),
        });
    }
    let parse_err = |row: usize, col: &str| Error::CsvCell {
        path: path.into(),
        row,
        column: col.into(),
        message: "not a number".into(),
    };
    let mut runs = Vec::new();
    for (k, rec) in cr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let get = |c: usize| rec.get(c).unwrap_or("");
        macro_rules! num {
            ($c:expr) => {
                get($c).parse().map_err(|_| parse_err(row, METRICS_COLUMNS[$c]))?
            };
        }
        runs.push(RunMetrics {
            rep: num!(0),
            seed: num!(1),
            shd: num!(2),
            sid: num!(3),
            f1: num!(4),
            dis: num!(5),
            n_prune: num!(6),
            ordering_edges: num!(7),
            runtime_s: f64::NAN,
        });
    }
    Ok(runs)
}

pub fn write_timing_csv<W: Write>(w: W, runs: &[RunMetrics]) -> Result<()> {
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record(["rep", "runtime_s"])?;
    for r in runs {
        cw.write_record([r.rep.to_string(), format!("{:.3}", r.runtime_s)])?;
    }
    cw.flush().map_err(|e| Error::io("<timing>", e))?;
    Ok(())
}

/// Fills `runtime_s` of matching replications from a timing CSV.
pub fn read_timing_csv(path: &Path, runs: &mut [RunMetrics]) -> Result<()> {
    let mut cr = csv::Reader::from_path(path)?;
    for (k, rec) in cr.records().enumerate() {
        let rec = rec?;
        let bad = |col: &str| Error::CsvCell {
            path: path.into(),
            row: k + 1,
            column: col.into(),
            message: "not a number".into(),
        };
        let rep: usize = rec.get(0).unwrap_or("").parse().map_err(|_| bad("rep"))?;
        let t: f64 = rec.get(1).unwrap_or("").parse().map_err(|_| bad("runtime_s"))?;
        if let Some(r) = runs.iter_mut().find(|r| r.rep == rep) {
            r.runtime_s = t;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dag(d: usize, edges: &[(usize, usize)]) -> Dag {
        Dag::from_edges(d, edges).unwrap()
    }

    #[test]
    fn shd_examples() {
        let chain = dag(3, &[(0, 1), (1, 2)]);
        assert_eq!(shd(&chain, &chain).unwrap(), 0);
        assert_eq!(shd(&Dag::empty(3), &chain).unwrap(), 2);
        assert_eq!(shd(&dag(2, &[(1, 0)]), &dag(2, &[(0, 1)])).unwrap(), 1);
        assert!(shd(&Dag::empty(2), &chain).is_err());
    }

    #[test]
    fn dis_examples() {
        let a = dag(2, &[(0, 1)]);
        assert_eq!(dis(&a, &a).unwrap(), 0.0);
        assert_eq!(dis(&a, &Dag::empty(2)).unwrap(), 1.0);
        assert_eq!(dis(&dag(2, &[(1, 0)]), &a).unwrap(), 2f64.sqrt());
    }

    #[test]
    fn f1_examples() {
        let truth = dag(4, &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(f1(&truth, &truth).unwrap(), 1.0);
        assert_eq!(f1(&Dag::empty(4), &Dag::empty(4)).unwrap(), 1.0);
        assert_eq!(f1(&Dag::empty(4), &truth).unwrap(), 0.0);
        assert_eq!(f1(&truth, &Dag::empty(4)).unwrap(), 0.0);
        // e = 3 true edges plus k = 2 spurious → 2e / (2e + k)
        let est = dag(4, &[(0, 1), (1, 2), (2, 3), (0, 2), (0, 3)]);
        assert!((f1(&est, &truth).unwrap() - 6.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn sid_examples() {
        let truth = dag(2, &[(0, 1)]);
        assert_eq!(sid(&truth, &truth).unwrap(), 0);
        assert_eq!(sid(&Dag::empty(2), &truth).unwrap(), 1);
        // reversed edge: both pairs wrong
        assert_eq!(sid(&dag(2, &[(1, 0)]), &truth).unwrap(), 2);
    }

    #[test]
    fn population_std() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
    }

    #[test]
    fn metrics_csv_roundtrip() {
        let runs = vec![RunMetrics {
            rep: 0,
            seed: 42,
            shd: 1,
            sid: 3,
            f1: 0.95,
            dis: 1.0,
            n_prune: 9,
            ordering_edges: 19,
            runtime_s: 1.25,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics_csv(std::fs::File::create(&path).unwrap(), &runs).unwrap();
        let timing = dir.path().join("t.csv");
        write_timing_csv(std::fs::File::create(&timing).unwrap(), &runs).unwrap();
        let mut back = read_metrics_csv(&path).unwrap();
        assert!(back[0].runtime_s.is_nan());
        read_timing_csv(&timing, &mut back).unwrap();
        assert_eq!(back, runs);
    }
}
