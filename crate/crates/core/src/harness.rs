//! Experiment orchestration: the end-to-end pipeline, replicated synthetic
//! benchmarks with per-replication artifacts, and report aggregation.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Dag;
use crate::kerneltest::KernelConfig;
use crate::metrics::{
    read_metrics_csv, read_timing_csv, write_metrics_csv, write_timing_csv, Aggregates,
    EvalReport, FailedRun, MeanStd, RunMetrics,
};
use crate::ordering::{
    discover_with, plan_with, ConditioningPlan, ConditioningRule, KernelCiTester, OrderingOutcome,
    DEFAULT_ALPHA,
};
use crate::prune::{prune_with, AdditiveModelTester, PruneConfig, PruneOutcome};
use crate::simgen::{child_seed, sample_dag, simulate, ScmConfig, TwoSliceDataset};

/// Environment variable overriding the replication worker-pool size.
pub const WORKERS_ENV: &str = "HTCIT_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Conditional tests with per-variable conditioning sets.
    #[serde(rename = "HTCIT")]
    HtCit,
    /// Marginal tests only; for randomized earlier slices.
    #[serde(rename = "HTIT")]
    HtIt,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['-', '_'], "").as_str() {
            "HTCIT" => Ok(Method::HtCit),
            "HTIT" => Ok(Method::HtIt),
            _ => Err(Error::InvalidConfig(format!("unknown method '{s}'"))),
        }
    }
}

/// Everything the discovery pipeline needs besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub method: Method,
    pub kernel: KernelConfig,
    pub alpha: f64,
    pub prune: PruneConfig,
    pub conditioning: ConditioningRule,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            method: Method::HtCit,
            kernel: KernelConfig::default(),
            alpha: DEFAULT_ALPHA,
            prune: PruneConfig::default(),
            conditioning: ConditioningRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub ordering: OrderingOutcome,
    pub pruning: PruneOutcome,
}

impl PipelineOutput {
    pub fn dag(&self) -> &Dag {
        &self.pruning.dag
    }
}

/// Conditioning plan → p-values → layers → pruning.
pub fn run_pipeline(data: &TwoSliceDataset, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.prune.validate()?;
    let tester = KernelCiTester::new(data, &cfg.kernel)?;
    let plan = match cfg.method {
        Method::HtIt => ConditioningPlan::independence_only(data.d()),
        Method::HtCit => plan_with(&tester, &data.intervened, cfg.alpha, cfg.conditioning)?,
    };
    let ordering = discover_with(&tester, plan, cfg.alpha)?;
    let sig = AdditiveModelTester::new(data, &cfg.prune)?;
    let pruning = prune_with(&sig, &ordering.graph, cfg.prune.beta, data.labels.clone())?;
    Ok(PipelineOutput { ordering, pruning })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scm: ScmConfig,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    pub replications: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Worker-pool size; `None` uses `HTCIT_WORKERS` or the available parallelism.
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scm: ScmConfig::default(),
            pipeline: PipelineConfig::default(),
            replications: 10,
            master_seed: 0,
            output_dir: PathBuf::from("runs/default"),
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scm.validate()?;
        self.pipeline.kernel.validate()?;
        self.pipeline.prune.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if self.pipeline.method == Method::HtIt && self.scm.intervention_fraction <= 0.0 {
            return Err(Error::InvalidConfig(
                "method HTIT requires intervention_fraction > 0".into(),
            ));
        }
        if !(self.pipeline.alpha > 0.0 && self.pipeline.alpha < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "alpha {} outside (0, 0.5)",
                self.pipeline.alpha
            )));
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            message: e.to_string(),
        })
    }

    fn worker_count(&self) -> usize {
        self.workers
            .or_else(|| std::env::var(WORKERS_ENV).ok()?.parse().ok())
            .filter(|&w| w > 0)
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Ordering artifact: adjacency as nested arrays, layers as arrays of node
/// indices (bottom layer first).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderingArtifact {
    pub labels: Vec<String>,
    pub alpha: f64,
    pub conditioning_sets: Vec<Vec<usize>>,
    pub pvalues: Vec<Vec<f64>>,
    pub initial_adjacency: crate::graph::BinaryMatrix,
    pub adjacency: crate::graph::BinaryMatrix,
    pub layers: Vec<Vec<usize>>,
}

impl OrderingArtifact {
    pub fn new(out: &PipelineOutput, labels: &[String]) -> Self {
        let o = &out.ordering;
        Self {
            labels: labels.to_vec(),
            alpha: o.pvalues.alpha,
            conditioning_sets: o.plan.cond_sets.clone(),
            pvalues: o.pvalues.to_rows(),
            initial_adjacency: o.initial_graph.a_tp.clone(),
            adjacency: o.graph.a_tp.clone(),
            layers: o.layers.layers.clone(),
        }
    }
}

/// Writes `ordering.json`, `dag.json` and `dag_edges.csv` into `dir`.
pub fn write_discovery_artifacts(dir: &Path, out: &PipelineOutput, labels: &[String]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("ordering.json"), &OrderingArtifact::new(out, labels))?;
    write_json(&dir.join("dag.json"), out.dag())?;
    out.dag().write_edge_list(create_file(&dir.join("dag_edges.csv"))?)?;
    Ok(())
}

fn run_replication(cfg: &ExperimentConfig, rep: usize, dir: &Path) -> Result<RunMetrics> {
    let seed = child_seed(cfg.master_seed, rep as u64);
    let truth = sample_dag(cfg.scm.d, cfg.scm.e, seed)?;
    let scm = ScmConfig {
        seed,
        ..cfg.scm.clone()
    };
    let data = simulate(&scm, &truth)?;
    data.export(dir, "dataset", Some(&scm))?;
    let start = Instant::now();
    let out = run_pipeline(&data, &cfg.pipeline)?;
    let runtime = start.elapsed().as_secs_f64();
    write_discovery_artifacts(dir, &out, &data.labels)?;
    let metrics = RunMetrics::evaluate(rep, seed, out.dag(), &truth, &out.ordering.graph, runtime)?;
    write_metrics_csv(create_file(&dir.join("metrics.csv"))?, std::slice::from_ref(&metrics))?;
    Ok(metrics)
}

pub fn rep_dir(root: &Path, rep: usize) -> PathBuf {
    root.join(format!("rep-{rep}"))
}

/// Runs all replications and writes per-replication and aggregate artifacts
/// under `cfg.output_dir`. A failing replication is recorded and skipped.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let root = &cfg.output_dir;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_json(&root.join("config.json"), cfg)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let results: Vec<(usize, Result<RunMetrics>)> = pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let dir = rep_dir(root, rep);
                let res = fs::create_dir_all(&dir)
                    .map_err(|e| Error::io(&dir, e))
                    .and_then(|_| run_replication(cfg, rep, &dir));
                if let Err(e) = &res {
                    log::error!("replication {rep} failed: {e}");
                    let _ = fs::write(dir.join("error.txt"), format!("{e}\n"));
                } else {
                    log::info!("replication {rep} done");
                }
                (rep, res)
            })
            .collect()
    });

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (rep, res) in results {
        match res {
            Ok(m) => runs.push(m),
            Err(e) => failures.push(FailedRun {
                rep,
                seed: child_seed(cfg.master_seed, rep as u64),
                error: e.to_string(),
            }),
        }
    }
    let report = EvalReport::from_runs(runs, failures);
    write_metrics_csv(create_file(&root.join("metrics.csv"))?, &report.runs)?;
    write_timing_csv(create_file(&root.join("timing.csv"))?, &report.runs)?;
    write_json(&root.join("report.json"), &report)?;
    let table = ReportTable::from_rows(vec![ReportRow::new(
        root.display().to_string(),
        &report.runs,
    )]);
    fs::write(root.join("summary.txt"), table.to_text()).map_err(|e| Error::io(root, e))?;
    Ok(report)
}

/// One row of the mean±std report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub reps: usize,
    pub aggregates: Aggregates,
}

impl ReportRow {
    pub fn new(run: String, runs: &[RunMetrics]) -> Self {
        Self {
            run,
            reps: runs.len(),
            aggregates: Aggregates::of(runs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_METRICS: [&str; 6] = ["SHD", "SID", "F1", "Dis.", "#Prune", "runtime_s"];

fn report_cells(a: &Aggregates) -> [MeanStd; 6] {
    [a.shd, a.sid, a.f1, a.dis, a.n_prune, a.runtime_s]
}

impl ReportTable {
    pub fn from_rows(rows: Vec<ReportRow>) -> Self {
        Self { rows }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["run".to_string(), "reps".to_string()];
        for m in REPORT_METRICS {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.run.clone(), row.reps.to_string()];
            for c in report_cells(&row.aggregates) {
                rec.push(format!("{:.6}", c.mean));
                rec.push(format!("{:.6}", c.std));
            }
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("<report>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_text(&self) -> String {
        let mut header = vec!["run".to_string(), "reps".to_string()];
        header.extend(REPORT_METRICS.iter().map(|s| s.to_string()));
        let mut lines: Vec<Vec<String>> = vec![header];
        for row in &self.rows {
            let mut cells = vec![row.run.clone(), row.reps.to_string()];
            cells.extend(report_cells(&row.aggregates).iter().map(|c| c.to_string()));
            lines.push(cells);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| {
                    if c == 0 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Loads the metrics (and timings, when present) of one run directory.
pub fn load_run(dir: &Path) -> Result<Vec<RunMetrics>> {
    let mut runs = read_metrics_csv(&dir.join("metrics.csv"))?;
    let timing = dir.join("timing.csv");
    if timing.exists() {
        read_timing_csv(&timing, &mut runs)?;
    }
    Ok(runs)
}

/// One row per run directory, plus a pooled row when several are given.
pub fn report(dirs: &[PathBuf]) -> Result<ReportTable> {
    if dirs.is_empty() {
        return Err(Error::InvalidConfig("no run directories given".into()));
    }
    let mut rows = Vec::new();
    let mut pooled = Vec::new();
    for dir in dirs {
        let runs = load_run(dir)?;
        rows.push(ReportRow::new(dir.display().to_string(), &runs));
        pooled.extend(runs);
    }
    if dirs.len() > 1 {
        rows.push(ReportRow::new("pooled".into(), &pooled));
    }
    Ok(ReportTable::from_rows(rows))
}

/// Discovery on an externally supplied dataset. Writes the ordering and DAG
/// artifacts into `out_dir`, plus a metrics row when the dataset carries a
/// ground truth.
pub fn discover_dataset(
    data: &TwoSliceDataset,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<(PipelineOutput, Option<RunMetrics>)> {
    let start = Instant::now();
    let out = run_pipeline(data, cfg)?;
    let runtime = start.elapsed().as_secs_f64();
    write_discovery_artifacts(out_dir, &out, &data.labels)?;
    let metrics = match &data.truth {
        Some(truth) => {
            let m = RunMetrics::evaluate(0, 0, out.dag(), truth, &out.ordering.graph, runtime)?;
            write_metrics_csv(create_file(&out_dir.join("metrics.csv"))?, std::slice::from_ref(&m))?;
            write_timing_csv(create_file(&out_dir.join("timing.csv"))?, std::slice::from_ref(&m))?;
            Some(m)
        }
        None => None,
    };
    Ok((out, metrics))
}
