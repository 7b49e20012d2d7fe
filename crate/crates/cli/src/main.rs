use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use htcit::harness::{self, ExperimentConfig, Method};
use htcit::ordering::ConditioningRule;
use htcit::simgen::{self, CsvSchema, Link, NoiseFamily};
use htcit::{Dag, TwoSliceDataset};

#[derive(Parser)]
#[command(name = "htcit", version, about = "Causal discovery from two time-slices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a random DAG and write a simulated two-slice dataset.
    Simulate(Overrides),
    /// Run ordering and pruning on an existing dataset.
    Discover(DiscoverArgs),
    /// Replicated synthetic benchmark.
    Bench(Overrides),
    /// Aggregate metrics of one or more run directories.
    Report(ReportArgs),
}

/// Config file plus per-field overrides.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// HTCIT or HTIT
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    edges: Option<usize>,
    /// sin, sigmoid or poly
    #[arg(long)]
    link: Option<Link>,
    /// gaussian, laplace or uniform
    #[arg(long)]
    noise: Option<NoiseFamily>,
    /// Slice pair as `tau,t`, e.g. `1,2`.
    #[arg(long, value_parser = parse_slices)]
    slices: Option<(usize, usize)>,
    #[arg(long = "intervene-frac")]
    intervene_frac: Option<f64>,
    /// Samples per slice.
    #[arg(long)]
    n: Option<usize>,
    /// Conditioning-set rule of the ordering stage: dependent, closure or all-others.
    #[arg(long, value_parser = parse_rule)]
    conditioning: Option<ConditioningRule>,
    /// Replication worker-pool size.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct DiscoverArgs {
    /// Dataset sidecar JSON (as written by `simulate`).
    #[arg(long, conflicts_with_all = ["tau", "t"])]
    data: Option<PathBuf>,
    /// CSV of the earlier slice; requires --t.
    #[arg(long, requires = "t")]
    tau: Option<PathBuf>,
    /// CSV of the later slice.
    #[arg(long, requires = "tau")]
    t: Option<PathBuf>,
    /// Ground-truth DAG JSON; enables the metrics row.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Mark every variable's earlier slice as randomized.
    #[arg(long)]
    intervened: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Run directories containing metrics.csv.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Also write the table as CSV to this path.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_slices(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `tau,t`, got '{s}'"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("'{v}': {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn parse_rule(s: &str) -> Result<ConditioningRule, String> {
    match s.to_ascii_lowercase().replace('_', "-").as_str() {
        "dependent" => Ok(ConditioningRule::Dependent),
        "closure" => Ok(ConditioningRule::DependenceClosure),
        "all-others" | "all" => Ok(ConditioningRule::AllOthers),
        _ => Err(format!("unknown conditioning rule '{s}'")),
    }
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json_file(p)?,
            None => ExperimentConfig::default(),
        };
        let scm = &mut cfg.scm;
        if let Some(v) = self.nodes {
            scm.d = v;
        }
        if let Some(v) = self.edges {
            scm.e = v;
        }
        if let Some(v) = self.link {
            scm.link = v;
        }
        if let Some(v) = self.noise {
            scm.noise = v;
        }
        if let Some(v) = self.slices {
            scm.t_slices = v;
        }
        if let Some(v) = self.intervene_frac {
            scm.intervention_fraction = v;
        }
        if let Some(v) = self.n {
            scm.n = v;
        }
        let p = &mut cfg.pipeline;
        if let Some(v) = self.method {
            p.method = v;
        }
        if let Some(v) = self.alpha {
            p.alpha = v;
        }
        if let Some(v) = self.beta {
            p.prune.beta = v;
        }
        if let Some(v) = self.conditioning {
            p.conditioning = v;
        }
        if let Some(v) = self.seed {
            cfg.master_seed = v;
        }
        if let Some(v) = self.reps {
            cfg.replications = v;
        }
        if let Some(v) = &self.out {
            cfg.output_dir = v.clone();
        }
        if self.workers.is_some() {
            cfg.workers = self.workers;
        }
        Ok(cfg)
    }
}

fn simulate(args: &Overrides) -> Result<()> {
    let cfg = args.resolve()?;
    let scm = htcit::ScmConfig {
        seed: cfg.master_seed,
        ..cfg.scm.clone()
    };
    scm.validate()?;
    let dag = simgen::sample_dag(scm.d, scm.e, scm.seed)?;
    let data = simgen::simulate(&scm, &dag)?;
    let sidecar = data.export(&cfg.output_dir, "dataset", Some(&scm))?;
    let truth = cfg.output_dir.join("truth.json");
    std::fs::write(&truth, serde_json::to_string_pretty(&dag)? + "\n")
        .with_context(|| format!("writing {}", truth.display()))?;
    println!("{}", sidecar.display());
    Ok(())
}

fn load_truth(path: &Path) -> Result<Dag> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn discover(args: &DiscoverArgs) -> Result<()> {
    let cfg = args.overrides.resolve()?;
    let mut data: TwoSliceDataset = match (&args.data, &args.tau, &args.t) {
        (Some(p), _, _) => TwoSliceDataset::load_sidecar(p)?,
        (None, Some(tau), Some(t)) => simgen::load_two_slice_csv(tau, t, &CsvSchema::default())?,
        _ => bail!("either --data or both --tau and --t are required"),
    };
    if args.intervened {
        data.intervened = vec![true; data.d()];
    }
    if let Some(p) = &args.truth {
        let truth = load_truth(p)?;
        if truth.d() != data.d() {
            bail!(
                "{}: truth has {} nodes, dataset has {}",
                p.display(),
                truth.d(),
                data.d()
            );
        }
        data.truth = Some(truth);
    }
    if cfg.pipeline.method == Method::HtIt && !data.fully_intervened() {
        log::warn!("HTIT on data whose earlier slice is not fully randomized");
    }
    let (out, metrics) = harness::discover_dataset(&data, &cfg.pipeline, &cfg.output_dir)?;
    println!(
        "{} edges ({} in ordering) -> {}",
        out.dag().n_edges(),
        out.ordering.graph.n_edges(),
        cfg.output_dir.display()
    );
    if let Some(m) = metrics {
        println!(
            "SHD {} SID {} F1 {:.3} Dis. {:.3} #Prune {}",
            m.shd, m.sid, m.f1, m.dis, m.n_prune
        );
    }
    Ok(())
}

fn bench(args: &Overrides) -> Result<bool> {
    let cfg = args.resolve()?;
    let report = harness::run_experiment(&cfg)?;
    let table = harness::report(std::slice::from_ref(&cfg.output_dir))?;
    print!("{}", table.to_text());
    for f in &report.failures {
        eprintln!("replication {} (seed {}) failed: {}", f.rep, f.seed, f.error);
    }
    Ok(report.failures.is_empty())
}

fn report(args: &ReportArgs) -> Result<()> {
    let table = harness::report(&args.dirs)?;
    print!("{}", table.to_text());
    if let Some(p) = &args.csv {
        std::fs::write(p, table.to_csv()?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Simulate(a) => simulate(a).map(|_| true),
        Command::Discover(a) => discover(a).map(|_| true),
        Command::Bench(a) => bench(a),
        Command::Report(a) => report(a).map(|_| true),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
