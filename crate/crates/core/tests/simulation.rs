mod common;

use std::fs;

use common::has_cycle;
use htcit::graph::Dag;
use htcit::simgen::{
    load_two_slice_csv, rollout, sample_dag, simulate, CsvSchema, Link, NoiseFamily, ScmConfig,
    TwoSliceDataset,
};
use htcit::Error;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn col(m: &nalgebra::DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

#[test]
fn dag_sampling_edge_cases() {
    assert_eq!(sample_dag(3, 0, 5).unwrap().n_edges(), 0);
    for seed in 0..20 {
        let g = sample_dag(3, 3, seed).unwrap();
        assert_eq!(g.reachability().count_ones(), 3);
    }
    assert!(matches!(sample_dag(3, 4, 0), Err(Error::InvalidConfig(_))));
    assert_eq!(sample_dag(0, 0, 0).unwrap().d(), 0);
}

#[test]
fn er_pair_frequencies_are_uniform() {
    let (d, e, trials) = (10, 10, 10_000u64);
    let mut counts = vec![0u32; d * d];
    for seed in 1..=trials {
        let g = sample_dag(d, e, seed).unwrap();
        assert_eq!(g.n_edges(), e);
        assert!(!has_cycle(g.adjacency()));
        for (i, j) in g.edges() {
            counts[i.min(j) * d + i.max(j)] += 1;
        }
    }
    let expected = e as f64 / 45.0;
    for i in 0..d {
        for j in (i + 1)..d {
            let f = counts[i * d + j] as f64 / trials as f64;
            assert!((f - expected).abs() < 0.02, "pair ({i}, {j}): {f}");
        }
    }
}

#[test]
fn root_noise_and_lag_structure() {
    let cfg = ScmConfig {
        d: 3,
        e: 0,
        t_slices: (0, 1),
        n: 5000,
        seed: 3,
        ..ScmConfig::default()
    };
    let data = simulate(&cfg, &Dag::empty(3)).unwrap();
    for j in 0..3 {
        let tau = col(&data.x_tau, j);
        let resid: Vec<f64> = col(&data.x_t, j)
            .iter()
            .zip(&tau)
            .map(|(t, x)| t - x.sin())
            .collect();
        let v = var(&resid);
        assert!((v - 0.4).abs() < 0.04, "noise variance {v}");
        assert!(corr(&resid, &tau).abs() < 0.05);
        assert!((var(&tau) - 1.0).abs() < 0.1);
    }
}

#[test]
fn simulation_is_deterministic() {
    let dag = sample_dag(6, 6, 11).unwrap();
    let cfg = ScmConfig {
        d: 6,
        e: 6,
        n: 200,
        seed: 11,
        intervention_fraction: 0.5,
        ..ScmConfig::default()
    };
    assert_eq!(simulate(&cfg, &dag).unwrap(), simulate(&cfg, &dag).unwrap());
    let other = ScmConfig { seed: 12, ..cfg.clone() };
    assert_ne!(simulate(&cfg, &dag).unwrap().x_t, simulate(&other, &dag).unwrap().x_t);
}

#[test]
fn chain_parent_drives_child() {
    let dag = Dag::from_edges(2, &[(0, 1)]).unwrap();
    let cfg = ScmConfig {
        d: 2,
        e: 1,
        n: 10_000,
        seed: 4,
        ..ScmConfig::default()
    };
    let data = simulate(&cfg, &dag).unwrap();
    let parent: Vec<f64> = col(&data.x_t, 0).iter().map(|v| v.sin()).collect();
    let child: Vec<f64> = col(&data.x_t, 1)
        .iter()
        .zip(col(&data.x_tau, 1))
        .map(|(t, s)| t - s.sin())
        .collect();
    assert!(corr(&parent, &child) > 0.5);
}

#[test]
fn every_step_follows_the_same_graph() {
    // uniform noise is bounded by 1, so any step using a different parent
    // set would leave residuals outside [-1, 1]
    for (seed, link) in [(1, Link::Sin), (2, Link::Sigmoid), (3, Link::Poly)] {
        let dag = sample_dag(6, 8, seed).unwrap();
        let cfg = ScmConfig {
            d: 6,
            e: 8,
            link,
            noise: NoiseFamily::Uniform,
            t_slices: (2, 4),
            n: 500,
            seed,
            ..ScmConfig::default()
        };
        let (steps, flags) = rollout(&cfg, &dag).unwrap();
        assert_eq!(steps.len(), 5);
        assert!(flags.iter().all(|f| !f));
        for s in 1..steps.len() {
            for j in 0..6 {
                for r in 0..cfg.n {
                    let mut v = steps[s][(r, j)] - link.apply(steps[s - 1][(r, j)]);
                    for p in dag.parents(j) {
                        v -= link.apply(steps[s][(r, p)]);
                    }
                    assert!(v.abs() <= 1.0 + 1e-12, "step {s} node {j}: {v}");
                }
            }
        }
    }
}

#[test]
fn full_intervention_randomizes_the_earlier_slice() {
    let dag = sample_dag(6, 10, 9).unwrap();
    let cfg = ScmConfig {
        d: 6,
        e: 10,
        intervention_fraction: 1.0,
        n: 5000,
        seed: 9,
        ..ScmConfig::default()
    };
    let data = simulate(&cfg, &dag).unwrap();
    assert!(data.fully_intervened());
    for i in 0..6 {
        let a = col(&data.x_tau, i);
        assert!(mean(&a).abs() < 0.06);
        assert!((var(&a) - 1.0).abs() < 0.08);
        for j in (i + 1)..6 {
            assert!(corr(&a, &col(&data.x_tau, j)).abs() < 0.1);
        }
    }
}

#[test]
fn intervened_subset_size() {
    let dag = sample_dag(10, 10, 1).unwrap();
    for (frac, k) in [(0.0, 0), (0.25, 2), (0.5, 5), (0.8, 8), (1.0, 10)] {
        let cfg = ScmConfig {
            intervention_fraction: frac,
            n: 30,
            seed: 1,
            ..ScmConfig::default()
        };
        let data = simulate(&cfg, &dag).unwrap();
        assert_eq!(data.intervened.iter().filter(|&&f| f).count(), k);
    }
}

#[test]
fn config_validation() {
    let bad = [
        ScmConfig { e: 46, ..ScmConfig::default() },
        ScmConfig { t_slices: (2, 2), ..ScmConfig::default() },
        ScmConfig { intervention_fraction: 1.5, ..ScmConfig::default() },
        ScmConfig { n: 0, ..ScmConfig::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    let dag = sample_dag(4, 2, 0).unwrap();
    assert!(matches!(
        simulate(&ScmConfig::default(), &dag),
        Err(Error::DimensionMismatch { .. })
    ));
}

fn write(dir: &std::path::Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn csv_pair_loads_and_aligns_columns() {
    let dir = tempfile::tempdir().unwrap();
    let tau = write(dir.path(), "tau.csv", "a,b,c\n1,2,3\n4,5,6\n7,8,9\n1.5,2.5,3.5\n0,0,0\n");
    let t = write(dir.path(), "t.csv", "a,b,c\n1,1,1\n2,2,2\n3,3,3\n4,4,4\n5,5,6\n");
    let data = load_two_slice_csv(&tau, &t, &CsvSchema::default()).unwrap();
    assert_eq!((data.n(), data.d()), (5, 3));
    assert!(data.intervened.iter().all(|f| !f));
    assert!(data.truth.is_none());

    let t2 = write(dir.path(), "t2.csv", "c,a,b\n1,1,1\n2,2,2\n3,3,3\n4,4,4\n6,5,5\n");
    let again = load_two_slice_csv(&tau, &t2, &CsvSchema::default()).unwrap();
    assert_eq!(again, data);
}

#[test]
fn csv_errors_name_the_location() {
    let dir = tempfile::tempdir().unwrap();
    let tau = write(dir.path(), "tau.csv", "a,b\n1,2\n3,NA\n");
    let t = write(dir.path(), "t.csv", "a,b\n1,2\n3,4\n");
    let err = load_two_slice_csv(&tau, &t, &CsvSchema::default()).unwrap_err();
    match &err {
        Error::CsvCell { row, column, .. } => assert_eq!((*row, column.as_str()), (2, "b")),
        other => panic!("unexpected {other:?}"),
    }
    let msg = err.to_string();
    assert!(msg.contains("tau.csv") && msg.contains("NA"), "{msg}");

    let short = write(dir.path(), "short.csv", "a,b\n1,2\n");
    assert!(load_two_slice_csv(&t, &short, &CsvSchema::default()).is_err());
    let other_cols = write(dir.path(), "other.csv", "a,x\n1,2\n3,4\n");
    assert!(load_two_slice_csv(&t, &other_cols, &CsvSchema::default()).is_err());

    let missing = dir.path().join("nope.csv");
    let msg = load_two_slice_csv(&missing, &t, &CsvSchema::default())
        .unwrap_err()
        .to_string();
    assert!(msg.contains("nope.csv"), "{msg}");
}

#[test]
fn export_and_sidecar_round_trip() {
    let dag = sample_dag(4, 3, 2).unwrap();
    let cfg = ScmConfig {
        d: 4,
        e: 3,
        n: 50,
        seed: 2,
        intervention_fraction: 0.5,
        ..ScmConfig::default()
    };
    let data = simulate(&cfg, &dag).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let sidecar = data.export(dir.path(), "ds", Some(&cfg)).unwrap();
    let back = TwoSliceDataset::load_sidecar(&sidecar).unwrap();
    assert_eq!(back, data);
}
