use pcl_core::algorithms::{AlgorithmId, AlgorithmKind, Simulation, Targets};
use pcl_core::harness::{
    self, read_metrics_csv, records_to_rows, series_from_records, series_from_rows, Grid,
    RunConfig, RunFile, SweepConfig,
};
use pcl_core::metrics::{center_agent, centrality_scores, estimate_nu, heterogeneity_report};
use pcl_core::model::{generate_instance, Family, InstanceConfig, ReferenceMode};
use pcl_core::noise::{MultiplicativeFamily, PsdFamily, RotationFamily};
use pcl_core::numerics::norm_sq;
use pcl_core::schedules::StepSchedule;
use pcl_core::tdapp;
use pcl_core::Error;

fn config(kind: AlgorithmKind) -> RunConfig {
    RunConfig {
        instance: InstanceConfig {
            n: 6,
            d: 3,
            delta_env_param: 0.2,
            delta_obj_param: 0.2,
            ..InstanceConfig::default()
        },
        algorithm: AlgorithmId::new(kind),
        schedule: StepSchedule::Fixed { alpha: 0.01 },
        t_max: 25,
        seeds: vec![3, 4, 5],
        reference_mode: ReferenceMode::Analytic,
        record_every: 1,
        summary_window: 10,
        nu_samples: 200,
    }
}

fn text_of(s: &harness::Summary) -> String {
    String::from_utf8(harness::summary_bytes(s)).unwrap()
}

#[test]
fn record_count_follows_stride() {
    for (t_max, k) in [(25, 1), (25, 4), (24, 4), (1, 7)] {
        let mut cfg = config(AlgorithmKind::AffpclFull);
        cfg.t_max = t_max;
        cfg.record_every = k;
        let out = harness::run_experiment(&cfg).unwrap();
        assert_eq!(out.records.len(), cfg.seeds.len() * t_max.div_ceil(k));
    }
}

#[test]
fn single_round_records_initial_error() {
    let mut cfg = config(AlgorithmKind::Independent);
    cfg.t_max = 1;
    let out = harness::run_experiment(&cfg).unwrap();
    for r in &out.records {
        let inst = harness::instance_for_seed(&cfg, r.seed).unwrap();
        for (e, x) in r.per_agent.iter().zip(&inst.x_star) {
            assert_eq!(*e, norm_sq(x));
        }
    }
}

#[test]
fn aggregate_matches_agents() {
    let out = harness::run_experiment(&config(AlgorithmKind::AffpclFull)).unwrap();
    for r in &out.records {
        let mean = r.per_agent.iter().sum::<f64>() / r.per_agent.len() as f64;
        assert!((mean - r.mse0).abs() <= 1e-12);
    }
}

#[test]
fn csv_round_trip_and_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = harness::run_experiment(&config(AlgorithmKind::Fedavg)).unwrap();
    let summary = harness::summarize(serde_json::Value::Null, Vec::new(), vec![out.meta()], &series_from_records(&out.records));
    harness::persist(&out.records, &summary, dir.path()).unwrap();
    let path = dir.path().join(harness::METRICS_FILE);
    let rows = read_metrics_csv(&path).unwrap();
    assert_eq!(rows, records_to_rows(&out.records));
    assert_eq!(series_from_rows(&rows, &path).unwrap(), series_from_records(&out.records));

    let empty = tempfile::tempdir().unwrap();
    harness::persist(&[], &summary, empty.path()).unwrap();
    let text = std::fs::read_to_string(empty.path().join(harness::METRICS_FILE)).unwrap();
    assert_eq!(text, "run_id,seed,algorithm,cdl_variant,dre_mode,t,agent_id,squared_error\n");
}

#[test]
fn summary_echoes_config_and_report_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(AlgorithmKind::AffpclFull);
    let plan = vec![("a".to_string(), cfg.clone())];
    let out = harness::execute(serde_json::to_value(&cfg).unwrap(), &plan, true, &harness::quiet);
    harness::persist(&out.records, &out.summary, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join(harness::SUMMARY_FILE)).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["config", "heterogeneity", "per_algorithm", "contour"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert_eq!(json["config"]["seeds"], serde_json::json!([3, 4, 5]));
    // Compared with itself the improvement ratio is exactly one.
    assert_eq!(out.summary.improvement[0].ratio, 1.0);

    let metrics = dir.path().join(harness::METRICS_FILE);
    let first = harness::report(&metrics).unwrap();
    assert_eq!(text_of(&first), text_of(&out.summary));
    harness::atomic_write(&dir.path().join(harness::SUMMARY_FILE), &harness::summary_bytes(&first)).unwrap();
    let second = harness::report(&metrics).unwrap();
    assert_eq!(text_of(&first), text_of(&second));
}

#[test]
fn report_without_sibling_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = harness::run_experiment(&config(AlgorithmKind::Independent)).unwrap();
    let metrics = dir.path().join(harness::METRICS_FILE);
    harness::atomic_write(&metrics, &harness::metrics_csv_bytes(&records_to_rows(&out.records))).unwrap();
    let a = harness::report(&metrics).unwrap();
    harness::atomic_write(&dir.path().join(harness::SUMMARY_FILE), &harness::summary_bytes(&a)).unwrap();
    let b = harness::report(&metrics).unwrap();
    assert_eq!(text_of(&a), text_of(&b));
    assert_eq!(a.per_algorithm[0].final_mean, out.summary.final_mean);
}

#[test]
fn seed_isolation() {
    let a = harness::run_experiment(&config(AlgorithmKind::AffpclFull)).unwrap();
    let mut other = config(AlgorithmKind::AffpclFull);
    other.seeds = vec![3, 99, 5];
    let b = harness::run_experiment(&other).unwrap();
    let pick = |recs: &[pcl_core::metrics::MetricsRecord], s: u64| {
        recs.iter().filter(|r| r.seed == s).cloned().collect::<Vec<_>>()
    };
    assert_eq!(pick(&a.records, 3), pick(&b.records, 3));
    assert_eq!(pick(&a.records, 5), pick(&b.records, 5));
}

#[test]
fn single_point_sweep_matches_run() {
    let cfg = config(AlgorithmKind::AffpclFull);
    let sweep = SweepConfig {
        base: cfg.clone(),
        grid: Grid {
            delta: vec![0.2],
            ..Grid::default()
        },
        algorithms: vec![AlgorithmId::new(AlgorithmKind::Fedavg), AlgorithmId::new(AlgorithmKind::AffpclFull)],
        summary_window: None,
        heterogeneity: false,
    };
    let out = harness::sweep(&sweep, &harness::quiet).unwrap();
    let run = harness::run_experiment(&cfg).unwrap();
    let ours = out.summary.per_algorithm.iter().find(|a| a.algorithm == cfg.algorithm).unwrap();
    assert_eq!(ours.final_mean, run.summary.final_mean);
    assert_eq!(ours.per_seed, run.summary.per_seed);
}

#[test]
fn failing_grid_point_is_marked() {
    let mut base = config(AlgorithmKind::AffpclKnown);
    base.instance.delta_env_param = 0.0;
    let sweep = SweepConfig {
        base,
        grid: Grid {
            delta_env: vec![0.0, 0.3],
            ..Grid::default()
        },
        algorithms: Vec::new(),
        summary_window: None,
        heterogeneity: false,
    };
    let out = harness::sweep(&sweep, &harness::quiet).unwrap();
    assert_eq!(out.summary.runs.len(), 2);
    assert!(out.summary.runs[0].error.is_none());
    assert!(out.summary.runs[1].error.as_deref().unwrap().contains("homogeneous"));
    assert!(out.summary.per_algorithm[1].final_mean.is_nan());
}

/// Spearman trend of the summary value against `n` at a small `δ`.
#[test]
fn error_decreases_with_agents() {
    let mut base = config(AlgorithmKind::AffpclFull);
    base.t_max = 60;
    base.seeds = (0..10).collect();
    let ns = vec![2, 5, 10, 20, 30, 40, 50];
    let sweep = SweepConfig {
        base,
        grid: Grid {
            delta: vec![0.02],
            n: ns.clone(),
            ..Grid::default()
        },
        algorithms: Vec::new(),
        summary_window: None,
        heterogeneity: false,
    };
    let out = harness::sweep(&sweep, &harness::quiet).unwrap();
    let values: Vec<f64> = out.summary.per_algorithm.iter().map(|a| a.final_mean).collect();
    // Values are ordered by n; count discordant pairs (Kendall-style).
    let mut discordant = 0;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            if values[j] > values[i] {
                discordant += 1;
            }
        }
    }
    assert!(discordant <= 3, "{values:?}");
}

#[test]
fn run_file_forms() {
    let single = r#"{"instance": {"n": 3, "d": 2}, "t_max": 5, "seeds": [1]}"#;
    let f = RunFile::parse(single, "x.json".as_ref()).unwrap();
    assert!(matches!(f, RunFile::Single(_)));
    let bad = "{\n  \"instance\": {\"n\": 3, \"dd\": 2},\n  \"t_max\": 5, \"seeds\": [1]}";
    match RunFile::parse(bad, "bad.json".as_ref()) {
        Err(e @ Error::Parse { .. }) => {
            let msg = e.to_string();
            assert!(msg.contains("line 2") && msg.contains("dd"), "{msg}");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    let plan = r#"{"runs": [{"name": "a", "config": {"instance": {"n": 3, "d": 2}, "t_max": 5, "seeds": [1]}}]}"#;
    let f = RunFile::parse(plan, "p.json".as_ref()).unwrap();
    assert_eq!(f.groups()[0].0.as_deref(), Some("a"));
}

#[test]
fn invalid_configs_are_config_errors() {
    let mut cfg = config(AlgorithmKind::AffpclKnown);
    assert!(cfg.validate().unwrap_err().is_config_error());
    cfg.algorithm = AlgorithmId::new(AlgorithmKind::Fedavg);
    cfg.seeds.clear();
    assert!(cfg.validate().unwrap_err().is_config_error());
}

#[test]
fn center_is_the_pinned_agent() {
    for seed in 0..10 {
        let inst = generate_instance(&InstanceConfig {
            n: 30,
            delta_env_param: 0.5,
            delta_obj_param: 0.5,
            seed,
            ..InstanceConfig::default()
        })
        .unwrap();
        let (scores, _) = centrality_scores(&inst, 2000, seed);
        assert!(scores.iter().all(|&s| s <= 1.0));
        assert_eq!(pcl_core::metrics::argmin_lowest(&scores), 0, "seed {seed}: {scores:?}");
    }
}

#[test]
fn homogeneous_scores_vanish() {
    let inst = generate_instance(&InstanceConfig { n: 5, d: 3, ..InstanceConfig::default() }).unwrap();
    let report = heterogeneity_report(&inst, 500).unwrap();
    assert!(report.delta_cen.iter().all(|&s| s <= 1e-9));
    assert!(report.delta_env <= 1e-9 && report.delta_obj <= 1e-9);
    assert_eq!(center_agent(&report), 0);
}

#[test]
fn nu_is_at_least_one() {
    let models: Vec<Box<dyn pcl_core::metrics::NoiseModel>> = vec![
        Box::new(PsdFamily::random(2, 3, 1)),
        Box::new(MultiplicativeFamily::random(3, 3, 0.5, 2)),
        Box::new(RotationFamily { gap: 1.0 }),
        Box::new(generate_instance(&InstanceConfig { n: 4, d: 3, delta_env_param: 0.4, ..InstanceConfig::default() }).unwrap()),
    ];
    for m in &models {
        let nu = estimate_nu(m.as_ref(), 3000, 7).unwrap();
        assert!(nu.value >= 1.0 - 3.0 * nu.se, "{nu:?}");
    }
    let wide = estimate_nu(&RotationFamily { gap: 0.1 }, 3000, 1).unwrap();
    let narrow = estimate_nu(&RotationFamily { gap: std::f64::consts::PI }, 3000, 1).unwrap();
    assert!(wide.value > 5.0 * narrow.value);
}

#[test]
fn td_expected_matrix_matches_closed_form() {
    let mrp = tdapp::generate_mrp(2, 5, 3, 0.9, 0.3, 0.3, 4).unwrap();
    let cfg = InstanceConfig { n: 2, d: 3, family: Family::Mrp, tabular_size: 5, ..InstanceConfig::default() };
    let inst = tdapp::to_instance(&mrp, &cfg).unwrap();
    // Φᵀ diag(π) (Φ − γ P Φ) with Φ the S×d feature matrix.
    let s = 5;
    let feats = pcl_core::numerics::Matrix::from_rows(&mrp.phi);
    for i in 0..2 {
        let pi = pcl_core::numerics::Matrix::from_diag(&mrp.pi[i]);
        let next = mrp.p[i].matmul(&feats).scale(mrp.gamma);
        let closed = feats.transpose().matmul(&pi).matmul(&feats.sub(&next));
        assert!(closed.sub(&inst.abar[i]).max_abs() <= 1e-12);
        assert_eq!(feats.rows(), s);
    }
}

#[test]
fn td_learning_converges() {
    // Homogeneous personalized TD(0) on an 8-state chain.
    for seed in [1u64, 2] {
        let mrp = tdapp::generate_mrp(10, 8, 3, 0.9, 0.0, 0.0, seed).unwrap();
        let cfg = InstanceConfig { n: 10, d: 3, family: Family::Mrp, tabular_size: 8, seed, ..InstanceConfig::default() };
        let inst = tdapp::to_instance(&mrp, &cfg).unwrap();
        for i in 0..10 {
            let reference = tdapp::td_reference(&mrp, i).unwrap();
            assert!(pcl_core::numerics::dist_sq(&reference, &inst.x_star[i]) <= 1e-18);
        }
        let targets = Targets::analytic(&inst);
        let schedule = StepSchedule::Fixed { alpha: 0.01 };
        let sim = Simulation {
            instance: &inst,
            targets: &targets,
            algorithm: AlgorithmId::new(AlgorithmKind::AffpclFull),
            schedule: &schedule,
            t_max: 2001,
            record_every: 2000,
            seed,
        };
        let rec = sim.run().unwrap();
        let (first, last) = (rec[0].mse0(), rec[rec.len() - 1].mse0());
        assert_eq!(rec[rec.len() - 1].t, 2000);
        assert!(last <= first / 10.0, "seed {seed}: {first} -> {last}");
    }
}
