//! Experiment orchestration: runs, sweeps, persistence and summaries.
//!
//! Work is split into independent `(run, seed)` tasks executed on the
//! current rayon pool. Results are collected in task order, so output files
//! do not depend on the number of workers.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{
    AlgorithmId, AlgorithmKind, CdlVariant, DreMode, Simulation, Targets, TrajectoryPoint,
};
use crate::error::{Error, Result};
use crate::metrics::{
    argmin_lowest, centrality_scores, generic_mean, heterogeneity_report, HeterogeneityReport,
    MetricsRecord, DEFAULT_NU_SAMPLES,
};
use crate::model::{generate_instance, Family, Instance, InstanceConfig, ReferenceMode};
use crate::schedules::StepSchedule;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CSV_HEADER: [&str; 8] = [
    "run_id",
    "seed",
    "algorithm",
    "cdl_variant",
    "dre_mode",
    "t",
    "agent_id",
    "squared_error",
];

fn one() -> usize {
    1
}

fn ten() -> usize {
    10
}

fn default_nu_samples() -> usize {
    DEFAULT_NU_SAMPLES
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub instance: InstanceConfig,
    #[serde(default)]
    pub algorithm: AlgorithmId,
    #[serde(default)]
    pub schedule: StepSchedule,
    pub t_max: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub reference_mode: ReferenceMode,
    #[serde(default = "one")]
    pub record_every: usize,
    /// Number of trailing records averaged into the summary value.
    #[serde(default = "ten")]
    pub summary_window: usize,
    /// Draws used for the ν estimate and Monte Carlo total variation.
    #[serde(default = "default_nu_samples")]
    pub nu_samples: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.t_max == 0 {
            return bad("t_max must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1");
        }
        if self.summary_window == 0 {
            return bad("summary_window must be at least 1");
        }
        if self.nu_samples < 100 {
            return bad("nu_samples must be at least 100");
        }
        if let ReferenceMode::MonteCarlo { samples: 0 } = self.reference_mode {
            return bad("monte_carlo reference needs samples >= 1");
        }
        self.instance.validate()?;
        self.schedule.validate()?;
        let a = self.algorithm;
        if a.kind == AlgorithmKind::AffpclKnown && self.instance.delta_env_param > 0.0 {
            return Err(Error::HeterogeneousEnvironment(self.instance.delta_env_param));
        }
        if a.kind == AlgorithmKind::AffpclFull
            && a.dre_mode == DreMode::CoupledTabular
            && self.instance.family == Family::Gaussian
        {
            return Err(Error::UnsupportedFamily {
                operation: "coupled_tabular density ratios",
                family: "gaussian",
            });
        }
        Ok(())
    }

    fn instance_for(&self, seed: u64) -> InstanceConfig {
        InstanceConfig {
            seed,
            ..self.instance.clone()
        }
    }
}

/// Every record of one run plus its summary.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_id: String,
    pub config: RunConfig,
    pub records: Vec<MetricsRecord>,
    pub centers: Vec<usize>,
    pub summary: AlgorithmSummary,
}

impl RunResult {
    pub fn meta(&self) -> RunMeta {
        RunMeta::new(&self.run_id, &self.config, Some(self.centers.clone()), None)
    }
}

/// JSON has no NaN; serde_json writes it as `null`, read back here.
fn nullable_f64<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn nullable_vec<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
    let v = Vec::<Option<f64>>::deserialize(d)?;
    Ok(v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect())
}

/// Identifies one run inside a summary; lets `report` rebuild statistics
/// from a metrics file alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub algorithm: AlgorithmId,
    pub n: usize,
    #[serde(deserialize_with = "nullable_f64")]
    pub delta_env_param: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub delta_obj_param: f64,
    pub seeds: Vec<u64>,
    pub centers: Vec<usize>,
    pub summary_window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunMeta {
    fn new(run_id: &str, cfg: &RunConfig, centers: Option<Vec<usize>>, error: Option<String>) -> Self {
        RunMeta {
            run_id: run_id.to_string(),
            algorithm: cfg.algorithm,
            n: cfg.instance.n,
            delta_env_param: cfg.instance.delta_env_param,
            delta_obj_param: cfg.instance.delta_obj_param,
            seeds: cfg.seeds.clone(),
            centers: centers.unwrap_or_default(),
            summary_window: cfg.summary_window,
            error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub run_id: String,
    pub algorithm: AlgorithmId,
    pub n: usize,
    #[serde(deserialize_with = "nullable_f64")]
    pub delta_env_param: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub delta_obj_param: f64,
    /// Mean over seeds of the windowed MSE⁰.
    #[serde(deserialize_with = "nullable_f64")]
    pub final_mean: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub p5: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub p95: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub center_agent_mse: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub generic_agent_mse: f64,
    #[serde(deserialize_with = "nullable_vec")]
    pub per_seed: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityEntry {
    pub run_id: String,
    pub n: usize,
    #[serde(deserialize_with = "nullable_f64")]
    pub delta_env_param: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub delta_obj_param: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<HeterogeneityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub run_id: String,
    pub baseline: AlgorithmId,
    pub reference: AlgorithmId,
    /// `MSE(baseline) / MSE(reference)`.
    #[serde(deserialize_with = "nullable_f64")]
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourPoint {
    pub run_id: String,
    pub algorithm: AlgorithmId,
    #[serde(deserialize_with = "nullable_f64")]
    pub inv_n: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub delta: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: serde_json::Value,
    pub heterogeneity: Vec<HeterogeneityEntry>,
    pub per_algorithm: Vec<AlgorithmSummary>,
    pub improvement: Vec<Improvement>,
    pub contour: Vec<ContourPoint>,
    pub runs: Vec<RunMeta>,
}

/// One seed's error trajectory: `(t, per-agent squared errors)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSeries {
    pub run_id: String,
    pub algorithm: AlgorithmId,
    pub seed: u64,
    pub points: Vec<(usize, Vec<f64>)>,
}

/// Nearest-rank percentile of already sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn window_mean(points: &[(usize, Vec<f64>)], window: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let start = points.len().saturating_sub(window);
    let tail: Vec<f64> = points[start..].iter().map(|(_, e)| f(e)).collect();
    mean(&tail)
}

/// Summary statistics of one run from its per-seed series. `centers[k]` is
/// the center agent of the k-th seed.
pub fn summarize_run(meta: &RunMeta, series: &[&SeedSeries]) -> AlgorithmSummary {
    let window = meta.summary_window.max(1);
    let mut per_seed = Vec::with_capacity(series.len());
    let mut center = Vec::with_capacity(series.len());
    let mut generic = Vec::with_capacity(series.len());
    for (k, s) in series.iter().enumerate() {
        let c = meta.centers.get(k).copied().unwrap_or(0);
        per_seed.push(window_mean(&s.points, window, mean));
        center.push(window_mean(&s.points, window, |e| e[c.min(e.len() - 1)]));
        generic.push(window_mean(&s.points, window, |e| generic_mean(e, c)));
    }
    let mut sorted = per_seed.clone();
    sorted.sort_by(f64::total_cmp);
    AlgorithmSummary {
        run_id: meta.run_id.clone(),
        algorithm: meta.algorithm,
        n: meta.n,
        delta_env_param: meta.delta_env_param,
        delta_obj_param: meta.delta_obj_param,
        final_mean: mean(&per_seed),
        p5: percentile(&sorted, 5.0),
        p95: percentile(&sorted, 95.0),
        center_agent_mse: mean(&center),
        generic_agent_mse: mean(&generic),
        per_seed,
        error: meta.error.clone(),
    }
}

fn failed_summary(meta: &RunMeta) -> AlgorithmSummary {
    AlgorithmSummary {
        run_id: meta.run_id.clone(),
        algorithm: meta.algorithm,
        n: meta.n,
        delta_env_param: meta.delta_env_param,
        delta_obj_param: meta.delta_obj_param,
        final_mean: f64::NAN,
        p5: f64::NAN,
        p95: f64::NAN,
        center_agent_mse: f64::NAN,
        generic_agent_mse: f64::NAN,
        per_seed: Vec::new(),
        error: meta.error.clone(),
    }
}

pub fn series_from_records(records: &[MetricsRecord]) -> Vec<SeedSeries> {
    let mut out: Vec<SeedSeries> = Vec::new();
    for r in records {
        let same = out.last().is_some_and(|s| {
            s.run_id == r.run_id && s.algorithm == r.algorithm && s.seed == r.seed
        });
        if !same {
            out.push(SeedSeries {
                run_id: r.run_id.clone(),
                algorithm: r.algorithm,
                seed: r.seed,
                points: Vec::new(),
            });
        }
        out.last_mut()
            .expect("series pushed above")
            .points
            .push((r.t, r.per_agent.clone()));
    }
    out
}

/// Summaries, improvement ratios and contour triples for a set of runs.
pub fn summarize(
    config: serde_json::Value,
    heterogeneity: Vec<HeterogeneityEntry>,
    metas: Vec<RunMeta>,
    series: &[SeedSeries],
) -> Summary {
    let per_algorithm: Vec<AlgorithmSummary> = metas
        .iter()
        .map(|m| {
            if m.error.is_some() {
                return failed_summary(m);
            }
            let mine: Vec<&SeedSeries> = series
                .iter()
                .filter(|s| s.run_id == m.run_id && s.algorithm == m.algorithm)
                .collect();
            if mine.is_empty() {
                return failed_summary(&RunMeta {
                    error: Some("no records".into()),
                    ..m.clone()
                });
            }
            summarize_run(m, &mine)
        })
        .collect();

    let mut improvement = Vec::new();
    let mut groups: Vec<&str> = Vec::new();
    for s in &per_algorithm {
        if !groups.contains(&s.run_id.as_str()) {
            groups.push(&s.run_id);
        }
    }
    for g in groups {
        let members: Vec<&AlgorithmSummary> =
            per_algorithm.iter().filter(|s| s.run_id == g).collect();
        let reference = members
            .iter()
            .find(|s| s.algorithm.kind.is_affpcl())
            .or(members.first())
            .copied()
            .expect("group has members");
        for s in &members {
            improvement.push(Improvement {
                run_id: g.to_string(),
                baseline: s.algorithm,
                reference: reference.algorithm,
                ratio: s.final_mean / reference.final_mean,
            });
        }
    }

    let contour = per_algorithm
        .iter()
        .filter(|s| s.error.is_none())
        .map(|s| ContourPoint {
            run_id: s.run_id.clone(),
            algorithm: s.algorithm,
            inv_n: 1.0 / s.n as f64,
            delta: s.delta_env_param.max(s.delta_obj_param),
            value: s.final_mean,
        })
        .collect();

    Summary {
        config,
        heterogeneity,
        per_algorithm,
        improvement,
        contour,
        runs: metas,
    }
}

fn run_seed(cfg: &RunConfig, run_id: &str, seed: u64) -> Result<(Vec<MetricsRecord>, usize)> {
    let inner = || -> Result<(Vec<MetricsRecord>, usize)> {
        let inst = generate_instance(&cfg.instance_for(seed))?;
        let targets = Targets::from_mode(&inst, cfg.reference_mode, seed)?;
        let (scores, _) = centrality_scores(&inst, cfg.nu_samples, seed);
        let center = argmin_lowest(&scores);
        let sim = Simulation {
            instance: &inst,
            targets: &targets,
            algorithm: cfg.algorithm,
            schedule: &cfg.schedule,
            t_max: cfg.t_max,
            record_every: cfg.record_every,
            seed,
        };
        let points: Vec<TrajectoryPoint> = sim.run()?;
        let records = points
            .iter()
            .map(|p| MetricsRecord::new(run_id, seed, cfg.algorithm, p, center))
            .collect();
        Ok((records, center))
    };
    inner().map_err(|e| e.with_seed(seed))
}

/// Progress callback, invoked once per finished task.
pub type Progress<'a> = &'a (dyn Fn(&str) + Sync);

pub fn quiet(_: &str) {}

/// Executes `(run_id, config)` pairs. Each entry yields its own result so
/// one failing run does not stop the others.
pub fn run_batch(plan: &[(String, RunConfig)], progress: Progress<'_>) -> Vec<Result<RunResult>> {
    let tasks: Vec<(usize, u64)> = plan
        .iter()
        .enumerate()
        .flat_map(|(k, (_, cfg))| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let total = tasks.len();
    let outputs: Vec<Result<(Vec<MetricsRecord>, usize)>> = tasks
        .par_iter()
        .map(|&(k, seed)| {
            let (run_id, cfg) = &plan[k];
            let out = run_seed(cfg, run_id, seed);
            let status = match &out {
                Ok(_) => "done".to_string(),
                Err(e) => format!("failed: {e}"),
            };
            progress(&format!(
                "[{total} tasks] run {run_id} {} seed {seed}: {status}",
                cfg.algorithm.kind.name()
            ));
            out
        })
        .collect();

    let mut outputs = outputs.into_iter();
    plan.iter()
        .map(|(run_id, cfg)| {
            let mut records = Vec::new();
            let mut centers = Vec::new();
            let mut first_err = None;
            for _ in &cfg.seeds {
                match outputs.next().expect("one output per task") {
                    Ok((r, c)) => {
                        records.extend(r);
                        centers.push(c);
                    }
                    Err(e) => {
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
            let meta = RunMeta::new(run_id, cfg, Some(centers.clone()), None);
            let series = series_from_records(&records);
            let refs: Vec<&SeedSeries> = series.iter().collect();
            let summary = summarize_run(&meta, &refs);
            Ok(RunResult {
                run_id: run_id.clone(),
                config: cfg.clone(),
                records,
                centers,
                summary,
            })
        })
        .collect()
}

/// Runs every seed of one configuration. Errors carry the failing seed.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    run_batch(&[("run".to_string(), cfg.clone())], &quiet)
        .pop()
        .expect("one result per plan entry")
}

/// Heterogeneity of the first seed's instance for every distinct run id.
pub fn heterogeneity_entries(plan: &[(String, RunConfig)]) -> Vec<HeterogeneityEntry> {
    let mut firsts: Vec<&(String, RunConfig)> = Vec::new();
    for entry in plan {
        if !firsts.iter().any(|f| f.0 == entry.0) {
            firsts.push(entry);
        }
    }
    firsts
        .par_iter()
        .map(|(run_id, cfg)| {
            let seed = cfg.seeds[0];
            let outcome = generate_instance(&cfg.instance_for(seed))
                .and_then(|inst| heterogeneity_report(&inst, cfg.nu_samples));
            let (report, error) = match outcome {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.with_seed(seed).to_string())),
            };
            HeterogeneityEntry {
                run_id: run_id.clone(),
                n: cfg.instance.n,
                delta_env_param: cfg.instance.delta_env_param,
                delta_obj_param: cfg.instance.delta_obj_param,
                seed,
                report,
                error,
            }
        })
        .collect()
}

/// Records and summary of a finished batch.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub records: Vec<MetricsRecord>,
    pub summary: Summary,
}

/// Runs a plan, keeping failed runs as error entries in the summary.
pub fn execute(
    config: serde_json::Value,
    plan: &[(String, RunConfig)],
    with_heterogeneity: bool,
    progress: Progress<'_>,
) -> Outcome {
    let results = run_batch(plan, progress);
    let heterogeneity = if with_heterogeneity {
        heterogeneity_entries(plan)
    } else {
        Vec::new()
    };
    let mut records = Vec::new();
    let mut metas = Vec::new();
    for ((run_id, cfg), res) in plan.iter().zip(results) {
        match res {
            Ok(r) => {
                metas.push(r.meta());
                records.extend(r.records);
            }
            Err(e) => metas.push(RunMeta::new(run_id, cfg, None, Some(e.to_string()))),
        }
    }
    let series = series_from_records(&records);
    let summary = summarize(config, heterogeneity, metas, &series);
    Outcome { records, summary }
}

/// Axes of a sweep. `delta` sets both parameters together; otherwise the
/// grid is the product of `delta_env` and `delta_obj`. Empty axes keep the
/// base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub delta: Vec<f64>,
    pub delta_env: Vec<f64>,
    pub delta_obj: Vec<f64>,
    pub n: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub n: usize,
    pub delta_env_param: f64,
    pub delta_obj_param: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub grid: Grid,
    /// Defaults to the base algorithm alone.
    #[serde(default)]
    pub algorithms: Vec<AlgorithmId>,
    /// Overrides `base.summary_window`.
    #[serde(default)]
    pub summary_window: Option<usize>,
    #[serde(default = "yes")]
    pub heterogeneity: bool,
}

impl SweepConfig {
    pub fn points(&self) -> Vec<GridPoint> {
        let g = &self.grid;
        let base = &self.base.instance;
        let pairs: Vec<(f64, f64)> = if !g.delta.is_empty() {
            g.delta.iter().map(|&d| (d, d)).collect()
        } else {
            let envs = if g.delta_env.is_empty() {
                vec![base.delta_env_param]
            } else {
                g.delta_env.clone()
            };
            let objs = if g.delta_obj.is_empty() {
                vec![base.delta_obj_param]
            } else {
                g.delta_obj.clone()
            };
            envs.iter()
                .flat_map(|&e| objs.iter().map(move |&o| (e, o)))
                .collect()
        };
        let ns = if g.n.is_empty() { vec![base.n] } else { g.n.clone() };
        let mut out = Vec::new();
        for &n in &ns {
            for &(e, o) in &pairs {
                out.push(GridPoint {
                    index: out.len(),
                    n,
                    delta_env_param: e,
                    delta_obj_param: o,
                });
            }
        }
        out
    }

    pub fn algorithms(&self) -> Vec<AlgorithmId> {
        if self.algorithms.is_empty() {
            vec![self.base.algorithm]
        } else {
            self.algorithms.clone()
        }
    }

    /// One `(run_id, config)` per grid point and algorithm.
    pub fn plan(&self) -> Vec<(String, RunConfig)> {
        let mut plan = Vec::new();
        for p in self.points() {
            for &algorithm in &self.algorithms() {
                let mut cfg = self.base.clone();
                cfg.instance.n = p.n;
                cfg.instance.delta_env_param = p.delta_env_param;
                cfg.instance.delta_obj_param = p.delta_obj_param;
                cfg.algorithm = algorithm;
                if let Some(w) = self.summary_window {
                    cfg.summary_window = w;
                }
                plan.push((format!("p{}", p.index), cfg));
            }
        }
        plan
    }

    /// Checks the grid shape and the base configuration. Individual grid
    /// points are not rejected here; they fail inside the sweep.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.delta.is_empty() && g.delta_env.is_empty() && g.delta_obj.is_empty() && g.n.is_empty()
        {
            return Err(Error::InvalidConfig("sweep grid has no axes".into()));
        }
        if !g.delta.is_empty() && !(g.delta_env.is_empty() && g.delta_obj.is_empty()) {
            return Err(Error::InvalidConfig(
                "grid.delta cannot be combined with delta_env or delta_obj".into(),
            ));
        }
        if self.summary_window == Some(0) {
            return Err(Error::InvalidConfig("summary_window must be at least 1".into()));
        }
        let mut base = self.base.clone();
        // The base algorithm may be incompatible with base deltas that the
        // grid overrides anyway.
        base.algorithm = AlgorithmId::new(AlgorithmKind::Independent);
        base.validate()
    }
}

/// Runs every grid point. A failing point is recorded with an error marker
/// and the sweep continues.
pub fn sweep(cfg: &SweepConfig, progress: Progress<'_>) -> Result<Outcome> {
    cfg.validate()?;
    let config = serde_json::to_value(cfg).expect("config serializes");
    Ok(execute(config, &cfg.plan(), cfg.heterogeneity, progress))
}

/// Named runs, optionally each compared across several algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedRun {
    pub name: String,
    pub config: RunConfig,
    #[serde(default)]
    pub algorithms: Vec<AlgorithmId>,
}

impl NamedRun {
    pub fn plan(&self) -> Vec<(String, RunConfig)> {
        if self.algorithms.is_empty() {
            return vec![(self.name.clone(), self.config.clone())];
        }
        self.algorithms
            .iter()
            .map(|&a| {
                let mut c = self.config.clone();
                c.algorithm = a;
                (self.name.clone(), c)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPlan {
    pub runs: Vec<NamedRun>,
}

/// Contents of a `run` config file: a single [`RunConfig`] or a
/// [`RunPlan`] with a `runs` array.
#[derive(Debug, Clone, PartialEq)]
pub enum RunFile {
    Single(RunConfig),
    Plan(RunPlan),
}

fn parse_json<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        Error::parse(
            path,
            format!("line {}, column {}: {e}", e.line(), e.column()),
        )
    })
}

impl RunFile {
    pub fn parse(text: &str, path: &Path) -> Result<RunFile> {
        let value: serde_json::Value = parse_json(text, path)?;
        if value.get("runs").is_some() {
            Ok(RunFile::Plan(parse_json(text, path)?))
        } else {
            Ok(RunFile::Single(parse_json(text, path)?))
        }
    }

    pub fn load(path: &Path) -> Result<RunFile> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunFile::parse(&text, path)
    }

    /// `(directory name, plan)` per output directory. A single config
    /// writes to the output root.
    pub fn groups(&self) -> Vec<(Option<String>, Vec<(String, RunConfig)>)> {
        match self {
            RunFile::Single(c) => vec![(None, vec![("run".to_string(), c.clone())])],
            RunFile::Plan(p) => p
                .runs
                .iter()
                .map(|r| (Some(r.name.clone()), r.plan()))
                .collect(),
        }
    }

    pub fn configs_mut(&mut self) -> Vec<&mut RunConfig> {
        match self {
            RunFile::Single(c) => vec![c],
            RunFile::Plan(p) => p.runs.iter_mut().map(|r| &mut r.config).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let RunFile::Plan(p) = self {
            if p.runs.is_empty() {
                return Err(Error::InvalidConfig("runs must not be empty".into()));
            }
            let mut names: Vec<&str> = Vec::new();
            for r in &p.runs {
                if r.name.is_empty()
                    || r.name.contains(['/', '\\'])
                    || r.name == "."
                    || r.name == ".."
                {
                    return Err(Error::InvalidConfig(format!("invalid run name {:?}", r.name)));
                }
                if names.contains(&r.name.as_str()) {
                    return Err(Error::InvalidConfig(format!("duplicate run name {:?}", r.name)));
                }
                names.push(&r.name);
            }
        }
        for (_, plan) in self.groups() {
            for (_, c) in &plan {
                c.validate()?;
            }
        }
        Ok(())
    }
}

pub fn load_sweep(path: &Path) -> Result<SweepConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_json(&text, path)
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub algorithm: String,
    pub cdl_variant: String,
    pub dre_mode: String,
    pub t: usize,
    pub agent_id: i64,
    pub squared_error: f64,
}

/// Aggregate row first (`agent_id = -1`), then one row per agent.
pub fn records_to_rows(records: &[MetricsRecord]) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    for r in records {
        let row = |agent_id: i64, v: f64| MetricsRow {
            run_id: r.run_id.clone(),
            seed: r.seed,
            algorithm: r.algorithm.kind.name().to_string(),
            cdl_variant: r.algorithm.cdl_variant.name().to_string(),
            dre_mode: r.algorithm.dre_mode.name().to_string(),
            t: r.t,
            agent_id,
            squared_error: v,
        };
        rows.push(row(-1, r.mse0));
        for (i, &v) in r.per_agent.iter().enumerate() {
            rows.push(row(i as i64, v));
        }
    }
    rows
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_error(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn metrics_csv_bytes(rows: &[MetricsRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.run_id.as_str(),
            &r.seed.to_string(),
            &r.algorithm,
            &r.cdl_variant,
            &r.dre_mode,
            &r.t.to_string(),
            &r.agent_id.to_string(),
            &format_error(r.squared_error),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let header = reader.headers().map_err(|e| Error::parse(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::parse(path, format!("unexpected header {:?}", header)));
    }
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num_err = |col: &str| Error::parse(path, format!("line {line}: bad {col}"));
        rows.push(MetricsRow {
            run_id: field(0).to_string(),
            seed: field(1).parse().map_err(|_| num_err("seed"))?,
            algorithm: field(2).to_string(),
            cdl_variant: field(3).to_string(),
            dre_mode: field(4).to_string(),
            t: field(5).parse().map_err(|_| num_err("t"))?,
            agent_id: field(6).parse().map_err(|_| num_err("agent_id"))?,
            squared_error: field(7).parse().map_err(|_| num_err("squared_error"))?,
        });
    }
    Ok(rows)
}

fn algorithm_from_row(row: &MetricsRow) -> Option<AlgorithmId> {
    Some(AlgorithmId {
        kind: AlgorithmKind::parse(&row.algorithm)?,
        cdl_variant: CdlVariant::parse(&row.cdl_variant)?,
        dre_mode: DreMode::parse(&row.dre_mode)?,
    })
}

/// Rebuilds per-seed series from CSV rows, keeping first-appearance order.
pub fn series_from_rows(rows: &[MetricsRow], path: &Path) -> Result<Vec<SeedSeries>> {
    let mut out: Vec<SeedSeries> = Vec::new();
    for row in rows {
        let algorithm = algorithm_from_row(row).ok_or_else(|| {
            Error::parse(path, format!("unknown algorithm columns in {row:?}"))
        })?;
        if row.agent_id < 0 {
            continue;
        }
        let same = out.last().is_some_and(|s| {
            s.run_id == row.run_id && s.algorithm == algorithm && s.seed == row.seed
        });
        if !same {
            out.push(SeedSeries {
                run_id: row.run_id.clone(),
                algorithm,
                seed: row.seed,
                points: Vec::new(),
            });
        }
        let series = out.last_mut().expect("series pushed above");
        if series.points.last().map(|p| p.0) != Some(row.t) {
            series.points.push((row.t, Vec::new()));
        }
        let errs = &mut series.points.last_mut().expect("point pushed above").1;
        if errs.len() as i64 != row.agent_id {
            return Err(Error::parse(
                path,
                format!("agent rows out of order at run {} t {}", row.run_id, row.t),
            ));
        }
        errs.push(row.squared_error);
    }
    Ok(out)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp: PathBuf = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn summary_bytes(summary: &Summary) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(summary).expect("summary serializes");
    b.push(b'\n');
    b
}

/// Writes `metrics.csv` and `summary.json` into `out_dir`.
pub fn persist(records: &[MetricsRecord], summary: &Summary, out_dir: &Path) -> Result<()> {
    atomic_write(&out_dir.join(METRICS_FILE), &metrics_csv_bytes(&records_to_rows(records)))?;
    atomic_write(&out_dir.join(SUMMARY_FILE), &summary_bytes(summary))
}

/// Recomputes a summary from a metrics file. Run metadata, configuration
/// and heterogeneity come from a sibling `summary.json` when present;
/// otherwise every run gets center agent 0 and a window of 10.
pub fn report(metrics_path: &Path) -> Result<Summary> {
    let rows = read_metrics_csv(metrics_path)?;
    let series = series_from_rows(&rows, metrics_path)?;
    let sibling = metrics_path.with_file_name(SUMMARY_FILE);
    let previous: Option<Summary> = if sibling.exists() {
        let text = fs::read_to_string(&sibling).map_err(|e| Error::io(&sibling, e))?;
        Some(parse_json(&text, &sibling)?)
    } else {
        None
    };
    let (config, heterogeneity, metas) = match previous {
        Some(s) => (s.config, s.heterogeneity, s.runs),
        None => {
            let mut metas: Vec<RunMeta> = Vec::new();
            let mut seeds: BTreeMap<(String, String), Vec<u64>> = BTreeMap::new();
            for s in &series {
                let key = (s.run_id.clone(), format!("{:?}", s.algorithm));
                seeds.entry(key.clone()).or_default().push(s.seed);
                if !metas.iter().any(|m| m.run_id == s.run_id && m.algorithm == s.algorithm) {
                    metas.push(RunMeta {
                        run_id: s.run_id.clone(),
                        algorithm: s.algorithm,
                        n: s.points.first().map_or(0, |p| p.1.len()),
                        delta_env_param: f64::NAN,
                        delta_obj_param: f64::NAN,
                        seeds: Vec::new(),
                        centers: Vec::new(),
                        summary_window: 10,
                        error: None,
                    });
                }
            }
            for m in &mut metas {
                m.seeds = seeds[&(m.run_id.clone(), format!("{:?}", m.algorithm))].clone();
                m.centers = vec![0; m.seeds.len()];
            }
            (serde_json::Value::Null, Vec::new(), metas)
        }
    };
    Ok(summarize(config, heterogeneity, metas, &series))
}

/// Runs `f` on a dedicated pool with `threads` workers (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Generates the instance a run would use for `seed`.
pub fn instance_for_seed(cfg: &RunConfig, seed: u64) -> Result<Instance> {
    generate_instance(&cfg.instance_for(seed))
}
