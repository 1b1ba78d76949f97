//! Heterogeneity scores, the stochastic condition number and per-round
//! error records.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{AlgorithmId, TrajectoryPoint};
use crate::environments::{observe, sample_state, tv_distance, tv_to_center_mc};
use crate::error::{Error, Result};
use crate::model::{Instance, Party};
use crate::numerics::{inverse, norm, psd_sqrt, sub, Matrix};
use crate::seeding;

pub const DEFAULT_NU_SAMPLES: usize = 2000;

/// Anything that can produce samples of `A(s)` per agent together with the
/// exact mean `Ā^i`.
pub trait NoiseModel: Sync {
    fn agents(&self) -> usize;
    fn dim(&self) -> usize;
    fn sample_a(&self, agent: usize, rng: &mut ChaCha8Rng) -> Matrix;
    fn mean_a(&self, agent: usize) -> Matrix;
}

impl NoiseModel for Instance {
    fn agents(&self) -> usize {
        self.n()
    }

    fn dim(&self) -> usize {
        self.d()
    }

    fn sample_a(&self, agent: usize, rng: &mut ChaCha8Rng) -> Matrix {
        observe(self, agent, sample_state(self, agent, rng)).a
    }

    fn mean_a(&self, agent: usize) -> Matrix {
        self.abar[agent].clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuEstimate {
    pub value: f64,
    pub se: f64,
    /// `(estimate, standard error)` per agent.
    pub per_agent: Vec<(f64, f64)>,
}

/// `ν = max_i ‖D̄^i (Ā^i)^{-1}‖` with `D(s) = sqrt(A(s)ᵀ A(s))`.
///
/// `D̄^i` is a sample mean over `samples` draws; `Ā^i` is exact. The
/// standard error is the leave-one-out jackknife of the maximizing agent.
pub fn estimate_nu(model: &dyn NoiseModel, samples: usize, seed: u64) -> Result<NuEstimate> {
    if samples < 2 {
        return Err(Error::InvalidConfig("estimate_nu needs at least 2 samples".into()));
    }
    let per_agent = (0..model.agents())
        .into_par_iter()
        .map(|i| agent_nu(model, i, samples, seed))
        .collect::<Result<Vec<_>>>()?;
    let (value, se) = per_agent
        .iter()
        .fold((f64::NEG_INFINITY, 0.0), |best, &cur| if cur.0 > best.0 { cur } else { best });
    Ok(NuEstimate {
        value,
        se,
        per_agent,
    })
}

fn agent_nu(model: &dyn NoiseModel, i: usize, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let d = model.dim();
    let a_inv = inverse(&model.mean_a(i))?;
    let mut rng = seeding::stream(seed, "nu", &[i as u64]);
    let mut terms = Vec::with_capacity(samples);
    let mut total = Matrix::zeros(d, d);
    for _ in 0..samples {
        let a = model.sample_a(i, &mut rng);
        let ata = a.transpose().matmul(&a).sym_part();
        let e = psd_sqrt(&ata)?.matmul(&a_inv);
        total.add_scaled(1.0, &e);
        terms.push(e);
    }
    let m = samples as f64;
    let value = total.scale(1.0 / m).operator_norm();
    let loo: Vec<f64> = terms
        .iter()
        .map(|e| total.sub(e).scale(1.0 / (m - 1.0)).operator_norm())
        .collect();
    let loo_mean = loo.iter().sum::<f64>() / m;
    let ss: f64 = loo.iter().map(|v| (v - loo_mean) * (v - loo_mean)).sum();
    Ok((value, ((m - 1.0) / m * ss).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub delta_env: f64,
    pub delta_obj: f64,
    pub delta_cen: Vec<f64>,
    pub nu_hat: f64,
    pub nu_se: f64,
    pub effective_env: f64,
    pub effective_obj: f64,
    pub effective_cen: Vec<f64>,
    /// `max(max_i ‖θ^i_*‖, ‖θ^c_*‖)`.
    pub g_b: f64,
    /// `max(max_i ‖b̄^i‖, ‖b̄^0‖)`, the normalizer of the objective part of
    /// `delta_cen`.
    pub b_norm: f64,
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).min(1.0)
    } else {
        0.0
    }
}

/// `max_{i,j} ‖θ^i − θ^j‖ / (2 G_b)` and `G_b`.
pub fn objective_heterogeneity(inst: &Instance) -> (f64, f64) {
    let g_b = inst
        .theta_star
        .iter()
        .map(|t| norm(t))
        .fold(norm(&inst.theta_star_c), f64::max);
    let mut widest: f64 = 0.0;
    for (i, a) in inst.theta_star.iter().enumerate() {
        for b in &inst.theta_star[i + 1..] {
            widest = widest.max(norm(&sub(a, b)));
        }
    }
    (ratio_or_zero(widest, 2.0 * g_b), g_b)
}

pub fn environment_heterogeneity(inst: &Instance) -> f64 {
    let n = inst.n();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max(tv_distance(inst, Party::Agent(i), Party::Agent(j)));
        }
    }
    worst
}

/// Per-agent distance to the virtual central agent,
/// `max{‖μ^i − μ^0‖_TV, ‖b̄^i − b̄^0‖ / (2 B)}`. Gaussian total variation to
/// the mixture is estimated from `samples` draws.
pub fn centrality_scores(inst: &Instance, samples: usize, seed: u64) -> (Vec<f64>, f64) {
    let b_norm = inst
        .bbar
        .iter()
        .map(|b| norm(b))
        .fold(norm(&inst.bbar0), f64::max);
    let scores = (0..inst.n())
        .map(|i| {
            let tv = if inst.n() == 1 {
                0.0
            } else {
                tv_to_center_mc(inst, i, samples, seed).0
            };
            let obj = ratio_or_zero(norm(&sub(&inst.bbar[i], &inst.bbar0)), 2.0 * b_norm);
            tv.max(obj).clamp(0.0, 1.0)
        })
        .collect();
    (scores, b_norm)
}

pub fn heterogeneity_report(inst: &Instance, nu_samples: usize) -> Result<HeterogeneityReport> {
    if nu_samples < 100 {
        return Err(Error::InvalidConfig(format!(
            "nu_samples must be at least 100, got {nu_samples}"
        )));
    }
    let seed = inst.config.seed;
    let (delta_obj, g_b) = objective_heterogeneity(inst);
    let delta_env = environment_heterogeneity(inst);
    let (delta_cen, b_norm) = centrality_scores(inst, nu_samples, seed);
    let nu = estimate_nu(inst, nu_samples, seed)?;
    Ok(effective_heterogeneity(HeterogeneityReport {
        delta_env,
        delta_obj,
        delta_cen,
        nu_hat: nu.value,
        nu_se: nu.se,
        effective_env: 0.0,
        effective_obj: 0.0,
        effective_cen: Vec::new(),
        g_b,
        b_norm,
    }))
}

/// Fills the effective fields with `min(1, ν̂ · raw)`.
pub fn effective_heterogeneity(mut report: HeterogeneityReport) -> HeterogeneityReport {
    let nu = report.nu_hat;
    let eff = |raw: f64| (nu * raw).min(1.0);
    report.effective_env = eff(report.delta_env);
    report.effective_obj = eff(report.delta_obj);
    report.effective_cen = report.delta_cen.iter().map(|&r| eff(r)).collect();
    report
}

/// Index of the smallest value, lowest index on ties.
pub fn argmin_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

pub fn center_agent(report: &HeterogeneityReport) -> usize {
    argmin_lowest(&report.delta_cen)
}

/// Errors of one run at one recorded round.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub algorithm: AlgorithmId,
    pub t: usize,
    pub per_agent: Vec<f64>,
    pub mse0: f64,
    pub center_agent: usize,
    pub center_error: f64,
    pub theta_c_error: f64,
}

impl MetricsRecord {
    pub fn new(
        run_id: &str,
        seed: u64,
        algorithm: AlgorithmId,
        point: &TrajectoryPoint,
        center_agent: usize,
    ) -> Self {
        MetricsRecord {
            run_id: run_id.to_string(),
            seed,
            algorithm,
            t: point.t,
            per_agent: point.agent_sq_errors.clone(),
            mse0: point.mse0(),
            center_agent,
            center_error: point.agent_sq_errors[center_agent],
            theta_c_error: point.theta_sq_error,
        }
    }

    /// Mean error over every agent except the center.
    pub fn generic_error(&self) -> f64 {
        generic_mean(&self.per_agent, self.center_agent)
    }
}

pub fn generic_mean(per_agent: &[f64], center: usize) -> f64 {
    if per_agent.len() < 2 {
        return per_agent.first().copied().unwrap_or(f64::NAN);
    }
    let total: f64 = per_agent
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != center)
        .map(|(_, v)| v)
        .sum();
    total / (per_agent.len() - 1) as f64
}
