//! Invariant suite behind `pcl validate`.
//!
//! Each check is deterministic for a given seed and reports a one-line
//! detail string. The quick profile shrinks sample sizes so the whole suite
//! runs in seconds; the defaults are chosen so both profiles pass.

use rayon::prelude::*;

use crate::algorithms::{draw_batch, local_direction, LearnerState, RhoSource};
use crate::environments::{density_ratios, observe, sample_state, State};
use crate::error::Result;
use crate::metrics::estimate_nu;
use crate::model::{generate_instance, Environment, Family, Instance, InstanceConfig, Party, ReferenceMode};
use crate::noise::{MultiplicativeFamily, PsdFamily};
use crate::numerics::{self, axpy, solve_linear, Matrix, Vector};
use crate::schedules::{diminishing_step, tail_weights, theory_constant_raw, StepSchedule};
use crate::seeding;
use crate::tdapp;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckResult {
            name,
            passed,
            detail,
        }
    }
}

/// Sample sizes for one profile.
#[derive(Debug, Clone, Copy)]
pub struct Profile {
    pub rho_states: usize,
    pub correction_instances: usize,
    pub correction_states: usize,
    pub correction_samples: usize,
    pub nu_samples: usize,
    pub oracle_instances: usize,
    pub oracle_samples: usize,
    pub schedule_triples: usize,
}

impl Profile {
    pub fn full() -> Self {
        Profile {
            rho_states: 10_000,
            correction_instances: 3,
            correction_states: 5,
            correction_samples: 100_000,
            nu_samples: 20_000,
            oracle_instances: 10,
            oracle_samples: 5000,
            schedule_triples: 100,
        }
    }

    pub fn quick() -> Self {
        Profile {
            rho_states: 1000,
            correction_instances: 1,
            correction_states: 2,
            correction_samples: 20_000,
            nu_samples: 10_000,
            oracle_instances: 3,
            oracle_samples: 5000,
            schedule_triples: 100,
        }
    }
}

fn small_config(family: Family, delta: f64, seed: u64) -> InstanceConfig {
    InstanceConfig {
        n: 4,
        d: 3,
        family,
        delta_env_param: delta,
        delta_obj_param: delta,
        tabular_size: 12,
        seed,
        ..InstanceConfig::default()
    }
}

/// Extremes of `ρ^i` and the largest pointwise deviation of `mean_i ρ^i`
/// from 1, over `per_agent` states drawn from every agent.
#[derive(Debug, Clone, Copy)]
pub struct RhoLaws {
    pub min: f64,
    pub max: f64,
    pub max_mean_dev: f64,
}

pub fn rho_laws(inst: &Instance, per_agent: usize, seed: u64) -> RhoLaws {
    let mut out = RhoLaws {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        max_mean_dev: 0.0,
    };
    let n = inst.n();
    for i in 0..n {
        let mut rng = seeding::stream(seed, "validate-rho", &[i as u64]);
        for _ in 0..per_agent {
            let s = sample_state(inst, i, &mut rng);
            let r = density_ratios(inst, &s);
            for &v in &r {
                out.min = out.min.min(v);
                out.max = out.max.max(v);
            }
            let mean = r.iter().sum::<f64>() / n as f64;
            out.max_mean_dev = out.max_mean_dev.max((mean - 1.0).abs());
        }
    }
    out
}

fn check_rho(p: &Profile) -> Result<CheckResult> {
    let mut worst = String::new();
    let mut passed = true;
    for family in [Family::Gaussian, Family::Tabular] {
        let inst = generate_instance(&small_config(family, 0.5, 11))?;
        let laws = rho_laws(&inst, p.rho_states, 1);
        let ok = laws.min >= 0.0
            && laws.max <= inst.n() as f64 + 1e-9
            && laws.max_mean_dev <= 1e-9;
        passed &= ok;
        worst.push_str(&format!(
            "{}: range [{:.3e}, {:.4}] mean dev {:.1e}; ",
            family.name(),
            laws.min,
            laws.max,
            laws.max_mean_dev
        ));
    }
    Ok(CheckResult::new("rho_bounds", passed, worst.trim_end_matches("; ").into()))
}

/// Largest per-coordinate z-score of the sample mean of the full scheme's
/// local direction `g̃^i` against `Ā^i x^i − b̄^i`, at a frozen state with
/// exact ratios. Rounds `0..samples` of `seed` supply the draws.
pub fn correction_max_z(inst: &Instance, state: &LearnerState, samples: usize, seed: u64) -> Result<f64> {
    let n = inst.n();
    let d = inst.d();
    let chunks = 16usize;
    let per = samples.div_ceil(chunks);
    let partial = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sum = vec![vec![0.0; d]; n];
            let mut sum_sq = vec![vec![0.0; d]; n];
            let mut count = 0usize;
            for t in c * per..((c + 1) * per).min(samples) {
                let batch = draw_batch(inst, seed, t, RhoSource::Exact);
                for i in 0..n {
                    let g = local_direction(i, &batch, state)?;
                    for k in 0..d {
                        sum[i][k] += g[k];
                        sum_sq[i][k] += g[k] * g[k];
                    }
                }
                count += 1;
            }
            Ok((sum, sum_sq, count))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sum = vec![vec![0.0; d]; n];
    let mut sum_sq = vec![vec![0.0; d]; n];
    let mut count = 0usize;
    for (s, q, c) in partial {
        for i in 0..n {
            axpy(&mut sum[i], 1.0, &s[i]);
            axpy(&mut sum_sq[i], 1.0, &q[i]);
        }
        count += c;
    }
    let m = count as f64;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut target = inst.abar[i].matvec(&state.x[i]);
        axpy(&mut target, -1.0, &inst.bbar[i]);
        for k in 0..d {
            let mean = sum[i][k] / m;
            let var = (sum_sq[i][k] / m - mean * mean).max(0.0) * m / (m - 1.0);
            let se = (var / m).sqrt();
            let gap = (mean - target[k]).abs();
            let z = if se > 0.0 {
                gap / se
            } else if gap <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z);
        }
    }
    Ok(worst)
}

/// A frozen state with `N(0, 1)` decision variables and `θ_c = θ^c_*`.
pub fn frozen_state(inst: &Instance, seed: u64, index: u64) -> LearnerState {
    let mut rng = seeding::stream(seed, "frozen", &[index]);
    let d = inst.d();
    let mut state = LearnerState::zeros(inst.n(), d);
    for x in state.x.iter_mut() {
        *x = crate::model::standard_normal_vector(d, &mut rng);
    }
    state.x_c = crate::model::standard_normal_vector(d, &mut rng);
    state.theta_c = inst.theta_star_c.clone();
    state
}

fn check_correction(p: &Profile) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for k in 0..p.correction_instances {
        let inst = generate_instance(&small_config(Family::Gaussian, 0.3, 100 + k as u64))?;
        for s in 0..p.correction_states {
            let state = frozen_state(&inst, 5, s as u64);
            let z = correction_max_z(&inst, &state, p.correction_samples, 7 + s as u64)?;
            worst = worst.max(z);
        }
    }
    Ok(CheckResult::new(
        "correction_unbiasedness",
        worst <= 4.0,
        format!("max z-score {worst:.2} (limit 4)"),
    ))
}

fn check_nu(p: &Profile) -> Result<Vec<CheckResult>> {
    let psd = estimate_nu(&PsdFamily::random(2, 2, 3), p.nu_samples, 1)?;
    let mult = estimate_nu(&MultiplicativeFamily::random(3, 3, 0.5, 4), p.nu_samples, 1)?;
    let mrp = tdapp::generate_mrp(3, 6, 3, 0.9, 0.2, 0.2, 5)?;
    let cfg = InstanceConfig {
        n: 3,
        d: 3,
        family: Family::Mrp,
        tabular_size: 6,
        gamma: 0.9,
        delta_env_param: 0.2,
        delta_obj_param: 0.2,
        seed: 5,
        ..InstanceConfig::default()
    };
    let td = estimate_nu(&tdapp::to_instance(&mrp, &cfg)?, p.nu_samples, 1)?;
    Ok(vec![
        CheckResult::new(
            "nu_psd",
            (psd.value - 1.0).abs() <= 3.0 * psd.se,
            format!("nu {:.4} se {:.4} (target 1)", psd.value, psd.se),
        ),
        CheckResult::new(
            "nu_multiplicative",
            mult.value <= 1.5 + 3.0 * mult.se,
            format!("nu {:.4} se {:.4} (bound 1.5)", mult.value, mult.se),
        ),
        CheckResult::new(
            "nu_td",
            td.value <= 19.0 + 3.0 * td.se,
            format!("nu {:.4} se {:.4} (bound 19)", td.value, td.se),
        ),
    ])
}

/// `Σ_s μ(s) A(s)` and `Σ_s μ(s) b(s)` by enumeration, solved.
pub fn enumerated_solution(inst: &Instance, party: Party) -> Option<Result<Vector>> {
    let Environment::Finite(f) = &inst.env else {
        return None;
    };
    let d = inst.d();
    let agents: Vec<usize> = match party {
        Party::Center => (0..inst.n()).collect(),
        Party::Agent(i) => vec![i],
    };
    let mut a = Matrix::zeros(d, d);
    let mut b = vec![0.0; d];
    for &i in &agents {
        let w = 1.0 / agents.len() as f64;
        for (k, &mass) in f.probs[i].iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let obs = observe(inst, i, State::Index(k));
            a.add_scaled(w * mass, &obs.a);
            axpy(&mut b, w * mass, &obs.b);
        }
    }
    Some(solve_linear(&a, &b))
}

fn relative_error(approx: &[f64], exact: &[f64]) -> f64 {
    numerics::dist_sq(approx, exact).sqrt() / numerics::norm(exact).max(1e-300)
}

/// Worst relative error of sampled reference solutions over all agents and
/// the central system.
pub fn oracle_gap(inst: &Instance, samples: usize, seed: u64) -> Result<f64> {
    let mode = ReferenceMode::MonteCarlo { samples };
    let parties: Vec<Party> = std::iter::once(Party::Center)
        .chain((0..inst.n()).map(Party::Agent))
        .collect();
    let mut worst: f64 = 0.0;
    for p in parties {
        let mc = inst.reference_solution(p, mode, seed)?;
        worst = worst.max(relative_error(&mc, inst.solution(p)));
    }
    Ok(worst)
}

fn check_oracle(p: &Profile) -> Result<Vec<CheckResult>> {
    let gaps = (0..p.oracle_instances)
        .into_par_iter()
        .map(|k| {
            let inst = generate_instance(&small_config(Family::Gaussian, 0.3, 200 + k as u64))?;
            oracle_gap(&inst, p.oracle_samples, 9)
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    let mut exact_worst: f64 = 0.0;
    for k in 0..p.oracle_instances {
        let inst = generate_instance(&small_config(Family::Tabular, 0.3, 300 + k as u64))?;
        let parties = std::iter::once(Party::Center).chain((0..inst.n()).map(Party::Agent));
        for party in parties {
            let enumerated = enumerated_solution(&inst, party).expect("finite family")?;
            exact_worst = exact_worst.max(relative_error(&enumerated, inst.solution(party)));
        }
    }
    Ok(vec![
        CheckResult::new(
            "oracle_equivalence",
            worst <= 0.05,
            format!("worst sampled relative error {worst:.4} (limit 0.05)"),
        ),
        CheckResult::new(
            "oracle_tabular_exact",
            exact_worst <= 1e-10,
            format!("worst enumerated relative error {exact_worst:.2e} (limit 1e-10)"),
        ),
    ])
}

/// Largest deviation between schedule values and their closed forms over
/// `triples` random `(τ, t0, λ)`, plus the largest `|Σ w − 1|` of the tail
/// weights.
pub fn schedule_deviation(triples: usize, seed: u64) -> Result<(f64, f64)> {
    use rand::Rng;
    let mut rng = seeding::stream(seed, "validate-schedule", &[]);
    let mut value_dev: f64 = 0.0;
    let mut sum_dev: f64 = 0.0;
    for _ in 0..triples {
        let tau = rng.random_range(0..10_000usize);
        let t0 = rng.random_range(1..100usize);
        let lambda = rng.random_range(0.01..10.0);
        let dim = StepSchedule::Diminishing { t0 }.step_size(tau, lambda)?;
        let closed = 4.0 / ((tau + t0 + 1) as f64 * lambda);
        value_dev = value_dev.max((dim - closed).abs()).max((diminishing_step(tau, t0, lambda) - closed).abs());
        let horizon = (tau + 2) as f64;
        let theory = StepSchedule::TheoryConstant { horizon }.step_size(tau, lambda)?;
        value_dev = value_dev
            .max((theory - horizon.ln() / (lambda * horizon)).abs())
            .max((theory_constant_raw(horizon, lambda) - theory).abs());
        let w = tail_weights(tau + 1, t0)?;
        sum_dev = sum_dev.max((w.iter().sum::<f64>() - 1.0).abs());
    }
    Ok((value_dev, sum_dev))
}

fn check_schedules(p: &Profile) -> Result<CheckResult> {
    let (value_dev, sum_dev) = schedule_deviation(p.schedule_triples, 13)?;
    Ok(CheckResult::new(
        "schedule_algebra",
        value_dev <= 1e-12 && sum_dev == 0.0,
        format!("max value deviation {value_dev:.1e}, max |sum w - 1| {sum_dev:.1e}"),
    ))
}

/// Residuals of the expected systems at the stored solutions.
fn check_stationarity() -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for family in [Family::Gaussian, Family::Tabular] {
        let inst = generate_instance(&small_config(family, 0.4, 17))?;
        let scale = 1.0 + numerics::norm(&inst.bbar0);
        for i in 0..inst.n() {
            let r = numerics::sub(&inst.abar[i].matvec(&inst.x_star[i]), &inst.bbar[i]);
            worst = worst.max(numerics::norm(&r) / scale);
        }
        let central = numerics::sub(&inst.abar0.matvec(&inst.x_star_c), &inst.bbar0);
        let objective = numerics::sub(&inst.phibar0.matvec(&inst.theta_star_c), &inst.bbar0);
        worst = worst
            .max(numerics::norm(&central) / scale)
            .max(numerics::norm(&objective) / scale);
    }
    Ok(CheckResult::new(
        "fixed_point_stationarity",
        worst <= 1e-10,
        format!("max scaled residual {worst:.2e}"),
    ))
}

fn failure(name: &'static str, err: crate::Error) -> CheckResult {
    CheckResult::new(name, false, format!("error: {err}"))
}

/// Runs every check. Errors inside a check count as failures.
pub fn run_suite(profile: &Profile) -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.push(check_rho(profile).unwrap_or_else(|e| failure("rho_bounds", e)));
    out.push(check_correction(profile).unwrap_or_else(|e| failure("correction_unbiasedness", e)));
    match check_nu(profile) {
        Ok(v) => out.extend(v),
        Err(e) => out.push(failure("nu", e)),
    }
    match check_oracle(profile) {
        Ok(v) => out.extend(v),
        Err(e) => out.push(failure("oracle_equivalence", e)),
    }
    out.push(check_schedules(profile).unwrap_or_else(|e| failure("schedule_algebra", e)));
    out.push(check_stationarity().unwrap_or_else(|e| failure("fixed_point_stationarity", e)));
    out
}
