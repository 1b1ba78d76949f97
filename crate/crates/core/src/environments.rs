//! State sampling, observations, density ratios, total variation and
//! coupled sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use libm::erf;

use crate::error::{Error, Result};
use crate::model::{Environment, FiniteEnv, Instance, Party};
use crate::numerics::{self, Matrix, Vector};
use crate::seeding;

/// Monte Carlo budget for total variation without a closed form.
pub const TV_MC_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Point(Vector),
    Index(usize),
}

impl State {
    pub fn index(&self) -> Option<usize> {
        match self {
            State::Index(k) => Some(*k),
            State::Point(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub agent: usize,
    pub state: State,
    pub a: Matrix,
    pub b: Vector,
    pub phi: Matrix,
    pub psi: Option<Vector>,
}

/// Draws one state from agent `agent`'s environment.
pub fn sample_state(inst: &Instance, agent: usize, rng: &mut ChaCha8Rng) -> State {
    match &inst.env {
        Environment::Gaussian(g) => State::Point(
            g.means[agent]
                .iter()
                .map(|m| m + rng.sample::<f64, _>(StandardNormal))
                .collect(),
        ),
        Environment::Finite(f) => State::Index(sample_index(&f.probs[agent], rng)),
    }
}

/// Inverse-CDF categorical draw. Zero-mass entries are never returned.
pub fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

/// `(I + ε s sᵀ) base`, computed as `base + ε s (sᵀ base)`.
pub fn multiplicative(base: &Matrix, eps: f64, s: &[f64]) -> Matrix {
    let mut out = base.clone();
    if eps != 0.0 {
        let row = base.tr_matvec(s);
        out.add_scaled(eps, &Matrix::outer(s, &row));
    }
    out
}

pub fn observe(inst: &Instance, agent: usize, state: State) -> Observation {
    match (&inst.env, &state) {
        (Environment::Gaussian(g), State::Point(s)) => {
            let a = multiplicative(&g.a_base, g.eps_a, s);
            let phi = multiplicative(&g.phi_base, g.eps_b, s);
            let b = phi.matvec(&inst.theta_star[agent]);
            Observation {
                agent,
                state,
                a,
                b,
                phi,
                psi: None,
            }
        }
        (Environment::Finite(f), State::Index(k)) => {
            let k = *k;
            let mut psi = vec![0.0; f.states()];
            psi[k] = 1.0;
            Observation {
                agent,
                a: f.a[k].clone(),
                b: f.b[agent][k].clone(),
                phi: f.phi[k].clone(),
                psi: Some(psi),
                state,
            }
        }
        _ => panic!("state does not belong to this instance's family"),
    }
}

/// `ρ^i(s) = μ^i(s) / μ^0(s)` for every agent at once.
pub fn density_ratios(inst: &Instance, state: &State) -> Vec<f64> {
    let n = inst.n();
    match (&inst.env, state) {
        (Environment::Gaussian(g), State::Point(s)) => {
            let logs: Vec<f64> = g
                .means
                .iter()
                .map(|m| -0.5 * numerics::dist_sq(s, m))
                .collect();
            let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
            let log_mix = lse - (n as f64).ln();
            logs.iter().map(|l| (l - log_mix).exp().min(n as f64)).collect()
        }
        (Environment::Finite(f), State::Index(k)) => finite_ratios(f, *k),
        _ => panic!("state does not belong to this instance's family"),
    }
}

fn finite_ratios(f: &FiniteEnv, k: usize) -> Vec<f64> {
    let mix = f.mixture[k];
    f.probs
        .iter()
        .map(|p| if mix == 0.0 { 0.0 } else { p[k] / mix })
        .collect()
}

pub fn density_ratio(inst: &Instance, agent: usize, state: &State) -> f64 {
    density_ratios(inst, state)[agent]
}

fn party_probs(f: &FiniteEnv, p: Party) -> &Vector {
    match p {
        Party::Center => &f.mixture,
        Party::Agent(i) => &f.probs[i],
    }
}

pub fn half_l1(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Equal-covariance Gaussian total variation, `2 Φ(‖Δm‖/2) − 1 = erf(‖Δm‖/(2√2))`.
pub fn gaussian_tv(m1: &[f64], m2: &[f64]) -> f64 {
    let gap = numerics::dist_sq(m1, m2).sqrt();
    if gap == 0.0 {
        return 0.0;
    }
    erf(gap / (2.0 * std::f64::consts::SQRT_2)).clamp(0.0, 1.0)
}

/// Total variation between two parties' state distributions.
///
/// Gaussian agent pairs use the closed form. A Gaussian agent against the
/// mixture has none, so it falls back to [`tv_to_center_mc`] with
/// [`TV_MC_SAMPLES`] draws from a stream derived from the instance seed.
pub fn tv_distance(inst: &Instance, p: Party, q: Party) -> f64 {
    if p == q {
        return 0.0;
    }
    match &inst.env {
        Environment::Finite(f) => half_l1(party_probs(f, p), party_probs(f, q)),
        Environment::Gaussian(g) => match (p, q) {
            (Party::Agent(i), Party::Agent(j)) => gaussian_tv(&g.means[i], &g.means[j]),
            (Party::Agent(i), Party::Center) | (Party::Center, Party::Agent(i)) => {
                tv_to_center_mc(inst, i, TV_MC_SAMPLES, inst.config.seed).0
            }
            (Party::Center, Party::Center) => 0.0,
        },
    }
}

/// `‖μ^i − μ^0‖_TV = E_{μ^i}[(1 − 1/ρ^i)_+]`, estimated by sampling.
/// Returns the estimate and its standard error. Finite families are
/// returned exactly with zero error.
pub fn tv_to_center_mc(inst: &Instance, agent: usize, samples: usize, seed: u64) -> (f64, f64) {
    if let Environment::Finite(f) = &inst.env {
        return (half_l1(&f.probs[agent], &f.mixture), 0.0);
    }
    let mut rng = seeding::stream(seed, "tv-center", &[agent as u64]);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let s = sample_state(inst, agent, &mut rng);
        let rho = density_ratio(inst, agent, &s);
        let v = if rho > 0.0 { (1.0 - 1.0 / rho).max(0.0) } else { 0.0 };
        sum += v;
        sum_sq += v * v;
    }
    let m = samples as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0);
    (mean.clamp(0.0, 1.0), (var / m).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoupledDraw {
    pub state_i: usize,
    pub state_0: usize,
    pub coupled: bool,
}

/// Maximal coupling of `μ^i` and `μ^0`: with probability `1 − TV` both
/// states come from the normalized overlap, otherwise each comes from its
/// own normalized residual.
pub fn coupled_sample(inst: &Instance, agent: usize, rng: &mut ChaCha8Rng) -> Result<CoupledDraw> {
    let f = inst.finite().ok_or(Error::UnsupportedFamily {
        operation: "coupled_sample",
        family: inst.family_name(),
    })?;
    let p = &f.probs[agent];
    let q = &f.mixture;
    let common: Vec<f64> = p.iter().zip(q).map(|(a, b)| a.min(*b)).collect();
    let overlap: f64 = common.iter().sum();
    if rng.random::<f64>() < overlap {
        let s = sample_index(&common, rng);
        return Ok(CoupledDraw {
            state_i: s,
            state_0: s,
            coupled: true,
        });
    }
    let res_p: Vec<f64> = p.iter().zip(&common).map(|(a, c)| (a - c).max(0.0)).collect();
    let res_q: Vec<f64> = q.iter().zip(&common).map(|(a, c)| (a - c).max(0.0)).collect();
    let state_i = sample_index(&res_p, rng);
    let state_0 = sample_index(&res_q, rng);
    Ok(CoupledDraw {
        state_i,
        state_0,
        coupled: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        generate_gaussian_instance, generate_tabular_instance, Family, InstanceConfig,
    };

    pub(crate) fn two_state(p1: [f64; 2], p2: [f64; 2]) -> Instance {
        let cfg = InstanceConfig {
            n: 2,
            d: 1,
            family: Family::Tabular,
            tabular_size: 2,
            ..InstanceConfig::default()
        };
        let a = vec![Matrix::from_diag(&[1.0]), Matrix::from_diag(&[2.0])];
        let b = vec![vec![vec![1.0], vec![1.0]], vec![vec![2.0], vec![2.0]]];
        Instance::from_finite_parts(
            cfg,
            vec![p1.to_vec(), p2.to_vec()],
            a.clone(),
            a,
            b,
            None,
        )
        .unwrap()
    }

    #[test]
    fn observation_arithmetic() {
        let m = multiplicative(&Matrix::from_diag(&[3.0]), 1.0, &[2.0]);
        assert_eq!(m[(0, 0)], 15.0);
        let m = multiplicative(&Matrix::from_diag(&[3.0]), 0.0, &[2.0]);
        assert_eq!(m[(0, 0)], 3.0);
    }

    #[test]
    fn b_equals_phi_theta() {
        let inst = generate_gaussian_instance(&InstanceConfig {
            n: 3,
            d: 3,
            delta_env_param: 0.5,
            delta_obj_param: 0.5,
            ..InstanceConfig::default()
        })
        .unwrap();
        let mut rng = seeding::stream(0, "t", &[]);
        for i in 0..3 {
            let obs = observe(&inst, i, sample_state(&inst, i, &mut rng));
            assert_eq!(obs.b, obs.phi.matvec(&inst.theta_star[i]));
        }
    }

    #[test]
    fn degenerate_distribution_always_same_state() {
        let inst = two_state([1.0, 0.0], [0.5, 0.5]);
        let mut rng = seeding::stream(0, "t", &[]);
        for _ in 0..1000 {
            assert_eq!(sample_state(&inst, 0, &mut rng), State::Index(0));
        }
    }

    #[test]
    fn hand_computed_tabular_ratios() {
        let inst = two_state([0.5, 0.5], [0.25, 0.75]);
        let r = density_ratios(&inst, &State::Index(0));
        assert!((r[0] - 4.0 / 3.0).abs() < 1e-15);
        for k in 0..2 {
            let r = density_ratios(&inst, &State::Index(k));
            assert!(((r[0] + r[1]) / 2.0 - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_over_zero_is_zero() {
        let inst = two_state([1.0, 0.0], [1.0, 0.0]);
        assert_eq!(density_ratios(&inst, &State::Index(1)), vec![0.0, 0.0]);
    }

    #[test]
    fn tv_examples() {
        let inst = two_state([1.0, 0.0], [0.0, 1.0]);
        assert_eq!(tv_distance(&inst, Party::Agent(0), Party::Agent(1)), 1.0);
        assert_eq!(tv_distance(&inst, Party::Agent(0), Party::Agent(0)), 0.0);
        let got = gaussian_tv(&[0.0], &[2.0]);
        assert!((got - 0.682_689_492_137_085_9).abs() < 1e-12, "{got}");
    }

    #[test]
    fn gaussian_tv_matches_quadrature() {
        // Trapezoid rule on half the absolute density difference.
        let pdf = |x: f64, m: f64| (-(x - m) * (x - m) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        for gap in [0.3, 1.0, 2.0, 4.5] {
            let (lo, hi, steps) = (-12.0, 12.0 + gap, 200_000);
            let h = (hi - lo) / steps as f64;
            let mut acc = 0.0;
            for k in 0..=steps {
                let x = lo + k as f64 * h;
                let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
                acc += w * (pdf(x, 0.0) - pdf(x, gap)).abs();
            }
            let oracle = 0.5 * acc * h;
            assert!((gaussian_tv(&[0.0], &[gap]) - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn coupling_extremes() {
        let same = two_state([0.3, 0.7], [0.3, 0.7]);
        let disjoint = two_state([1.0, 0.0], [0.0, 1.0]);
        let mut rng = seeding::stream(0, "t", &[]);
        for _ in 0..500 {
            let d = coupled_sample(&same, 0, &mut rng).unwrap();
            assert!(d.coupled && d.state_i == d.state_0);
            // Agent 0 sits on state 0 while the mixture splits evenly, so
            // the draw couples only when the mixture also lands on 0.
            let d = coupled_sample(&disjoint, 0, &mut rng).unwrap();
            assert_eq!(d.state_i, 0);
            assert_eq!(d.coupled, d.state_0 == 0);
        }
    }

    #[test]
    fn coupling_frequency_matches_tv() {
        let inst = generate_tabular_instance(&InstanceConfig {
            n: 3,
            d: 2,
            family: Family::Tabular,
            tabular_size: 9,
            delta_env_param: 0.6,
            ..InstanceConfig::default()
        })
        .unwrap();
        let tv = tv_distance(&inst, Party::Agent(1), Party::Center);
        let draws = 100_000;
        let mut rng = seeding::stream(5, "t", &[]);
        let mut hits = 0usize;
        let mut counts_i = vec![0usize; 9];
        for _ in 0..draws {
            let d = coupled_sample(&inst, 1, &mut rng).unwrap();
            hits += d.coupled as usize;
            counts_i[d.state_i] += 1;
        }
        let p = 1.0 - tv;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((hits as f64 / draws as f64 - p).abs() <= 4.0 * se);
        let f = inst.finite().unwrap();
        for (s, &c) in counts_i.iter().enumerate() {
            let q = f.probs[1][s];
            let se = (q * (1.0 - q) / draws as f64).sqrt();
            assert!((c as f64 / draws as f64 - q).abs() <= 4.0 * se + 1e-12);
        }
    }

    #[test]
    fn coupling_rejects_gaussian() {
        let inst = generate_gaussian_instance(&InstanceConfig {
            n: 2,
            d: 2,
            ..InstanceConfig::default()
        })
        .unwrap();
        let mut rng = seeding::stream(0, "t", &[]);
        assert!(matches!(
            coupled_sample(&inst, 0, &mut rng),
            Err(Error::UnsupportedFamily { .. })
        ));
    }
}
