//! Personalized TD(0) policy evaluation as a multi-agent linear system.
//!
//! Agent `i` evaluates its own Markov reward process from i.i.d. transitions
//! `(o, o') ~ π^i(o) P^i(o'|o)`. The transition pair is the state of the
//! linear system: `A = φ(o)(φ(o) − γ φ(o'))ᵀ`, `b^i = φ(o) R^i(o, o')`.
//! The objective features are `Φ(o, o') = φ(o) φ(o)ᵀ`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::environments::{Observation, State};
use crate::error::{Error, Result};
use crate::model::{random_unit, standard_normal_vector, Family, Instance, InstanceConfig};
use crate::numerics::{self, solve_linear, Matrix, Vector};
use crate::seeding;

const MAX_ATTEMPTS: usize = 20;

#[derive(Debug, Clone)]
pub struct MrpInstance {
    pub n: usize,
    pub states: usize,
    pub d: usize,
    pub gamma: f64,
    /// Row-stochastic transition matrices, one per agent.
    pub p: Vec<Matrix>,
    /// Rewards `R^i(o, o')` as `states × states` matrices.
    pub r: Vec<Matrix>,
    /// `φ(o)` with `‖φ(o)‖ = 1`.
    pub phi: Vec<Vector>,
    pub pi: Vec<Vector>,
}

fn random_stochastic(states: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = Matrix::zeros(states, states);
    for o in 0..states {
        let row: Vec<f64> = (0..states).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = row.iter().sum();
        for (k, v) in row.into_iter().enumerate() {
            m[(o, k)] = v / total;
        }
    }
    m
}

/// Solves `π P = π`, `Σ π = 1`.
pub fn stationary_distribution(p: &Matrix) -> Result<Vector> {
    let s = p.rows();
    let mut m = p.transpose().sub(&Matrix::identity(s));
    for c in 0..s {
        m[(s - 1, c)] = 1.0;
    }
    let mut rhs = vec![0.0; s];
    rhs[s - 1] = 1.0;
    let pi = solve_linear(&m, &rhs)?;
    if pi.iter().any(|&v| v < -1e-12 || !v.is_finite()) {
        return Err(Error::GenerationFailed {
            attempts: 1,
            reason: "stationary distribution has negative mass".into(),
        });
    }
    Ok(pi.into_iter().map(|v| v.max(0.0)).collect())
}

/// Random MRPs sharing features: `P^i = (1 − δ_P) P_base + δ_P P^i_pert`,
/// `R^i = R_base + δ_R E^i` with `‖E^i‖_F = 1`.
pub fn generate_mrp(
    n: usize,
    states: usize,
    d: usize,
    gamma: f64,
    delta_kernel: f64,
    delta_reward: f64,
    seed: u64,
) -> Result<MrpInstance> {
    if states < 2 {
        return Err(Error::InvalidConfig("an MRP needs at least 2 states".into()));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidConfig(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    if d == 0 || d > states {
        return Err(Error::InvalidConfig(format!(
            "feature dimension must lie in [1, {states}], got {d}"
        )));
    }
    if !(0.0..=1.0).contains(&delta_kernel) {
        return Err(Error::InvalidConfig("delta_kernel must lie in [0, 1]".into()));
    }
    let mut last = String::new();
    'attempt: for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seeding::stream(seed, "mrp", &[attempt as u64]);
        let p_base = random_stochastic(states, &mut rng);
        let r_base = Matrix::from_vec(
            states,
            states,
            (0..states * states).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let phi: Vec<Vector> = (0..states).map(|_| random_unit(d, &mut rng)).collect();
        let mut p = Vec::with_capacity(n);
        let mut r = Vec::with_capacity(n);
        let mut pi = Vec::with_capacity(n);
        for _ in 0..n {
            let pert = random_stochastic(states, &mut rng);
            let mut pi_mat = p_base.scale(1.0 - delta_kernel).add(&pert.scale(delta_kernel));
            for o in 0..states {
                let total: f64 = pi_mat.row(o).iter().sum();
                for k in 0..states {
                    pi_mat[(o, k)] /= total;
                }
            }
            let e = standard_normal_vector(states * states, &mut rng);
            let e = numerics::scaled(&e, 1.0 / numerics::norm(&e));
            let mut ri = r_base.clone();
            ri.add_scaled(delta_reward, &Matrix::from_vec(states, states, e));
            match stationary_distribution(&pi_mat) {
                Ok(dist) => pi.push(dist),
                Err(err) => {
                    last = err.to_string();
                    continue 'attempt;
                }
            }
            p.push(pi_mat);
            r.push(ri);
        }
        return Ok(MrpInstance {
            n,
            states,
            d,
            gamma,
            p,
            r,
            phi,
            pi,
        });
    }
    Err(Error::GenerationFailed {
        attempts: MAX_ATTEMPTS,
        reason: last,
    })
}

pub fn generate_mrp_from_config(cfg: &InstanceConfig) -> Result<MrpInstance> {
    cfg.validate()?;
    generate_mrp(
        cfg.n,
        cfg.tabular_size,
        cfg.d,
        cfg.gamma,
        cfg.delta_env_param,
        cfg.delta_obj_param,
        cfg.seed,
    )
}

impl MrpInstance {
    pub fn pair_index(&self, o: usize, o_next: usize) -> usize {
        o * self.states + o_next
    }

    fn bellman_a(&self, o: usize, o_next: usize) -> Matrix {
        let diff = numerics::sub(&self.phi[o], &numerics::scaled(&self.phi[o_next], self.gamma));
        Matrix::outer(&self.phi[o], &diff)
    }
}

pub fn bellman_observation(mrp: &MrpInstance, agent: usize, o: usize, o_next: usize) -> Observation {
    let k = mrp.pair_index(o, o_next);
    let mut psi = vec![0.0; mrp.states * mrp.states];
    psi[k] = 1.0;
    Observation {
        agent,
        state: State::Index(k),
        a: mrp.bellman_a(o, o_next),
        b: numerics::scaled(&mrp.phi[o], mrp.r[agent][(o, o_next)]),
        phi: Matrix::outer(&mrp.phi[o], &mrp.phi[o]),
        psi: Some(psi),
    }
}

/// Solves the expected projected Bellman equation of `agent`.
pub fn td_reference(mrp: &MrpInstance, agent: usize) -> Result<Vector> {
    let (p, r, pi) = (&mrp.p[agent], &mrp.r[agent], &mrp.pi[agent]);
    let d = mrp.d;
    let mut a = Matrix::zeros(d, d);
    let mut b = vec![0.0; d];
    for o in 0..mrp.states {
        let mut next_phi = vec![0.0; d];
        let mut reward = 0.0;
        for o2 in 0..mrp.states {
            numerics::axpy(&mut next_phi, p[(o, o2)], &mrp.phi[o2]);
            reward += p[(o, o2)] * r[(o, o2)];
        }
        let diff = numerics::sub(&mrp.phi[o], &numerics::scaled(&next_phi, mrp.gamma));
        a.add_scaled(pi[o], &Matrix::outer(&mrp.phi[o], &diff));
        numerics::axpy(&mut b, pi[o] * reward, &mrp.phi[o]);
    }
    solve_linear(&a, &b)
}

/// Finite-state instance over transition pairs. `θ^i_*` solves
/// `Φ̄^i θ = b̄^i`.
pub fn to_instance(mrp: &MrpInstance, cfg: &InstanceConfig) -> Result<Instance> {
    let s = mrp.states;
    let mut a = Vec::with_capacity(s * s);
    let mut phi = Vec::with_capacity(s * s);
    for o in 0..s {
        for o2 in 0..s {
            a.push(mrp.bellman_a(o, o2));
            phi.push(Matrix::outer(&mrp.phi[o], &mrp.phi[o]));
        }
    }
    let probs: Vec<Vector> = (0..mrp.n)
        .map(|i| {
            let mut v = Vec::with_capacity(s * s);
            for o in 0..s {
                for o2 in 0..s {
                    v.push(mrp.pi[i][o] * mrp.p[i][(o, o2)]);
                }
            }
            // Absorbs rounding so the table sums to one.
            let total: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= total);
            v
        })
        .collect();
    let b: Vec<Vec<Vector>> = (0..mrp.n)
        .map(|i| {
            let mut row = Vec::with_capacity(s * s);
            for o in 0..s {
                for o2 in 0..s {
                    row.push(numerics::scaled(&mrp.phi[o], mrp.r[i][(o, o2)]));
                }
            }
            row
        })
        .collect();
    let config = InstanceConfig {
        n: mrp.n,
        d: mrp.d,
        family: Family::Mrp,
        tabular_size: s,
        gamma: mrp.gamma,
        ..cfg.clone()
    };
    Instance::from_finite_parts(config, probs, a, phi, b, None)
}
