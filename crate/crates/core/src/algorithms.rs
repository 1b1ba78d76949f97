//! Learning rules and the round-by-round simulation driver.
//!
//! Every step function is a pure map from the pre-round snapshot to the
//! next state. Sums over agents always run in agent order so results are
//! bit-reproducible.

use serde::{Deserialize, Serialize};

use crate::environments::{
    coupled_sample, density_ratios, observe, sample_state, CoupledDraw, Observation,
};
use crate::error::{Error, Result};
use crate::model::{Environment, Instance, Party, ReferenceMode};
use crate::numerics::{axpy, dist_sq, mean_vector, Matrix, Vector};
use crate::schedules::{RoundSteps, StepSchedule};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    Independent,
    Fedavg,
    AffpclKnown,
    #[default]
    AffpclFull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdlVariant {
    /// Central residual with the observed objectives.
    #[default]
    V1,
    /// Central residual with the estimated objective `Φ θ_c`.
    V2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DreMode {
    #[default]
    Exact,
    CoupledTabular,
    OracleOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmId {
    pub kind: AlgorithmKind,
    pub cdl_variant: CdlVariant,
    pub dre_mode: DreMode,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Independent => "independent",
            AlgorithmKind::Fedavg => "fedavg",
            AlgorithmKind::AffpclKnown => "affpcl_known",
            AlgorithmKind::AffpclFull => "affpcl_full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            AlgorithmKind::Independent,
            AlgorithmKind::Fedavg,
            AlgorithmKind::AffpclKnown,
            AlgorithmKind::AffpclFull,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }

    pub fn is_affpcl(self) -> bool {
        matches!(self, AlgorithmKind::AffpclKnown | AlgorithmKind::AffpclFull)
    }
}

impl CdlVariant {
    pub fn name(self) -> &'static str {
        match self {
            CdlVariant::V1 => "v1",
            CdlVariant::V2 => "v2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [CdlVariant::V1, CdlVariant::V2].into_iter().find(|k| k.name() == s)
    }
}

impl DreMode {
    pub fn name(self) -> &'static str {
        match self {
            DreMode::Exact => "exact",
            DreMode::CoupledTabular => "coupled_tabular",
            DreMode::OracleOff => "oracle_off",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [DreMode::Exact, DreMode::CoupledTabular, DreMode::OracleOff]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

impl AlgorithmId {
    pub fn new(kind: AlgorithmKind) -> Self {
        AlgorithmId {
            kind,
            ..AlgorithmId::default()
        }
    }

    /// Rejects combinations the instance cannot support.
    pub fn check(&self, inst: &Instance) -> Result<()> {
        match self.kind {
            AlgorithmKind::AffpclKnown if inst.config.delta_env_param > 0.0 => {
                Err(Error::HeterogeneousEnvironment(inst.config.delta_env_param))
            }
            AlgorithmKind::AffpclFull
                if self.dre_mode == DreMode::CoupledTabular && inst.finite().is_none() =>
            {
                Err(Error::UnsupportedFamily {
                    operation: "coupled_tabular density ratios",
                    family: inst.family_name(),
                })
            }
            _ => Ok(()),
        }
    }
}

/// All decision variables at round `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub t: usize,
    pub x: Vec<Vector>,
    pub x_c: Vector,
    pub theta_c: Vector,
    pub eta: Option<Vec<Vector>>,
}

impl LearnerState {
    pub fn zeros(n: usize, d: usize) -> Self {
        LearnerState {
            t: 0,
            x: vec![vec![0.0; d]; n],
            x_c: vec![0.0; d],
            theta_c: vec![0.0; d],
            eta: None,
        }
    }

    /// Adds zero-initialized density-ratio weights of length `states`.
    pub fn with_eta(mut self, states: usize) -> Self {
        self.eta = Some(vec![vec![0.0; states]; self.x.len()]);
        self
    }

    pub fn x_avg(&self) -> Vector {
        mean_vector(&self.x)
    }

    fn advanced(&self) -> LearnerState {
        let mut next = self.clone();
        next.t += 1;
        next
    }
}

/// One observation per agent plus the server-side ratio table
/// `rho[(i, j)] = ρ̂^i(s^j)`.
#[derive(Debug, Clone)]
pub struct RoundBatch {
    pub t: usize,
    pub obs: Vec<Observation>,
    pub rho: Option<Matrix>,
    pub coupled: Option<Vec<CoupledDraw>>,
}

/// `A x − b`.
pub fn residual(obs: &Observation, x: &[f64]) -> Vector {
    let mut r = obs.a.matvec(x);
    axpy(&mut r, -1.0, &obs.b);
    r
}

/// `A x_c − Φ θ_c`.
pub fn central_residual(obs: &Observation, x_c: &[f64], theta_c: &[f64]) -> Vector {
    let mut r = obs.a.matvec(x_c);
    axpy(&mut r, -1.0, &obs.phi.matvec(theta_c));
    r
}

fn mean_of(batch: &RoundBatch, f: impl Fn(&Observation) -> Vector) -> Vector {
    mean_vector(&batch.obs.iter().map(f).collect::<Vec<_>>())
}

pub fn independent_step(state: &LearnerState, batch: &RoundBatch, alpha: f64) -> LearnerState {
    let mut next = state.advanced();
    for (xi, obs) in next.x.iter_mut().zip(&batch.obs) {
        let g = residual(obs, xi);
        axpy(xi, -alpha, &g);
    }
    next
}

/// Central update followed by broadcast to every agent.
pub fn fedavg_step(state: &LearnerState, batch: &RoundBatch, alpha: f64) -> LearnerState {
    let mut next = state.advanced();
    let g = mean_of(batch, |o| residual(o, &state.x_c));
    axpy(&mut next.x_c, -alpha, &g);
    for xi in next.x.iter_mut() {
        xi.clone_from(&next.x_c);
    }
    next
}

/// Central objective estimation on `θ_c`.
pub fn coe_step(state: &LearnerState, batch: &RoundBatch, alpha_b: f64) -> LearnerState {
    let mut next = state.advanced();
    let g = coe_direction(state, batch);
    axpy(&mut next.theta_c, -alpha_b, &g);
    next
}

fn coe_direction(state: &LearnerState, batch: &RoundBatch) -> Vector {
    mean_of(batch, |o| {
        let mut r = o.phi.matvec(&state.theta_c);
        axpy(&mut r, -1.0, &o.b);
        r
    })
}

fn cdl_direction(state: &LearnerState, batch: &RoundBatch, variant: CdlVariant) -> Vector {
    match variant {
        CdlVariant::V1 => mean_of(batch, |o| residual(o, &state.x_c)),
        CdlVariant::V2 => mean_of(batch, |o| central_residual(o, &state.x_c, &state.theta_c)),
    }
}

/// Central decision learning on `x_c`.
pub fn cdl_step(
    state: &LearnerState,
    batch: &RoundBatch,
    alpha_c: f64,
    variant: CdlVariant,
) -> LearnerState {
    let mut next = state.advanced();
    let g = cdl_direction(state, batch, variant);
    axpy(&mut next.x_c, -alpha_c, &g);
    next
}

/// Bias-corrected direction with the true central objective, for agent
/// `i`, evaluated at the implicit center `x_avg`.
pub fn known_direction(
    inst: &Instance,
    i: usize,
    batch: &RoundBatch,
    x_i: &[f64],
    x_avg: &[f64],
) -> Vector {
    let own = &batch.obs[i];
    let mut g = residual(own, x_i);
    let central = mean_of(batch, |o| residual(o, x_avg));
    axpy(&mut g, 1.0, &central);
    let mut own_center = own.a.matvec(x_avg);
    axpy(&mut own_center, -1.0, &inst.central_b(&own.state));
    axpy(&mut g, -1.0, &own_center);
    g
}

/// Personalized update with a known central objective; homogeneous
/// environments only.
pub fn affpcl_known_step(
    inst: &Instance,
    state: &LearnerState,
    batch: &RoundBatch,
    alpha: f64,
) -> Result<LearnerState> {
    if inst.config.delta_env_param > 0.0 {
        return Err(Error::HeterogeneousEnvironment(inst.config.delta_env_param));
    }
    let x_avg = state.x_avg();
    let mut next = state.advanced();
    for (i, xi) in next.x.iter_mut().enumerate() {
        let g = known_direction(inst, i, batch, &state.x[i], &x_avg);
        axpy(xi, -alpha, &g);
    }
    Ok(next)
}

fn rho_table(batch: &RoundBatch) -> Result<&Matrix> {
    batch
        .rho
        .as_ref()
        .ok_or(Error::MissingDensityRatio { agent: 0 })
}

fn weighted_central(rho: &Matrix, i: usize, central: &[Vector]) -> Vector {
    let n = central.len();
    let mut out = vec![0.0; central[0].len()];
    for (j, c) in central.iter().enumerate() {
        axpy(&mut out, rho[(i, j)], c);
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
    out
}

/// `(1/n) Σ_j ρ̂^i(s^j) (A(s^j) x_c − Φ(s^j) θ_c)`.
pub fn importance_corrected_direction(
    i: usize,
    batch: &RoundBatch,
    x_c: &[f64],
    theta_c: &[f64],
) -> Result<Vector> {
    let rho = rho_table(batch)?;
    let central: Vec<Vector> = batch
        .obs
        .iter()
        .map(|o| central_residual(o, x_c, theta_c))
        .collect();
    Ok(weighted_central(rho, i, &central))
}

/// Local direction `g̃^i` of the full scheme.
pub fn local_direction(i: usize, batch: &RoundBatch, state: &LearnerState) -> Result<Vector> {
    let mut g = residual(&batch.obs[i], &state.x[i]);
    let corrected = importance_corrected_direction(i, batch, &state.x_c, &state.theta_c)?;
    axpy(&mut g, 1.0, &corrected);
    let own = central_residual(&batch.obs[i], &state.x_c, &state.theta_c);
    axpy(&mut g, -1.0, &own);
    Ok(g)
}

/// `η ← η − α (Ψ(s⁰) η − (ψ(s^i) − ψ(s⁰)))` with one-hot `ψ`.
pub fn dre_coupled_step(eta: &[f64], draw: &CoupledDraw, alpha: f64) -> Vector {
    let mut dir = vec![0.0; eta.len()];
    dir[draw.state_0] += eta[draw.state_0];
    dir[draw.state_i] -= 1.0;
    dir[draw.state_0] += 1.0;
    let mut next = eta.to_vec();
    axpy(&mut next, -alpha, &dir);
    next
}

/// One synchronized round of the full scheme: central decision learning,
/// central objective estimation and the personalized local updates, all
/// from the pre-round snapshot. Density-ratio weights advance last when
/// the batch carries coupled draws.
pub fn affpcl_full_round(
    state: &LearnerState,
    batch: &RoundBatch,
    steps: &RoundSteps,
    variant: CdlVariant,
) -> Result<LearnerState> {
    let rho = rho_table(batch)?;
    let mut next = state.advanced();

    let cdl = cdl_direction(state, batch, variant);
    axpy(&mut next.x_c, -steps.central, &cdl);
    let coe = coe_direction(state, batch);
    axpy(&mut next.theta_c, -steps.objective, &coe);

    let central: Vec<Vector> = batch
        .obs
        .iter()
        .map(|o| central_residual(o, &state.x_c, &state.theta_c))
        .collect();
    for (i, xi) in next.x.iter_mut().enumerate() {
        let mut g = residual(&batch.obs[i], &state.x[i]);
        axpy(&mut g, 1.0, &weighted_central(rho, i, &central));
        axpy(&mut g, -1.0, &central[i]);
        axpy(xi, -steps.local, &g);
    }

    if let (Some(draws), Some(eta)) = (&batch.coupled, &state.eta) {
        next.eta = Some(
            eta.iter()
                .zip(draws)
                .map(|(e, d)| dre_coupled_step(e, d, steps.density))
                .collect(),
        );
    }
    Ok(next)
}

/// Where the ratio table of a batch comes from.
#[derive(Debug, Clone, Copy)]
pub enum RhoSource<'a> {
    None,
    Exact,
    Estimated(&'a [Vector]),
}

/// Samples every agent's round-`t` observation from its own substream and
/// fills the ratio table.
pub fn draw_batch(inst: &Instance, seed: u64, t: usize, rho: RhoSource<'_>) -> RoundBatch {
    let n = inst.n();
    let obs: Vec<Observation> = (0..n)
        .map(|i| {
            let mut rng = seeding::stream(seed, "sample", &[i as u64, t as u64]);
            observe(inst, i, sample_state(inst, i, &mut rng))
        })
        .collect();
    let table = match rho {
        RhoSource::None => None,
        RhoSource::Exact => {
            let mut m = Matrix::zeros(n, n);
            for (j, o) in obs.iter().enumerate() {
                for (i, r) in density_ratios(inst, &o.state).into_iter().enumerate() {
                    m[(i, j)] = r;
                }
            }
            Some(m)
        }
        RhoSource::Estimated(eta) => {
            let mut m = Matrix::zeros(n, n);
            for (j, o) in obs.iter().enumerate() {
                let k = o.state.index().expect("estimated ratios need a finite state space");
                for (i, e) in eta.iter().enumerate() {
                    m[(i, j)] = (1.0 + e[k]).clamp(0.0, n as f64);
                }
            }
            Some(m)
        }
    };
    RoundBatch {
        t,
        obs,
        rho: table,
        coupled: None,
    }
}

/// Per-agent coupled draws for round `t`.
pub fn draw_coupled(inst: &Instance, seed: u64, t: usize) -> Result<Vec<CoupledDraw>> {
    (0..inst.n())
        .map(|i| {
            let mut rng = seeding::stream(seed, "couple", &[i as u64, t as u64]);
            coupled_sample(inst, i, &mut rng)
        })
        .collect()
}

/// Solutions the errors are measured against.
#[derive(Debug, Clone)]
pub struct Targets {
    pub x_star: Vec<Vector>,
    pub x_star_c: Vector,
    pub theta_star_c: Vector,
}

impl Targets {
    pub fn analytic(inst: &Instance) -> Self {
        Targets {
            x_star: inst.x_star.clone(),
            x_star_c: inst.x_star_c.clone(),
            theta_star_c: inst.theta_star_c.clone(),
        }
    }

    pub fn from_mode(inst: &Instance, mode: ReferenceMode, seed: u64) -> Result<Self> {
        match mode {
            ReferenceMode::Analytic => Ok(Targets::analytic(inst)),
            ReferenceMode::MonteCarlo { .. } => Ok(Targets {
                x_star: (0..inst.n())
                    .map(|i| inst.reference_solution(Party::Agent(i), mode, seed))
                    .collect::<Result<_>>()?,
                x_star_c: inst.reference_solution(Party::Center, mode, seed)?,
                theta_star_c: inst.theta_star_c.clone(),
            }),
        }
    }
}

/// Squared errors at one recorded round.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: usize,
    pub agent_sq_errors: Vec<f64>,
    pub central_sq_error: f64,
    pub theta_sq_error: f64,
}

impl TrajectoryPoint {
    pub fn mse0(&self) -> f64 {
        self.agent_sq_errors.iter().sum::<f64>() / self.agent_sq_errors.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    pub instance: &'a Instance,
    pub targets: &'a Targets,
    pub algorithm: AlgorithmId,
    pub schedule: &'a StepSchedule,
    pub t_max: usize,
    pub record_every: usize,
    pub seed: u64,
}

impl Simulation<'_> {
    fn initial_state(&self) -> Result<LearnerState> {
        let inst = self.instance;
        let state = LearnerState::zeros(inst.n(), inst.d());
        if self.algorithm.kind == AlgorithmKind::AffpclFull
            && self.algorithm.dre_mode == DreMode::CoupledTabular
        {
            let f = inst.finite().ok_or(Error::UnsupportedFamily {
                operation: "coupled_tabular density ratios",
                family: inst.family_name(),
            })?;
            return Ok(state.with_eta(f.states()));
        }
        Ok(state)
    }

    fn record(&self, state: &LearnerState) -> TrajectoryPoint {
        TrajectoryPoint {
            t: state.t,
            agent_sq_errors: state
                .x
                .iter()
                .zip(&self.targets.x_star)
                .map(|(x, s)| dist_sq(x, s))
                .collect(),
            central_sq_error: dist_sq(&state.x_c, &self.targets.x_star_c),
            theta_sq_error: dist_sq(&state.theta_c, &self.targets.theta_star_c),
        }
    }

    /// Advances one round.
    pub fn step(&self, state: &LearnerState) -> Result<LearnerState> {
        let inst = self.instance;
        let t = state.t;
        let steps = self.schedule.round_steps(t, &inst.lambdas)?;
        let algo = self.algorithm;
        match algo.kind {
            AlgorithmKind::Independent => {
                let batch = draw_batch(inst, self.seed, t, RhoSource::None);
                Ok(independent_step(state, &batch, steps.local))
            }
            AlgorithmKind::Fedavg => {
                let batch = draw_batch(inst, self.seed, t, RhoSource::None);
                Ok(fedavg_step(state, &batch, steps.central))
            }
            AlgorithmKind::AffpclKnown => {
                let batch = draw_batch(inst, self.seed, t, RhoSource::None);
                affpcl_known_step(inst, state, &batch, steps.local)
            }
            AlgorithmKind::AffpclFull => {
                let mut batch = match (algo.dre_mode, &state.eta) {
                    (DreMode::Exact, _) => draw_batch(inst, self.seed, t, RhoSource::Exact),
                    (_, Some(eta)) => draw_batch(inst, self.seed, t, RhoSource::Estimated(eta)),
                    (_, None) => return Err(Error::MissingDensityRatio { agent: 0 }),
                };
                if algo.dre_mode == DreMode::CoupledTabular {
                    batch.coupled = Some(draw_coupled(inst, self.seed, t)?);
                }
                affpcl_full_round(state, &batch, &steps, algo.cdl_variant)
            }
        }
    }

    /// Runs `t_max` rounds and records the pre-update state at every
    /// `record_every`-th round, starting with the initial state.
    pub fn run(&self) -> Result<Vec<TrajectoryPoint>> {
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be at least 1".into()));
        }
        self.algorithm.check(self.instance)?;
        self.schedule.validate()?;
        let mut state = self.initial_state()?;
        let mut out = Vec::with_capacity(self.t_max.div_ceil(self.record_every));
        for t in 0..self.t_max {
            if t % self.record_every == 0 {
                out.push(self.record(&state));
            }
            // The state after the final round is never recorded.
            if t + 1 < self.t_max {
                state = self.step(&state)?;
            }
        }
        Ok(out)
    }

    /// Like [`Simulation::run`] but returns the final state after `t_max`
    /// rounds instead of records.
    pub fn final_state(&self) -> Result<LearnerState> {
        self.algorithm.check(self.instance)?;
        self.schedule.validate()?;
        let mut state = self.initial_state()?;
        for _ in 0..self.t_max {
            state = self.step(&state)?;
        }
        Ok(state)
    }
}

/// True when the instance's environments are all identical.
pub fn homogeneous_environments(inst: &Instance) -> bool {
    match &inst.env {
        Environment::Gaussian(g) => g.means.iter().all(|m| m == &g.means[0]),
        Environment::Finite(f) => f.probs.iter().all(|p| p == &f.probs[0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::State;
    use crate::model::{generate_gaussian_instance, InstanceConfig};
    use crate::numerics;

    fn scalar_obs(agent: usize, a: f64, b: f64, phi: f64) -> Observation {
        Observation {
            agent,
            state: State::Point(vec![0.0]),
            a: Matrix::from_diag(&[a]),
            b: vec![b],
            phi: Matrix::from_diag(&[phi]),
            psi: None,
        }
    }

    fn batch(obs: Vec<Observation>) -> RoundBatch {
        let n = obs.len();
        let mut rho = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                rho[(i, j)] = 1.0;
            }
        }
        RoundBatch {
            t: 0,
            obs,
            rho: Some(rho),
            coupled: None,
        }
    }

    #[test]
    fn residual_examples() {
        let o = scalar_obs(0, 2.0, 4.0, 1.0);
        assert_eq!(residual(&o, &[0.0]), vec![-4.0]);
        assert_eq!(residual(&o, &[2.0]), vec![0.0]);
    }

    #[test]
    fn independent_scalar_step() {
        let s = LearnerState::zeros(1, 1);
        let next = independent_step(&s, &batch(vec![scalar_obs(0, 1.0, 1.0, 1.0)]), 0.5);
        assert_eq!(next.x[0], vec![0.5]);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn fedavg_scalar_step() {
        let s = LearnerState::zeros(2, 1);
        let b = batch(vec![scalar_obs(0, 1.0, 1.0, 1.0), scalar_obs(1, 1.0, 3.0, 1.0)]);
        let next = fedavg_step(&s, &b, 0.1);
        assert!((next.x_c[0] - 0.2).abs() < 1e-15);
        assert_eq!(next.x[0], next.x_c);
        assert_eq!(next.x[1], next.x_c);
    }

    #[test]
    fn coe_scalar_step() {
        let s = LearnerState::zeros(2, 1);
        let b = batch(vec![scalar_obs(0, 1.0, 0.0, 1.0), scalar_obs(1, 1.0, 2.0, 1.0)]);
        assert!((coe_step(&s, &b, 0.1).theta_c[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn dre_coupled_draw_is_stationary_at_zero() {
        let draw = CoupledDraw {
            state_i: 1,
            state_0: 1,
            coupled: true,
        };
        assert_eq!(dre_coupled_step(&[0.0, 0.0, 0.0], &draw, 0.1), vec![0.0; 3]);
        let draw = CoupledDraw {
            state_i: 0,
            state_0: 2,
            coupled: false,
        };
        assert_eq!(dre_coupled_step(&[0.0; 3], &draw, 0.5), vec![0.5, 0.0, -0.5]);
    }

    #[test]
    fn known_step_hand_example() {
        // n=2, A≡1, b¹≡0, b²≡2, x¹=x²=0: agent 1 sees g¹=0, g⁰=−1,
        // g^{0→1}=−1, so its corrected direction is 0.
        let cfg = InstanceConfig {
            n: 2,
            d: 1,
            eps_a: 0.0,
            eps_b: 0.0,
            ..InstanceConfig::default()
        };
        let inst = Instance::from_gaussian_parts(
            cfg,
            Matrix::identity(1),
            Matrix::identity(1),
            vec![vec![0.0], vec![0.0]],
            vec![vec![0.0], vec![2.0]],
        )
        .unwrap();
        let b = batch(vec![scalar_obs(0, 1.0, 0.0, 1.0), scalar_obs(1, 1.0, 2.0, 1.0)]);
        let g = known_direction(&inst, 0, &b, &[0.0], &[0.0]);
        assert_eq!(g, vec![0.0]);
        let s = LearnerState::zeros(2, 1);
        let next = affpcl_known_step(&inst, &s, &b, 0.1).unwrap();
        assert_eq!(next.x[0], vec![0.0]);
    }

    #[test]
    fn known_step_rejects_heterogeneous_envs() {
        let inst = generate_gaussian_instance(&InstanceConfig {
            n: 2,
            d: 2,
            delta_env_param: 0.2,
            ..InstanceConfig::default()
        })
        .unwrap();
        let s = LearnerState::zeros(2, 2);
        let b = draw_batch(&inst, 0, 0, RhoSource::None);
        assert!(matches!(
            affpcl_known_step(&inst, &s, &b, 0.1),
            Err(Error::HeterogeneousEnvironment(_))
        ));
    }

    #[test]
    fn full_round_needs_ratios() {
        let s = LearnerState::zeros(1, 1);
        let mut b = batch(vec![scalar_obs(0, 1.0, 1.0, 1.0)]);
        b.rho = None;
        assert!(matches!(
            affpcl_full_round(&s, &b, &RoundSteps::uniform(0.1), CdlVariant::V1),
            Err(Error::MissingDensityRatio { .. })
        ));
    }

    #[test]
    fn record_count_and_initial_error() {
        let inst = generate_gaussian_instance(&InstanceConfig {
            n: 3,
            d: 2,
            ..InstanceConfig::default()
        })
        .unwrap();
        let targets = Targets::analytic(&inst);
        let schedule = StepSchedule::default();
        for (t_max, every, expected) in [(1, 1, 1), (10, 3, 4), (60, 1, 60), (60, 7, 9)] {
            let sim = Simulation {
                instance: &inst,
                targets: &targets,
                algorithm: AlgorithmId::default(),
                schedule: &schedule,
                t_max,
                record_every: every,
                seed: 1,
            };
            let recs = sim.run().unwrap();
            assert_eq!(recs.len(), expected);
            assert_eq!(recs[0].t, 0);
            for (i, e) in recs[0].agent_sq_errors.iter().enumerate() {
                assert_eq!(*e, numerics::norm_sq(&inst.x_star[i]));
            }
        }
    }
}
