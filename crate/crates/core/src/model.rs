//! Problem instances: configuration, generators for the Gaussian and
//! tabular families, analytic means and reference solutions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::environments::{observe, sample_state};
use crate::error::{Error, Result};
use crate::numerics::{
    self, mean_matrix, mean_vector, norm, solve_linear, sym_min_eig, Matrix, Vector,
};
use crate::seeding;

const MAX_ATTEMPTS: usize = 20;
const MIN_LAMBDA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Gaussian,
    Tabular,
    Mrp,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Tabular => "tabular",
            Family::Mrp => "mrp",
        }
    }
}

/// Flat instance description shared by all families.
///
/// For `mrp`, `tabular_size` is the number of observations `S`,
/// `delta_env_param` perturbs the transition kernels and `delta_obj_param`
/// perturbs the rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceConfig {
    pub n: usize,
    pub d: usize,
    pub family: Family,
    pub delta_env_param: f64,
    pub delta_obj_param: f64,
    #[serde(rename = "eps_A")]
    pub eps_a: f64,
    pub eps_b: f64,
    #[serde(rename = "C_A")]
    pub c_a: f64,
    pub tabular_size: usize,
    pub gamma: f64,
    /// Spectrum of the base matrices is `base_scale * uniform[1, 2]`.
    pub base_scale: f64,
    pub seed: u64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig {
            n: 20,
            d: 5,
            family: Family::Gaussian,
            delta_env_param: 0.0,
            delta_obj_param: 0.0,
            eps_a: 1.0,
            eps_b: 0.5,
            c_a: 4.0,
            tabular_size: 0,
            gamma: 0.9,
            base_scale: 5.0,
            seed: 0,
        }
    }
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.delta_env_param) {
            return bad(format!(
                "delta_env_param must lie in [0, 1], got {}",
                self.delta_env_param
            ));
        }
        if !(self.delta_obj_param >= 0.0 && self.delta_obj_param.is_finite()) {
            return bad(format!(
                "delta_obj_param must be a finite value >= 0, got {}",
                self.delta_obj_param
            ));
        }
        for (name, v) in [("eps_A", self.eps_a), ("eps_b", self.eps_b)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if !self.c_a.is_finite() {
            return bad("C_A must be finite".into());
        }
        if !(self.base_scale > 0.0 && self.base_scale.is_finite()) {
            return bad(format!("base_scale must be positive, got {}", self.base_scale));
        }
        match self.family {
            Family::Gaussian => {}
            Family::Tabular => {
                if self.tabular_size < 2 * self.n {
                    return bad(format!(
                        "tabular_size {} is below 2n = {}; agent blocks cannot be disjoint",
                        self.tabular_size,
                        2 * self.n
                    ));
                }
            }
            Family::Mrp => {
                if self.tabular_size < 2 {
                    return bad("mrp needs tabular_size >= 2 states".into());
                }
                if !(0.0..1.0).contains(&self.gamma) {
                    return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
                }
                if self.delta_env_param > 1.0 {
                    return bad("delta_env_param must lie in [0, 1]".into());
                }
            }
        }
        Ok(())
    }
}

/// Which system a quantity belongs to: one agent (zero-based) or the
/// averaged central system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Center,
    Agent(usize),
}

#[derive(Debug, Clone)]
pub struct GaussianEnv {
    /// `m_i`, one per agent. States are `m_i + N(0, I)`.
    pub means: Vec<Vector>,
    pub a_base: Matrix,
    pub phi_base: Matrix,
    pub eps_a: f64,
    pub eps_b: f64,
}

/// Finite state space with explicit per-state observations.
#[derive(Debug, Clone)]
pub struct FiniteEnv {
    /// `μ^i` per agent.
    pub probs: Vec<Vector>,
    /// `μ^0`, the uniform mixture.
    pub mixture: Vector,
    pub a: Vec<Matrix>,
    pub phi: Vec<Matrix>,
    /// `b^i(s)` indexed `[agent][state]`.
    pub b: Vec<Vec<Vector>>,
    /// `(1/n) Σ_j b^j(s)` per state.
    pub b_center: Vec<Vector>,
}

impl FiniteEnv {
    pub fn states(&self) -> usize {
        self.mixture.len()
    }
}

#[derive(Debug, Clone)]
pub enum Environment {
    Gaussian(GaussianEnv),
    Finite(FiniteEnv),
}

/// Strong-monotonicity constants `λ_min(sym(·))` of the expected systems.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lambdas {
    pub agents: Vec<f64>,
    /// Minimum over agents; drives the local step size.
    pub local: f64,
    /// `Ā^0`.
    pub central: f64,
    /// `Φ̄^0`.
    pub objective: f64,
    /// Smallest positive mixture mass (finite families), 1 otherwise.
    pub density: f64,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub config: InstanceConfig,
    pub env: Environment,
    pub theta_star: Vec<Vector>,
    pub abar: Vec<Matrix>,
    pub phibar: Vec<Matrix>,
    pub bbar: Vec<Vector>,
    pub abar0: Matrix,
    pub phibar0: Matrix,
    pub bbar0: Vector,
    pub x_star: Vec<Vector>,
    pub x_star_c: Vector,
    pub theta_star_c: Vector,
    pub lambdas: Lambdas,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceMode {
    #[default]
    Analytic,
    MonteCarlo {
        samples: usize,
    },
}

impl Instance {
    pub fn n(&self) -> usize {
        self.config.n
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn family_name(&self) -> &'static str {
        self.config.family.name()
    }

    pub fn finite(&self) -> Option<&FiniteEnv> {
        match &self.env {
            Environment::Finite(f) => Some(f),
            Environment::Gaussian(_) => None,
        }
    }

    /// Builds a Gaussian-family instance from explicit parts. The analytic
    /// means use `E[s sᵀ] = m mᵀ + I`.
    pub fn from_gaussian_parts(
        config: InstanceConfig,
        a_base: Matrix,
        phi_base: Matrix,
        means: Vec<Vector>,
        thetas: Vec<Vector>,
    ) -> Result<Instance> {
        let d = config.d;
        check_parts(&config, means.len(), thetas.len())?;
        for m in [&a_base, &phi_base] {
            if m.rows() != d || m.cols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "base matrix is {}x{}, expected {d}x{d}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if means.iter().chain(&thetas).any(|v| v.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "means and thetas must have length {d}"
            )));
        }
        let second_moment = |m: &Vector| {
            let mut s = Matrix::outer(m, m);
            s.add_scaled(1.0, &Matrix::identity(d));
            s
        };
        let mut abar = Vec::with_capacity(means.len());
        let mut phibar = Vec::with_capacity(means.len());
        let mut bbar = Vec::with_capacity(means.len());
        for (m, theta) in means.iter().zip(&thetas) {
            let mom = second_moment(m);
            let mut left_a = Matrix::identity(d);
            left_a.add_scaled(config.eps_a, &mom);
            let mut left_b = Matrix::identity(d);
            left_b.add_scaled(config.eps_b, &mom);
            let pb = left_b.matmul(&phi_base);
            bbar.push(pb.matvec(theta));
            abar.push(left_a.matmul(&a_base));
            phibar.push(pb);
        }
        let env = Environment::Gaussian(GaussianEnv {
            means,
            a_base,
            phi_base,
            eps_a: config.eps_a,
            eps_b: config.eps_b,
        });
        assemble(config, env, Some(thetas), abar, phibar, bbar, 1.0)
    }

    /// Builds a finite-state instance. When `thetas` is `None` each
    /// `θ^i_*` is defined as the solution of `Φ̄^i θ = b̄^i`.
    pub fn from_finite_parts(
        config: InstanceConfig,
        probs: Vec<Vector>,
        a: Vec<Matrix>,
        phi: Vec<Matrix>,
        b: Vec<Vec<Vector>>,
        thetas: Option<Vec<Vector>>,
    ) -> Result<Instance> {
        let n = config.n;
        let d = config.d;
        check_parts(&config, probs.len(), b.len())?;
        let states = a.len();
        if phi.len() != states || probs.iter().any(|p| p.len() != states) {
            return Err(Error::DimensionMismatch(format!(
                "finite environment needs {states} entries per table"
            )));
        }
        if b.iter().any(|row| row.len() != states || row.iter().any(|v| v.len() != d)) {
            return Err(Error::DimensionMismatch("b table has the wrong shape".into()));
        }
        for p in &probs {
            if p.iter().any(|&v| v < 0.0 || !v.is_finite())
                || (p.iter().sum::<f64>() - 1.0).abs() > 1e-12
            {
                return Err(Error::InvalidConfig(
                    "state distributions must be nonnegative and sum to 1".into(),
                ));
            }
        }
        let mixture: Vector = (0..states)
            .map(|s| probs.iter().map(|p| p[s]).sum::<f64>() / n as f64)
            .collect();
        let b_center: Vec<Vector> = (0..states)
            .map(|s| mean_vector(&b.iter().map(|row| row[s].clone()).collect::<Vec<_>>()))
            .collect();

        let mut abar = Vec::with_capacity(n);
        let mut phibar = Vec::with_capacity(n);
        let mut bbar = Vec::with_capacity(n);
        for (i, p) in probs.iter().enumerate() {
            let mut am = Matrix::zeros(d, d);
            let mut pm = Matrix::zeros(d, d);
            let mut bv = vec![0.0; d];
            for s in 0..states {
                if p[s] == 0.0 {
                    continue;
                }
                am.add_scaled(p[s], &a[s]);
                pm.add_scaled(p[s], &phi[s]);
                numerics::axpy(&mut bv, p[s], &b[i][s]);
            }
            abar.push(am);
            phibar.push(pm);
            bbar.push(bv);
        }
        let density = mixture
            .iter()
            .filter(|&&v| v > 0.0)
            .fold(f64::INFINITY, |m, &v| m.min(v));
        let env = Environment::Finite(FiniteEnv {
            probs,
            mixture,
            a,
            phi,
            b,
            b_center,
        });
        assemble(config, env, thetas, abar, phibar, bbar, density)
    }

    /// Exact expectations `(Ā, Φ̄, b̄)` for one agent or the central system.
    pub fn analytic_means(&self, party: Party) -> (Matrix, Matrix, Vector) {
        match party {
            Party::Center => (self.abar0.clone(), self.phibar0.clone(), self.bbar0.clone()),
            Party::Agent(i) => (self.abar[i].clone(), self.phibar[i].clone(), self.bbar[i].clone()),
        }
    }

    pub fn solution(&self, party: Party) -> &Vector {
        match party {
            Party::Center => &self.x_star_c,
            Party::Agent(i) => &self.x_star[i],
        }
    }

    /// Solves the expected system of `party`, either from the analytic
    /// means or from sample means over `samples` draws per agent.
    pub fn reference_solution(&self, party: Party, mode: ReferenceMode, seed: u64) -> Result<Vector> {
        match mode {
            ReferenceMode::Analytic => {
                let (a, _, b) = self.analytic_means(party);
                solve_linear(&a, &b)
            }
            ReferenceMode::MonteCarlo { samples } => {
                if samples == 0 {
                    return Err(Error::InvalidConfig(
                        "monte_carlo reference needs at least one sample".into(),
                    ));
                }
                let agents: Vec<usize> = match party {
                    Party::Center => (0..self.n()).collect(),
                    Party::Agent(i) => vec![i],
                };
                let mut a_sum = Matrix::zeros(self.d(), self.d());
                let mut b_sum = vec![0.0; self.d()];
                for &i in &agents {
                    let mut rng = seeding::stream(seed, "reference", &[i as u64]);
                    for _ in 0..samples {
                        let obs = observe(self, i, sample_state(self, i, &mut rng));
                        a_sum.add_scaled(1.0, &obs.a);
                        numerics::axpy(&mut b_sum, 1.0, &obs.b);
                    }
                }
                let count = (samples * agents.len()) as f64;
                solve_linear(&a_sum.scale(1.0 / count), &numerics::scaled(&b_sum, 1.0 / count))
            }
        }
    }

    /// `b^0(s) = (1/n) Σ_j b^j(s)`, the true central objective at a state.
    pub fn central_b(&self, state: &crate::environments::State) -> Vector {
        use crate::environments::State;
        match (&self.env, state) {
            (Environment::Gaussian(g), State::Point(s)) => {
                let theta_mean = mean_vector(&self.theta_star);
                let phi = crate::environments::multiplicative(&g.phi_base, g.eps_b, s);
                phi.matvec(&theta_mean)
            }
            (Environment::Finite(f), State::Index(k)) => f.b_center[*k].clone(),
            _ => panic!("state does not belong to this instance's family"),
        }
    }
}

fn check_parts(config: &InstanceConfig, envs: usize, objectives: usize) -> Result<()> {
    if envs != config.n || objectives != config.n {
        return Err(Error::DimensionMismatch(format!(
            "expected {} agents, got {envs} environments and {objectives} objectives",
            config.n
        )));
    }
    Ok(())
}

fn assemble(
    config: InstanceConfig,
    env: Environment,
    thetas: Option<Vec<Vector>>,
    abar: Vec<Matrix>,
    phibar: Vec<Matrix>,
    bbar: Vec<Vector>,
    density: f64,
) -> Result<Instance> {
    let theta_star = match thetas {
        Some(t) => t,
        None => phibar
            .iter()
            .zip(&bbar)
            .map(|(p, b)| solve_linear(p, b))
            .collect::<Result<_>>()?,
    };
    let abar0 = mean_matrix(&abar);
    let phibar0 = mean_matrix(&phibar);
    let bbar0 = mean_vector(&bbar);
    let x_star = abar
        .iter()
        .zip(&bbar)
        .map(|(a, b)| solve_linear(a, b))
        .collect::<Result<Vec<_>>>()?;
    let x_star_c = solve_linear(&abar0, &bbar0)?;
    let theta_star_c = solve_linear(&phibar0, &bbar0)?;
    let agents: Vec<f64> = abar.iter().map(sym_min_eig).collect();
    let local = agents.iter().cloned().fold(f64::INFINITY, f64::min);
    let lambdas = Lambdas {
        local,
        central: sym_min_eig(&abar0),
        objective: sym_min_eig(&phibar0),
        agents,
        density,
    };
    Ok(Instance {
        config,
        env,
        theta_star,
        abar,
        phibar,
        bbar,
        abar0,
        phibar0,
        bbar0,
        x_star,
        x_star_c,
        theta_star_c,
        lambdas,
    })
}

fn well_posed(inst: &Instance) -> bool {
    let l = &inst.lambdas;
    l.local > MIN_LAMBDA && l.central > MIN_LAMBDA && l.objective > MIN_LAMBDA
}

pub fn standard_normal_vector(d: usize, rng: &mut ChaCha8Rng) -> Vector {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_unit(d: usize, rng: &mut ChaCha8Rng) -> Vector {
    loop {
        let v = standard_normal_vector(d, rng);
        let len = norm(&v);
        if len > 1e-12 {
            return numerics::scaled(&v, 1.0 / len);
        }
    }
}

/// Orthogonal factor of a Gaussian matrix via modified Gram-Schmidt.
pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    loop {
        let mut cols: Vec<Vector> = (0..d).map(|_| standard_normal_vector(d, rng)).collect();
        let mut ok = true;
        for k in 0..d {
            for j in 0..k {
                let (done, rest) = cols.split_at_mut(k);
                let proj = numerics::dot(&done[j], &rest[0]);
                numerics::axpy(&mut rest[0], -proj, &done[j]);
            }
            let len = norm(&cols[k]);
            if len < 1e-10 {
                ok = false;
                break;
            }
            cols[k].iter_mut().for_each(|v| *v /= len);
        }
        if ok {
            let mut q = Matrix::zeros(d, d);
            for (c, col) in cols.iter().enumerate() {
                for (r, &v) in col.iter().enumerate() {
                    q[(r, c)] = v;
                }
            }
            return q;
        }
    }
}

/// `scale · Q diag(uniform[1, 2]) Qᵀ`.
pub fn random_spd(d: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let q = random_orthogonal(d, rng);
    let diag: Vec<f64> = (0..d).map(|_| scale * rng.random_range(1.0..2.0)).collect();
    q.matmul(&Matrix::from_diag(&diag)).matmul(&q.transpose())
}

fn objectives(cfg: &InstanceConfig, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    let theta_base = standard_normal_vector(cfg.d, rng);
    let mut thetas = vec![theta_base.clone()];
    for _ in 1..cfg.n {
        let u = random_unit(cfg.d, rng);
        let mut t = theta_base.clone();
        numerics::axpy(&mut t, cfg.delta_obj_param, &u);
        thetas.push(t);
    }
    thetas
}

/// Gaussian family: `A(s) = (I + ε_A s sᵀ) A_base`, `Φ(s) = (I + ε_b s sᵀ)
/// Φ_base`, `s ~ N(m_i, I)` with `m_i = δ_env C_A v_i`. Agent 0 sits at
/// `m = 0`, `θ = θ_base`.
pub fn generate_gaussian_instance(cfg: &InstanceConfig) -> Result<Instance> {
    cfg.validate()?;
    if cfg.family != Family::Gaussian {
        return Err(Error::InvalidConfig(format!(
            "gaussian generator called with family {}",
            cfg.family.name()
        )));
    }
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seeding::stream(cfg.seed, "instance", &[attempt as u64]);
        let a_base = random_spd(cfg.d, cfg.base_scale, &mut rng);
        let phi_base = random_spd(cfg.d, cfg.base_scale, &mut rng);
        let thetas = objectives(cfg, &mut rng);
        let mut means = vec![vec![0.0; cfg.d]];
        for _ in 1..cfg.n {
            let v = random_unit(cfg.d, &mut rng);
            means.push(numerics::scaled(&v, cfg.delta_env_param * cfg.c_a));
        }
        match Instance::from_gaussian_parts(cfg.clone(), a_base, phi_base, means, thetas) {
            Ok(inst) if well_posed(&inst) => return Ok(inst),
            Ok(inst) => last = format!("lambda too small ({:?})", inst.lambdas.local),
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::GenerationFailed {
        attempts: MAX_ATTEMPTS,
        reason: last,
    })
}

/// Tabular family: `μ^i = (1 − δ) uniform + δ uniform(block_i)` with
/// disjoint agent blocks, one-hot `ψ`, and diagonal `A(s)`, `Φ(s)` drawn
/// once per state.
pub fn generate_tabular_instance(cfg: &InstanceConfig) -> Result<Instance> {
    cfg.validate()?;
    if cfg.family != Family::Tabular {
        return Err(Error::InvalidConfig(format!(
            "tabular generator called with family {}",
            cfg.family.name()
        )));
    }
    let states = cfg.tabular_size;
    let probs = tabular_distributions(cfg.n, states, cfg.delta_env_param);
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = seeding::stream(cfg.seed, "instance", &[attempt as u64]);
        let thetas = objectives(cfg, &mut rng);
        let mut diag = |eps: f64| -> Matrix {
            let entries: Vec<f64> = (0..cfg.d)
                .map(|_| cfg.base_scale * (1.0 + eps * rng.random_range(-0.5..0.5)))
                .collect();
            Matrix::from_diag(&entries)
        };
        let a: Vec<Matrix> = (0..states).map(|_| diag(cfg.eps_a)).collect();
        let phi: Vec<Matrix> = (0..states).map(|_| diag(cfg.eps_b)).collect();
        let b: Vec<Vec<Vector>> = thetas
            .iter()
            .map(|th| phi.iter().map(|p| p.matvec(th)).collect())
            .collect();
        match Instance::from_finite_parts(cfg.clone(), probs.clone(), a, phi, b, Some(thetas)) {
            Ok(inst) if well_posed(&inst) => return Ok(inst),
            Ok(inst) => last = format!("lambda too small ({:?})", inst.lambdas.local),
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::GenerationFailed {
        attempts: MAX_ATTEMPTS,
        reason: last,
    })
}

/// The mixture-of-uniforms construction. Agent blocks have `states / n`
/// states each, so any two distributions differ by exactly `delta` in
/// total variation.
pub fn tabular_distributions(n: usize, states: usize, delta: f64) -> Vec<Vector> {
    let block = states / n;
    let base = (1.0 - delta) / states as f64;
    let extra = delta / block as f64;
    (0..n)
        .map(|i| {
            (0..states)
                .map(|s| {
                    if s >= i * block && s < (i + 1) * block {
                        base + extra
                    } else {
                        base
                    }
                })
                .collect()
        })
        .collect()
}

/// Dispatches on `cfg.family`.
pub fn generate_instance(cfg: &InstanceConfig) -> Result<Instance> {
    match cfg.family {
        Family::Gaussian => generate_gaussian_instance(cfg),
        Family::Tabular => generate_tabular_instance(cfg),
        Family::Mrp => crate::tdapp::generate_mrp_from_config(cfg)
            .and_then(|mrp| crate::tdapp::to_instance(&mrp, cfg)),
    }
}
