//! Observation-noise families with known alignment behavior, used to check
//! the stochastic condition number estimator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::metrics::NoiseModel;
use crate::model::{random_spd, standard_normal_vector};
use crate::numerics::{psd_sqrt, Matrix};
use crate::seeding;

/// `A(s) = R(θ)`, a 2-d rotation with `θ ~ uniform[0, 2π − gap]`.
/// Rotations are orthogonal, so `D(s) = I`, while `Ā` shrinks toward zero
/// as the gap closes.
#[derive(Debug, Clone)]
pub struct RotationFamily {
    pub gap: f64,
}

impl RotationFamily {
    fn span(&self) -> f64 {
        2.0 * std::f64::consts::PI - self.gap
    }
}

fn rotation(c: f64, s: f64) -> Matrix {
    Matrix::from_rows(&[vec![c, -s], vec![s, c]])
}

impl NoiseModel for RotationFamily {
    fn agents(&self) -> usize {
        1
    }

    fn dim(&self) -> usize {
        2
    }

    fn sample_a(&self, _agent: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let theta = rng.random::<f64>() * self.span();
        rotation(theta.cos(), theta.sin())
    }

    fn mean_a(&self, _agent: usize) -> Matrix {
        let l = self.span();
        rotation(l.sin() / l, (1.0 - l.cos()) / l)
    }
}

/// `A(s) = (I + U(s)) Ā^i` with `U(s) = ε diag(r)`, `r_k ~ uniform[−1, 1]`,
/// so `‖U(s)‖ ≤ ε` and `E[U] = 0`.
#[derive(Debug, Clone)]
pub struct MultiplicativeFamily {
    pub means: Vec<Matrix>,
    pub eps: f64,
}

impl MultiplicativeFamily {
    pub fn random(n: usize, d: usize, eps: f64, seed: u64) -> Self {
        let mut rng = seeding::stream(seed, "multiplicative", &[]);
        MultiplicativeFamily {
            means: (0..n).map(|_| random_spd(d, 1.0, &mut rng)).collect(),
            eps,
        }
    }
}

impl NoiseModel for MultiplicativeFamily {
    fn agents(&self) -> usize {
        self.means.len()
    }

    fn dim(&self) -> usize {
        self.means[0].rows()
    }

    fn sample_a(&self, agent: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let d = self.dim();
        let diag: Vec<f64> = (0..d)
            .map(|_| 1.0 + self.eps * rng.random_range(-1.0..=1.0))
            .collect();
        Matrix::from_diag(&diag).matmul(&self.means[agent])
    }

    fn mean_a(&self, agent: usize) -> Matrix {
        self.means[agent].clone()
    }
}

/// `A(s) = B^{1/2} (I + s sᵀ) B^{1/2}` with `s ~ N(0, I)`: symmetric PSD
/// for every sample, so `D(s) = A(s)`.
#[derive(Debug, Clone)]
pub struct PsdFamily {
    pub halves: Vec<Matrix>,
}

impl PsdFamily {
    pub fn random(n: usize, d: usize, seed: u64) -> Self {
        let mut rng = seeding::stream(seed, "psd-family", &[]);
        PsdFamily {
            halves: (0..n)
                .map(|_| psd_sqrt(&random_spd(d, 1.0, &mut rng)).expect("spd input"))
                .collect(),
        }
    }
}

impl NoiseModel for PsdFamily {
    fn agents(&self) -> usize {
        self.halves.len()
    }

    fn dim(&self) -> usize {
        self.halves[0].rows()
    }

    fn sample_a(&self, agent: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let h = &self.halves[agent];
        let s = standard_normal_vector(self.dim(), rng);
        let mut inner = Matrix::outer(&s, &s);
        inner.add_scaled(1.0, &Matrix::identity(self.dim()));
        h.matmul(&inner).matmul(h).sym_part()
    }

    fn mean_a(&self, agent: usize) -> Matrix {
        let h = &self.halves[agent];
        h.matmul(h).scale(2.0).sym_part()
    }
}
