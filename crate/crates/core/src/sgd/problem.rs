//! Strongly convex finite-sum objectives `f(x) = (1/n) sum_i f_i(x)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Result, SgdError};

/// `f_i(x) = (mu/2) ||x - x* - eps_i||^2` with offsets centered so that
/// `sum_i eps_i = 0`, which makes `x*` the exact minimizer of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFamily {
    pub mu: f64,
    pub optimum: Vec<f64>,
    pub noise_scale: f64,
    offsets: Vec<Vec<f64>>,
}

impl QuadraticFamily {
    pub fn new(
        dimension: usize,
        mu: f64,
        optimum: Vec<f64>,
        noise_scale: f64,
        sample_count: usize,
        seed: u64,
    ) -> Result<Self> {
        if dimension == 0 || optimum.len() != dimension {
            return Err(SgdError::InvalidConfig("optimum must have the problem dimension".into()));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(SgdError::InvalidConfig(format!("mu must be > 0, got {mu}")));
        }
        if !(noise_scale.is_finite() && noise_scale >= 0.0) {
            return Err(SgdError::InvalidConfig("sample_noise_scale must be >= 0".into()));
        }
        if sample_count == 0 {
            return Err(SgdError::InvalidConfig("sample_count must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_scale).expect("scale checked above");
        let mut offsets: Vec<Vec<f64>> =
            (0..sample_count).map(|_| (0..dimension).map(|_| normal.sample(&mut rng)).collect()).collect();
        for k in 0..dimension {
            let mean = offsets.iter().map(|e| e[k]).sum::<f64>() / sample_count as f64;
            for e in offsets.iter_mut() {
                e[k] -= mean;
            }
        }
        Ok(Self { mu, optimum, noise_scale, offsets })
    }

    pub fn offsets(&self) -> &[Vec<f64>] {
        &self.offsets
    }
}

/// L2-regularized logistic regression on two Gaussian classes:
/// `f_i(x) = log(1 + exp(-y_i a_i.x)) + (lambda/2)||x||^2`, `lambda`-strongly
/// convex. The optimum is found numerically at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub lambda: f64,
    features: Vec<Vec<f64>>,
    labels: Vec<f64>,
    optimum: Vec<f64>,
}

impl LogisticRegression {
    pub fn synthetic(dimension: usize, sample_count: usize, lambda: f64, separation: f64, seed: u64) -> Result<Self> {
        if dimension == 0 || sample_count == 0 {
            return Err(SgdError::InvalidConfig("dimension and sample_count must be >= 1".into()));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(SgdError::InvalidConfig(format!("lambda must be > 0, got {lambda}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut features = Vec::with_capacity(sample_count);
        let mut labels = Vec::with_capacity(sample_count);
        for i in 0..sample_count {
            let y = if i % 2 == 0 { 1.0 } else { -1.0 };
            let shift = y * separation / (dimension as f64).sqrt();
            features.push((0..dimension).map(|_| normal.sample(&mut rng) + shift).collect());
            labels.push(y);
        }
        let mut problem = Self { lambda, features, labels, optimum: vec![0.0; dimension] };
        problem.optimum = problem.solve();
        Ok(problem)
    }

    fn solve(&self) -> Vec<f64> {
        let d = self.optimum.len();
        let max_norm_sq = self.features.iter().map(|a| dot(a, a)).fold(0.0, f64::max);
        let step = 1.0 / (self.lambda + 0.25 * max_norm_sq);
        let mut x = vec![0.0; d];
        let mut grad = vec![0.0; d];
        for _ in 0..200_000 {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for i in 0..self.labels.len() {
                self.add_gradient(i, &x, &mut grad);
            }
            let n = self.labels.len() as f64;
            grad.iter_mut().for_each(|g| *g /= n);
            if dot(&grad, &grad).sqrt() < 1e-13 {
                break;
            }
            for (xk, gk) in x.iter_mut().zip(&grad) {
                *xk -= step * gk;
            }
        }
        x
    }

    fn value(&self, i: usize, x: &[f64]) -> f64 {
        let margin = self.labels[i] * dot(&self.features[i], x);
        softplus(-margin) + 0.5 * self.lambda * dot(x, x)
    }

    fn add_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        let a = &self.features[i];
        let y = self.labels[i];
        let coeff = -y * sigmoid(-y * dot(a, x));
        for k in 0..out.len() {
            out[k] += coeff * a[k] + self.lambda * x[k];
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConvexProblem {
    Quadratic(QuadraticFamily),
    Logistic(LogisticRegression),
}

impl ConvexProblem {
    pub fn quadratic(dimension: usize, mu: f64, noise_scale: f64, sample_count: usize, seed: u64) -> Result<Self> {
        Ok(Self::Quadratic(QuadraticFamily::new(dimension, mu, vec![0.0; dimension], noise_scale, sample_count, seed)?))
    }

    pub fn dimension(&self) -> usize {
        self.optimum().len()
    }

    /// Strong-convexity modulus of the mean objective.
    pub fn mu(&self) -> f64 {
        match self {
            Self::Quadratic(q) => q.mu,
            Self::Logistic(l) => l.lambda,
        }
    }

    pub fn optimum(&self) -> &[f64] {
        match self {
            Self::Quadratic(q) => &q.optimum,
            Self::Logistic(l) => &l.optimum,
        }
    }

    pub fn sample_count(&self) -> usize {
        match self {
            Self::Quadratic(q) => q.offsets.len(),
            Self::Logistic(l) => l.labels.len(),
        }
    }

    pub fn sample_noise_scale(&self) -> f64 {
        match self {
            Self::Quadratic(q) => q.noise_scale,
            Self::Logistic(_) => 1.0,
        }
    }

    pub fn sample_value(&self, i: usize, x: &[f64]) -> f64 {
        match self {
            Self::Quadratic(q) => {
                let e = &q.offsets[i];
                let sq: f64 = (0..x.len()).map(|k| (x[k] - q.optimum[k] - e[k]).powi(2)).sum();
                0.5 * q.mu * sq
            }
            Self::Logistic(l) => l.value(i, x),
        }
    }

    /// Adds `grad f_i(x)` into `out`.
    pub fn add_sample_gradient(&self, i: usize, x: &[f64], out: &mut [f64]) {
        match self {
            Self::Quadratic(q) => {
                let e = &q.offsets[i];
                for k in 0..out.len() {
                    out[k] += q.mu * (x[k] - q.optimum[k] - e[k]);
                }
            }
            Self::Logistic(l) => l.add_gradient(i, x, out),
        }
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let n = self.sample_count();
        (0..n).map(|i| self.sample_value(i, x)).sum::<f64>() / n as f64
    }

    pub fn full_gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.sample_count();
        let mut g = vec![0.0; x.len()];
        for i in 0..n {
            self.add_sample_gradient(i, x, &mut g);
        }
        g.iter_mut().for_each(|v| *v /= n as f64);
        g
    }

    /// `f(x) - f(x*)`.
    pub fn optimality_gap(&self, x: &[f64]) -> f64 {
        match self {
            // Centered offsets make the gap exactly (mu/2)||x - x*||^2.
            Self::Quadratic(q) => 0.5 * q.mu * squared_distance(x, &q.optimum),
            Self::Logistic(l) => self.objective(x) - self.objective(&l.optimum),
        }
    }

    pub fn squared_distance_to_optimum(&self, x: &[f64]) -> f64 {
        squared_distance(x, self.optimum())
    }
}
