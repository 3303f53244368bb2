//! Sieve priors: `θ_λ/√τ_λ ~ g` i.i.d. with `τ_λ = τ₀ λ^{−2β}`, a prior
//! `p(k)` on the model size, and the posterior contraction rates they imply.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};

/// The standardised coefficient density `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefDistribution {
    Gaussian,
    /// `g(x) = e^{−|x|}/2`
    Laplace,
    /// Student-t with `nu` degrees of freedom.
    Student { nu: f64 },
}

impl CoefDistribution {
    /// Tail exponent `p*` with `g(x) ≲ exp(−c|x|^{p*})`; `None` for polynomial tails.
    pub fn p_star(&self) -> Option<f64> {
        match self {
            CoefDistribution::Gaussian => Some(2.0),
            CoefDistribution::Laplace => Some(1.0),
            CoefDistribution::Student { .. } => None,
        }
    }

    pub fn ln_g(&self, u: f64) -> f64 {
        match *self {
            CoefDistribution::Gaussian => -0.5 * u * u - 0.5 * (2.0 * PI).ln(),
            CoefDistribution::Laplace => -u.abs() - 2f64.ln(),
            CoefDistribution::Student { nu } => {
                ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
                    - 0.5 * (nu + 1.0) * (1.0 + u * u / nu).ln()
            }
        }
    }

    /// First and second derivatives of `ln g` (the Laplace kink gets zero curvature
    /// and subgradient zero at the origin).
    pub fn ln_g_derivatives(&self, u: f64) -> (f64, f64) {
        match *self {
            CoefDistribution::Gaussian => (-u, -1.0),
            CoefDistribution::Laplace => (-sign(u), 0.0),
            CoefDistribution::Student { nu } => {
                let d = nu + u * u;
                (-(nu + 1.0) * u / d, -(nu + 1.0) * (nu - u * u) / (d * d))
            }
        }
    }

    pub fn variance(&self) -> Option<f64> {
        match *self {
            CoefDistribution::Gaussian => Some(1.0),
            CoefDistribution::Laplace => Some(2.0),
            CoefDistribution::Student { nu } if nu > 2.0 => Some(nu / (nu - 2.0)),
            CoefDistribution::Student { .. } => None,
        }
    }

    /// Median of `|G|`, `G ~ g`.
    pub fn median_abs(&self) -> f64 {
        match *self {
            CoefDistribution::Gaussian => crate::normal::std_normal_quantile(0.75),
            CoefDistribution::Laplace => 2f64.ln(),
            CoefDistribution::Student { nu } => {
                StudentsT::new(0.0, 1.0, nu).expect("valid degrees of freedom").inverse_cdf(0.75)
            }
        }
    }

    /// `(C, c)` with `g(x) ≤ C exp(−c|x|^{p*})` for all `x`; tight for both
    /// exponential-tail families.
    pub fn tail_envelope(&self) -> Option<(f64, f64)> {
        match self {
            CoefDistribution::Gaussian => Some(((2.0 * PI).sqrt().recip(), 0.5)),
            CoefDistribution::Laplace => Some((0.5, 1.0)),
            CoefDistribution::Student { .. } => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            CoefDistribution::Gaussian => StandardNormal.sample(rng),
            CoefDistribution::Laplace => {
                let u: f64 = rng.random::<f64>() - 0.5;
                -sign(u) * (1.0 - 2.0 * u.abs()).ln()
            }
            CoefDistribution::Student { nu } => StudentT::new(nu).expect("valid degrees of freedom").sample(rng),
        }
    }
}

fn sign(u: f64) -> f64 {
    if u > 0.0 {
        1.0
    } else if u < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Prior `π_k` on the coefficients of a size-`k` model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefPrior {
    pub dist: CoefDistribution,
    pub tau0: f64,
    pub beta: f64,
}

impl CoefPrior {
    pub fn new(dist: CoefDistribution, tau0: f64, beta: f64) -> Result<Self> {
        if !(tau0 > 0.0 && tau0.is_finite()) {
            return Err(invalid(format!("tau0 must be positive, got {tau0}")));
        }
        if !(beta > 0.5 && beta < 1.0) {
            return Err(invalid(format!("beta must lie in (1/2, 1), got {beta}")));
        }
        if let CoefDistribution::Student { nu } = dist {
            if !(nu > 0.0) {
                return Err(invalid(format!("Student degrees of freedom must be positive, got {nu}")));
            }
        }
        if let Some(p) = dist.p_star() {
            let cap = if p <= 2.0 { 0.5 + p / 2.0 } else { 0.5 + 1.0 / p };
            if beta >= cap {
                return Err(invalid(format!("beta = {beta} violates beta < {cap} for tail exponent {p}")));
            }
        }
        Ok(Self { dist, tau0, beta })
    }

    pub fn gaussian(beta: f64) -> Self {
        Self::new(CoefDistribution::Gaussian, 1.0, beta).expect("valid Gaussian prior")
    }

    /// `τ_λ = τ₀ λ^{−2β}`, `λ ≥ 1`.
    pub fn tau(&self, index: usize) -> f64 {
        self.tau0 * (index as f64).powf(-2.0 * self.beta)
    }

    /// `Σ_λ [log g(θ_λ/√τ_λ) − ½ log τ_λ]`.
    pub fn log_density(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let tau = self.tau(i + 1);
                self.dist.ln_g(t / tau.sqrt()) - 0.5 * tau.ln()
            })
            .sum()
    }

    /// Gradient and diagonal Hessian of [`Self::log_density`].
    pub fn gradient_and_curvature(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        theta
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let s = self.tau(i + 1).sqrt();
                let (d1, d2) = self.dist.ln_g_derivatives(t / s);
                (d1 / s, d2 / (s * s))
            })
            .unzip()
    }

    /// `Var(θ_λ)` under the prior, when `g` has a finite variance.
    pub fn variance(&self, index: usize) -> Option<f64> {
        self.dist.variance().map(|v| v * self.tau(index))
    }

    pub fn sample<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<f64> {
        (1..=k).map(|i| self.tau(i).sqrt() * self.dist.sample(rng)).collect()
    }

    /// `log[π_k(θ)/π_k(θ − tB)]`.
    pub fn shift_log_ratio(&self, theta: &[f64], t: f64, shift: &[f64]) -> Result<f64> {
        if theta.len() != shift.len() {
            return Err(invalid("theta and shift must have equal length"));
        }
        let moved: Vec<f64> = theta.iter().zip(shift).map(|(a, b)| a - t * b).collect();
        let v = self.log_density(theta) - self.log_density(&moved);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(crate::Error::Numerical("prior density vanished in shift ratio".into()))
        }
    }

    /// `π_k(θ)/π_k(θ − tB)`.
    pub fn shift_ratio(&self, theta: &[f64], t: f64, shift: &[f64]) -> Result<f64> {
        self.shift_log_ratio(theta, t, shift).map(f64::exp)
    }

    /// Lipschitz bound `|t| Σ |B_λ|/√τ_λ` on `|log ratio|`; valid for the
    /// Laplace prior, whose `log g` is 1-Lipschitz.
    pub fn laplace_shift_bound(&self, t: f64, shift: &[f64]) -> f64 {
        t.abs() * shift.iter().enumerate().map(|(i, b)| b.abs() / self.tau(i + 1).sqrt()).sum::<f64>()
    }
}

/// Prior on the model size `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelPrior {
    /// Poisson(`nu`) conditioned on `k ≥ 1`; the `L(x) = log x` instance.
    Poisson { nu: f64 },
    /// `p(k) = q (1 − q)^{k−1}`; the `L(x) = 1` instance.
    Geometric { q: f64 },
    /// Point mass at `k`.
    Dirac { k: usize },
}

impl ModelPrior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelPrior::Poisson { nu } if !(nu > 0.0 && nu.is_finite()) => {
                Err(invalid(format!("Poisson rate must be positive, got {nu}")))
            }
            ModelPrior::Geometric { q } if !(q > 0.0 && q < 1.0) => {
                Err(invalid(format!("geometric parameter must lie in (0, 1), got {q}")))
            }
            ModelPrior::Dirac { k: 0 } => Err(invalid("Dirac model size must be at least 1")),
            _ => Ok(()),
        }
    }

    pub fn is_dirac(&self) -> bool {
        matches!(self, ModelPrior::Dirac { .. })
    }

    /// Normalised `log p(k)`; `−∞` off the support.
    pub fn log_prob(&self, k: usize) -> f64 {
        if k == 0 {
            return f64::NEG_INFINITY;
        }
        match *self {
            ModelPrior::Poisson { nu } => {
                -nu + k as f64 * nu.ln() - ln_gamma(k as f64 + 1.0) - (-(-nu).exp_m1()).ln()
            }
            ModelPrior::Geometric { q } => q.ln() + (k - 1) as f64 * (-q).ln_1p(),
            ModelPrior::Dirac { k: atom } => {
                if k == atom {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// `L(x)`: `log x` for the Poisson case, `1` otherwise.
    pub fn rate_log_factor(&self, x: f64) -> f64 {
        match self {
            ModelPrior::Poisson { .. } => x.ln(),
            _ => 1.0,
        }
    }

    /// Exposed `(c₁, c₂)` with `exp(−c₁ k L(k)) ≤ p(k) ≤ exp(−c₂ k L(k))`.
    ///
    /// Geometric: exact, from `−log p(k)/k = b + (a − b)/k` with `a = −log q`,
    /// `b = −log(1−q)`. Poisson: the ratio `−log p(k)/(k log k)` tends to one, so
    /// the constants are the extremes over `2 ≤ k ≤ 10⁵` widened to include 1.
    /// `L(1) = 0` makes the Poisson sandwich vacuous at `k = 1`, which is excluded.
    pub fn envelope_constants(&self) -> Option<(f64, f64)> {
        match *self {
            ModelPrior::Geometric { q } => {
                let a = -q.ln();
                let b = -(-q).ln_1p();
                Some((a.max(b), a.min(b)))
            }
            ModelPrior::Poisson { .. } => {
                let (mut lo, mut hi) = (1.0f64, 1.0f64);
                for k in 2..=100_000usize {
                    let kf = k as f64;
                    let r = -self.log_prob(k) / (kf * kf.ln());
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
                Some((hi, lo))
            }
            ModelPrior::Dirac { .. } => None,
        }
    }

    /// Smallest `k` covered by [`Self::envelope_constants`].
    pub fn envelope_start(&self) -> usize {
        match self {
            ModelPrior::Poisson { .. } => 2,
            _ => 1,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            ModelPrior::Dirac { k } => k,
            ModelPrior::Geometric { q } => {
                let u: f64 = rng.random();
                1 + ((1.0 - u).ln() / (-q).ln_1p()).floor() as usize
            }
            ModelPrior::Poisson { .. } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = 1;
                loop {
                    acc += self.log_prob(k).exp();
                    if u < acc || k > 100_000 {
                        return k;
                    }
                    k += 1;
                }
            }
        }
    }
}

/// `k_n* = ⌈n^{1/(2β+1)}⌉`.
pub fn k_star(n: usize, beta: f64) -> usize {
    ((n as f64).powf(1.0 / (2.0 * beta + 1.0)) - 1e-9).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateCase {
    /// Random `k` with `exp(−c k L(k))` tails.
    Hierarchical,
    /// `k = k_n*` fixed.
    Dirac,
}

/// Contraction-rate bookkeeping for one sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSpec {
    pub gamma: f64,
    pub beta: f64,
    pub case: RateCase,
    pub n: usize,
    pub epsilon0: f64,
    pub l0: f64,
    pub epsilon_n: f64,
    /// Model-size cap `l_n` (equal to `k_n*` in the Dirac case).
    pub l_n: f64,
    pub k_star: usize,
    /// `L(n)`; one in the Dirac case.
    pub log_factor: f64,
}

impl RateSpec {
    /// Radius `(log n / L(n)) ε_n` of the Hellinger ball.
    pub fn hellinger_radius(&self) -> f64 {
        (self.n as f64).ln() / self.log_factor * self.epsilon_n
    }

    /// Radius `((log n)² / L(n)) ε_n` of the coefficient ball.
    pub fn l2_radius(&self) -> f64 {
        (self.n as f64).ln().powi(2) / self.log_factor * self.epsilon_n
    }

    /// Default largest model size examined by the posterior.
    pub fn k_max(&self) -> usize {
        match self.case {
            RateCase::Dirac => self.k_star,
            RateCase::Hierarchical => (self.l_n.ceil() as usize).max(1),
        }
    }
}

pub fn rates(gamma: f64, coef: &CoefPrior, model: &ModelPrior, n: usize, epsilon0: f64, l0: f64) -> Result<RateSpec> {
    if !(gamma > 0.5) {
        return Err(invalid(format!("smoothness gamma must exceed 1/2, got {gamma}")));
    }
    if n < 2 {
        return Err(invalid("rates need n >= 2"));
    }
    let nf = n as f64;
    let beta = coef.beta;
    let k_star = k_star(n, beta);
    let (case, epsilon_n, log_factor, l_n) = if model.is_dirac() {
        let eps = if gamma >= beta {
            epsilon0 * nf.ln() * nf.powf(-beta / (2.0 * beta + 1.0))
        } else {
            epsilon0 * nf.powf(-gamma / (2.0 * beta + 1.0))
        };
        (RateCase::Dirac, eps, 1.0, k_star as f64)
    } else {
        let eps = epsilon0 * (nf.ln() / nf).powf(gamma / (2.0 * gamma + 1.0));
        let lf = model.rate_log_factor(nf);
        (RateCase::Hierarchical, eps, lf, l0 * nf * eps * eps / lf)
    };
    Ok(RateSpec { gamma, beta, case, n, epsilon0, l0, epsilon_n, l_n, k_star, log_factor })
}
