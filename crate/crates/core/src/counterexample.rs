//! A truth with slowly decaying Fourier coefficients for which the bias of
//! the posterior of `F(x₀)` stays of order `√(log n)`:
//! `θ₀` puts `1/[j^{γ+1/2} √(log j) log log j]` on the sine function of
//! frequency `j ≥ k₀` and nothing on the cosines.

use std::f64::consts::PI;

use crate::basis::BasisKind;
use crate::error::{invalid, Result};
use crate::functionals::TrueDensityOracle;

/// Explicit terms summed before the integral remainder takes over.
const EXPLICIT_TERMS: usize = 250_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowDecaySpec {
    pub gamma: f64,
    /// First active frequency (at least 3).
    pub k0: usize,
    /// Number of basis coefficients kept in the oracle.
    pub j_max: usize,
}

impl SlowDecaySpec {
    pub fn new(gamma: f64, k0: usize, j_max: usize) -> Result<Self> {
        if !(gamma > 0.5) {
            return Err(invalid(format!("gamma must exceed 1/2, got {gamma}")));
        }
        if k0 < 3 {
            return Err(invalid("k0 must be at least 3 so that log log j is positive"));
        }
        if j_max <= 2 * k0 - 1 {
            return Err(invalid(format!("j_max = {j_max} keeps no coefficient at frequency k0 = {k0}")));
        }
        Ok(Self { gamma, k0, j_max })
    }

    /// Coefficient of the sine function of frequency `j`.
    pub fn sine_coefficient(&self, j: usize) -> f64 {
        if j < self.k0 {
            return 0.0;
        }
        slow_coefficient(self.gamma, j as f64)
    }

    /// `θ₀` over basis indices `1..=j_max`.
    pub fn theta0(&self) -> Vec<f64> {
        (1..=self.j_max).map(|l| if l % 2 == 1 { self.sine_coefficient(l.div_ceil(2)) } else { 0.0 }).collect()
    }

    /// Highest frequency kept.
    pub fn last_frequency(&self) -> usize {
        self.j_max.div_ceil(2)
    }

    /// `√2 Σ_{j > J} θ₀ⱼ`, bounding the sup-norm of the dropped part of `log f₀`.
    pub fn truncation_sup_bound(&self) -> f64 {
        let start = (self.last_frequency() + 1).max(self.k0);
        2f64.sqrt() * tail_sum(start, |x| slow_coefficient(self.gamma, x), self.gamma - 0.5)
    }

    /// `Σ_{j ≥ J₁} θ₀ⱼ²`.
    pub fn tail_l2_sq(&self, j1: usize) -> f64 {
        let start = j1.max(self.k0);
        tail_sum(start, |x| slow_coefficient(self.gamma, x).powi(2), 2.0 * self.gamma)
    }

    /// `[2γ J₁^{2γ} log J₁ (log log J₁)²]⁻¹`, the leading-order value of [`Self::tail_l2_sq`].
    pub fn tail_l2_sq_leading(&self, j1: usize) -> f64 {
        let j = j1 as f64;
        1.0 / (2.0 * self.gamma * j.powf(2.0 * self.gamma) * j.ln() * j.ln().ln().powi(2))
    }

    /// `Σ_{k₀ ≤ j ≤ J} θ₀ⱼ² j^{2s}`.
    pub fn sobolev_partial_sum(&self, s: f64, last: usize) -> f64 {
        (self.k0..=last).map(|j| self.sine_coefficient(j).powi(2) * (j as f64).powf(2.0 * s)).sum()
    }
}

fn slow_coefficient(gamma: f64, j: f64) -> f64 {
    1.0 / (j.powf(gamma + 0.5) * j.ln().sqrt() * j.ln().ln())
}

/// `Σ_{j ≥ start} term(j)` for a term decaying like `j^{−1−decay}` times slowly
/// varying factors: explicit summation, then the integral from the cutoff,
/// computed by Gauss–Legendre in `u = log x`.
fn tail_sum(start: usize, term: impl Fn(f64) -> f64, decay: f64) -> f64 {
    let cutoff = start.max(EXPLICIT_TERMS);
    let mut s = 0.0;
    // Sum small terms first for accuracy.
    for j in (start..cutoff).rev() {
        s += term(j as f64);
    }
    s + integral_remainder(cutoff as f64 - 0.5, &term, decay)
}

/// `∫_a^∞ term(x) dx` by the substitution `x = a e^u` on `u ∈ [0, U]`.
fn integral_remainder(a: f64, term: &impl Fn(f64) -> f64, decay: f64) -> f64 {
    let (nodes, weights) = crate::quadrature::gauss_legendre(16);
    // keep a·e^U inside f64 range; past it the term is a power times slowly varying factors
    let span = (60.0 / decay).min(690.0 - a.ln());
    let panels = 64;
    let h = span / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = p as f64 * h;
        for (t, w) in nodes.iter().zip(&weights) {
            let u = lo + 0.5 * h * (t + 1.0);
            let x = a * u.exp();
            total += 0.5 * h * w * x * term(x);
        }
    }
    let end = a * span.exp();
    total + end * term(end) / decay
}

/// Truth with `θ₀` from `spec`, truncated at `j_max`, exactly normalised on its grid.
pub fn build_oracle(spec: &SlowDecaySpec) -> Result<TrueDensityOracle> {
    TrueDensityOracle::truncated(BasisKind::Fourier, spec.theta0(), spec.truncation_sup_bound(), Some(spec.gamma))
}

/// [`build_oracle`], failing when the dropped tail exceeds `tolerance` in sup-norm.
pub fn build_oracle_with_tolerance(spec: &SlowDecaySpec, tolerance: f64) -> Result<TrueDensityOracle> {
    let bound = spec.truncation_sup_bound();
    if bound > tolerance {
        return Err(invalid(format!(
            "j_max = {} leaves a tail bound {bound:.3e} above the tolerance {tolerance:.3e}",
            spec.j_max
        )));
    }
    build_oracle(spec)
}

/// `k_n = n^{1/(2γ+1)} (log n)^{−2/(2γ+1)} (log log n)^{−2/(2γ+1)}`.
pub fn k_n(gamma: f64, n: usize) -> f64 {
    let nf = n as f64;
    let e = 1.0 / (2.0 * gamma + 1.0);
    nf.powf(e) * nf.ln().powf(-2.0 * e) * nf.ln().ln().powf(-2.0 * e)
}

/// `∫₀^{x₀} φ_{2j−1} = √2 (1 − cos 2πjx₀)/(2πj)`.
pub fn cdf_sine_coefficient(j: usize, x0: f64) -> f64 {
    let jf = j as f64;
    2f64.sqrt() * (1.0 - (2.0 * PI * jf * x0).cos()) / (2.0 * PI * jf)
}

/// The bias series with its integral-remainder estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    /// Part contributed by the integral remainder beyond the explicit terms.
    pub remainder: f64,
}

/// `μ_{n,k,1} = √n Σ_{λ > k} ψ_{c,λ} θ₀λ` at `x₀ = 1/4` (Lebesgue coefficients,
/// no truncation). Only sine indices `λ = 2j − 1` contribute; `k` is a basis index.
pub fn mu_nk1_series(gamma: f64, k0: usize, k: usize, n: usize) -> Result<SeriesValue> {
    mu_nk1_series_with_cutoff(gamma, k0, k, n, EXPLICIT_TERMS)
}

/// [`mu_nk1_series`] with an explicit summation cutoff, for remainder checks.
pub fn mu_nk1_series_with_cutoff(gamma: f64, k0: usize, k: usize, n: usize, cutoff: usize) -> Result<SeriesValue> {
    let spec = SlowDecaySpec::new(gamma, k0, 2 * k0)?;
    // λ = 2j − 1 > k  ⇔  j > (k + 1)/2
    let start = ((k + 1) / 2 + 1).max(k0);
    let cutoff = cutoff.max(start + 4);
    // 1 − cos(πj/2) cycles through 0, 1, 2, 1 for j ≡ 0, 1, 2, 3 mod 4.
    const CYCLE: [f64; 4] = [0.0, 1.0, 2.0, 1.0];
    let c = 2f64.sqrt() / (2.0 * PI);
    let mut s = 0.0;
    for j in (start..cutoff).rev() {
        let f = CYCLE[j % 4];
        if f != 0.0 {
            s += c * f / j as f64 * spec.sine_coefficient(j);
        }
    }
    // the cycle averages to one
    let remainder = integral_remainder(cutoff as f64 - 0.5, &|x: f64| c / x * slow_coefficient(gamma, x), gamma + 0.5);
    let root = (n as f64).sqrt();
    Ok(SeriesValue { value: root * (s + remainder), remainder: root * remainder })
}

/// The bias series restricted to the coefficients kept by `spec`; zero once
/// `k ≥ j_max`.
pub fn mu_nk1_truncated(spec: &SlowDecaySpec, k: usize, n: usize) -> f64 {
    let s: f64 = (k + 1..=spec.j_max)
        .filter(|l| l % 2 == 1)
        .map(|l| {
            let j = l.div_ceil(2);
            cdf_sine_coefficient(j, 0.25) * spec.sine_coefficient(j)
        })
        .sum();
    (n as f64).sqrt() * s
}

/// The bias series written with `4j + 3` denominators, summed over
/// `j ≥ k/4 − 1/2`; differs from [`mu_nk1_series`] by a bounded factor.
pub fn mu_nk1_display(gamma: f64, k: usize, n: usize) -> f64 {
    let start = ((k as f64 / 4.0 - 0.5).ceil().max(0.0)) as usize;
    let term = |j: f64| {
        let m = 4.0 * j + 3.0;
        1.0 / (m.powf(gamma + 1.5) * m.ln().sqrt() * m.ln().ln())
    };
    let cutoff = start.max(EXPLICIT_TERMS / 4);
    let mut s = 0.0;
    for j in (start..cutoff).rev() {
        s += term(j as f64);
    }
    (n as f64).sqrt() * (s + integral_remainder(cutoff as f64 - 0.5, &term, gamma + 0.5))
}

/// `√n k^{−γ−1/2} / (√(log k) log log k)`, the order of the bias series.
pub fn bias_order(gamma: f64, k: usize, n: usize) -> f64 {
    let kf = k as f64;
    (n as f64).sqrt() * kf.powf(-gamma - 0.5) / (kf.ln().sqrt() * kf.ln().ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasFloor {
    pub n: usize,
    pub k_n: f64,
    /// `(k, μ_{n,k,1})` for `4 ≤ k ≤ max(4, ⌊k_n⌋)`.
    pub values: Vec<(usize, f64)>,
    pub min_mu: f64,
    pub sqrt_log_n: f64,
    pub ratio: f64,
    pub satisfied: bool,
}

/// Minimum of `μ_{n,k,1}` over `4 ≤ k ≤ k_n` against `√(log n)`.
pub fn bias_floor_check(gamma: f64, k0: usize, n: usize) -> Result<BiasFloor> {
    if n < 100 {
        return Err(invalid("the bias floor check needs n >= 100"));
    }
    let kn = k_n(gamma, n);
    let top = (kn.floor() as usize).max(4);
    let values: Vec<(usize, f64)> =
        (4..=top).map(|k| mu_nk1_series(gamma, k0, k, n).map(|v| (k, v.value))).collect::<Result<_>>()?;
    let min_mu = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let sqrt_log_n = (n as f64).ln().sqrt();
    let ratio = min_mu / sqrt_log_n;
    Ok(BiasFloor { n, k_n: kn, values, min_mu, sqrt_log_n, ratio, satisfied: ratio > 0.0 })
}

/// Growth of `μ_{n,k_n*,1}` in the Dirac case with `γ < β`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracGrowth {
    /// `(n, k_n*, μ_{n,k_n*,1})`
    pub rows: Vec<(usize, usize, f64)>,
    /// Least-squares slope of `log[μ √(log n) log log n]` against `log n`.
    pub slope: f64,
    /// `(β − γ)/(4β + 2)`
    pub stated_exponent: f64,
    /// `(β − γ)/(2β + 1)`, the exponent of `√n (k_n*)^{−γ−1/2}`.
    pub order_exponent: f64,
}

pub fn dirac_growth(gamma: f64, beta: f64, k0: usize, ns: &[usize]) -> Result<DiracGrowth> {
    if ns.len() < 2 {
        return Err(invalid("need at least two sample sizes"));
    }
    let rows: Vec<(usize, usize, f64)> = ns
        .iter()
        .map(|&n| {
            let k = crate::prior::k_star(n, beta);
            mu_nk1_series(gamma, k0, k, n).map(|v| (n, k, v.value))
        })
        .collect::<Result<_>>()?;
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|&(n, _, mu)| {
            let l = (n as f64).ln();
            (l, (mu * l.sqrt() * l.ln()).ln())
        })
        .collect();
    Ok(DiracGrowth {
        rows,
        slope: ls_slope(&pts),
        stated_exponent: (beta - gamma) / (4.0 * beta + 2.0),
        order_exponent: (beta - gamma) / (2.0 * beta + 1.0),
    })
}

/// Ordinary least-squares slope.
pub fn ls_slope(pts: &[(f64, f64)]) -> f64 {
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>()
}
