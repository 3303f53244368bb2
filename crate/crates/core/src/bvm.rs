//! Bernstein–von Mises diagnostics: the posterior law of
//! `Z_n = √n(Ψ(f) − P_n ψ)` against its Gaussian and Gaussian-mixture limits,
//! posterior concentration around `f₀`, and frequentist coverage.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::basis::{fill, Basis, BasisKind};
use crate::density::{log_sum_exp_weighted, Dataset, Design, DivergenceKind, divergence_from_logs};
use crate::error::{invalid, Error, Result};
use crate::functionals::{empirical_functional, FunctionalEvaluator, FunctionalSpec, MuNk, TrueDensityOracle};
use crate::normal::normal_cdf;
use crate::posterior::PosteriorDraw;
use crate::prior::RateSpec;
use crate::quadrature::QuadratureGrid;
use crate::seed::derive_path;

/// `Ψ(f_θ)` for each draw, caching one evaluator per model size.
pub fn functional_draws(spec: &FunctionalSpec, kind: BasisKind, draws: &[PosteriorDraw]) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(invalid("need at least one posterior draw"));
    }
    let mut evaluators: BTreeMap<usize, FunctionalEvaluator> = BTreeMap::new();
    draws
        .iter()
        .map(|d| {
            if !evaluators.contains_key(&d.k) {
                evaluators.insert(d.k, FunctionalEvaluator::new(spec, kind, d.k)?);
            }
            evaluators[&d.k].eval(&d.theta)
        })
        .collect()
}

/// `Z_n = √n(Ψ(f_θ) − P_n ψ)` for each draw.
pub fn zn_draws(spec: &FunctionalSpec, kind: BasisKind, draws: &[PosteriorDraw], data: &Dataset) -> Result<Vec<f64>> {
    let centre = empirical_functional(spec, data);
    let s = (data.len() as f64).sqrt();
    Ok(functional_draws(spec, kind, draws)?.into_iter().map(|v| s * (v - centre)).collect())
}

/// One mixture component `p(k|Xⁿ) Φ_{V_{0k}}(z + μ_{n,k})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub k: usize,
    pub weight: f64,
    pub v0k: f64,
    pub mu: f64,
}

/// `Σ_k w_k Φ_{V_{0k}}(z + μ_{n,k})`.
pub fn mixture_limit_cdf(components: &[MixtureComponent], z: f64) -> Result<f64> {
    let mut total = 0.0;
    for c in components {
        if !(c.v0k > 0.0) {
            return Err(Error::Numerical(format!("degenerate mixture component k = {} with V0k = {}", c.k, c.v0k)));
        }
        total += c.weight * normal_cdf(z + c.mu, c.v0k);
    }
    Ok(total)
}

/// Kolmogorov–Smirnov distance between the empirical law of `sample` and `cdf`,
/// checking both one-sided deviations at every jump.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let weighted: Vec<(f64, f64)> = sample.iter().map(|&x| (1.0, x)).collect();
    ks_distance_weighted(&weighted, cdf)
}

/// KS distance for a weighted sample `(weight, value)`; weights are normalised.
pub fn ks_distance_weighted(sample: &[(f64, f64)], cdf: impl Fn(f64) -> f64) -> f64 {
    if sample.is_empty() {
        return 1.0;
    }
    let mut s: Vec<(f64, f64)> = sample.to_vec();
    s.sort_by(|a, b| a.1.total_cmp(&b.1));
    let total: f64 = s.iter().map(|p| p.0).sum();
    let mut acc = 0.0;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < s.len() {
        let x = s[i].1;
        let before = acc / total;
        while i < s.len() && s[i].1 == x {
            acc += s[i].0;
            i += 1;
        }
        let after = acc / total;
        let f = cdf(x);
        d = d.max((after - f).abs()).max((f - before).abs());
    }
    d.min(1.0)
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed credible interval at `level` from posterior draws.
pub fn credible_interval(values: &[f64], level: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let a = 0.5 * (1.0 - level);
    (quantile_type7(&v, a), quantile_type7(&v, 1.0 - a))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvMReport {
    pub n: usize,
    pub z_grid: Vec<f64>,
    pub empirical_cdf: Vec<f64>,
    pub gaussian_cdf: Vec<f64>,
    pub mixture_cdf: Vec<f64>,
    pub ks_gaussian: f64,
    pub ks_mixture: f64,
    pub v0: f64,
    pub components: Vec<MixtureComponent>,
    /// Bias and empirical-process parts of each `μ_{n,k}`.
    pub mu_parts: Vec<MuNk>,
    /// Number of `Z_n` values behind the empirical CDF.
    pub draws: usize,
}

/// Compare weighted `Z_n` values `(weight, z)` with `Φ_{V₀}` and the mixture.
pub fn bvm_report(n: usize, zn: &[(f64, f64)], v0: f64, components: Vec<MixtureComponent>, mu_parts: Vec<MuNk>) -> Result<BvMReport> {
    if zn.is_empty() {
        return Err(invalid("need at least one Z_n draw"));
    }
    if !(v0 > 0.0) {
        return Err(invalid(format!("V0 must be positive, got {v0}")));
    }
    mixture_limit_cdf(&components, 0.0)?;
    let ks_gaussian = ks_distance_weighted(zn, |z| normal_cdf(z, v0));
    let ks_mixture = ks_distance_weighted(zn, |z| mixture_limit_cdf(&components, z).expect("validated"));
    let sd = v0.sqrt();
    let z_grid: Vec<f64> = (0..=200).map(|i| -5.0 * sd + 10.0 * sd * i as f64 / 200.0).collect();
    let mut sorted: Vec<(f64, f64)> = zn.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let total: f64 = sorted.iter().map(|p| p.0).sum();
    let mut cum = Vec::with_capacity(sorted.len());
    let mut acc = 0.0;
    for p in &sorted {
        acc += p.0;
        cum.push(acc / total);
    }
    let empirical_cdf = z_grid
        .iter()
        .map(|&z| {
            let i = sorted.partition_point(|p| p.1 <= z);
            if i == 0 {
                0.0
            } else {
                cum[i - 1].min(1.0)
            }
        })
        .collect();
    let gaussian_cdf = z_grid.iter().map(|&z| normal_cdf(z, v0)).collect();
    let mixture_cdf = z_grid.iter().map(|&z| mixture_limit_cdf(&components, z).expect("validated")).collect();
    Ok(BvMReport {
        n,
        z_grid,
        empirical_cdf,
        gaussian_cdf,
        mixture_cdf,
        ks_gaussian,
        ks_mixture,
        v0,
        components,
        mu_parts,
        draws: zn.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    /// `(log n / L(n)) ε_n`
    pub hellinger_threshold: f64,
    /// `((log n)² / L(n)) ε_n`
    pub l2_threshold: f64,
    pub prob_hellinger: f64,
    pub prob_l2: f64,
    /// `(radius, P[h ≤ r], P[‖θ − θ₀‖₂ ≤ r])`
    pub radius_table: Vec<(f64, f64, f64)>,
    pub hellinger: Vec<f64>,
    pub l2: Vec<f64>,
    /// `∫ |log(f/f₀)|³ (f₀ + f)` per draw.
    pub a2: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ConcentrationReport {
    pub fn median_hellinger(&self) -> f64 {
        weighted_median(&self.hellinger, &self.weights)
    }

    pub fn mean_a2(&self) -> f64 {
        let t: f64 = self.weights.iter().sum();
        self.a2.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>() / t
    }
}

fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    let mut pairs: Vec<(f64, f64)> = values.iter().cloned().zip(weights.iter().cloned()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (v, w) in &pairs {
        acc += w;
        if acc >= 0.5 * total {
            return *v;
        }
    }
    pairs.last().map_or(f64::NAN, |p| p.0)
}

fn mass_within(values: &[f64], weights: &[f64], r: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    values.iter().zip(weights).filter(|(v, _)| **v <= r).map(|(_, w)| w).sum::<f64>() / total
}

/// Distances of weighted draws from `f₀` and posterior masses of the
/// contraction balls.
pub fn concentration_probe(
    draws: &[(f64, PosteriorDraw)],
    oracle: &TrueDensityOracle,
    rate: &RateSpec,
    radii: &[f64],
) -> Result<ConcentrationReport> {
    if draws.is_empty() {
        return Err(invalid("need at least one posterior draw"));
    }
    let kind = oracle.kind();
    let k_top = draws.iter().map(|d| d.1.k).max().unwrap().max(oracle.j_max()).max(1);
    let grid = Arc::new(QuadratureGrid::for_basis(&Basis::new(kind, k_top)));
    let log_f0 = {
        let j = oracle.j_max();
        let mut buf = vec![0.0; j];
        let t: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&x| {
                fill(kind, x, &mut buf);
                buf.iter().zip(oracle.theta0()).map(|(p, t)| p * t).sum()
            })
            .collect();
        let c = log_sum_exp_weighted(&t, grid.weights())?;
        t.into_iter().map(|v| v - c).collect::<Vec<f64>>()
    };
    let mut designs: BTreeMap<usize, Design> = BTreeMap::new();
    for d in draws {
        designs.entry(d.1.k).or_insert_with(|| Design::new(kind, d.1.k, grid.clone()));
    }
    let theta0 = oracle.theta0();
    let rows: Vec<(f64, f64, f64)> = draws
        .par_iter()
        .map(|(_, d)| {
            let design = &designs[&d.k];
            let mut t = Vec::with_capacity(grid.len());
            design.exponent(&d.theta, &mut t);
            let c = log_sum_exp_weighted(&t, grid.weights())?;
            t.iter_mut().for_each(|v| *v -= c);
            let h = divergence_from_logs(&log_f0, &t, grid.weights(), DivergenceKind::Hellinger)?;
            let a2: f64 = log_f0
                .iter()
                .zip(&t)
                .zip(grid.weights())
                .map(|((a, b), w)| w * (b - a).abs().powi(3) * (a.exp() + b.exp()))
                .sum();
            let len = d.k.max(theta0.len());
            let l2 = (0..len)
                .map(|i| (d.theta.get(i).copied().unwrap_or(0.0) - theta0.get(i).copied().unwrap_or(0.0)).powi(2))
                .sum::<f64>()
                .sqrt();
            Ok((h, l2, a2))
        })
        .collect::<Result<_>>()?;
    let weights: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let hellinger: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let l2: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let a2: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let hellinger_threshold = rate.hellinger_radius();
    let l2_threshold = rate.l2_radius();
    let mut sorted_radii = radii.to_vec();
    sorted_radii.sort_by(f64::total_cmp);
    let radius_table = sorted_radii
        .iter()
        .map(|&r| (r, mass_within(&hellinger, &weights, r), mass_within(&l2, &weights, r)))
        .collect();
    Ok(ConcentrationReport {
        hellinger_threshold,
        l2_threshold,
        prob_hellinger: mass_within(&hellinger, &weights, hellinger_threshold),
        prob_l2: mass_within(&l2, &weights, l2_threshold),
        radius_table,
        hellinger,
        l2,
        a2,
        weights,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageResult {
    pub level: f64,
    pub truth: f64,
    pub intervals: Vec<(f64, f64)>,
    pub hits: Vec<bool>,
    pub coverage: f64,
    pub widths: Vec<f64>,
}

/// Run `replicates` independent replicates, each producing posterior draws of
/// `Ψ(f)` from its own derived seed, and report how often the equal-tailed
/// interval at `level` contains `truth`.
pub fn coverage_experiment<F>(replicates: usize, level: f64, truth: f64, seed: u64, replicate: F) -> Result<CoverageResult>
where
    F: Fn(usize, u64) -> Result<Vec<f64>> + Sync,
{
    if replicates < 20 {
        return Err(invalid("coverage needs at least 20 replicates"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(invalid("credible level must lie in (0, 1)"));
    }
    let intervals: Vec<(f64, f64)> = (0..replicates)
        .into_par_iter()
        .map(|r| replicate(r, derive_path(seed, &[0x636f_7665_7200, r as u64])).map(|d| credible_interval(&d, level)))
        .collect::<Result<_>>()?;
    let hits: Vec<bool> = intervals.iter().map(|&(a, b)| a <= truth && truth <= b).collect();
    let coverage = hits.iter().filter(|h| **h).count() as f64 / replicates as f64;
    let widths = intervals.iter().map(|(a, b)| b - a).collect();
    Ok(CoverageResult { level, truth, intervals, hits, coverage, widths })
}

/// Binomial band `p ± z √(p(1−p)/m)` used to judge a coverage fraction.
pub fn binomial_band(p: f64, m: usize, z: f64) -> (f64, f64) {
    let s = (p * (1.0 - p) / m as f64).sqrt();
    (p - z * s, p + z * s)
}
