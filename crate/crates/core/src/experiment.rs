//! End-to-end pipelines: simulate from a truth, fit the posterior, and reduce
//! the draws to BvM, concentration and coverage summaries with CSV tables.

use crate::basis::BasisKind;
use crate::bvm::{
    bvm_report, concentration_probe, coverage_experiment, functional_draws, zn_draws, BvMReport, ConcentrationReport,
    CoverageResult, MixtureComponent,
};
use crate::counterexample::{build_oracle, SlowDecaySpec};
use crate::density::Dataset;
use crate::error::{invalid, Result};
use crate::functionals::{FunctionalSpec, TrueDensityOracle};
use crate::io::{fmt_f64, Table};
use crate::posterior::{fit_posterior, Posterior, PosteriorConfig, PosteriorDraw};
use crate::prior::RateSpec;
use crate::seed::{derive_path, rng_from_seed};

pub const DATA_STREAM: u64 = 0x6461_7461;
pub const FIT_STREAM: u64 = 0x6669_74;
pub const DRAW_STREAM: u64 = 0x6472_6177;

/// Weight below which a model is left out of the mixture and of the projections.
pub const COMPONENT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    Uniform,
    /// `θ₀` given in full, optionally tagged with its smoothness.
    Finite { theta0: Vec<f64>, gamma: Option<f64> },
    Counterexample(SlowDecaySpec),
}

impl Truth {
    pub fn oracle(&self, kind: BasisKind) -> Result<TrueDensityOracle> {
        match self {
            Truth::Uniform => Ok(TrueDensityOracle::uniform(kind)),
            Truth::Finite { theta0, gamma } => TrueDensityOracle::finite(kind, theta0.clone(), *gamma),
            Truth::Counterexample(spec) => {
                if kind != BasisKind::Fourier {
                    return Err(invalid("the counter-example truth is defined on the Fourier basis"));
                }
                build_oracle(spec)
            }
        }
    }
}

/// `n` draws from `f₀` on the data stream of `seed`.
pub fn simulate(oracle: &TrueDensityOracle, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("n must be positive"));
    }
    let mut rng = rng_from_seed(derive_path(seed, &[DATA_STREAM]));
    oracle.density().sample(&mut rng, n)
}

/// Posterior fit on the fit stream of `seed`.
pub fn fit(data: &Dataset, config: &PosteriorConfig, seed: u64) -> Result<Posterior> {
    fit_posterior(data, config, derive_path(seed, &[FIT_STREAM]))
}

#[derive(Debug, Clone)]
pub struct BvmRun {
    pub posterior: Posterior,
    pub report: BvMReport,
}

/// Posterior of `Z_n` against `N(0, V₀)` and the mixture built from `V_{0k}`, `μ_{n,k}`.
pub fn bvm_run(data: &Dataset, oracle: &TrueDensityOracle, spec: &FunctionalSpec, config: &PosteriorConfig, seed: u64) -> Result<BvmRun> {
    spec.validate()?;
    let posterior = fit(data, config, seed)?;
    let report = bvm_from_posterior(&posterior, data, oracle, spec)?;
    Ok(BvmRun { posterior, report })
}

pub fn bvm_from_posterior(posterior: &Posterior, data: &Dataset, oracle: &TrueDensityOracle, spec: &FunctionalSpec) -> Result<BvMReport> {
    let weighted = posterior.weighted_draws();
    let draws: Vec<PosteriorDraw> = weighted.iter().map(|w| w.1.clone()).collect();
    let zn = zn_draws(spec, posterior.kind, &draws, data)?;
    let zn: Vec<(f64, f64)> = weighted.iter().map(|w| w.0).zip(zn).collect();
    let active: Vec<(usize, f64)> = posterior
        .weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > COMPONENT_FLOOR)
        .map(|(i, w)| (i + 1, *w))
        .collect();
    let k_top = active.iter().map(|a| a.0).max().unwrap_or(1);
    let ws = oracle.workspace(spec, k_top)?;
    let total: f64 = active.iter().map(|a| a.1).sum();
    let mut components = Vec::with_capacity(active.len());
    let mut mu_parts = Vec::with_capacity(active.len());
    for &(k, w) in &active {
        let p = ws.project(k)?;
        let mu = p.mu_nk(data);
        components.push(MixtureComponent { k, weight: w / total, v0k: p.v0k, mu: mu.value });
        mu_parts.push(mu);
    }
    bvm_report(data.len(), &zn, ws.v0(), components, mu_parts)
}

/// Hellinger and `ℓ²` concentration of the fitted posterior around `f₀`.
pub fn concentration_run(posterior: &Posterior, oracle: &TrueDensityOracle, rate: &RateSpec, radii: &[f64]) -> Result<ConcentrationReport> {
    concentration_probe(&posterior.weighted_draws(), oracle, rate, radii)
}

/// `m` posterior draws of `Ψ(f)` resampled on the draw stream of `seed`.
pub fn functional_sample(posterior: &Posterior, spec: &FunctionalSpec, m: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = rng_from_seed(derive_path(seed, &[DRAW_STREAM]));
    let draws = posterior.draws(m, &mut rng)?;
    functional_draws(spec, posterior.kind, &draws)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageSettings {
    pub n: usize,
    pub replicates: usize,
    pub level: f64,
    /// Posterior draws of `Ψ(f)` per replicate.
    pub draws: usize,
}

/// Frequentist coverage of equal-tailed credible intervals for `Ψ(f₀)`.
pub fn coverage_run(
    oracle: &TrueDensityOracle,
    spec: &FunctionalSpec,
    config: &PosteriorConfig,
    settings: &CoverageSettings,
    seed: u64,
) -> Result<CoverageResult> {
    spec.validate()?;
    let truth = oracle.workspace(spec, 1)?.psi_mean();
    coverage_experiment(settings.replicates, settings.level, truth, seed, |_, s| {
        let data = simulate(oracle, settings.n, s)?;
        let posterior = fit(&data, config, s)?;
        functional_sample(&posterior, spec, settings.draws, s)
    })
}

pub fn bvm_cdf_table(report: &BvMReport) -> Table {
    let mut t = Table::new(["z", "empirical_cdf", "gaussian_cdf", "mixture_cdf"]);
    for i in 0..report.z_grid.len() {
        t.push_floats(&[report.z_grid[i], report.empirical_cdf[i], report.gaussian_cdf[i], report.mixture_cdf[i]]);
    }
    t
}

pub fn bvm_component_table(report: &BvMReport) -> Table {
    let mut t = Table::new(["k", "weight", "v0k", "mu_nk", "mu_bias", "mu_empirical"]);
    for (c, m) in report.components.iter().zip(&report.mu_parts) {
        t.push(vec![
            c.k.to_string(),
            fmt_f64(c.weight),
            fmt_f64(c.v0k),
            fmt_f64(c.mu),
            fmt_f64(m.first_term),
            fmt_f64(m.second_term),
        ]);
    }
    t
}

pub fn bvm_summary_table(report: &BvMReport) -> Table {
    let mut t = Table::new(["n", "draws", "v0", "ks_gaussian", "ks_mixture"]);
    t.push(vec![
        report.n.to_string(),
        report.draws.to_string(),
        fmt_f64(report.v0),
        fmt_f64(report.ks_gaussian),
        fmt_f64(report.ks_mixture),
    ]);
    t
}

pub fn model_table(posterior: &Posterior) -> Table {
    let mut t = Table::new([
        "k",
        "weight",
        "log_evidence",
        "converged",
        "newton_iters",
        "gradient_norm",
        "acceptance_rate",
        "min_ess",
        "max_rhat",
    ]);
    for (fit, (w, chain)) in posterior.fits.iter().zip(posterior.weights.iter().zip(&posterior.chains)) {
        let (acc, ess, rhat) = match chain {
            Some(c) => (fmt_f64(c.diagnostics.acceptance_rate), fmt_f64(c.diagnostics.min_ess()), fmt_f64(c.diagnostics.max_rhat())),
            None => (String::new(), String::new(), String::new()),
        };
        t.push(vec![
            fit.k.to_string(),
            fmt_f64(*w),
            fmt_f64(fit.log_evidence),
            fit.converged.to_string(),
            fit.newton_iters.to_string(),
            fmt_f64(fit.gradient_norm),
            acc,
            ess,
            rhat,
        ]);
    }
    t
}

pub fn concentration_table(report: &ConcentrationReport) -> Table {
    let mut t = Table::new(["radius", "prob_hellinger", "prob_l2"]);
    for &(r, h, l) in &report.radius_table {
        t.push_floats(&[r, h, l]);
    }
    t
}

pub fn coverage_table(result: &CoverageResult) -> Table {
    let mut t = Table::new(["replicate", "lower", "upper", "width", "hit"]);
    for (i, ((lo, hi), hit)) in result.intervals.iter().zip(&result.hits).enumerate() {
        t.push(vec![i.to_string(), fmt_f64(*lo), fmt_f64(*hi), fmt_f64(hi - lo), hit.to_string()]);
    }
    t
}
