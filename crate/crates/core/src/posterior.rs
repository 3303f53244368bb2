//! Posterior inference over `(k, θ)`: Newton modes, Laplace evidence,
//! adaptive random-walk Metropolis within each model, posterior model
//! weights, and an importance-sampling evidence oracle.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::basis::{Basis, BasisKind};
use crate::density::{Dataset, Design, SufficientStats};
use crate::error::{invalid, Error, Result};
use crate::prior::{CoefPrior, ModelPrior};
use crate::quadrature::QuadratureGrid;
use crate::seed::{derive_path, stream};

const MAX_NEWTON_ITERS: usize = 200;
const GRADIENT_TOL: f64 = 1e-8;
const RIDGE_START: f64 = 1e-8;
const RIDGE_MAX: f64 = 1e-2;

/// `l_n(θ) + log π_k(θ)` for one model size.
#[derive(Debug, Clone)]
pub struct Objective {
    design: Design,
    stats: SufficientStats,
    coef: CoefPrior,
}

impl Objective {
    pub fn new(design: Design, stats: SufficientStats, coef: CoefPrior) -> Result<Self> {
        if stats.k() != design.k() {
            return Err(invalid("sufficient statistics and design disagree on k"));
        }
        Ok(Self { design, stats, coef })
    }

    /// Objective for `data` on the standard grid of the size-`k` model.
    pub fn for_data(kind: BasisKind, k: usize, data: Option<&Dataset>, coef: CoefPrior) -> Self {
        let stats = match data {
            Some(d) => SufficientStats::from_data(kind, k, d),
            None => SufficientStats::empty(k),
        };
        Self { design: Design::standard(kind, k), stats, coef }
    }

    pub fn k(&self) -> usize {
        self.design.k()
    }

    pub fn n(&self) -> usize {
        self.stats.n
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn coef(&self) -> &CoefPrior {
        &self.coef
    }

    /// `l_n(θ) = n(Σ θ_λ P_n φ_λ − c(θ))`.
    pub fn loglik(&self, theta: &[f64]) -> Result<f64> {
        if self.stats.n == 0 {
            return Ok(0.0);
        }
        let c = self.design.log_partition(theta)?;
        let dot: f64 = theta.iter().zip(&self.stats.mean_phi).map(|(t, s)| t * s).sum();
        Ok(self.stats.n as f64 * (dot - c))
    }

    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.loglik(theta)? + self.coef.log_density(theta))
    }

    /// Value, gradient, and negative Hessian.
    pub fn derivatives(&self, theta: &[f64]) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let k = self.k();
        let nf = self.stats.n as f64;
        let (pg, pc) = self.coef.gradient_and_curvature(theta);
        let mut grad = DVector::from_vec(pg);
        let mut neg_h = DMatrix::from_diagonal(&DVector::from_iterator(k, pc.iter().map(|c| -c)));
        let mut value = self.coef.log_density(theta);
        if self.stats.n > 0 {
            let m = self.design.moments(theta, true)?;
            let dot: f64 = theta.iter().zip(&self.stats.mean_phi).map(|(t, s)| t * s).sum();
            value += nf * (dot - m.log_partition);
            for l in 0..k {
                grad[l] += nf * (self.stats.mean_phi[l] - m.mean[l]);
            }
            neg_h += m.cov.expect("covariance requested") * nf;
        }
        Ok((value, grad, neg_h))
    }
}

/// Mode, curvature and Laplace evidence of one model.
#[derive(Debug, Clone)]
pub struct ModelFit {
    pub k: usize,
    pub mode: Vec<f64>,
    /// `−∂²[l_n + log π_k]` at the mode, including any ridge.
    pub neg_hessian: DMatrix<f64>,
    /// `[l_n + log π_k](θ̂)`.
    pub log_objective: f64,
    /// Laplace estimate of `log ∫ exp(l_n) dπ_k`, without `log p(k)`.
    pub log_evidence: f64,
    pub newton_iters: usize,
    pub gradient_norm: f64,
    pub ridge: f64,
    pub converged: bool,
}

impl ModelFit {
    /// Inverse of the negative Hessian, the Laplace posterior covariance.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        Cholesky::new(self.neg_hessian.clone()).map(|c| c.inverse())
    }
}

fn cholesky_with_ridge(h: &DMatrix<f64>) -> Option<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    if let Some(c) = Cholesky::new(h.clone()) {
        return Some((c, 0.0));
    }
    let scale = h.diagonal().iter().fold(1.0f64, |a, b| a.max(b.abs()));
    let mut ridge = RIDGE_START;
    while ridge <= RIDGE_MAX * (1.0 + 1e-12) {
        let mut m = h.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += ridge * scale;
        }
        if let Some(c) = Cholesky::new(m) {
            return Some((c, ridge * scale));
        }
        ridge *= 10.0;
    }
    None
}

/// Maximise the objective by damped Newton steps from `θ = 0`.
pub fn fit_model(obj: &Objective) -> Result<ModelFit> {
    let k = obj.k();
    if k == 0 {
        return Ok(ModelFit {
            k,
            mode: Vec::new(),
            neg_hessian: DMatrix::zeros(0, 0),
            log_objective: 0.0,
            log_evidence: 0.0,
            newton_iters: 0,
            gradient_norm: 0.0,
            ridge: 0.0,
            converged: true,
        });
    }
    let mut theta = vec![0.0; k];
    let (mut value, mut grad, mut neg_h) = obj.derivatives(&theta)?;
    let mut iters = 0;
    let mut converged = false;
    let mut ridge_used = 0.0f64;
    while iters < MAX_NEWTON_ITERS {
        if grad.amax() < GRADIENT_TOL {
            converged = true;
            break;
        }
        iters += 1;
        let Some((chol, ridge)) = cholesky_with_ridge(&neg_h) else {
            break;
        };
        ridge_used = ridge_used.max(ridge);
        let step = chol.solve(&grad);
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            if let Ok(v) = obj.value(&trial) {
                if v >= value + 1e-4 * t * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            t *= 0.5;
        }
        let Some(next) = accepted else {
            // No ascent possible at working precision.
            converged = grad.amax() < 1e3 * GRADIENT_TOL;
            break;
        };
        theta = next;
        (value, grad, neg_h) = obj.derivatives(&theta)?;
    }
    let (log_evidence, ridge) = match cholesky_with_ridge(&neg_h) {
        Some((chol, ridge)) => {
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            (value + 0.5 * k as f64 * (2.0 * PI).ln() - 0.5 * log_det, ridge)
        }
        None => (f64::NAN, f64::NAN),
    };
    if ridge > 0.0 {
        for i in 0..k {
            neg_h[(i, i)] += ridge;
        }
    }
    Ok(ModelFit {
        k,
        mode: theta,
        neg_hessian: neg_h,
        log_objective: value,
        log_evidence,
        newton_iters: iters,
        gradient_norm: grad.amax(),
        ridge: ridge_used.max(if ridge.is_nan() { 0.0 } else { ridge }),
        converged: converged && log_evidence.is_finite(),
    })
}

/// [`fit_model`] on `data` with an explicit grid.
pub fn map_estimate(k: usize, data: &Dataset, coef: &CoefPrior, kind: BasisKind, grid: Arc<QuadratureGrid>) -> Result<ModelFit> {
    let obj = Objective::new(Design::new(kind, k, grid), SufficientStats::from_data(kind, k, data), *coef)?;
    fit_model(&obj)
}

/// `log p(k) + [l_n + log π_k](θ̂) + (k/2) log 2π − ½ log det H`.
pub fn laplace_log_marginal(fit: &ModelFit, model: &ModelPrior) -> Result<f64> {
    if !fit.log_evidence.is_finite() {
        return Err(Error::Numerical(format!("negative Hessian of model k = {} is not positive definite", fit.k)));
    }
    Ok(model.log_prob(fit.k) + fit.log_evidence)
}

/// Posterior weights `p(k | Xⁿ)` for `k = 1..=fits.len()` from Laplace evidences
/// (`fits[i].k` must be `i + 1`).
pub fn model_weights(fits: &[ModelFit], model: &ModelPrior) -> Result<Vec<f64>> {
    if let ModelPrior::Dirac { k } = *model {
        if k > fits.len() {
            return Err(invalid(format!("Dirac atom k = {k} lies outside the fitted range")));
        }
        let mut w = vec![0.0; fits.len()];
        w[k - 1] = 1.0;
        return Ok(w);
    }
    let logs: Vec<f64> = fits
        .iter()
        .map(|f| laplace_log_marginal(f, model).unwrap_or(f64::NEG_INFINITY))
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("every model fit failed".into()));
    }
    let e: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    pub steps: usize,
    pub burn_in: usize,
    pub target_accept: f64,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { steps: 40_000, burn_in: 10_000, target_accept: 0.234, thin: 10 }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps <= self.burn_in {
            return Err(invalid("MCMC steps must exceed burn-in"));
        }
        if self.thin == 0 {
            return Err(invalid("thinning interval must be positive"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(invalid("target acceptance must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics {
    /// Post-burn-in acceptance rate.
    pub acceptance_rate: f64,
    /// Per-coordinate effective sample size of the retained draws.
    pub ess: Vec<f64>,
    /// Per-coordinate split-chain potential scale reduction.
    pub split_rhat: Vec<f64>,
    /// Frozen proposal scale.
    pub scale: f64,
}

impl ChainDiagnostics {
    pub fn min_ess(&self) -> f64 {
        self.ess.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_rhat(&self) -> f64 {
        self.split_rhat.iter().cloned().fold(1.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub k: usize,
    /// Retained post-burn-in states.
    pub draws: Vec<Vec<f64>>,
    pub diagnostics: ChainDiagnostics,
}

/// Adaptive random-walk Metropolis targeting `exp(objective)`.
///
/// Proposals are `θ + s·L z` with `L Lᵀ` the supplied covariance (or the prior
/// variances), and `log s` tuned by Robbins–Monro toward `target_accept` during
/// burn-in, then frozen.
pub fn run_chain<R: Rng + ?Sized>(
    obj: &Objective,
    start: &[f64],
    covariance: Option<&DMatrix<f64>>,
    config: &McmcConfig,
    rng: &mut R,
) -> Result<Chain> {
    config.validate()?;
    let k = obj.k();
    if start.len() != k {
        return Err(invalid("chain start has the wrong length"));
    }
    if k == 0 {
        let kept = (config.steps - config.burn_in).div_ceil(config.thin);
        let diagnostics = ChainDiagnostics { acceptance_rate: 1.0, ess: Vec::new(), split_rhat: Vec::new(), scale: 0.0 };
        return Ok(Chain { k, draws: vec![Vec::new(); kept], diagnostics });
    }
    let prior_cov = || {
        DMatrix::from_diagonal(&DVector::from_iterator(
            k,
            (1..=k).map(|l| obj.coef().variance(l).unwrap_or_else(|| obj.coef().tau(l))),
        ))
    };
    let chol = covariance
        .and_then(|c| Cholesky::new(c.clone()))
        .unwrap_or_else(|| Cholesky::new(prior_cov()).expect("prior variances are positive"));
    let l = chol.l();
    let mut log_scale = (2.38 / (k as f64).sqrt()).ln();
    let mut theta = start.to_vec();
    let mut current = obj.value(&theta)?;
    let mut proposal = vec![0.0; k];
    let mut z = DVector::<f64>::zeros(k);
    let mut draws = Vec::with_capacity((config.steps - config.burn_in).div_ceil(config.thin));
    let mut accepted_after = 0usize;
    for step in 0..config.steps {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        let dz = &l * &z;
        let s = log_scale.exp();
        for ((p, t), d) in proposal.iter_mut().zip(&theta).zip(dz.iter()) {
            *p = t + s * d;
        }
        let cand = obj.value(&proposal).unwrap_or(f64::NEG_INFINITY);
        let log_alpha = (cand - current).min(0.0);
        let u: f64 = rng.random();
        let accept = u.ln() < log_alpha;
        if accept {
            theta.copy_from_slice(&proposal);
            current = cand;
        }
        if step < config.burn_in {
            let rate = (step as f64 + 10.0).powf(-0.6);
            log_scale += rate * (log_alpha.exp() - config.target_accept);
        } else {
            accepted_after += accept as usize;
            if (step - config.burn_in) % config.thin == 0 {
                draws.push(theta.clone());
            }
        }
    }
    let acceptance_rate = accepted_after as f64 / (config.steps - config.burn_in) as f64;
    let (ess, split_rhat): (Vec<f64>, Vec<f64>) = (0..k)
        .map(|j| {
            let x: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            (effective_sample_size(&x), split_rhat(&x))
        })
        .unzip();
    Ok(Chain { k, draws, diagnostics: ChainDiagnostics { acceptance_rate, ess, split_rhat, scale: log_scale.exp() } })
}

/// Fit the mode of `obj` and run a chain started there, preconditioned by
/// the inverse mode Hessian.
pub fn mcmc_within_model<R: Rng + ?Sized>(obj: &Objective, config: &McmcConfig, rng: &mut R) -> Result<(ModelFit, Chain)> {
    let fit = fit_model(obj)?;
    let cov = fit.covariance();
    let start = if fit.mode.iter().all(|v| v.is_finite()) { fit.mode.clone() } else { vec![0.0; obj.k()] };
    let chain = run_chain(obj, &start, cov.as_ref(), config, rng)?;
    Ok((fit, chain))
}

/// Geyer initial-positive-sequence effective sample size.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let m = x.len();
    if m < 4 {
        return m.max(1) as f64;
    }
    let mean = x.iter().sum::<f64>() / m as f64;
    let c: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let var = c.iter().map(|v| v * v).sum::<f64>() / m as f64;
    if var <= 0.0 {
        return 1.0;
    }
    let rho = |lag: usize| c[..m - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / (m as f64 * var);
    let mut sum = 0.0;
    let mut t = 0;
    while 2 * t + 1 < m {
        let pair = rho(2 * t) + rho(2 * t + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        t += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / m as f64);
    (m as f64 / tau).clamp(1.0, m as f64)
}

/// Split-chain `R̂` of a single chain.
pub fn split_rhat(x: &[f64]) -> f64 {
    let h = x.len() / 2;
    if h < 2 {
        return f64::NAN;
    }
    let halves = [&x[..h], &x[x.len() - h..]];
    let stats: Vec<(f64, f64)> = halves
        .iter()
        .map(|s| {
            let m = s.iter().sum::<f64>() / h as f64;
            let v = s.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (h as f64 - 1.0);
            (m, v)
        })
        .collect();
    let w = 0.5 * (stats[0].1 + stats[1].1);
    let grand = 0.5 * (stats[0].0 + stats[1].0);
    let b = h as f64 * stats.iter().map(|(m, _)| (m - grand).powi(2)).sum::<f64>();
    if w <= 0.0 {
        return 1.0;
    }
    let var_plus = (h as f64 - 1.0) / h as f64 * w + b / h as f64;
    (var_plus / w).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub k: usize,
    pub theta: Vec<f64>,
}

/// `m` draws: `k` from `weights` (index `i` is `k = i + 1`), then a uniformly
/// chosen retained state of that model's chain.
pub fn sample_posterior<R: Rng + ?Sized>(
    weights: &[f64],
    chains: &[Option<Chain>],
    m: usize,
    rng: &mut R,
) -> Result<Vec<PosteriorDraw>> {
    if weights.len() != chains.len() {
        return Err(invalid("one chain slot per model weight is required"));
    }
    for (i, w) in weights.iter().enumerate() {
        if *w > 1e-6 && chains[i].as_ref().is_none_or(|c| c.draws.is_empty()) {
            return Err(invalid(format!("missing chain for model k = {} with weight {w}", i + 1)));
        }
    }
    let cum: Vec<f64> = weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let total = *cum.last().unwrap_or(&0.0);
    if total <= 0.0 {
        return Err(invalid("model weights carry no mass"));
    }
    Ok((0..m)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * total;
            let mut i = cum.partition_point(|&c| c <= u).min(weights.len() - 1);
            while chains[i].is_none() {
                i = weights.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            }
            let chain = chains[i].as_ref().unwrap();
            let j = rng.random_range(0..chain.draws.len());
            PosteriorDraw { k: chain.k, theta: chain.draws[j].clone() }
        })
        .collect())
}

/// Importance-sampling evidence estimate with its delta-method standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidenceEstimate {
    pub log_marginal: f64,
    pub std_error: f64,
    pub ess: f64,
    /// Set when fewer than ten effective samples carried the estimate.
    pub degenerate: bool,
}

/// `log[(1/N) Σ exp(l_n(θ⁽ⁱ⁾))] + log p(k)` with `θ⁽ⁱ⁾ ~ π_k`. Samples are
/// drawn in fixed-size blocks on derived streams so the result does not depend
/// on the thread count.
pub fn is_log_marginal_bruteforce(obj: &Objective, model: &ModelPrior, samples: usize, seed: u64) -> Result<EvidenceEstimate> {
    let k = obj.k();
    if k > 3 {
        return Err(invalid("the importance-sampling oracle is limited to k <= 3"));
    }
    if samples == 0 {
        return Err(invalid("need at least one importance sample"));
    }
    let lp = model.log_prob(k);
    if obj.n() == 0 {
        return Ok(EvidenceEstimate { log_marginal: lp, std_error: 0.0, ess: samples as f64, degenerate: false });
    }
    const BLOCK: usize = 8192;
    let blocks = samples.div_ceil(BLOCK);
    let logs: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream(seed, &[b as u64]);
            let len = BLOCK.min(samples - b * BLOCK);
            (0..len)
                .map(|_| {
                    let theta = obj.coef().sample(k, &mut rng);
                    obj.loglik(&theta).unwrap_or(f64::NEG_INFINITY)
                })
                .collect()
        })
        .collect();
    let all: Vec<f64> = logs.into_iter().flatten().collect();
    let max = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("all importance weights vanished".into()));
    }
    let nf = all.len() as f64;
    let w: Vec<f64> = all.iter().map(|l| (l - max).exp()).collect();
    let mean = w.iter().sum::<f64>() / nf;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
    let s1: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    let ess = s1 * s1 / s2;
    Ok(EvidenceEstimate {
        log_marginal: lp + max + mean.ln(),
        std_error: (var / nf).sqrt() / mean,
        ess,
        degenerate: ess < 10.0,
    })
}

/// Settings for a full posterior fit over `k = 1..=k_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorConfig {
    pub kind: BasisKind,
    pub coef: CoefPrior,
    pub model: ModelPrior,
    pub k_max: usize,
    pub mcmc: McmcConfig,
}

/// Per-model fits and chains with their posterior weights.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub kind: BasisKind,
    pub fits: Vec<ModelFit>,
    pub weights: Vec<f64>,
    pub chains: Vec<Option<Chain>>,
    /// Seed of each chain that was run, by model index.
    pub chain_seeds: Vec<Option<u64>>,
}

impl Posterior {
    pub fn k_max(&self) -> usize {
        self.fits.len()
    }

    /// Models with non-negligible weight whose fit did not converge.
    pub fn unconverged(&self) -> Vec<usize> {
        self.fits.iter().zip(&self.weights).filter(|(f, w)| **w > 1e-6 && !f.converged).map(|(f, _)| f.k).collect()
    }

    pub fn draws<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<PosteriorDraw>> {
        sample_posterior(&self.weights, &self.chains, m, rng)
    }

    /// All retained chain states, each tagged with its model weight divided by
    /// the chain length.
    pub fn weighted_draws(&self) -> Vec<(f64, PosteriorDraw)> {
        let mut out = Vec::new();
        for (w, chain) in self.weights.iter().zip(&self.chains) {
            if let Some(c) = chain {
                let each = w / c.draws.len() as f64;
                out.extend(c.draws.iter().map(|t| (each, PosteriorDraw { k: c.k, theta: t.clone() })));
            }
        }
        out
    }
}

const CHAIN_STREAM: u64 = 0x6368_6169_6e00;

/// Fit every model in `1..=k_max` (or only the Dirac atom), weight them, and
/// run a chain for each model with weight above `10⁻⁶`. Model `k` uses the
/// seed derived from `(seed, k)`, so results do not depend on scheduling.
pub fn fit_posterior(data: &Dataset, config: &PosteriorConfig, seed: u64) -> Result<Posterior> {
    config.model.validate()?;
    config.mcmc.validate()?;
    let k_max = match config.model {
        ModelPrior::Dirac { k } => k.max(config.k_max),
        _ => config.k_max,
    };
    if k_max == 0 {
        return Err(invalid("k_max must be at least 1"));
    }
    let only = match config.model {
        ModelPrior::Dirac { k } => Some(k),
        _ => None,
    };
    let objectives: Vec<Option<Objective>> = (1..=k_max)
        .map(|k| {
            (only.is_none_or(|a| a == k)).then(|| {
                let grid = Arc::new(QuadratureGrid::for_basis(&Basis::new(config.kind, k)));
                let design = Design::new(config.kind, k, grid);
                Objective::new(design, SufficientStats::from_data(config.kind, k, data), config.coef).expect("matching k")
            })
        })
        .collect();
    let fits: Vec<ModelFit> = objectives
        .par_iter()
        .enumerate()
        .map(|(i, o)| match o {
            Some(o) => fit_model(o),
            None => Ok(ModelFit {
                k: i + 1,
                mode: vec![0.0; i + 1],
                neg_hessian: DMatrix::identity(i + 1, i + 1),
                log_objective: f64::NEG_INFINITY,
                log_evidence: f64::NEG_INFINITY,
                newton_iters: 0,
                gradient_norm: 0.0,
                ridge: 0.0,
                converged: true,
            }),
        })
        .collect::<Result<_>>()?;
    let weights = model_weights(&fits, &config.model)?;
    let seeds: Vec<Option<u64>> =
        (1..=k_max).map(|k| (weights[k - 1] > 1e-6).then(|| derive_path(seed, &[CHAIN_STREAM, k as u64]))).collect();
    let chains: Vec<Option<Chain>> = objectives
        .par_iter()
        .zip(&fits)
        .zip(&seeds)
        .map(|((o, fit), s)| match (o, s) {
            (Some(o), Some(s)) => {
                let mut rng = crate::seed::rng_from_seed(*s);
                let cov = fit.covariance();
                let start = if fit.converged { fit.mode.clone() } else { vec![0.0; o.k()] };
                run_chain(o, &start, cov.as_ref(), &config.mcmc, &mut rng).map(Some)
            }
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;
    Ok(Posterior { kind: config.kind, fits, weights, chains, chain_seeds: seeds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::ExpFamDensity;
    use crate::prior::CoefDistribution;
    use crate::seed::rng_from_seed;

    fn uniform_data(n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        Dataset::new((0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn uniform_data_mode_near_zero() {
        let data = uniform_data(10_000, 3);
        let obj = Objective::for_data(BasisKind::Fourier, 1, Some(&data), CoefPrior::gaussian(0.75));
        let fit = fit_model(&obj).unwrap();
        assert!(fit.converged);
        assert!(fit.gradient_norm < 1e-8);
        assert!(fit.mode[0].abs() < 0.1);
    }

    #[test]
    fn haar_k1_mode_matches_bisection() {
        let data = uniform_data(300, 11);
        let coef = CoefPrior::gaussian(0.75);
        let obj = Objective::for_data(BasisKind::Haar, 1, Some(&data), coef);
        let fit = fit_model(&obj).unwrap();
        let s = SufficientStats::from_data(BasisKind::Haar, 1, &data).mean_phi[0];
        let n = 300.0;
        let tau = coef.tau(1);
        let g = |t: f64| n * (s - t.tanh()) - t / tau;
        let (mut lo, mut hi) = (-5.0, 5.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((fit.mode[0] - 0.5 * (lo + hi)).abs() < 1e-8);
    }

    #[test]
    fn mode_is_local_maximum() {
        let truth = ExpFamDensity::standard(BasisKind::Fourier, vec![0.4, -0.3, 0.2]).unwrap();
        let data = truth.sample(&mut rng_from_seed(5), 400).unwrap();
        for dist in [CoefDistribution::Gaussian, CoefDistribution::Laplace, CoefDistribution::Student { nu: 3.0 }] {
            let coef = CoefPrior::new(dist, 1.0, 0.75).unwrap();
            let obj = Objective::for_data(BasisKind::Fourier, 3, Some(&data), coef);
            let fit = fit_model(&obj).unwrap();
            assert!(fit.converged, "{dist:?}");
            let best = obj.value(&fit.mode).unwrap();
            let mut rng = rng_from_seed(9);
            for _ in 0..100 {
                let d: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = d.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
                let p: Vec<f64> = fit.mode.iter().zip(&d).map(|(m, v)| m + 1e-3 * v / norm).collect();
                assert!(obj.value(&p).unwrap() <= best + 1e-9);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = uniform_data(50, 2);
        let obj = Objective::for_data(BasisKind::Fourier, 3, Some(&data), CoefPrior::gaussian(0.8));
        let theta = [0.3, -0.2, 0.1];
        let (_, g, h) = obj.derivatives(&theta).unwrap();
        let eps = 1e-5;
        for i in 0..3 {
            let mut a = theta;
            let mut b = theta;
            a[i] += eps;
            b[i] -= eps;
            let fd = (obj.value(&a).unwrap() - obj.value(&b).unwrap()) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-5 * (1.0 + g[i].abs()));
            let (_, ga, _) = obj.derivatives(&a).unwrap();
            let (_, gb, _) = obj.derivatives(&b).unwrap();
            for j in 0..3 {
                let fdh = -(ga[j] - gb[j]) / (2.0 * eps);
                assert!((fdh - h[(i, j)]).abs() < 1e-4 * (1.0 + h[(i, j)].abs()));
            }
        }
    }

    #[test]
    fn empty_model_base_case() {
        let obj = Objective::for_data(BasisKind::Fourier, 0, None, CoefPrior::gaussian(0.75));
        let fit = fit_model(&obj).unwrap();
        let model = ModelPrior::Geometric { q: 0.5 };
        assert_eq!(laplace_log_marginal(&fit, &model).unwrap(), model.log_prob(0));
    }

    #[test]
    fn laplace_matches_importance_sampling_k1() {
        let data = uniform_data(50, 21);
        let model = ModelPrior::Poisson { nu: 1.0 };
        let obj = Objective::for_data(BasisKind::Fourier, 1, Some(&data), CoefPrior::gaussian(0.75));
        let fit = fit_model(&obj).unwrap();
        let la = laplace_log_marginal(&fit, &model).unwrap();
        let is = is_log_marginal_bruteforce(&obj, &model, 1_000_000, 8).unwrap();
        assert!(is.std_error < 0.03);
        assert!((la - is.log_marginal).abs() <= 0.1 + 3.0 * is.std_error, "{la} vs {is:?}");
        let empty = Objective::for_data(BasisKind::Fourier, 2, None, CoefPrior::gaussian(0.75));
        let e = is_log_marginal_bruteforce(&empty, &model, 10, 1).unwrap();
        assert_eq!((e.log_marginal, e.std_error), (model.log_prob(2), 0.0));
    }

    #[test]
    fn importance_sampling_independent_of_thread_count() {
        let data = uniform_data(30, 4);
        let obj = Objective::for_data(BasisKind::Haar, 2, Some(&data), CoefPrior::gaussian(0.75));
        let model = ModelPrior::Geometric { q: 0.4 };
        let a = is_log_marginal_bruteforce(&obj, &model, 50_000, 3).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| is_log_marginal_bruteforce(&obj, &model, 50_000, 3).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn evidence_gap_grows_with_n() {
        let truth = ExpFamDensity::standard(BasisKind::Fourier, vec![0.5, 0.3]).unwrap();
        let data = truth.sample(&mut rng_from_seed(77), 8000).unwrap();
        let coef = CoefPrior::gaussian(0.75);
        let gap = |m: usize| {
            let d = data.prefix(m).unwrap();
            let e = |k| fit_model(&Objective::for_data(BasisKind::Fourier, k, Some(&d), coef)).unwrap().log_evidence;
            e(2) - e(6)
        };
        let gaps: Vec<f64> = [500, 2000, 8000].iter().map(|&m| gap(m)).collect();
        assert!(gaps.windows(2).all(|w| w[1] > w[0]), "{gaps:?}");
    }

    #[test]
    fn weights_normalised_and_dirac_short_circuits() {
        let data = uniform_data(200, 6);
        let coef = CoefPrior::gaussian(0.75);
        let fits: Vec<ModelFit> =
            (1..=4).map(|k| fit_model(&Objective::for_data(BasisKind::Fourier, k, Some(&data), coef)).unwrap()).collect();
        let w = model_weights(&fits, &ModelPrior::Poisson { nu: 1.0 }).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let d = model_weights(&fits, &ModelPrior::Dirac { k: 3 }).unwrap();
        assert_eq!(d, vec![0.0, 0.0, 1.0, 0.0]);
        // enlarging the range moves at most the mass of the added models
        let more: Vec<ModelFit> = (1..=6)
            .map(|k| fit_model(&Objective::for_data(BasisKind::Fourier, k, Some(&data), coef)).unwrap())
            .collect();
        let w6 = model_weights(&more, &ModelPrior::Poisson { nu: 1.0 }).unwrap();
        let added: f64 = w6[4..].iter().sum();
        assert!(w.iter().zip(&w6).all(|(a, b)| (a - b).abs() <= added + 1e-15));
    }

    #[test]
    fn prior_only_chain_reproduces_prior() {
        let coef = CoefPrior::gaussian(0.75);
        let obj = Objective::for_data(BasisKind::Fourier, 3, None, coef);
        let cfg = McmcConfig { steps: 120_000, burn_in: 20_000, target_accept: 0.234, thin: 5 };
        let (_, chain) = mcmc_within_model(&obj, &cfg, &mut rng_from_seed(1)).unwrap();
        for l in 0..3 {
            let x: Vec<f64> = chain.draws.iter().map(|d| d[l]).collect();
            let m = x.iter().sum::<f64>() / x.len() as f64;
            let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / x.len() as f64;
            let se = (coef.tau(l + 1) / chain.diagnostics.ess[l]).sqrt();
            assert!(m.abs() < 4.0 * se);
            assert!((v / coef.tau(l + 1) - 1.0).abs() < 0.1, "λ={} v={v}", l + 1);
        }
        assert!((0.1..0.5).contains(&chain.diagnostics.acceptance_rate));
        assert!(chain.diagnostics.max_rhat() < 1.05);
    }

    #[test]
    fn chain_deterministic_given_seed() {
        let data = uniform_data(100, 1);
        let obj = Objective::for_data(BasisKind::Haar, 2, Some(&data), CoefPrior::gaussian(0.75));
        let cfg = McmcConfig { steps: 2000, burn_in: 500, target_accept: 0.234, thin: 1 };
        let a = mcmc_within_model(&obj, &cfg, &mut rng_from_seed(4)).unwrap().1;
        let b = mcmc_within_model(&obj, &cfg, &mut rng_from_seed(4)).unwrap().1;
        assert_eq!(a.draws, b.draws);
        assert!(McmcConfig { steps: 10, burn_in: 10, target_accept: 0.2, thin: 1 }.validate().is_err());
    }

    #[test]
    fn posterior_draw_frequencies_match_weights() {
        let chain = |k: usize| Chain {
            k,
            draws: vec![vec![k as f64; k]; 3],
            diagnostics: ChainDiagnostics { acceptance_rate: 0.3, ess: vec![1.0; k], split_rhat: vec![1.0; k], scale: 1.0 },
        };
        let weights = [0.2, 0.5, 0.3];
        let chains = vec![Some(chain(1)), Some(chain(2)), Some(chain(3))];
        let m = 10_000;
        let draws = sample_posterior(&weights, &chains, m, &mut rng_from_seed(12)).unwrap();
        for (i, w) in weights.iter().enumerate() {
            let f = draws.iter().filter(|d| d.k == i + 1).count() as f64 / m as f64;
            assert!((f - w).abs() < 4.0 * (w * (1.0 - w) / m as f64).sqrt());
        }
        let again = sample_posterior(&weights, &chains, m, &mut rng_from_seed(12)).unwrap();
        assert_eq!(draws, again);
        let single = sample_posterior(&[0.0, 1.0, 0.0], &chains, 50, &mut rng_from_seed(1)).unwrap();
        assert!(single.iter().all(|d| d.k == 2));
        assert!(sample_posterior(&weights, &[None, Some(chain(2)), Some(chain(3))], 5, &mut rng_from_seed(1)).is_err());
    }

    #[test]
    fn ess_of_iid_and_correlated_series() {
        let mut rng = rng_from_seed(3);
        let iid: Vec<f64> = (0..4000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let e = effective_sample_size(&iid);
        assert!((e / 4000.0 - 1.0).abs() < 0.2, "{e}");
        let mut ar = vec![0.0f64; 4000];
        for i in 1..4000 {
            ar[i] = 0.9 * ar[i - 1] + iid[i];
        }
        let e = effective_sample_size(&ar);
        // AR(1) with ρ = 0.9: ESS ≈ m (1 − ρ)/(1 + ρ) ≈ 210
        assert!((100.0..400.0).contains(&e), "{e}");
        assert!((split_rhat(&iid) - 1.0).abs() < 0.01);
    }
}
