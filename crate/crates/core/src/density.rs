//! Exponential-family densities `f_θ = exp(Σ_{λ≤k} θ_λ φ_λ − c(θ))` on `[0, 1]`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;

use crate::basis::{fill, Basis, BasisKind};
use crate::error::{invalid, Error, Result};
use crate::quadrature::QuadratureGrid;

/// Observations `X₁..X_n` in `[0, 1]`, `n ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    obs: Vec<f64>,
}

impl Dataset {
    pub fn new(obs: Vec<f64>) -> Result<Self> {
        if obs.is_empty() {
            return Err(invalid("a dataset needs at least one observation"));
        }
        if let Some(&x) = obs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::OutOfDomain(x));
        }
        Ok(Self { obs })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn observations(&self) -> &[f64] {
        &self.obs
    }

    /// First `m` observations; used for nested sample-size sweeps.
    pub fn prefix(&self, m: usize) -> Result<Self> {
        Self::new(self.obs[..m.min(self.obs.len())].to_vec())
    }
}

/// `n` and the empirical means `P_n(φ_λ)`, `λ = 1..k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub n: usize,
    pub mean_phi: Vec<f64>,
}

impl SufficientStats {
    pub fn from_data(kind: BasisKind, k: usize, data: &Dataset) -> Self {
        let mut acc = vec![0.0; k];
        let mut buf = vec![0.0; k];
        for &x in data.observations() {
            fill(kind, x, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b;
            }
        }
        let n = data.len();
        acc.iter_mut().for_each(|a| *a /= n as f64);
        Self { n, mean_phi: acc }
    }

    /// No observations: the likelihood is identically one.
    pub fn empty(k: usize) -> Self {
        Self { n: 0, mean_phi: vec![0.0; k] }
    }

    pub fn k(&self) -> usize {
        self.mean_phi.len()
    }
}

/// Basis values on a quadrature grid, cached for repeated evaluation of
/// `c(θ)` and its derivatives.
#[derive(Debug, Clone)]
pub struct Design {
    kind: BasisKind,
    k: usize,
    grid: Arc<QuadratureGrid>,
    /// Node-major: `phi[i * k + (λ − 1)] = φ_λ(x_i)`.
    phi: Vec<f64>,
}

/// `c(θ)`, `E_θ[φ_λ]`, and optionally `Cov_θ(φ_λ, φ_μ)`.
#[derive(Debug, Clone)]
pub struct Moments {
    pub log_partition: f64,
    pub mean: Vec<f64>,
    pub cov: Option<DMatrix<f64>>,
}

impl Design {
    pub fn new(kind: BasisKind, k: usize, grid: Arc<QuadratureGrid>) -> Self {
        let mut phi = vec![0.0; grid.len() * k];
        if k > 0 {
            for (row, &x) in phi.chunks_mut(k).zip(grid.nodes()) {
                fill(kind, x, row);
            }
        }
        Self { kind, k, grid, phi }
    }

    /// Design on the standard grid of the basis truncated at `k`.
    pub fn standard(kind: BasisKind, k: usize) -> Self {
        let grid = Arc::new(QuadratureGrid::for_basis(&Basis::new(kind, k)));
        Self::new(kind, k, grid)
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid(&self) -> &Arc<QuadratureGrid> {
        &self.grid
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.phi[i * self.k..(i + 1) * self.k]
    }

    /// `Σ θ_λ φ_λ(x_i)` for every node.
    pub fn exponent(&self, theta: &[f64], out: &mut Vec<f64>) {
        assert_eq!(theta.len(), self.k, "coefficient length must match the design");
        out.clear();
        if self.k == 0 {
            out.resize(self.grid.len(), 0.0);
            return;
        }
        out.extend(
            self.phi
                .chunks_exact(self.k)
                .map(|row| row.iter().zip(theta).map(|(p, t)| p * t).sum::<f64>()),
        );
    }

    pub fn log_partition(&self, theta: &[f64]) -> Result<f64> {
        let mut t = Vec::with_capacity(self.grid.len());
        self.exponent(theta, &mut t);
        log_sum_exp_weighted(&t, self.grid.weights())
    }

    pub fn moments(&self, theta: &[f64], with_cov: bool) -> Result<Moments> {
        let mut t = Vec::with_capacity(self.grid.len());
        self.exponent(theta, &mut t);
        let c = log_sum_exp_weighted(&t, self.grid.weights())?;
        let k = self.k;
        let probs: Vec<f64> = t.iter().zip(self.grid.weights()).map(|(ti, w)| w * (ti - c).exp()).collect();
        let mut mean = vec![0.0; k];
        for (i, p) in probs.iter().enumerate() {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += p * v;
            }
        }
        let cov = with_cov.then(|| {
            let mut cov = DMatrix::<f64>::zeros(k, k);
            let mut centred = vec![0.0; k];
            for (i, p) in probs.iter().enumerate() {
                for ((c, v), m) in centred.iter_mut().zip(self.row(i)).zip(&mean) {
                    *c = v - m;
                }
                for a in 0..k {
                    let pa = p * centred[a];
                    for b in a..k {
                        cov[(a, b)] += pa * centred[b];
                    }
                }
            }
            for a in 0..k {
                for b in 0..a {
                    cov[(a, b)] = cov[(b, a)];
                }
            }
            cov
        });
        Ok(Moments { log_partition: c, mean, cov })
    }
}

/// `log Σ w_i exp(t_i)`, stabilised by subtracting `max t_i`.
pub fn log_sum_exp_weighted(t: &[f64], w: &[f64]) -> Result<f64> {
    let max = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("log-partition exponent is not finite".into()));
    }
    let s: f64 = t.iter().zip(w).map(|(ti, wi)| wi * (ti - max).exp()).sum();
    let c = max + s.ln();
    if c.is_finite() {
        Ok(c)
    } else {
        Err(Error::Numerical("log-partition overflowed".into()))
    }
}

/// `c(θ) = log ∫₀¹ exp(Σ θ_λ φ_λ)` on the given grid.
pub fn log_partition(kind: BasisKind, theta: &[f64], grid: &QuadratureGrid) -> Result<f64> {
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numerical("non-finite coefficient".into()));
    }
    let mut buf = vec![0.0; theta.len()];
    let t: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&x| {
            fill(kind, x, &mut buf);
            buf.iter().zip(theta).map(|(p, t)| p * t).sum()
        })
        .collect();
    log_sum_exp_weighted(&t, grid.weights())
}

/// Anything with a pointwise log-density on `[0, 1]`.
pub trait LogDensity {
    fn ln_pdf(&self, x: f64) -> f64;

    fn ln_pdf_on(&self, grid: &QuadratureGrid) -> Vec<f64> {
        grid.nodes().iter().map(|&x| self.ln_pdf(x)).collect()
    }
}

/// The density `f_θ` with its log-partition, grid values and CDF table.
#[derive(Debug, Clone)]
pub struct ExpFamDensity {
    basis: Basis,
    theta: Vec<f64>,
    log_partition: f64,
    grid: Arc<QuadratureGrid>,
    log_density_nodes: Vec<f64>,
    cdf_edges: Vec<f64>,
}

impl ExpFamDensity {
    pub fn new(kind: BasisKind, theta: Vec<f64>, grid: Arc<QuadratureGrid>) -> Result<Self> {
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numerical("non-finite coefficient".into()));
        }
        let basis = Basis::new(kind, theta.len());
        // one row at a time: long oracles would not fit a full design matrix
        let mut row = vec![0.0; theta.len()];
        let t = grid
            .nodes()
            .iter()
            .map(|&x| {
                fill(kind, x, &mut row);
                row.iter().zip(&theta).map(|(p, c)| p * c).sum::<f64>()
            })
            .collect();
        Self::from_exponent(basis, theta, grid, t)
    }

    fn from_exponent(basis: Basis, theta: Vec<f64>, grid: Arc<QuadratureGrid>, mut t: Vec<f64>) -> Result<Self> {
        let c = log_sum_exp_weighted(&t, grid.weights())?;
        t.iter_mut().for_each(|v| *v -= c);
        let order = grid.order();
        let mut cdf_edges = Vec::with_capacity(grid.panel_count() + 1);
        cdf_edges.push(0.0);
        let mut acc = 0.0;
        for (ls, ws) in t.chunks(order).zip(grid.weights().chunks(order)) {
            acc += ls.iter().zip(ws).map(|(l, w)| w * l.exp()).sum::<f64>();
            cdf_edges.push(acc);
        }
        Ok(Self { basis, theta, log_partition: c, grid, log_density_nodes: t, cdf_edges })
    }

    /// `f_θ` on the standard grid for its own `k`.
    pub fn standard(kind: BasisKind, theta: Vec<f64>) -> Result<Self> {
        let grid = Arc::new(QuadratureGrid::for_basis(&Basis::new(kind, theta.len())));
        Self::new(kind, theta, grid)
    }

    pub fn uniform(kind: BasisKind) -> Self {
        Self::standard(kind, Vec::new()).expect("uniform density is well defined")
    }

    pub fn kind(&self) -> BasisKind {
        self.basis.kind()
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }

    pub fn grid(&self) -> &Arc<QuadratureGrid> {
        &self.grid
    }

    /// `log f_θ` at the grid nodes.
    pub fn log_density_nodes(&self) -> &[f64] {
        &self.log_density_nodes
    }

    /// The same density with its grid split at `points`.
    pub fn refined(&self, points: &[f64]) -> Result<Self> {
        let grid = Arc::new(self.grid.with_breakpoints(points));
        Self::new(self.kind(), self.theta.clone(), grid)
    }

    pub fn log_pdf(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfDomain(x));
        }
        Ok(self.ln_pdf(x))
    }

    pub fn pdf(&self, x: f64) -> Result<f64> {
        self.log_pdf(x).map(f64::exp)
    }

    /// `∫₀¹ f_θ` under the grid; one up to rounding by construction.
    pub fn mass(&self) -> f64 {
        *self.cdf_edges.last().unwrap()
    }

    /// `∫ g f_θ` under the grid.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.grid
            .nodes()
            .iter()
            .zip(self.grid.weights())
            .zip(&self.log_density_nodes)
            .map(|((&x, &w), &l)| w * l.exp() * g(x))
            .sum()
    }

    /// Smallest density value on the grid nodes and panel edges.
    pub fn inf_on_grid(&self) -> f64 {
        let nodes = self.log_density_nodes.iter().cloned().fold(f64::INFINITY, f64::min);
        let edges = self.grid.edges().iter().map(|&x| self.ln_pdf(x)).fold(f64::INFINITY, f64::min);
        nodes.min(edges).exp()
    }

    /// Largest density value on the grid nodes and panel edges.
    pub fn sup_on_grid(&self) -> f64 {
        let nodes = self.log_density_nodes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let edges = self.grid.edges().iter().map(|&x| self.ln_pdf(x)).fold(f64::NEG_INFINITY, f64::max);
        nodes.max(edges).exp()
    }

    /// `F_θ(x) = ∫₀ˣ f_θ`.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfDomain(x));
        }
        if x == 1.0 {
            return Ok(self.mass().min(1.0));
        }
        let p = self.grid.panel_of(x);
        let a = self.grid.edges()[p];
        let partial: f64 = if x > a {
            self.grid.subinterval_rule(a, x).map(|(t, w)| w * self.ln_pdf(t).exp()).sum()
        } else {
            0.0
        };
        Ok((self.cdf_edges[p] + partial).clamp(0.0, 1.0))
    }

    /// `m` i.i.d. draws by inverting the CDF table at panel edges, linearly
    /// interpolated inside each panel.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, m: usize) -> Result<Dataset> {
        if m == 0 {
            return Err(invalid("sample size must be positive"));
        }
        let total = self.mass();
        let edges = self.grid.edges();
        let obs = (0..m)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * total;
                let p = self.cdf_edges.partition_point(|&c| c <= u).clamp(1, edges.len() - 1) - 1;
                let (c0, c1) = (self.cdf_edges[p], self.cdf_edges[p + 1]);
                let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
                (edges[p] + frac.clamp(0.0, 1.0) * (edges[p + 1] - edges[p])).clamp(0.0, 1.0)
            })
            .collect();
        Dataset::new(obs)
    }

    /// `l_n(θ) = Σ log f_θ(X_i)`, summed directly.
    pub fn loglik(&self, data: &Dataset) -> f64 {
        data.observations().iter().map(|&x| self.ln_pdf(x)).sum()
    }

    /// `l_n(θ) = n (Σ θ_λ P_n(φ_λ) − c(θ))`.
    pub fn loglik_sufficient(&self, stats: &SufficientStats) -> f64 {
        assert_eq!(stats.k(), self.k(), "statistics must match the model size");
        let dot: f64 = self.theta.iter().zip(&stats.mean_phi).map(|(t, s)| t * s).sum();
        stats.n as f64 * (dot - self.log_partition)
    }
}

impl LogDensity for ExpFamDensity {
    fn ln_pdf(&self, x: f64) -> f64 {
        crate::basis::expansion_unchecked(self.kind(), &self.theta, x) - self.log_partition
    }

    fn ln_pdf_on(&self, grid: &QuadratureGrid) -> Vec<f64> {
        if std::ptr::eq(grid, &*self.grid) {
            return self.log_density_nodes.clone();
        }
        let k = self.k();
        let mut buf = vec![0.0; k];
        grid.nodes()
            .iter()
            .map(|&x| {
                fill(self.kind(), x, &mut buf);
                buf.iter().zip(&self.theta).map(|(p, t)| p * t).sum::<f64>() - self.log_partition
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DivergenceKind {
    /// `K(f, g) = ∫ f log(f/g)`
    KullbackLeibler,
    /// `V(f, g) = ∫ f (log(f/g))²`
    SecondMoment,
    /// `h(f, g) = (∫ (√f − √g)²)^{1/2}`
    Hellinger,
}

/// Divergence between two positive densities by quadrature on `grid`.
pub fn divergence<F: LogDensity + ?Sized, G: LogDensity + ?Sized>(
    f: &F,
    g: &G,
    kind: DivergenceKind,
    grid: &QuadratureGrid,
) -> Result<f64> {
    let lf = f.ln_pdf_on(grid);
    let lg = g.ln_pdf_on(grid);
    divergence_from_logs(&lf, &lg, grid.weights(), kind)
}

/// Divergence from log-density values already tabulated on a grid.
pub fn divergence_from_logs(lf: &[f64], lg: &[f64], weights: &[f64], kind: DivergenceKind) -> Result<f64> {
    if lf.iter().chain(lg).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("divergence needs strictly positive, finite densities".into()));
    }
    let it = lf.iter().zip(lg).zip(weights);
    let v = match kind {
        DivergenceKind::KullbackLeibler => it.map(|((a, b), w)| w * a.exp() * (a - b)).sum::<f64>(),
        DivergenceKind::SecondMoment => it.map(|((a, b), w)| w * a.exp() * (a - b).powi(2)).sum::<f64>(),
        DivergenceKind::Hellinger => it
            .map(|((a, b), w)| w * ((0.5 * a).exp() - (0.5 * b).exp()).powi(2))
            .sum::<f64>()
            .sqrt(),
    };
    Ok(v.max(0.0))
}
