//! Linear functionals `Ψ(f) = ∫ψ f`, their centred influence functions, and
//! the weighted projections behind the mixture limit: `Δ_ψ`, `V_{0k}`,
//! `B_{n,k}` and `μ_{n,k}`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::basis::{fill, Basis, BasisKind};
use crate::density::{log_sum_exp_weighted, Dataset, Design, ExpFamDensity};
use crate::error::{invalid, Error, Result};
use crate::prior::{RateCase, RateSpec};
use crate::quadrature::QuadratureGrid;

const MAX_GRAM_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionalSpec {
    /// `ψ = 1{x ≤ x₀}`
    CdfAt(f64),
    /// Indicator of a finite union of closed intervals.
    IndicatorSet(Vec<(f64, f64)>),
    /// `ψ(x) = x`
    Mean,
    /// Piecewise-linear interpolation of `(nodes, values)`, constant beyond the ends.
    Tabulated { nodes: Vec<f64>, values: Vec<f64> },
}

impl FunctionalSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            FunctionalSpec::CdfAt(x0) if !(0.0..=1.0).contains(x0) => {
                Err(invalid(format!("x0 must lie in [0, 1], got {x0}")))
            }
            FunctionalSpec::IndicatorSet(iv) => {
                if iv.is_empty() {
                    return Err(invalid("indicator set needs at least one interval"));
                }
                for &(a, b) in iv {
                    if !(0.0 <= a && a <= b && b <= 1.0) {
                        return Err(invalid(format!("interval [{a}, {b}] is not a subinterval of [0, 1]")));
                    }
                }
                Ok(())
            }
            FunctionalSpec::Tabulated { nodes, values } => {
                if nodes.len() < 2 || nodes.len() != values.len() {
                    return Err(invalid("tabulated functional needs matching node and value lists of length >= 2"));
                }
                if nodes.windows(2).any(|w| w[1] <= w[0]) || nodes.iter().chain(values).any(|v| !v.is_finite()) {
                    return Err(invalid("tabulated nodes must be finite and strictly increasing"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn psi(&self, x: f64) -> f64 {
        match self {
            FunctionalSpec::CdfAt(x0) => (x <= *x0) as u8 as f64,
            FunctionalSpec::IndicatorSet(iv) => iv.iter().any(|&(a, b)| a <= x && x <= b) as u8 as f64,
            FunctionalSpec::Mean => x,
            FunctionalSpec::Tabulated { nodes, values } => {
                let last = nodes.len() - 1;
                if x <= nodes[0] {
                    return values[0];
                }
                if x >= nodes[last] {
                    return values[last];
                }
                let i = nodes.partition_point(|&t| t <= x) - 1;
                let s = (x - nodes[i]) / (nodes[i + 1] - nodes[i]);
                values[i] + s * (values[i + 1] - values[i])
            }
        }
    }

    /// Points where `ψ` jumps or kinks; quadrature panels are split there.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            FunctionalSpec::CdfAt(x0) => vec![*x0],
            FunctionalSpec::IndicatorSet(iv) => iv.iter().flat_map(|&(a, b)| [a, b]).collect(),
            FunctionalSpec::Mean => Vec::new(),
            FunctionalSpec::Tabulated { nodes, .. } => nodes.clone(),
        }
    }

    /// `‖ψ‖∞` (over the table nodes for tabulated functionals).
    pub fn sup_norm(&self) -> f64 {
        match self {
            FunctionalSpec::CdfAt(_) | FunctionalSpec::IndicatorSet(_) | FunctionalSpec::Mean => 1.0,
            FunctionalSpec::Tabulated { values, .. } => values.iter().fold(0.0, |a, v| a.max(v.abs())),
        }
    }
}

/// `Ψ(f) = ∫ψ f` by quadrature on the density's grid split at `ψ`'s breakpoints.
pub fn functional_of_density(spec: &FunctionalSpec, f: &ExpFamDensity) -> Result<f64> {
    spec.validate()?;
    match spec {
        FunctionalSpec::CdfAt(x0) => f.cdf(*x0),
        _ => {
            let g = f.refined(&spec.breakpoints())?;
            Ok(g.expect(|x| spec.psi(x)))
        }
    }
}

/// `P_n ψ = (1/n) Σ ψ(X_i)`.
pub fn empirical_functional(spec: &FunctionalSpec, data: &Dataset) -> f64 {
    data.observations().iter().map(|&x| spec.psi(x)).sum::<f64>() / data.len() as f64
}

/// `G_n(g) = n^{−1/2} Σ [g(X_i) − mean]` for a known `mean = F₀(g)`.
pub fn empirical_process_centered(g: impl Fn(f64) -> f64, data: &Dataset, mean: f64) -> f64 {
    let n = data.len() as f64;
    data.observations().iter().map(|&x| g(x) - mean).sum::<f64>() / n.sqrt()
}

/// `G_n(g)` with `F₀(g)` computed by quadrature under the oracle.
pub fn empirical_process(g: impl Fn(f64) -> f64, data: &Dataset, oracle: &TrueDensityOracle) -> f64 {
    let mean = oracle.expect(&g);
    empirical_process_centered(g, data, mean)
}

/// Repeated evaluation of `Ψ(f_θ)` for a fixed model size.
#[derive(Debug, Clone)]
pub struct FunctionalEvaluator {
    design: Design,
    psi: Vec<f64>,
}

impl FunctionalEvaluator {
    pub fn new(spec: &FunctionalSpec, kind: BasisKind, k: usize) -> Result<Self> {
        spec.validate()?;
        let grid = QuadratureGrid::for_basis(&Basis::new(kind, k)).with_breakpoints(&spec.breakpoints());
        let psi = grid.nodes().iter().map(|&x| spec.psi(x)).collect();
        Ok(Self { design: Design::new(kind, k, Arc::new(grid)), psi })
    }

    pub fn k(&self) -> usize {
        self.design.k()
    }

    pub fn eval(&self, theta: &[f64]) -> Result<f64> {
        let mut t = Vec::with_capacity(self.psi.len());
        self.design.exponent(theta, &mut t);
        let max = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numerical("density exponent is not finite".into()));
        }
        let (mut num, mut den) = (0.0, 0.0);
        for ((ti, w), p) in t.iter().zip(self.design.grid().weights()).zip(&self.psi) {
            let e = w * (ti - max).exp();
            num += e * p;
            den += e;
        }
        Ok(num / den)
    }
}

/// The data-generating density `f₀ = f_{θ₀}` used in simulation studies.
#[derive(Debug, Clone)]
pub struct TrueDensityOracle {
    theta0: Vec<f64>,
    density: ExpFamDensity,
    truncated: bool,
    truncation_error: f64,
    gamma: Option<f64>,
    c0: f64,
}

impl TrueDensityOracle {
    /// `θ₀` given in full (no omitted tail).
    pub fn finite(kind: BasisKind, theta0: Vec<f64>, gamma: Option<f64>) -> Result<Self> {
        Self::build(kind, theta0, false, 0.0, gamma)
    }

    /// `θ₀` truncated after `J_max = theta0.len()` coefficients; `truncation_error`
    /// bounds the sup-norm of the omitted tail of `log f₀`.
    pub fn truncated(kind: BasisKind, theta0: Vec<f64>, truncation_error: f64, gamma: Option<f64>) -> Result<Self> {
        Self::build(kind, theta0, true, truncation_error, gamma)
    }

    pub fn uniform(kind: BasisKind) -> Self {
        Self::finite(kind, Vec::new(), None).expect("uniform oracle")
    }

    fn build(kind: BasisKind, theta0: Vec<f64>, truncated: bool, truncation_error: f64, gamma: Option<f64>) -> Result<Self> {
        let density = ExpFamDensity::standard(kind, theta0.clone())?;
        let c0 = density.inf_on_grid();
        if !(c0 > 0.0) || !density.sup_on_grid().is_finite() {
            return Err(Error::Numerical("log f0 must be bounded".into()));
        }
        Ok(Self { theta0, density, truncated, truncation_error, gamma, c0 })
    }

    pub fn kind(&self) -> BasisKind {
        self.density.kind()
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    pub fn j_max(&self) -> usize {
        self.theta0.len()
    }

    pub fn density(&self) -> &ExpFamDensity {
        &self.density
    }

    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn truncation_error(&self) -> f64 {
        self.truncation_error
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    /// `inf f₀` over the grid nodes and panel edges.
    pub fn c0(&self) -> f64 {
        self.c0
    }

    /// `F₀(g)`.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.density.expect(g)
    }

    /// Precomputed quadrature state for projections of `ψ_c` up to `k_max`.
    pub fn workspace(&self, spec: &FunctionalSpec, k_max: usize) -> Result<Workspace<'_>> {
        Workspace::new(self, spec, k_max)
    }
}

/// Quadrature grid carrying `f₀`, `ψ_c` and `Σθ₀φ` at its nodes.
#[derive(Debug, Clone)]
pub struct Workspace<'a> {
    oracle: &'a TrueDensityOracle,
    spec: FunctionalSpec,
    grid: Arc<QuadratureGrid>,
    k_max: usize,
    /// `w_i f₀(x_i)`
    wf: Vec<f64>,
    /// `Σ_j θ₀ⱼ φⱼ(x_i)`
    expansion: Vec<f64>,
    psi_c: Vec<f64>,
    psi_mean: f64,
    v0: f64,
}

impl<'a> Workspace<'a> {
    fn new(oracle: &'a TrueDensityOracle, spec: &FunctionalSpec, k_max: usize) -> Result<Self> {
        spec.validate()?;
        let kind = oracle.kind();
        let resolution = k_max.max(oracle.j_max()).max(1);
        let grid = Arc::new(QuadratureGrid::for_basis(&Basis::new(kind, resolution)).with_breakpoints(&spec.breakpoints()));
        let j = oracle.j_max();
        let mut buf = vec![0.0; j];
        let expansion: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&x| {
                fill(kind, x, &mut buf);
                buf.iter().zip(oracle.theta0()).map(|(p, t)| p * t).sum()
            })
            .collect();
        let c = log_sum_exp_weighted(&expansion, grid.weights())?;
        let wf: Vec<f64> = expansion.iter().zip(grid.weights()).map(|(e, w)| w * (e - c).exp()).collect();
        let psi: Vec<f64> = grid.nodes().iter().map(|&x| spec.psi(x)).collect();
        let psi_mean: f64 = psi.iter().zip(&wf).map(|(p, w)| p * w).sum();
        let psi_c: Vec<f64> = psi.iter().map(|p| p - psi_mean).collect();
        let v0 = psi_c.iter().zip(&wf).map(|(p, w)| w * p * p).sum();
        Ok(Self { oracle, spec: spec.clone(), grid, k_max, wf, expansion, psi_c, psi_mean, v0 })
    }

    pub fn grid(&self) -> &Arc<QuadratureGrid> {
        &self.grid
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// `F₀(ψ)`.
    pub fn psi_mean(&self) -> f64 {
        self.psi_mean
    }

    /// `V₀ = F₀(ψ_c²)`.
    pub fn v0(&self) -> f64 {
        self.v0
    }

    /// `F₀(ψ_c)`; zero up to rounding.
    pub fn centering_residual(&self) -> f64 {
        self.psi_c.iter().zip(&self.wf).map(|(p, w)| p * w).sum()
    }

    /// `F₀(g)` on this workspace's grid.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.grid.nodes().iter().zip(&self.wf).map(|(&x, w)| w * g(x)).sum()
    }

    /// `Π_{f₀,k}ψ_c` by the weighted normal equations over `φ₀ = 1, φ₁..φ_k`.
    pub fn project(&self, k: usize) -> Result<ProjectionResult> {
        if k > self.k_max {
            return Err(invalid(format!("k = {k} exceeds the workspace resolution {}", self.k_max)));
        }
        let kind = self.oracle.kind();
        let m = self.grid.len();
        let mut phi = DMatrix::<f64>::zeros(m, k + 1);
        let mut buf = vec![0.0; k];
        for (i, &x) in self.grid.nodes().iter().enumerate() {
            fill(kind, x, &mut buf);
            let s = self.wf[i].sqrt();
            phi[(i, 0)] = s;
            for l in 0..k {
                phi[(i, l + 1)] = s * buf[l];
            }
        }
        let sqrt_psi = DVector::from_iterator(m, self.psi_c.iter().zip(&self.wf).map(|(p, w)| p * w.sqrt()));
        let gram = phi.tr_mul(&phi);
        let rhs = phi.tr_mul(&sqrt_psi);
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if condition > MAX_GRAM_CONDITION {
            return Err(Error::IllConditioned { condition });
        }
        let chol = gram.clone().cholesky().ok_or(Error::IllConditioned { condition })?;
        let coeffs = chol.solve(&rhs);
        // Δ_ψ√(w f₀) at the nodes.
        let proj = &phi * &coeffs;
        let delta: Vec<f64> = sqrt_psi.iter().zip(proj.iter()).map(|(a, b)| a - b).collect();
        let delta_norm2: f64 = delta.iter().map(|d| d * d).sum();
        let resid = phi.tr_mul(&DVector::from_column_slice(&delta));
        let orthogonality_residual = resid.amax();
        let proj_norm2: f64 = proj.iter().map(|p| p * p).sum();
        let bias_integral = self.bias_integral(k, &delta, &coeffs)?;
        Ok(ProjectionResult {
            k,
            kind,
            spec: self.spec.clone(),
            coeffs: coeffs.iter().cloned().collect(),
            psi_mean: self.psi_mean,
            v0: self.v0,
            delta_norm2,
            proj_norm2,
            v0k: self.v0 - delta_norm2,
            gram_condition: condition,
            orthogonality_residual,
            bias_integral,
        })
    }

    /// `F₀[Δ_ψ Σ_{j>k} θ₀ⱼ φⱼ]`, with `delta` holding `Δ_ψ √(w f₀)`.
    fn bias_integral(&self, k: usize, delta: &[f64], _coeffs: &DVector<f64>) -> Result<f64> {
        let j = self.oracle.j_max();
        if k >= j {
            if self.oracle.is_truncated() {
                return Err(invalid(format!("k = {k} reaches the truncation J_max = {j} of the true coefficients")));
            }
            return Ok(0.0);
        }
        let kind = self.oracle.kind();
        let theta = &self.oracle.theta0()[..k];
        let mut buf = vec![0.0; k];
        Ok(self
            .grid
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                fill(kind, x, &mut buf);
                let head: f64 = buf.iter().zip(theta).map(|(p, t)| p * t).sum();
                delta[i] * self.wf[i].sqrt() * (self.expansion[i] - head)
            })
            .sum())
    }

    /// `μ_{n,k} = √n F₀[Δ_ψ Σ_{j>k} θ₀ⱼ φⱼ] + G_n(Δ_ψ)`.
    pub fn mu_nk(&self, k: usize, data: &Dataset) -> Result<MuNk> {
        let p = self.project(k)?;
        Ok(p.mu_nk(data))
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub k: usize,
    pub kind: BasisKind,
    pub spec: FunctionalSpec,
    /// `ψ_{Π,c,λ}`, `λ = 0..=k`.
    pub coeffs: Vec<f64>,
    pub psi_mean: f64,
    /// `F₀(ψ_c²)`
    pub v0: f64,
    /// `F₀(Δ_ψ²)`
    pub delta_norm2: f64,
    /// `F₀((Π_{f₀,k}ψ_c)²)`
    pub proj_norm2: f64,
    /// `F₀(ψ_c²) − F₀(Δ_ψ²)`
    pub v0k: f64,
    pub gram_condition: f64,
    /// `max_λ |F₀(Δ_ψ φ_λ)|`
    pub orthogonality_residual: f64,
    /// `F₀[Δ_ψ Σ_{j>k} θ₀ⱼ φⱼ]`
    pub bias_integral: f64,
}

impl ProjectionResult {
    /// `Π_{f₀,k}ψ_c(x)`.
    pub fn projection(&self, x: f64) -> f64 {
        let mut buf = vec![0.0; self.k];
        fill(self.kind, x, &mut buf);
        self.coeffs[0] + buf.iter().zip(&self.coeffs[1..]).map(|(p, a)| p * a).sum::<f64>()
    }

    /// `Δ_ψ(x) = ψ_c(x) − Π_{f₀,k}ψ_c(x)`.
    pub fn delta(&self, x: f64) -> f64 {
        self.spec.psi(x) - self.psi_mean - self.projection(x)
    }

    /// `B_{n,k} = ψ_{Π,c,[k]}/√n`.
    pub fn b_nk(&self, n: usize) -> Vec<f64> {
        let s = (n as f64).sqrt();
        self.coeffs[1..].iter().map(|a| a / s).collect()
    }

    /// First term `√n F₀[Δ_ψ Σ_{j>k} θ₀ⱼ φⱼ]` of `μ_{n,k}`.
    pub fn mu_first_term(&self, n: usize) -> f64 {
        (n as f64).sqrt() * self.bias_integral
    }

    /// `μ_{n,k}` on observed data; `F₀(Δ_ψ) = 0` by the normal equations.
    pub fn mu_nk(&self, data: &Dataset) -> MuNk {
        let first_term = self.mu_first_term(data.len());
        let second_term = empirical_process_centered(|x| self.delta(x), data, 0.0);
        MuNk { k: self.k, first_term, second_term, value: first_term + second_term }
    }
}

/// `μ_{n,k}` with its deterministic bias and empirical-process parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuNk {
    pub k: usize,
    pub first_term: f64,
    pub second_term: f64,
    pub value: f64,
}

/// Single-`k` convenience for [`Workspace::project`].
pub fn project(spec: &FunctionalSpec, oracle: &TrueDensityOracle, k: usize) -> Result<ProjectionResult> {
    oracle.workspace(spec, k)?.project(k)
}

/// Single-`k` convenience for [`Workspace::mu_nk`].
pub fn mu_nk(spec: &FunctionalSpec, oracle: &TrueDensityOracle, k: usize, data: &Dataset) -> Result<MuNk> {
    oracle.workspace(spec, k)?.mu_nk(k, data)
}

/// Lebesgue coefficients `ψ_{c,λ} = ∫ψ φ_λ`, `λ = 1..=j`.
pub fn psi_coefficients(spec: &FunctionalSpec, kind: BasisKind, j: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    let grid = QuadratureGrid::for_basis(&Basis::new(kind, j.max(1))).with_breakpoints(&spec.breakpoints());
    let mut acc = vec![0.0; j];
    let mut buf = vec![0.0; j];
    for (&x, &w) in grid.nodes().iter().zip(grid.weights()) {
        let p = spec.psi(x);
        if p == 0.0 {
            continue;
        }
        fill(kind, x, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += w * p * b;
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailConditionReport {
    /// `(k, ‖T_k‖∞, ‖T_k‖₂)` with `T_k = Σ_{j>k} ψ_{c,j} φ_j`.
    pub tails: Vec<(usize, f64, f64)>,
    /// `sup_k (‖T_k‖∞ + √k ‖T_k‖₂)` over `1 ≤ k ≤ l_n`.
    pub lhs: f64,
    /// `(log n)^{−2} / (√n ε_n²)`
    pub scale: f64,
    /// Whether the regime argument (case (D), `γ ≥ β`) applies.
    pub regime_argument: bool,
    pub satisfied: bool,
}

impl TailConditionReport {
    pub fn lhs_at(&self, k: usize) -> Option<f64> {
        self.tails.iter().find(|t| t.0 == k).map(|t| t.1 + (t.0 as f64).sqrt() * t.2)
    }
}

/// Tails of the Lebesgue expansion of `ψ_c` against the scale of the tail
/// condition. `‖T_k‖₂` is exact through Parseval; `‖T_k‖∞` is taken over the
/// nodes of a grid resolving the expansion truncated at `j_max`.
pub fn tail_condition_check(spec: &FunctionalSpec, kind: BasisKind, rate: &RateSpec, j_max: usize) -> Result<TailConditionReport> {
    let k_hi = rate.k_max().max(1);
    let j = j_max.max(k_hi + 1);
    let coeffs = psi_coefficients(spec, kind, j)?;
    let grid = QuadratureGrid::for_basis(&Basis::new(kind, j)).with_breakpoints(&spec.breakpoints());
    let mean = grid.integrate(|x| spec.psi(x));
    let total_sq = grid.integrate(|x| (spec.psi(x) - mean).powi(2));
    let mut buf = vec![0.0; j];
    // Tail values at every node, peeled one coefficient at a time.
    let mut basis_vals = Vec::with_capacity(grid.len() * j);
    let mut tail: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&x| {
            fill(kind, x, &mut buf);
            basis_vals.extend_from_slice(&buf);
            buf.iter().zip(&coeffs).map(|(p, c)| p * c).sum()
        })
        .collect();
    let mut head_sq = 0.0;
    let mut tails = Vec::with_capacity(k_hi);
    for k in 1..=k_hi {
        let c = coeffs[k - 1];
        head_sq += c * c;
        for (i, t) in tail.iter_mut().enumerate() {
            *t -= c * basis_vals[i * j + k - 1];
        }
        let sup = tail.iter().fold(0.0f64, |a, t| a.max(t.abs()));
        tails.push((k, sup, (total_sq - head_sq).max(0.0).sqrt()));
    }
    let lhs = tails.iter().map(|t| t.1 + (t.0 as f64).sqrt() * t.2).fold(0.0, f64::max);
    let n = rate.n as f64;
    let scale = n.ln().powi(-2) / (n.sqrt() * rate.epsilon_n.powi(2));
    let regime_argument = rate.case == RateCase::Dirac && rate.gamma >= rate.beta;
    Ok(TailConditionReport { tails, lhs, scale, regime_argument, satisfied: regime_argument || lhs < scale })
}
