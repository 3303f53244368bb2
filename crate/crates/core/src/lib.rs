//! Infinite-dimensional exponential-family priors for densities on `[0, 1]`.
//!
//! A density is modelled as `f_θ(x) = exp(Σ_{λ≤k} θ_λ φ_λ(x) − c(θ))` over a
//! Fourier or periodized Haar basis, with a prior on the truncation `k` and
//! on the coefficients. The crate computes posteriors of linear functionals
//! `Ψ(f) = ∫ψ f` and compares the posterior law of `√n(Ψ(f) − Ψ(P_n))` with
//! its Gaussian and Gaussian-mixture limits.
//!
//! Module map:
//! - [`basis`]: orthonormal bases, expansions, sup-norm and tail bounds
//! - [`quadrature`]: composite Gauss–Legendre grids
//! - [`density`]: log-partition, evaluation, sampling, likelihood, divergences
//! - [`prior`]: coefficient and model-size priors, contraction rates
//! - [`posterior`]: Newton modes, Laplace evidence, random-walk Metropolis
//! - [`functionals`]: influence functions, weighted projections, bias terms
//! - [`bvm`]: Kolmogorov–Smirnov diagnostics, concentration, coverage
//! - [`counterexample`]: slowly decaying truth where the Gaussian limit fails
//! - [`experiment`]: end-to-end pipelines shared by the CLI and the test suites

pub mod basis;
pub mod bvm;
pub mod counterexample;
pub mod density;
pub mod error;
pub mod experiment;
pub mod functionals;
pub mod io;
pub mod normal;
pub mod posterior;
pub mod prior;
pub mod quadrature;
pub mod seed;

pub use error::{Error, Result};
