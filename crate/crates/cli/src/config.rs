//! JSON experiment configuration. Every block has defaults; unknown keys are
//! rejected. A run manifest is also accepted, in which case its embedded
//! `config` is used.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sieve_bvm::basis::BasisKind;
use sieve_bvm::counterexample::SlowDecaySpec;
use sieve_bvm::experiment::Truth;
use sieve_bvm::functionals::FunctionalSpec;
use sieve_bvm::posterior::{McmcConfig, PosteriorConfig};
use sieve_bvm::prior::{k_star, rates, CoefDistribution, CoefPrior, ModelPrior, RateSpec};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisName {
    Fourier,
    Haar,
}

impl From<BasisName> for BasisKind {
    fn from(b: BasisName) -> Self {
        match b {
            BasisName::Fourier => BasisKind::Fourier,
            BasisName::Haar => BasisKind::Haar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthConfig {
    Uniform {},
    Finite {
        theta0: Vec<f64>,
        #[serde(default)]
        gamma: Option<f64>,
    },
    Counterexample {
        gamma: f64,
        k0: usize,
        j_max: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefConfig {
    Gaussian {},
    Laplace {},
    Student { nu: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientsConfig {
    pub distribution: CoefConfig,
    pub tau0: f64,
    pub beta: f64,
}

impl Default for CoefficientsConfig {
    fn default() -> Self {
        Self { distribution: CoefConfig::Gaussian {}, tau0: 1.0, beta: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Poisson {
        nu: f64,
    },
    Geometric {
        q: f64,
    },
    /// Without `k` the atom sits at `k_n* = ⌈n^{1/(2β+1)}⌉`.
    Dirac {
        #[serde(default)]
        k: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub coefficients: CoefficientsConfig,
    pub model: ModelConfig,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { coefficients: CoefficientsConfig::default(), model: ModelConfig::Poisson { nu: 1.0 } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalConfig {
    CdfAt { x0: f64 },
    IndicatorSet { intervals: Vec<(f64, f64)> },
    Mean {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcBlock {
    pub steps: usize,
    pub burn_in: usize,
    pub target_accept: f64,
    pub thin: usize,
}

impl Default for McmcBlock {
    fn default() -> Self {
        let d = McmcConfig::default();
        Self { steps: d.steps, burn_in: d.burn_in, target_accept: d.target_accept, thin: d.thin }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesBlock {
    /// Smoothness used for the rates; defaults to the truth's tag, then to `β`.
    pub gamma: Option<f64>,
    pub epsilon0: f64,
    pub l0: f64,
    /// Sample sizes for the `rates` table; defaults to `[n]`.
    pub n_grid: Vec<usize>,
    /// Radii for the concentration table.
    pub radii: Vec<f64>,
}

impl Default for RatesBlock {
    fn default() -> Self {
        Self { gamma: None, epsilon0: 1.0, l0: 1.0, n_grid: Vec::new(), radii: vec![0.05, 0.1, 0.2, 0.5] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageBlock {
    pub replicates: usize,
    pub level: f64,
    pub draws: usize,
}

impl Default for CoverageBlock {
    fn default() -> Self {
        Self { replicates: 50, level: 0.9, draws: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterexampleBlock {
    pub gamma: f64,
    pub k0: usize,
    pub n_grid: Vec<usize>,
    pub k_grid: Vec<usize>,
}

impl Default for CounterexampleBlock {
    fn default() -> Self {
        Self { gamma: 1.0, k0: 3, n_grid: vec![1_000, 10_000, 100_000, 1_000_000], k_grid: vec![4, 8, 16, 32, 64] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub basis: BasisName,
    pub truth: TruthConfig,
    pub prior: PriorConfig,
    pub functional: FunctionalConfig,
    pub n: usize,
    /// Largest model size fitted; defaults to `⌈l_n⌉` (or `k_n*` for a Dirac prior).
    pub k_max: Option<usize>,
    pub seed: u64,
    pub mcmc: McmcBlock,
    pub rates: RatesBlock,
    pub coverage: CoverageBlock,
    pub counterexample: CounterexampleBlock,
    /// Dataset to analyse instead of simulating one.
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            basis: BasisName::Fourier,
            truth: TruthConfig::Uniform {},
            prior: PriorConfig::default(),
            functional: FunctionalConfig::CdfAt { x0: 0.5 },
            n: 1000,
            k_max: None,
            seed: 0,
            mcmc: McmcBlock::default(),
            rates: RatesBlock::default(),
            coverage: CoverageBlock::default(),
            counterexample: CounterexampleBlock::default(),
            data: None,
            out: PathBuf::from("out"),
            threads: None,
        }
    }
}

fn config_err(field: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {e}"))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed JSON: {e}")))?;
        let value = match value.get("manifest_version") {
            Some(_) => value.get("config").cloned().ok_or_else(|| CliError::Config("manifest has no config block".into()))?,
            None => value,
        };
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn kind(&self) -> BasisKind {
        self.basis.into()
    }

    pub fn coef_prior(&self) -> Result<CoefPrior, CliError> {
        let c = &self.prior.coefficients;
        let dist = match c.distribution {
            CoefConfig::Gaussian {} => CoefDistribution::Gaussian,
            CoefConfig::Laplace {} => CoefDistribution::Laplace,
            CoefConfig::Student { nu } => CoefDistribution::Student { nu },
        };
        CoefPrior::new(dist, c.tau0, c.beta).map_err(|e| config_err("prior.coefficients", e))
    }

    pub fn model_prior(&self) -> Result<ModelPrior, CliError> {
        let m = match self.prior.model {
            ModelConfig::Poisson { nu } => ModelPrior::Poisson { nu },
            ModelConfig::Geometric { q } => ModelPrior::Geometric { q },
            ModelConfig::Dirac { k } => ModelPrior::Dirac { k: k.unwrap_or_else(|| k_star(self.n, self.prior.coefficients.beta)) },
        };
        m.validate().map_err(|e| config_err("prior.model", e))?;
        Ok(m)
    }

    pub fn truth(&self) -> Result<Truth, CliError> {
        Ok(match &self.truth {
            TruthConfig::Uniform {} => Truth::Uniform,
            TruthConfig::Finite { theta0, gamma } => Truth::Finite { theta0: theta0.clone(), gamma: *gamma },
            TruthConfig::Counterexample { gamma, k0, j_max } => {
                Truth::Counterexample(SlowDecaySpec::new(*gamma, *k0, *j_max).map_err(|e| config_err("truth", e))?)
            }
        })
    }

    pub fn functional(&self) -> FunctionalSpec {
        match &self.functional {
            FunctionalConfig::CdfAt { x0 } => FunctionalSpec::CdfAt(*x0),
            FunctionalConfig::IndicatorSet { intervals } => FunctionalSpec::IndicatorSet(intervals.clone()),
            FunctionalConfig::Mean {} => FunctionalSpec::Mean,
        }
    }

    /// Smoothness for the rates: explicit, then the truth's, then `β`.
    pub fn rate_gamma(&self) -> f64 {
        self.rates
            .gamma
            .or(match &self.truth {
                TruthConfig::Finite { gamma, .. } => *gamma,
                TruthConfig::Counterexample { gamma, .. } => Some(*gamma),
                TruthConfig::Uniform {} => None,
            })
            .unwrap_or(self.prior.coefficients.beta)
    }

    pub fn rate_spec(&self, n: usize) -> Result<RateSpec, CliError> {
        rates(self.rate_gamma(), &self.coef_prior()?, &self.model_prior()?, n, self.rates.epsilon0, self.rates.l0)
            .map_err(|e| config_err("rates", e))
    }

    pub fn posterior_config(&self, n: usize) -> Result<PosteriorConfig, CliError> {
        let k_max = match self.k_max {
            Some(k) => k,
            None => self.rate_spec(n)?.k_max(),
        };
        let mcmc = McmcConfig {
            steps: self.mcmc.steps,
            burn_in: self.mcmc.burn_in,
            target_accept: self.mcmc.target_accept,
            thin: self.mcmc.thin,
        };
        mcmc.validate().map_err(|e| config_err("mcmc", e))?;
        Ok(PosteriorConfig { kind: self.kind(), coef: self.coef_prior()?, model: self.model_prior()?, k_max, mcmc })
    }

    /// Check every block that the subcommands may use before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.n == 0 {
            return Err(config_err("n", "must be positive"));
        }
        if self.k_max == Some(0) {
            return Err(config_err("k_max", "must be at least 1"));
        }
        self.coef_prior()?;
        self.model_prior()?;
        self.functional().validate().map_err(|e| config_err("functional", e))?;
        let truth = self.truth()?;
        if let Truth::Finite { gamma: Some(g), .. } = truth {
            if !(g > 0.5) {
                return Err(config_err("truth.gamma", format!("must exceed 1/2, got {g}")));
            }
        }
        if matches!(truth, Truth::Counterexample(_)) && self.basis != BasisName::Fourier {
            return Err(config_err("basis", "the counter-example truth needs the Fourier basis"));
        }
        if let Some(g) = self.rates.gamma {
            if !(g > 0.5) {
                return Err(config_err("rates.gamma", format!("must exceed 1/2, got {g}")));
            }
        }
        if !(self.rates.epsilon0 > 0.0 && self.rates.l0 > 0.0) {
            return Err(config_err("rates", "epsilon0 and l0 must be positive"));
        }
        if self.rates.n_grid.iter().any(|&n| n < 2) {
            return Err(config_err("rates.n_grid", "sample sizes must be at least 2"));
        }
        let c = &self.counterexample;
        SlowDecaySpec::new(c.gamma, c.k0, 2 * c.k0).map_err(|e| config_err("counterexample", e))?;
        if c.n_grid.iter().any(|&n| n < 100) {
            return Err(config_err("counterexample.n_grid", "sample sizes must be at least 100"));
        }
        if c.k_grid.iter().any(|&k| k < 4) {
            return Err(config_err("counterexample.k_grid", "model sizes must be at least 4"));
        }
        let cov = &self.coverage;
        if cov.replicates < 20 || !(cov.level > 0.0 && cov.level < 1.0) || cov.draws == 0 {
            return Err(config_err("coverage", "need replicates >= 20, level in (0, 1) and draws >= 1"));
        }
        if self.threads == Some(0) {
            return Err(config_err("threads", "must be at least 1"));
        }
        self.posterior_config(self.n)?;
        Ok(())
    }
}
