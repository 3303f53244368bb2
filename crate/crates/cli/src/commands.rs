use rayon::prelude::*;
use serde_json::{json, Value};
use sieve_bvm::bvm::binomial_band;
use sieve_bvm::counterexample::{bias_floor_check, mu_nk1_series};
use sieve_bvm::density::Dataset;
use sieve_bvm::experiment::{
    bvm_cdf_table, bvm_component_table, bvm_from_posterior, bvm_summary_table, concentration_run, concentration_table,
    coverage_run, coverage_table, fit, model_table, simulate, CoverageSettings, Truth, DATA_STREAM, FIT_STREAM,
};
use sieve_bvm::functionals::TrueDensityOracle;
use sieve_bvm::io::{dataset_to_string, fmt_f64, read_dataset, Table};
use sieve_bvm::posterior::Posterior;
use sieve_bvm::seed::derive_path;

use crate::config::ExperimentConfig;
use crate::manifest::Run;
use crate::{CliError, Command};

pub fn dispatch(command: Command, cfg: &ExperimentConfig) -> Result<(), CliError> {
    match command {
        Command::Simulate => run_simulate(cfg),
        Command::Fit => run_fit(cfg),
        Command::Bvm => run_bvm(cfg),
        Command::Rates => run_rates(cfg),
        Command::Counterexample => run_counterexample(cfg),
        Command::Coverage => run_coverage(cfg),
    }
}

fn oracle_facts(truth: &Truth, oracle: &TrueDensityOracle) -> Value {
    let grid = oracle.density().grid();
    json!({
        "kind": match truth {
            Truth::Uniform => "uniform",
            Truth::Finite { .. } => "finite",
            Truth::Counterexample(_) => "counterexample",
        },
        "j_max": oracle.j_max(),
        "truncated": oracle.is_truncated(),
        "truncation_error": oracle.truncation_error(),
        "c0": oracle.c0(),
        "quadrature_panels": grid.panel_count(),
        "quadrature_nodes": grid.len(),
    })
}

fn build_oracle(cfg: &ExperimentConfig, run: &mut Run) -> Result<TrueDensityOracle, CliError> {
    let truth = cfg.truth()?;
    let oracle = truth.oracle(cfg.kind())?;
    run.record("truth", oracle_facts(&truth, &oracle));
    Ok(oracle)
}

/// The configured dataset, or a fresh simulation written next to the outputs.
fn obtain_data(cfg: &ExperimentConfig, oracle: &TrueDensityOracle, run: &mut Run) -> Result<Dataset, CliError> {
    match &cfg.data {
        Some(path) => {
            let data = read_dataset(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            run.record("data", json!({ "source": path.display().to_string(), "n": data.len() }));
            Ok(data)
        }
        None => {
            let data = simulate(oracle, cfg.n, cfg.seed)?;
            run.write_text("data.txt", &dataset_to_string(&data))?;
            run.record("data", json!({ "source": "simulated", "n": data.len(), "seed": derive_path(cfg.seed, &[DATA_STREAM]) }));
            Ok(data)
        }
    }
}

fn posterior_facts(p: &Posterior, seed: u64) -> Value {
    let chains: serde_json::Map<String, Value> = p
        .chain_seeds
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (format!("{:04}", i + 1), json!(s))))
        .collect();
    json!({
        "k_max": p.k_max(),
        "fit_seed": derive_path(seed, &[FIT_STREAM]),
        "chain_seeds": chains,
        "unconverged": p.unconverged(),
        "quadrature_panels": p.fits.iter().map(|f| sieve_bvm::quadrature::QuadratureGrid::for_basis(&sieve_bvm::basis::Basis::new(p.kind, f.k)).panel_count()).collect::<Vec<_>>(),
    })
}

fn finish_posterior(run: Run, p: &Posterior) -> Result<(), CliError> {
    let bad = p.unconverged();
    if bad.is_empty() {
        run.finish("ok")
    } else {
        run.finish("unconverged")?;
        Err(CliError::Numerical(format!("Newton iterations did not converge for k = {bad:?}; partial results written")))
    }
}

fn rate_facts(cfg: &ExperimentConfig, n: usize) -> Result<Value, CliError> {
    let r = cfg.rate_spec(n)?;
    let model = cfg.model_prior()?;
    Ok(json!({
        "gamma": r.gamma,
        "beta": r.beta,
        "epsilon0": r.epsilon0,
        "l0": r.l0,
        "epsilon_n": r.epsilon_n,
        "l_n": r.l_n,
        "k_star": r.k_star,
        "hellinger_radius": r.hellinger_radius(),
        "l2_radius": r.l2_radius(),
        "envelope_constants": model.envelope_constants().map(|(a, b)| json!({ "c1": a, "c2": b, "from_k": model.envelope_start() })),
    }))
}

fn run_simulate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut run = Run::new("simulate", cfg)?;
    let oracle = build_oracle(cfg, &mut run)?;
    let data = simulate(&oracle, cfg.n, cfg.seed)?;
    run.write_text("data.txt", &dataset_to_string(&data))?;
    run.record("data", json!({ "source": "simulated", "n": data.len(), "seed": derive_path(cfg.seed, &[DATA_STREAM]) }));
    run.finish("ok")
}

fn run_fit(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut run = Run::new("fit", cfg)?;
    let oracle = build_oracle(cfg, &mut run)?;
    let data = obtain_data(cfg, &oracle, &mut run)?;
    let pc = cfg.posterior_config(data.len())?;
    let posterior = fit(&data, &pc, cfg.seed)?;
    run.write_table("models.csv", &model_table(&posterior))?;
    run.record("posterior", posterior_facts(&posterior, cfg.seed));
    run.record("rates", rate_facts(cfg, data.len().max(2))?);
    finish_posterior(run, &posterior)
}

fn run_bvm(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut run = Run::new("bvm", cfg)?;
    let oracle = build_oracle(cfg, &mut run)?;
    let data = obtain_data(cfg, &oracle, &mut run)?;
    let n = data.len();
    let pc = cfg.posterior_config(n)?;
    let posterior = fit(&data, &pc, cfg.seed)?;
    run.write_table("models.csv", &model_table(&posterior))?;
    run.record("posterior", posterior_facts(&posterior, cfg.seed));
    let report = bvm_from_posterior(&posterior, &data, &oracle, &cfg.functional())?;
    run.write_table("bvm_cdf.csv", &bvm_cdf_table(&report))?;
    run.write_table("bvm_components.csv", &bvm_component_table(&report))?;
    run.write_table("bvm_summary.csv", &bvm_summary_table(&report))?;
    if n >= 2 {
        let rate = cfg.rate_spec(n)?;
        let conc = concentration_run(&posterior, &oracle, &rate, &cfg.rates.radii)?;
        run.write_table("concentration.csv", &concentration_table(&conc))?;
        let mut facts = rate_facts(cfg, n)?;
        facts["prob_hellinger"] = json!(conc.prob_hellinger);
        facts["prob_l2"] = json!(conc.prob_l2);
        facts["median_hellinger"] = json!(conc.median_hellinger());
        run.record("rates", facts);
    }
    finish_posterior(run, &posterior)
}

fn run_rates(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut run = Run::new("rates", cfg)?;
    let grid = if cfg.rates.n_grid.is_empty() { vec![cfg.n.max(2)] } else { cfg.rates.n_grid.clone() };
    let mut t = Table::new(["n", "epsilon_n", "l_n", "k_star", "k_max", "log_factor", "hellinger_radius", "l2_radius"]);
    for &n in &grid {
        let r = cfg.rate_spec(n)?;
        t.push(vec![
            n.to_string(),
            fmt_f64(r.epsilon_n),
            fmt_f64(r.l_n),
            r.k_star.to_string(),
            r.k_max().to_string(),
            fmt_f64(r.log_factor),
            fmt_f64(r.hellinger_radius()),
            fmt_f64(r.l2_radius()),
        ]);
    }
    run.write_table("rates.csv", &t)?;
    run.record("rates", rate_facts(cfg, grid[0])?);
    run.finish("ok")
}

fn run_counterexample(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut run = Run::new("counterexample", cfg)?;
    let c = &cfg.counterexample;
    let pairs: Vec<(usize, usize)> = c.n_grid.iter().flat_map(|&n| c.k_grid.iter().map(move |&k| (n, k))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(n, k)| mu_nk1_series(c.gamma, c.k0, k, n).map(|v| v.value))
        .collect::<Result<_, _>>()?;
    let mut series = Table::new(["n", "k", "mu_nk1", "floor_sqrt_log_n", "ratio"]);
    for (&(n, k), mu) in pairs.iter().zip(&values) {
        let floor = (n as f64).ln().sqrt();
        series.push(vec![n.to_string(), k.to_string(), fmt_f64(*mu), fmt_f64(floor), fmt_f64(mu / floor)]);
    }
    run.write_table("mu_series.csv", &series)?;
    let floors: Vec<_> =
        c.n_grid.par_iter().map(|&n| bias_floor_check(c.gamma, c.k0, n)).collect::<Result<_, _>>()?;
    let mut t = Table::new(["n", "k_n", "min_mu_nk1", "floor_sqrt_log_n", "ratio", "satisfied"]);
    for b in &floors {
        t.push(vec![
            b.n.to_string(),
            fmt_f64(b.k_n),
            fmt_f64(b.min_mu),
            fmt_f64(b.sqrt_log_n),
            fmt_f64(b.ratio),
            b.satisfied.to_string(),
        ]);
    }
    run.write_table("bias_floor.csv", &t)?;
    let fitted = floors.iter().map(|b| b.ratio).fold(f64::INFINITY, f64::min);
    run.record("counterexample", json!({ "gamma": c.gamma, "k0": c.k0, "fitted_floor_constant": fitted }));
    run.finish("ok")
}

fn run_coverage(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut run = Run::new("coverage", cfg)?;
    let oracle = build_oracle(cfg, &mut run)?;
    let pc = cfg.posterior_config(cfg.n)?;
    let settings =
        CoverageSettings { n: cfg.n, replicates: cfg.coverage.replicates, level: cfg.coverage.level, draws: cfg.coverage.draws };
    let result = coverage_run(&oracle, &cfg.functional(), &pc, &settings, cfg.seed)?;
    run.write_table("coverage.csv", &coverage_table(&result))?;
    let (lo, hi) = binomial_band(result.level, result.hits.len(), 3.0);
    let mean_width = result.widths.iter().sum::<f64>() / result.widths.len() as f64;
    let mut s = Table::new(["level", "truth", "replicates", "coverage", "band_lower", "band_upper", "mean_width"]);
    s.push(vec![
        fmt_f64(result.level),
        fmt_f64(result.truth),
        result.hits.len().to_string(),
        fmt_f64(result.coverage),
        fmt_f64(lo),
        fmt_f64(hi),
        fmt_f64(mean_width),
    ]);
    run.write_table("coverage_summary.csv", &s)?;
    run.record("posterior", json!({ "k_max": pc.k_max }));
    run.finish("ok")
}
