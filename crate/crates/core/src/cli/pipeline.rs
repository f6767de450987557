//! End-to-end orchestration: bath, equilibrium, every requested ℓ, oracle.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{BathSpec, OracleConfig, RunConfig};
use crate::bath::{dmft_bethe_loop, dmft_update, BathFunction, DmftSettings};
use crate::equilibrium::{FkEquilibrium, FkParams};
use crate::error::Error;
use crate::grid::{BosonicIndex, MatsubaraGrid};
use crate::oracle::{oracle_report, OracleReport, OracleSettings};
use crate::response::{assemble, Route, SusceptibilityResult};

pub const FORMAT_VERSION: &str = "fkchi-record/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Bath,
    Equilibrium,
    Response,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub ell: Option<i64>,
    pub route: Option<Route>,
    pub message: String,
    /// Singularity or non-convergence, as opposed to rejected input.
    pub numerical: bool,
}

impl StageFailure {
    fn from_error(stage: Stage, ell: Option<i64>, err: &Error) -> Self {
        Self {
            stage,
            ell,
            route: None,
            message: err.to_string(),
            numerical: err.is_numerical(),
        }
    }
}

/// Convergence history of the self-consistency loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmftTrace {
    pub iterations: usize,
    pub residuals: Vec<f64>,
    /// `max_m |λ_m|` change from one more sweep at the converged bath.
    pub fixed_point_change: f64,
}

/// Wall-clock seconds, written apart from the numeric record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTimings {
    pub bath: f64,
    pub equilibrium: f64,
    pub routes: Vec<RouteTiming>,
    pub oracle: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteTiming {
    pub ell: i64,
    pub route: Route,
    pub seconds: f64,
}

/// Everything one configuration produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: String,
    pub config: RunConfig,
    pub dyson_residual: Option<f64>,
    pub dmft: Option<DmftTrace>,
    pub results: Vec<SusceptibilityResult>,
    pub oracle: Vec<OracleReport>,
    pub failures: Vec<StageFailure>,
    #[serde(skip)]
    pub timings: RunTimings,
}

/// Process exit statuses.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const ORACLE: i32 = 4;
}

fn exit_code_for(failures: &[StageFailure], oracle: &[OracleReport]) -> i32 {
    if failures.iter().any(|f| !f.numerical) {
        exit::CONFIG
    } else if !failures.is_empty() {
        exit::NUMERICAL
    } else if oracle.iter().any(|r| !r.pass) {
        exit::ORACLE
    } else {
        exit::SUCCESS
    }
}

impl RunRecord {
    pub fn exit_code(&self) -> i32 {
        exit_code_for(&self.failures, &self.oracle)
    }

    pub fn result(&self, ell: i64) -> Option<&SusceptibilityResult> {
        self.results.iter().find(|r| r.ell.get() == ell)
    }
}

/// Builds the bath a configuration asks for. Relative file paths resolve
/// against the working directory.
pub fn build_bath(config: &RunConfig, grid: &MatsubaraGrid) -> Result<(BathFunction, Option<DmftTrace>), Error> {
    match &config.bath {
        BathSpec::Atomic => Ok((BathFunction::atomic(grid), None)),
        BathSpec::SingleLevel { coupling, level } => Ok((BathFunction::single_level(grid, *coupling, *level), None)),
        BathSpec::Dmft { .. } => {
            let settings: DmftSettings = config.bath.dmft_settings().unwrap_or_default();
            let params = FkParams::new(config.mu, config.u, config.w1)?;
            let solution = dmft_bethe_loop(grid, &params, &settings)?;
            let again = dmft_update(&solution.bath, &params, &settings)?;
            let trace = DmftTrace {
                iterations: solution.iterations,
                fixed_point_change: again.max_difference(&solution.bath),
                residuals: solution.residuals,
            };
            Ok((solution.bath, Some(trace)))
        }
        BathSpec::File { path } => {
            let text = std::fs::read_to_string(path).map_err(|err| Error::BathTableSyntax {
                line: 0,
                reason: format!("cannot read {}: {err}", path.display()),
            })?;
            Ok((BathFunction::from_table(grid, &text)?, None))
        }
    }
}

/// Runs one configuration point (the `[sweep]` table is ignored here).
pub fn run(config: &RunConfig) -> RunRecord {
    let started = Instant::now();
    let mut record = RunRecord {
        format_version: FORMAT_VERSION.to_owned(),
        config: RunConfig {
            sweep: None,
            ..config.clone()
        },
        dyson_residual: None,
        dmft: None,
        results: Vec::new(),
        oracle: Vec::new(),
        failures: Vec::new(),
        timings: RunTimings::default(),
    };

    let grid = match MatsubaraGrid::new(config.beta, config.n_cut) {
        Ok(grid) => grid,
        Err(err) => {
            record.failures.push(StageFailure::from_error(Stage::Bath, None, &err));
            return record;
        }
    };

    let t = Instant::now();
    let bath = match build_bath(config, &grid) {
        Ok((bath, trace)) => {
            record.dmft = trace;
            bath
        }
        Err(err) => {
            record.failures.push(StageFailure::from_error(Stage::Bath, None, &err));
            return record;
        }
    };
    record.timings.bath = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let eq = match FkParams::new(config.mu, config.u, config.w1).and_then(|p| FkEquilibrium::new(bath.clone(), p)) {
        Ok(eq) => eq,
        Err(err) => {
            record
                .failures
                .push(StageFailure::from_error(Stage::Equilibrium, None, &err));
            return record;
        }
    };
    record.dyson_residual = Some(eq.dyson_residual());
    record.timings.equilibrium = t.elapsed().as_secs_f64();

    let selection = config.route_selection();
    let per_ell: Vec<(i64, Result<SusceptibilityResult, Error>)> = config
        .ell
        .par_iter()
        .map(|&ell| (ell, BosonicIndex::new(ell).and_then(|e| assemble(&eq, e, &selection))))
        .collect();
    for (ell, outcome) in per_ell {
        match outcome {
            Ok(result) => {
                for o in result.failures() {
                    record.failures.push(StageFailure {
                        stage: Stage::Response,
                        ell: Some(ell),
                        route: Some(o.route),
                        message: o.error.clone().unwrap_or_default(),
                        numerical: o.numerical_failure,
                    });
                }
                for (route, seconds) in &result.timings {
                    record.timings.routes.push(RouteTiming {
                        ell,
                        route: *route,
                        seconds: *seconds,
                    });
                }
                record.results.push(result);
            }
            Err(err) => record
                .failures
                .push(StageFailure::from_error(Stage::Response, Some(ell), &err)),
        }
    }

    if config.oracle.enabled {
        let t = Instant::now();
        record.oracle = run_oracle_point(&bath, eq.params(), &config.ell, &config.oracle);
        for report in &record.oracle {
            if let Some(message) = &report.error {
                record.failures.push(StageFailure {
                    stage: Stage::Oracle,
                    ell: Some(report.ell.get()),
                    route: None,
                    message: message.clone(),
                    numerical: true,
                });
            }
        }
        record.timings.oracle = t.elapsed().as_secs_f64();
    }
    record.timings.total = started.elapsed().as_secs_f64();
    record
}

fn run_oracle_point(bath: &BathFunction, params: &FkParams, ells: &[i64], oracle: &OracleConfig) -> Vec<OracleReport> {
    let settings = OracleSettings {
        h_step: oracle.h_step,
        tolerance: oracle.tolerance,
    };
    ells.par_iter()
        .filter_map(|&ell| BosonicIndex::new(ell).ok())
        .map(|ell| oracle_report(bath, params, ell, &settings))
        .collect()
}

/// A full sweep: one [`RunRecord`] per cartesian point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub format_version: String,
    pub config: RunConfig,
    pub points: Vec<RunRecord>,
}

impl SweepRecord {
    pub fn exit_code(&self) -> i32 {
        self.points
            .iter()
            .map(RunRecord::exit_code)
            .find(|c| *c != exit::SUCCESS)
            .unwrap_or(exit::SUCCESS)
    }
}

/// Runs every sweep point on a pool of `workers` threads; point order is preserved.
pub fn run_sweep(config: &RunConfig, workers: usize) -> SweepRecord {
    let points = config.sweep_points();
    let compute = || points.par_iter().map(run).collect::<Vec<_>>();
    let records = match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(compute),
        Err(_) => compute(),
    };
    SweepRecord {
        format_version: FORMAT_VERSION.to_owned(),
        config: config.clone(),
        points: records,
    }
}

/// A randomly drawn model point for property checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawPoint {
    pub beta: f64,
    pub mu: f64,
    #[serde(rename = "U")]
    pub u: f64,
    pub w1: f64,
    pub ell: i64,
    pub bath: BathSpec,
}

impl DrawPoint {
    /// Uniform draw over `beta ∈ [0.5, 20]`, `μ, U ∈ [-2, 2]`, `w1 ∈ [0, 1]`,
    /// `ℓ ∈ {±1, ±2, ±5}`, with the bath kind cycling through `index`.
    pub fn random<R: Rng>(rng: &mut R, index: usize) -> Self {
        const ELLS: [i64; 6] = [1, -1, 2, -2, 5, -5];
        let beta = rng.random_range(0.5..=20.0);
        let mu = rng.random_range(-2.0..=2.0);
        let u = rng.random_range(-2.0..=2.0);
        let w1 = rng.random_range(0.0..=1.0);
        let ell = ELLS[rng.random_range(0..ELLS.len())];
        let bath = match index % 3 {
            0 => BathSpec::Atomic,
            1 => BathSpec::SingleLevel {
                coupling: rng.random_range(0.2..=1.5),
                level: rng.random_range(-1.0..=1.0),
            },
            _ => BathSpec::Dmft {
                t_star: 1.0,
                tol: 1e-13,
                max_iter: 5000,
                mixing: 0.5,
            },
        };
        Self {
            beta,
            mu,
            u,
            w1,
            ell,
            bath,
        }
    }

    /// Deterministic list of draws from `seed`.
    pub fn draws(seed: u64, count: usize) -> Vec<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|i| Self::random(&mut rng, i)).collect()
    }

    /// A config for this point, inheriting everything else from `base`.
    pub fn to_config(&self, base: &RunConfig) -> RunConfig {
        RunConfig {
            beta: self.beta,
            mu: self.mu,
            u: self.u,
            w1: self.w1,
            ell: vec![self.ell],
            bath: self.bath.clone(),
            sweep: None,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePoint {
    pub label: String,
    pub beta: f64,
    pub mu: f64,
    #[serde(rename = "U")]
    pub u: f64,
    pub w1: f64,
    pub n_cut: usize,
    pub bath: BathSpec,
    pub reports: Vec<OracleReport>,
    pub failure: Option<StageFailure>,
}

/// Output of the `oracle` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub format_version: String,
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub points: Vec<OraclePoint>,
}

impl OracleRecord {
    pub fn exit_code(&self) -> i32 {
        let failures: Vec<StageFailure> = self.points.iter().filter_map(|p| p.failure.clone()).collect();
        let reports: Vec<OracleReport> = self.points.iter().flat_map(|p| p.reports.clone()).collect();
        exit_code_for(&failures, &reports)
    }
}

fn oracle_for_config(label: String, config: &RunConfig) -> OraclePoint {
    let mut point = OraclePoint {
        label,
        beta: config.beta,
        mu: config.mu,
        u: config.u,
        w1: config.w1,
        n_cut: config.n_cut,
        bath: config.bath.clone(),
        reports: Vec::new(),
        failure: None,
    };
    let prepared = MatsubaraGrid::new(config.beta, config.n_cut)
        .and_then(|grid| build_bath(config, &grid))
        .and_then(|(bath, _)| Ok((bath, FkParams::new(config.mu, config.u, config.w1)?)));
    match prepared {
        Ok((bath, params)) => point.reports = run_oracle_point(&bath, &params, &config.ell, &config.oracle),
        Err(err) => point.failure = Some(StageFailure::from_error(Stage::Bath, None, &err)),
    }
    point
}

/// Oracle at the configured point, plus `draws` random points when a seed is given.
pub fn run_oracle(config: &RunConfig, seed: Option<u64>, draws: usize, workers: usize) -> OracleRecord {
    let mut configs = vec![("config".to_owned(), config.clone())];
    if let Some(seed) = seed {
        for (i, draw) in DrawPoint::draws(seed, draws).into_iter().enumerate() {
            configs.push((format!("draw-{i}"), draw.to_config(config)));
        }
    }
    let compute = || {
        configs
            .par_iter()
            .map(|(label, cfg)| oracle_for_config(label.clone(), cfg))
            .collect::<Vec<_>>()
    };
    let points = match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(compute),
        Err(_) => compute(),
    };
    OracleRecord {
        format_version: FORMAT_VERSION.to_owned(),
        config: config.clone(),
        seed,
        points,
    }
}
