//! Command implementations. Every command validates and computes first and
//! writes its files only after everything succeeded.

use std::path::{Path, PathBuf};

use log::warn;
use serde::Serialize;

use emission_core::exact::{initial_excited, ld_slope, ExactOptions, LdPoint};
use emission_core::export::{bundle_csv, bundle_dat, columns_csv, columns_dat, fluid_csv, fluid_dat};
use emission_core::model::fluid_x1_exact;
use emission_core::optimal_path::{
    balance_ratio, chaos_gap, emission_shares, solve_tilt_for_target, SearchOptions, TiltSolution,
};
use emission_core::ratefn::{path_rate, path_rate_profile, PathSamples, Velocity};
use emission_core::ssa::{run_rng, ssa_batch, ssa_run_with, BatchSummary};
use emission_core::{fluid_solve, Error, MicroState, RateParams, ScaledState, TimeGrid};

use crate::config::{pick, FileConfig, Model, ModelSection};
use crate::error::CliError;
use crate::{Cli, Command, OUT_ENV};

const CROSS_CHECK_TOL: f64 = 1e-4;

struct Defaults {
    horizon: f64,
    /// `None` starts from the stationary fraction `λ/(λ+μ+ν)`.
    x1_0: Option<f64>,
    n: u64,
    grid_points: usize,
}

const SIMULATION_DEFAULTS: Defaults = Defaults {
    horizon: 3.0,
    x1_0: Some(0.0),
    n: 1000,
    grid_points: 64,
};

const PATH_DEFAULTS: Defaults = Defaults {
    horizon: 1.0,
    x1_0: None,
    n: 20,
    grid_points: 2048,
};

struct Context {
    model: Model,
    seed: u64,
    grid_points: usize,
    out: PathBuf,
}

fn resolve(cli: &Cli, file: &FileConfig, d: &Defaults) -> Result<Context, CliError> {
    let m = file.model.clone().unwrap_or_default();
    let ModelSection {
        lambda,
        mu,
        nu,
        horizon,
        n,
        x1_0,
    } = m;
    let lambda = pick(cli.model.lambda, lambda, 1.0);
    let mu = pick(cli.model.mu, mu, 1.0);
    let nu = pick(cli.model.nu, nu, 1.0);
    let stationary = if lambda + mu + nu > 0.0 {
        lambda / (lambda + mu + nu)
    } else {
        0.0
    };
    let model = Model {
        lambda,
        mu,
        nu,
        horizon: pick(cli.model.horizon, horizon, d.horizon),
        n: pick(cli.model.n, n, d.n),
        x1_0: pick(cli.model.x1_0, x1_0, d.x1_0.unwrap_or(stationary)),
    };
    model.validate()?;
    let grid_points = pick(cli.grid_points, file.grid_points, d.grid_points);
    if grid_points < 2 {
        return Err(CliError::Config("grid_points must be at least 2".into()));
    }
    let env_out = std::env::var_os(OUT_ENV).map(PathBuf::from);
    let out = cli
        .out
        .clone()
        .or_else(|| file.out.clone())
        .or(env_out)
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Context {
        model,
        seed: pick(cli.seed, file.seed, 0),
        grid_points,
        out,
    })
}

fn write_files(out: &Path, files: &[(String, String)]) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    for (name, body) in files {
        std::fs::write(out.join(name), body)?;
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

pub fn dispatch(cli: &Cli, file: &FileConfig) -> Result<(), CliError> {
    match &cli.command {
        Command::Fluid => fluid(cli, file),
        Command::Simulate {
            n_runs,
            trajectories,
        } => simulate(cli, file, *n_runs, *trajectories),
        Command::OptimalPath { b, alpha } => optimal_path(cli, file, *b, *alpha),
        Command::Ldcheck {
            b,
            n_list,
            budget,
            binomial,
        } => ldcheck(cli, file, *b, n_list.clone(), *budget, *binomial),
        Command::BalanceScan { b_list, alpha } => balance_scan(cli, file, b_list.clone(), *alpha),
        Command::Rate { path } => rate(cli, file, path.clone()),
    }
}

fn fluid(cli: &Cli, file: &FileConfig) -> Result<(), CliError> {
    let ctx = resolve(cli, file, &SIMULATION_DEFAULTS)?;
    let params = ctx.model.params();
    let grid = TimeGrid::uniform(params.horizon, ctx.grid_points)?;
    let path = fluid_solve(&params, &ScaledState::excited(ctx.model.x1_0)?, &grid)?;
    write_files(
        &ctx.out,
        &[
            ("fluid.csv".into(), fluid_csv(&path)),
            ("fluid.dat".into(), fluid_dat(&path)),
        ],
    )
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    model: Model,
    seed: u64,
    grid_points: usize,
    /// `max_t |mean x1 − fluid x1|` over the grid.
    max_deviation_from_fluid: f64,
    summary: &'a BatchSummary,
}

fn simulate(
    cli: &Cli,
    file: &FileConfig,
    n_runs: Option<usize>,
    trajectories: Option<usize>,
) -> Result<(), CliError> {
    let ctx = resolve(cli, file, &SIMULATION_DEFAULTS)?;
    let section = file.simulate.clone().unwrap_or_default();
    let n_runs = pick(n_runs, section.n_runs, 100);
    let trajectories = pick(trajectories, section.trajectories, 10).min(n_runs);
    let params = ctx.model.params();
    let n = ctx.model.n;
    let init = MicroState::initial(initial_excited(ctx.model.x1_0, n), n)?;
    let grid = TimeGrid::uniform(params.horizon, ctx.grid_points)?;
    let summary = ssa_batch(&params, &init, n_runs, ctx.seed, &grid)?;

    let x1_0 = init.scaled().x1;
    let fluid: Vec<f64> = grid.times().iter().map(|&t| fluid_x1_exact(&params, x1_0, t)).collect();
    let mean: Vec<[f64; 3]> = summary.mean.iter().map(|s| [s.x1, s.x2, s.x3]).collect();
    let deviation = mean
        .iter()
        .zip(&fluid)
        .map(|(m, f)| (m[0] - f).abs())
        .fold(0.0, f64::max);
    let col = |i: usize| -> Vec<f64> { mean.iter().map(|m| m[i]).collect() };
    let var_x1: Vec<f64> = summary.variance.iter().map(|s| s.x1).collect();
    let headers = ["t", "mean_x1", "mean_x2", "mean_x3", "var_x1", "fluid_x1"];
    let (c1, c2, c3) = (col(0), col(1), col(2));
    let columns: [&[f64]; 6] = [grid.times(), &c1, &c2, &c3, &var_x1, &fluid];

    let mut files = vec![
        (
            "summary.json".to_string(),
            to_json(&SimulateReport {
                model: ctx.model,
                seed: ctx.seed,
                grid_points: ctx.grid_points,
                max_deviation_from_fluid: deviation,
                summary: &summary,
            }),
        ),
        ("mean.csv".to_string(), columns_csv(&headers, &columns)?),
        ("mean.dat".to_string(), columns_dat(&headers, &columns)?),
    ];
    for i in 0..trajectories {
        let tr = ssa_run_with(&params, &init, &mut run_rng(ctx.seed, i as u64))?;
        files.push((format!("trajectory_{i:04}.csv"), tr.to_csv()));
    }
    write_files(&ctx.out, &files)
}

#[derive(Serialize)]
struct OptimalPathHeader {
    model: Model,
    b_target: f64,
    #[serde(rename = "I")]
    rate: f64,
    #[serde(rename = "B")]
    emission: f64,
    kappa2: f64,
    kappa3: f64,
    spont_factor: f64,
    stim_factor: f64,
    #[serde(rename = "E")]
    energy: f64,
    energy_residual: f64,
    x1_bar: f64,
    alpha: f64,
    chaos_gap: f64,
    balance_ratio: f64,
    spont_share: f64,
    alpha_share: f64,
    beta_share: f64,
    rate_ratefn: f64,
    ratefn_rel_diff: f64,
    cross_check_ok: bool,
    richardson_rel_change: f64,
    grid_points: usize,
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn header(model: Model, b_target: f64, alpha: f64, sol: &TiltSolution) -> Result<OptimalPathHeader, CliError> {
    let bundle = &sol.bundle;
    let rate_ratefn = bundle.quadrature_rate()?;
    let ratefn_rel_diff = rel_diff(bundle.rate, rate_ratefn);
    if ratefn_rel_diff > CROSS_CHECK_TOL {
        warn!("rate {} and Lagrangian quadrature {rate_ratefn} differ by {ratefn_rel_diff:.3e}", bundle.rate);
    }
    let (alpha_share, beta_share) = emission_shares(bundle);
    Ok(OptimalPathHeader {
        model,
        b_target,
        rate: bundle.rate,
        emission: bundle.emission,
        kappa2: bundle.tilt.kappa2,
        kappa3: bundle.tilt.kappa3,
        spont_factor: bundle.tilt.spont_factor,
        stim_factor: bundle.tilt.stim_factor,
        energy: bundle.energy,
        energy_residual: bundle.energy_residual(),
        x1_bar: bundle.x1_bar,
        alpha,
        chaos_gap: chaos_gap(bundle, alpha)?,
        balance_ratio: balance_ratio(bundle),
        spont_share: sol.spont_share,
        alpha_share,
        beta_share,
        rate_ratefn,
        ratefn_rel_diff,
        cross_check_ok: ratefn_rel_diff <= CROSS_CHECK_TOL,
        richardson_rel_change: sol.richardson_rel_change,
        grid_points: bundle.grid.len(),
    })
}

fn search_options(grid_points: usize) -> SearchOptions {
    SearchOptions {
        grid_points,
        ..SearchOptions::default()
    }
}

fn optimal_path(cli: &Cli, file: &FileConfig, b: Option<f64>, alpha: Option<f64>) -> Result<(), CliError> {
    let ctx = resolve(cli, file, &PATH_DEFAULTS)?;
    let section = file.optimal_path.clone().unwrap_or_default();
    let b = pick(b, section.b, 2.0);
    let alpha = pick(alpha, section.alpha, 0.25 * ctx.model.horizon);
    let params = ctx.model.params();
    let sol = solve_tilt_for_target(&params, ctx.model.x1_0, b, &search_options(ctx.grid_points))?;
    let head = header(ctx.model, b, alpha, &sol)?;
    write_files(
        &ctx.out,
        &[
            ("optimal_path.json".into(), to_json(&head)),
            ("optimal_path.csv".into(), bundle_csv(&sol.bundle)),
            ("optimal_path.dat".into(), bundle_dat(&sol.bundle)),
        ],
    )
}

#[derive(Serialize)]
struct LdReport {
    model: Model,
    b: f64,
    binomial_start: bool,
    points: Vec<LdPoint>,
    extrapolated: Option<f64>,
    monotone: bool,
    variational_rate: f64,
    relative_gap: Option<f64>,
}

fn ldcheck(
    cli: &Cli,
    file: &FileConfig,
    b: Option<f64>,
    n_list: Option<Vec<u64>>,
    budget: Option<usize>,
    binomial: bool,
) -> Result<(), CliError> {
    let ctx = resolve(cli, file, &PATH_DEFAULTS)?;
    let section = file.ldcheck.clone().unwrap_or_default();
    let b = pick(b, section.b, 2.0);
    let n_list = pick(n_list, section.n_list, vec![20, 40, 60]);
    let options = ExactOptions {
        budget: pick(budget, section.budget, ExactOptions::default().budget),
        binomial_start: binomial || section.binomial.unwrap_or(false),
        ..ExactOptions::default()
    };
    let params = ctx.model.params();
    let scan = ld_slope(&params, b, &n_list, ctx.model.x1_0, &options)?;
    let variational = match solve_tilt_for_target(&params, ctx.model.x1_0, b, &search_options(ctx.grid_points)) {
        Ok(sol) => sol.bundle.rate,
        // Emission below the typical value is not rare.
        Err(Error::Infeasible(_)) => 0.0,
        Err(e) => return Err(e.into()),
    };
    let relative_gap = scan
        .extrapolated
        .filter(|_| variational > 0.0)
        .map(|e| (e - variational).abs() / variational);

    let col = |f: fn(&LdPoint) -> f64| -> Vec<f64> { scan.points.iter().map(f).collect() };
    let headers = ["n", "a", "probability", "slope"];
    let (c0, c1, c2, c3) = (
        col(|p| p.n as f64),
        col(|p| p.a as f64),
        col(|p| p.probability),
        col(|p| p.slope),
    );
    let columns: [&[f64]; 4] = [&c0, &c1, &c2, &c3];
    let report = LdReport {
        model: ctx.model,
        b,
        binomial_start: options.binomial_start,
        points: scan.points.clone(),
        extrapolated: scan.extrapolated,
        monotone: scan.monotone,
        variational_rate: variational,
        relative_gap,
    };
    write_files(
        &ctx.out,
        &[
            ("ldcheck.json".into(), to_json(&report)),
            ("ldcheck.csv".into(), columns_csv(&headers, &columns)?),
            ("ldcheck.dat".into(), columns_dat(&headers, &columns)?),
        ],
    )
}

#[derive(Serialize)]
struct ScanReport {
    model: Model,
    rows: Vec<OptimalPathHeader>,
}

fn balance_scan(
    cli: &Cli,
    file: &FileConfig,
    b_list: Option<Vec<f64>>,
    alpha: Option<f64>,
) -> Result<(), CliError> {
    let ctx = resolve(cli, file, &PATH_DEFAULTS)?;
    let section = file.balance_scan.clone().unwrap_or_default();
    let b_list = pick(b_list, section.b_list, vec![10.0, 100.0, 1000.0, 10000.0]);
    if b_list.is_empty() {
        return Err(CliError::Config("b_list is empty".into()));
    }
    let alpha = pick(alpha, section.alpha, 0.25 * ctx.model.horizon);
    let params = ctx.model.params();
    let options = search_options(ctx.grid_points);
    let rows = b_list
        .iter()
        .map(|&b| {
            let sol = solve_tilt_for_target(&params, ctx.model.x1_0, b, &options)?;
            header(ctx.model, b, alpha, &sol)
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let col = |f: fn(&OptimalPathHeader) -> f64| -> Vec<f64> { rows.iter().map(f).collect() };
    let headers = ["B", "I", "I_over_BlnB", "balance_ratio", "chaos_gap", "alpha_share", "beta_share"];
    let cols = [
        col(|r| r.b_target),
        col(|r| r.rate),
        col(|r| r.rate / (r.b_target * r.b_target.ln())),
        col(|r| r.balance_ratio),
        col(|r| r.chaos_gap),
        col(|r| r.alpha_share),
        col(|r| r.beta_share),
    ];
    let columns: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    write_files(
        &ctx.out,
        &[
            ("balance_scan.json".into(), to_json(&ScanReport { model: ctx.model, rows })),
            ("balance_scan.csv".into(), columns_csv(&headers, &columns)?),
            ("balance_scan.dat".into(), columns_dat(&headers, &columns)?),
        ],
    )
}

#[derive(Serialize)]
struct RateReport {
    model: Model,
    path: PathBuf,
    #[serde(rename = "I")]
    rate: f64,
    profile: Vec<f64>,
}

fn read_path(path: &Path) -> Result<PathSamples, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required: Vec<usize> = ["t", "x1", "x2", "x3"]
        .iter()
        .map(|&h| find(h).ok_or_else(|| CliError::Config(format!("{}: missing column {h}", path.display()))))
        .collect::<Result<_, _>>()?;
    let velocity: Option<Vec<usize>> = ["v1", "v2", "v3"].iter().map(|&h| find(h)).collect();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); 7];
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let indices = required.iter().chain(velocity.iter().flatten());
        for (k, &idx) in indices.enumerate() {
            let field = record.get(idx).unwrap_or("").trim();
            let v: f64 = field.parse().map_err(|_| {
                CliError::Config(format!("{}: row {}: bad number {field:?}", path.display(), line + 1))
            })?;
            cols[k].push(v);
        }
    }
    let grid = TimeGrid::new(cols[0].clone())?;
    let samples = PathSamples::new(grid, cols[1].clone(), cols[2].clone(), cols[3].clone())?;
    if velocity.is_some() {
        let v = (0..cols[4].len())
            .map(|i| Velocity::new(cols[4][i], cols[5][i], cols[6][i]))
            .collect();
        Ok(samples.with_velocities(v)?)
    } else {
        Ok(samples)
    }
}

fn rate(cli: &Cli, file: &FileConfig, path: Option<PathBuf>) -> Result<(), CliError> {
    let ctx = resolve(cli, file, &PATH_DEFAULTS)?;
    let section = file.rate.clone().unwrap_or_default();
    let path = path
        .or(section.path)
        .ok_or_else(|| CliError::Config("rate needs --path".into()))?;
    let samples = read_path(&path)?;
    let params = RateParams {
        horizon: samples.grid.last(),
        ..ctx.model.params()
    };
    let value = path_rate(&samples, &params)?;
    let profile = path_rate_profile(&samples, &params)?;
    println!("{}", emission_core::export::fmt_f64(value));
    write_files(
        &ctx.out,
        &[(
            "rate.json".into(),
            to_json(&RateReport {
                model: Model {
                    horizon: params.horizon,
                    ..ctx.model
                },
                path,
                rate: value,
                profile,
            }),
        )],
    )
}
