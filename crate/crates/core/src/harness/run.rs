use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crlb::{compute_crlb, is_success};
use crate::gn::{gauss_newton, random_init, Cube};
use crate::measurement::simulate_with;
use crate::sdp::{solve_sdp, Motion, SolveStatus};

use super::config::{CampaignConfig, Method};
use super::scenario::{sample_scenario, stream_rng, Stream};

/// Outcome of one method on one Monte-Carlo draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: String,
    pub run: usize,
    pub seed: u64,
    pub method: Method,
    /// Position error, meters. NaN when the method produced no finite
    /// estimate.
    pub error: f64,
    /// Position bound of this draw, meters.
    pub crlb: f64,
    pub success: bool,
    /// Solver reached its own stopping criterion.
    pub converged: bool,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodStats {
    pub method: Method,
    pub runs: usize,
    pub success_rate: f64,
    /// RMSE over every run with a finite estimate.
    pub rmse_all: f64,
    /// RMSE over successful runs only; NaN when there are none.
    pub rmse_success: f64,
    /// Runs where the solver stopped without meeting its own criterion.
    pub nonconverged: usize,
    /// Success rate among converged runs only.
    pub success_rate_converged: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    /// `sigma=<m>` or `speed=<m/s>`.
    pub cell: String,
    pub seed: u64,
    pub runs: usize,
    /// `√mean(bound²)` over the cell's draws; the same for every method.
    pub crlb_rmse: f64,
    pub methods: Vec<MethodStats>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub verbose_solver: bool,
}

fn rms(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Every enabled method on draw `run` of a cell. All methods see the same
/// scenario and the same noisy measurements.
#[allow(clippy::too_many_arguments)]
pub fn run_one(
    config: &CampaignConfig,
    cell: &str,
    sigma: f64,
    speed: Option<f64>,
    run: usize,
    methods: &[Method],
    options: RunOptions,
) -> Vec<RunRecord> {
    let seed = config.seed.wrapping_add(run as u64);
    let scenario = sample_scenario(config, sigma, speed, seed);
    let truth = &scenario.ud.position;
    let anchors = scenario.anchor_positions();
    let measurements = simulate_with(&scenario, &mut stream_rng(seed, Stream::Noise));
    let bound = compute_crlb(&scenario).map(|r| r.pos_rmse_bound).unwrap_or(f64::NAN);
    let threshold = crate::crlb::SUCCESS_FACTOR * bound;

    methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let outcome = measurements.as_ref().ok().and_then(|meas| {
                let weights = meas.weights().ok()?;
                match method {
                    Method::GaussNewton => {
                        let cube = Cube { center: [0.0; 3], edge: config.geometry.ud_edge };
                        let init = random_init(&cube, scenario.dim(), &mut stream_rng(seed, Stream::Init));
                        let r = gauss_newton(meas, &weights, &anchors, &init, &config.gauss_newton).ok()?;
                        Some((r.estimate.position(), r.converged))
                    }
                    Method::SdpM | Method::SdpStationary => {
                        let motion = if method == Method::SdpM { Motion::Moving } else { Motion::Stationary };
                        let opts = config.sdp_options(options.verbose_solver);
                        let r = solve_sdp(meas, &weights, &anchors, motion, &opts).ok()?;
                        Some((r.estimate.position(), r.status == SolveStatus::Optimal))
                    }
                }
            });
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let (error, success, converged) = match outcome {
                Some((p, conv)) if p.iter().all(|x| x.is_finite()) => {
                    ((&p - truth).norm(), is_success(&p, truth, threshold), conv)
                }
                Some(_) | None => (f64::NAN, false, false),
            };
            RunRecord {
                cell: cell.to_string(),
                run,
                seed,
                method,
                error,
                crlb: bound,
                success,
                converged,
                wall_ms,
            }
        })
        .collect()
}

/// Aggregates per-run records into one result per cell, in first-seen cell
/// order and the given method order.
pub fn aggregate(records: &[RunRecord], methods: &[Method], seed: u64) -> Vec<CellResult> {
    let mut cells: Vec<&str> = Vec::new();
    for r in records {
        if !cells.contains(&r.cell.as_str()) {
            cells.push(&r.cell);
        }
    }
    cells
        .into_iter()
        .map(|cell| {
            let in_cell: Vec<&RunRecord> = records.iter().filter(|r| r.cell == cell).collect();
            let first_method = in_cell.first().map(|r| r.method);
            let bounds = in_cell.iter().filter(|r| Some(r.method) == first_method).map(|r| r.crlb);
            let crlb_rmse = rms(bounds);
            let stats: Vec<MethodStats> = methods
                .iter()
                .map(|&method| {
                    let rs: Vec<&&RunRecord> = in_cell.iter().filter(|r| r.method == method).collect();
                    let runs = rs.len();
                    let successes = rs.iter().filter(|r| r.success).count();
                    let converged: Vec<_> = rs.iter().filter(|r| r.converged).collect();
                    let conv_success = converged.iter().filter(|r| r.success).count();
                    MethodStats {
                        method,
                        runs,
                        success_rate: successes as f64 / runs.max(1) as f64,
                        rmse_all: rms(rs.iter().map(|r| r.error).filter(|e| e.is_finite())),
                        rmse_success: rms(rs.iter().filter(|r| r.success).map(|r| r.error)),
                        nonconverged: runs - converged.len(),
                        success_rate_converged: if converged.is_empty() {
                            f64::NAN
                        } else {
                            conv_success as f64 / converged.len() as f64
                        },
                        mean_ms: rs.iter().map(|r| r.wall_ms).sum::<f64>() / runs.max(1) as f64,
                    }
                })
                .collect();
            CellResult { cell: cell.to_string(), seed, runs: stats.first().map_or(0, |s| s.runs), crlb_rmse, methods: stats }
        })
        .collect()
}

fn run_cells(
    config: &CampaignConfig,
    cells: &[(String, f64, Option<f64>)],
    methods: &[Method],
    options: RunOptions,
) -> Vec<RunRecord> {
    let mut records = Vec::with_capacity(cells.len() * config.runs * methods.len());
    for (label, sigma, speed) in cells {
        let cell: Vec<RunRecord> = (0..config.runs)
            .into_par_iter()
            .flat_map_iter(|run| run_one(config, label, *sigma, *speed, run, methods, options))
            .collect();
        records.extend(cell);
    }
    records
}

/// One cell per noise level in `config.noise`, speeds drawn from the prior.
/// Returns the aggregates and the per-run records they were computed from.
pub fn run_campaign(config: &CampaignConfig, options: RunOptions) -> (Vec<CellResult>, Vec<RunRecord>) {
    let cells: Vec<_> = config.noise.iter().map(|&s| (format!("sigma={s}"), s, None)).collect();
    let records = run_cells(config, &cells, &config.methods, options);
    (aggregate(&records, &config.methods, config.seed), records)
}

/// One cell per speed at `config.sweep_noise`, random heading.
pub fn run_speed_sweep(
    config: &CampaignConfig,
    speeds: &[f64],
    methods: &[Method],
    options: RunOptions,
) -> (Vec<CellResult>, Vec<RunRecord>) {
    let cells: Vec<_> = speeds.iter().map(|&v| (format!("speed={v}"), config.sweep_noise, Some(v))).collect();
    let records = run_cells(config, &cells, methods, options);
    (aggregate(&records, methods, config.seed), records)
}
