use std::error::Error as StdError;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use twoway_toa::conic::{self, read_program, write_program};
use twoway_toa::crlb::compute_crlb;
use twoway_toa::gn::{gauss_newton, random_init, Cube};
use twoway_toa::harness::output::write_run_dump;
use twoway_toa::harness::run::RunOptions;
use twoway_toa::harness::scenario::{stream_rng, Stream};
use twoway_toa::harness::{
    emit_results, run_campaign, run_speed_sweep, sample_scenario, summary_table, CampaignConfig, CellResult, Method,
};
use twoway_toa::measurement::{simulate_with, TwoWayMeasurements};
use twoway_toa::model::{Scenario, StateVector};
use twoway_toa::sdp::{build_sdp, extract_solution, Motion};

type BoxResult<T> = Result<T, Box<dyn StdError>>;

/// Two-way TOA localization: simulation, estimation and Monte-Carlo campaigns.
#[derive(Debug, Parser)]
#[command(name = "twoway-toa", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML file mirroring the campaign configuration; missing keys keep
    /// their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte-Carlo runs per cell.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Noise standard deviations, m, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    noise: Option<Vec<f64>>,
    /// Speed grid for the speed sweep, m/s, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    speeds: Option<Vec<f64>>,
    /// Subset of sdp_m, gauss_newton, sdp_stationary, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Print one interior-point trace line per iteration to stderr.
    #[arg(long, global = true)]
    verbose_solver: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw one scenario and write it with its noisy measurements as JSON.
    Simulate {
        /// Noise standard deviation, m. Defaults to the first noise level.
        #[arg(long)]
        sigma: Option<f64>,
        /// Fix the speed instead of drawing it from the prior, m/s.
        #[arg(long)]
        speed: Option<f64>,
        /// Draw index; the scenario seed is `seed + run`.
        #[arg(long, default_value_t = 0)]
        run: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the state from a measurement dump, or solve a conic program
    /// file, and print a JSON report.
    Solve {
        /// Dump written by `simulate`.
        #[arg(long, conflicts_with = "program", required_unless_present = "program")]
        input: Option<PathBuf>,
        /// Conic program in the text format of `--export-program`.
        #[arg(long)]
        program: Option<PathBuf>,
        #[arg(long, default_value = "sdp_m")]
        method: Method,
        /// Gauss-Newton starting point.
        #[arg(long, value_enum, default_value_t = Init::Random)]
        init: Init,
        /// Also write the relaxation's conic program in text form.
        #[arg(long)]
        export_program: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Success rate and RMSE per noise level.
    Campaign(CampaignArgs),
    /// RMSE per fixed speed at the sweep noise level.
    SpeedSweep(CampaignArgs),
    /// Position bound of a scenario, from a dump or a fresh draw.
    Crlb {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        run: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct CampaignArgs {
    /// Result CSV; the summary table goes next to it.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Also write every run's record to this CSV.
    #[arg(long)]
    per_run_dump: Option<PathBuf>,
    /// Fill the mean_ms column. Timings vary between runs, so the CSV is no
    /// longer reproducible byte for byte.
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Init {
    Random,
    Truth,
}

#[derive(Debug, Serialize, Deserialize)]
struct SimulationDump {
    seed: u64,
    scenario: Scenario,
    measurements: TwoWayMeasurements,
}

fn effective_config(g: &GlobalArgs) -> BoxResult<CampaignConfig> {
    let mut c = match &g.config {
        Some(path) => CampaignConfig::load(path)?,
        None => CampaignConfig::default(),
    };
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(r) = g.runs {
        c.runs = r;
    }
    if let Some(n) = &g.noise {
        c.noise = n.clone();
    }
    if let Some(v) = &g.speeds {
        c.speeds = v.clone();
    }
    if let Some(m) = &g.methods {
        c.methods = m.clone();
    }
    c.validate()?;
    Ok(c)
}

fn write_output(out: Option<&Path>, text: &str) -> BoxResult<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_json(value: &impl Serialize) -> BoxResult<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn read_dump(path: &Path) -> BoxResult<SimulationDump> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn draw(config: &CampaignConfig, sigma: Option<f64>, speed: Option<f64>, run: usize) -> BoxResult<SimulationDump> {
    let sigma = sigma.unwrap_or(config.noise[0]);
    let seed = config.seed.wrapping_add(run as u64);
    let scenario = sample_scenario(config, sigma, speed, seed);
    let measurements = simulate_with(&scenario, &mut stream_rng(seed, Stream::Noise))?;
    Ok(SimulationDump { seed, scenario, measurements })
}

fn state_json(s: &StateVector) -> serde_json::Value {
    json!({
        "position": s.position().as_slice(),
        "velocity": s.velocity().as_slice(),
        "clock_offset": s.clock_offset(),
        "clock_drift": s.clock_drift(),
    })
}

fn solve_dump(
    config: &CampaignConfig,
    dump: &SimulationDump,
    method: Method,
    init: Init,
    export: Option<&Path>,
    verbose: bool,
) -> BoxResult<serde_json::Value> {
    let meas = &dump.measurements;
    let anchors = dump.scenario.anchor_positions();
    let weights = meas.weights()?;
    let truth = &dump.scenario.ud.position;
    let mut report = match method {
        Method::GaussNewton => {
            let start = match init {
                Init::Truth => StateVector::from_state(&dump.scenario.ud),
                Init::Random => {
                    let cube = Cube { center: [0.0; 3], edge: config.geometry.ud_edge };
                    random_init(&cube, dump.scenario.dim(), &mut stream_rng(dump.seed, Stream::Init))
                }
            };
            let r = gauss_newton(meas, &weights, &anchors, &start, &config.gauss_newton)?;
            json!({
                "method": method,
                "converged": r.converged,
                "iterations": r.iterations,
                "final_cost": r.final_cost,
                "failure": r.failure.map(|f| format!("{f:?}")),
                "estimate": state_json(&r.estimate),
                "position_error": (r.estimate.position() - truth).norm(),
            })
        }
        Method::SdpM | Method::SdpStationary => {
            let motion = if method == Method::SdpM { Motion::Moving } else { Motion::Stationary };
            let opts = config.sdp_options(verbose);
            let problem = build_sdp(meas, &weights, &anchors, motion, &opts)?;
            if let Some(path) = export {
                fs::write(path, write_program(&problem.program)).map_err(|e| format!("{}: {e}", path.display()))?;
                info!("wrote conic program to {}", path.display());
            }
            let result = conic::solve(&problem.program, &opts.solver)?;
            let r = extract_solution(&problem, &result);
            json!({
                "method": method,
                "status": r.status,
                "iterations": r.iterations,
                "duality_gap": r.duality_gap,
                "tightness": r.tightness,
                "objective": r.objective,
                "wall_ms": r.wall_time * 1e3,
                "estimate": state_json(&r.estimate),
                "position_error": (r.estimate.position() - truth).norm(),
            })
        }
    };
    if let Ok(bound) = compute_crlb(&dump.scenario) {
        report["crlb_position"] = json!(bound.pos_rmse_bound);
    }
    Ok(report)
}

fn solve_program(config: &CampaignConfig, path: &Path, verbose: bool) -> BoxResult<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let program = read_program(&text)?;
    let r = conic::solve(&program, &config.ipm_settings(verbose))?;
    Ok(json!({
        "status": r.status,
        "iterations": r.iterations,
        "primal_objective": r.primal_objective,
        "dual_objective": r.dual_objective,
        "relative_gap": r.relative_gap,
        "primal_infeasibility": r.primal_infeasibility,
        "dual_infeasibility": r.dual_infeasibility,
        "wall_ms": r.wall_time * 1e3,
        "x": r.x.as_slice(),
    }))
}

fn finish_campaign(results: &[CellResult], records: &[twoway_toa::harness::RunRecord], args: &CampaignArgs) -> BoxResult<()> {
    let summary = emit_results(results, &args.out, args.timing)?;
    if let Some(dump) = &args.per_run_dump {
        write_run_dump(records, dump)?;
        info!("wrote {} run records to {}", records.len(), dump.display());
    }
    print!("{}", summary_table(results));
    eprintln!("results: {}  summary: {}", args.out.display(), summary.display());
    Ok(())
}

fn run(cli: Cli) -> BoxResult<()> {
    let mut config = effective_config(&cli.global)?;
    let verbose = cli.global.verbose_solver;
    let options = RunOptions { verbose_solver: verbose };
    if cli.global.print_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err("no subcommand given (see --help)".into());
    };
    match command {
        Command::Simulate { sigma, speed, run, out } => {
            let dump = draw(&config, sigma, speed, run)?;
            write_output(out.as_deref(), &to_json(&dump)?)
        }
        Command::Solve { input, program, method, init, export_program, out } => {
            let report = match (input, program) {
                (Some(input), _) => solve_dump(&config, &read_dump(&input)?, method, init, export_program.as_deref(), verbose)?,
                (None, Some(program)) => solve_program(&config, &program, verbose)?,
                (None, None) => unreachable!("clap requires one of --input and --program"),
            };
            write_output(out.as_deref(), &to_json(&report)?)
        }
        Command::Campaign(args) => {
            info!("campaign: {} cells x {} runs, seed {}", config.noise.len(), config.runs, config.seed);
            let (results, records) = run_campaign(&config, options);
            finish_campaign(&results, &records, &args)
        }
        Command::SpeedSweep(args) => {
            if let Some(n) = &cli.global.noise {
                config.sweep_noise = n[0];
            }
            let methods = cli.global.methods.clone().unwrap_or_else(|| vec![Method::SdpM, Method::SdpStationary]);
            info!("speed sweep: {:?} m/s at sigma {} m, {} runs", config.speeds, config.sweep_noise, config.runs);
            let (results, records) = run_speed_sweep(&config, &config.speeds, &methods, options);
            finish_campaign(&results, &records, &args)
        }
        Command::Crlb { input, sigma, run, out } => {
            let dump = match input {
                Some(path) => read_dump(&path)?,
                None => draw(&config, sigma, None, run)?,
            };
            let r = compute_crlb(&dump.scenario)?;
            let diag: Vec<f64> = (0..r.covariance.nrows()).map(|k| r.covariance[(k, k)].sqrt()).collect();
            let report = json!({
                "position_bound": r.pos_rmse_bound,
                "success_threshold": r.threshold,
                "std_bounds": diag,
            });
            write_output(out.as_deref(), &to_json(&report)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
