mod plot;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use rip_core::config::Config;
use rip_core::sim::{self, Mode, RunStatus, Trace};
use rip_core::verify::{self, CounterexampleSpec, ResidualReport, SuiteOptions};
use rip_core::Error;

use plot::{line_chart, Series};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "rip",
    version,
    about = "Energy-shaping control of the rotary inverted pendulum"
)]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a closed-loop simulation and write trace.csv.
    Simulate(SimulateArgs),
    /// Check the design identities numerically.
    Verify(VerifyArgs),
    /// Print the region on which the shaped inertia can be positive definite.
    Region(RegionArgs),
    /// Show that a published closed-form solution misses its ODE.
    Counterexample(CounterexampleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Nominal,
    DisturbedNominal,
    DisturbedRobust,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Nominal => Mode::Nominal,
            ModeArg::DisturbedNominal => Mode::DisturbedNominal,
            ModeArg::DisturbedRobust => Mode::DisturbedRobust,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Override `simulation.mode`.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Override `simulation.t_end`.
    #[arg(long)]
    t_end: Option<f64>,
    /// Override `simulation.dt`.
    #[arg(long)]
    dt: Option<f64>,
    /// Also write SVG plots.
    #[arg(long)]
    plots: bool,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Points of the scalar q2 grids.
    #[arg(long, default_value_t = 1000)]
    grid: usize,
    /// Points per axis of the planar grid.
    #[arg(long, default_value_t = 100)]
    planar: usize,
    /// Cells of the region sign scan.
    #[arg(long, default_value_t = 1_000_000)]
    cells: usize,
    /// Random states for the closed-loop equivalence check.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Offset added to psi3 inside the kinetic check.
    #[arg(
        long,
        hide = true,
        default_value_t = 0.0,
        allow_negative_numbers = true
    )]
    perturb_psi3: f64,
}

#[derive(Debug, Args)]
struct RegionArgs {
    /// Cells of the sign scan.
    #[arg(long, default_value_t = 1_000_000)]
    cells: usize,
}

#[derive(Debug, Args)]
struct CounterexampleArgs {
    #[arg(long, default_value_t = 1.0)]
    k1: f64,
    #[arg(long, default_value_t = 1.0)]
    k2: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Additional random (k1, k2, b) draws.
    #[arg(long, default_value_t = 10)]
    draws: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// Points of the q2 grid on [-1, 1].
    #[arg(long, default_value_t = 1000)]
    grid: usize,
}

/// Failure categories mapped to exit codes.
enum Failure {
    Model(String),
    Config(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. }
            | Error::Parse { .. }
            | Error::UnknownVariable { .. }
            | Error::InvalidParameter { .. } => Failure::Config(e.to_string()),
            _ => Failure::Model(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Model(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(&cli, a),
        Command::Verify(a) => run_verify(&cli, a),
        Command::Region(a) => region(&cli, a),
        Command::Counterexample(a) => counterexample(&cli, a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILURE),
        Err(Failure::Model(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_FAILURE)
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn load(cli: &Cli, lenient: bool) -> Result<Config, Failure> {
    let config = match (&cli.config, lenient) {
        (Some(p), false) => Config::load(p)?,
        (Some(p), true) => Config::load_lenient(p)?,
        (None, _) => Config::default(),
    };
    Ok(config)
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

#[derive(Serialize)]
struct SimulationSummary {
    mode: &'static str,
    status: &'static str,
    stop_time: f64,
    steps: usize,
    final_q: [f64; 2],
    final_q_inf_norm: f64,
    max_abs_q: f64,
    final_estimation_error: f64,
    min_hd_slope: f64,
    max_hd_slope: f64,
    max_v_slope: f64,
    max_matching_residual: f64,
    trace: PathBuf,
    plots: Vec<PathBuf>,
}

fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<bool, Failure> {
    let mut config = load(cli, false)?;
    if let Some(m) = args.mode {
        config = apply_mode(config, m.into())?;
    }
    if let Some(t) = args.t_end {
        config.simulation.t_end = t;
    }
    if let Some(dt) = args.dt {
        config.simulation.dt = dt;
    }
    let out_dir = cli.out.clone().unwrap_or_else(|| config.output.dir.clone());

    let trace = sim::run(&config.scenario())?;
    fs::create_dir_all(&out_dir).map_err(|e| io_failure(&out_dir, e))?;
    let trace_path = out_dir.join("trace.csv");
    let file = File::create(&trace_path).map_err(|e| io_failure(&trace_path, e))?;
    trace
        .write_csv(BufWriter::new(file))
        .map_err(|e| io_failure(&trace_path, e))?;
    info!("wrote {}", trace_path.display());

    let plots = if args.plots || config.output.plots {
        write_plots(&trace, &out_dir)?
    } else {
        Vec::new()
    };

    let last = trace.last();
    let summary = SimulationSummary {
        mode: trace.mode.as_str(),
        status: trace.status.as_str(),
        stop_time: last.map_or(0.0, |r| r.t),
        steps: trace.rows.len().saturating_sub(1),
        final_q: last.map_or([f64::NAN; 2], |r| r.q),
        final_q_inf_norm: trace.final_q_inf_norm(),
        max_abs_q: trace.max_abs_q(),
        final_estimation_error: last.map_or(f64::NAN, |r| (r.d_hat - r.d).abs()),
        min_hd_slope: trace.min_slope(|r| r.hd),
        max_hd_slope: trace.max_slope(|r| r.hd),
        max_v_slope: trace.max_slope(|r| r.v_lyap),
        max_matching_residual: trace
            .rows
            .iter()
            .map(|r| r.matching_residual)
            .fold(0.0, f64::max),
        trace: trace_path,
        plots,
    };
    if cli.json {
        print_json(&summary);
    } else {
        println!("mode                   {}", summary.mode);
        println!("status                 {}", summary.status);
        println!("stop time              {:.6}", summary.stop_time);
        println!("steps                  {}", summary.steps);
        println!(
            "final q                [{:.9e}, {:.9e}]",
            summary.final_q[0], summary.final_q[1]
        );
        println!("final |q|_inf          {:.9e}", summary.final_q_inf_norm);
        println!("max |q|_inf            {:.9e}", summary.max_abs_q);
        println!(
            "final |d_hat - d|      {:.9e}",
            summary.final_estimation_error
        );
        println!(
            "H_d slope min/max      {:.9e} / {:.9e}",
            summary.min_hd_slope, summary.max_hd_slope
        );
        println!("V slope max            {:.9e}", summary.max_v_slope);
        println!(
            "max matching residual  {:.3e}",
            summary.max_matching_residual
        );
        println!("trace                  {}", summary.trace.display());
        for p in &summary.plots {
            println!("plot                   {}", p.display());
        }
    }
    match trace.status {
        RunStatus::Completed => Ok(true),
        RunStatus::RegionExit { t, q2 } => {
            eprintln!("error: shaped inertia lost definiteness at t = {t}, q2 = {q2}");
            Ok(false)
        }
        RunStatus::NonFinite { t } => {
            eprintln!("error: state became non-finite at t = {t}");
            Ok(false)
        }
    }
}

/// Switches the mode, filling in adaptive defaults through the config layer.
fn apply_mode(config: Config, mode: Mode) -> Result<Config, Failure> {
    if config.simulation.mode == mode {
        return Ok(config);
    }
    if mode == Mode::DisturbedRobust && config.adaptive.is_none() {
        let Some(d) = &config.disturbance else {
            return Err(Failure::Config("config error at `disturbance`: mode disturbed_robust needs a [disturbance] section".into()));
        };
        let gain =
            rip_core::AdaptationGain::scalar(rip_core::config::DEFAULT_GAMMA, d.regressor.len())?;
        let adaptive = rip_core::AdaptiveState::new(vec![0.0; d.regressor.len()], gain)?;
        return Ok(Config {
            adaptive: Some(adaptive),
            simulation: rip_core::config::SimulationConfig {
                mode,
                ..config.simulation
            },
            ..config
        });
    }
    if mode != Mode::Nominal && config.disturbance.is_none() {
        return Err(Failure::Config(format!(
            "config error at `disturbance`: mode {} needs a [disturbance] section",
            mode.as_str()
        )));
    }
    Ok(Config {
        simulation: rip_core::config::SimulationConfig {
            mode,
            ..config.simulation
        },
        ..config
    })
}

fn write_plots(trace: &Trace, dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let t: Vec<f64> = trace.rows.iter().map(|r| r.t).collect();
    let col =
        |f: &dyn Fn(&rip_core::TraceRow) -> f64| trace.rows.iter().map(f).collect::<Vec<f64>>();
    let tag = trace.mode.as_str();
    let mut charts = vec![
        (
            format!("{tag}_q.svg"),
            line_chart(
                "configuration",
                "t [s]",
                &t,
                &[
                    Series {
                        label: "q1",
                        values: col(&|r| r.q[0]),
                        color: "#1f77b4",
                    },
                    Series {
                        label: "q2",
                        values: col(&|r| r.q[1]),
                        color: "#d62728",
                    },
                ],
            ),
        ),
        (
            format!("{tag}_u.svg"),
            line_chart(
                "control input",
                "t [s]",
                &t,
                &[Series {
                    label: "u",
                    values: col(&|r| r.u),
                    color: "#2ca02c",
                }],
            ),
        ),
    ];
    if trace.mode != Mode::Nominal {
        charts.push((
            format!("{tag}_d.svg"),
            line_chart(
                "disturbance and estimate",
                "t [s]",
                &t,
                &[
                    Series {
                        label: "d",
                        values: col(&|r| r.d),
                        color: "#ff7f0e",
                    },
                    Series {
                        label: "d_hat",
                        values: col(&|r| r.d_hat),
                        color: "#9467bd",
                    },
                ],
            ),
        ));
    }
    let mut paths = Vec::new();
    for (name, svg) in charts {
        let path = dir.join(name);
        fs::write(&path, svg).map_err(|e| io_failure(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

fn print_table(reports: &[ResidualReport]) {
    println!(
        "{:<26} {:>14} {:>10} {:>5}  {:<24} grid",
        "check", "max |residual|", "tol", "pass", "argmax"
    );
    for r in reports {
        let argmax = r
            .argmax
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(", ");
        println!(
            "{:<26} {:>14.3e} {:>10.1e} {:>5}  {:<24} {}",
            r.name,
            r.max_abs_residual,
            r.tol,
            if r.pass { "yes" } else { "NO" },
            format!("[{argmax}]"),
            r.grid
        );
    }
}

fn run_verify(cli: &Cli, args: &VerifyArgs) -> Result<bool, Failure> {
    let config = load(cli, false)?;
    let opts = SuiteOptions {
        scalar_points: args.grid,
        planar_points: args.planar,
        region_cells: args.cells,
        samples: args.samples,
        seed: args.seed,
        psi3_offset: args.perturb_psi3,
    };
    let reports = verify::run_suite(&config.controller(), &opts);
    if cli.json {
        print_json(&reports);
    } else {
        print_table(&reports);
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| r.name.as_str())
        .collect();
    if !failed.is_empty() {
        eprintln!("failed checks: {}", failed.join(", "));
    }
    Ok(failed.is_empty())
}

#[derive(Serialize)]
struct RegionSummary {
    rho: f64,
    rho_scan: f64,
    scan_cells: usize,
    pd_endpoint: f64,
    md_eigenvalues_at_origin: [f64; 2],
}

fn region(cli: &Cli, args: &RegionArgs) -> Result<bool, Failure> {
    let config = load(cli, true)?;
    let ctl = config.controller();
    let rho = verify::region_rho(&ctl)?;
    let def = verify::md_definiteness_scan(&ctl, 1000);
    let summary = RegionSummary {
        rho,
        rho_scan: verify::region_rho_scan(&ctl, args.cells),
        scan_cells: args.cells,
        pd_endpoint: def.pd_endpoint,
        md_eigenvalues_at_origin: def.eigenvalues_at_origin,
    };
    if cli.json {
        print_json(&summary);
    } else {
        println!("rho (formula)          {:.9}", summary.rho);
        println!(
            "rho (sign scan)        {:.9}  ({} cells)",
            summary.rho_scan, summary.scan_cells
        );
        println!("M_d > 0 for |q2| <=    {:.9}", summary.pd_endpoint);
        println!(
            "eig M_d(0)             [{:.6e}, {:.6e}]",
            summary.md_eigenvalues_at_origin[0], summary.md_eigenvalues_at_origin[1]
        );
    }
    Ok(true)
}

#[derive(Serialize)]
struct CounterexampleRecord {
    spec: CounterexampleSpec,
    max_abs_residual: f64,
    argmax: f64,
    residual_at_zero: f64,
    nonvanishing: bool,
}

#[derive(Serialize)]
struct CounterexampleSummary {
    records: Vec<CounterexampleRecord>,
    soundness: ResidualReport,
}

fn counterexample(cli: &Cli, args: &CounterexampleArgs) -> Result<bool, Failure> {
    let grid = verify::linspace(-1.0, 1.0, args.grid);
    let mut specs = vec![CounterexampleSpec::new(args.k1, args.k2, args.b)?];
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    for _ in 0..args.draws {
        let mut draw = || 10f64.powf(rng.random_range(-1.0..1.0));
        specs.push(CounterexampleSpec::new(draw(), draw(), draw())?);
    }
    let records: Vec<CounterexampleRecord> = specs
        .iter()
        .map(|s| {
            let r = verify::remark2_residual(s, &grid);
            CounterexampleRecord {
                spec: *s,
                max_abs_residual: r.max_abs_residual,
                argmax: r.argmax.first().copied().unwrap_or(f64::NAN),
                residual_at_zero: s.residual(
                    0.0,
                    s.claimed_m22(0.0),
                    s.claimed_m22_derivative(0.0),
                ),
                nonvanishing: r.pass,
            }
        })
        .collect();
    let base = specs[0];
    let soundness = verify::remark2_soundness(&base, 1.0, 20_000, 0.5 * base.frak_k1)?;
    let ok = records.iter().all(|r| r.nonvanishing) && soundness.pass;
    let summary = CounterexampleSummary { records, soundness };
    if cli.json {
        print_json(&summary);
    } else {
        println!(
            "{:>10} {:>10} {:>10} {:>14} {:>10} {:>12}  claim refuted",
            "k1", "k2", "b", "max |R|", "argmax", "R(0)"
        );
        for r in &summary.records {
            println!(
                "{:>10.4} {:>10.4} {:>10.4} {:>14.6e} {:>10.4} {:>12.6e}  {}",
                r.spec.frak_k1,
                r.spec.frak_k2,
                r.spec.b,
                r.max_abs_residual,
                r.argmax,
                r.residual_at_zero,
                if r.nonvanishing { "yes" } else { "NO" }
            );
        }
        println!();
        print_table(std::slice::from_ref(&summary.soundness));
    }
    Ok(ok)
}
