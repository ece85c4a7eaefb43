use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fracnet::experiment::{
    psi_bound, rate_rows, run_rate_study, ExperimentConfig, OutputFormat, PsiBoundReport,
};
use fracnet::model::DEFAULT_HORIZON_BANDS;
use fracnet::payoff::PayoffSpec;
use fracnet::simulator::{
    simulate_errors, study_grid, write_simulation_csv, NetSource, RatioRow, SimulationRow,
};
use fracnet::smoothness::{
    besov_proxy_norm, default_t_grid, derivative_bound_check, fit_theta, smoothness_curves,
    write_smoothness_csv, DerivativeBoundReport, ProxyNorm, SmoothnessCurve, ThetaFit,
    DEFAULT_FIT_WINDOW,
};
use fracnet::verify::{tampered_theta_net, verify_suite, verify_suite_with, Level};
use fracnet::{FracnetError, ModelKind, NetFamily, Result, TimeNet};

#[derive(Parser)]
#[command(
    name = "fracnet",
    version,
    about = "Riemann approximation of stochastic integrals on time-nets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print time-net knots and mesh functionals.
    Nets(Common),
    /// Simulate approximation errors and square functions.
    Simulate(Common),
    /// Convergence-rate study along a net family.
    Rates(Common),
    /// Smoothness curves d⁰, d¹, d² and the fitted θ.
    Smoothness(Common),
    /// Run the invariant suites.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Bm,
    Gbm,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Fast,
    Full,
}

#[derive(Args)]
struct Common {
    #[arg(long, value_enum, default_value = "bm")]
    model: ModelArg,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value = "binary")]
    payoff: String,
    /// Payoff parameter, e.g. `k=1`. Repeatable.
    #[arg(long = "param", value_parser = parse_param)]
    params: Vec<(String, f64)>,
    /// equidistant, theta, theta:<x> or rule:<name>.
    #[arg(long, default_value = "equidistant")]
    net: String,
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[arg(long, value_delimiter = ',', default_value = "2")]
    p: Vec<f64>,
    #[arg(long, default_value_t = 2.0)]
    q: f64,
    /// Hölder split `q_h,r_h` for the ψ-bound (`inf` allowed).
    #[arg(long, value_parser = parse_holder)]
    holder: Option<(f64, f64)>,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128,256,512")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Geometric refinement bands toward the horizon.
    #[arg(long, default_value_t = DEFAULT_HORIZON_BANDS)]
    grid_refine: u32,
    /// Slope tolerance of the rate verdict.
    #[arg(long, default_value_t = 0.10)]
    tolerance: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "fast")]
    level: LevelArg,
    /// Overrides the level's path count.
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Swap in a deliberately broken θ-net constructor.
    #[arg(long, hide = true)]
    tampered_theta_net: bool,
}

fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected k=v, got `{s}`"))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| format!("bad number in `{s}`"))?;
    Ok((k.trim().to_string(), v))
}

fn parse_holder(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected q_h,r_h, got `{s}`"))?;
    let num = |x: &str| {
        x.trim()
            .parse::<f64>()
            .map_err(|_| format!("bad number in `{s}`"))
    };
    Ok((num(a)?, num(b)?))
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let net: NetFamily = self.net.parse()?;
        let holder = self.holder;
        let config = ExperimentConfig {
            model: match self.model {
                ModelArg::Bm => ModelKind::BrownianMotion,
                ModelArg::Gbm => ModelKind::GeometricBrownianMotion,
            },
            dim: self.dim,
            payoff: PayoffSpec {
                name: self.payoff.clone(),
                params: self.params.iter().cloned().collect::<BTreeMap<_, _>>(),
            },
            net,
            theta: self.theta,
            p_list: self.p.clone(),
            q: self.q,
            holder,
            n_list: self.n.clone(),
            n_paths: self.paths,
            seed: self.seed,
            grid_refine: self.grid_refine,
            out: self.out.clone(),
            format: match self.format {
                FormatArg::Csv => OutputFormat::Csv,
                FormatArg::Json => OutputFormat::Json,
            },
        };
        config.validate()?;
        Ok(config)
    }
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

#[derive(Serialize)]
struct NetEntry {
    n: usize,
    knots: Vec<f64>,
    mesh: f64,
    mesh_theta: f64,
}

fn run_nets(config: &ExperimentConfig) -> Result<()> {
    let mut out = open_out(&config.out)?;
    let mut entries = Vec::new();
    for &n in &config.n_list {
        let net = config.net.net(n).ok_or_else(|| {
            FracnetError::InvalidInput(
                "rule nets are random; use `simulate` to realize them".into(),
            )
        })??;
        entries.push(NetEntry {
            n,
            mesh: net.mesh(),
            mesh_theta: net.mesh_theta(config.theta),
            knots: net.knots().to_vec(),
        });
    }
    match config.format {
        OutputFormat::Csv => {
            writeln!(out, "net_family,n,i,t,mesh,mesh_theta")?;
            for e in &entries {
                for (i, t) in e.knots.iter().enumerate() {
                    writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        config.net.label(),
                        e.n,
                        i,
                        t,
                        e.mesh,
                        e.mesh_theta
                    )?;
                }
            }
        }
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Report<'a> {
                config: &'a ExperimentConfig,
                nets: Vec<NetEntry>,
            }
            write_json(
                &mut out,
                &Report {
                    config,
                    nets: entries,
                },
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn run_simulate(config: &ExperimentConfig) -> Result<()> {
    let model = config.model()?;
    let payoff = config.build_payoff()?;
    let sources: Vec<NetSource> = config
        .n_list
        .iter()
        .map(|&n| NetSource::from_family(&config.net, n, config.theta, &payoff, &model))
        .collect::<Result<_>>()?;
    let fixed: Vec<TimeNet> = sources
        .iter()
        .filter_map(|s| match s {
            NetSource::Fixed(n) => Some(n.clone()),
            NetSource::Random(_) => None,
        })
        .collect();
    let uniform = if fixed.len() == sources.len() {
        256
    } else {
        2048
    };
    let grid = study_grid(&fixed, uniform, config.grid_refine);
    let table = simulate_errors(
        &payoff,
        &model,
        &sources,
        &[],
        &grid,
        config.n_paths,
        config.seed,
    )?;
    let mut rows = Vec::new();
    for &p in &config.p_list {
        for (k, &n) in config.n_list.iter().enumerate() {
            let r = RatioRow::from_columns(n, &table.c_simple[k], &table.sq_fn[k], p, config.seed)?;
            rows.push(SimulationRow {
                net_family: config.net.label(),
                n,
                p,
                strategy: "gradient".into(),
                lp_value: r.error.value,
                std_err: r.error.std_err,
                sq_fn_value: r.square_function.value,
                sq_fn_std_err: r.square_function.std_err,
                ratio: r.ratio,
                n_paths: config.n_paths,
                seed: config.seed,
            });
        }
    }
    let mut out = open_out(&config.out)?;
    match config.format {
        OutputFormat::Csv => write_simulation_csv(&mut out, &rows)?,
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Report<'a> {
                config: &'a ExperimentConfig,
                mean_steps: &'a [f64],
                rows: &'a [SimulationRow],
            }
            write_json(
                &mut out,
                &Report {
                    config,
                    mean_steps: &table.mean_steps,
                    rows: &rows,
                },
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn run_rates(config: &ExperimentConfig, tolerance: f64) -> Result<()> {
    let reports = run_rate_study(config, tolerance)?;
    let mut psi: Vec<PsiBoundReport> = Vec::new();
    if let Some((q_h, r_h)) = config.holder {
        let model = config.model()?;
        let payoff = config.build_payoff()?;
        for &p in &config.p_list {
            for &n in &config.n_list {
                let source = NetSource::from_family(&config.net, n, config.theta, &payoff, &model)?;
                psi.push(psi_bound(
                    &source,
                    p,
                    q_h,
                    r_h,
                    config.theta,
                    &payoff,
                    &model,
                    config.n_paths,
                    config.seed,
                )?);
            }
        }
    }
    let mut out = open_out(&config.out)?;
    match config.format {
        OutputFormat::Csv => {
            write_simulation_csv(&mut out, &rate_rows(&reports, config.n_paths, config.seed))?
        }
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Report<'a> {
                config: &'a ExperimentConfig,
                reports: &'a [fracnet::experiment::RateReport],
                #[serde(skip_serializing_if = "<[_]>::is_empty")]
                psi_bound: &'a [PsiBoundReport],
            }
            write_json(
                &mut out,
                &Report {
                    config,
                    reports: &reports,
                    psi_bound: &psi,
                },
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn run_smoothness(config: &ExperimentConfig) -> Result<()> {
    let model = config.model()?;
    let payoff = config.build_payoff()?;
    let grid = default_t_grid();
    let curves: Vec<SmoothnessCurve> = config
        .p_list
        .iter()
        .map(|&p| smoothness_curves(&payoff, &model, p, &grid, config.n_paths, config.seed))
        .collect::<Result<_>>()?;
    let mut out = open_out(&config.out)?;
    match config.format {
        OutputFormat::Csv => {
            for (i, curve) in curves.iter().enumerate() {
                let mut buf = Vec::new();
                write_smoothness_csv(&mut buf, curve)?;
                // one header for the whole file
                let start = if i == 0 {
                    0
                } else {
                    buf.iter()
                        .position(|&b| b == b'\n')
                        .map_or(buf.len(), |j| j + 1)
                };
                out.write_all(&buf[start..])?;
            }
        }
        OutputFormat::Json => {
            #[derive(Serialize)]
            struct Entry<'a> {
                curve: &'a SmoothnessCurve,
                fit: Option<ThetaFit>,
                derivative_bounds: Option<DerivativeBoundReport>,
                proxies: Vec<ProxyNorm>,
            }
            #[derive(Serialize)]
            struct Report<'a> {
                config: &'a ExperimentConfig,
                curves: Vec<Entry<'a>>,
            }
            let mut entries = Vec::new();
            for curve in &curves {
                let proxies = (0..=2)
                    .map(|w| besov_proxy_norm(curve, config.theta, config.q, w))
                    .collect::<Result<_>>()?;
                entries.push(Entry {
                    curve,
                    fit: fit_theta(curve, DEFAULT_FIT_WINDOW).ok(),
                    derivative_bounds: derivative_bound_check(curve).ok(),
                    proxies,
                });
            }
            write_json(
                &mut out,
                &Report {
                    config,
                    curves: entries,
                },
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn run_verify(args: &VerifyArgs) -> Result<bool> {
    let level = match args.level {
        LevelArg::Fast => Level::Fast,
        LevelArg::Full => Level::Full,
    };
    let report = if args.tampered_theta_net {
        verify_suite_with(level, args.paths, args.seed, &tampered_theta_net)?
    } else {
        verify_suite(level, args.paths, args.seed)?
    };
    let mut out = open_out(&args.out)?;
    write_json(&mut out, &report)?;
    out.flush()?;
    for c in report.checks.iter().filter(|c| !c.pass) {
        eprintln!(
            "check failed: {} = {} (tolerance {})",
            c.name, c.value, c.tolerance
        );
    }
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Nets(c) => run_nets(&c.config()?).map(|_| true),
        Command::Simulate(c) => run_simulate(&c.config()?).map(|_| true),
        Command::Rates(c) => run_rates(&c.config()?, c.tolerance).map(|_| true),
        Command::Smoothness(c) => run_smoothness(&c.config()?).map(|_| true),
        Command::Verify(v) => run_verify(&v),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
