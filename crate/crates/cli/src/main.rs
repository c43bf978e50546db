use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mmcpv_core::error::Divergence;
use mmcpv_core::oracle::oracle_check;
use mmcpv_core::plot::{emit_plots, emit_trace_plots};
use mmcpv_core::scenario::parse_scenario_with_overrides;
use mmcpv_core::trace_csv::{read_trace_csv, write_trace, write_trace_csv};
use mmcpv_core::{builtin_presets, run_batch, run_scenario, Error, Execution, ScenarioConfig, SimResult};

const EXIT_IO: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;
const EXIT_ORACLE: u8 = 5;

/// Simulate an MMC with per-submodule PV modules under MPC switching.
#[derive(Parser)]
#[command(name = "mmcpv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace, summary and plots.
    Run(RunArgs),
    /// List the built-in presets, export them, or run all of them.
    Presets(PresetArgs),
    /// Compare the four-candidate selection with exhaustive search.
    OracleCheck(OracleArgs),
    /// Render plots from a previously written trace CSV.
    Plot(PlotArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Override a scenario key, e.g. `--set mmc.n=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, String)>,
    /// Simulate 3 s with the failure event at 2 s.
    #[arg(long)]
    full_duration: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Record one trace row every N sampling periods.
    #[arg(long)]
    decimation: Option<usize>,
    /// Advance legs on a thread pool.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct OutputArgs {
    /// Output directory.
    #[arg(long, env = "MMCPV_OUT_DIR", default_value = "mmcpv-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = PlotFormat::Svg)]
    plot_format: PlotFormat,
    #[arg(long)]
    no_plots: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    /// Built-in preset name.
    #[arg(long)]
    preset: Option<String>,
    #[command(flatten)]
    scenario_args: ScenarioArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct PresetArgs {
    /// Write each preset as `<name>.toml` into this directory.
    #[arg(long, value_name = "DIR")]
    export: Option<PathBuf>,
    /// Run every preset as an independent job.
    #[arg(long)]
    run: bool,
    #[command(flatten)]
    scenario_args: ScenarioArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Trace CSV written by `run`.
    trace: PathBuf,
    #[arg(long, env = "MMCPV_OUT_DIR", default_value = "mmcpv-out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = PlotFormat::Svg)]
    format: PlotFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotFormat {
    Svg,
    Png,
}

impl PlotFormat {
    fn extension(self) -> &'static str {
        match self {
            PlotFormat::Svg => "svg",
            PlotFormat::Png => "png",
        }
    }
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    if k.trim().is_empty() {
        return Err(format!("empty key in `{s}`"));
    }
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. } => EXIT_PARSE,
        Error::Validation { .. } | Error::Config(_) | Error::InvalidInput(_) | Error::Fit(_) => EXIT_VALIDATION,
        Error::Divergence(_) | Error::NonFinite { .. } => EXIT_DIVERGENCE,
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Presets(args) => cmd_presets(args),
        Command::OracleCheck(args) => cmd_oracle(args),
        Command::Plot(args) => cmd_plot(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn finish_config(mut cfg: ScenarioConfig, args: &ScenarioArgs) -> Result<ScenarioConfig, Error> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(("sim.seed".into(), seed.to_string()));
    }
    if let Some(d) = args.decimation {
        overrides.push(("sim.decimation".into(), d.to_string()));
    }
    if args.parallel {
        overrides.push(("sim.execution".into(), "parallel".into()));
    }
    if !overrides.is_empty() {
        cfg = cfg.with_overrides(&overrides)?;
    }
    if args.full_duration {
        cfg = cfg.full_duration();
    }
    Ok(cfg)
}

fn load_config(args: &RunArgs) -> Result<ScenarioConfig, Error> {
    let cfg = match (&args.scenario, &args.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            parse_scenario_with_overrides(&text, &[]).map_err(|e| match e {
                Error::Parse { line, message } => Error::Parse {
                    line,
                    message: format!("{}: {message}", path.display()),
                },
                other => other,
            })?
        }
        (None, Some(name)) => mmcpv_core::preset(name)?,
        (None, None) => mmcpv_core::preset("normal")?,
    };
    finish_config(cfg, &args.scenario_args)
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn save_result(cfg: &ScenarioConfig, result: &SimResult, output: &OutputArgs) -> Result<PathBuf, Error> {
    let dir = output.out.join(&result.name);
    create_dir(&dir)?;
    write_file(&dir.join("scenario.toml"), &cfg.to_toml()?)?;
    write_trace_csv(result, &dir.join("trace.csv"))?;
    let summary = toml::to_string_pretty(&result.summary).map_err(|e| Error::Config(e.to_string()))?;
    let stats = toml::to_string_pretty(&result.stats).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&dir.join("summary.toml"), &format!("{summary}\n[stats]\n{stats}"))?;
    if !output.no_plots {
        emit_plots(result, &dir, output.plot_format.extension())?;
    }
    Ok(dir)
}

fn print_summary(result: &SimResult, elapsed: f64, dir: &Path) {
    let s = &result.summary;
    println!("{}: {} ticks in {:.2} s -> {}", result.name, result.stats.ticks, elapsed, dir.display());
    println!("  avg SM voltage     {:.2} .. {:.2} % of nominal", s.v_avg_min_pct, s.v_avg_max_pct);
    for (k, phase) in ["a", "b", "c"].iter().enumerate() {
        println!(
            "  phase {phase}: tracking rms {:.3} A of {:.2} A amplitude, |i_z| max {:.3} A mean {:.3} A",
            s.tracking_rms[k], s.reference_amplitude[k], s.max_abs_iz[k], s.mean_abs_iz[k]
        );
    }
    println!("  max arm spread     {:.3} V", s.max_arm_spread);
    println!("  mean PV power      {:.1} W, AC power {:.1} W", s.mean_pv_power, s.mean_ac_power);
    let fallbacks: usize = result.stats.fallback_ticks.iter().sum();
    if fallbacks > 0 {
        println!("  deadline fallbacks {fallbacks}");
    }
}

fn report_divergence(name: &str, d: &Divergence, output: &OutputArgs) {
    let dir = output.out.join(name);
    let path = dir.join("trace.partial.csv");
    let n = d.trace.first().map_or(0, |r| r.legs[0].n());
    let saved = fs::create_dir_all(&dir)
        .and_then(|_| fs::File::create(&path))
        .map_err(|e| e.to_string())
        .and_then(|f| write_trace(&d.trace, n, f).map_err(|e| e.to_string()));
    match saved {
        Ok(()) => eprintln!("partial trace ({} rows) written to {}", d.trace.len(), path.display()),
        Err(e) => eprintln!("could not write partial trace: {e}"),
    }
}

fn cmd_run(args: RunArgs) -> Result<u8, Error> {
    let cfg = load_config(&args)?;
    let start = Instant::now();
    match run_scenario(&cfg) {
        Ok(result) => {
            let dir = save_result(&cfg, &result, &args.output)?;
            print_summary(&result, start.elapsed().as_secs_f64(), &dir);
            Ok(0)
        }
        Err(Error::Divergence(d)) => {
            report_divergence(&cfg.name, &d, &args.output);
            Err(Error::Divergence(d))
        }
        Err(e) => Err(e),
    }
}

fn cmd_presets(args: PresetArgs) -> Result<u8, Error> {
    let presets = builtin_presets()
        .into_iter()
        .map(|p| finish_config(p, &args.scenario_args))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(dir) = &args.export {
        create_dir(dir)?;
        for p in &presets {
            let path = dir.join(format!("{}.toml", p.name));
            write_file(&path, &format!("preset = \"{}\"\n\n{}", p.name, p.to_toml()?))?;
            println!("{}", path.display());
        }
    }
    if !args.run {
        if args.export.is_none() {
            for p in &presets {
                let shaded = p.irradiance.groups.iter().any(|g| g.scale.is_some());
                let failing = p.irradiance.groups.iter().any(|g| g.failure_time.is_some());
                println!(
                    "{:<16} {:.1} s, shading: {}, failure: {}",
                    p.name,
                    p.sim.duration,
                    if shaded { "yes" } else { "no" },
                    if failing { "yes" } else { "no" }
                );
            }
        }
        return Ok(0);
    }

    let start = Instant::now();
    let results = run_batch(&presets, Execution::Parallel);
    let elapsed = start.elapsed().as_secs_f64();
    let mut first_error = None;
    for (cfg, outcome) in presets.iter().zip(results) {
        match outcome {
            Ok(result) => {
                let dir = save_result(cfg, &result, &args.output)?;
                print_summary(&result, elapsed, &dir);
            }
            Err(e) => {
                if let Error::Divergence(d) = &e {
                    report_divergence(&cfg.name, d, &args.output);
                }
                eprintln!("{}: {e}", cfg.name);
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(0),
    }
}

fn cmd_oracle(args: OracleArgs) -> Result<u8, Error> {
    let execution = if args.parallel { Execution::Parallel } else { Execution::Sequential };
    let start = Instant::now();
    let report = oracle_check(args.trials, args.seed, execution)?;
    print!("{report}");
    println!("elapsed {:.2} s", start.elapsed().as_secs_f64());
    if report.passed() {
        Ok(0)
    } else {
        eprintln!("{} mismatches", report.total_mismatches());
        Ok(EXIT_ORACLE)
    }
}

fn cmd_plot(args: PlotArgs) -> Result<u8, Error> {
    let (_, trace) = read_trace_csv(&args.trace)?;
    for path in emit_trace_plots(&trace, &args.out, args.format.extension())? {
        println!("{}", path.display());
    }
    Ok(0)
}
