//! Command-line front end: ties the parsing, assembly, integration and
//! output stages together behind four subcommands.
//!
//! ```text
//! flowsim run <netlist>      simulate and write the requested files
//! flowsim check <netlist>    structural checks only, no time stepping
//! flowsim flatten <netlist>  print the canonical flat netlist
//! flowsim plot <csv>         render an SVG plot from a CSV file
//! ```
//!
//! Solver settings follow the precedence command line > netlist `solve`
//! line > built-in defaults. Exit codes classify failures for scripts:
//! 0 success, 1 parse/configuration, 2 structural (assembly), 3
//! numerical (convergence), 4 input/output.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use flowsim_core::assembly::SystemGraph;
use flowsim_core::blocks::{ExtrapolationMode, TemplateRegistry};
use flowsim_core::error::{Error, ErrorCategory, OutputError, SolveError};
use flowsim_core::events::EventConfig;
use flowsim_core::netlist::{flatten, parse_file, FlatNetlist, OutputBinding, SolveSpec};
use flowsim_core::output::{
    build_table, parse_csv, resolve_channel, write_csv, write_svg, ChannelBinding, PlotSpec,
    Sampling, WaveformTable,
};
use flowsim_core::solvers::{run_transient, MethodRegistry, RunResult, SolverConfig};

/// Environment variable providing the default output directory for
/// `run` when `--out-dir` is not given.
const OUT_DIR_ENV: &str = "FLOWSIM_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "flowsim",
    version,
    about = "Flow-graph ODE simulator",
    after_help = "Exit codes: 0 ok, 1 parse/config, 2 assembly, 3 convergence, 4 I/O.\n\
                  The FLOWSIM_OUT_DIR environment variable sets the default output directory."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a netlist and write its requested output files.
    Run(RunArgs),
    /// Parse, flatten and assemble a netlist without time stepping.
    Check {
        /// Netlist file.
        netlist: PathBuf,
    },
    /// Print the canonical flat (subcircuit-free) form of a netlist.
    Flatten {
        /// Netlist file.
        netlist: PathBuf,
    },
    /// Render an SVG plot from a CSV file written by `run`.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Netlist file.
    netlist: PathBuf,
    /// Integration method: backward_euler, be_auto, bs23, heun,
    /// improved_euler, rk4, rkf45, tr_auto, trapezoidal, trbdf2.
    #[arg(long)]
    method: Option<String>,
    /// Simulation start time [s].
    #[arg(long)]
    t_start: Option<f64>,
    /// Simulation end time [s].
    #[arg(long)]
    t_end: Option<f64>,
    /// Initial step size [s].
    #[arg(long)]
    h_init: Option<f64>,
    /// Smallest controller step size [s].
    #[arg(long)]
    h_min: Option<f64>,
    /// Largest step size [s].
    #[arg(long)]
    h_max: Option<f64>,
    /// Truncation-error tolerance for adaptive methods.
    #[arg(long)]
    tol: Option<f64>,
    /// Newton absolute residual tolerance.
    #[arg(long)]
    newton_tol: Option<f64>,
    /// Newton relative update tolerance.
    #[arg(long)]
    newton_tol_rel: Option<f64>,
    /// Newton iteration budget per solve.
    #[arg(long)]
    newton_max_iters: Option<u32>,
    /// Enable or disable event handling (breaks and crossings).
    #[arg(long, value_name = "BOOL")]
    events: Option<bool>,
    /// Crossing extrapolation override for all blocks: linear | quadratic.
    #[arg(long)]
    extrapolation: Option<String>,
    /// Directory for output files (default: $FLOWSIM_OUT_DIR, else
    /// the current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Also render an SVG plot next to each written CSV file.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// CSV file produced by `run`.
    csv: PathBuf,
    /// Output SVG path (default: the CSV path with an .svg extension).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Horizontal-axis column.
    #[arg(long, default_value = "time")]
    x: String,
    /// Trace column; repeat for several traces (default: every column
    /// except the horizontal axis, in file order). Legend order follows
    /// flag order.
    #[arg(long = "y", value_name = "COLUMN")]
    y: Vec<String>,
    /// Canvas width in pixels.
    #[arg(long, default_value_t = 800)]
    width: u32,
    /// Canvas height in pixels.
    #[arg(long, default_value_t = 600)]
    height: u32,
    /// Plot title.
    #[arg(long)]
    title: Option<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version are not failures.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(err.category()))
        }
    }
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Parse => 1,
        ErrorCategory::Assemble => 2,
        ErrorCategory::Converge => 3,
        ErrorCategory::Io => 4,
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Check { netlist } => cmd_check(&netlist),
        Command::Flatten { netlist } => cmd_flatten(&netlist),
        Command::Plot(args) => cmd_plot(&args),
    }
}

/// Loads and flattens a netlist file.
fn load(path: &Path, registry: &TemplateRegistry) -> Result<FlatNetlist, Error> {
    let netlist = parse_file(path, registry)?;
    Ok(flatten(&netlist, registry)?)
}

/// Netlist solver settings overlaid with the command-line overrides.
fn merge_spec(base: &SolveSpec, args: &RunArgs) -> SolveSpec {
    SolveSpec {
        method: args.method.clone().or_else(|| base.method.clone()),
        t_start: args.t_start.or(base.t_start),
        t_end: args.t_end.or(base.t_end),
        h_init: args.h_init.or(base.h_init),
        h_min: args.h_min.or(base.h_min),
        h_max: args.h_max.or(base.h_max),
        tol: args.tol.or(base.tol),
        newton_tol: args.newton_tol.or(base.newton_tol),
        newton_tol_rel: args.newton_tol_rel.or(base.newton_tol_rel),
        newton_max_iters: args.newton_max_iters.or(base.newton_max_iters),
        events: args.events.or(base.events),
        extrapolation: args
            .extrapolation
            .clone()
            .or_else(|| base.extrapolation.clone()),
    }
}

fn event_config(spec: &SolveSpec) -> Result<EventConfig, Error> {
    let mut events = EventConfig::default();
    if let Some(enabled) = spec.events {
        events.enabled = enabled;
    }
    if let Some(name) = &spec.extrapolation {
        let mode = ExtrapolationMode::from_name(name).ok_or_else(|| {
            SolveError::BadConfig(format!(
                "unknown extrapolation mode `{name}`; expected `linear` or `quadratic`"
            ))
        })?;
        events.extrapolation_override = Some(mode);
    }
    Ok(events)
}

/// Maps one requested output column (an `outvar` alias or a direct
/// path) to its channel binding.
fn resolve_column(
    graph: &SystemGraph,
    flat: &FlatNetlist,
    name: &str,
) -> Result<ChannelBinding, Error> {
    let path = flat
        .out_vars
        .iter()
        .find(|ov| ov.alias == name)
        .map(|ov| match &ov.binding {
            OutputBinding::Net(net) => net.clone(),
            OutputBinding::OutParam { instance, param } => format!("{instance}.{param}"),
        })
        .unwrap_or_else(|| name.to_string());
    Ok(resolve_channel(graph, &path)?)
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let started = Instant::now();
    let registry = TemplateRegistry::builtin();
    let flat = load(&args.netlist, &registry)?;
    let spec = merge_spec(&flat.solve, args);
    let cfg = SolverConfig::from_spec(&spec)?;
    let events = event_config(&spec)?;
    let graph = SystemGraph::build(&flat, &registry)?;
    let methods = MethodRegistry::builtin();
    let result = run_transient(&graph, &cfg, &events, &methods)?;
    let wall = started.elapsed();

    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let written = write_outputs(&graph, &flat, &result, &out_dir, args.svg)?;

    println!(
        "{}: accepted {} steps, rejected {}, {} Newton iterations, wall time {:.3} s",
        cfg.method,
        result.stats.steps_accepted,
        result.stats.steps_rejected,
        result.stats.newton_iters,
        wall.as_secs_f64()
    );
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Writes every `output` group of the netlist; returns the paths
/// written, CSV first and (optionally) its SVG sibling.
fn write_outputs(
    graph: &SystemGraph,
    flat: &FlatNetlist,
    result: &RunResult,
    out_dir: &Path,
    svg: bool,
) -> Result<Vec<PathBuf>, Error> {
    let mut written = Vec::new();
    if flat.outputs.is_empty() {
        return Ok(written);
    }
    std::fs::create_dir_all(out_dir).map_err(|source| OutputError::Write {
        path: out_dir.display().to_string(),
        source,
    })?;
    for group in &flat.outputs {
        let mut channels = Vec::with_capacity(group.vars.len());
        for name in &group.vars {
            channels.push((name.clone(), resolve_column(graph, flat, name)?));
        }
        let sampling = group
            .interval
            .map(Sampling::FixedInterval)
            .unwrap_or(Sampling::EveryPoint);
        let table = build_table(graph, &result.history, &channels, sampling)?;
        let path = out_dir.join(&group.file_name);
        write_csv(&table, &path)?;
        written.push(path.clone());
        if svg {
            let sibling = path.with_extension("svg");
            write_svg(&table, &PlotSpec::all_traces(&table), &sibling)?;
            written.push(sibling);
        }
    }
    Ok(written)
}

fn cmd_check(netlist: &Path) -> Result<(), Error> {
    let registry = TemplateRegistry::builtin();
    let flat = load(netlist, &registry)?;
    let graph = SystemGraph::build(&flat, &registry)?;
    if graph.algebraic_loop().is_some() {
        println!("{} vars, {} eqns", graph.n_vars(), graph.n_vars());
        // Surfaces the loop membership and exits with the structural
        // failure code.
        graph.eval_order()?;
    }
    println!("OK, {} vars, {} eqns", graph.n_vars(), graph.n_vars());
    Ok(())
}

fn cmd_flatten(netlist: &Path) -> Result<(), Error> {
    let registry = TemplateRegistry::builtin();
    let flat = load(netlist, &registry)?;
    print!("{}", flat.to_text(&registry));
    Ok(())
}

fn cmd_plot(args: &PlotArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(&args.csv).map_err(|source| OutputError::Read {
        path: args.csv.display().to_string(),
        source,
    })?;
    let table: WaveformTable = parse_csv(&text)?;
    let y = if args.y.is_empty() {
        table
            .columns
            .iter()
            .filter(|c| **c != args.x)
            .cloned()
            .collect()
    } else {
        args.y.clone()
    };
    let spec = PlotSpec {
        x: args.x.clone(),
        y,
        width: args.width,
        height: args.height,
        title: args.title.clone(),
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.csv.with_extension("svg"));
    write_svg(&table, &spec, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
