use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use gridloc::belief::{write_pgm, write_top_k_csv};
use gridloc::evaluation::{self, EvalConfig};
use gridloc::filters::write_decisions_csv;
use gridloc::localizer::{self, prior_belief, read_log, write_log, LocalizerConfig, SensorConfig};
use gridloc::sensor_model::{fit_parameters, SensorTable, TableLimits};
use gridloc::simulator::{self, SimConfig};
use gridloc::world_map::{load_map, MapFormat};
use gridloc::{OccupancyGrid, StateGrid};

#[derive(Parser)]
#[command(name = "gridloc", version, about = "Grid-based Markov localization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a sensor log and ground truth from a scripted path.
    Simulate(SimulateArgs),
    /// Run the localizer over a sensor log.
    Localize(LocalizeArgs),
    /// Fit beam-model parameters to (expected, measured) range pairs.
    FitSensor(FitArgs),
    /// Precompute the sensor lookup table for a map.
    BuildTable(TableArgs),
    /// Score a trajectory against ground truth.
    Eval(EvalArgs),
    /// Mean converged error across cell sizes.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    map: PathBuf,
    /// Simulation config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Per-beam corruption labels (CSV).
    #[arg(long)]
    corruption: Option<PathBuf>,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    log: PathBuf,
    /// Localizer config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prebuilt sensor table matching the config.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Trajectory output (CSV).
    #[arg(long)]
    out: PathBuf,
    /// Per-beam filter decisions (CSV).
    #[arg(long)]
    decisions: Option<PathBuf>,
    /// Ground truth to score against; adds metrics to the summary.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Include wall-clock timings in the summary.
    #[arg(long)]
    timing: bool,
    /// Write the final belief to `<prefix>.pgm` and `<prefix>_top.csv`.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// States listed in the snapshot CSV.
    #[arg(long, default_value_t = 20)]
    top_k: usize,
}

#[derive(Args)]
struct FitArgs {
    /// CSV with header `expected_m,measured_m`.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 5.0)]
    max_range: f64,
}

#[derive(Args)]
struct TableArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[command(flatten)]
    thresholds: Thresholds,
}

#[derive(Args)]
struct Thresholds {
    #[arg(long, default_value_t = 0.45)]
    threshold: f64,
    #[arg(long, default_value_t = 20.0)]
    lost_persistence: f64,
    #[arg(long, default_value_t = 10.0)]
    recovery_hold: f64,
}

impl Thresholds {
    fn config(&self) -> EvalConfig {
        EvalConfig { threshold: self.threshold, lost_persistence: self.lost_persistence, recovery_hold: self.recovery_hold }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    map: PathBuf,
    /// Simulation scenario (TOML); its seed is replaced by each of `--seeds`.
    #[arg(long)]
    sim: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated cell sizes (m).
    #[arg(long, value_delimiter = ',', required = true)]
    cells: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Add a wall-clock column.
    #[arg(long)]
    timing: bool,
    #[command(flatten)]
    thresholds: Thresholds,
}

enum CliError {
    Usage(String),
    Input(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Runtime(m) => m,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn input<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(input(path))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(input(path))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn read_map(path: &Path) -> Result<OccupancyGrid> {
    load_map(open(path)?, MapFormat::Ascii).map_err(input(path))
}

fn read_localizer_config(path: Option<&PathBuf>) -> Result<LocalizerConfig> {
    match path {
        Some(p) => LocalizerConfig::from_toml(&read_text(p)?).map_err(input(p)),
        None => Ok(LocalizerConfig::default()),
    }
}

fn read_sim_config(path: &Path) -> Result<SimConfig> {
    SimConfig::from_toml(&read_text(path)?).map_err(input(path))
}

fn emit(value: serde_json::Value) {
    println!("{value}");
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let map = read_map(&args.map)?;
    let mut cfg = read_sim_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let (events, truth) = simulator::simulate(&map, &cfg).map_err(|e| match e {
        simulator::SimError::Config(_) => CliError::Input(format!("{}: {e}", args.config.display())),
        other => runtime(other),
    })?;
    write_file(&args.log, |w| write_log(&events, w))?;
    write_file(&args.truth, |w| simulator::write_truth_csv(&truth, w))?;
    if let Some(path) = &args.corruption {
        write_file(path, |w| simulator::write_corruption_csv(&truth, w))?;
    }
    emit(json!({
        "events": events.len(),
        "scans": truth.poses.len(),
        "duration": truth.poses.last().map_or(0.0, |s| s.t),
        "corrupted_fraction": truth.corrupted_fraction(),
        "kidnaps": truth.kidnap_times,
    }));
    Ok(())
}

fn load_table(path: &Path, config: &LocalizerConfig, map: &OccupancyGrid) -> Result<SensorTable> {
    let table = SensorTable::read_from(open(path)?).map_err(input(path))?;
    let grid = StateGrid::covering(map, config.cell_size, config.theta_bins).map_err(runtime)?;
    let params = config.sensor.params().map_err(runtime)?;
    let expected_bins = config.theta_bins * config.table_theta_factor;
    if table.grid() != &grid || table.params() != &params || table.table_bins() != expected_bins {
        return Err(CliError::Input(format!("{}: table was built for a different map, grid or sensor model", path.display())));
    }
    Ok(table)
}

fn localize(args: LocalizeArgs) -> Result<()> {
    let map = read_map(&args.map)?;
    let config = read_localizer_config(args.config.as_ref())?;
    let events = read_log(open(&args.log)?).map_err(input(&args.log))?;
    let truth = match &args.truth {
        Some(p) => Some(evaluation::read_truth_csv(open(p)?).map_err(input(p))?),
        None => None,
    };
    let mut loc = match &args.table {
        Some(path) => {
            let table = load_table(path, &config, &map)?;
            let belief = prior_belief(&config, table.grid().clone(), table.free_mask().to_vec()).map_err(runtime)?;
            localizer::Localizer::with_parts(config.clone(), Some(table), belief)
        }
        None => localizer::Localizer::new(config.clone(), &map).map_err(runtime)?,
    };
    let run = localizer::run_events(&mut loc, &events).map_err(runtime)?;
    write_file(&args.out, |w| localizer::write_trajectory_csv(&run.estimates, w))?;
    if let Some(path) = &args.decisions {
        write_file(path, |w| write_decisions_csv(&run.decisions, w))?;
    }
    if let Some(prefix) = &args.snapshot {
        let with_suffix = |suffix: &str| {
            let mut name = prefix.clone().into_os_string();
            name.push(suffix);
            PathBuf::from(name)
        };
        write_file(&with_suffix(".pgm"), |w| write_pgm(loc.belief(), w))?;
        write_file(&with_suffix("_top.csv"), |w| write_top_k_csv(loc.belief(), args.top_k, w))?;
    }
    let mut summary = json!({
        "estimates": run.estimates.len(),
        "scans": run.stats.scans,
        "odometry": run.stats.odometry,
        "beams": run.stats.beams,
        "filtered_fraction": run.stats.filtered_fraction(),
        "lost_events": run.stats.lost_events,
        "distance": run.stats.total_distance,
    });
    if let Some(truth) = truth {
        let timings = if args.timing { run.stats.update_seconds.clone() } else { Vec::new() };
        let m = evaluation::evaluate_run(&run.estimates, &truth, &timings, &EvalConfig::default()).map_err(input(args.truth.as_ref().expect("truth given")))?;
        for w in &m.warnings {
            eprintln!("warning: {w}");
        }
        summary["failure_fraction"] = json!(m.failure_fraction);
        summary["mean_error"] = json!(m.mean_error);
        summary["recovery_times"] = json!(m.recovery_times);
    }
    if args.timing {
        let s = &run.stats.update_seconds;
        summary["mean_update_seconds"] = json!(s.iter().sum::<f64>() / s.len().max(1) as f64);
    }
    emit(summary);
    Ok(())
}

fn read_pairs(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut pairs = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(input(path))?;
        let line = line.trim();
        if i == 0 {
            if line != "expected_m,measured_m" {
                return Err(CliError::Input(format!("{}: line 1: expected header `expected_m,measured_m`", path.display())));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let bad = || CliError::Input(format!("{}: line {}: expected two numbers", path.display(), i + 1));
        let (a, b) = line.split_once(',').ok_or_else(bad)?;
        let a = a.trim().parse::<f64>().map_err(|_| bad())?;
        let b = b.trim().parse::<f64>().map_err(|_| bad())?;
        pairs.push((a, b));
    }
    Ok(pairs)
}

fn fit_sensor(args: FitArgs) -> Result<()> {
    let pairs = read_pairs(&args.pairs)?;
    let fit = fit_parameters(&pairs, args.n, args.max_range).map_err(input(&args.pairs))?;
    let s = SensorConfig::from_params(&fit.params);
    emit(json!({
        "sigma": s.sigma,
        "c_r": s.c_r,
        "c_d": s.c_d,
        "n": s.n,
        "max_range": s.max_range,
        "nll": fit.nll,
        "pairs": pairs.len(),
    }));
    Ok(())
}

fn build_table(args: TableArgs) -> Result<()> {
    let map = read_map(&args.map)?;
    let config = read_localizer_config(args.config.as_ref())?;
    let grid = StateGrid::covering(&map, config.cell_size, config.theta_bins).map_err(runtime)?;
    let params = config.sensor.params().map_err(runtime)?;
    let limits = TableLimits { max_entries: config.max_table_entries };
    let table = SensorTable::build(&map, &params, &grid, config.theta_bins * config.table_theta_factor, limits).map_err(runtime)?;
    let mut w = create(&args.out)?;
    table.write_to(&mut w).map_err(runtime)?;
    w.flush().map_err(runtime)?;
    emit(json!({
        "entries": table.entries(),
        "table_bins": table.table_bins(),
        "byte_indexed": table.is_byte_indexed(),
        "nx": grid.nx,
        "ny": grid.ny,
    }));
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let estimates = evaluation::read_trajectory_csv(open(&args.trajectory)?).map_err(input(&args.trajectory))?;
    let truth = evaluation::read_truth_csv(open(&args.truth)?).map_err(input(&args.truth))?;
    let m = evaluation::evaluate_run(&estimates, &truth, &[], &args.thresholds.config()).map_err(|e| match e {
        evaluation::EvalError::Misaligned(_) | evaluation::EvalError::Empty(_) => CliError::Input(e.to_string()),
        other => runtime(other),
    })?;
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    emit(json!({
        "failure_fraction": m.failure_fraction,
        "recovery_times": m.recovery_times,
        "mean_error": m.mean_error,
        "samples": truth.len(),
    }));
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let map = read_map(&args.map)?;
    let config = read_localizer_config(args.config.as_ref())?;
    let scenario = read_sim_config(&args.sim)?;
    if args.cells.iter().any(|c| !(*c > 0.0)) {
        return Err(CliError::Usage("cell sizes must be positive".into()));
    }
    let rows = evaluation::resolution_sweep(&map, &config, &scenario, &args.cells, &args.seeds, &args.thresholds.config())
        .map_err(runtime)?;
    match &args.out {
        Some(path) => write_file(path, |w| evaluation::write_sweep_csv(&rows, args.timing, w))?,
        None => evaluation::write_sweep_csv(&rows, args.timing, io::stdout().lock()).map_err(runtime)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Localize(a) => localize(a),
        Command::FitSensor(a) => fit_sensor(a),
        Command::BuildTable(a) => build_table(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
