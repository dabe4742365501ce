//! `mvqmc`: command-line driver for sweeps, single estimators, point sets
//! and bridge paths.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mvqmc::bridge::bridge_path;
use mvqmc::experiments::{run_sweep, Cell, SweepSpec, Table};
use mvqmc::lowdisc::{korobov_vector, lattice_points, shift_points, CoordinateLayout, Shift};
use mvqmc::seeding::Purpose;
use mvqmc::{
    mlqmc_estimator, single_level_estimator, with_threads, BridgeOrdering, BuiltinModel,
    KernelMode, LevelConfig, Mode, Model, Observable, SystemConfig,
};
use serde_json::json;

/// Exit code for runs that complete but fail an acceptance check.
const EXIT_CHECK_FAILED: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "mvqmc", version, about = "Quasi-Monte Carlo particle systems for McKean-Vlasov equations")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Runs the sweep described by a JSON config.
    Sweep(SweepArgs),
    /// Single-level estimator; CSV `shift_index,estimate`.
    SingleLevel(SingleLevelArgs),
    /// Antithetic multilevel estimator; CSV `level,mean,variance,cost,samples`.
    Mlqmc(MlqmcArgs),
    /// Rank-1 lattice points; CSV `c1,...,cd`.
    Points(PointsArgs),
    /// Brownian-bridge path from i.i.d. uniforms; CSV `t,value`.
    BridgeTest(BridgeArgs),
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output path.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// One of ou, kuramoto, mfode-sin, mfode-c1.
    #[arg(long)]
    model: String,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    /// x, x2, gauss or const:<c>; defaults to the model's observable.
    #[arg(long)]
    observable: Option<Observable>,
    #[arg(long, default_value_t = mvqmc::lowdisc::DEFAULT_KOROBOV_BASE)]
    korobov_base: u64,
    #[arg(long, value_parser = parse_ordering, default_value = "time-indexed")]
    ordering: BridgeOrdering,
    #[arg(long, value_parser = parse_kernel, default_value = "separable")]
    kernel: KernelMode,
}

impl ModelArgs {
    fn build(&self) -> Result<BuiltinModel> {
        Ok(BuiltinModel::from_name(&self.model, self.kappa, self.sigma)?)
    }
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// CSV destination (stdout if absent).
    #[arg(long)]
    output: Option<PathBuf>,
    /// JSON summary destination (stderr if absent).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SingleLevelArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long = "P")]
    particles: usize,
    #[arg(long = "N")]
    steps: usize,
    #[arg(long = "M")]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// qmc (coupled lattice noise) or iid.
    #[arg(long, default_value = "qmc")]
    mode: Mode,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct MlqmcArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long = "L")]
    levels: usize,
    #[arg(long)]
    n0: u32,
    #[arg(long)]
    p0: u32,
    /// Samples per level, comma separated, `L + 1` entries.
    #[arg(long = "Ml", value_delimiter = ',', required = true)]
    samples: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args, Debug)]
struct PointsArgs {
    #[arg(long = "P")]
    particles: usize,
    /// Dimension; alternatively give --model and --N for the simulation layout.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "N")]
    steps: Option<usize>,
    #[arg(long, default_value_t = mvqmc::lowdisc::DEFAULT_KOROBOV_BASE)]
    korobov_base: u64,
    #[arg(long, value_parser = parse_ordering, default_value = "time-indexed")]
    ordering: BridgeOrdering,
    /// Applies the random shift drawn from this seed.
    #[arg(long)]
    shift_seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BridgeArgs {
    #[arg(long = "N")]
    steps: usize,
    #[arg(long = "T", default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn parse_ordering(s: &str) -> Result<BridgeOrdering, String> {
    match s {
        "time-indexed" => Ok(BridgeOrdering::TimeIndexed),
        "sequential" => Ok(BridgeOrdering::Sequential),
        _ => Err(format!("unknown ordering {s:?} (time-indexed, sequential)")),
    }
}

fn parse_kernel(s: &str) -> Result<KernelMode, String> {
    match s {
        "direct" => Ok(KernelMode::Direct),
        "separable" => Ok(KernelMode::Separable),
        _ => Err(format!("unknown kernel mode {s:?} (direct, separable)")),
    }
}

fn emit_csv(table: &Table, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => table.write_csv(p).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().write_all(table.to_csv()?.as_bytes())?,
    }
    Ok(())
}

fn emit_json(value: &serde_json::Value, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => eprintln!("{text}"),
    }
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<bool> {
    let spec = SweepSpec::load(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let outcome = run_sweep(&spec)?;
    match args.output.as_ref().or(spec.output.as_ref()) {
        Some(p) => outcome.write(p).with_context(|| format!("writing {}", p.display()))?,
        None => {
            emit_csv(&outcome.table, None)?;
            emit_json(&outcome.summary_json(), None)?;
        }
    }
    for c in &outcome.checks {
        let slope = c.fit.map_or("unavailable (< 3 usable rows)".to_string(), |f| format!("{:.3}", f.slope));
        eprintln!(
            "[{}] slope of {} = {} (bounds {:?}..{:?}, {} rows excluded)",
            if c.passed { "PASS" } else { "FAIL" },
            c.column,
            slope,
            c.min,
            c.max,
            c.excluded
        );
    }
    Ok(outcome.passed())
}

fn single_level(args: &SingleLevelArgs) -> Result<bool> {
    let model = args.model.build()?;
    let mut cfg = SystemConfig::new(args.particles, args.steps, args.model.horizon, args.samples, args.seed)
        .with_mode(args.mode)
        .with_kernel(args.model.kernel)
        .with_ordering(args.model.ordering);
    if let Some(g) = args.model.observable {
        cfg = cfg.with_observable(g);
    }
    cfg.korobov_base = args.model.korobov_base;
    let res = single_level_estimator(&model, &cfg)?;
    let mut table = Table::new(&["shift_index", "estimate"]);
    for (i, v) in res.per_shift.iter().enumerate() {
        table.push(vec![Cell::from(i), Cell::from(*v)]);
    }
    emit_csv(&table, args.out.output.as_deref())?;
    emit_json(
        &json!({
            "mean": res.mean,
            "variance": res.sample_variance,
            "standard_error": res.standard_error(),
            "cost": res.cost.total_kernel_evals(),
            "runtime": res.wall_time,
            "additive_noise": model.additive_noise(),
        }),
        args.out.summary.as_deref(),
    )?;
    Ok(true)
}

fn mlqmc(args: &MlqmcArgs) -> Result<bool> {
    let model = args.model.build()?;
    let mut cfg = LevelConfig::new(args.levels, args.n0, args.p0, args.samples.clone(), args.model.horizon, args.seed)
        .with_kernel(args.model.kernel)
        .with_ordering(args.model.ordering);
    cfg.observable = args.model.observable;
    cfg.korobov_base = args.model.korobov_base;
    let res = mlqmc_estimator(&model, &cfg)?;
    let mut table = Table::new(&["level", "mean", "variance", "cost", "samples"]);
    for s in &res.levels {
        table.push(vec![
            s.level.into(),
            s.mean.into(),
            s.variance.unwrap_or(f64::NAN).into(),
            s.cost.total_kernel_evals().into(),
            s.samples.into(),
        ]);
    }
    emit_csv(&table, args.out.output.as_deref())?;
    emit_json(
        &json!({
            "value": res.value,
            "standard_error": res.standard_error,
            "cost": res.total_cost.total_kernel_evals(),
            "runtime": res.wall_time,
        }),
        args.out.summary.as_deref(),
    )?;
    Ok(true)
}

fn points(args: &PointsArgs) -> Result<bool> {
    let z = match (args.dim, &args.model, args.steps) {
        (Some(d), None, None) => korobov_vector(args.korobov_base, d)?,
        (None, Some(name), Some(n)) => {
            let model = BuiltinModel::from_name(name, None, None)?;
            CoordinateLayout::new(model.aux_arity(), n).korobov(args.korobov_base, args.ordering)?
        }
        _ => bail!("give either --dim, or --model together with --N"),
    };
    let mut ps = lattice_points(&z, args.particles)?;
    if let Some(seed) = args.shift_seed {
        ps = shift_points(&ps, &Shift::draw(seed, Purpose::SingleLevelShift, 0, 0, ps.dim()))?;
    }
    let header: Vec<String> = (1..=ps.dim()).map(|j| format!("c{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::new(&header);
    for p in ps.points() {
        table.push(p.iter().map(|&c| Cell::from(c)).collect());
    }
    emit_csv(&table, args.output.as_deref())?;
    Ok(true)
}

fn bridge_test(args: &BridgeArgs) -> Result<bool> {
    let u = Shift::draw(args.seed, Purpose::IidSample, 0, 0, args.steps);
    let path = bridge_path(u.as_slice(), args.horizon)?;
    let mut table = Table::new(&["t", "value"]);
    for (j, &w) in path.nodes().iter().enumerate() {
        table.push(vec![path.node_time(j).into(), w.into()]);
    }
    emit_csv(&table, args.output.as_deref())?;
    Ok(true)
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Sweep(a) => sweep(a),
        Command::SingleLevel(a) => single_level(a),
        Command::Mlqmc(a) => mlqmc(a),
        Command::Points(a) => points(a),
        Command::BridgeTest(a) => bridge_test(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_threads(cli.threads, || run(&cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
