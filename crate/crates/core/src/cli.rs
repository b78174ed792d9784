//! The `civitas` command line.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! failures while running.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::atcu::{build_lp, extract_policy, from_schedule_tables, solution_csv, solve, LpStatus, ShiftLog};
use crate::config::{self, ConfigError};
use crate::fmt::{sig, Csv};
use crate::fuzzy::{surface, RuleBase};
use crate::metrics::{
    autonomy, efficiency, flexibility, predictability, report_csv, scalability, CurvePair, EffortField, MetricRow,
    SpecBox,
};
use crate::sim::{self, Mode, SimError, SimSetup};
use crate::ztcu::build_table;

#[derive(Debug, Parser)]
#[command(name = "civitas", version, about = "Hierarchical urban traffic and lighting control")]
pub struct Cli {
    /// Worker threads for parallel table building and surface sampling.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the traffic world under fixed-time or hierarchical control.
    Simulate(SimulateArgs),
    /// Build the schedule table of a conditional task graph.
    Schedule(ScheduleArgs),
    /// Build and solve the area CTMDP of a task graph's schedule table.
    Ctmdp(CtmdpArgs),
    /// Sample the lighting controller's control surface.
    FuzzySurface(FuzzyArgs),
    /// Evaluate the design metrics listed in an input file.
    Metrics(MetricsArgs),
    /// Classify the links of a module registry.
    Classify(ClassifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Fixed,
    Hierarchical,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub demand: PathBuf,
    /// Task graph with a `[zone]` section; required in hierarchical mode.
    #[arg(long)]
    pub ctg: Option<PathBuf>,
    /// Simulated seconds.
    #[arg(long, default_value_t = 3600.0)]
    pub horizon: f64,
    /// Overrides the demand file's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Hierarchical)]
    pub mode: ModeArg,
    /// Step length in seconds.
    #[arg(long, default_value_t = crate::world::DEFAULT_DT)]
    pub dt: f64,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub ctg: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CtmdpArgs {
    #[arg(long)]
    pub ctg: PathBuf,
    /// Observed shifts and dwell times; unobserved pairs use the prior.
    #[arg(long)]
    pub shift_log: Option<PathBuf>,
    /// Comma-separated actions; defaults to the task graph's zone actions.
    #[arg(long, value_delimiter = ',')]
    pub actions: Vec<String>,
    /// Total leaving rate assumed for unobserved state-action pairs.
    #[arg(long, default_value_t = 1.0 / 60.0)]
    pub prior_rate: f64,
    /// Upper bound on the expected area delay.
    #[arg(long)]
    pub max_delay: Option<f64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FuzzyArgs {
    /// `m,M,limit` shared by illumination, density and command.
    #[arg(default_value = "0.5,1,1.2")]
    pub params: String,
    /// Grid points per axis.
    #[arg(default_value_t = 121)]
    pub n: usize,
    /// Also write a gnuplot data file.
    #[arg(long)]
    pub gnuplot: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Overrides the input file's sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::MissingZone | SimError::UnknownItu(_) | SimError::UnobservedSite(_) | SimError::BadHorizon => {
                CliError::Usage(e.to_string())
            }
            other => runtime(other),
        }
    }
}

/// Sets up logging from `CIVITAS_LOG` (`quiet`, `info` or `trace`).
pub fn init_logging() {
    let level = match std::env::var("CIVITAS_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("info") => log::LevelFilter::Info,
        Ok("trace") => log::LevelFilter::Trace,
        _ => log::LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Messages go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("civitas: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match cli.jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(runtime)?;
            pool.install(|| dispatch(&cli.command))
        }
        None => dispatch(&cli.command),
    }
}

fn dispatch(cmd: &Command) -> Result<(), CliError> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Schedule(a) => cmd_schedule(a),
        Command::Ctmdp(a) => cmd_ctmdp(a),
        Command::FuzzySurface(a) => cmd_fuzzy_surface(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Classify(a) => cmd_classify(a),
    }
}

fn load(path: &Path) -> Result<(String, String), CliError> {
    Ok((config::read(path)?, path.display().to_string()))
}

fn write(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, content).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    if !(a.horizon > 0.0) || !a.horizon.is_finite() {
        return Err(CliError::Usage(format!("--horizon must be positive, got {}", a.horizon)));
    }
    if !(a.dt > 0.0) || a.dt > a.horizon {
        return Err(CliError::Usage(format!("--dt must be in (0, horizon], got {}", a.dt)));
    }
    let (text, origin) = load(&a.network)?;
    let network = config::parse_network(&text, &origin)?;
    let (text, origin) = load(&a.demand)?;
    let demand = config::parse_demand(&text, &origin, &network.network, a.seed, Some(a.horizon))?;
    let ctg = match &a.ctg {
        Some(p) => {
            let (text, origin) = load(p)?;
            Some(config::parse_ctg(&text, &origin)?)
        }
        None => None,
    };
    let mode = match a.mode {
        ModeArg::Fixed => Mode::Fixed,
        ModeArg::Hierarchical => Mode::Hierarchical,
    };
    let mut setup = SimSetup::new(network, demand, ctg, a.horizon, mode);
    setup.dt = a.dt;
    let result = sim::run(&setup)?;
    write(&a.out, "events.tsv", &result.event_log)?;
    write(&a.out, "summary.csv", &result.summary_csv())?;
    write(&a.out, "reconcile.csv", &result.reconcile_csv)?;
    log::info!("{} cars serviced in {} s", result.serviced, sig(a.horizon));
    Ok(())
}

pub fn cmd_schedule(a: &ScheduleArgs) -> Result<(), CliError> {
    let (text, origin) = load(&a.ctg)?;
    let cfg = config::parse_ctg(&text, &origin)?;
    let table = build_table(&cfg.ctg, cfg.objective);
    write(&a.out, "schedule_table.csv", &table.to_csv())?;
    write(&a.out, "schedule_summary.csv", &table.summary_csv())?;
    log::info!("{} columns", table.len());
    Ok(())
}

pub fn cmd_ctmdp(a: &CtmdpArgs) -> Result<(), CliError> {
    let (text, origin) = load(&a.ctg)?;
    let cfg = config::parse_ctg(&text, &origin)?;
    let actions = if a.actions.is_empty() {
        cfg.zone.as_ref().map(|z| z.actions.clone()).unwrap_or_default()
    } else {
        a.actions.clone()
    };
    if actions.is_empty() {
        return Err(CliError::Usage("no actions: pass --actions or list them in the [zone] section".into()));
    }
    if !(a.prior_rate > 0.0) {
        return Err(CliError::Usage("--prior-rate must be positive".into()));
    }
    let log = match &a.shift_log {
        Some(p) => {
            let (text, _) = load(p)?;
            ShiftLog::from_csv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => ShiftLog::default(),
    };
    let zone = cfg.zone.as_ref().map(|z| z.id.clone()).unwrap_or_else(|| "Z".into());
    let table = build_table(&cfg.ctg, cfg.objective);
    let mut m = from_schedule_tables(&[(&zone, &table)], &actions, &log, a.prior_rate)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let unobserved = m.prior_pairs().len();
    if unobserved > 0 {
        log::warn!("{unobserved} state-action pairs use the uniform prior rate");
    }
    if let Some(d) = a.max_delay {
        m = m.with_delay_bound(d);
    }
    let lp = build_lp(&m);
    let sol = solve(&lp);
    let (rates, rewards, states) = m.to_csv();
    write(&a.out, "ctmdp_rates.csv", &rates)?;
    write(&a.out, "ctmdp_rewards.csv", &rewards)?;
    write(&a.out, "ctmdp_states.csv", &states)?;
    let mut summary = Csv::new(&["status", "objective", "dual_objective", "iterations"]);
    let status = format!("{:?}", sol.status).to_lowercase();
    match sol.status {
        LpStatus::Optimal => {
            let policy = extract_policy(&sol, &m).map_err(runtime)?;
            write(&a.out, "ctmdp_solution.csv", &solution_csv(&sol, &m, &policy))?;
            summary.row([
                status,
                sig(sol.objective),
                sig(sol.dual_objective(&lp)),
                sol.iterations.to_string(),
            ]);
            write(&a.out, "ctmdp_summary.csv", &summary.finish())?;
            Ok(())
        }
        _ => {
            summary.row([status.clone(), "-".into(), "-".into(), sol.iterations.to_string()]);
            write(&a.out, "ctmdp_summary.csv", &summary.finish())?;
            Err(runtime(format!("linear program is {status}")))
        }
    }
}

pub fn cmd_fuzzy_surface(a: &FuzzyArgs) -> Result<(), CliError> {
    let params = config::parse_fuzzy_params(&a.params)?;
    if a.n < 2 {
        return Err(CliError::Usage(format!("grid size must be at least 2, got {}", a.n)));
    }
    let s = surface(&params, &RuleBase::default(), a.n).map_err(runtime)?;
    write(&a.out, "fuzzy_surface.csv", &s.to_csv())?;
    if a.gnuplot {
        write(&a.out, "fuzzy_surface.dat", &s.to_gnuplot())?;
    }
    Ok(())
}

pub fn cmd_metrics(a: &MetricsArgs) -> Result<(), CliError> {
    let (text, origin) = load(&a.input)?;
    let file = config::parse_metrics(&text, &origin)?;
    let seed = a.seed.or(file.seed).unwrap_or(0);
    let usage = |e: crate::metrics::MetricError| CliError::Usage(e.to_string());
    let mut rows = Vec::new();
    if let Some(f) = &file.flexibility {
        let dims = f.ranges.len();
        if f.constraints.iter().any(|c| c.len() != dims + 1) {
            return Err(CliError::Usage(format!(
                "flexibility constraints need {} coefficients and a bound",
                dims
            )));
        }
        let bx = SpecBox::new(f.ranges.clone()).map_err(usage)?;
        let cs = f.constraints.clone();
        let feasible = move |x: &[f64]| {
            cs.iter()
                .all(|c| c[..dims].iter().zip(x).map(|(a, x)| a * x).sum::<f64>() <= c[dims])
        };
        rows.push(MetricRow {
            metric: "flexibility".into(),
            value: flexibility(feasible, &bx, f.samples, seed),
            parameters: format!("samples={};seed={seed}", f.samples),
        });
    }
    if let Some(s) = &file.scalability {
        rows.push(MetricRow {
            metric: "scalability".into(),
            value: scalability(s.p1, s.cost1, s.p2, s.cost2).map_err(usage)?,
            parameters: format!("p1={};c1={};p2={};c2={}", sig(s.p1), sig(s.cost1), sig(s.p2), sig(s.cost2)),
        });
    }
    if let Some(au) = &file.autonomy {
        let field = EffortField::new(
            au.performance.clone(),
            au.area.clone(),
            au.time.clone(),
            au.effort.clone(),
        )
        .map_err(usage)?;
        rows.push(MetricRow {
            metric: "autonomy".into(),
            value: autonomy(&field),
            parameters: format!("cells={}", field.values.len()),
        });
    }
    if let Some(e) = &file.efficiency {
        let curves = CurvePair::new(e.grid.clone(), e.adaptive.clone(), e.single_value.clone()).map_err(usage)?;
        rows.push(MetricRow {
            metric: "efficiency".into(),
            value: efficiency(&curves),
            parameters: format!("points={}", e.grid.len()),
        });
    }
    if let Some(p) = &file.predictability {
        let r = predictability(&p.records, p.limit).map_err(usage)?;
        let params = format!("records={};limit={}", p.records.len(), sig(p.limit));
        for (name, v) in [
            ("predictability_max_abs_error", r.max_abs_error),
            ("predictability_rmse", r.rmse),
            ("predictability_within_limit", if r.within_limit { 1.0 } else { 0.0 }),
        ] {
            rows.push(MetricRow {
                metric: name.into(),
                value: v,
                parameters: params.clone(),
            });
        }
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{origin}: no metric sections")));
    }
    write(&a.out, "metrics.csv", &report_csv(&rows))
}

pub fn cmd_classify(a: &ClassifyArgs) -> Result<(), CliError> {
    let (text, origin) = load(&a.registry)?;
    let reg = config::parse_registry(&text, &origin)?;
    write(&a.out, "interactions.csv", &reg.report_csv())?;
    let kinds: Vec<String> = reg.kinds_present().iter().map(|k| k.to_string()).collect();
    log::info!("interaction kinds present: {}", kinds.join(", "));
    Ok(())
}
