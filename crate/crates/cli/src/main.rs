//! `mobflow` command-line frontend.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric/fit error.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mobflow::areas::ScalePreset;
use mobflow::evaluation::MetricSpace;
use mobflow::ingest::EventFormat;
use mobflow::mobility::PairMode;
use mobflow::models::{ModelKind, PopulationSource};
use mobflow::synth::LayoutKind;
use mobflow::BoundingBox;

use crate::output::Outputs;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<mobflow::Error> for CliError {
    fn from(e: mobflow::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mobflow", version, about = "Population and mobility estimation from geo-tagged events")]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world: events.csv, areas.csv, truth.json, config.json.
    Synth(SynthArgs),
    /// Activity statistics: activity.json plus binned distributions.
    Stats(StatsArgs),
    /// Per-area user counts: population.csv and population_comparison.json.
    Population(PopulationArgs),
    /// Origin-destination flows: flows.csv and flows_summary.json.
    Flows(FlowsArgs),
    /// Fit models to a flow file: fit_<model>.json.
    Fit(FitArgs),
    /// Score fitted models: eval_<model>.json, scatter_<model>.csv, comparison.{json,txt}.
    Evaluate(EvaluateArgs),
    /// Everything from events to the comparison table in one run.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EventArgs {
    /// Event file (CSV `user_id,timestamp,lat,lon` or JSON lines).
    #[arg(long)]
    pub events: PathBuf,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<EventFormat>,
    /// Keep only events inside `australia` or `min_lon,min_lat,max_lon,max_lat`.
    #[arg(long)]
    pub bbox: Option<BoundingBox>,
}

#[derive(Debug, Clone, Args)]
pub struct ScaleArgs {
    /// Area registry CSV `name,lat,lon,population`.
    #[arg(long)]
    pub areas: PathBuf,
    /// Scale preset; sets the search radius to 50, 25 or 2 km.
    #[arg(long)]
    pub scale: Option<ScalePreset>,
    /// Search radius in km; overrides the preset.
    #[arg(long)]
    pub radius_km: Option<f64>,
}

impl ScaleArgs {
    /// Scale label and search radius. Without either flag the national
    /// preset applies.
    pub fn resolve(&self) -> (String, f64) {
        let preset = self.scale.unwrap_or(ScalePreset::National);
        match self.radius_km {
            Some(r) => (self.scale.map_or("custom", ScalePreset::name).to_string(), r),
            None => (preset.name().to_string(), preset.radius_km()),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PairArgs {
    #[arg(long, default_value = "strict")]
    pub pair_mode: PairMode,
    /// Consecutive events further apart than this are not paired.
    #[arg(long)]
    pub max_gap_hours: Option<f64>,
}

impl PairArgs {
    pub fn max_gap_secs(&self) -> Result<Option<i64>, CliError> {
        match self.max_gap_hours {
            None => Ok(None),
            Some(h) if h.is_finite() && h >= 0.0 => Ok(Some((h * 3600.0).round() as i64)),
            Some(h) => Err(CliError::Usage(format!("--max-gap-hours must be a non-negative number, got {h}"))),
        }
    }
}

/// `gravity4`, `gravity2`, `radiation` or `all`.
#[derive(Debug, Clone)]
pub struct ModelChoice(pub Vec<ModelKind>);

impl std::str::FromStr for ModelChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(ModelChoice(ModelKind::ALL.to_vec()));
        }
        s.parse::<ModelKind>().map(|k| ModelChoice(vec![k]))
    }
}

#[derive(Debug, Clone, Args)]
pub struct PopulationSourceArgs {
    /// Populations used as m, n and s.
    #[arg(long, default_value = "census")]
    pub population_source: PopulationSource,
    /// Population table from `mobflow population`; required for `twitter`.
    #[arg(long)]
    pub population: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory, created when missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Explicit area registry; replaces the generated layout.
    #[arg(long)]
    pub areas: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub n_areas: usize,
    #[arg(long, default_value = "uniform")]
    pub layout: LayoutKind,
    #[arg(long, default_value = "australia")]
    pub extent: BoundingBox,
    #[arg(long, default_value_t = 1_000)]
    pub population_min: u64,
    #[arg(long, default_value_t = 1_000_000)]
    pub population_max: u64,
    #[arg(long, default_value_t = 150.0)]
    pub min_separation_km: f64,
    #[arg(long, default_value_t = 1_000)]
    pub n_users: usize,
    /// Power-law exponent of events per user.
    #[arg(long, default_value_t = 2.5)]
    pub tweets_exponent: f64,
    #[arg(long, default_value_t = 1)]
    pub tweets_min: u64,
    #[arg(long, default_value_t = 100_000)]
    pub max_events_per_user: u64,
    /// Power-law exponent of waiting times.
    #[arg(long, default_value_t = 1.8)]
    pub waiting_exponent: f64,
    /// Smallest waiting time in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub waiting_min: f64,
    /// Ground-truth model driving movement between areas.
    #[arg(long, default_value = "gravity2")]
    pub movement_model: ModelKind,
    #[arg(long, default_value_t = 1.0)]
    pub movement_c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub movement_alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub movement_beta: f64,
    #[arg(long, default_value_t = 2.0)]
    pub movement_gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub stay_probability: f64,
    #[arg(long, default_value_t = 5.0)]
    pub spread_km: f64,
    /// Epoch seconds of the earliest possible event.
    #[arg(long, default_value_t = 1_377_993_600)]
    pub time_origin: i64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub events: EventArgs,
    /// Decimal places used to count distinct locations.
    #[arg(long, default_value_t = mobflow::activity::DEFAULT_LOCATION_PRECISION)]
    pub precision: u32,
    /// Bin ratio for the distribution CSVs (default 10^(1/4)).
    #[arg(long)]
    pub bin_ratio: Option<f64>,
    /// Also estimate the tail exponent of events per user above this value.
    #[arg(long)]
    pub tail_xmin: Option<f64>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PopulationArgs {
    #[command(flatten)]
    pub events: EventArgs,
    #[command(flatten)]
    pub scale: ScaleArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FlowsArgs {
    #[command(flatten)]
    pub events: EventArgs,
    #[command(flatten)]
    pub scale: ScaleArgs,
    #[command(flatten)]
    pub pairs: PairArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Flow CSV `origin,destination,count`.
    #[arg(long)]
    pub flows: PathBuf,
    #[command(flatten)]
    pub scale: ScaleArgs,
    #[arg(long, default_value = "all")]
    pub model: ModelChoice,
    #[command(flatten)]
    pub source: PopulationSourceArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub flows: PathBuf,
    #[command(flatten)]
    pub scale: ScaleArgs,
    /// Fit report(s) from `mobflow fit`.
    #[arg(long = "fit", required = true)]
    pub fits: Vec<PathBuf>,
    #[arg(long, default_value = "log")]
    pub space: MetricSpace,
    #[command(flatten)]
    pub source: PopulationSourceArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub events: EventArgs,
    #[command(flatten)]
    pub scale: ScaleArgs,
    #[command(flatten)]
    pub pairs: PairArgs,
    #[arg(long, default_value = "all")]
    pub model: ModelChoice,
    #[arg(long, default_value = "log")]
    pub space: MetricSpace,
    #[arg(long, default_value = "census")]
    pub population_source: PopulationSource,
    #[command(flatten)]
    pub out: OutArgs,
}

fn run(command: &Command) -> Result<(), CliError> {
    let out_dir = match command {
        Command::Synth(a) => &a.out.out,
        Command::Stats(a) => &a.out.out,
        Command::Population(a) => &a.out.out,
        Command::Flows(a) => &a.out.out,
        Command::Fit(a) => &a.out.out,
        Command::Evaluate(a) => &a.out.out,
        Command::Pipeline(a) => &a.out.out,
    };
    let mut out = Outputs::new(out_dir)?;
    let result = match command {
        Command::Synth(a) => commands::synth(a, &mut out),
        Command::Stats(a) => commands::stats(a, &mut out),
        Command::Population(a) => commands::population(a, &mut out),
        Command::Flows(a) => commands::flows(a, &mut out),
        Command::Fit(a) => commands::fit(a, &mut out),
        Command::Evaluate(a) => commands::evaluate(a, &mut out),
        Command::Pipeline(a) => commands::pipeline(a, &mut out),
    };
    if result.is_err() {
        out.discard();
    }
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("mobflow: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("mobflow: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mobflow: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
