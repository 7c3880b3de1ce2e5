use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use mobflow::activity::{
    default_bin_ratio, estimate_tail_exponent, events_per_user_distribution, log_bin, summarize,
    waiting_time_distribution, ActivitySummary, BinnedDistribution,
};
use mobflow::areas::{extract_population, load_areas, write_areas_csv, AreaSet, PopulationTable};
use mobflow::evaluation::{compare_populations, evaluate_model, ComparisonTable, EvalReport, SCATTER_HEADER};
use mobflow::ingest::{build_timelines, filter_bbox, parse_events, write_events_csv, EventFormat, UserTimeline};
use mobflow::mobility::{extract_flows, load_flows, offdiagonal, FlowMatrix};
use mobflow::models::{
    build_observations, census_populations, fit as fit_model, FitReport, ModelKind, ModelParams, PopulationSource,
};
use mobflow::pipeline::{model_populations, run_pipeline, PipelineConfig};
use mobflow::synth::{generate, AreaLayout, GeneratedLayout, SynthConfig};
use serde::Serialize;

use crate::output::Outputs;
use crate::{
    CliError, EvaluateArgs, EventArgs, FitArgs, FlowsArgs, PipelineArgs, PopulationArgs, PopulationSourceArgs,
    ScaleArgs, StatsArgs, SynthArgs,
};

const DISTRIBUTION_HEADER: [&str; 3] = ["x", "y_mean", "count"];

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn load_timelines(args: &EventArgs) -> Result<Vec<UserTimeline>, CliError> {
    let format = args.format.unwrap_or_else(|| EventFormat::from_path(&args.events));
    let report = parse_events(open(&args.events)?, format).map_err(|e| data_err(&args.events, e))?;
    if let Some(summary) = report.reject_summary() {
        eprintln!("mobflow: {}: {summary}", args.events.display());
    }
    let events = match &args.bbox {
        Some(b) => filter_bbox(&report.events, b),
        None => report.events,
    };
    Ok(build_timelines(events))
}

fn load_area_set(args: &ScaleArgs) -> Result<(String, AreaSet), CliError> {
    let (label, radius) = args.resolve();
    if !(radius.is_finite() && radius > 0.0) {
        return Err(CliError::Usage(format!("--radius-km must be positive, got {radius}")));
    }
    let set = load_areas(open(&args.areas)?, radius).map_err(|e| data_err(&args.areas, e))?;
    Ok((label, set))
}

fn load_populations(set: &AreaSet, args: &PopulationSourceArgs) -> Result<Vec<u64>, CliError> {
    match args.population_source {
        PopulationSource::Census => Ok(census_populations(set)),
        PopulationSource::Twitter => {
            let path = args.population.as_ref().ok_or_else(|| {
                CliError::Usage("--population-source twitter needs --population <population.csv>".into())
            })?;
            let table = PopulationTable::load_csv(open(path)?).map_err(|e| data_err(path, e))?;
            for row in &table.rows {
                if set.get(&row.name).is_none() {
                    return Err(data_err(path, format!("unknown area `{}`", row.name)));
                }
            }
            Ok(model_populations(set, &table, PopulationSource::Twitter))
        }
    }
}

fn load_flow_file(path: &Path, set: &AreaSet) -> Result<FlowMatrix, CliError> {
    load_flows(open(path)?, set).map_err(|e| data_err(path, e))
}

fn numeric(e: impl Into<mobflow::Error>) -> CliError {
    CliError::from(e.into())
}

fn write_binned(out: &mut Outputs, name: &str, binned: &BinnedDistribution, header: [&str; 3]) -> Result<(), CliError> {
    out.write_with(name, |w| binned.write_csv(w, header).map_err(|e| e.to_string()))
}

fn write_flows(out: &mut Outputs, flows: &FlowMatrix) -> Result<(), CliError> {
    out.write_with("flows.csv", |w| flows.write_csv(w).map_err(|e| e.to_string()))?;
    out.json("flows_summary.json", &FlowSummary::from(flows))
}

fn write_population(out: &mut Outputs, table: &PopulationTable) -> Result<(), CliError> {
    out.write_with("population.csv", |w| table.write_csv(w).map_err(|e| e.to_string()))
}

fn write_evaluations(
    out: &mut Outputs,
    evaluations: &[EvalReport],
    comparison: &ComparisonTable,
) -> Result<(), CliError> {
    for report in evaluations {
        let name = report.kind.name();
        out.json(&format!("eval_{name}.json"), report)?;
        write_binned(out, &format!("scatter_{name}.csv"), &report.binned_scatter, SCATTER_HEADER)?;
    }
    out.json("comparison.json", comparison)?;
    let text = comparison.to_text();
    out.text("comparison.txt", &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct FlowSummary {
    total_count: u64,
    n_pairs_total: u64,
    n_pairs_unresolved: u64,
    n_pairs_over_gap: u64,
    n_cells: usize,
}

impl From<&FlowMatrix> for FlowSummary {
    fn from(f: &FlowMatrix) -> Self {
        FlowSummary {
            total_count: f.total_count(),
            n_pairs_total: f.n_pairs_total,
            n_pairs_unresolved: f.n_pairs_unresolved,
            n_pairs_over_gap: f.n_pairs_over_gap,
            n_cells: f.counts.len(),
        }
    }
}

pub fn synth(args: &SynthArgs, out: &mut Outputs) -> Result<(), CliError> {
    let layout = match &args.areas {
        Some(path) => {
            let set = load_areas(open(path)?, 1.0).map_err(|e| data_err(path, e))?;
            AreaLayout::Explicit(set.areas().to_vec())
        }
        None => AreaLayout::Generated(GeneratedLayout {
            count: args.n_areas,
            extent: args.extent,
            population_min: args.population_min,
            population_max: args.population_max,
            min_separation_km: args.min_separation_km,
            kind: args.layout,
        }),
    };
    let movement_model = match args.movement_model {
        ModelKind::Gravity4 => {
            ModelParams::gravity4(args.movement_c, args.movement_alpha, args.movement_beta, args.movement_gamma)
        }
        ModelKind::Gravity2 => ModelParams::gravity2(args.movement_c, args.movement_gamma),
        ModelKind::Radiation => ModelParams::radiation(args.movement_c),
    };
    let config = SynthConfig {
        seed: args.seed,
        layout,
        n_users: args.n_users,
        tweets_exponent: args.tweets_exponent,
        tweets_min: args.tweets_min,
        max_events_per_user: args.max_events_per_user,
        waiting_exponent: args.waiting_exponent,
        waiting_min: args.waiting_min,
        movement_model,
        stay_probability: args.stay_probability,
        spread_km: args.spread_km,
        time_origin: args.time_origin,
    };
    let world = generate(&config).map_err(|e| CliError::Usage(e.to_string()))?;
    out.write_with("events.csv", |w| write_events_csv(&world.events, w).map_err(|e| e.to_string()))?;
    out.write_with("areas.csv", |w| write_areas_csv(&world.truth.areas, w).map_err(|e| e.to_string()))?;
    out.json("truth.json", &world.truth)?;
    out.json("config.json", &config)
}

#[derive(Serialize)]
struct TailFit {
    x_min: f64,
    exponent: f64,
}

#[derive(Serialize)]
struct StatsReport {
    summary: ActivitySummary,
    /// Waiting times of zero seconds, left out of the binned distribution.
    zero_waiting_times: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    events_per_user_tail: Option<TailFit>,
}

pub fn stats(args: &StatsArgs, out: &mut Outputs) -> Result<(), CliError> {
    let ratio = args.bin_ratio.unwrap_or_else(default_bin_ratio);
    let timelines = load_timelines(&args.events)?;
    let summary = summarize(&timelines, args.precision).map_err(numeric)?;

    let per_user = events_per_user_distribution(&timelines);
    let points: Vec<(f64, f64)> = per_user.iter().map(|(&k, &f)| (k as f64, f as f64)).collect();
    let per_user_bins = log_bin(&points, ratio).map_err(numeric)?;

    let mut waits: BTreeMap<i64, u64> = BTreeMap::new();
    for w in waiting_time_distribution(&timelines) {
        *waits.entry(w).or_insert(0) += 1;
    }
    let zero_waiting_times = waits.remove(&0).unwrap_or(0);
    let points: Vec<(f64, f64)> = waits.iter().map(|(&w, &f)| (w as f64, f as f64)).collect();
    let wait_bins = log_bin(&points, ratio).map_err(numeric)?;

    let events_per_user_tail = match args.tail_xmin {
        Some(x_min) => {
            let samples: Vec<f64> = timelines.iter().map(|t| t.len() as f64).collect();
            let exponent = estimate_tail_exponent(&samples, x_min).map_err(numeric)?;
            Some(TailFit { x_min, exponent })
        }
        None => None,
    };

    out.json("activity.json", &StatsReport { summary, zero_waiting_times, events_per_user_tail })?;
    write_binned(out, "events_per_user.csv", &per_user_bins, DISTRIBUTION_HEADER)?;
    write_binned(out, "waiting_time.csv", &wait_bins, DISTRIBUTION_HEADER)
}

pub fn population(args: &PopulationArgs, out: &mut Outputs) -> Result<(), CliError> {
    let (_, set) = load_area_set(&args.scale)?;
    let timelines = load_timelines(&args.events)?;
    let table = extract_population(&timelines, &set);
    write_population(out, &table)?;
    match compare_populations(&table) {
        Ok(cmp) => out.json("population_comparison.json", &cmp),
        Err(e) => {
            eprintln!("mobflow: population comparison skipped: {e}");
            Ok(())
        }
    }
}

pub fn flows(args: &FlowsArgs, out: &mut Outputs) -> Result<(), CliError> {
    let (_, set) = load_area_set(&args.scale)?;
    let max_gap = args.pairs.max_gap_secs()?;
    let timelines = load_timelines(&args.events)?;
    let flows = extract_flows(&timelines, &set, args.pairs.pair_mode, max_gap);
    write_flows(out, &flows)
}

pub fn fit(args: &FitArgs, out: &mut Outputs) -> Result<(), CliError> {
    let (_, set) = load_area_set(&args.scale)?;
    let flows = load_flow_file(&args.flows, &set)?;
    let pops = load_populations(&set, &args.source)?;
    let observations = build_observations(&offdiagonal(&flows), &set, &pops);
    if observations.n_excluded_zero_population > 0 {
        eprintln!("mobflow: {} pair(s) excluded for zero population", observations.n_excluded_zero_population);
    }
    for &kind in &args.model.0 {
        let report = fit_model(kind, &observations.observations).map_err(numeric)?;
        out.json(&format!("fit_{}.json", kind.name()), &report)?;
    }
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs, out: &mut Outputs) -> Result<(), CliError> {
    let (label, set) = load_area_set(&args.scale)?;
    let flows = load_flow_file(&args.flows, &set)?;
    let pops = load_populations(&set, &args.source)?;
    let positive = build_observations(&offdiagonal(&flows), &set, &pops).positive();
    let mut evaluations = Vec::with_capacity(args.fits.len());
    for path in &args.fits {
        let report: FitReport = serde_json::from_reader(open(path)?).map_err(|e| data_err(path, e))?;
        report.parameters.validate().map_err(|e| data_err(path, e))?;
        evaluations.push(evaluate_model(&report.parameters, &positive, args.space).map_err(numeric)?);
    }
    let comparison = ComparisonTable::from_reports(&label, set.search_radius_km(), args.space, &evaluations);
    write_evaluations(out, &evaluations, &comparison)
}

#[derive(Serialize)]
struct PipelineSummary<'a> {
    scale: &'a str,
    radius_km: f64,
    config: &'a PipelineConfig,
    n_users: usize,
    n_events: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    population_comparison: Option<&'a mobflow::evaluation::PopulationComparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    population_note: Option<&'a str>,
    flows: FlowSummary,
    n_observations: usize,
    n_excluded_zero_population: usize,
}

pub fn pipeline(args: &PipelineArgs, out: &mut Outputs) -> Result<(), CliError> {
    let (label, set) = load_area_set(&args.scale)?;
    let config = PipelineConfig {
        scale_label: label.clone(),
        pair_mode: args.pairs.pair_mode,
        max_gap: args.pairs.max_gap_secs()?,
        models: args.model.0.clone(),
        space: args.space,
        population_source: args.population_source,
    };
    let timelines = load_timelines(&args.events)?;
    let result = run_pipeline(&timelines, &set, &config)?;

    write_population(out, &result.population)?;
    write_flows(out, &result.flows)?;
    for report in &result.fits {
        out.json(&format!("fit_{}.json", report.kind.name()), report)?;
    }
    out.json(
        "summary.json",
        &PipelineSummary {
            scale: &label,
            radius_km: set.search_radius_km(),
            config: &config,
            n_users: timelines.len(),
            n_events: timelines.iter().map(UserTimeline::len).sum(),
            population_comparison: result.population_comparison.as_ref(),
            population_note: result.population_note.as_deref(),
            flows: FlowSummary::from(&result.flows),
            n_observations: result.observations.observations.len(),
            n_excluded_zero_population: result.observations.n_excluded_zero_population,
        },
    )?;
    write_evaluations(out, &result.evaluations, &result.comparison)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ModelChoice;

    #[test]
    fn model_choice_all_expands() {
        let c: ModelChoice = "all".parse().unwrap();
        assert_eq!(c.0, ModelKind::ALL.to_vec());
        let c: ModelChoice = "radiation".parse().unwrap();
        assert_eq!(c.0, vec![ModelKind::Radiation]);
        assert!("nope".parse::<ModelChoice>().is_err());
    }

    #[test]
    fn radius_flag_overrides_preset() {
        let mut a = ScaleArgs { areas: "x".into(), scale: None, radius_km: None };
        assert_eq!(a.resolve(), ("national".to_string(), 50.0));
        a.scale = Some(mobflow::areas::ScalePreset::Metro);
        assert_eq!(a.resolve(), ("metro".to_string(), 2.0));
        a.radius_km = Some(3.5);
        assert_eq!(a.resolve(), ("metro".to_string(), 3.5));
        a.scale = None;
        assert_eq!(a.resolve(), ("custom".to_string(), 3.5));
    }
}
