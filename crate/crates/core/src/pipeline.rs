//! One-scale analysis: population table, flows, fits and evaluations.

use serde::{Deserialize, Serialize};

use crate::areas::{assign_timelines, population_from_assignments, AreaSet, PopulationTable};
use crate::evaluation::{
    compare_populations, evaluate_model, ComparisonTable, EvalReport, MetricSpace, PopulationComparison,
};
use crate::ingest::UserTimeline;
use crate::mobility::{flows_from_assignments, offdiagonal, FlowMatrix, PairMode};
use crate::models::{
    build_observations, census_populations, fit, twitter_populations, FitReport, ModelKind, ObservationSet,
    PopulationSource,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scale_label: String,
    pub pair_mode: PairMode,
    /// Seconds; `None` is unlimited.
    pub max_gap: Option<i64>,
    pub models: Vec<ModelKind>,
    pub space: MetricSpace,
    pub population_source: PopulationSource,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scale_label: "custom".into(),
            pair_mode: PairMode::Strict,
            max_gap: None,
            models: ModelKind::ALL.to_vec(),
            space: MetricSpace::Log,
            population_source: PopulationSource::Census,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub population: PopulationTable,
    /// `None` when the comparison is undefined (e.g. fewer than three areas
    /// with users); the reason is kept in `population_note`.
    pub population_comparison: Option<PopulationComparison>,
    pub population_note: Option<String>,
    pub flows: FlowMatrix,
    pub observations: ObservationSet,
    pub fits: Vec<FitReport>,
    pub evaluations: Vec<EvalReport>,
    pub comparison: ComparisonTable,
}

/// Chooses `m`, `n` and `s` populations for model fitting.
pub fn model_populations(set: &AreaSet, table: &PopulationTable, source: PopulationSource) -> Vec<u64> {
    match source {
        PopulationSource::Census => census_populations(set),
        PopulationSource::Twitter => twitter_populations(set, table),
    }
}

pub fn run_pipeline(
    timelines: &[UserTimeline],
    set: &AreaSet,
    config: &PipelineConfig,
) -> crate::Result<PipelineOutput> {
    let assigned = assign_timelines(timelines, set);
    let population = population_from_assignments(&assigned, set);
    let (population_comparison, population_note) = match compare_populations(&population) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let flows = flows_from_assignments(timelines, &assigned, set, config.pair_mode, config.max_gap);
    let pops = model_populations(set, &population, config.population_source);
    let observations = build_observations(&offdiagonal(&flows), set, &pops);
    let positive = observations.positive();

    let mut fits = Vec::with_capacity(config.models.len());
    let mut evaluations = Vec::with_capacity(config.models.len());
    for &kind in &config.models {
        let report = fit(kind, &observations.observations)?;
        evaluations.push(evaluate_model(&report.parameters, &positive, config.space)?);
        fits.push(report);
    }
    let comparison =
        ComparisonTable::from_reports(&config.scale_label, set.search_radius_km(), config.space, &evaluations);
    Ok(PipelineOutput {
        population,
        population_comparison,
        population_note,
        flows,
        observations,
        fits,
        evaluations,
        comparison,
    })
}
