//! Goodness-of-fit metrics and comparison reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::activity::{default_bin_ratio, log_bin, ActivityError, BinnedDistribution};
use crate::areas::PopulationTable;
use crate::models::{predict, FlowObservation, ModelError, ModelKind, ModelParams};

pub const HITRATE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("correlation undefined: {0} sequence is constant")]
    Undefined(&'static str),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Binning(#[from] ActivityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricSpace {
    #[default]
    Log,
    Linear,
}

impl std::str::FromStr for MetricSpace {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "log" => Ok(MetricSpace::Log),
            "linear" => Ok(MetricSpace::Linear),
            other => Err(format!("unknown metric space `{other}` (expected log or linear)")),
        }
    }
}

/// Sample Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::TooShort { needed: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(EvalError::Undefined("first"));
    }
    if syy == 0.0 {
        return Err(EvalError::Undefined("second"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Two-tailed p-value of a Pearson coefficient `r` over `n` pairs, from the
/// t statistic `r √((n-2)/(1-r²))` with `n - 2` degrees of freedom.
pub fn pearson_p_value(r: f64, n: usize) -> Result<f64, EvalError> {
    if n < 3 {
        return Err(EvalError::TooShort { needed: 3, got: n });
    }
    if !(-1.0..=1.0).contains(&r) {
        return Err(EvalError::Domain(format!("correlation {r} outside [-1, 1]")));
    }
    let df = (n - 2) as f64;
    if r.abs() == 1.0 {
        return Ok(0.0);
    }
    let t2 = r * r * df / (1.0 - r * r);
    // P(|T| > t) = I_{df/(df+t²)}(df/2, 1/2)
    Ok(statrs::function::beta::beta_reg(df / 2.0, 0.5, df / (df + t2)))
}

/// Fraction of estimates whose relative error is strictly below `threshold`.
pub fn hitrate(observed: &[f64], estimated: &[f64], threshold: f64) -> Result<f64, EvalError> {
    if observed.len() != estimated.len() {
        return Err(EvalError::LengthMismatch(observed.len(), estimated.len()));
    }
    if observed.is_empty() {
        return Err(EvalError::TooShort { needed: 1, got: 0 });
    }
    if let Some(o) = observed.iter().find(|o| !(o.is_finite() && **o > 0.0)) {
        return Err(EvalError::Domain(format!("observed values must be positive, got {o}")));
    }
    let hits = observed.iter().zip(estimated).filter(|(o, e)| ((*e - *o).abs() / *o) < threshold).count();
    Ok(hits as f64 / observed.len() as f64)
}

pub fn hitrate50(observed: &[f64], estimated: &[f64]) -> Result<f64, EvalError> {
    hitrate(observed, estimated, HITRATE_THRESHOLD)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationPair {
    pub name: String,
    pub census: f64,
    pub twitter: f64,
    pub rescaled_twitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationComparison {
    pub rescale_factor: f64,
    pub pearson: f64,
    pub p_value: f64,
    pub n_areas: usize,
    pub pairs: Vec<PopulationPair>,
}

/// Census versus distinct-user counts. The rescale factor preserves totals:
/// `Σ census / Σ twitter_users`. Correlation is computed in linear space.
pub fn compare_populations(table: &PopulationTable) -> Result<PopulationComparison, EvalError> {
    let nonzero = table.rows.iter().filter(|r| r.twitter_users > 0).count();
    if nonzero == 0 {
        return Err(EvalError::Domain("every area has zero twitter users".into()));
    }
    if nonzero < 3 {
        return Err(EvalError::TooShort { needed: 3, got: nonzero });
    }
    let census: Vec<f64> = table.rows.iter().map(|r| r.census_population as f64).collect();
    let twitter: Vec<f64> = table.rows.iter().map(|r| r.twitter_users as f64).collect();
    let r = pearson(&census, &twitter)?;
    let p_value = pearson_p_value(r, census.len())?;
    let rescale_factor = census.iter().sum::<f64>() / twitter.iter().sum::<f64>();
    let pairs = table
        .rows
        .iter()
        .zip(census.iter().zip(&twitter))
        .map(|(row, (&c, &t))| PopulationPair {
            name: row.name.clone(),
            census: c,
            twitter: t,
            rescaled_twitter: rescale_factor * t,
        })
        .collect();
    Ok(PopulationComparison { rescale_factor, pearson: r, p_value, n_areas: census.len(), pairs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: ModelKind,
    pub pearson: f64,
    pub pearson_space: MetricSpace,
    pub hitrate50: f64,
    pub n_pairs: usize,
    /// Log-binned `(prediction, observed)` scatter.
    pub binned_scatter: BinnedDistribution,
}

pub const SCATTER_HEADER: [&str; 3] = ["x_model", "y_observed_mean", "count"];

/// Scores a fitted model against observations with positive observed flow.
pub fn evaluate_model(
    params: &ModelParams,
    observations: &[FlowObservation],
    space: MetricSpace,
) -> Result<EvalReport, EvalError> {
    if observations.is_empty() {
        return Err(EvalError::TooShort { needed: 1, got: 0 });
    }
    let predicted: Vec<f64> = observations.iter().map(|o| predict(params, o)).collect::<Result<_, _>>()?;
    let observed: Vec<f64> = observations.iter().map(|o| o.observed).collect();
    let hitrate50 = hitrate50(&observed, &predicted)?;
    let pearson = match space {
        MetricSpace::Linear => pearson(&predicted, &observed)?,
        MetricSpace::Log => {
            let lp: Vec<f64> = predicted.iter().map(|v| v.log10()).collect();
            let lo: Vec<f64> = observed.iter().map(|v| v.log10()).collect();
            pearson(&lp, &lo)?
        }
    };
    let points: Vec<(f64, f64)> = predicted.iter().copied().zip(observed.iter().copied()).collect();
    let binned_scatter = log_bin(&points, default_bin_ratio())?;
    Ok(EvalReport {
        kind: params.kind,
        pearson,
        pearson_space: space,
        hitrate50,
        n_pairs: observations.len(),
        binned_scatter,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub pearson: f64,
    pub hitrate50: f64,
}

/// Per-model metrics for one analysis scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub scale: String,
    pub radius_km: f64,
    pub pearson_space: MetricSpace,
    pub models: BTreeMap<ModelKind, ComparisonCell>,
}

impl ComparisonTable {
    pub fn from_reports(scale: &str, radius_km: f64, space: MetricSpace, reports: &[EvalReport]) -> Self {
        let models =
            reports.iter().map(|r| (r.kind, ComparisonCell { pearson: r.pearson, hitrate50: r.hitrate50 })).collect();
        ComparisonTable { scale: scale.to_string(), radius_km, pearson_space: space, models }
    }

    /// Aligned text with Pearson on the upper line and HitRate@50% below.
    /// The best value in each line is marked with `*`.
    pub fn to_text(&self) -> String {
        let kinds: Vec<ModelKind> = self.models.keys().copied().collect();
        let width = 16;
        let label_width = self.scale.len().max(12);
        let mut out = String::new();
        let _ = write!(out, "{:label_width$}", "");
        for k in &kinds {
            let _ = write!(out, " | {:>width$}", k.label());
        }
        out.push('\n');
        let rule_len = label_width + kinds.len() * (width + 3);
        out.push_str(&"-".repeat(rule_len));
        out.push('\n');
        let line = |out: &mut String, label: &str, get: &dyn Fn(&ComparisonCell) -> f64| {
            let best = self.models.values().map(get).fold(f64::NEG_INFINITY, f64::max);
            let _ = write!(out, "{label:label_width$}");
            for k in &kinds {
                let v = get(&self.models[k]);
                let mark = if v == best { "*" } else { " " };
                let _ = write!(out, " | {:>w$}", format!("{v:.3}{mark}"), w = width);
            }
            out.push('\n');
        };
        line(&mut out, &self.scale, &|c| c.pearson);
        line(&mut out, &format!("({} km)", self.radius_km), &|c| c.hitrate50);
        out
    }
}
