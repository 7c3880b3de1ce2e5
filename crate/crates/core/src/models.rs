//! Spatial-interaction models for origin-destination flows.
//!
//! Three model forms are supported, each with a multiplicative constant `C`:
//!
//! ```text
//! gravity4:  P = C · m^α · n^β / d^γ
//! gravity2:  P = C · m · n / d^γ
//! radiation: P = C · m · n / ((m + s)(m + n + s))
//! ```
//!
//! `m` and `n` are the origin and destination populations, `d` the centroid
//! distance in km, and `s` the population living within `d` of the origin
//! centroid, excluding the origin and destination themselves.
//!
//! Fitting is ordinary least squares on the natural logarithm of the model:
//! gravity4 regresses `ln P` on `[1, ln m, ln n, -ln d]`, gravity2 regresses
//! `ln P - ln m - ln n` on `[1, -ln d]`, and radiation has only the intercept,
//! so `ln C` is the mean log residual. Observed flows of zero cannot enter a
//! log fit and are excluded and counted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::areas::{AreaSet, PopulationTable};
use crate::geo::haversine_km;
use crate::mobility::FlowMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("origin and destination are the same area `{0}`")]
    DegeneratePair(String),
    #[error("unknown area `{0}`")]
    UnknownArea(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("{kind} needs at least {needed} observations with positive flow, got {got}")]
    TooFewObservations { kind: ModelKind, needed: usize, got: usize },
    #[error("singular design: {0}")]
    Singular(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gravity4,
    Gravity2,
    Radiation,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Gravity4, ModelKind::Gravity2, ModelKind::Radiation];

    pub fn n_params(self) -> usize {
        match self {
            ModelKind::Gravity4 => 4,
            ModelKind::Gravity2 => 2,
            ModelKind::Radiation => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gravity4 => "gravity4",
            ModelKind::Gravity2 => "gravity2",
            ModelKind::Radiation => "radiation",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Gravity4 => "Gravity 4Param",
            ModelKind::Gravity2 => "Gravity 2Param",
            ModelKind::Radiation => "Radiation",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "gravity4" => Ok(ModelKind::Gravity4),
            "gravity2" => Ok(ModelKind::Gravity2),
            "radiation" => Ok(ModelKind::Radiation),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

/// Fitted or ground-truth model parameters. Exponents not used by `kind`
/// are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub scale_c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
}

impl ModelParams {
    pub fn gravity4(scale_c: f64, alpha: f64, beta: f64, gamma: f64) -> Self {
        ModelParams { kind: ModelKind::Gravity4, scale_c, alpha: Some(alpha), beta: Some(beta), gamma: Some(gamma) }
    }

    pub fn gravity2(scale_c: f64, gamma: f64) -> Self {
        ModelParams { kind: ModelKind::Gravity2, scale_c, alpha: None, beta: None, gamma: Some(gamma) }
    }

    pub fn radiation(scale_c: f64) -> Self {
        ModelParams { kind: ModelKind::Radiation, scale_c, alpha: None, beta: None, gamma: None }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.scale_c.is_finite() && self.scale_c > 0.0) {
            return Err(ModelError::InvalidParams(format!("scale C must be positive, got {}", self.scale_c)));
        }
        let expect = |name: &str, v: Option<f64>, used: bool| -> Result<(), ModelError> {
            match (v, used) {
                (Some(x), true) if x.is_finite() => Ok(()),
                (Some(x), true) => Err(ModelError::InvalidParams(format!("{name} is not finite ({x})"))),
                (None, true) => Err(ModelError::InvalidParams(format!("{} requires {name}", self.kind))),
                (Some(_), false) => Err(ModelError::InvalidParams(format!("{} does not take {name}", self.kind))),
                (None, false) => Ok(()),
            }
        };
        let g4 = self.kind == ModelKind::Gravity4;
        expect("alpha", self.alpha, g4)?;
        expect("beta", self.beta, g4)?;
        expect("gamma", self.gamma, self.kind != ModelKind::Radiation)?;
        Ok(())
    }
}

/// One origin-destination pair prepared for fitting or prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowObservation {
    pub origin: String,
    pub destination: String,
    /// Origin population.
    pub m: f64,
    /// Destination population.
    pub n: f64,
    /// Centroid distance in km.
    pub d: f64,
    /// Intervening population.
    pub s: f64,
    pub observed: f64,
}

impl FlowObservation {
    fn check(&self) -> Result<(), ModelError> {
        if !(self.d.is_finite() && self.d > 0.0) {
            return Err(ModelError::Domain(format!("distance must be positive, got {}", self.d)));
        }
        if !(self.m.is_finite() && self.m > 0.0 && self.n.is_finite() && self.n > 0.0) {
            return Err(ModelError::Domain(format!("populations must be positive, got m={} n={}", self.m, self.n)));
        }
        if !(self.s.is_finite() && self.s >= 0.0) {
            return Err(ModelError::Domain(format!("intervening population must be >= 0, got {}", self.s)));
        }
        Ok(())
    }

    /// `ln(mn / ((m+s)(m+n+s)))`
    fn ln_radiation_kernel(&self) -> f64 {
        self.m.ln() + self.n.ln() - (self.m + self.s).ln() - (self.m + self.n + self.s).ln()
    }
}

/// Predicted flow for one observation.
pub fn predict(params: &ModelParams, obs: &FlowObservation) -> Result<f64, ModelError> {
    params.validate()?;
    obs.check()?;
    let c = params.scale_c;
    Ok(match params.kind {
        ModelKind::Gravity4 => {
            let (a, b, g) = (params.alpha.unwrap_or(0.0), params.beta.unwrap_or(0.0), params.gamma.unwrap_or(0.0));
            c * obs.m.powf(a) * obs.n.powf(b) / obs.d.powf(g)
        }
        ModelKind::Gravity2 => c * obs.m * obs.n / obs.d.powf(params.gamma.unwrap_or(0.0)),
        ModelKind::Radiation => c * obs.m * obs.n / ((obs.m + obs.s) * (obs.m + obs.n + obs.s)),
    })
}

/// Intervening population `s` for every ordered pair, from per-origin
/// distance rankings with prefix sums.
#[derive(Debug, Clone)]
pub struct InterveningPopulation {
    n: usize,
    distances: Vec<f64>,
    s: Vec<u64>,
}

impl InterveningPopulation {
    /// `populations[i]` is the population of `set.areas()[i]`.
    pub fn new(set: &AreaSet, populations: &[u64]) -> Self {
        assert_eq!(set.len(), populations.len(), "one population per area");
        let areas = set.areas();
        let n = areas.len();
        let mut distances = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                distances[i * n + j] = haversine_km(&areas[i].centroid, &areas[j].centroid);
            }
        }
        let mut s = vec![0u64; n * n];
        for i in 0..n {
            let row = &distances[i * n..(i + 1) * n];
            let mut ranked: Vec<usize> = (0..n).filter(|&k| k != i).collect();
            ranked.sort_by(|&a, &b| row[a].total_cmp(&row[b]));
            let mut prefix = Vec::with_capacity(ranked.len() + 1);
            prefix.push(0u64);
            for &k in &ranked {
                prefix.push(prefix.last().unwrap() + populations[k]);
            }
            for j in (0..n).filter(|&j| j != i) {
                let within = ranked.partition_point(|&k| row[k] <= row[j]);
                // destination is within its own radius, so its population is in the prefix
                s[i * n + j] = prefix[within] - populations[j];
            }
        }
        InterveningPopulation { n, distances, s }
    }

    pub fn distance(&self, origin: usize, destination: usize) -> f64 {
        self.distances[origin * self.n + destination]
    }

    pub fn s(&self, origin: usize, destination: usize) -> u64 {
        self.s[origin * self.n + destination]
    }
}

/// Intervening census population for a single pair.
pub fn compute_s(origin: &str, destination: &str, set: &AreaSet) -> Result<u64, ModelError> {
    let i = set.index_of(origin).ok_or_else(|| ModelError::UnknownArea(origin.into()))?;
    let j = set.index_of(destination).ok_or_else(|| ModelError::UnknownArea(destination.into()))?;
    if i == j {
        return Err(ModelError::DegeneratePair(origin.into()));
    }
    let pops: Vec<u64> = set.areas().iter().map(|a| a.census_population).collect();
    Ok(InterveningPopulation::new(set, &pops).s(i, j))
}

/// Which population feeds `m`, `n` and `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopulationSource {
    #[default]
    Census,
    Twitter,
}

impl std::str::FromStr for PopulationSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "census" => Ok(PopulationSource::Census),
            "twitter" => Ok(PopulationSource::Twitter),
            other => Err(format!("unknown population source `{other}` (expected census or twitter)")),
        }
    }
}

pub fn census_populations(set: &AreaSet) -> Vec<u64> {
    set.areas().iter().map(|a| a.census_population).collect()
}

/// Twitter-user counts in registry order; areas absent from `table` get 0.
pub fn twitter_populations(set: &AreaSet, table: &PopulationTable) -> Vec<u64> {
    let by_name = table.twitter_users_by_name();
    set.areas().iter().map(|a| by_name.get(a.name.as_str()).copied().unwrap_or(0)).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationSet {
    /// Every ordered pair of distinct areas with non-zero populations,
    /// including pairs with zero observed flow.
    pub observations: Vec<FlowObservation>,
    pub n_excluded_zero_population: usize,
}

impl ObservationSet {
    pub fn positive(&self) -> Vec<FlowObservation> {
        self.observations.iter().filter(|o| o.observed > 0.0).cloned().collect()
    }
}

/// Turns a flow matrix into model observations over all ordered pairs of
/// distinct areas, in registry order.
pub fn build_observations(flows: &FlowMatrix, set: &AreaSet, populations: &[u64]) -> ObservationSet {
    let table = InterveningPopulation::new(set, populations);
    let areas = set.areas();
    let mut out = ObservationSet::default();
    for (i, a) in areas.iter().enumerate() {
        for (j, b) in areas.iter().enumerate() {
            if i == j {
                continue;
            }
            if populations[i] == 0 || populations[j] == 0 {
                out.n_excluded_zero_population += 1;
                continue;
            }
            out.observations.push(FlowObservation {
                origin: a.name.clone(),
                destination: b.name.clone(),
                m: populations[i] as f64,
                n: populations[j] as f64,
                d: table.distance(i, j),
                s: table.s(i, j) as f64,
                observed: flows.get(&a.name, &b.name) as f64,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub kind: ModelKind,
    pub parameters: ModelParams,
    pub n_used: usize,
    pub n_excluded_zero_flow: usize,
    /// Residual sum of squares of the natural-log fit.
    pub log_rss: f64,
}

/// Log-space least-squares fit of `kind` to the observations with positive
/// observed flow.
pub fn fit(kind: ModelKind, observations: &[FlowObservation]) -> Result<FitReport, ModelError> {
    let used: Vec<&FlowObservation> = observations.iter().filter(|o| o.observed > 0.0).collect();
    let n_excluded_zero_flow = observations.len() - used.len();
    for o in &used {
        o.check()?;
        if !o.observed.is_finite() {
            return Err(ModelError::Domain(format!("observed flow is not finite for {}->{}", o.origin, o.destination)));
        }
    }
    if used.len() < kind.n_params() {
        return Err(ModelError::TooFewObservations { kind, needed: kind.n_params(), got: used.len() });
    }

    let ln_p: Vec<f64> = used.iter().map(|o| o.observed.ln()).collect();
    let ones = vec![1.0; used.len()];
    let neg_ln_d: Vec<f64> = used.iter().map(|o| -o.d.ln()).collect();

    let (parameters, residuals) = match kind {
        ModelKind::Gravity4 => {
            let ln_m: Vec<f64> = used.iter().map(|o| o.m.ln()).collect();
            let ln_n: Vec<f64> = used.iter().map(|o| o.n.ln()).collect();
            let design = [("intercept", &ones), ("ln m", &ln_m), ("ln n", &ln_n), ("-ln d", &neg_ln_d)];
            let sol = ols::solve(&design, &ln_p)?;
            let b = &sol.coefficients;
            (ModelParams::gravity4(b[0].exp(), b[1], b[2], b[3]), sol.residuals)
        }
        ModelKind::Gravity2 => {
            let y: Vec<f64> = used.iter().zip(&ln_p).map(|(o, lp)| lp - o.m.ln() - o.n.ln()).collect();
            let design = [("intercept", &ones), ("-ln d", &neg_ln_d)];
            let sol = ols::solve(&design, &y)?;
            let b = &sol.coefficients;
            (ModelParams::gravity2(b[0].exp(), b[1]), sol.residuals)
        }
        ModelKind::Radiation => {
            let y: Vec<f64> = used.iter().zip(&ln_p).map(|(o, lp)| lp - o.ln_radiation_kernel()).collect();
            let ln_c = y.iter().sum::<f64>() / y.len() as f64;
            let residuals = y.iter().map(|v| v - ln_c).collect();
            (ModelParams::radiation(ln_c.exp()), residuals)
        }
    };
    if !parameters.scale_c.is_finite() || parameters.scale_c <= 0.0 {
        return Err(ModelError::Domain(format!("fitted scale C overflowed ({})", parameters.scale_c)));
    }
    Ok(FitReport {
        kind,
        parameters,
        n_used: used.len(),
        n_excluded_zero_flow,
        log_rss: residuals.iter().map(|r| r * r).sum(),
    })
}

/// Small dense least squares via Householder QR with column equilibration.
pub mod ols {
    use super::ModelError;

    /// Columns whose scaled diagonal of R falls below this are treated as
    /// linearly dependent on the preceding columns.
    pub const RANK_TOLERANCE: f64 = 1e-10;

    #[derive(Debug, Clone, PartialEq)]
    pub struct Solution {
        pub coefficients: Vec<f64>,
        pub residuals: Vec<f64>,
    }

    /// Minimizes `|y - X b|²` for the named columns of `X`.
    pub fn solve(columns: &[(&str, &Vec<f64>)], y: &[f64]) -> Result<Solution, ModelError> {
        let rows = y.len();
        let p = columns.len();
        if rows < p {
            return Err(ModelError::Singular(format!("{rows} rows for {p} unknowns")));
        }
        // column-major copy, each column scaled to unit norm
        let mut a: Vec<Vec<f64>> = Vec::with_capacity(p);
        let mut scale = Vec::with_capacity(p);
        for (name, col) in columns {
            debug_assert_eq!(col.len(), rows);
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                return Err(ModelError::Singular(format!("column `{name}` is identically zero")));
            }
            a.push(col.iter().map(|v| v / norm).collect());
            scale.push(norm);
        }
        let mut qty = y.to_vec();

        for k in 0..p {
            let sigma = a[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if sigma <= RANK_TOLERANCE {
                let (name, _) = columns[k];
                let reason = if k == 0 {
                    format!("column `{name}` is degenerate")
                } else {
                    let prior: Vec<&str> = columns[..k].iter().map(|c| c.0).collect();
                    format!("column `{name}` is collinear with [{}] (e.g. every value identical)", prior.join(", "))
                };
                return Err(ModelError::Singular(reason));
            }
            let alpha = if a[k][k] > 0.0 { -sigma } else { sigma };
            let mut v: Vec<f64> = a[k][k..].to_vec();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|x| x * x).sum();
            if vnorm2 > 0.0 {
                let reflect = |col: &mut [f64]| {
                    let dot: f64 = v.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
                    let f = 2.0 * dot / vnorm2;
                    for (c, vi) in col.iter_mut().zip(&v) {
                        *c -= f * vi;
                    }
                };
                for col in a.iter_mut().skip(k) {
                    reflect(&mut col[k..]);
                }
                reflect(&mut qty[k..]);
            }
        }

        let mut coef = vec![0.0; p];
        for k in (0..p).rev() {
            let mut acc = qty[k];
            for j in k + 1..p {
                acc -= a[j][k] * coef[j];
            }
            coef[k] = acc / a[k][k];
        }
        let coefficients: Vec<f64> = coef.iter().zip(&scale).map(|(c, s)| c / s).collect();
        let residuals = (0..rows)
            .map(|r| y[r] - columns.iter().zip(&coefficients).map(|((_, col), b)| col[r] * b).sum::<f64>())
            .collect();
        Ok(Solution { coefficients, residuals })
    }
}
