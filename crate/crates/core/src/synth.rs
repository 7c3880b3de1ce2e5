//! Seeded synthetic worlds with known ground truth.
//!
//! A world is a set of areas plus a population of users. Each user gets a
//! home area drawn in proportion to census population, an event count from a
//! discrete power law, Pareto-distributed waiting times between events, and
//! a Markov walk over areas whose off-diagonal transition weights are the
//! predictions of a ground-truth spatial-interaction model, normalized per
//! origin. Every draw is recorded in [`SynthTruth`].
//!
//! The random source is ChaCha8 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)`. Stream 0 generates the area layout; user `u` draws
//! from its own stream `u + 1`, so output does not depend on how users are
//! scheduled across threads.
//!
//! Event counts are `round(x)` with `x ~ Pareto(k_min - 0.5, a)`, a discrete
//! power law with tail exponent `a` whose continuous tail estimate at
//! `x_min = k_min - 0.5` is close to unbiased for `k_min >= 5`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::areas::{Area, AreaSet};
use crate::geo::{haversine_km, BoundingBox, Coordinate};
use crate::ingest::EventRecord;
use crate::models::{census_populations, predict, FlowObservation, InterveningPopulation, ModelParams};

/// Users start within this window after `time_origin`.
pub const START_WINDOW_SECS: f64 = 7.0 * 86_400.0;
/// Single waiting times are capped at ten years.
pub const MAX_WAIT_SECS: f64 = 10.0 * 365.0 * 86_400.0;
const PLACEMENT_ATTEMPTS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
    #[error("could not place {count} areas {sep} km apart inside the extent")]
    Placement { count: usize, sep: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutKind {
    /// Centroids uniform in the extent.
    #[default]
    Uniform,
    /// Centroids on a jittered ellipse inscribed in the extent, leaving the
    /// interior empty.
    Coastal,
}

impl std::str::FromStr for LayoutKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(LayoutKind::Uniform),
            "coastal" => Ok(LayoutKind::Coastal),
            other => Err(format!("unknown layout `{other}` (expected uniform or coastal)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedLayout {
    pub count: usize,
    pub extent: BoundingBox,
    /// Populations form a geometric ladder from `population_min` to
    /// `population_max`, shuffled over areas.
    pub population_min: u64,
    pub population_max: u64,
    pub min_separation_km: f64,
    pub kind: LayoutKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaLayout {
    Explicit(Vec<Area>),
    Generated(GeneratedLayout),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub layout: AreaLayout,
    pub n_users: usize,
    pub tweets_exponent: f64,
    pub tweets_min: u64,
    pub max_events_per_user: u64,
    pub waiting_exponent: f64,
    /// Seconds.
    pub waiting_min: f64,
    pub movement_model: ModelParams,
    pub stay_probability: f64,
    /// Events are scattered uniformly over a disk of this radius around the
    /// area centroid.
    pub spread_km: f64,
    pub time_origin: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            layout: AreaLayout::Generated(GeneratedLayout {
                count: 20,
                extent: BoundingBox::AUSTRALIA,
                population_min: 1_000,
                population_max: 1_000_000,
                min_separation_km: 150.0,
                kind: LayoutKind::Uniform,
            }),
            n_users: 1_000,
            tweets_exponent: 2.5,
            tweets_min: 1,
            max_events_per_user: 100_000,
            waiting_exponent: 1.8,
            waiting_min: 60.0,
            movement_model: ModelParams::gravity2(1.0, 2.0),
            stay_probability: 0.5,
            spread_km: 5.0,
            // 2013-09-01T00:00:00Z
            time_origin: 1_377_993_600,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::Config(msg));
        if self.n_users == 0 {
            return bad("n_users must be positive".into());
        }
        if !(self.tweets_exponent.is_finite() && self.tweets_exponent > 1.0) {
            return bad(format!("tweets_exponent must be > 1, got {}", self.tweets_exponent));
        }
        if !(self.waiting_exponent.is_finite() && self.waiting_exponent > 1.0) {
            return bad(format!("waiting_exponent must be > 1, got {}", self.waiting_exponent));
        }
        if self.tweets_min == 0 || self.max_events_per_user < self.tweets_min {
            return bad(format!(
                "need 1 <= tweets_min <= max_events_per_user, got {} and {}",
                self.tweets_min, self.max_events_per_user
            ));
        }
        if !(self.waiting_min.is_finite() && self.waiting_min > 0.0) {
            return bad(format!("waiting_min must be positive, got {}", self.waiting_min));
        }
        if !(0.0..=1.0).contains(&self.stay_probability) {
            return bad(format!("stay_probability must be in [0, 1], got {}", self.stay_probability));
        }
        if !(self.spread_km.is_finite() && self.spread_km >= 0.0) {
            return bad(format!("spread_km must be >= 0, got {}", self.spread_km));
        }
        if self.time_origin < 0 {
            return bad("time_origin must be >= 0".into());
        }
        self.movement_model.validate().map_err(|e| SynthError::Config(e.to_string()))?;
        match &self.layout {
            AreaLayout::Explicit(areas) => {
                if areas.is_empty() {
                    return bad("explicit layout has no areas".into());
                }
                AreaSet::new(areas.clone(), 1.0).map_err(|e| SynthError::Config(e.to_string()))?;
            }
            AreaLayout::Generated(g) => {
                if g.count == 0 {
                    return bad("layout count must be positive".into());
                }
                g.extent.validate().map_err(|e| SynthError::Config(e.to_string()))?;
                if g.population_min == 0 || g.population_max < g.population_min {
                    return bad("need 1 <= population_min <= population_max".into());
                }
                if !(g.min_separation_km.is_finite() && g.min_separation_km >= 0.0) {
                    return bad("min_separation_km must be >= 0".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MovementCount {
    pub origin: String,
    pub destination: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaTally {
    pub name: String,
    pub users: u64,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: String,
    pub home: String,
    pub n_events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub areas: Vec<Area>,
    pub users: Vec<UserTruth>,
    /// Realized area-to-area steps between consecutive events, diagonal
    /// included, sorted by (origin, destination).
    pub movements: Vec<MovementCount>,
    pub tallies: Vec<AreaTally>,
}

impl SynthTruth {
    pub fn movement_map(&self) -> BTreeMap<(String, String), u64> {
        self.movements.iter().map(|m| ((m.origin.clone(), m.destination.clone()), m.count)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub events: Vec<EventRecord>,
    pub truth: SynthTruth,
}

/// Per-origin transition probabilities to every other area.
#[derive(Debug, Clone, PartialEq)]
pub struct MovementKernel {
    n: usize,
    probabilities: Vec<f64>,
    cumulative: Vec<f64>,
}

impl MovementKernel {
    pub fn new(areas: &[Area], model: &ModelParams) -> Result<Self, SynthError> {
        let set = AreaSet::new(areas.to_vec(), 1.0).map_err(|e| SynthError::Config(e.to_string()))?;
        let pops = census_populations(&set);
        let table = InterveningPopulation::new(&set, &pops);
        let n = areas.len();
        let mut probabilities = vec![0.0; n * n];
        let mut cumulative = vec![0.0; n * n];
        for i in 0..n {
            let mut weights = vec![0.0; n];
            for j in (0..n).filter(|&j| j != i) {
                let obs = FlowObservation {
                    origin: areas[i].name.clone(),
                    destination: areas[j].name.clone(),
                    m: pops[i] as f64,
                    n: pops[j] as f64,
                    d: table.distance(i, j),
                    s: table.s(i, j) as f64,
                    observed: 0.0,
                };
                weights[j] = predict(model, &obs).map_err(|e| {
                    SynthError::Config(format!("movement weight {}->{}: {e}", areas[i].name, areas[j].name))
                })?;
            }
            let total: f64 = weights.iter().sum();
            if n > 1 && !(total.is_finite() && total > 0.0) {
                return Err(SynthError::Config(format!("movement weights from {} do not normalize", areas[i].name)));
            }
            let mut acc = 0.0;
            for j in 0..n {
                let p = if n > 1 { weights[j] / total } else { 0.0 };
                probabilities[i * n + j] = p;
                acc += p;
                cumulative[i * n + j] = acc;
            }
        }
        Ok(MovementKernel { n, probabilities, cumulative })
    }

    pub fn probability(&self, origin: usize, destination: usize) -> f64 {
        self.probabilities[origin * self.n + destination]
    }

    /// Destination for a move out of `origin` given `u ∈ [0, 1)`.
    fn sample(&self, origin: usize, u: f64) -> usize {
        let row = &self.cumulative[origin * self.n..(origin + 1) * self.n];
        let mut j = row.partition_point(|&c| c <= u);
        if j >= self.n {
            // u beyond the rounded total: take the last reachable destination
            j = (0..self.n).rev().find(|&k| k != origin && self.probability(origin, k) > 0.0).unwrap_or(origin);
        }
        if j == origin {
            // zero-probability slot can only be hit through rounding; step past it
            j = (origin + 1..self.n).find(|&k| self.probability(origin, k) > 0.0).unwrap_or(origin);
        }
        j
    }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>()
}

/// Inverse-CDF draw from a Pareto density `∝ x^-exponent` on `[scale, ∞)`.
fn pareto(rng: &mut ChaCha8Rng, scale: f64, exponent: f64) -> f64 {
    scale * (1.0 - uniform(rng)).powf(-1.0 / (exponent - 1.0))
}

pub fn generate_areas(layout: &AreaLayout, seed: u64) -> Result<Vec<Area>, SynthError> {
    let g = match layout {
        AreaLayout::Explicit(areas) => return Ok(areas.clone()),
        AreaLayout::Generated(g) => g,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let ext = g.extent;
    let lat_c = 0.5 * (ext.lat_min + ext.lat_max);
    let lon_c = 0.5 * (ext.lon_min + ext.lon_max);
    let mut centroids: Vec<Coordinate> = Vec::with_capacity(g.count);
    let mut attempts = 0;
    while centroids.len() < g.count {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS {
            return Err(SynthError::Placement { count: g.count, sep: g.min_separation_km });
        }
        let (lat, lon) = match g.kind {
            LayoutKind::Uniform => (
                ext.lat_min + uniform(&mut rng) * (ext.lat_max - ext.lat_min),
                ext.lon_min + uniform(&mut rng) * (ext.lon_max - ext.lon_min),
            ),
            LayoutKind::Coastal => {
                let theta = 2.0 * PI * uniform(&mut rng);
                let radial = 0.9 + 0.1 * uniform(&mut rng);
                (
                    lat_c + 0.5 * (ext.lat_max - ext.lat_min) * radial * theta.sin(),
                    lon_c + 0.5 * (ext.lon_max - ext.lon_min) * radial * theta.cos(),
                )
            }
        };
        let p = Coordinate::new(lat, lon).map_err(|e| SynthError::Config(e.to_string()))?;
        if centroids.iter().all(|c| haversine_km(c, &p) >= g.min_separation_km.max(f64::MIN_POSITIVE)) {
            centroids.push(p);
        }
    }
    let mut populations: Vec<u64> = (0..g.count)
        .map(|k| {
            if g.count == 1 {
                return g.population_max;
            }
            let ratio = g.population_max as f64 / g.population_min as f64;
            let v = g.population_min as f64 * ratio.powf(k as f64 / (g.count - 1) as f64);
            (v.round() as u64).clamp(g.population_min, g.population_max)
        })
        .collect();
    for i in (1..populations.len()).rev() {
        let j = rng.random_range(0..=i);
        populations.swap(i, j);
    }
    let width = g.count.saturating_sub(1).to_string().len().max(2);
    Ok(centroids
        .into_iter()
        .zip(populations)
        .enumerate()
        .map(|(i, (centroid, census_population))| Area {
            name: format!("area_{i:0width$}"),
            centroid,
            census_population,
        })
        .collect())
}

struct UserDraw {
    home: usize,
    /// (timestamp, area, location)
    events: Vec<(i64, usize, Coordinate)>,
}

fn draw_user(config: &SynthConfig, areas: &[Area], home_cdf: &[f64], kernel: &MovementKernel, user: usize) -> UserDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(user as u64 + 1);

    let u = uniform(&mut rng);
    let home = home_cdf.partition_point(|&c| c <= u).min(areas.len() - 1);

    let x = pareto(&mut rng, config.tweets_min as f64 - 0.5, config.tweets_exponent);
    let n_events = (x.round().min(config.max_events_per_user as f64) as u64).max(config.tweets_min);

    let mut t = config.time_origin + (uniform(&mut rng) * START_WINDOW_SECS).floor() as i64;
    let mut area = home;
    let mut events = Vec::with_capacity(n_events as usize);
    for k in 0..n_events {
        if k > 0 {
            let wait = pareto(&mut rng, config.waiting_min, config.waiting_exponent).min(MAX_WAIT_SECS);
            t += wait.round() as i64;
            if areas.len() > 1 && uniform(&mut rng) >= config.stay_probability {
                area = kernel.sample(area, uniform(&mut rng));
            }
        }
        let bearing = 2.0 * PI * uniform(&mut rng);
        let radius = config.spread_km * uniform(&mut rng).sqrt();
        let loc = areas[area].centroid.destination(bearing, radius);
        events.push((t, area, loc));
    }
    UserDraw { home, events }
}

pub fn generate(config: &SynthConfig) -> Result<SynthWorld, SynthError> {
    config.validate()?;
    let areas = generate_areas(&config.layout, config.seed)?;
    let kernel = MovementKernel::new(&areas, &config.movement_model)?;
    let total_pop: f64 = areas.iter().map(|a| a.census_population as f64).sum();
    let mut acc = 0.0;
    let home_cdf: Vec<f64> = areas
        .iter()
        .map(|a| {
            acc += a.census_population as f64 / total_pop;
            acc
        })
        .collect();

    let draws: Vec<UserDraw> =
        (0..config.n_users).into_par_iter().map(|u| draw_user(config, &areas, &home_cdf, &kernel, u)).collect();

    let n = areas.len();
    let width = config.n_users.saturating_sub(1).to_string().len();
    let mut events = Vec::new();
    let mut users = Vec::with_capacity(draws.len());
    let mut moves = vec![0u64; n * n];
    let mut tally_users = vec![0u64; n];
    let mut tally_events = vec![0u64; n];
    let mut seen = vec![false; n];
    for (u, draw) in draws.iter().enumerate() {
        let user_id = format!("u{u:0width$}");
        seen.iter_mut().for_each(|s| *s = false);
        for (k, &(t, a, loc)) in draw.events.iter().enumerate() {
            if k > 0 {
                moves[draw.events[k - 1].1 * n + a] += 1;
            }
            tally_events[a] += 1;
            if !seen[a] {
                seen[a] = true;
                tally_users[a] += 1;
            }
            events.push(EventRecord { user_id: user_id.clone(), timestamp: t, location: loc });
        }
        users.push(UserTruth { user_id, home: areas[draw.home].name.clone(), n_events: draw.events.len() as u64 });
    }
    events.sort_by_key(|e| e.timestamp);

    let mut movements: Vec<MovementCount> = moves
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &count)| MovementCount {
            origin: areas[k / n].name.clone(),
            destination: areas[k % n].name.clone(),
            count,
        })
        .collect();
    movements.sort_by(|a, b| (&a.origin, &a.destination).cmp(&(&b.origin, &b.destination)));
    let tallies = areas
        .iter()
        .enumerate()
        .map(|(i, a)| AreaTally { name: a.name.clone(), users: tally_users[i], events: tally_events[i] })
        .collect();
    Ok(SynthWorld { events, truth: SynthTruth { areas, users, movements, tallies } })
}

/// Realized per-pair movement counts recorded by the generator.
pub fn expected_flows(truth: &SynthTruth) -> BTreeMap<(String, String), u64> {
    truth.movement_map()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        SynthConfig {
            n_users: 200,
            layout: AreaLayout::Generated(GeneratedLayout {
                count: 6,
                extent: BoundingBox::AUSTRALIA,
                population_min: 1_000,
                population_max: 100_000,
                min_separation_km: 200.0,
                kind: LayoutKind::Uniform,
            }),
            ..SynthConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig::default().validate().is_ok());
        let bad = [
            SynthConfig { tweets_exponent: 1.0, ..SynthConfig::default() },
            SynthConfig { waiting_exponent: 0.5, ..SynthConfig::default() },
            SynthConfig { n_users: 0, ..SynthConfig::default() },
            SynthConfig { stay_probability: 1.5, ..SynthConfig::default() },
            SynthConfig { tweets_min: 0, ..SynthConfig::default() },
            SynthConfig { waiting_min: 0.0, ..SynthConfig::default() },
            SynthConfig { layout: AreaLayout::Explicit(vec![]), ..SynthConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(generate(&cfg), Err(SynthError::Config(_))));
        }
    }

    #[test]
    fn single_area_world() {
        let area =
            Area { name: "only".into(), centroid: Coordinate::new(-33.0, 151.0).unwrap(), census_population: 10 };
        let cfg = SynthConfig {
            n_users: 1,
            layout: AreaLayout::Explicit(vec![area]),
            tweets_min: 5,
            ..SynthConfig::default()
        };
        let world = generate(&cfg).unwrap();
        let n = world.events.len() as u64;
        assert!(n >= 5);
        assert_eq!(world.truth.users[0].home, "only");
        assert_eq!(world.truth.tallies, vec![AreaTally { name: "only".into(), users: 1, events: n }]);
        assert_eq!(world.truth.movement_map(), BTreeMap::from([(("only".into(), "only".into()), n - 1)]));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_config()).unwrap();
        let b = generate(&small_config()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 43, ..small_config() }).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn determinism_across_thread_counts() {
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| generate(&small_config()).unwrap());
        let b = four.install(|| generate(&small_config()).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn full_stay_means_no_moves() {
        let world = generate(&SynthConfig { stay_probability: 1.0, ..small_config() }).unwrap();
        assert!(world.truth.movements.iter().all(|m| m.origin == m.destination));
        assert!(expected_flows(&world.truth).iter().all(|((o, d), _)| o == d));
    }

    #[test]
    fn events_stay_within_spread() {
        let cfg = small_config();
        let world = generate(&cfg).unwrap();
        let centroids: BTreeMap<&str, Coordinate> =
            world.truth.areas.iter().map(|a| (a.name.as_str(), a.centroid)).collect();
        // with stay probability 1 every event belongs to the home area
        let still = generate(&SynthConfig { stay_probability: 1.0, ..cfg.clone() }).unwrap();
        let homes: BTreeMap<&str, &str> =
            still.truth.users.iter().map(|u| (u.user_id.as_str(), u.home.as_str())).collect();
        for e in &still.events {
            let c = centroids[homes[e.user_id.as_str()]];
            assert!(haversine_km(&c, &e.location) <= cfg.spread_km + 1e-9);
        }
        assert!(world.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    }

    #[test]
    fn generated_layout_properties() {
        let cfg = small_config();
        let areas = generate_areas(&cfg.layout, 9).unwrap();
        assert_eq!(areas.len(), 6);
        let mut pops: Vec<u64> = areas.iter().map(|a| a.census_population).collect();
        pops.sort();
        assert_eq!((pops[0], pops[5]), (1_000, 100_000));
        for (i, a) in areas.iter().enumerate() {
            assert!(BoundingBox::AUSTRALIA.contains(&a.centroid));
            for b in &areas[i + 1..] {
                assert!(haversine_km(&a.centroid, &b.centroid) >= 200.0);
            }
        }
        let impossible = AreaLayout::Generated(GeneratedLayout {
            count: 50,
            extent: BoundingBox::new(0.0, 0.1, 0.0, 0.1).unwrap(),
            population_min: 1,
            population_max: 2,
            min_separation_km: 100.0,
            kind: LayoutKind::Coastal,
        });
        assert!(matches!(generate_areas(&impossible, 1), Err(SynthError::Placement { .. })));
    }

    #[test]
    fn kernel_rows_normalize() {
        let areas = generate_areas(&small_config().layout, 5).unwrap();
        for model in
            [ModelParams::gravity2(1.0, 2.0), ModelParams::radiation(1.0), ModelParams::gravity4(3.0, 0.5, 1.5, 1.0)]
        {
            let k = MovementKernel::new(&areas, &model).unwrap();
            for i in 0..areas.len() {
                let row: f64 = (0..areas.len()).map(|j| k.probability(i, j)).sum();
                assert!((row - 1.0).abs() < 1e-12);
                assert_eq!(k.probability(i, i), 0.0);
                for u in [0.0, 0.3, 0.999_999_999_999] {
                    assert_ne!(k.sample(i, u), i);
                }
            }
        }
    }

    #[test]
    fn truth_counts_are_consistent() {
        let world = generate(&small_config()).unwrap();
        let t = &world.truth;
        let n_events: u64 = t.users.iter().map(|u| u.n_events).sum();
        assert_eq!(n_events, world.events.len() as u64);
        assert_eq!(t.tallies.iter().map(|a| a.events).sum::<u64>(), n_events);
        let moves: u64 = t.movements.iter().map(|m| m.count).sum();
        assert_eq!(moves, n_events - t.users.len() as u64);
    }
}
