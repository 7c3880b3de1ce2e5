//! Area registry and radius-based extraction of the per-area "Twitter
//! population" (distinct users and events whose coordinates fall inside an
//! area's search disk).

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{haversine_km, Coordinate};
use crate::ingest::UserTimeline;

pub const AREAS_HEADER: [&str; 4] = ["name", "lat", "lon", "population"];
pub const POPULATION_HEADER: [&str; 4] = ["name", "census_population", "twitter_users", "twitter_events"];

#[derive(Debug, Error)]
pub enum AreaError {
    #[error("row {row}: {reason}")]
    Row { row: u64, reason: String },
    #[error("bad header: expected `{expected}`, found `{found}`")]
    BadHeader { expected: String, found: String },
    #[error("search radius must be finite and positive, got {0}")]
    BadRadius(f64),
    #[error("duplicate area name `{0}`")]
    DuplicateName(String),
    #[error("area `{0}` has non-positive population")]
    NonPositivePopulation(String),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// Analysis scales with their conventional search radii.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalePreset {
    National,
    State,
    Metro,
}

impl ScalePreset {
    pub fn radius_km(self) -> f64 {
        match self {
            ScalePreset::National => 50.0,
            ScalePreset::State => 25.0,
            ScalePreset::Metro => 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalePreset::National => "national",
            ScalePreset::State => "state",
            ScalePreset::Metro => "metro",
        }
    }
}

impl std::str::FromStr for ScalePreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "national" => Ok(ScalePreset::National),
            "state" => Ok(ScalePreset::State),
            "metro" | "metropolitan" => Ok(ScalePreset::Metro),
            other => Err(format!("unknown scale `{other}` (expected national, state or metro)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub name: String,
    pub centroid: Coordinate,
    pub census_population: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaSet {
    areas: Vec<Area>,
    search_radius_km: f64,
    index: HashMap<String, usize>,
}

impl AreaSet {
    pub fn new(areas: Vec<Area>, search_radius_km: f64) -> Result<Self, AreaError> {
        if !(search_radius_km.is_finite() && search_radius_km > 0.0) {
            return Err(AreaError::BadRadius(search_radius_km));
        }
        let mut index = HashMap::with_capacity(areas.len());
        for (i, a) in areas.iter().enumerate() {
            if a.census_population == 0 {
                return Err(AreaError::NonPositivePopulation(a.name.clone()));
            }
            if index.insert(a.name.clone(), i).is_some() {
                return Err(AreaError::DuplicateName(a.name.clone()));
            }
        }
        Ok(AreaSet { areas, search_radius_km, index })
    }

    pub fn areas(&self) -> &[Area] {
        &self.areas
    }

    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    pub fn search_radius_km(&self) -> f64 {
        self.search_radius_km
    }

    pub fn with_radius(&self, search_radius_km: f64) -> Result<Self, AreaError> {
        AreaSet::new(self.areas.clone(), search_radius_km)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Area> {
        self.index_of(name).map(|i| &self.areas[i])
    }

    /// Index of the nearest centroid within the search radius; ties go to the
    /// earlier area in registry order.
    pub fn assign_index(&self, p: &Coordinate) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, a) in self.areas.iter().enumerate() {
            let d = haversine_km(p, &a.centroid);
            if d <= self.search_radius_km && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), AreaError> {
        write_areas_csv(&self.areas, sink)
    }
}

/// Writes `name,lat,lon,population` rows readable by [`load_areas`].
pub fn write_areas_csv<W: Write>(areas: &[Area], sink: W) -> Result<(), AreaError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(AREAS_HEADER)?;
    for a in areas {
        w.write_record([
            a.name.clone(),
            a.centroid.lat().to_string(),
            a.centroid.lon().to_string(),
            a.census_population.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn assign_area<'a>(p: &Coordinate, set: &'a AreaSet) -> Option<&'a str> {
    set.assign_index(p).map(|i| set.areas[i].name.as_str())
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), AreaError> {
    if found.iter().map(str::trim).ne(expected.iter().copied()) {
        return Err(AreaError::BadHeader {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

/// Loads `name,lat,lon,population` rows. Row numbers in errors are 1-based
/// file line numbers (the header is line 1).
pub fn load_areas<R: Read>(source: R, search_radius_km: f64) -> Result<AreaSet, AreaError> {
    if !(search_radius_km.is_finite() && search_radius_km > 0.0) {
        return Err(AreaError::BadRadius(search_radius_km));
    }
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    check_header(reader.headers()?, &AREAS_HEADER)?;
    let mut areas: Vec<Area> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for result in reader.records() {
        let rec = result?;
        let row = rec.position().map(|p| p.line()).unwrap_or(0);
        let err = |reason: String| AreaError::Row { row, reason };
        if rec.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", rec.len())));
        }
        let name = rec[0].to_string();
        if name.is_empty() {
            return Err(err("empty area name".into()));
        }
        let lat: f64 = rec[1].trim().parse().map_err(|_| err(format!("bad latitude `{}`", &rec[1])))?;
        let lon: f64 = rec[2].trim().parse().map_err(|_| err(format!("bad longitude `{}`", &rec[2])))?;
        let centroid = Coordinate::new(lat, lon).map_err(|e| err(e.to_string()))?;
        let population: i128 = rec[3].trim().parse().map_err(|_| err(format!("bad population `{}`", &rec[3])))?;
        if population <= 0 {
            return Err(err(format!("population must be positive, got {population}")));
        }
        let census_population = u64::try_from(population).map_err(|_| err("population too large".into()))?;
        if !seen.insert(name.clone()) {
            return Err(err(format!("duplicate area name `{name}`")));
        }
        areas.push(Area { name, centroid, census_population });
    }
    AreaSet::new(areas, search_radius_km)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationRow {
    pub name: String,
    pub census_population: u64,
    pub twitter_users: u64,
    pub twitter_events: u64,
}

/// One row per area, in registry order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationTable {
    pub rows: Vec<PopulationRow>,
}

impl PopulationTable {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), AreaError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(POPULATION_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                r.census_population.to_string(),
                r.twitter_users.to_string(),
                r.twitter_events.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn load_csv<R: Read>(source: R) -> Result<Self, AreaError> {
        let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
        check_header(reader.headers()?, &POPULATION_HEADER)?;
        let mut rows = Vec::new();
        for result in reader.records() {
            let rec = result?;
            let row = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != 4 {
                return Err(AreaError::Row { row, reason: format!("expected 4 fields, found {}", rec.len()) });
            }
            let num = |i: usize| -> Result<u64, AreaError> {
                rec[i]
                    .trim()
                    .parse()
                    .map_err(|_| AreaError::Row { row, reason: format!("bad {} `{}`", POPULATION_HEADER[i], &rec[i]) })
            };
            rows.push(PopulationRow {
                name: rec[0].to_string(),
                census_population: num(1)?,
                twitter_users: num(2)?,
                twitter_events: num(3)?,
            });
        }
        Ok(PopulationTable { rows })
    }

    pub fn twitter_users_by_name(&self) -> HashMap<&str, u64> {
        self.rows.iter().map(|r| (r.name.as_str(), r.twitter_users)).collect()
    }
}

/// Per-event area index for every timeline, preserving timeline and event
/// order.
pub fn assign_timelines(timelines: &[UserTimeline], set: &AreaSet) -> Vec<Vec<Option<usize>>> {
    timelines.par_iter().map(|tl| tl.events.iter().map(|e| set.assign_index(&e.location)).collect()).collect()
}

pub fn extract_population(timelines: &[UserTimeline], set: &AreaSet) -> PopulationTable {
    population_from_assignments(&assign_timelines(timelines, set), set)
}

pub(crate) fn population_from_assignments(assigned: &[Vec<Option<usize>>], set: &AreaSet) -> PopulationTable {
    let mut users = vec![0u64; set.len()];
    let mut events = vec![0u64; set.len()];
    let mut visited = vec![false; set.len()];
    for seq in assigned {
        visited.iter_mut().for_each(|v| *v = false);
        for idx in seq.iter().flatten() {
            events[*idx] += 1;
            if !visited[*idx] {
                visited[*idx] = true;
                users[*idx] += 1;
            }
        }
    }
    PopulationTable {
        rows: set
            .areas
            .iter()
            .enumerate()
            .map(|(i, a)| PopulationRow {
                name: a.name.clone(),
                census_population: a.census_population,
                twitter_users: users[i],
                twitter_events: events[i],
            })
            .collect(),
    }
}
