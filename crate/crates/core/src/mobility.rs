//! Origin-destination flow extraction from consecutive events of each user.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::areas::{assign_timelines, AreaSet};
use crate::ingest::UserTimeline;

pub const FLOWS_HEADER: [&str; 3] = ["origin", "destination", "count"];

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("row {row}: {reason}")]
    Row { row: u64, reason: String },
    #[error("bad header: expected `origin,destination,count`, found `{0}`")]
    BadHeader(String),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

/// How events that fall outside every area are handled when pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Raw consecutive events; a pair with an unresolved endpoint is counted
    /// as unresolved.
    #[default]
    Strict,
    /// Unresolved events are dropped from the timeline before pairing.
    Resolved,
}

impl std::str::FromStr for PairMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(PairMode::Strict),
            "resolved" => Ok(PairMode::Resolved),
            other => Err(format!("unknown pair mode `{other}` (expected strict or resolved)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FlowMatrix {
    /// Directed counts keyed by `(origin, destination)`, including diagonal
    /// `(A, A)` entries.
    pub counts: BTreeMap<(String, String), u64>,
    pub n_pairs_total: u64,
    /// Pairs that did not become a flow: an unresolved endpoint, or a gap
    /// longer than `max_gap`. Always `n_pairs_total - Σ counts`.
    pub n_pairs_unresolved: u64,
    /// The subset of `n_pairs_unresolved` rejected only because of `max_gap`.
    pub n_pairs_over_gap: u64,
}

impl FlowMatrix {
    pub fn total_count(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn get(&self, origin: &str, destination: &str) -> u64 {
        self.counts.get(&(origin.to_string(), destination.to_string())).copied().unwrap_or(0)
    }

    pub fn diagonal(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().filter(|((o, d), _)| o == d).map(|((o, _), c)| (o.as_str(), *c))
    }

    pub fn is_diagonal_only(&self) -> bool {
        self.counts.keys().all(|(o, d)| o == d)
    }

    /// Accumulates another matrix into this one.
    pub fn merge(&mut self, other: &FlowMatrix) {
        for (k, c) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += c;
        }
        self.n_pairs_total += other.n_pairs_total;
        self.n_pairs_unresolved += other.n_pairs_unresolved;
        self.n_pairs_over_gap += other.n_pairs_over_gap;
    }

    /// Rows sorted by (origin, destination).
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), FlowError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(FLOWS_HEADER)?;
        for ((o, d), c) in &self.counts {
            w.write_record([o.as_str(), d.as_str(), &c.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Removes self-loops. The dropped pairs are added to `n_pairs_unresolved`
/// so `Σ counts + n_pairs_unresolved = n_pairs_total` still holds.
pub fn offdiagonal(flows: &FlowMatrix) -> FlowMatrix {
    let counts: BTreeMap<(String, String), u64> =
        flows.counts.iter().filter(|((o, d), _)| o != d).map(|(k, v)| (k.clone(), *v)).collect();
    let removed: u64 = flows.counts.iter().filter(|((o, d), _)| o == d).map(|(_, v)| v).sum();
    FlowMatrix {
        counts,
        n_pairs_total: flows.n_pairs_total,
        n_pairs_unresolved: flows.n_pairs_unresolved + removed,
        n_pairs_over_gap: flows.n_pairs_over_gap,
    }
}

/// Counts directed transitions between areas. `max_gap` (seconds) drops
/// pairs whose time difference exceeds it; `None` means unlimited.
pub fn extract_flows(timelines: &[UserTimeline], set: &AreaSet, mode: PairMode, max_gap: Option<i64>) -> FlowMatrix {
    let assigned = assign_timelines(timelines, set);
    flows_from_assignments(timelines, &assigned, set, mode, max_gap)
}

pub(crate) fn flows_from_assignments(
    timelines: &[UserTimeline],
    assigned: &[Vec<Option<usize>>],
    set: &AreaSet,
    mode: PairMode,
    max_gap: Option<i64>,
) -> FlowMatrix {
    let n = set.len();
    let mut dense = vec![0u64; n * n];
    let mut total = 0u64;
    let mut unresolved = 0u64;
    let mut over_gap = 0u64;

    for (tl, areas) in timelines.iter().zip(assigned) {
        let seq: Vec<(i64, Option<usize>)> = match mode {
            PairMode::Strict => tl.events.iter().zip(areas).map(|(e, a)| (e.timestamp, *a)).collect(),
            PairMode::Resolved => {
                tl.events.iter().zip(areas).filter(|(_, a)| a.is_some()).map(|(e, a)| (e.timestamp, *a)).collect()
            }
        };
        for w in seq.windows(2) {
            total += 1;
            match (w[0].1, w[1].1) {
                (Some(a), Some(b)) => {
                    if max_gap.is_some_and(|g| w[1].0 - w[0].0 > g) {
                        unresolved += 1;
                        over_gap += 1;
                    } else {
                        dense[a * n + b] += 1;
                    }
                }
                _ => unresolved += 1,
            }
        }
    }

    let names: Vec<&str> = set.areas().iter().map(|a| a.name.as_str()).collect();
    let counts = dense
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| ((names[k / n].to_string(), names[k % n].to_string()), c))
        .collect();
    FlowMatrix { counts, n_pairs_total: total, n_pairs_unresolved: unresolved, n_pairs_over_gap: over_gap }
}

/// Loads `origin,destination,count` rows, rejecting names absent from `set`.
/// Pair totals are set to the sum of loaded counts.
pub fn load_flows<R: Read>(source: R, set: &AreaSet) -> Result<FlowMatrix, FlowError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let header = reader.headers()?.clone();
    if header.iter().map(str::trim).ne(FLOWS_HEADER.iter().copied()) {
        return Err(FlowError::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut counts = BTreeMap::new();
    for result in reader.records() {
        let rec = result?;
        let row = rec.position().map(|p| p.line()).unwrap_or(0);
        let err = |reason: String| FlowError::Row { row, reason };
        if rec.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", rec.len())));
        }
        for name in [&rec[0], &rec[1]] {
            if set.index_of(name).is_none() {
                return Err(err(format!("unknown area `{name}`")));
            }
        }
        let count: i128 = rec[2].trim().parse().map_err(|_| err(format!("bad count `{}`", &rec[2])))?;
        if count < 0 {
            return Err(err(format!("negative count {count}")));
        }
        let count = u64::try_from(count).map_err(|_| err("count too large".into()))?;
        if counts.insert((rec[0].to_string(), rec[1].to_string()), count).is_some() {
            return Err(err(format!("duplicate pair ({}, {})", &rec[0], &rec[1])));
        }
    }
    let total = counts.values().sum();
    Ok(FlowMatrix { counts, n_pairs_total: total, n_pairs_unresolved: 0, n_pairs_over_gap: 0 })
}
