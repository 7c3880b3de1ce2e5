//! Per-user activity statistics: event volume, waiting times, distinct
//! locations, logarithmic binning and a continuous power-law tail estimate.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::UserTimeline;

/// Volume thresholds reported in [`ActivitySummary::users_exceeding`].
pub const VOLUME_THRESHOLDS: [u64; 4] = [50, 100, 500, 1000];

pub const DEFAULT_LOCATION_PRECISION: u32 = 4;

/// Four bins per decade.
pub fn default_bin_ratio() -> f64 {
    10f64.powf(0.25)
}

pub const MIN_TAIL_SAMPLES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActivityError {
    #[error("no timelines to summarize")]
    EmptyInput,
    #[error("logarithmic binning requires x > 0, got {0}")]
    NonPositiveX(f64),
    #[error("bin ratio must be finite and > 1, got {0}")]
    BadBinRatio(f64),
    #[error("tail estimate needs at least {needed} samples >= x_min, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate tail sample: every qualifying sample equals x_min")]
    Degenerate,
    #[error("x_min must be finite and positive, got {0}")]
    BadXmin(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivitySummary {
    pub n_events: u64,
    pub n_users: u64,
    pub avg_events_per_user: f64,
    /// Pooled mean over every consecutive-event gap; `0` when no user has
    /// two events.
    pub avg_waiting_time_hours: f64,
    pub avg_locations_per_user: f64,
    pub location_precision: u32,
    /// Users with strictly more events than each threshold.
    pub users_exceeding: BTreeMap<u64, u64>,
}

/// `total / n_users` as used for every per-user average in [`ActivitySummary`].
pub fn mean_per_user(total: u64, n_users: u64) -> f64 {
    total as f64 / n_users as f64
}

pub fn summarize(timelines: &[UserTimeline], location_precision: u32) -> Result<ActivitySummary, ActivityError> {
    if timelines.is_empty() {
        return Err(ActivityError::EmptyInput);
    }
    let scale = 10f64.powi(location_precision as i32);
    let mut n_events: u64 = 0;
    let mut wait_sum: i128 = 0;
    let mut wait_count: u64 = 0;
    let mut location_sum: u64 = 0;
    let mut users_exceeding: BTreeMap<u64, u64> = VOLUME_THRESHOLDS.iter().map(|&t| (t, 0)).collect();

    for tl in timelines {
        let len = tl.events.len() as u64;
        n_events += len;
        for w in tl.events.windows(2) {
            wait_sum += (w[1].timestamp - w[0].timestamp) as i128;
            wait_count += 1;
        }
        let distinct: HashSet<(i64, i64)> = tl
            .events
            .iter()
            .map(|e| ((e.location.lat() * scale).round() as i64, (e.location.lon() * scale).round() as i64))
            .collect();
        location_sum += distinct.len() as u64;
        for (&threshold, count) in users_exceeding.iter_mut() {
            if len > threshold {
                *count += 1;
            }
        }
    }

    let n_users = timelines.len() as u64;
    let avg_waiting_time_hours = if wait_count == 0 { 0.0 } else { wait_sum as f64 / wait_count as f64 / 3600.0 };
    Ok(ActivitySummary {
        n_events,
        n_users,
        avg_events_per_user: mean_per_user(n_events, n_users),
        avg_waiting_time_hours,
        avg_locations_per_user: mean_per_user(location_sum, n_users),
        location_precision,
        users_exceeding,
    })
}

/// Number of users having exactly `k` events, for every observed `k`.
pub fn events_per_user_distribution(timelines: &[UserTimeline]) -> BTreeMap<u64, u64> {
    let mut freq = BTreeMap::new();
    for tl in timelines {
        *freq.entry(tl.events.len() as u64).or_insert(0) += 1;
    }
    freq
}

/// Successive timestamp differences within each user, concatenated in
/// timeline order.
pub fn waiting_time_distribution(timelines: &[UserTimeline]) -> Vec<i64> {
    timelines.iter().flat_map(|tl| tl.events.windows(2).map(|w| w[1].timestamp - w[0].timestamp)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    /// Geometric mean of the member x values.
    pub x: f64,
    pub y_mean: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedDistribution {
    pub bins: Vec<Bin>,
    pub bin_ratio: f64,
}

impl BinnedDistribution {
    pub fn write_csv<W: std::io::Write>(&self, sink: W, header: [&str; 3]) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(header)?;
        for b in &self.bins {
            w.write_record([b.x.to_string(), b.y_mean.to_string(), b.count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Geometric binning of `(x, y)` points on the grid `bin_ratio^k`: bin `k`
/// covers `[x0 * r^k, x0 * r^(k+1))`, where `x0` is the largest grid edge not
/// above the smallest x. The last bin is also closed on the right. Empty bins
/// are omitted.
pub fn log_bin(points: &[(f64, f64)], bin_ratio: f64) -> Result<BinnedDistribution, ActivityError> {
    if !(bin_ratio.is_finite() && bin_ratio > 1.0) {
        return Err(ActivityError::BadBinRatio(bin_ratio));
    }
    let x_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let mut origin = bin_ratio.powf((x_min.ln() / bin_ratio.ln()).floor());
    if origin > x_min {
        origin /= bin_ratio;
    }
    log_bin_from(points, bin_ratio, origin)
}

/// As [`log_bin`] with an explicit first edge `origin <= min x`.
pub fn log_bin_from(points: &[(f64, f64)], bin_ratio: f64, origin: f64) -> Result<BinnedDistribution, ActivityError> {
    if !(bin_ratio.is_finite() && bin_ratio > 1.0) {
        return Err(ActivityError::BadBinRatio(bin_ratio));
    }
    if let Some(&(x, _)) = points.iter().find(|(x, _)| !(x.is_finite() && *x > 0.0)) {
        return Err(ActivityError::NonPositiveX(x));
    }
    if points.is_empty() {
        return Ok(BinnedDistribution { bins: Vec::new(), bin_ratio });
    }
    let x_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if !(origin.is_finite() && origin > 0.0 && origin <= x_min) {
        return Err(ActivityError::BadXmin(origin));
    }
    let edge = |k: i64| origin * bin_ratio.powi(k as i32);
    let index_of = |x: f64| -> i64 {
        let mut k = ((x / origin).ln() / bin_ratio.ln()).floor().max(0.0) as i64;
        while k > 0 && edge(k) > x {
            k -= 1;
        }
        while edge(k + 1) <= x {
            k += 1;
        }
        k
    };
    let mut last = index_of(x_max);
    if last > 0 && edge(last) == x_max && index_of(x_min) < last {
        last -= 1;
    }

    // (sum ln x, sum y, count); integer keys give a permutation-independent
    // grouping, and sums run over points sorted by (x, y) for reproducibility.
    let mut sorted: Vec<(f64, f64)> = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut acc: BTreeMap<i64, (f64, f64, u64)> = BTreeMap::new();
    for &(x, y) in &sorted {
        let k = index_of(x).min(last);
        let e = acc.entry(k).or_insert((0.0, 0.0, 0));
        e.0 += x.ln();
        e.1 += y;
        e.2 += 1;
    }
    let bins = acc
        .into_values()
        .map(|(ln_sum, y_sum, n)| Bin { x: (ln_sum / n as f64).exp(), y_mean: y_sum / n as f64, count: n })
        .collect();
    Ok(BinnedDistribution { bins, bin_ratio })
}

/// Continuous maximum-likelihood (Hill) estimate of a power-law density
/// exponent over the samples `>= x_min`: `1 + n / Σ ln(x / x_min)`.
pub fn estimate_tail_exponent(samples: &[f64], x_min: f64) -> Result<f64, ActivityError> {
    if !(x_min.is_finite() && x_min > 0.0) {
        return Err(ActivityError::BadXmin(x_min));
    }
    let mut n = 0usize;
    let mut log_sum = 0.0;
    for &x in samples.iter().filter(|&&x| x >= x_min) {
        n += 1;
        log_sum += (x / x_min).ln();
    }
    if n < MIN_TAIL_SAMPLES {
        return Err(ActivityError::InsufficientData { needed: MIN_TAIL_SAMPLES, got: n });
    }
    if log_sum <= 0.0 {
        return Err(ActivityError::Degenerate);
    }
    Ok(1.0 + n as f64 / log_sum)
}
