//! Event-file parsing, bounding-box filtering and per-user timelines.
//!
//! Two input formats are accepted, both carrying the columns
//! `user_id,timestamp,lat,lon`:
//!
//! * CSV with a mandatory header row in exactly that order;
//! * JSON lines, one object per line with the same keys.
//!
//! Timestamps may be integer epoch seconds or RFC 3339 / ISO-8601 strings
//! (`2013-10-01T00:00:00Z`); both normalize to integer epoch seconds.
//! Malformed lines never abort a stream: they are counted and skipped, and
//! the first few offending line numbers are kept for diagnostics.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{in_bbox, BoundingBox, Coordinate};

pub const CSV_HEADER: [&str; 4] = ["user_id", "timestamp", "lat", "lon"];

/// Number of offending line numbers retained in a [`ParseReport`].
pub const MAX_REPORTED_REJECTS: usize = 10;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("missing or invalid CSV header: expected `user_id,timestamp,lat,lon`, found `{0}`")]
    BadHeader(String),
    #[error("unknown event format `{0}` (expected csv or jsonl)")]
    UnknownFormat(String),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Csv,
    JsonLines,
}

impl std::str::FromStr for EventFormat {
    type Err = IngestError;
    fn from_str(s: &str) -> Result<Self, IngestError> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(EventFormat::Csv),
            "jsonl" | "json-lines" | "ndjson" => Ok(EventFormat::JsonLines),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

impl EventFormat {
    /// Guess the format from a file name; anything not ending in a JSON-lines
    /// extension is treated as CSV.
    pub fn from_path(path: &std::path::Path) -> EventFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") | Some("json") => EventFormat::JsonLines,
            _ => EventFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub user_id: String,
    pub timestamp: i64,
    pub location: Coordinate,
}

impl EventRecord {
    /// Returns `None` when the timestamp is negative.
    pub fn new(user_id: impl Into<String>, timestamp: i64, location: Coordinate) -> Option<Self> {
        (timestamp >= 0).then(|| EventRecord { user_id: user_id.into(), timestamp, location })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseReport {
    pub events: Vec<EventRecord>,
    pub rejected: usize,
    /// 1-based line numbers of the first rejected lines.
    pub rejected_lines: Vec<u64>,
}

impl ParseReport {
    fn reject(&mut self, line: u64) {
        self.rejected += 1;
        if self.rejected_lines.len() < MAX_REPORTED_REJECTS {
            self.rejected_lines.push(line);
        }
    }

    /// One-line summary suitable for diagnostics output.
    pub fn reject_summary(&self) -> Option<String> {
        if self.rejected == 0 {
            return None;
        }
        let lines: Vec<String> = self.rejected_lines.iter().map(|l| l.to_string()).collect();
        Some(format!("rejected {} malformed line(s); first at line(s) {}", self.rejected, lines.join(", ")))
    }
}

pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return Some(secs);
    }
    chrono::DateTime::parse_from_rfc3339(raw).ok().map(|dt| dt.timestamp())
}

fn parse_fields(user: &str, ts: &str, lat: &str, lon: &str) -> Option<EventRecord> {
    if user.is_empty() {
        return None;
    }
    let timestamp = parse_timestamp(ts)?;
    let lat: f64 = lat.trim().parse().ok()?;
    let lon: f64 = lon.trim().parse().ok()?;
    let location = Coordinate::new(lat, lon).ok()?;
    EventRecord::new(user, timestamp, location)
}

pub fn parse_events<R: Read>(source: R, format: EventFormat) -> Result<ParseReport, IngestError> {
    match format {
        EventFormat::Csv => parse_csv(source),
        EventFormat::JsonLines => parse_jsonl(io::BufReader::new(source)),
    }
}

fn parse_csv<R: Read>(source: R) -> Result<ParseReport, IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(source);
    let header = reader.headers()?.clone();
    if header.iter().map(str::trim).ne(CSV_HEADER.iter().copied()) {
        return Err(IngestError::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut report = ParseReport::default();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map(|p| p.line()).unwrap_or(0);
                let parsed = match (record.len(), record.get(0), record.get(1), record.get(2), record.get(3)) {
                    (4, Some(u), Some(t), Some(la), Some(lo)) => parse_fields(u, t, la, lo),
                    _ => None,
                };
                match parsed {
                    Some(ev) => report.events.push(ev),
                    None => report.reject(line),
                }
            }
            Err(err) => {
                if let csv::ErrorKind::Io(_) = err.kind() {
                    return Err(err.into());
                }
                let line = err.position().map(|p| p.line()).unwrap_or(0);
                report.reject(line);
            }
        }
    }
    Ok(report)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum JsonTimestamp {
    Int(i64),
    Text(String),
}

#[derive(Deserialize)]
struct JsonEvent {
    user_id: serde_json::Value,
    timestamp: JsonTimestamp,
    lat: f64,
    lon: f64,
}

fn parse_json_line(line: &str) -> Option<EventRecord> {
    let raw: JsonEvent = serde_json::from_str(line).ok()?;
    let user_id = match raw.user_id {
        serde_json::Value::String(s) => s,
        serde_json::Value::Number(n) => n.to_string(),
        _ => return None,
    };
    let timestamp = match raw.timestamp {
        JsonTimestamp::Int(t) => t,
        JsonTimestamp::Text(s) => parse_timestamp(&s)?,
    };
    if user_id.is_empty() {
        return None;
    }
    EventRecord::new(user_id, timestamp, Coordinate::new(raw.lat, raw.lon).ok()?)
}

fn parse_jsonl<R: BufRead>(source: R) -> Result<ParseReport, IngestError> {
    let mut report = ParseReport::default();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_json_line(&line) {
            Some(ev) => report.events.push(ev),
            None => report.reject(idx as u64 + 1),
        }
    }
    Ok(report)
}

/// Writes events as CSV with the standard header. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_events_csv<W: Write>(events: &[EventRecord], sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(CSV_HEADER)?;
    for ev in events {
        w.write_record([
            ev.user_id.as_str(),
            &ev.timestamp.to_string(),
            &ev.location.lat().to_string(),
            &ev.location.lon().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn filter_bbox(events: &[EventRecord], bbox: &BoundingBox) -> Vec<EventRecord> {
    events.iter().filter(|e| in_bbox(&e.location, bbox)).cloned().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserTimeline {
    pub user_id: String,
    pub events: Vec<EventRecord>,
}

impl UserTimeline {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Groups events by user. Timelines come back ordered by `user_id`; events
/// within a timeline are stably sorted by timestamp, so equal timestamps keep
/// their input order.
pub fn build_timelines(events: Vec<EventRecord>) -> Vec<UserTimeline> {
    let mut by_user: BTreeMap<String, Vec<EventRecord>> = BTreeMap::new();
    for ev in events {
        by_user.entry(ev.user_id.clone()).or_default().push(ev);
    }
    by_user
        .into_iter()
        .map(|(user_id, mut events)| {
            events.sort_by_key(|e| e.timestamp);
            UserTimeline { user_id, events }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(u: &str, t: i64, lat: f64, lon: f64) -> EventRecord {
        EventRecord::new(u, t, Coordinate::new(lat, lon).unwrap()).unwrap()
    }

    /// Days since 1970-01-01 for a proleptic Gregorian date, counted the slow
    /// way so it is independent of chrono.
    fn days_since_epoch(year: i64, month: i64, day: i64) -> i64 {
        let leap = |y: i64| (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
        let mut days = 0;
        for y in 1970..year {
            days += if leap(y) { 366 } else { 365 };
        }
        let month_len = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
        for m in 1..month {
            days += month_len[(m - 1) as usize];
            if m == 2 && leap(year) {
                days += 1;
            }
        }
        days + day - 1
    }

    #[test]
    fn csv_line_maps_fields_directly() {
        let data = "user_id,timestamp,lat,lon\nu1,1380585600,-33.8700,151.2100\n";
        let rep = parse_events(data.as_bytes(), EventFormat::Csv).unwrap();
        assert_eq!(rep.events, vec![ev("u1", 1380585600, -33.87, 151.21)]);
        assert_eq!(rep.rejected, 0);
    }

    #[test]
    fn iso_timestamp_matches_calendar_oracle() {
        let expected = days_since_epoch(2013, 10, 1) * 86_400;
        assert_eq!(expected, 1380585600);
        let line = r#"{"user_id":"u1","timestamp":"2013-10-01T00:00:00Z","lat":-33.87,"lon":151.21}"#;
        let rep = parse_events(line.as_bytes(), EventFormat::JsonLines).unwrap();
        assert_eq!(rep.events, vec![ev("u1", expected, -33.87, 151.21)]);

        let csv = "user_id,timestamp,lat,lon\nu1,2013-10-01T00:00:00Z,-33.87,151.21\n";
        let rep = parse_events(csv.as_bytes(), EventFormat::Csv).unwrap();
        assert_eq!(rep.events[0].timestamp, expected);
    }

    #[test]
    fn iso_with_offset() {
        assert_eq!(
            parse_timestamp("2014-04-30T23:59:59+10:00"),
            Some(days_since_epoch(2014, 4, 30) * 86_400 + 86_399 - 36_000)
        );
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn out_of_range_latitude_is_rejected() {
        let data = "user_id,timestamp,lat,lon\nu1,10,95.0,151.0\nu2,11,-33.0,151.0\n";
        let rep = parse_events(data.as_bytes(), EventFormat::Csv).unwrap();
        assert_eq!(rep.events.len(), 1);
        assert_eq!(rep.rejected, 1);
        assert_eq!(rep.rejected_lines, vec![2]);
    }

    #[test]
    fn malformed_lines_are_counted_not_fatal() {
        let data = "user_id,timestamp,lat,lon\n\
                    u1,10,1.0,2.0\n\
                    u2,abc,1.0,2.0\n\
                    u3,10,1.0\n\
                    ,10,1.0,2.0\n\
                    u4,-5,1.0,2.0\n\
                    u5,12,1.0,2.0,extra\n\
                    u6,13,NaN,2.0\n\
                    u7,14,3.0,4.0\n";
        let rep = parse_events(data.as_bytes(), EventFormat::Csv).unwrap();
        assert_eq!(rep.events.iter().map(|e| e.user_id.as_str()).collect::<Vec<_>>(), ["u1", "u7"]);
        assert_eq!(rep.rejected, 6);
        assert_eq!(rep.rejected_lines, vec![3, 4, 5, 6, 7, 8]);
        assert!(rep.reject_summary().unwrap().contains("6 malformed"));
    }

    #[test]
    fn only_first_ten_reject_lines_kept() {
        let mut data = String::from("user_id,timestamp,lat,lon\n");
        for _ in 0..25 {
            data.push_str("bad,line\n");
        }
        let rep = parse_events(data.as_bytes(), EventFormat::Csv).unwrap();
        assert_eq!(rep.rejected, 25);
        assert_eq!(rep.rejected_lines, (2..12).collect::<Vec<u64>>());
    }

    #[test]
    fn header_is_mandatory() {
        let data = "u1,1380585600,-33.87,151.21\n";
        assert!(matches!(parse_events(data.as_bytes(), EventFormat::Csv), Err(IngestError::BadHeader(_))));
        let reordered = "user_id,lat,lon,timestamp\n";
        assert!(parse_events(reordered.as_bytes(), EventFormat::Csv).is_err());
    }

    #[test]
    fn jsonl_rejects_and_blank_lines() {
        let data = "{\"user_id\":\"a\",\"timestamp\":5,\"lat\":1.0,\"lon\":2.0}\n\
                    \n\
                    {\"user_id\":\"b\",\"timestamp\":5}\n\
                    not json\n\
                    {\"user_id\":7,\"timestamp\":\"6\",\"lat\":1.0,\"lon\":2.0}\n";
        let rep = parse_events(data.as_bytes(), EventFormat::JsonLines).unwrap();
        assert_eq!(rep.events, vec![ev("a", 5, 1.0, 2.0), ev("7", 6, 1.0, 2.0)]);
        assert_eq!(rep.rejected_lines, vec![3, 4]);
    }

    #[test]
    fn filter_keeps_inside_in_order() {
        let au = BoundingBox::AUSTRALIA;
        assert!(filter_bbox(&[], &au).is_empty());
        let inside = vec![ev("a", 1, -33.87, 151.21), ev("b", 2, -37.81, 144.96)];
        assert_eq!(filter_bbox(&inside, &au), inside);
        let mixed = vec![
            ev("a", 1, -33.87, 151.21),
            ev("b", 2, 0.0, 0.0),
            ev("c", 3, -27.47, 153.03),
            ev("d", 4, -8.5, 115.2),
            ev("e", 5, -31.95, 115.86),
        ];
        let kept: Vec<_> = filter_bbox(&mixed, &au).into_iter().map(|e| e.user_id).collect();
        assert_eq!(kept, ["a", "c", "e"]);
    }

    #[test]
    fn timelines_sort_and_partition() {
        let tl = build_timelines(vec![ev("u1", 30, 0.0, 0.0), ev("u1", 10, 0.0, 0.0), ev("u1", 20, 0.0, 0.0)]);
        assert_eq!(tl.len(), 1);
        assert_eq!(tl[0].events.iter().map(|e| e.timestamp).collect::<Vec<_>>(), [10, 20, 30]);

        let tl = build_timelines(vec![ev("u1", 5, 1.0, 0.0), ev("u1", 5, 2.0, 0.0)]);
        assert_eq!(tl[0].events[0].location.lat(), 1.0);
        assert_eq!(tl[0].events[1].location.lat(), 2.0);

        let tl = build_timelines(vec![
            ev("u1", 1, 0.0, 0.0),
            ev("u2", 2, 0.0, 0.0),
            ev("u1", 3, 0.0, 0.0),
            ev("u2", 4, 0.0, 0.0),
            ev("u2", 5, 0.0, 0.0),
        ]);
        assert_eq!(tl.len(), 2);
        assert_eq!(tl.iter().map(|t| t.len()).sum::<usize>(), 5);
    }

    fn event_strategy() -> impl Strategy<Value = EventRecord> {
        ("[a-z0-9_,\" ]{1,8}", 0i64..4_000_000_000, -90.0f64..=90.0, -180.0f64..=180.0)
            .prop_map(|(u, t, la, lo)| ev(&u, t, la, lo))
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(events in proptest::collection::vec(event_strategy(), 0..40)) {
            let mut buf = Vec::new();
            write_events_csv(&events, &mut buf).unwrap();
            let rep = parse_events(buf.as_slice(), EventFormat::Csv).unwrap();
            prop_assert_eq!(rep.rejected, 0);
            prop_assert_eq!(rep.events, events);
        }

        #[test]
        fn timelines_partition_and_ignore_order(
            n in 1usize..60,
            users in 1usize..6,
            shuffle_seed in any::<u64>(),
        ) {
            // distinct timestamps so the grouping is fully order-independent
            let events: Vec<EventRecord> = (0..n)
                .map(|i| ev(&format!("u{}", i % users), (i as i64 * 7919) % 1000 + i as i64 * 1000, 0.0, 0.0))
                .collect();
            let mut shuffled = events.clone();
            let mut state = shuffle_seed;
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state >> 33) as usize % (i + 1));
            }
            let a = build_timelines(events);
            let b = build_timelines(shuffled);
            prop_assert_eq!(a.iter().map(|t| t.len()).sum::<usize>(), n);
            for t in &a {
                prop_assert!(!t.is_empty());
                prop_assert!(t.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
                prop_assert!(t.events.iter().all(|e| e.user_id == t.user_id));
            }
            prop_assert_eq!(a, b);
        }
    }
}
