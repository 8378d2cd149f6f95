use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, Utc};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PointObservation {
    pub timestamp: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    pub variable: String,
    pub value: f64,
}

const HEADER: [&str; 5] = ["timestamp", "lat", "lon", "variable", "value"];

/// Parses `timestamp,lat,lon,variable,value` CSV with `#` comment lines.
///
/// Timestamps are RFC 3339 in UTC (`2018-08-15T00:00:00Z`). Variables for
/// which `known` returns false are rejected. Errors carry the 1-based line.
pub fn parse_observations(
    input: impl Read,
    known: impl Fn(&str) -> bool,
) -> Result<Vec<PointObservation>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(input);
    let header_err = |message: String| Error::Parse { line: 1, message };
    let headers = reader
        .headers()
        .map_err(|e| header_err(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(header_err(format!(
            "expected header `{}`, got `{}`",
            HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let fail = |message: String| Error::Parse { line, message };
        let number = |idx: usize, what: &str| -> Result<f64> {
            let raw = &record[idx];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| fail(format!("{what} `{raw}` is not a finite number")))
        };
        let timestamp = DateTime::parse_from_rfc3339(&record[0])
            .map_err(|e| fail(format!("timestamp `{}`: {e}", &record[0])))?;
        if timestamp.offset().local_minus_utc() != 0 {
            return Err(fail(format!("timestamp `{}` is not UTC", &record[0])));
        }
        let lat = number(1, "lat")?;
        let lon = number(2, "lon")?;
        let value = number(4, "value")?;
        let variable = record[3].to_string();
        if !known(&variable) {
            return Err(fail(format!("unknown variable `{variable}`")));
        }
        out.push(PointObservation {
            timestamp: timestamp.with_timezone(&Utc),
            lat,
            lon,
            variable,
            value,
        });
    }
    Ok(out)
}

pub fn read_observations(
    path: impl AsRef<Path>,
    known: impl Fn(&str) -> bool,
) -> Result<Vec<PointObservation>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_observations(std::io::BufReader::new(file), known)
}

/// Located value of one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    pub lat: f64,
    pub lon: f64,
    pub value: f64,
}

/// Observations indexed by variable, then timestamp. Immutable after build.
#[derive(Debug, Clone, Default)]
pub struct ObservationStore {
    by_variable: BTreeMap<String, BTreeMap<DateTime<Utc>, Vec<Reading>>>,
}

impl ObservationStore {
    pub fn new(observations: impl IntoIterator<Item = PointObservation>) -> Self {
        let mut by_variable: BTreeMap<String, BTreeMap<DateTime<Utc>, Vec<Reading>>> =
            BTreeMap::new();
        for o in observations {
            by_variable
                .entry(o.variable)
                .or_default()
                .entry(o.timestamp)
                .or_default()
                .push(Reading {
                    lat: o.lat,
                    lon: o.lon,
                    value: o.value,
                });
        }
        ObservationStore { by_variable }
    }

    pub fn at(&self, variable: &str, t: DateTime<Utc>) -> &[Reading] {
        self.by_variable
            .get(variable)
            .and_then(|m| m.get(&t))
            .map_or(&[], Vec::as_slice)
    }

    /// Timestamps of `variable` inside `[from, to]`, most recent first.
    pub fn times_between(&self, variable: &str, from: DateTime<Utc>, to: DateTime<Utc>) -> Vec<DateTime<Utc>> {
        self.by_variable
            .get(variable)
            .map(|m| m.range(from..=to).rev().map(|(t, _)| *t).collect())
            .unwrap_or_default()
    }

    /// Every timestamp at which `variable` was observed, ascending.
    pub fn times(&self, variable: &str) -> Vec<DateTime<Utc>> {
        self.by_variable
            .get(variable)
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }
}
