//! Raw charging CSV ingestion and cleaning.
//!
//! A station's export is a table of 15-minute intervals carrying the average,
//! peak and last measured kWh. Cleaning is three steps: [`parse_csv`] sorts
//! and validates the rows, [`interpolate_missing`] fills grid slots that have
//! no reading, and [`filter_anomalies`] replaces readings outside realistic
//! bounds. Every record carries a [`Provenance`] flag so downstream consumers
//! can tell measured values from repaired ones.

use std::io::{Read, Write};

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed sampling period of the raw signal.
pub const SAMPLE_PERIOD_MINUTES: i64 = 15;

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
];

pub fn sample_period() -> Duration {
    Duration::minutes(SAMPLE_PERIOD_MINUTES)
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
}

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M").to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Measured,
    /// At least one field had no reading; only present before interpolation.
    Missing,
    Interpolated,
    Clipped,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Measured => "measured",
            Provenance::Missing => "missing",
            Provenance::Interpolated => "interpolated",
            Provenance::Clipped => "clipped",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "measured" | "" => Some(Provenance::Measured),
            "missing" => Some(Provenance::Missing),
            "interpolated" => Some(Provenance::Interpolated),
            "clipped" => Some(Provenance::Clipped),
            _ => None,
        }
    }
}

/// One 15-minute interval. Missing readings are stored as NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub timestamp: NaiveDateTime,
    pub avg_kwh: f64,
    pub peak_kwh: f64,
    pub last_kwh: f64,
}

impl RawRecord {
    pub fn new(timestamp: NaiveDateTime, avg_kwh: f64, peak_kwh: f64, last_kwh: f64) -> Self {
        Self {
            timestamp,
            avg_kwh,
            peak_kwh,
            last_kwh,
        }
    }

    fn field(&self, f: Field) -> f64 {
        match f {
            Field::Avg => self.avg_kwh,
            Field::Peak => self.peak_kwh,
            Field::Last => self.last_kwh,
        }
    }

    fn field_mut(&mut self, f: Field) -> &mut f64 {
        match f {
            Field::Avg => &mut self.avg_kwh,
            Field::Peak => &mut self.peak_kwh,
            Field::Last => &mut self.last_kwh,
        }
    }

    fn is_complete(&self) -> bool {
        Field::ALL.iter().all(|&f| self.field(f).is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Avg,
    Peak,
    Last,
}

impl Field {
    const ALL: [Field; 3] = [Field::Avg, Field::Peak, Field::Last];

    fn name(self) -> &'static str {
        match self {
            Field::Avg => "avg_kwh",
            Field::Peak => "peak_kwh",
            Field::Last => "last_kwh",
        }
    }
}

/// Time-ordered interval records for one charging location.
///
/// Records are strictly increasing in timestamp. After
/// [`interpolate_missing`] they are also contiguous on the 15-minute grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    pub station_id: String,
    pub records: Vec<RawRecord>,
    pub flags: Vec<Provenance>,
}

impl StationSeries {
    pub fn new(station_id: impl Into<String>, records: Vec<RawRecord>) -> Self {
        let flags = records
            .iter()
            .map(|r| {
                if r.is_complete() {
                    Provenance::Measured
                } else {
                    Provenance::Missing
                }
            })
            .collect();
        Self {
            station_id: station_id.into(),
            records,
            flags,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn sample_period(&self) -> Duration {
        sample_period()
    }

    pub fn count(&self, flag: Provenance) -> usize {
        self.flags.iter().filter(|&&f| f == flag).count()
    }

    /// True when every consecutive pair is exactly one sample period apart.
    pub fn is_uniform(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].timestamp - w[0].timestamp == sample_period())
    }

    pub fn avg_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.avg_kwh).collect()
    }

    /// Serialize as CSV: `timestamp,station_id,avg_kwh,peak_kwh,last_kwh,flag`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "timestamp",
            "station_id",
            "avg_kwh",
            "peak_kwh",
            "last_kwh",
            "flag",
        ])?;
        for (r, flag) in self.records.iter().zip(&self.flags) {
            w.write_record([
                format_timestamp(&r.timestamp),
                self.station_id.clone(),
                fmt_reading(r.avg_kwh),
                fmt_reading(r.peak_kwh),
                fmt_reading(r.last_kwh),
                flag.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_reading(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

/// Maps input header names onto record fields. `station_id` and `flag` are
/// optional: when the header lacks them they are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub timestamp: String,
    pub avg_kwh: String,
    pub peak_kwh: String,
    pub last_kwh: String,
    pub station_id: String,
    pub flag: String,
    /// Used when the input has no station column.
    pub default_station_id: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            avg_kwh: "avg_kwh".into(),
            peak_kwh: "peak_kwh".into(),
            last_kwh: "last_kwh".into(),
            station_id: "station_id".into(),
            flag: "flag".into(),
            default_station_id: "station".into(),
        }
    }
}

/// A data row that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    /// 1-based line number in the source, header is line 1.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ParsedCsv {
    pub series: StationSeries,
    pub rejected: Vec<RejectedRow>,
}

/// Parse a charging CSV into a sorted [`StationSeries`].
///
/// Empty cells become missing readings (NaN, flagged `missing`). Rows whose
/// timestamp or numbers cannot be parsed are returned in
/// [`ParsedCsv::rejected`].
pub fn parse_csv<R: Read>(source: R, schema: &ColumnMapping) -> Result<ParsedCsv> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyInput);
    }
    let find = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| find(name).ok_or_else(|| Error::MalformedHeader(name.to_string()));
    let ts_col = required(&schema.timestamp)?;
    let value_cols = [
        required(&schema.avg_kwh)?,
        required(&schema.peak_kwh)?,
        required(&schema.last_kwh)?,
    ];
    let station_col = find(&schema.station_id);
    let flag_col = find(&schema.flag);

    let mut station_id: Option<String> = None;
    let mut rows: Vec<(RawRecord, Option<Provenance>)> = Vec::new();
    let mut rejected = Vec::new();
    let mut n_rows = 0usize;

    for (i, result) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = match result {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RejectedRow {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        n_rows += 1;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let Some(timestamp) = parse_timestamp(cell(ts_col)) else {
            rejected.push(RejectedRow {
                line,
                reason: format!("unparseable timestamp `{}`", cell(ts_col)),
            });
            continue;
        };
        let mut values = [f64::NAN; 3];
        let mut bad = None;
        for (v, &c) in values.iter_mut().zip(&value_cols) {
            let text = cell(c);
            if text.is_empty() {
                continue;
            }
            match text.parse::<f64>() {
                Ok(x) if x.is_finite() => *v = x,
                Ok(_) => {}
                Err(_) => bad = Some(text.to_string()),
            }
        }
        if let Some(text) = bad {
            rejected.push(RejectedRow {
                line,
                reason: format!("unparseable reading `{text}`"),
            });
            continue;
        }
        if let Some(c) = station_col {
            let id = cell(c);
            match &station_id {
                None => station_id = Some(id.to_string()),
                Some(first) if first != id => {
                    rejected.push(RejectedRow {
                        line,
                        reason: format!("station `{id}` differs from `{first}`"),
                    });
                    continue;
                }
                Some(_) => {}
            }
        }
        let flag = match flag_col.map(cell) {
            Some(text) => match Provenance::parse(text) {
                Some(p) => Some(p),
                None => {
                    rejected.push(RejectedRow {
                        line,
                        reason: format!("unknown flag `{text}`"),
                    });
                    continue;
                }
            },
            None => None,
        };
        rows.push((
            RawRecord::new(timestamp, values[0], values[1], values[2]),
            flag,
        ));
    }

    if n_rows == 0 || rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    rows.sort_by_key(|(r, _)| r.timestamp);
    if let Some(w) = rows.windows(2).find(|w| w[0].0.timestamp == w[1].0.timestamp) {
        return Err(Error::DuplicateTimestamp(w[0].0.timestamp));
    }

    let mut records = Vec::with_capacity(rows.len());
    let mut flags = Vec::with_capacity(rows.len());
    for (r, flag) in rows {
        let inferred = if r.is_complete() {
            Provenance::Measured
        } else {
            Provenance::Missing
        };
        flags.push(match flag {
            Some(p) if inferred == Provenance::Measured && p != Provenance::Missing => p,
            _ => inferred,
        });
        records.push(r);
    }
    Ok(ParsedCsv {
        series: StationSeries {
            station_id: station_id.unwrap_or_else(|| schema.default_station_id.clone()),
            records,
            flags,
        },
        rejected,
    })
}

/// Fill every 15-minute slot between the first and last timestamp.
///
/// Absent rows and empty cells are filled by linear interpolation between
/// the nearest measured neighbours of the same field and flagged
/// `interpolated`. Values are never extrapolated: slots before the first or
/// after the last reading of any field are trimmed from the ends.
pub fn interpolate_missing(series: &StationSeries) -> Result<StationSeries> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    let period = sample_period();
    let start = series.records[0].timestamp;

    // Place every record on the grid.
    let mut slots: Vec<Option<(RawRecord, Provenance)>> = vec![Some((series.records[0], series.flags[0]))];
    for (w, &flag) in series.records.windows(2).zip(&series.flags[1..]) {
        let gap = w[1].timestamp - w[0].timestamp;
        let steps = gap.num_minutes();
        if gap <= Duration::zero()
            || gap.num_seconds() % period.num_seconds() != 0
        {
            return Err(Error::IrregularGap {
                prev: w[0].timestamp,
                next: w[1].timestamp,
            });
        }
        let steps = (steps / SAMPLE_PERIOD_MINUTES) as usize;
        slots.extend(std::iter::repeat_n(None, steps - 1));
        slots.push(Some((w[1], flag)));
    }

    let value_at = |i: usize, f: Field| -> Option<f64> {
        slots[i]
            .as_ref()
            .map(|(r, _)| r.field(f))
            .filter(|v| v.is_finite())
    };

    let mut lo = 0;
    let mut hi = slots.len() - 1;
    for f in Field::ALL {
        let first = (0..slots.len()).find(|&i| value_at(i, f).is_some());
        let last = (0..slots.len()).rev().find(|&i| value_at(i, f).is_some());
        match (first, last) {
            (Some(a), Some(b)) => {
                lo = lo.max(a);
                hi = hi.min(b);
            }
            _ => return Err(Error::AllMissing(f.name())),
        }
    }
    if lo > hi {
        // Fields never overlap; nothing can be filled without extrapolating.
        return Err(Error::AllMissing(Field::Avg.name()));
    }

    let n = hi - lo + 1;
    let mut records = Vec::with_capacity(n);
    let mut flags = Vec::with_capacity(n);
    for (i, slot) in slots.iter().enumerate().take(hi + 1).skip(lo) {
        let ts = start + period * i as i32;
        match slot {
            Some((r, flag)) => {
                records.push(*r);
                flags.push(*flag);
            }
            None => {
                records.push(RawRecord::new(ts, f64::NAN, f64::NAN, f64::NAN));
                flags.push(Provenance::Missing);
            }
        }
    }

    for f in Field::ALL {
        let known: Vec<usize> = (0..n)
            .filter(|&i| records[i].field(f).is_finite())
            .collect();
        for pair in known.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b - a < 2 {
                continue;
            }
            let (va, vb) = (records[a].field(f), records[b].field(f));
            for (k, rec) in records.iter_mut().enumerate().take(b).skip(a + 1) {
                let t = (k - a) as f64 / (b - a) as f64;
                *rec.field_mut(f) = va + (vb - va) * t;
            }
        }
    }
    for flag in flags.iter_mut() {
        if *flag == Provenance::Missing {
            *flag = Provenance::Interpolated;
        }
    }

    Ok(StationSeries {
        station_id: series.station_id.clone(),
        records,
        flags,
    })
}

/// Realistic per-interval energy range in kWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyBounds {
    pub min: f64,
    pub max: f64,
}

impl AnomalyBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min >= 0.0 && max > min && max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "anomaly bounds need 0 <= min < max, got [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    /// Bounds `[0, max]`.
    pub fn up_to(max: f64) -> Result<Self> {
        Self::new(0.0, max)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub series: StationSeries,
    /// Number of records with at least one replaced reading.
    pub clipped: usize,
}

/// Replace readings outside `bounds` and flag them `clipped`.
///
/// Out-of-range readings are interpolated between the nearest in-range
/// neighbours of the same field. At the ends of the series the nearest
/// in-range value is held; a field with no in-range value at all is clamped.
/// Finally `peak_kwh` is raised to `avg_kwh` wherever it falls below.
pub fn filter_anomalies(series: &StationSeries, bounds: AnomalyBounds) -> FilterOutcome {
    let mut records = series.records.clone();
    let mut flags = series.flags.clone();
    let mut touched = vec![false; records.len()];

    for f in Field::ALL {
        let good: Vec<usize> = (0..records.len())
            .filter(|&i| bounds.contains(records[i].field(f)))
            .collect();
        if good.len() == records.len() {
            continue;
        }
        if good.is_empty() {
            for (rec, t) in records.iter_mut().zip(touched.iter_mut()) {
                let v = rec.field_mut(f);
                *v = if v.is_nan() {
                    bounds.min
                } else {
                    v.clamp(bounds.min, bounds.max)
                };
                *t = true;
            }
            continue;
        }
        let mut g = 0;
        for i in 0..records.len() {
            if bounds.contains(records[i].field(f)) {
                continue;
            }
            while g < good.len() && good[g] < i {
                g += 1;
            }
            let left = g.checked_sub(1).map(|k| good[k]);
            let right = good.get(g).copied();
            let value = match (left, right) {
                (Some(a), Some(b)) => {
                    let (va, vb) = (records[a].field(f), records[b].field(f));
                    va + (vb - va) * (i - a) as f64 / (b - a) as f64
                }
                (Some(a), None) => records[a].field(f),
                (None, Some(b)) => records[b].field(f),
                (None, None) => unreachable!("good is non-empty"),
            };
            *records[i].field_mut(f) = value;
            touched[i] = true;
        }
    }

    for (rec, t) in records.iter_mut().zip(touched.iter_mut()) {
        if rec.peak_kwh < rec.avg_kwh {
            rec.peak_kwh = rec.avg_kwh;
            *t = true;
        }
    }

    let mut clipped = 0;
    for (flag, &t) in flags.iter_mut().zip(&touched) {
        if t {
            *flag = Provenance::Clipped;
            clipped += 1;
        }
    }

    FilterOutcome {
        series: StationSeries {
            station_id: series.station_id.clone(),
            records,
            flags,
        },
        clipped,
    }
}

#[derive(Debug, Clone)]
pub struct CleanReport {
    pub series: StationSeries,
    pub rejected: Vec<RejectedRow>,
    pub interpolated: usize,
    pub clipped: usize,
}

/// Parse, interpolate and filter in one pass.
pub fn clean_csv<R: Read>(source: R, schema: &ColumnMapping, bounds: AnomalyBounds) -> Result<CleanReport> {
    let parsed = parse_csv(source, schema)?;
    let filled = interpolate_missing(&parsed.series)?;
    let interpolated = filled.count(Provenance::Interpolated);
    let filtered = filter_anomalies(&filled, bounds);
    Ok(CleanReport {
        series: filtered.series,
        rejected: parsed.rejected,
        interpolated,
        clipped: filtered.clipped,
    })
}
