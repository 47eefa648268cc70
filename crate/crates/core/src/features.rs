//! Daily feature engineering.
//!
//! The cleaned 15-minute average-kWh signal is reduced to one row per
//! calendar day: a non-zero interval count, a daily mean and a daily max.
//! Those three channels are normalized by their maxima over the whole span,
//! and the remaining features are built from the normalized channels:
//! products (`crr`, `crrm`), their time derivatives (`crrd`, `crrmd`) and
//! ratios (`r`, `rm`).

use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::StationSeries;

/// Default guard for the ratio denominators.
pub const DEFAULT_EPSILON: f64 = 1e-6;

/// One day of aggregated interval data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyAggregate {
    pub day: NaiveDate,
    /// Intervals with a strictly positive reading.
    pub nc: usize,
    /// Mean reading over the day's intervals, kWh.
    pub da: f64,
    /// Max reading over the day's intervals, kWh.
    pub dm: f64,
    /// Number of intervals observed that day (96 for a complete day).
    pub n_t: usize,
}

/// Group the average-kWh signal by calendar day.
///
/// Partial first and last days are kept with their actual interval count.
pub fn aggregate_daily(series: &StationSeries) -> Result<Vec<DailyAggregate>> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut out: Vec<DailyAggregate> = Vec::new();
    let mut sum = 0.0;
    for rec in &series.records {
        let day = rec.timestamp.date();
        let raw = rec.avg_kwh;
        match out.last_mut() {
            Some(agg) if agg.day == day => {
                agg.n_t += 1;
                agg.nc += usize::from(raw > 0.0);
                agg.dm = agg.dm.max(raw);
                sum += raw;
            }
            _ => {
                if let Some(agg) = out.last_mut() {
                    agg.da = sum / agg.n_t as f64;
                }
                sum = raw;
                out.push(DailyAggregate {
                    day,
                    nc: usize::from(raw > 0.0),
                    da: 0.0,
                    dm: raw,
                    n_t: 1,
                });
            }
        }
    }
    if let Some(agg) = out.last_mut() {
        agg.da = sum / agg.n_t as f64;
    }
    Ok(out)
}

/// Per-channel maxima used for normalization; zero marks a degenerate channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMaxima {
    pub nc: f64,
    pub da: f64,
    pub dm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    NonZeroCount,
    DailyAverage,
    DailyMax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub nnc: Vec<f64>,
    pub na: Vec<f64>,
    pub nm: Vec<f64>,
    pub maxima: NormalizationMaxima,
    /// Channels whose maximum was zero. They are emitted as all zeros.
    pub degenerate: Vec<Channel>,
}

fn scale_by_max(values: &[f64]) -> (Vec<f64>, f64) {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        (values.iter().map(|v| v / max).collect(), max)
    } else {
        (vec![0.0; values.len()], 0.0)
    }
}

/// Divide each channel by its own maximum over the full span.
pub fn normalize_daily(aggregates: &[DailyAggregate]) -> Result<Normalized> {
    if aggregates.is_empty() {
        return Err(Error::EmptySeries);
    }
    let nc: Vec<f64> = aggregates.iter().map(|a| a.nc as f64).collect();
    let da: Vec<f64> = aggregates.iter().map(|a| a.da).collect();
    let dm: Vec<f64> = aggregates.iter().map(|a| a.dm).collect();
    let (nnc, max_nc) = scale_by_max(&nc);
    let (na, max_da) = scale_by_max(&da);
    let (nm, max_dm) = scale_by_max(&dm);
    let degenerate = [
        (Channel::NonZeroCount, max_nc),
        (Channel::DailyAverage, max_da),
        (Channel::DailyMax, max_dm),
    ]
    .into_iter()
    .filter(|&(_, m)| m == 0.0)
    .map(|(c, _)| c)
    .collect();
    Ok(Normalized {
        nnc,
        na,
        nm,
        maxima: NormalizationMaxima {
            nc: max_nc,
            da: max_da,
            dm: max_dm,
        },
        degenerate,
    })
}

/// Discrete derivative on a unit-spaced grid: central differences on
/// interior points, one-sided at the ends. A single point has derivative 0.
pub fn gradient(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| {
                if i == 0 {
                    values[1] - values[0]
                } else if i == n - 1 {
                    values[n - 1] - values[n - 2]
                } else {
                    (values[i + 1] - values[i - 1]) / 2.0
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSignals {
    pub crr: Vec<f64>,
    pub crrm: Vec<f64>,
    pub crrd: Vec<f64>,
    pub crrmd: Vec<f64>,
}

/// Pointwise products of the normalized count with the normalized mean and
/// max, and their time derivatives in units of 1/day.
pub fn correlation_signals(nnc: &[f64], na: &[f64], nm: &[f64]) -> Result<CorrelationSignals> {
    check_len(nnc, na)?;
    check_len(nnc, nm)?;
    let crr: Vec<f64> = nnc.iter().zip(na).map(|(c, a)| c * a).collect();
    let crrm: Vec<f64> = nnc.iter().zip(nm).map(|(c, m)| c * m).collect();
    let crrd = gradient(&crr);
    let crrmd = gradient(&crrm);
    Ok(CorrelationSignals {
        crr,
        crrm,
        crrd,
        crrmd,
    })
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

fn guarded_ratio(num: f64, den: f64, eps: f64) -> f64 {
    (num / den.max(eps)).clamp(0.0, 1.0 / eps)
}

/// `r = nnc / max(na, eps)` and `rm = nnc / max(nm, eps)`, clamped to `[0, 1/eps]`.
pub fn ratio_signals(nnc: &[f64], na: &[f64], nm: &[f64], eps: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!("ratio epsilon must be > 0, got {eps}")));
    }
    check_len(nnc, na)?;
    check_len(nnc, nm)?;
    let r = nnc.iter().zip(na).map(|(&c, &a)| guarded_ratio(c, a, eps)).collect();
    let rm = nnc.iter().zip(nm).map(|(&c, &m)| guarded_ratio(c, m, eps)).collect();
    Ok((r, rm))
}

/// Trailing mean over `window` points. The first `window - 1` outputs
/// average every point seen so far.
pub fn rolling_average(column: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::InvalidWindow);
    }
    if window > column.len() {
        return Err(Error::WindowTooLarge {
            window,
            len: column.len(),
        });
    }
    let mut out = Vec::with_capacity(column.len());
    for i in 0..column.len() {
        let lo = (i + 1).saturating_sub(window);
        let slice = &column[lo..=i];
        out.push(slice.iter().sum::<f64>() / slice.len() as f64);
    }
    Ok(out)
}

/// Columns of the feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Nnc,
    Na,
    Nm,
    Crr,
    Crrd,
    Crrm,
    Crrmd,
    R,
    Rm,
    /// Un-normalized daily average in kWh. Only present when enabled.
    Da,
}

impl FeatureKind {
    /// The standard nine columns in serialization order.
    pub const STANDARD: [FeatureKind; 9] = [
        FeatureKind::Nnc,
        FeatureKind::Na,
        FeatureKind::Nm,
        FeatureKind::Crr,
        FeatureKind::Crrd,
        FeatureKind::Crrm,
        FeatureKind::Crrmd,
        FeatureKind::R,
        FeatureKind::Rm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Nnc => "nnc",
            FeatureKind::Na => "na",
            FeatureKind::Nm => "nm",
            FeatureKind::Crr => "crr",
            FeatureKind::Crrd => "crrd",
            FeatureKind::Crrm => "crrm",
            FeatureKind::Crrmd => "crrmd",
            FeatureKind::R => "r",
            FeatureKind::Rm => "rm",
            FeatureKind::Da => "da",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        FeatureKind::STANDARD
            .into_iter()
            .chain([FeatureKind::Da])
            .find(|k| k.name() == s)
    }

    /// Columns constrained to `[0, 1]`.
    pub fn is_bounded(self) -> bool {
        matches!(
            self,
            FeatureKind::Nnc | FeatureKind::Na | FeatureKind::Nm | FeatureKind::Crr | FeatureKind::Crrm
        )
    }

    /// Factor that maps the stored value back to physical units. Columns
    /// that were never divided by a channel maximum map with factor 1.
    pub fn denorm_scale(self, maxima: &NormalizationMaxima) -> f64 {
        match self {
            FeatureKind::Nnc => maxima.nc,
            FeatureKind::Na => maxima.da,
            FeatureKind::Nm => maxima.dm,
            _ => 1.0,
        }
    }
}

/// Per-day engineered features, one row per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub days: Vec<NaiveDate>,
    pub kinds: Vec<FeatureKind>,
    /// `columns[j][t]` is feature `kinds[j]` on `days[t]`.
    pub columns: Vec<Vec<f64>>,
    pub normalization_maxima: NormalizationMaxima,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureOptions {
    pub epsilon: f64,
    /// Append the un-normalized daily average as a tenth column.
    pub include_raw_daily_average: bool,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            include_raw_daily_average: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeatureBuild {
    pub matrix: FeatureMatrix,
    pub aggregates: Vec<DailyAggregate>,
    pub degenerate: Vec<Channel>,
}

/// Aggregate, normalize and derive the full feature matrix.
pub fn build_feature_matrix(series: &StationSeries, opts: FeatureOptions) -> Result<FeatureBuild> {
    let aggregates = aggregate_daily(series)?;
    let norm = normalize_daily(&aggregates)?;
    let corr = correlation_signals(&norm.nnc, &norm.na, &norm.nm)?;
    let (r, rm) = ratio_signals(&norm.nnc, &norm.na, &norm.nm, opts.epsilon)?;

    let mut kinds = FeatureKind::STANDARD.to_vec();
    let mut columns = vec![
        norm.nnc, norm.na, norm.nm, corr.crr, corr.crrd, corr.crrm, corr.crrmd, r, rm,
    ];
    if opts.include_raw_daily_average {
        kinds.push(FeatureKind::Da);
        columns.push(aggregates.iter().map(|a| a.da).collect());
    }
    Ok(FeatureBuild {
        matrix: FeatureMatrix {
            days: aggregates.iter().map(|a| a.day).collect(),
            kinds,
            columns,
            normalization_maxima: norm.maxima,
        },
        aggregates,
        degenerate: norm.degenerate,
    })
}

impl FeatureMatrix {
    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn n_features(&self) -> usize {
        self.kinds.len()
    }

    pub fn index_of(&self, kind: FeatureKind) -> Option<usize> {
        self.kinds.iter().position(|&k| k == kind)
    }

    pub fn column(&self, kind: FeatureKind) -> Option<&[f64]> {
        self.index_of(kind).map(|j| self.columns[j].as_slice())
    }

    /// Row-major `days × features` copy, the LSTM input layout.
    pub fn to_array(&self) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_fn((self.n_days(), self.n_features()), |(t, j)| {
            self.columns[j][t]
        })
    }

    /// Scale factors per column, see [`FeatureKind::denorm_scale`].
    pub fn denorm_scales(&self) -> Vec<f64> {
        self.kinds
            .iter()
            .map(|k| k.denorm_scale(&self.normalization_maxima))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.kinds.len() != self.columns.len() {
            return Err(Error::LengthMismatch {
                left: self.kinds.len(),
                right: self.columns.len(),
            });
        }
        if let Some(col) = self.columns.iter().find(|c| c.len() != self.days.len()) {
            return Err(Error::LengthMismatch {
                left: col.len(),
                right: self.days.len(),
            });
        }
        Ok(())
    }

    /// CSV with header `date,` followed by the column names.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["date".to_string()];
        header.extend(self.kinds.iter().map(|k| k.name().to_string()));
        w.write_record(&header)?;
        for (t, day) in self.days.iter().enumerate() {
            let mut row = vec![day.format("%Y-%m-%d").to_string()];
            row.extend(self.columns.iter().map(|c| c[t].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read the CSV form. The CSV carries no maxima, so they are taken
    /// from `maxima` (zeros when unknown).
    pub fn read_csv<R: Read>(reader: R, maxima: Option<NormalizationMaxima>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("date") {
            return Err(Error::MalformedHeader("date".into()));
        }
        let kinds = headers
            .iter()
            .skip(1)
            .map(|h| FeatureKind::from_name(h).ok_or_else(|| Error::MalformedHeader(h.to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut days = Vec::new();
        let mut columns = vec![Vec::new(); kinds.len()];
        for rec in rdr.records() {
            let rec = rec?;
            let day = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|e| Error::Parse(format!("date `{}`: {e}", &rec[0])))?;
            days.push(day);
            for (j, col) in columns.iter_mut().enumerate() {
                let text = rec.get(j + 1).unwrap_or("");
                let v = text
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("value `{text}`: {e}")))?;
                col.push(v);
            }
        }
        if days.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Self {
            days,
            kinds,
            columns,
            normalization_maxima: maxima.unwrap_or(NormalizationMaxima {
                nc: 0.0,
                da: 0.0,
                dm: 0.0,
            }),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    /// Load from `.json`, or from `.csv` with maxima taken from a sibling
    /// `.json` file of the same stem when one exists.
    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "json") {
            return Self::from_json(&std::fs::read_to_string(path)?);
        }
        let sidecar = path.with_extension("json");
        let maxima = if sidecar.exists() {
            Some(Self::from_json(&std::fs::read_to_string(&sidecar)?)?.normalization_maxima)
        } else {
            None
        };
        Self::read_csv(std::fs::File::open(path)?, maxima)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{sample_period, RawRecord};
    use chrono::NaiveDateTime;
    use proptest::prelude::*;

    fn day_series(days: &[&[f64]]) -> StationSeries {
        let start: NaiveDateTime = "2024-01-01T00:00:00".parse().unwrap();
        let mut records = Vec::new();
        for (d, values) in days.iter().enumerate() {
            for (i, &v) in values.iter().enumerate() {
                let ts = start + chrono::Duration::days(d as i64) + sample_period() * i as i32;
                records.push(RawRecord::new(ts, v, v, v));
            }
        }
        StationSeries::new("s", records)
    }

    fn agg(nc: usize, da: f64, dm: f64) -> DailyAggregate {
        DailyAggregate {
            day: NaiveDate::from_ymd_opt(2024, 1, 1).unwrap(),
            nc,
            da,
            dm,
            n_t: 96,
        }
    }

    #[test]
    fn aggregate_mixed_day() {
        let a = aggregate_daily(&day_series(&[&[0.0, 0.0, 2.0, 4.0]])).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!((a[0].nc, a[0].da, a[0].dm, a[0].n_t), (2, 1.5, 4.0, 4));
    }

    #[test]
    fn aggregate_zero_and_singleton_days() {
        let a = aggregate_daily(&day_series(&[&[0.0, 0.0, 0.0], &[3.0]])).unwrap();
        assert_eq!((a[0].nc, a[0].da, a[0].dm), (0, 0.0, 0.0));
        assert_eq!((a[1].nc, a[1].da, a[1].dm, a[1].n_t), (1, 3.0, 3.0, 1));
    }

    #[test]
    fn aggregate_empty_errors() {
        assert!(matches!(
            aggregate_daily(&StationSeries::new("s", vec![])),
            Err(Error::EmptySeries)
        ));
    }

    #[test]
    fn normalize_by_max() {
        let n = normalize_daily(&[agg(1, 1.0, 1.0), agg(2, 2.0, 2.0), agg(4, 4.0, 4.0)]).unwrap();
        assert_eq!(n.na, vec![0.25, 0.5, 1.0]);
        assert_eq!(n.maxima.da, 4.0);
        let n = normalize_daily(&[agg(1, 3.0, 3.0), agg(1, 3.0, 3.0)]).unwrap();
        assert_eq!(n.na, vec![1.0, 1.0]);
    }

    #[test]
    fn degenerate_channel_is_zeros() {
        let n = normalize_daily(&[agg(0, 1.0, 1.0), agg(0, 2.0, 2.0)]).unwrap();
        assert_eq!(n.nnc, vec![0.0, 0.0]);
        assert_eq!(n.degenerate, vec![Channel::NonZeroCount]);
        assert!(n.nnc.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn correlation_two_points() {
        let c = correlation_signals(&[1.0, 1.0], &[0.5, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(c.crr, vec![0.5, 1.0]);
        assert_eq!(c.crrd, vec![0.5, 0.5]);
    }

    #[test]
    fn correlation_constant_and_zero() {
        let c = correlation_signals(&[0.5; 4], &[0.8; 4], &[0.9; 4]).unwrap();
        assert!(c.crrd.iter().all(|&v| v == 0.0));
        let c = correlation_signals(&[0.0; 3], &[0.3, 0.7, 0.1], &[0.4, 0.2, 0.9]).unwrap();
        for col in [&c.crr, &c.crrm, &c.crrd, &c.crrmd] {
            assert!(col.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn correlation_length_mismatch() {
        assert!(matches!(
            correlation_signals(&[1.0], &[1.0, 2.0], &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ratio_cases() {
        let (r, _) = ratio_signals(&[0.5, 0.0, 0.5, 1.0], &[0.25, 0.0, 0.0, 0.0], &[1.0; 4], 1e-6).unwrap();
        assert_eq!(r[0], 2.0);
        assert_eq!(r[1], 0.0);
        // 0.5 / max(0, eps), below the 1/eps ceiling
        assert!((r[2] - 5e5).abs() < 1e-6);
        assert!((r[3] - 1e6).abs() < 1e-6);
        assert!(r.iter().all(|&v| v <= 1e6));
    }

    #[test]
    fn rolling_expanding_start() {
        assert_eq!(
            rolling_average(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(),
            vec![1.0, 1.5, 2.5, 3.5]
        );
        assert_eq!(rolling_average(&[3.0, 1.0, 2.0], 1).unwrap(), vec![3.0, 1.0, 2.0]);
        assert_eq!(rolling_average(&[2.5; 10], 7).unwrap(), vec![2.5; 10]);
        assert!(matches!(
            rolling_average(&[1.0; 20], 30),
            Err(Error::WindowTooLarge { window: 30, len: 20 })
        ));
        assert!(matches!(rolling_average(&[1.0], 0), Err(Error::InvalidWindow)));
    }

    #[test]
    fn feature_matrix_composes() {
        let s = day_series(&[&[0.0, 0.0, 2.0, 4.0], &[1.0, 1.0, 1.0, 0.0]]);
        let fm = build_feature_matrix(&s, FeatureOptions::default()).unwrap().matrix;
        assert_eq!(fm.kinds, FeatureKind::STANDARD.to_vec());
        let nnc = fm.column(FeatureKind::Nnc).unwrap();
        let na = fm.column(FeatureKind::Na).unwrap();
        let crr = fm.column(FeatureKind::Crr).unwrap();
        for t in 0..2 {
            assert_eq!(crr[t], nnc[t] * na[t]);
        }
        assert_eq!(fm.normalization_maxima.nc, 3.0);
        assert_eq!(fm.normalization_maxima.da, 1.5);
    }

    #[test]
    fn optional_tenth_column() {
        let s = day_series(&[&[1.0, 3.0], &[2.0, 2.0]]);
        let opts = FeatureOptions {
            include_raw_daily_average: true,
            ..Default::default()
        };
        let fm = build_feature_matrix(&s, opts).unwrap().matrix;
        assert_eq!(fm.n_features(), 10);
        assert_eq!(fm.column(FeatureKind::Da).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    fn csv_header_and_round_trip() {
        let s = day_series(&[&[0.0, 1.0, 2.5], &[1.0, 1.0, 0.0], &[4.0, 0.0, 0.0]]);
        let fm = build_feature_matrix(&s, FeatureOptions::default()).unwrap().matrix;
        let mut buf = Vec::new();
        fm.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("date,nnc,na,nm,crr,crrd,crrm,crrmd,r,rm\n"));
        let back = FeatureMatrix::read_csv(buf.as_slice(), Some(fm.normalization_maxima)).unwrap();
        assert_eq!(back, fm);
        let json = FeatureMatrix::from_json(&fm.to_json().unwrap()).unwrap();
        assert_eq!(json, fm);
    }

    proptest! {
        #[test]
        fn trapezoid_of_derivative_telescopes(v in prop::collection::vec(-1.0f64..1.0, 2..200)) {
            let d = gradient(&v);
            let n = v.len();
            let interior: f64 = d[1..n - 1].iter().sum();
            let integral = 0.5 * (d[0] + d[n - 1]) + interior;
            prop_assert!((integral - (v[n - 1] - v[0])).abs() <= 1e-9);
        }

        #[test]
        fn rolling_commutes_with_scaling(
            v in prop::collection::vec(-10.0f64..10.0, 1..60),
            k in -5.0f64..5.0,
            w in 1usize..8,
        ) {
            prop_assume!(w <= v.len());
            let scaled: Vec<f64> = v.iter().map(|x| k * x).collect();
            let a = rolling_average(&scaled, w).unwrap();
            let b = rolling_average(&v, w).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - k * y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn maxima_are_one_and_denormalize(
            days in prop::collection::vec((0usize..96, 0.01f64..20.0, 0.0f64..10.0), 1..40)
        ) {
            let aggs: Vec<DailyAggregate> = days
                .iter()
                .map(|&(nc, da, extra)| agg(nc.max(1), da, da + extra))
                .collect();
            let n = normalize_daily(&aggs).unwrap();
            let max = |v: &[f64]| v.iter().copied().fold(f64::MIN, f64::max);
            prop_assert_eq!(max(&n.nnc), 1.0);
            prop_assert_eq!(max(&n.na), 1.0);
            prop_assert_eq!(max(&n.nm), 1.0);
            for (a, na) in aggs.iter().zip(&n.na) {
                prop_assert!(((na * n.maxima.da) - a.da).abs() <= 1e-12 * a.da);
            }
        }
    }
}
