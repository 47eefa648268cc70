//! Seeded synthetic charging data.
//!
//! Each day has a contiguous block of active 15-minute intervals centred on
//! midday. The block length and the interval energy both follow a sinusoid
//! of the chosen period, perturbed by Gaussian noise. Everything else about
//! the series is deterministic given the seed.

use chrono::{NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{sample_period, RawRecord, StationSeries};

const SLOTS_PER_DAY: usize = 96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub days: usize,
    /// Period of the demand cycle, in days.
    pub period: f64,
    /// Relative noise level applied to block length and energy.
    pub noise: f64,
    pub seed: u64,
    pub start: NaiveDate,
    /// Probability that an interval row is dropped from the output.
    pub gap_fraction: f64,
    pub station_id: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 365,
            period: 7.0,
            noise: 0.05,
            seed: crate::DEFAULT_SEED,
            start: NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date"),
            gap_fraction: 0.0,
            station_id: "synthetic".into(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::InvalidConfig("days must be > 0".into()));
        }
        if !(self.period > 0.0) {
            return Err(Error::InvalidConfig(format!("period must be > 0, got {}", self.period)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig(format!("noise must be >= 0, got {}", self.noise)));
        }
        if !(0.0..1.0).contains(&self.gap_fraction) {
            return Err(Error::InvalidConfig(format!(
                "gap_fraction must be in [0, 1), got {}",
                self.gap_fraction
            )));
        }
        Ok(())
    }
}

/// Number of interval rows dropped and the resulting series.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub series: StationSeries,
    pub dropped: usize,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let start: NaiveDateTime = cfg.start.and_hms_opt(0, 0, 0).expect("midnight");
    let mut records = Vec::with_capacity(cfg.days * SLOTS_PER_DAY);
    let mut dropped = 0;

    for d in 0..cfg.days {
        let phase = std::f64::consts::TAU * d as f64 / cfg.period;
        let count = 40.0 + 24.0 * phase.sin() + 40.0 * cfg.noise * unit.sample(&mut rng);
        let count = (count.round() as i64).clamp(4, 92) as usize;
        let level = 5.0 * (1.0 + 0.3 * (phase + 0.5).sin()) * (1.0 + cfg.noise * unit.sample(&mut rng));
        let level = level.max(0.1);
        let first = SLOTS_PER_DAY / 2 - count / 2;

        for slot in 0..SLOTS_PER_DAY {
            let ts = start + sample_period() * (d * SLOTS_PER_DAY + slot) as i32;
            let avg = if (first..first + count).contains(&slot) {
                let u = (slot - first) as f64 + 0.5;
                let bell = (std::f64::consts::PI * u / count as f64).sin();
                level * (0.2 + 0.8 * bell)
            } else {
                0.0
            };
            let drop = cfg.gap_fraction > 0.0 && rng.random::<f64>() < cfg.gap_fraction;
            let first_or_last = (d == 0 && slot == 0) || (d + 1 == cfg.days && slot + 1 == SLOTS_PER_DAY);
            if drop && !first_or_last {
                dropped += 1;
                continue;
            }
            records.push(RawRecord::new(ts, avg, avg * 1.25, avg * 0.9));
        }
    }
    Ok(SynthOutput {
        series: StationSeries::new(cfg.station_id.clone(), records),
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{aggregate_daily, build_feature_matrix, FeatureOptions};
    use crate::spectral;

    #[test]
    fn deterministic() {
        let a = generate(&SynthConfig::default()).unwrap();
        let b = generate(&SynthConfig::default()).unwrap();
        assert_eq!(a.series, b.series);
        let c = generate(&SynthConfig {
            seed: 9,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn shape_and_values() {
        let out = generate(&SynthConfig::default()).unwrap();
        assert_eq!(out.series.len(), 365 * 96);
        assert!(out.series.is_uniform());
        assert!(out.series.records.iter().all(|r| r.avg_kwh >= 0.0 && r.peak_kwh >= r.avg_kwh));
        let days = aggregate_daily(&out.series).unwrap();
        assert_eq!(days.len(), 365);
        assert!(days.iter().all(|d| (4..=92).contains(&d.nc)));
    }

    #[test]
    fn weekly_period_dominates() {
        let out = generate(&SynthConfig::default()).unwrap();
        let fm = build_feature_matrix(&out.series, FeatureOptions::default()).unwrap().matrix;
        let na = fm.column(crate::features::FeatureKind::Na).unwrap();
        let (_, rep) = spectral::analyze(na, 1, spectral::DEFAULT_MAX_PERIOD).unwrap();
        assert!((rep.periods[0] - 7.0).abs() < 0.1, "{:?}", rep.periods);
    }

    #[test]
    fn bounded_columns_in_unit_interval() {
        let out = generate(&SynthConfig::default()).unwrap();
        let fm = build_feature_matrix(&out.series, FeatureOptions::default()).unwrap().matrix;
        for &k in &fm.kinds {
            if k.is_bounded() {
                let col = fm.column(k).unwrap();
                assert!(col.iter().all(|v| (0.0..=1.0).contains(v)), "{}", k.name());
            }
        }
    }

    #[test]
    fn gaps_are_dropped_rows() {
        let out = generate(&SynthConfig {
            days: 10,
            gap_fraction: 0.05,
            ..SynthConfig::default()
        })
        .unwrap();
        assert!(out.dropped > 0);
        assert_eq!(out.series.len() + out.dropped, 960);
    }
}
