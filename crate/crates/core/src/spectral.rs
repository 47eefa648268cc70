//! Periodicity analysis of the daily correlation signal.
//!
//! The signal is mean-removed, multiplied by a Hanning window and
//! transformed; bin `f` of an `N`-sample transform corresponds to a period
//! of `N / f` days.

use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOP_K: usize = 3;
pub const DEFAULT_MAX_PERIOD: f64 = 30.0;

/// Peaks at or below this magnitude are treated as numerical noise.
const PEAK_FLOOR: f64 = 1e-9;

/// `w(t) = ½(1 − cos(2πt/(n−1)))` for `t = 0..n`.
pub fn hanning_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::LengthTooShort { len: n, min: 2 });
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|t| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * t as f64 / denom).cos()))
        .collect())
}

/// Mean-removed, windowed copy of `signal`.
pub fn windowed(signal: &[f64]) -> Result<Vec<f64>> {
    let w = hanning_window(signal.len())?;
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    Ok(signal.iter().zip(&w).map(|(x, w)| (x - mean) * w).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Signal length.
    pub n: usize,
    /// `|X(f)|` for every bin `f = 0..n`.
    pub all_magnitudes: Vec<f64>,
}

impl Spectrum {
    /// Positive-frequency bins `1..=n/2`.
    pub fn positive_bins(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.n / 2
    }

    pub fn period_of(&self, bin: usize) -> f64 {
        self.n as f64 / bin as f64
    }

    pub fn magnitude(&self, bin: usize) -> f64 {
        self.all_magnitudes[bin]
    }

    /// `(period, magnitude)` pairs over the positive-frequency bins.
    pub fn periodogram(&self) -> Vec<(f64, f64)> {
        self.positive_bins()
            .map(|f| (self.period_of(f), self.all_magnitudes[f]))
            .collect()
    }

    /// Two-column plotting CSV `period_days,magnitude`, longest period first.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["period_days", "magnitude"])?;
        for (p, m) in self.periodogram() {
            w.write_record([p.to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Magnitudes of the Hanning-windowed DFT of the mean-removed signal.
pub fn fft_magnitude(signal: &[f64]) -> Result<Spectrum> {
    if signal.len() < 4 {
        return Err(Error::LengthTooShort {
            len: signal.len(),
            min: 4,
        });
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let mut buf: Vec<Complex<f64>> = windowed(signal)?
        .into_iter()
        .map(|x| Complex::new(x, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    Ok(Spectrum {
        n: signal.len(),
        all_magnitudes: buf.iter().map(|c| c.norm()).collect(),
    })
}

/// Dominant periods of a spectrum, strongest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub periods: Vec<f64>,
    pub magnitudes: Vec<f64>,
    #[serde(skip)]
    pub max_period_considered: f64,
    #[serde(skip)]
    pub top_k: usize,
}

impl SpectrumReport {
    /// `{"periods":[...],"magnitudes":[...]}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Strict local maxima of magnitude over bin index with period in
/// `(1, max_period]`, sorted by magnitude descending (ties go to the longer
/// period) and truncated to `top_k`.
pub fn dominant_periods(spectrum: &Spectrum, top_k: usize, max_period: f64) -> Result<SpectrumReport> {
    if top_k == 0 {
        return Err(Error::InvalidConfig("top_k must be >= 1".into()));
    }
    let mag = &spectrum.all_magnitudes;
    let n = spectrum.n;
    // Neighbours wrap through the full spectrum so bin n/2 compares against
    // its mirror image.
    let left = |f: usize| mag[f - 1];
    let right = |f: usize| mag[(f + 1) % n];

    let mut peaks: Vec<(usize, f64)> = spectrum
        .positive_bins()
        .filter(|&f| {
            let p = spectrum.period_of(f);
            p > 1.0 && p <= max_period
        })
        .filter(|&f| mag[f] > left(f) && mag[f] > right(f) && mag[f] > PEAK_FLOOR)
        .map(|f| (f, mag[f]))
        .collect();
    if peaks.is_empty() {
        return Err(Error::NoPeaks);
    }
    // Lower bin index means longer period.
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    peaks.truncate(top_k);
    Ok(SpectrumReport {
        periods: peaks.iter().map(|&(f, _)| spectrum.period_of(f)).collect(),
        magnitudes: peaks.iter().map(|&(_, m)| m).collect(),
        max_period_considered: max_period,
        top_k,
    })
}

/// Windowed transform and peak extraction in one call.
pub fn analyze(signal: &[f64], top_k: usize, max_period: f64) -> Result<(Spectrum, SpectrumReport)> {
    let spectrum = fft_magnitude(signal)?;
    let report = dominant_periods(&spectrum, top_k, max_period)?;
    Ok((spectrum, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    /// Direct O(N²) DFT, independent of the FFT path.
    fn dft_oracle(signal: &[f64]) -> Vec<f64> {
        let x = windowed(signal).unwrap();
        let n = x.len();
        (0..n)
            .map(|f| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (f * t % n) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    fn sines(n: usize, comps: &[(f64, f64)]) -> Vec<f64> {
        (0..n)
            .map(|t| {
                comps
                    .iter()
                    .map(|&(amp, period)| amp * (2.0 * PI * t as f64 / period).sin())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn hanning_small_cases() {
        assert_eq!(hanning_window(3).unwrap(), vec![0.0, 1.0, 0.0]);
        let w5 = hanning_window(5).unwrap();
        let expect = [0.0, 0.5, 1.0, 0.5, 0.0];
        for (a, b) in w5.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{w5:?}");
        }
        assert!(matches!(hanning_window(1), Err(Error::LengthTooShort { .. })));
    }

    #[test]
    fn hanning_symmetric() {
        for n in 2..40 {
            let w = hanning_window(n).unwrap();
            let rev: Vec<f64> = w.iter().rev().copied().collect();
            for (a, b) in w.iter().zip(&rev) {
                assert!((a - b).abs() < 1e-15);
            }
            assert_eq!(w[0], 0.0);
        }
    }

    #[test]
    fn fft_matches_direct_dft() {
        let signal = sines(100, &[(1.0, 7.0), (0.3, 11.0)]);
        let fast = fft_magnitude(&signal).unwrap();
        for (a, b) in fast.all_magnitudes.iter().zip(dft_oracle(&signal)) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn weekly_sine_peaks_at_seven() {
        let spectrum = fft_magnitude(&sines(364, &[(1.0, 7.0)])).unwrap();
        let argmax = spectrum
            .positive_bins()
            .max_by(|&a, &b| spectrum.magnitude(a).total_cmp(&spectrum.magnitude(b)))
            .unwrap();
        assert_eq!(spectrum.period_of(argmax), 7.0);
        let report = dominant_periods(&spectrum, 1, 30.0).unwrap();
        assert_eq!(report.periods, vec![7.0]);
    }

    #[test]
    fn constant_signal_has_no_energy() {
        let spectrum = fft_magnitude(&[3.7; 64]).unwrap();
        assert!(spectrum.all_magnitudes.iter().all(|&m| m <= 1e-9));
        assert!(matches!(dominant_periods(&spectrum, 3, 30.0), Err(Error::NoPeaks)));
    }

    #[test]
    fn two_components_ordered_by_amplitude() {
        let spectrum = fft_magnitude(&sines(364, &[(2.0, 7.0), (1.0, 14.0)])).unwrap();
        let report = dominant_periods(&spectrum, 2, 30.0).unwrap();
        assert_eq!(report.periods, vec![7.0, 14.0]);
        assert!(report.magnitudes[0] > report.magnitudes[1]);
    }

    #[test]
    fn too_short_signal() {
        assert!(matches!(fft_magnitude(&[1.0, 2.0, 3.0]), Err(Error::LengthTooShort { .. })));
    }

    #[test]
    fn white_noise_is_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let signal: Vec<f64> = (0..256).map(|_| normal.sample(&mut rng)).collect();
        let report = dominant_periods(&fft_magnitude(&signal).unwrap(), 3, 30.0).unwrap();
        assert_eq!(report.periods.len(), 3);
        assert!(report.periods.iter().all(|&p| p > 1.0 && p <= 30.0));
        assert!(report.magnitudes.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn parseval_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let signal: Vec<f64> = (0..300).map(|_| normal.sample(&mut rng)).collect();
        let energy: f64 = windowed(&signal).unwrap().iter().map(|x| x * x).sum();
        let spectrum = fft_magnitude(&signal).unwrap();
        let spectral: f64 =
            spectrum.all_magnitudes.iter().map(|m| m * m).sum::<f64>() / spectrum.n as f64;
        assert!(((energy - spectral) / energy).abs() < 1e-6);
    }

    #[test]
    fn offset_and_scale_invariance() {
        let base = sines(210, &[(1.0, 7.0), (0.6, 15.0)]);
        let r0 = analyze(&base, 2, 30.0).unwrap().1;
        let shifted: Vec<f64> = base.iter().map(|x| x + 5.0).collect();
        assert_eq!(analyze(&shifted, 2, 30.0).unwrap().1.periods, r0.periods);
        let doubled: Vec<f64> = base.iter().map(|x| 2.0 * x).collect();
        let r2 = analyze(&doubled, 2, 30.0).unwrap().1;
        assert_eq!(r2.periods, r0.periods);
        for (a, b) in r2.magnitudes.iter().zip(&r0.magnitudes) {
            assert!((a - 2.0 * b).abs() < 1e-9 * b);
        }
    }

    #[test]
    fn json_has_two_keys() {
        let spectrum = fft_magnitude(&sines(364, &[(1.0, 7.0)])).unwrap();
        let json = dominant_periods(&spectrum, 1, 30.0).unwrap().to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, vec!["magnitudes", "periods"]);
    }
}
