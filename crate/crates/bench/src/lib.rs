//! Inputs shared by the benchmarks in `benches/`.

use evload_core::gridval::{build_fixture_case, GridCase, LoadProfile, LoadScaling};
use evload_core::lstm::{init_params, ModelParams};
use evload_core::TrainConfig;
use ndarray::Array3;

/// Weekly-preset model on nine features and one training batch for it.
pub fn weekly_batch() -> (ModelParams, Array3<f64>, Array3<f64>) {
    let cfg = TrainConfig::weekly();
    let dims = cfg.dims(9);
    let params = init_params(dims, cfg.seed).expect("valid dims");
    let x = Array3::from_shape_fn((cfg.batch_size, cfg.sequence_length, 9), |(b, t, f)| {
        ((b * 31 + t * 7 + f) as f64 * 0.37).sin().abs()
    });
    let y = Array3::from_shape_fn((cfg.batch_size, cfg.prediction_steps, 9), |(b, t, f)| {
        ((b * 17 + t * 5 + f) as f64 * 0.53).cos().abs()
    });
    (params, x, y)
}

/// Five-bus feeder with `n` days of a daily-average load profile.
pub fn feeder_case(n: usize) -> GridCase {
    let da: Vec<f64> = (0..n).map(|d| 2.0 + (d as f64 * 0.9).sin()).collect();
    let loads = LoadProfile::from_daily_average(&da, 1..5, LoadScaling::default());
    build_fixture_case(5, loads).expect("valid fixture")
}

/// One year of a weekly signal with a fortnightly component.
pub fn weekly_signal(n: usize) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    (0..n)
        .map(|t| (tau * t as f64 / 7.0).sin() + 0.5 * (tau * t as f64 / 14.0).sin())
        .collect()
}
