//! Forecast accuracy metrics.

use std::io::Write;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{self, ModelParams};
use crate::train::{stack_batch, SequenceSample};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub horizon: String,
    pub r2: f64,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub n_points: usize,
}

/// R², MSE, RMSE and MAE of `pred` against `target`. R² uses the total sum
/// of squares about the target mean.
pub fn compute_metrics(pred: &[f64], target: &[f64]) -> Result<MetricReport> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: target.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptySeries);
    }
    let n = pred.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    let abs: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    let mse = ss_res / n;
    Ok(MetricReport {
        horizon: String::new(),
        r2: 1.0 - ss_res / ss_tot,
        mse,
        rmse: mse.sqrt(),
        mae: abs / n,
        n_points: pred.len(),
    })
}

/// Flattened predictions and targets of a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub pred: Vec<f64>,
    pub target: Vec<f64>,
    /// `|pred − target|` elementwise, same order as `pred`.
    pub abs_error: Vec<f64>,
}

/// Predict every test sample and pool the chosen feature columns over all
/// samples and horizon steps. Elements are ordered sample, step, column.
pub fn evaluate_model(
    params: &ModelParams,
    test: &[SequenceSample],
    columns: &[usize],
    horizon: impl Into<String>,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::EmptySeries);
    }
    if let Some(&bad) = columns.iter().find(|&&c| c >= params.dims.output_dim) {
        return Err(Error::ShapeMismatch(format!(
            "column {bad} out of range for {} outputs",
            params.dims.output_dim
        )));
    }
    let mut pred = Vec::new();
    let mut target = Vec::new();
    for chunk in test.chunks(256) {
        let (x, y) = stack_batch(chunk);
        let (out, _) = lstm::forward(x.view(), params, None)?;
        for (p_sample, t_sample) in out.axis_iter(Axis(0)).zip(y.axis_iter(Axis(0))) {
            for (p_step, t_step) in p_sample.outer_iter().zip(t_sample.outer_iter()) {
                for &c in columns {
                    pred.push(p_step[c]);
                    target.push(t_step[c]);
                }
            }
        }
    }
    let mut report = compute_metrics(&pred, &target)?;
    report.horizon = horizon.into();
    let abs_error = pred.iter().zip(&target).map(|(p, t)| (p - t).abs()).collect();
    Ok(Evaluation {
        report,
        pred,
        target,
        abs_error,
    })
}

/// CSV `horizon,r2,mse,rmse,mae`.
pub fn write_reports_csv<W: Write>(reports: &[MetricReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["horizon", "r2", "mse", "rmse", "mae"])?;
    for r in reports {
        w.write_record([
            r.horizon.clone(),
            r.r2.to_string(),
            r.mse.to_string(),
            r.rmse.to_string(),
            r.mae.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// CSV `step,abs_error`.
pub fn write_abs_error_csv<W: Write>(abs_error: &[f64], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["step", "abs_error"])?;
    for (i, e) in abs_error.iter().enumerate() {
        w.write_record([i.to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
