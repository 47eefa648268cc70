//! Training: noise augmentation, windowing, chronological splits, MSE
//! gradients through time, Adam and early stopping.

use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix, NormalizationMaxima};
use crate::lstm::{self, Dims, ModelParams, ParamsDocument};

/// Every hyperparameter of a training run. Field names mirror the usual
/// hyperparameter table; see the presets for the four standard horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub sequence_length: usize,
    pub prediction_steps: usize,
    pub training_size: f64,
    pub validation_size: f64,
    pub test_size: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub noise_level: f64,
    pub multiplier: usize,
    pub number_of_epochs: usize,
    pub patience: usize,
    /// Minimum validation improvement that resets patience.
    pub delta: f64,
    pub hidden_dim: usize,
    pub layer_dim: usize,
    /// Global gradient-norm cap applied before each Adam step; `None` disables.
    pub grad_clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::weekly()
    }
}

impl TrainConfig {
    fn preset(steps: usize, epochs: usize) -> Self {
        Self {
            sequence_length: steps,
            prediction_steps: steps,
            training_size: 0.6,
            validation_size: 0.2,
            test_size: 0.2,
            learning_rate: 5e-5,
            batch_size: 32,
            noise_level: 0.05,
            multiplier: 10,
            number_of_epochs: epochs,
            patience: 100,
            delta: 0.0,
            hidden_dim: 32,
            layer_dim: 2,
            grad_clip_norm: Some(5.0),
            seed: crate::DEFAULT_SEED,
        }
    }

    pub fn weekly() -> Self {
        Self::preset(7, 1000)
    }

    pub fn biweekly() -> Self {
        Self::preset(14, 10_000)
    }

    pub fn monthly() -> Self {
        Self::preset(30, 10_000)
    }

    pub fn seasonal() -> Self {
        Self::preset(90, 10_000)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "weekly" => Some(Self::weekly()),
            "biweekly" | "bi-weekly" => Some(Self::biweekly()),
            "monthly" => Some(Self::monthly()),
            "seasonal" => Some(Self::seasonal()),
            _ => None,
        }
    }

    pub fn fractions(&self) -> [f64; 3] {
        [self.training_size, self.validation_size, self.test_size]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let [a, b, c] = self.fractions();
        if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {a}/{b}/{c} must be in [0,1] and sum to 1"));
        }
        if self.sequence_length == 0 || self.prediction_steps == 0 {
            return bad("sequence_length and prediction_steps must be >= 1".into());
        }
        if !(self.noise_level >= 0.0) {
            return bad("noise_level must be >= 0".into());
        }
        if self.batch_size == 0 || self.hidden_dim == 0 || self.layer_dim == 0 {
            return bad("batch_size, hidden_dim and layer_dim must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0) || !(self.delta >= 0.0) {
            return bad("learning_rate and delta must be >= 0".into());
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return bad("grad_clip_norm must be > 0".into());
            }
        }
        Ok(())
    }

    pub fn dims(&self, n_features: usize) -> Dims {
        Dims {
            input_dim: n_features,
            hidden_dim: self.hidden_dim,
            layer_dim: self.layer_dim,
            output_dim: n_features,
            prediction_steps: self.prediction_steps,
        }
    }
}

/// The original series followed by its noisy copies. Windows never cross
/// from one segment into the next.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub segments: Vec<Array2<f64>>,
}

impl Augmented {
    pub fn total_rows(&self) -> usize {
        self.segments.iter().map(|s| s.nrows()).sum()
    }

    pub fn concatenated(&self) -> Array2<f64> {
        let views: Vec<_> = self.segments.iter().map(|s| s.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("segments share a column count")
    }
}

/// Append `m` copies of `data` with independent Gaussian noise of standard
/// deviation `sigma` on every element. Columns flagged in `bounded` are
/// clamped back to `[0, 1]`.
pub fn augment_with_noise(
    data: ArrayView2<f64>,
    bounded: &[bool],
    sigma: f64,
    m: usize,
    seed: u64,
) -> Result<Augmented> {
    if bounded.len() != data.ncols() {
        return Err(Error::LengthMismatch {
            left: bounded.len(),
            right: data.ncols(),
        });
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise sigma must be >= 0, got {sigma}")));
    }
    let mut segments = vec![data.to_owned()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma checked");
    for _ in 0..m {
        let mut copy = data.to_owned();
        if sigma > 0.0 {
            for row in copy.rows_mut() {
                for (v, &b) in row.into_iter().zip(bounded) {
                    *v += normal.sample(&mut rng);
                    if b {
                        *v = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
        segments.push(copy);
    }
    Ok(Augmented { segments })
}

/// Noise augmentation on a feature matrix, clamping its bounded columns.
pub fn augment_features(fm: &FeatureMatrix, sigma: f64, m: usize, seed: u64) -> Result<Augmented> {
    let bounded: Vec<bool> = fm.kinds.iter().map(|k| k.is_bounded()).collect();
    augment_with_noise(fm.to_array().view(), &bounded, sigma, m, seed)
}

/// Input window and the horizon that immediately follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    /// `s × F`.
    pub x: Array2<f64>,
    /// `h × F`.
    pub y: Array2<f64>,
}

/// Slide a window over each segment: every sample has `s` input rows
/// ending at row `t` and the `h` rows after it as target.
pub fn make_sequences(data: &Augmented, s: usize, h: usize) -> Result<Vec<SequenceSample>> {
    if s == 0 || h == 0 {
        return Err(Error::InvalidConfig("sequence length and horizon must be >= 1".into()));
    }
    let mut out = Vec::new();
    for seg in &data.segments {
        let t = seg.nrows();
        if t < s + h {
            return Err(Error::SeriesTooShort { len: t, min: s + h });
        }
        for start in 0..=t - s - h {
            out.push(SequenceSample {
                x: seg.slice(s![start..start + s, ..]).to_owned(),
                y: seg.slice(s![start + s..start + s + h, ..]).to_owned(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Chronological split: the first `floor(f_train·n)` items train, the next
/// `floor(f_val·n)` validate and the remainder tests.
pub fn split_data<T>(samples: Vec<T>, fractions: [f64; 3]) -> Result<Split<T>> {
    let n = samples.len();
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("invalid split fractions {fractions:?}")));
    }
    // The small bias keeps exact products such as 0.6 · 5 from flooring low.
    let n_train = (fractions[0] * n as f64 + 1e-9).floor() as usize;
    let n_val = (fractions[1] * n as f64 + 1e-9).floor() as usize;
    let n_test = n.saturating_sub(n_train + n_val);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::EmptySplit {
            n,
            train: n_train,
            val: n_val,
            test: n_test,
        });
    }
    let mut rest = samples;
    let test = rest.split_off(n_train + n_val);
    let val = rest.split_off(n_train);
    Ok(Split {
        train: rest,
        val,
        test,
    })
}

/// Mean of squared differences over all elements.
pub fn mse_loss(pred: ArrayView3<f64>, target: ArrayView3<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    if pred.is_empty() {
        return Err(Error::ShapeMismatch("empty prediction".into()));
    }
    let sse: f64 = pred.iter().zip(target.iter()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sse / pred.len() as f64)
}

/// Stack samples into `batch × s × F` inputs and `batch × h × F` targets.
pub fn stack_batch<'a>(samples: impl IntoIterator<Item = &'a SequenceSample>) -> (Array3<f64>, Array3<f64>) {
    let samples: Vec<&SequenceSample> = samples.into_iter().collect();
    let first = samples.first().expect("non-empty batch");
    let (s, f) = first.x.dim();
    let h = first.y.nrows();
    let mut x = Array3::zeros((samples.len(), s, f));
    let mut y = Array3::zeros((samples.len(), h, first.y.ncols()));
    for (b, smp) in samples.iter().enumerate() {
        x.index_axis_mut(Axis(0), b).assign(&smp.x);
        y.index_axis_mut(Axis(0), b).assign(&smp.y);
    }
    (x, y)
}

/// MSE loss of a batch and its exact gradient w.r.t. every parameter.
pub fn backward(x: ArrayView3<f64>, y: ArrayView3<f64>, params: &ModelParams) -> Result<(f64, ModelParams)> {
    let dims = params.dims;
    let batch = x.shape()[0];
    let expect = (batch, dims.prediction_steps, dims.output_dim);
    if y.dim() != expect {
        return Err(Error::ShapeMismatch(format!("target {:?}, expected {expect:?}", y.dim())));
    }
    let (out, _, cache) = lstm::forward_cached(x, params, None)?;
    let target = y
        .to_shape((batch, dims.head_size()))
        .expect("contiguous reshape of target");
    let n = out.len() as f64;
    let resid = &out - &target;
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
    let d_out = resid.mapv(|r| 2.0 * r / n);
    let grads = lstm::backward(params, &cache, d_out.view());
    Ok((loss, grads))
}

fn first_non_finite(grads: &ModelParams) -> Option<String> {
    grads
        .tensors()
        .into_iter()
        .find(|(_, t)| t.iter().any(|v| !v.is_finite()))
        .map(|(name, _)| name)
}

/// Scale gradients so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let grads = grads.tensors();
    let m = state.m.tensors_mut();
    let v = state.v.tensors_mut();
    for (((p, (_, g)), m), v) in params.tensors_mut().into_iter().zip(grads).zip(m).zip(v) {
        for k in 0..p.len() {
            let gk = g[k];
            m[k] = b1 * m[k] + (1.0 - b1) * gk;
            v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Parameters saved at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub epoch: usize,
    pub val_loss: f64,
    pub is_best: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Lowest-validation-loss checkpoint, not the last one.
    pub best: Checkpoint,
    pub history: Vec<EpochLoss>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn epochs_run(&self) -> usize {
        self.history.len()
    }

    /// CSV `epoch,train_loss,val_loss`.
    pub fn write_history_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "train_loss", "val_loss"])?;
        for e in &self.history {
            w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.val_loss.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

const EVAL_CHUNK: usize = 256;

/// Mean squared error of `params` over `samples`.
pub fn evaluate_loss(params: &ModelParams, samples: &[SequenceSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut sse = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let (x, y) = stack_batch(chunk);
        let (pred, _) = lstm::forward(x.view(), params, None)?;
        sse += pred.iter().zip(y.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        count += pred.len();
    }
    Ok(sse / count as f64)
}

/// Seed offset for the batch-shuffling stream, kept apart from the
/// initialization and noise streams.
const SHUFFLE_STREAM: u64 = 0x5eed_0001;

/// Train from `initial` with mini-batch Adam and early stopping on the
/// validation loss.
pub fn train_loop(
    initial: ModelParams,
    train: &[SequenceSample],
    val: &[SequenceSample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptySplit {
            n: train.len() + val.len(),
            train: train.len(),
            val: val.len(),
            test: 0,
        });
    }
    let mut params = initial;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best: Option<Checkpoint> = None;
    let mut best_loss = f64::INFINITY;
    let mut since_best = 0usize;
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.number_of_epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for idx in order.chunks(config.batch_size) {
            let (x, y) = stack_batch(idx.iter().map(|&i| &train[i]));
            let (loss, mut grads) = backward(x.view(), y.view(), &params)?;
            if let Some(tensor) = first_non_finite(&grads) {
                return Err(Error::NonFiniteGradient { tensor, epoch });
            }
            if let Some(max) = config.grad_clip_norm {
                clip_global_norm(&mut grads, max);
            }
            adam_step(&mut params, &grads, &mut adam, config.learning_rate);
            weighted += loss * idx.len() as f64;
        }
        let train_loss = weighted / train.len() as f64;
        let val_loss = evaluate_loss(&params, val)?;
        history.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });

        if val_loss < best_loss - config.delta {
            best_loss = val_loss;
            since_best = 0;
            best = Some(Checkpoint {
                params: params.clone(),
                epoch,
                val_loss,
                is_best: true,
            });
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let best = best.ok_or_else(|| Error::MissingCheckpoint("no finite validation loss".into()))?;
    Ok(TrainOutcome {
        best,
        history,
        stopped_early,
    })
}

/// Everything needed to predict and evaluate later: the best parameters,
/// the configuration that produced them and how features were scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub checkpoint: Checkpoint,
    pub config: TrainConfig,
    pub kinds: Vec<FeatureKind>,
    pub normalization_maxima: NormalizationMaxima,
}

#[derive(Serialize, Deserialize)]
struct SavedModelDocument {
    epoch: usize,
    val_loss: f64,
    config: TrainConfig,
    features: Vec<FeatureKind>,
    normalization_maxima: NormalizationMaxima,
    params: ParamsDocument,
}

impl SavedModel {
    pub fn to_json(&self) -> Result<String> {
        let doc = SavedModelDocument {
            epoch: self.checkpoint.epoch,
            val_loss: self.checkpoint.val_loss,
            config: self.config.clone(),
            features: self.kinds.clone(),
            normalization_maxima: self.normalization_maxima,
            params: self.checkpoint.params.to_document(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SavedModelDocument = serde_json::from_str(text)?;
        Ok(Self {
            checkpoint: Checkpoint {
                params: ModelParams::from_document(&doc.params)?,
                epoch: doc.epoch,
                val_loss: doc.val_loss,
                is_best: true,
            },
            config: doc.config,
            kinds: doc.features,
            normalization_maxima: doc.normalization_maxima,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingCheckpoint(path.display().to_string()),
            _ => Error::Io(e),
        })?;
        Self::from_json(&text)
    }

    pub fn denorm_scales(&self) -> Vec<f64> {
        self.kinds
            .iter()
            .map(|k| k.denorm_scale(&self.normalization_maxima))
            .collect()
    }
}

/// Forecast the `h` days after the last `s` rows of `history`, mapping each
/// column back to physical units with `scales`.
pub fn predict_future(params: &ModelParams, history: ArrayView2<f64>, scales: &[f64]) -> Result<Array2<f64>> {
    let dims = params.dims;
    let s = history.nrows();
    if scales.len() != dims.output_dim {
        return Err(Error::LengthMismatch {
            left: scales.len(),
            right: dims.output_dim,
        });
    }
    if s == 0 {
        return Err(Error::SeriesTooShort { len: 0, min: 1 });
    }
    let x = history.insert_axis(Axis(0));
    let (y, _) = lstm::forward(x, params, None)?;
    let mut out = y.index_axis(Axis(0), 0).to_owned();
    for (mut col, &k) in out.columns_mut().into_iter().zip(scales) {
        col.mapv_inplace(|v| v * k);
    }
    Ok(out)
}

/// Forecast from the tail of a feature matrix with a saved model.
pub fn forecast(model: &SavedModel, features: &FeatureMatrix) -> Result<Array2<f64>> {
    let s = model.config.sequence_length;
    if features.kinds != model.kinds {
        return Err(Error::ShapeMismatch("feature columns differ from the trained model".into()));
    }
    let data = features.to_array();
    if data.nrows() < s {
        return Err(Error::SeriesTooShort {
            len: data.nrows(),
            min: s,
        });
    }
    let tail = data.slice(s![data.nrows() - s.., ..]);
    predict_future(&model.checkpoint.params, tail, &model.denorm_scales())
}

/// Windowed and split samples for a feature matrix under `config`.
pub fn prepare_samples(fm: &FeatureMatrix, config: &TrainConfig) -> Result<Split<SequenceSample>> {
    config.validate()?;
    let aug = augment_features(fm, config.noise_level, config.multiplier, config.seed)?;
    let samples = make_sequences(&aug, config.sequence_length, config.prediction_steps)?;
    split_data(samples, config.fractions())
}

/// Result of [`fit`]: the saved model, the loss curves and the held-out
/// test samples.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: SavedModel,
    pub outcome: TrainOutcome,
    pub test: Vec<SequenceSample>,
}

/// Augment, window, split, initialize and train.
pub fn fit(fm: &FeatureMatrix, config: &TrainConfig) -> Result<FitResult> {
    let split = prepare_samples(fm, config)?;
    let params = lstm::init_params(config.dims(fm.n_features()), config.seed)?;
    let outcome = train_loop(params, &split.train, &split.val, config)?;
    Ok(FitResult {
        model: SavedModel {
            checkpoint: outcome.best.clone(),
            config: config.clone(),
            kinds: fm.kinds.clone(),
            normalization_maxima: fm.normalization_maxima,
        },
        outcome,
        test: split.test,
    })
}
