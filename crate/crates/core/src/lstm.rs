//! Stacked LSTM with a fully connected multi-step head.
//!
//! Each layer computes, for input `x_t` and previous state `(h, c)`:
//!
//! ```text
//! i = σ(x W_xi + h W_hi + b_i)     f = σ(x W_xf + h W_hf + b_f)
//! o = σ(x W_xo + h W_ho + b_o)     g = tanh(x W_xc + h W_hc + b_c)
//! c' = f ⊙ c + i ⊙ g               h' = o ⊙ tanh(c')
//! ```
//!
//! The four gate matrices of a layer are stored side by side as one
//! `in × 4h` (and `h × 4h`) matrix with column blocks `[i | f | o | c]`.
//! Layer `k` consumes the hidden sequence of layer `k − 1`. The head reads
//! only the top layer's last hidden state and its output is reshaped to
//! `(batch, prediction_steps, output_dim)`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis, Zip};
use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Input,
    Forget,
    Output,
    Cell,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Input, Gate::Forget, Gate::Output, Gate::Cell];

    fn block(self) -> usize {
        self as usize
    }

    fn suffix(self) -> char {
        match self {
            Gate::Input => 'i',
            Gate::Forget => 'f',
            Gate::Output => 'o',
            Gate::Cell => 'c',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layer_dim: usize,
    pub output_dim: usize,
    pub prediction_steps: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("layer_dim", self.layer_dim),
            ("output_dim", self.output_dim),
            ("prediction_steps", self.prediction_steps),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidDims(format!("{name} must be >= 1")));
        }
        Ok(())
    }

    pub fn head_size(&self) -> usize {
        self.output_dim * self.prediction_steps
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `in × 4h`, gate blocks `[i | f | o | c]`.
    pub w_x: Array2<f64>,
    /// `h × 4h`.
    pub w_h: Array2<f64>,
    /// `4h`.
    pub b: Array1<f64>,
}

impl LayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_x: Array2::zeros((input, 4 * hidden)),
            w_h: Array2::zeros((hidden, 4 * hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.nrows()
    }

    pub fn input(&self) -> usize {
        self.w_x.nrows()
    }

    pub fn w_x_gate(&self, g: Gate) -> ArrayView2<'_, f64> {
        let h = self.hidden();
        self.w_x.slice(s![.., g.block() * h..(g.block() + 1) * h])
    }

    pub fn w_h_gate(&self, g: Gate) -> ArrayView2<'_, f64> {
        let h = self.hidden();
        self.w_h.slice(s![.., g.block() * h..(g.block() + 1) * h])
    }

    pub fn b_gate(&self, g: Gate) -> ndarray::ArrayView1<'_, f64> {
        let h = self.hidden();
        self.b.slice(s![g.block() * h..(g.block() + 1) * h])
    }

    pub fn b_gate_mut(&mut self, g: Gate) -> ndarray::ArrayViewMut1<'_, f64> {
        let h = self.hidden();
        self.b.slice_mut(s![g.block() * h..(g.block() + 1) * h])
    }

    pub fn set_gate(&mut self, g: Gate, w_x: ArrayView2<f64>, w_h: ArrayView2<f64>, b: &[f64]) {
        let h = self.hidden();
        let cols = g.block() * h..(g.block() + 1) * h;
        self.w_x.slice_mut(s![.., cols.clone()]).assign(&w_x);
        self.w_h.slice_mut(s![.., cols.clone()]).assign(&w_h);
        self.b
            .slice_mut(s![cols])
            .assign(&ndarray::ArrayView1::from(b));
    }
}

/// All weights of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    pub layers: Vec<LayerParams>,
    /// `h × (output_dim · prediction_steps)`.
    pub fc_weight: Array2<f64>,
    pub fc_bias: Array1<f64>,
}

impl ModelParams {
    pub fn zeros(dims: Dims) -> Result<Self> {
        dims.validate()?;
        let layers = (0..dims.layer_dim)
            .map(|l| LayerParams::zeros(dims.layer_input(l), dims.hidden_dim))
            .collect();
        Ok(Self {
            dims,
            seed: 0,
            layers,
            fc_weight: Array2::zeros((dims.hidden_dim, dims.head_size())),
            fc_bias: Array1::zeros(dims.head_size()),
        })
    }

    /// Same shapes, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.dims).expect("dims already validated");
        z.seed = self.seed;
        z
    }

    /// Every tensor as a flat row-major slice, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for (l, p) in self.layers.iter().enumerate() {
            out.push((format!("layers.{l}.w_x"), p.w_x.as_slice().expect("standard layout")));
            out.push((format!("layers.{l}.w_h"), p.w_h.as_slice().expect("standard layout")));
            out.push((format!("layers.{l}.b"), p.b.as_slice().expect("standard layout")));
        }
        out.push(("fc.weight".into(), self.fc_weight.as_slice().expect("standard layout")));
        out.push(("fc.bias".into(), self.fc_bias.as_slice().expect("standard layout")));
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * self.layers.len() + 2);
        for p in self.layers.iter_mut() {
            out.push(p.w_x.as_slice_mut().expect("standard layout"));
            out.push(p.w_h.as_slice_mut().expect("standard layout"));
            out.push(p.b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.fc_weight.as_slice_mut().expect("standard layout"));
        out.push(self.fc_bias.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Uniform `[−1/√h, 1/√h]` weights, forget-gate biases 1, other biases 0.
pub fn init_params(dims: Dims, seed: u64) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(dims)?;
    p.seed = seed;
    let bound = 1.0 / (dims.hidden_dim as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in p.layers.iter_mut() {
        layer.w_x.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
        layer.w_h.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
        layer.b_gate_mut(Gate::Forget).fill(1.0);
    }
    p.fc_weight.iter_mut().for_each(|w| *w = dist.sample(&mut rng));
    Ok(p)
}

/// Per-layer hidden and cell state, each `batch × h`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
}

impl HiddenState {
    pub fn zeros(dims: &Dims, batch: usize) -> Self {
        let z = Array2::zeros((batch, dims.hidden_dim));
        Self {
            h: vec![z.clone(); dims.layer_dim],
            c: vec![z; dims.layer_dim],
        }
    }
}

/// Output of one cell step.
#[derive(Debug, Clone)]
pub struct CellStep {
    pub h: Array2<f64>,
    pub c: Array2<f64>,
    /// Post-activation gates `[i | f | o | g]`, `batch × 4h`.
    pub gates: Array2<f64>,
    pub tanh_c: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_finite(a: &ArrayView2<f64>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteInput)
    }
}

/// One LSTM step for a batch.
pub fn cell_forward(
    x: ArrayView2<f64>,
    h_prev: ArrayView2<f64>,
    c_prev: ArrayView2<f64>,
    p: &LayerParams,
) -> Result<CellStep> {
    let (batch, hid) = (x.nrows(), p.hidden());
    if x.ncols() != p.input() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, layer expects {}",
            x.ncols(),
            p.input()
        )));
    }
    for (name, st) in [("h", &h_prev), ("c", &c_prev)] {
        if st.dim() != (batch, hid) {
            return Err(Error::ShapeMismatch(format!(
                "{name} state is {:?}, expected {:?}",
                st.dim(),
                (batch, hid)
            )));
        }
    }
    check_finite(&x)?;
    check_finite(&h_prev)?;
    check_finite(&c_prev)?;
    Ok(cell_step(x, h_prev, c_prev, p))
}

fn cell_step(x: ArrayView2<f64>, h_prev: ArrayView2<f64>, c_prev: ArrayView2<f64>, p: &LayerParams) -> CellStep {
    let hid = p.hidden();
    let batch = x.nrows();
    let mut z = Array2::from_shape_fn((batch, 4 * hid), |(_, k)| p.b[k]);
    general_mat_mul(1.0, &x, &p.w_x, 1.0, &mut z);
    general_mat_mul(1.0, &h_prev, &p.w_h, 1.0, &mut z);

    let mut c = Array2::zeros((batch, hid));
    let mut tanh_c = Array2::zeros((batch, hid));
    let mut h = Array2::zeros((batch, hid));
    for b in 0..batch {
        let mut row = z.row_mut(b);
        let row = row.as_slice_mut().expect("standard layout");
        for v in &mut row[..3 * hid] {
            *v = sigmoid(*v);
        }
        for v in &mut row[3 * hid..] {
            *v = v.tanh();
        }
        for k in 0..hid {
            let (i, f, o, g) = (row[k], row[hid + k], row[2 * hid + k], row[3 * hid + k]);
            let ct = f * c_prev[[b, k]] + i * g;
            let tc = ct.tanh();
            c[[b, k]] = ct;
            tanh_c[[b, k]] = tc;
            h[[b, k]] = o * tc;
        }
    }
    CellStep {
        h,
        c,
        gates: z,
        tanh_c,
    }
}

/// Values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    /// Input at each step, `batch × in`.
    inputs: Vec<Array2<f64>>,
    /// `h[0]` is the initial state, `h[t + 1]` the state after step `t`.
    h: Vec<Array2<f64>>,
    c: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
    tanh_c: Vec<Array2<f64>>,
}

fn check_input(x: &ArrayView3<f64>, params: &ModelParams, init: Option<&HiddenState>) -> Result<()> {
    let (batch, seq, d) = x.dim();
    let dims = &params.dims;
    if seq == 0 || batch == 0 {
        return Err(Error::ShapeMismatch(format!("empty input {:?}", x.dim())));
    }
    if d != dims.input_dim {
        return Err(Error::ShapeMismatch(format!(
            "input has {d} features, model expects {}",
            dims.input_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if let Some(st) = init {
        let expect = (batch, dims.hidden_dim);
        let ok = st.h.len() == dims.layer_dim
            && st.c.len() == dims.layer_dim
            && st.h.iter().chain(&st.c).all(|a| a.dim() == expect);
        if !ok {
            return Err(Error::ShapeMismatch("initial state does not match dims".into()));
        }
    }
    Ok(())
}

/// Forward pass keeping intermediates. Returns the flat head output
/// `batch × (prediction_steps · output_dim)`, the final state and the cache.
pub fn forward_cached(
    x: ArrayView3<f64>,
    params: &ModelParams,
    init: Option<&HiddenState>,
) -> Result<(Array2<f64>, HiddenState, ForwardCache)> {
    check_input(&x, params, init)?;
    let (batch, seq, _) = x.dim();
    let zero_state;
    let init = match init {
        Some(s) => s,
        None => {
            zero_state = HiddenState::zeros(&params.dims, batch);
            &zero_state
        }
    };

    let mut caches = Vec::with_capacity(params.layers.len());
    let mut inputs: Vec<Array2<f64>> = (0..seq)
        .map(|t| x.index_axis(Axis(1), t).to_owned())
        .collect();
    for (l, p) in params.layers.iter().enumerate() {
        let mut cache = LayerCache {
            inputs: Vec::new(),
            h: vec![init.h[l].clone()],
            c: vec![init.c[l].clone()],
            gates: Vec::with_capacity(seq),
            tanh_c: Vec::with_capacity(seq),
        };
        for x_t in &inputs {
            let step = cell_step(
                x_t.view(),
                cache.h.last().expect("non-empty").view(),
                cache.c.last().expect("non-empty").view(),
                p,
            );
            cache.h.push(step.h);
            cache.c.push(step.c);
            cache.gates.push(step.gates);
            cache.tanh_c.push(step.tanh_c);
        }
        let next_inputs = cache.h[1..].to_vec();
        cache.inputs = std::mem::replace(&mut inputs, next_inputs);
        caches.push(cache);
    }

    let top = caches.last().expect("layer_dim >= 1");
    let last_h = top.h.last().expect("seq >= 1");
    let mut out = Array2::from_shape_fn((batch, params.dims.head_size()), |(_, k)| params.fc_bias[k]);
    general_mat_mul(1.0, last_h, &params.fc_weight, 1.0, &mut out);

    let state = HiddenState {
        h: caches.iter().map(|c| c.h.last().expect("seq >= 1").clone()).collect(),
        c: caches.iter().map(|c| c.c.last().expect("seq >= 1").clone()).collect(),
    };
    Ok((out, state, ForwardCache { layers: caches }))
}

/// Forward pass. `x` is `batch × seq_len × input_dim`; the result is
/// `batch × prediction_steps × output_dim` plus the final state. A missing
/// initial state is zero.
pub fn forward(
    x: ArrayView3<f64>,
    params: &ModelParams,
    init: Option<&HiddenState>,
) -> Result<(Array3<f64>, HiddenState)> {
    let (flat, state, _) = forward_cached(x, params, init)?;
    Ok((reshape_head(flat, &params.dims), state))
}

/// `batch × (steps · out)` → `batch × steps × out`.
pub fn reshape_head(flat: Array2<f64>, dims: &Dims) -> Array3<f64> {
    let batch = flat.nrows();
    flat.into_shape_with_order((batch, dims.prediction_steps, dims.output_dim))
        .expect("head size is steps * out")
}

/// Backpropagate `d_out` (gradient w.r.t. the flat head output) through the
/// head, every layer and every time step. Gradients w.r.t. the initial
/// state are discarded.
pub fn backward(params: &ModelParams, cache: &ForwardCache, d_out: ArrayView2<f64>) -> ModelParams {
    let mut grads = params.zeros_like();
    let top = cache.layers.last().expect("layer_dim >= 1");
    let seq = top.gates.len();
    let batch = d_out.nrows();
    let hid = params.dims.hidden_dim;

    general_mat_mul(1.0, &top.h[seq].t(), &d_out, 1.0, &mut grads.fc_weight);
    grads.fc_bias = d_out.sum_axis(Axis(0));

    let mut d_h_above: Vec<Array2<f64>> = vec![Array2::zeros((batch, hid)); seq];
    d_h_above[seq - 1] = d_out.dot(&params.fc_weight.t());

    let mut dz = Array2::<f64>::zeros((batch, 4 * hid));
    for (l, (p, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        let g = &mut grads.layers[l];
        let mut dh_next = Array2::<f64>::zeros((batch, hid));
        let mut dc_next = Array2::<f64>::zeros((batch, hid));
        let mut d_inputs = Vec::with_capacity(if l > 0 { seq } else { 0 });
        for t in (0..seq).rev() {
            let gates = &lc.gates[t];
            let tanh_c = &lc.tanh_c[t];
            let c_prev = &lc.c[t];
            let d_above = &d_h_above[t];
            for b in 0..batch {
                let gr = gates.row(b);
                let gr = gr.as_slice().expect("standard layout");
                let mut dzr = dz.row_mut(b);
                let dzr = dzr.as_slice_mut().expect("standard layout");
                for k in 0..hid {
                    let (i, f, o, gg) = (gr[k], gr[hid + k], gr[2 * hid + k], gr[3 * hid + k]);
                    let tc = tanh_c[[b, k]];
                    let dh = d_above[[b, k]] + dh_next[[b, k]];
                    let dc = dc_next[[b, k]] + dh * o * (1.0 - tc * tc);
                    dzr[k] = dc * gg * i * (1.0 - i);
                    dzr[hid + k] = dc * c_prev[[b, k]] * f * (1.0 - f);
                    dzr[2 * hid + k] = dh * tc * o * (1.0 - o);
                    dzr[3 * hid + k] = dc * i * (1.0 - gg * gg);
                    dc_next[[b, k]] = dc * f;
                }
            }
            general_mat_mul(1.0, &lc.inputs[t].t(), &dz, 1.0, &mut g.w_x);
            general_mat_mul(1.0, &lc.h[t].t(), &dz, 1.0, &mut g.w_h);
            Zip::from(&mut g.b)
                .and(dz.columns())
                .for_each(|gb, col| *gb += col.sum());
            dh_next = dz.dot(&p.w_h.t());
            if l > 0 {
                d_inputs.push(dz.dot(&p.w_x.t()));
            }
        }
        if l > 0 {
            d_inputs.reverse();
            d_h_above = d_inputs;
        }
    }
    grads
}

/// Serialized form of [`ModelParams`]: dims, seed and every gate matrix in
/// row-major order under stable names (`layers.{k}.w_xi`, …, `fc.weight`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsDocument {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub dims: Dims,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub const PARAMS_FORMAT: &str = "evload-lstm";
pub const PARAMS_VERSION: u32 = 1;

impl ModelParams {
    pub fn to_document(&self) -> ParamsDocument {
        let mut tensors = Vec::new();
        let mut push = |name: String, a: ArrayView2<f64>| {
            tensors.push(NamedTensor {
                name,
                shape: vec![a.nrows(), a.ncols()],
                data: a.iter().copied().collect(),
            });
        };
        for (l, p) in self.layers.iter().enumerate() {
            for g in Gate::ALL {
                push(format!("layers.{l}.w_x{}", g.suffix()), p.w_x_gate(g));
            }
            for g in Gate::ALL {
                push(format!("layers.{l}.w_h{}", g.suffix()), p.w_h_gate(g));
            }
            for g in Gate::ALL {
                let b = p.b_gate(g);
                push(format!("layers.{l}.b_{}", g.suffix()), b.insert_axis(Axis(0)));
            }
        }
        push("fc.weight".into(), self.fc_weight.view());
        push("fc.bias".into(), self.fc_bias.view().insert_axis(Axis(0)));
        ParamsDocument {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            seed: self.seed,
            dims: self.dims,
            tensors,
        }
    }

    pub fn from_document(doc: &ParamsDocument) -> Result<Self> {
        if doc.format != PARAMS_FORMAT || doc.version != PARAMS_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint {} v{}",
                doc.format, doc.version
            )));
        }
        let mut p = ModelParams::zeros(doc.dims)?;
        p.seed = doc.seed;
        let get = |name: &str, rows: usize, cols: usize| -> Result<Array2<f64>> {
            let t = doc
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Parse(format!("missing tensor `{name}`")))?;
            if t.shape != [rows, cols] || t.data.len() != rows * cols {
                return Err(Error::ShapeMismatch(format!(
                    "tensor `{name}` has shape {:?}, expected [{rows}, {cols}]",
                    t.shape
                )));
            }
            Ok(Array2::from_shape_vec((rows, cols), t.data.clone()).expect("checked length"))
        };
        let hid = doc.dims.hidden_dim;
        for (l, layer) in p.layers.iter_mut().enumerate() {
            let inp = layer.input();
            for g in Gate::ALL {
                let c = g.suffix();
                let wx = get(&format!("layers.{l}.w_x{c}"), inp, hid)?;
                let wh = get(&format!("layers.{l}.w_h{c}"), hid, hid)?;
                let b = get(&format!("layers.{l}.b_{c}"), 1, hid)?;
                layer.set_gate(g, wx.view(), wh.view(), b.as_slice().expect("standard layout"));
            }
        }
        let head = doc.dims.head_size();
        p.fc_weight = get("fc.weight", hid, head)?;
        p.fc_bias = get("fc.bias", 1, head)?.into_shape_with_order(head).expect("1 × head");
        Ok(p)
    }
}
