//! Fully connected velocity network with hand-written backpropagation and
//! an Adam optimizer.
//!
//! The network maps `[state, t, sin 2πt, cos 2πt, sin 4πt, cos 4πt, history]`
//! through `tanh` hidden layers to a linear head of width `state_dim`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw time plus two sin/cos pairs.
pub const TIME_FEATURES: usize = 5;

/// Shapes of a velocity network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    /// Dimension of the integrated state (`d`, or `2d` for the latent
    /// variant, or `H·d` for the trajectory-space baseline).
    pub state_dim: usize,
    /// `K * obs_dim`.
    pub history_width: usize,
    pub hidden: Vec<usize>,
}

impl NetDims {
    pub fn input_dim(&self) -> usize {
        self.state_dim + TIME_FEATURES + self.history_width
    }

    pub fn output_dim(&self) -> usize {
        self.state_dim
    }

    pub fn default_hidden() -> Vec<usize> {
        vec![128, 128, 128]
    }
}

pub fn write_features(state: &[f64], t: f64, history: &[f64], out: &mut [f64]) {
    let n = state.len();
    out[..n].copy_from_slice(state);
    let w = 2.0 * PI * t;
    out[n] = t;
    out[n + 1] = w.sin();
    out[n + 2] = w.cos();
    out[n + 3] = (2.0 * w).sin();
    out[n + 4] = (2.0 * w).cos();
    out[n + TIME_FEATURES..].copy_from_slice(history);
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `(out, in)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Network parameters; gradients and optimizer moments reuse this shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<FlatLayer>", try_from = "Vec<FlatLayer>")]
pub struct Mlp {
    layers: Vec<Dense>,
}

#[derive(Serialize, Deserialize)]
struct FlatLayer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl From<Mlp> for Vec<FlatLayer> {
    fn from(m: Mlp) -> Self {
        m.layers
            .into_iter()
            .map(|l| FlatLayer {
                rows: l.weight.nrows(),
                cols: l.weight.ncols(),
                weights: l.weight.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect()
    }
}

impl TryFrom<Vec<FlatLayer>> for Mlp {
    type Error = String;

    fn try_from(flat: Vec<FlatLayer>) -> std::result::Result<Self, String> {
        let mut layers = Vec::with_capacity(flat.len());
        for (i, l) in flat.into_iter().enumerate() {
            if l.bias.len() != l.rows {
                return Err(format!("layer {i}: bias length {} != rows {}", l.bias.len(), l.rows));
            }
            let weight = Array2::from_shape_vec((l.rows, l.cols), l.weights)
                .map_err(|e| format!("layer {i}: {e}"))?;
            layers.push(Dense {
                weight,
                bias: Array1::from(l.bias),
            });
        }
        Mlp::from_layers(layers).map_err(|e| e.to_string())
    }
}

/// Cached activations of a batched forward pass.
struct Trace {
    // activations[0] is the input; activations[l + 1] is the output of layer l
    activations: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("network has no layers"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.nrows() == 0 || l.weight.ncols() == 0 {
                return Err(Error::Empty("zero-width layer"));
            }
            Error::check_dim("layer bias", l.weight.nrows(), l.bias.len())?;
            if i > 0 {
                Error::check_dim("layer input", layers[i - 1].weight.nrows(), l.weight.ncols())?;
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("network parameter"));
            }
        }
        Ok(Mlp { layers })
    }

    /// Fan-in scaled uniform weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init(seed: u64, dims: &NetDims) -> Result<Self> {
        if dims.state_dim == 0 || dims.hidden.contains(&0) {
            return Err(Error::Empty("zero-width layer"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![dims.input_dim()];
        widths.extend_from_slice(&dims.hidden);
        widths.push(dims.output_dim());
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                Dense {
                    weight: Array2::from_shape_simple_fn((fan_out, fan_in), || {
                        rng.random_range(-bound..bound)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Mlp::from_layers(layers)
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(<[f64]>::len).sum()
    }

    /// Weight and bias buffers in a fixed order.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weight.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weight.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len())
    }

    fn trace(&self, x: ArrayView2<f64>) -> Trace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = activations[i].dot(&l.weight.t());
            z += &l.bias;
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(z);
        }
        Trace { activations }
    }

    /// Batched forward pass over rows of `x`.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Error::check_dim("network input", self.input_dim(), x.ncols())?;
        Ok(self.trace(x).activations.pop().expect("non-empty"))
    }

    /// `v_θ(state, t | history)` for a single input.
    pub fn forward(&self, state: &[f64], t: f64, history: &[f64]) -> Result<Vec<f64>> {
        let n = state.len() + TIME_FEATURES + history.len();
        Error::check_dim("network input", self.input_dim(), n)?;
        let mut x = Array2::zeros((1, n));
        write_features(state, t, history, x.as_slice_mut().expect("standard layout"));
        Ok(self.forward_batch(x.view())?.into_raw_vec_and_offset().0)
    }

    /// Mean over the batch of `‖f(x) − target‖²`, with its exact gradient.
    pub fn loss_grad(&self, batch: &Batch) -> Result<(f64, Mlp)> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::Empty("batch"));
        }
        Error::check_dim("network input", self.input_dim(), batch.inputs.ncols())?;
        Error::check_dim("target", self.output_dim(), batch.targets.ncols())?;
        let trace = self.trace(batch.inputs.view());
        let out = &trace.activations[self.layers.len()];
        let resid = out - &batch.targets;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / b as f64;

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = resid * (2.0 / b as f64);
        for l in (0..self.layers.len()).rev() {
            let input = &trace.activations[l];
            let dw = g.t().dot(input);
            let db = g.sum_axis(Axis(0));
            if l > 0 {
                let mut next = g.dot(&self.layers[l].weight);
                next.zip_mut_with(input, |gi, &a| *gi *= 1.0 - a * a);
                g = next;
            }
            grads.push(Dense { weight: dw, bias: db });
        }
        grads.reverse();
        Ok((loss, Mlp { layers: grads }))
    }

    pub fn loss(&self, batch: &Batch) -> Result<f64> {
        let out = self.forward_batch(batch.inputs.view())?;
        Error::check_dim("target", self.output_dim(), batch.targets.ncols())?;
        let b = batch.len().max(1);
        Ok((out - &batch.targets).iter().map(|r| r * r).sum::<f64>() / b as f64)
    }
}

/// Network inputs (features already assembled) and regression targets.
#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

/// One regression example: the state, flow time, flattened history and the
/// target velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub state: Vec<f64>,
    pub t: f64,
    pub history: Vec<f64>,
    pub target: Vec<f64>,
}

impl Batch {
    pub fn from_samples(samples: &[TrainingSample]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("batch"))?;
        let in_dim = first.state.len() + TIME_FEATURES + first.history.len();
        let out_dim = first.target.len();
        let mut inputs = Array2::zeros((samples.len(), in_dim));
        let mut targets = Array2::zeros((samples.len(), out_dim));
        for (i, s) in samples.iter().enumerate() {
            Error::check_dim("sample input", in_dim, s.state.len() + TIME_FEATURES + s.history.len())?;
            Error::check_dim("sample target", out_dim, s.target.len())?;
            let mut row = inputs.row_mut(i);
            write_features(&s.state, s.t, &s.history, row.as_slice_mut().expect("contiguous row"));
            targets.row_mut(i).assign(&ndarray::ArrayView1::from(&s.target[..]));
        }
        Ok(Batch { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators mirroring the parameter shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Mlp,
    pub v: Mlp,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &Mlp) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut Mlp, state: &mut AdamState, grads: &Mlp, cfg: &AdamConfig) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(Error::DimensionMismatch {
            what: "adam tensors",
            expected: params.num_params(),
            found: grads.num_params(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            p[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}
