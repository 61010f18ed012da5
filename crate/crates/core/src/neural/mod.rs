//! Multilayer perceptron with leaky ReLU hidden layers and a linear scalar output.
//!
//! Training loss for a batch `(X, y)` with boundary rows `b`:
//!
//! ```text
//! L = mean |f(X) - y| + λ Σ_b ε_b (max(0, lo_b - f(x_b)) + max(0, f(x_b) - hi_b)) + l2 Σ ‖W‖²
//! ```
//!
//! Subgradients of `|·|` and of the hinge are taken as 0 at their kinks.
//! Biases are not regularized.

mod adam;
mod checkpoint;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use train::train_epochs;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, tag};

pub const DEFAULT_HIDDEN: [usize; 7] = [50; 7];
pub const DEFAULT_SLOPE: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("input width must be at least 1")]
    ZeroWidth,
    #[error("input width {got} does not match model width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("{rows} rows but {labels} labels")]
    LabelMismatch { rows: usize, labels: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("parameter shapes do not match")]
    ShapeMismatch,
    #[error("invalid loss settings: {0}")]
    InvalidSpec(String),
    #[error("boundary terms are inconsistent: {0}")]
    InvalidBoundary(String),
    #[error("checkpoint i/o: {0}")]
    Io(String),
    #[error("not a checkpoint file: {0}")]
    Format(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u64, expected: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `fan_in × fan_out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weights: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.weights.dim() == other.weights.dim() && self.bias.len() == other.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    /// Hidden layers followed by the output layer.
    pub layers: Vec<Dense>,
    pub slope: f64,
    pub input_width: usize,
    pub seed: u64,
}

pub fn leaky_relu(v: f64, slope: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

pub fn init_mlp(input_width: usize, seed: u64) -> Result<MlpModel, NeuralError> {
    init_mlp_with(input_width, &DEFAULT_HIDDEN, seed)
}

pub fn init_mlp_with(input_width: usize, hidden: &[usize], seed: u64) -> Result<MlpModel, NeuralError> {
    let mut model = MlpModel::zeros(input_width, hidden)?;
    model.seed = seed;
    let mut rng = stream(seed, &[tag::INIT]);
    for layer in &mut model.layers {
        let a = (6.0 / layer.fan_in() as f64).sqrt();
        layer.weights.mapv_inplace(|_| rng.random_range(-a..=a));
    }
    Ok(model)
}

struct Trace {
    /// `inputs[l]` feeds layer `l`.
    inputs: Vec<Array2<f64>>,
    /// Hidden pre-activations.
    pre: Vec<Array2<f64>>,
    output: Array1<f64>,
}

impl MlpModel {
    pub fn zeros(input_width: usize, hidden: &[usize]) -> Result<Self, NeuralError> {
        if input_width == 0 || hidden.contains(&0) {
            return Err(NeuralError::ZeroWidth);
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_width;
        for &h in hidden {
            layers.push(Dense::zeros(fan_in, h));
            fan_in = h;
        }
        layers.push(Dense::zeros(fan_in, 1));
        Ok(Self { layers, slope: DEFAULT_SLOPE, input_width, seed: 0 })
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(Dense::fan_out).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn check_shapes(&self) -> Result<(), NeuralError> {
        let mut fan_in = self.input_width;
        for l in &self.layers {
            if l.fan_in() != fan_in || l.bias.len() != l.fan_out() {
                return Err(NeuralError::ShapeMismatch);
            }
            fan_in = l.fan_out();
        }
        if fan_in != 1 {
            return Err(NeuralError::ShapeMismatch);
        }
        Ok(())
    }

    /// Flattened parameters: per layer, weights row-major then bias.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied()).collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<(), NeuralError> {
        if values.len() != self.n_params() {
            return Err(NeuralError::ShapeMismatch);
        }
        let mut it = values.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<f64, NeuralError> {
        let row = x.insert_axis(Axis(0));
        Ok(self.forward_batch(row)?[0])
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>, NeuralError> {
        self.check_input(x)?;
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights);
            z += &layer.bias;
            if l < last {
                z.mapv_inplace(|v| leaky_relu(v, self.slope));
            }
            a = z;
        }
        Ok(a.remove_axis(Axis(1)))
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<(), NeuralError> {
        if x.ncols() != self.input_width {
            return Err(NeuralError::WidthMismatch { expected: self.input_width, got: x.ncols() });
        }
        Ok(())
    }

    fn trace(&self, x: ArrayView2<'_, f64>) -> Trace {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        inputs.push(x.to_owned());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = inputs[l].dot(&layer.weights);
            z += &layer.bias;
            if l < last {
                inputs.push(z.mapv(|v| leaky_relu(v, self.slope)));
                pre.push(z);
            } else {
                return Trace { inputs, pre, output: z.remove_axis(Axis(1)) };
            }
        }
        unreachable!("model has an output layer")
    }

    /// Accumulates `∂(Σ_i d_i f(x_i))/∂θ` into `grads`.
    fn backward(&self, trace: &Trace, upstream: &Array1<f64>, grads: &mut Gradients) {
        let mut delta = upstream.view().insert_axis(Axis(1)).to_owned();
        for l in (0..self.layers.len()).rev() {
            let g = &mut grads.layers[l];
            general_mat_mul(1.0, &trace.inputs[l].t(), &delta, 1.0, &mut g.weights);
            g.bias += &delta.sum_axis(Axis(0));
            if l > 0 {
                let mut next = delta.dot(&self.layers[l].weights.t());
                let slope = self.slope;
                Zip::from(&mut next).and(&trace.pre[l - 1]).for_each(|d, &z| {
                    if z < 0.0 {
                        *d *= slope;
                    }
                });
                delta = next;
            }
        }
    }

    pub fn weight_norm_sq(&self) -> f64 {
        self.layers.iter().map(|l| l.weights.iter().map(|w| w * w).sum::<f64>()).sum()
    }
}

/// Gradient with the same layout as [`MlpModel::layers`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self { layers: model.layers.iter().map(|l| Dense::zeros(l.fan_in(), l.fan_out())).collect() }
    }

    pub fn matches(&self, model: &MlpModel) -> bool {
        self.layers.len() == model.layers.len() && self.layers.iter().zip(&model.layers).all(|(a, b)| a.same_shape(b))
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub lambda: f64,
    pub l2: f64,
    pub batch_size: usize,
}

impl Default for LossSpec {
    fn default() -> Self {
        Self { lambda: 1.0, l2: 1e-4, batch_size: 128 }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(NeuralError::InvalidSpec(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(NeuralError::InvalidSpec(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if self.batch_size == 0 {
            return Err(NeuralError::InvalidSpec("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Normalized boundary rows with their intervals and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTerms {
    pub rows: Array2<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub epsilon: Vec<f64>,
}

impl BoundaryTerms {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    fn validate(&self) -> Result<(), NeuralError> {
        let n = self.rows.nrows();
        if self.lower.len() != n || self.upper.len() != n || self.epsilon.len() != n {
            return Err(NeuralError::InvalidBoundary("interval count differs from row count".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !self.rows.iter().all(|x| x.is_finite()) || !finite(&self.lower) || !finite(&self.upper) || !finite(&self.epsilon) {
            return Err(NeuralError::NonFinite("boundary terms"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub residual: f64,
    pub penalty: f64,
    pub regularization: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.residual + self.penalty + self.regularization
    }
}

pub fn hinge(f: f64, lower: f64, upper: f64) -> f64 {
    (lower - f).max(0.0) + (f - upper).max(0.0)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn loss_and_grad(
    model: &MlpModel,
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    boundary: Option<&BoundaryTerms>,
    spec: &LossSpec,
) -> Result<(LossParts, Gradients), NeuralError> {
    spec.validate()?;
    if x.nrows() == 0 {
        return Err(NeuralError::EmptyBatch);
    }
    if x.nrows() != y.len() {
        return Err(NeuralError::LabelMismatch { rows: x.nrows(), labels: y.len() });
    }
    model.check_input(x)?;
    if !x.iter().all(|v| v.is_finite()) {
        return Err(NeuralError::NonFinite("batch features"));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(NeuralError::NonFinite("batch labels"));
    }

    let mut grads = Gradients::zeros_like(model);
    let n = x.nrows() as f64;
    let trace = model.trace(x);
    let mut residual = 0.0;
    let upstream = Array1::from_iter(trace.output.iter().zip(y.iter()).map(|(f, t)| {
        residual += (f - t).abs();
        sign(f - t) / n
    }));
    model.backward(&trace, &upstream, &mut grads);
    let mut parts = LossParts { residual: residual / n, ..LossParts::default() };

    if let Some(b) = boundary.filter(|b| spec.lambda > 0.0 && !b.is_empty()) {
        b.validate()?;
        model.check_input(b.rows.view())?;
        let trace = model.trace(b.rows.view());
        let mut penalty = 0.0;
        let mut active = false;
        let upstream = Array1::from_iter((0..b.len()).map(|j| {
            let f = trace.output[j];
            let w = spec.lambda * b.epsilon[j];
            penalty += w * hinge(f, b.lower[j], b.upper[j]);
            let d = if f < b.lower[j] {
                -w
            } else if f > b.upper[j] {
                w
            } else {
                0.0
            };
            active |= d != 0.0;
            d
        }));
        if active {
            model.backward(&trace, &upstream, &mut grads);
        }
        parts.penalty = penalty;
    }

    if spec.l2 > 0.0 {
        parts.regularization = spec.l2 * model.weight_norm_sq();
        for (g, l) in grads.layers.iter_mut().zip(&model.layers) {
            g.weights.scaled_add(2.0 * spec.l2, &l.weights);
        }
    }
    if !parts.total().is_finite() {
        return Err(NeuralError::NonFinite("loss"));
    }
    Ok((parts, grads))
}
