//! Dense feedforward network with `tanh(beta * x)` hidden units.
//!
//! Layer `L` computes `I = W Y_prev + b` and `Y = g(I)`. The loss is the mean
//! squared error over samples and outputs plus an L1-L2 weight penalty
//! `l1 Σ|w| + l2 Σw²` (biases are not penalized).

mod model;
mod optim;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::par::{tree_sum, Execution};
use crate::{seeding, Error, Result};

pub use model::{load_model, save_model, SavedModel, MODEL_FORMAT_VERSION};
pub use optim::{OptimizerKind, OptimizerState};
pub use train::{epoch_log_csv, train, Hyperparams, Preset, TrainReport, TrainingSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    #[default]
    Linear,
    BetaTanh(ActivationSpec),
}

impl OutputActivation {
    fn apply(self, x: f64) -> f64 {
        match self {
            OutputActivation::Linear => x,
            OutputActivation::BetaTanh(s) => s.activate(x),
        }
    }

    fn deriv(self, x: f64) -> f64 {
        match self {
            OutputActivation::Linear => 1.0,
            OutputActivation::BetaTanh(s) => s.activate_deriv(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTopology {
    /// `[n_in, n_hidden_1, ..., n_out]`
    pub sizes: Vec<usize>,
    pub hidden_activation: ActivationSpec,
    pub output_activation: OutputActivation,
    pub use_bias: bool,
}

impl LayerTopology {
    pub fn new(sizes: Vec<usize>, beta: f64) -> Result<Self> {
        let t = Self {
            sizes,
            hidden_activation: ActivationSpec::new(beta)?,
            output_activation: OutputActivation::Linear,
            use_bias: true,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.contains(&0) {
            return Err(Error::ShapeMismatch(format!(
                "topology needs at least two non-empty layers, got {:?}",
                self.sizes
            )));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    fn is_output(&self, layer: usize) -> bool {
        layer + 1 == self.n_layers()
    }

    fn act(&self, layer: usize, x: f64) -> f64 {
        if self.is_output(layer) {
            self.output_activation.apply(x)
        } else {
            self.hidden_activation.activate(x)
        }
    }

    fn act_deriv(&self, layer: usize, x: f64) -> f64 {
        if self.is_output(layer) {
            self.output_activation.deriv(x)
        } else {
            self.hidden_activation.activate_deriv(x)
        }
    }
}

/// Per-layer weights (`n_L × n_{L-1}`) and biases. Also used as the
/// container for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MLPParams {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl MLPParams {
    pub fn zeros(topology: &LayerTopology) -> Self {
        let s = &topology.sizes;
        Self {
            weights: s.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect(),
            biases: s[1..].iter().map(|&n| DVector::zeros(n)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            biases: self
                .biases
                .iter()
                .map(|b| DVector::zeros(b.len()))
                .collect(),
        }
    }

    pub fn check_shape(&self, topology: &LayerTopology) -> Result<()> {
        let ok = self.weights.len() == topology.n_layers()
            && self.biases.len() == topology.n_layers()
            && topology
                .sizes
                .windows(2)
                .zip(&self.weights)
                .zip(&self.biases)
                .all(|((s, w), b)| w.nrows() == s[1] && w.ncols() == s[0] && b.len() == s[1]);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "parameters do not match topology {:?}",
                topology.sizes
            )))
        }
    }

    /// Weight and bias blocks in a fixed order: all weights, then all biases.
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .map(|w| w.as_slice())
            .chain(self.biases.iter().map(|b| b.as_slice()))
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .map(|w| w.as_mut_slice())
            .chain(self.biases.iter_mut().map(|b| b.as_mut_slice()))
    }

    pub fn n_params(&self) -> usize {
        self.blocks().map(|b| b.len()).sum()
    }

    fn add(mut self, other: Self) -> Self {
        for (a, b) in self.weights.iter_mut().zip(other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(other.biases) {
            *a += b;
        }
        self
    }

    fn scale_mut(&mut self, k: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= k);
        }
    }

    /// Frobenius norm of all weights (biases excluded).
    pub fn weight_norm(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

/// Glorot-uniform weights, zero biases.
pub fn glorot_init(topology: &LayerTopology, seed: u64) -> MLPParams {
    let mut rng = seeding::rng_for(seed, 0);
    let mut params = MLPParams::zeros(topology);
    for w in &mut params.weights {
        let limit = (6.0 / (w.nrows() + w.ncols()) as f64).sqrt();
        // column-major fill; order is fixed so the draw is reproducible
        for x in w.iter_mut() {
            *x = rng.random_range(-limit..=limit);
        }
    }
    params
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: DVector<f64>,
    /// Pre-activations per layer.
    pub pre: Vec<DVector<f64>>,
    /// Outputs per layer.
    pub out: Vec<DVector<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &DVector<f64> {
        self.out.last().expect("at least one layer")
    }
}

pub fn forward(params: &MLPParams, topology: &LayerTopology, x: &[f64]) -> Result<ForwardTrace> {
    if x.len() != topology.n_inputs() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, network expects {}",
            x.len(),
            topology.n_inputs()
        )));
    }
    let input = DVector::from_column_slice(x);
    let mut pre = Vec::with_capacity(topology.n_layers());
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(topology.n_layers());
    for (layer, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let prev = out.last().unwrap_or(&input);
        let mut i = w * prev;
        if topology.use_bias {
            i += b;
        }
        let y = i.map(|v| topology.act(layer, v));
        pre.push(i);
        out.push(y);
    }
    Ok(ForwardTrace { input, pre, out })
}

pub fn predict(params: &MLPParams, topology: &LayerTopology, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward(params, topology, x)?.output().as_slice().to_vec())
}

/// Mean over samples and outputs of the squared error.
pub fn mse(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    check_same_shape(predictions, targets)?;
    let count: usize = targets.iter().map(|t| t.len()).sum();
    if count == 0 {
        return Ok(0.0);
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .flat_map(|(p, t)| p.iter().zip(t).map(|(a, b)| (b - a) * (b - a)))
        .sum();
    Ok(sum / count as f64)
}

/// Mean absolute percentage error per output column.
pub fn mape(predictions: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_same_shape(predictions, targets)?;
    let n_out = targets.first().map_or(0, |t| t.len());
    let mut acc = vec![0.0; n_out];
    for (s, (p, t)) in predictions.iter().zip(targets).enumerate() {
        for (o, (&y, &d)) in p.iter().zip(t).enumerate() {
            if d.abs() < 1e-9 {
                return Err(Error::MapeUndefined {
                    sample: s,
                    output: o,
                    value: d,
                });
            }
            acc[o] += ((d - y) / d).abs();
        }
    }
    let n = targets.len().max(1) as f64;
    Ok(acc.into_iter().map(|a| 100.0 * a / n).collect())
}

fn check_same_shape(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(Error::ShapeMismatch(
            "predictions and targets differ in shape".into(),
        ));
    }
    Ok(())
}

/// Gradient of `Σ_o (y_o - d_o)²` for one sample.
fn data_gradient(
    params: &MLPParams,
    topology: &LayerTopology,
    trace: &ForwardTrace,
    target: &[f64],
) -> Result<MLPParams> {
    if target.len() != topology.n_outputs() {
        return Err(Error::ShapeMismatch(format!(
            "target has {} values, network has {} outputs",
            target.len(),
            topology.n_outputs()
        )));
    }
    let n_layers = topology.n_layers();
    let mut grads = params.zeros_like();
    let last = n_layers - 1;
    let mut delta = DVector::from_fn(topology.n_outputs(), |o, _| {
        2.0 * (trace.out[last][o] - target[o]) * topology.act_deriv(last, trace.pre[last][o])
    });
    for layer in (0..n_layers).rev() {
        let prev = if layer == 0 {
            &trace.input
        } else {
            &trace.out[layer - 1]
        };
        grads.weights[layer] = &delta * prev.transpose();
        if topology.use_bias {
            grads.biases[layer] = delta.clone();
        }
        if layer > 0 {
            let back = params.weights[layer].tr_mul(&delta);
            delta = DVector::from_fn(back.len(), |j, _| {
                back[j] * topology.act_deriv(layer - 1, trace.pre[layer - 1][j])
            });
        }
    }
    Ok(grads)
}

/// Regularization strengths.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Regularization {
    pub l1: f64,
    pub l2: f64,
}

fn add_penalty_gradient(grads: &mut MLPParams, params: &MLPParams, reg: Regularization) {
    if reg.l1 == 0.0 && reg.l2 == 0.0 {
        return;
    }
    for (g, w) in grads.weights.iter_mut().zip(&params.weights) {
        g.zip_apply(w, |gi, wi| {
            let sign = if wi > 0.0 {
                1.0
            } else if wi < 0.0 {
                -1.0
            } else {
                0.0
            };
            *gi += reg.l1 * sign + 2.0 * reg.l2 * wi;
        });
    }
}

pub fn penalty(params: &MLPParams, reg: Regularization) -> f64 {
    params
        .weights
        .iter()
        .map(|w| reg.l1 * w.abs().sum() + reg.l2 * w.norm_squared())
        .sum()
}

/// Gradient of the single-sample MSE plus the weight penalty, using a trace
/// produced by [`forward`] on the same parameters.
pub fn backward(
    params: &MLPParams,
    topology: &LayerTopology,
    trace: &ForwardTrace,
    target: &[f64],
    reg: Regularization,
) -> Result<MLPParams> {
    let mut g = data_gradient(params, topology, trace, target)?;
    g.scale_mut(1.0 / topology.n_outputs() as f64);
    add_penalty_gradient(&mut g, params, reg);
    Ok(g)
}

/// Gradient of the batch MSE plus penalty. Per-sample terms are reduced with
/// a fixed pairwise tree, so serial and parallel execution agree bitwise.
pub fn batch_gradient(
    params: &MLPParams,
    topology: &LayerTopology,
    inputs: &[&[f64]],
    targets: &[&[f64]],
    reg: Regularization,
    exec: Execution,
) -> Result<MLPParams> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "batch has {} inputs and {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let per_sample = exec.try_map(inputs.len(), |s| {
        let trace = forward(params, topology, inputs[s])?;
        data_gradient(params, topology, &trace, targets[s])
    })?;
    let mut g = tree_sum(per_sample, MLPParams::add).expect("non-empty batch");
    g.scale_mut(1.0 / (inputs.len() * topology.n_outputs()) as f64);
    add_penalty_gradient(&mut g, params, reg);
    Ok(g)
}

/// Batch MSE plus weight penalty.
pub fn regularized_loss(
    params: &MLPParams,
    topology: &LayerTopology,
    inputs: &[&[f64]],
    targets: &[&[f64]],
    reg: Regularization,
) -> Result<f64> {
    let preds = inputs
        .iter()
        .map(|x| predict(params, topology, x))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<Vec<f64>> = targets.iter().map(|t| t.to_vec()).collect();
    Ok(mse(&preds, &targets)? + penalty(params, reg))
}
