//! Minimal dense feed-forward network core: forward/backward passes,
//! the three training losses, Adam/AdamW, and JSON persistence.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Sigmoid,
}

#[derive(Debug, Clone)]
pub struct Layer {
    /// `[out_dim x in_dim]`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
}

/// Per-layer parameter gradients (or optimizer moments, same shapes).
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    /// Input to each layer, `layers.len()` entries.
    inputs: Vec<Array2<f64>>,
    /// Post-activation output of each layer.
    outputs: Vec<Array2<f64>>,
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy loss `-(p ln q + (1-p) ln(1-q))` with the
/// prediction clamped to `[eps, 1-eps]`.
pub fn bce(p: f64, q: f64) -> f64 {
    let q = q.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(p * q.ln() + (1.0 - p) * (1.0 - q).ln())
}

impl MlpModel {
    /// He-uniform init for layers feeding ReLU, Xavier-uniform otherwise.
    pub fn new<R: Rng>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "need dims.len() >= 2 and one activation per layer, got {} dims, {} activations",
                dims.len(),
                activations.len()
            )));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (i, &act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let limit = match act {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let weight =
                Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit));
            layers.push(Layer {
                weight,
                bias: Array1::zeros(fan_out),
                activation: act,
            });
        }
        Ok(MlpModel { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input dim {} does not match model input dim {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Batch forward pass, `x: [batch x in_dim]`.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for layer in &self.layers {
            a = layer.apply(&a);
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            inputs.push(a.clone());
            a = layer.apply(&a);
            outputs.push(a.clone());
        }
        Ok((a, ForwardCache { inputs, outputs }))
    }

    /// Backpropagate `dL/d(output)`; returns parameter gradients and the
    /// gradient with respect to the batch input.
    pub fn backward(&self, cache: &ForwardCache, out_grad: &Array2<f64>) -> (Vec<LayerGrad>, Array2<f64>) {
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        let mut da = out_grad.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.outputs[l];
            // dz = da * act'(z), expressed through the cached activation.
            let dz = match layer.activation {
                Activation::Linear => da,
                Activation::Relu => {
                    let mut dz = da;
                    dz.zip_mut_with(out, |g, &a| {
                        if a <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    dz
                }
                Activation::Sigmoid => {
                    let mut dz = da;
                    dz.zip_mut_with(out, |g, &a| *g *= a * (1.0 - a));
                    dz
                }
            };
            let x = &cache.inputs[l];
            let dw = dz.t().dot(x);
            let db = dz.sum_axis(Axis(0));
            da = dz.dot(&layer.weight);
            grads.push(LayerGrad {
                weight: dw,
                bias: db,
            });
        }
        grads.reverse();
        (grads, da)
    }

    pub fn check_finite(&self) -> Result<()> {
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weight.iter().any(|v| !v.is_finite())
                || layer.bias.iter().any(|v| !v.is_finite())
            {
                return Err(Error::Training(format!(
                    "non-finite parameter in layer {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let doc = ModelDoc::from(self);
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(file, &doc).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let doc: ModelDoc = serde_json::from_reader(file).map_err(|e| Error::Parse(e.to_string()))?;
        doc.try_into()
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(ModelDoc::from(self)).expect("model serialization cannot fail")
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self> {
        let doc: ModelDoc =
            serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
        doc.try_into()
    }
}

impl Layer {
    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        match self.activation {
            Activation::Linear => z,
            Activation::Relu => {
                z.mapv_inplace(|v| v.max(0.0));
                z
            }
            Activation::Sigmoid => {
                z.mapv_inplace(sigmoid);
                z
            }
        }
    }
}

/// Portable JSON model document: layer dims, activation names, row-major
/// weight/bias arrays. serde_json round-trips f64 exactly.
#[derive(Serialize, Deserialize)]
struct LayerDoc {
    activation: Activation,
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    layers: Vec<LayerDoc>,
}

impl From<&MlpModel> for ModelDoc {
    fn from(m: &MlpModel) -> Self {
        ModelDoc {
            layers: m
                .layers
                .iter()
                .map(|l| LayerDoc {
                    activation: l.activation,
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ModelDoc> for MlpModel {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        let mut layers = Vec::with_capacity(doc.layers.len());
        for l in doc.layers {
            if l.weight.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::Format("model document shape mismatch".into()));
            }
            layers.push(Layer {
                weight: Array2::from_shape_vec((l.rows, l.cols), l.weight)
                    .map_err(|e| Error::Format(e.to_string()))?,
                bias: Array1::from_vec(l.bias),
                activation: l.activation,
            });
        }
        if layers.is_empty() {
            return Err(Error::Format("model document has no layers".into()));
        }
        Ok(MlpModel { layers })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Mean squared reconstruction error `1/(M D) sum ||y - t||^2`.
    Mse,
    /// Scalar-logit sigmoid BCE averaged over the batch.
    MachineBce,
    /// Multi-label sigmoid BCE averaged over batch and classes.
    IdBce,
}

/// Loss value and its gradient with respect to the model outputs (logits
/// for the BCE kinds).
pub fn loss_and_output_grad(
    kind: LossKind,
    outputs: &Array2<f64>,
    targets: &Array2<f64>,
) -> Result<(f64, Array2<f64>)> {
    if outputs.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "outputs {:?} vs targets {:?}",
            outputs.shape(),
            targets.shape()
        )));
    }
    let m = outputs.nrows() as f64;
    let d = outputs.ncols() as f64;
    match kind {
        LossKind::Mse => {
            let diff = outputs - targets;
            let loss = diff.iter().map(|v| v * v).sum::<f64>() / (m * d);
            let grad = diff.mapv(|v| 2.0 * v / (m * d));
            Ok((loss, grad))
        }
        LossKind::MachineBce | LossKind::IdBce => {
            let scale = if kind == LossKind::MachineBce {
                if outputs.ncols() != 1 {
                    return Err(Error::Shape(format!(
                        "machine head must emit one logit, got {}",
                        outputs.ncols()
                    )));
                }
                m
            } else {
                m * d
            };
            let mut loss = 0.0;
            let mut grad = Array2::zeros(outputs.raw_dim());
            for ((idx, &z), &t) in outputs.indexed_iter().zip(targets.iter()) {
                let q = sigmoid(z);
                loss += bce(t, q);
                grad[idx] = (q - t) / scale;
            }
            Ok((loss / scale, grad))
        }
    }
}

/// Gradients of the mean batch loss with respect to every parameter.
pub fn backward_loss(
    model: &MlpModel,
    batch: &Array2<f64>,
    kind: LossKind,
    targets: &Array2<f64>,
) -> Result<(f64, Vec<LayerGrad>)> {
    let (outputs, cache) = model.forward_cached(batch)?;
    let (loss, out_grad) = loss_and_output_grad(kind, &outputs, targets)?;
    let (grads, _) = model.backward(&cache, &out_grad);
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled weight decay; 0 gives plain Adam.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn adam(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adamw(learning_rate: f64, weight_decay: f64) -> Self {
        AdamConfig {
            weight_decay,
            ..Self::adam(learning_rate)
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
}

impl OptimizerState {
    pub fn new(model: &MlpModel, config: AdamConfig) -> Self {
        let zeros = |l: &Layer| LayerGrad {
            weight: Array2::zeros(l.weight.raw_dim()),
            bias: Array1::zeros(l.bias.raw_dim()),
        };
        OptimizerState {
            config,
            step: 0,
            m: model.layers.iter().map(zeros).collect(),
            v: model.layers.iter().map(zeros).collect(),
        }
    }
}

/// One Adam/AdamW update with bias correction. Deterministic; NaN/Inf
/// gradients abort training.
pub fn optimizer_step(
    model: &mut MlpModel,
    grads: &[LayerGrad],
    state: &mut OptimizerState,
) -> Result<()> {
    if grads.len() != model.layers.len() {
        return Err(Error::Shape(format!(
            "{} gradient blocks for {} layers",
            grads.len(),
            model.layers.len()
        )));
    }
    for g in grads {
        if g.weight.iter().any(|v| !v.is_finite()) || g.bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training("non-finite gradient".into()));
        }
    }

    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    for (l, layer) in model.layers.iter_mut().enumerate() {
        let update =
            |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= cfg.learning_rate * (m_hat / (v_hat.sqrt() + cfg.epsilon));
                *p -= cfg.learning_rate * cfg.weight_decay * *p;
            };
        for ((p, &g), (m, v)) in layer
            .weight
            .iter_mut()
            .zip(grads[l].weight.iter())
            .zip(state.m[l].weight.iter_mut().zip(state.v[l].weight.iter_mut()))
        {
            update(p, g, m, v);
        }
        for ((p, &g), (m, v)) in layer
            .bias
            .iter_mut()
            .zip(grads[l].bias.iter())
            .zip(state.m[l].bias.iter_mut().zip(state.v[l].bias.iter_mut()))
        {
            update(p, g, m, v);
        }
    }
    model.check_finite()
}
