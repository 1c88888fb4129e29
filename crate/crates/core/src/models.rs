//! Feed-forward models, their trainer and the evaluation traits consumed by
//! the explainers.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskKind};
use crate::error::{CteError, Result};
use crate::rng::substream;

pub const WEIGHTS_FORMAT: &str = "cte-mlp";
pub const WEIGHTS_VERSION: u32 = 1;
/// Output explained for classification models unless configured otherwise.
pub const DEFAULT_EXPLAINED_CLASS: usize = 1;

/// Full model outputs: one row of `n_outputs` values per input row.
pub trait Predictor: Sync {
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array2<f64>;

    fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_cols(x, self.n_inputs())?;
        Ok(self.predict_unchecked(x))
    }
}

/// The scalar being explained.
pub trait ModelFunction: Sync {
    fn n_inputs(&self) -> usize;
    fn eval_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64>;

    fn eval(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        check_cols(x, self.n_inputs())?;
        Ok(self.eval_unchecked(x))
    }
}

/// Models whose explained scalar has an exact input gradient.
pub trait Differentiable: ModelFunction {
    /// Gradient of the explained scalar at every row of `x`.
    fn grad_batch_unchecked(&self, x: ArrayView2<'_, f64>) -> Array2<f64>;
}

fn check_cols(x: ArrayView2<'_, f64>, d: usize) -> Result<()> {
    if x.ncols() != d {
        return Err(CteError::shape(format!("model expects {d} features, got {}", x.ncols())));
    }
    Ok(())
}

/// Adapter turning a closure over rows into a [`ModelFunction`].
pub struct FnModel<F> {
    d: usize,
    f: F,
}

impl<F: Fn(ArrayView1<'_, f64>) -> f64 + Sync> FnModel<F> {
    pub fn new(d: usize, f: F) -> Self {
        FnModel { d, f }
    }
}

impl<F: Fn(ArrayView1<'_, f64>) -> f64 + Sync> ModelFunction for FnModel<F> {
    fn n_inputs(&self) -> usize {
        self.d
    }

    fn eval_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        x.rows().into_iter().map(|r| (self.f)(r)).collect()
    }
}

impl<F: Fn(ArrayView1<'_, f64>) -> f64 + Sync> Predictor for FnModel<F> {
    fn n_inputs(&self) -> usize {
        self.d
    }

    fn n_outputs(&self) -> usize {
        1
    }

    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.eval_unchecked(x).insert_axis(Axis(1))
    }
}

/// `f(x) = w . x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Array1<f64>,
    pub bias: f64,
}

impl ModelFunction for LinearModel {
    fn n_inputs(&self) -> usize {
        self.weights.len()
    }

    fn eval_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        x.dot(&self.weights) + self.bias
    }
}

impl Differentiable for LinearModel {
    fn grad_batch_unchecked(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut g = Array2::zeros(x.raw_dim());
        g.rows_mut().into_iter().for_each(|mut r| r.assign(&self.weights));
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Softmax,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    Mse,
}

impl Loss {
    pub fn for_task(task: &TaskKind) -> Loss {
        if task.is_classification() {
            Loss::CrossEntropy
        } else {
            Loss::Mse
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in x fan_out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Multilayer perceptron with a shared hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    activation: Activation,
    head: Head,
    loss: Loss,
    explained_output: usize,
}

impl MlpModel {
    pub fn from_layers(layers: Vec<Layer>, activation: Activation, head: Head, loss: Loss) -> Result<Self> {
        if layers.is_empty() {
            return Err(CteError::config("a model needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.ncols() != l.bias.len() {
                return Err(CteError::shape(format!("layer {i}: weight/bias width mismatch")));
            }
            if i > 0 && layers[i - 1].weights.ncols() != l.weights.nrows() {
                return Err(CteError::shape(format!("layer {i}: input width mismatch")));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(CteError::config(format!("layer {i}: non-finite parameters")));
            }
        }
        let out = layers.last().map(|l| l.weights.ncols()).unwrap_or(0);
        let explained_output = match head {
            Head::Softmax if out > DEFAULT_EXPLAINED_CLASS => DEFAULT_EXPLAINED_CLASS,
            _ => 0,
        };
        Ok(MlpModel { layers, activation, head, loss, explained_output })
    }

    /// He-uniform initialised network with the given layer widths.
    pub fn init(layer_dims: &[usize], activation: Activation, head: Head, loss: Loss, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(CteError::config(format!("invalid layer widths {layer_dims:?}")));
        }
        let mut rng = substream(seed, "mlp-init", 0);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-limit..limit)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Self::from_layers(layers, activation, head, loss)
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].weights.nrows()];
        dims.extend(self.layers.iter().map(|l| l.weights.ncols()));
        dims
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map(|l| l.weights.ncols()).unwrap_or(0)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn explained_output(&self) -> usize {
        self.explained_output
    }

    pub fn with_explained_output(mut self, index: usize) -> Result<Self> {
        if index >= self.n_outputs() {
            return Err(CteError::Bounds { index, len: self.n_outputs() });
        }
        self.explained_output = index;
        Ok(self)
    }

    /// Errors unless the model takes `d` inputs.
    pub fn expect_inputs(&self, d: usize) -> Result<()> {
        if self.n_inputs() != d {
            return Err(CteError::shape(format!("model expects {} features, data has {d}", self.n_inputs())));
        }
        Ok(())
    }

    fn act(&self, z: &mut Array2<f64>) {
        match self.activation {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Derivative of the activation given its output.
    fn act_grad(&self, a: f64) -> f64 {
        match self.activation {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    /// Hidden activations of every layer plus head outputs.
    fn forward_trace(&self, x: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { acts[i - 1].view() };
            let mut z = input.dot(&l.weights) + &l.bias;
            if i < last {
                self.act(&mut z);
            } else if self.head == Head::Softmax {
                softmax_rows(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    /// Gradients of the explained output w.r.t. the inputs, rows independent.
    fn backprop_input(&self, x: ArrayView2<'_, f64>, output: usize) -> Array2<f64> {
        let acts = self.forward_trace(x);
        let out = acts.last().expect("at least one layer");
        let n = x.nrows();
        let mut delta = Array2::zeros(out.raw_dim());
        match self.head {
            Head::Identity => delta.column_mut(output).fill(1.0),
            Head::Softmax => {
                for r in 0..n {
                    let pc = out[[r, output]];
                    for k in 0..out.ncols() {
                        let ind = if k == output { 1.0 } else { 0.0 };
                        delta[[r, k]] = pc * (ind - out[[r, k]]);
                    }
                }
            }
        }
        for i in (0..self.layers.len()).rev() {
            let mut back = delta.dot(&self.layers[i].weights.t());
            if i > 0 {
                let a = &acts[i - 1];
                back.zip_mut_with(a, |g, &av| *g *= self.act_grad(av));
            }
            delta = back;
        }
        delta
    }

    /// Input gradient of output `class_index` (default: the explained output).
    pub fn grad_input(&self, x: ArrayView1<'_, f64>, class_index: Option<usize>) -> Result<Array1<f64>> {
        if x.len() != self.n_inputs() {
            return Err(CteError::shape(format!("model expects {} features, got {}", self.n_inputs(), x.len())));
        }
        let c = class_index.unwrap_or(self.explained_output);
        if c >= self.n_outputs() {
            return Err(CteError::Bounds { index: c, len: self.n_outputs() });
        }
        let g = self.backprop_input(x.insert_axis(Axis(0)), c);
        Ok(g.row(0).to_owned())
    }

    /// Writes the versioned JSON weight file.
    pub fn save_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_weights(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: WeightFile =
            serde_json::from_str(text).map_err(|e| CteError::Format(format!("unreadable weight file: {e}")))?;
        file.into_model()
    }

    fn to_file(&self) -> WeightFile {
        WeightFile {
            format: WEIGHTS_FORMAT.to_string(),
            version: WEIGHTS_VERSION,
            layer_dims: self.layer_dims(),
            activation: self.activation,
            head: self.head,
            loss: self.loss,
            explained_output: self.explained_output,
            layers: self
                .layers
                .iter()
                .map(|l| EncodedLayer { weights: encode_f64(l.weights.iter()), bias: encode_f64(l.bias.iter()) })
                .collect(),
        }
    }
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

impl Predictor for MlpModel {
    fn n_inputs(&self) -> usize {
        MlpModel::n_inputs(self)
    }

    fn n_outputs(&self) -> usize {
        MlpModel::n_outputs(self)
    }

    fn predict_unchecked(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.forward_trace(x).pop().expect("at least one layer")
    }
}

impl ModelFunction for MlpModel {
    fn n_inputs(&self) -> usize {
        MlpModel::n_inputs(self)
    }

    fn eval_unchecked(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        self.predict_unchecked(x).column(self.explained_output).to_owned()
    }
}

impl Differentiable for MlpModel {
    fn grad_batch_unchecked(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.backprop_input(x, self.explained_output)
    }
}

/// Full outputs for a batch: alias of [`Predictor::predict`].
pub fn forward(model: &MlpModel, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    model.predict(x)
}

#[derive(Serialize, Deserialize)]
struct EncodedLayer {
    weights: String,
    bias: String,
}

#[derive(Serialize, Deserialize)]
struct WeightFile {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    activation: Activation,
    head: Head,
    loss: Loss,
    explained_output: usize,
    layers: Vec<EncodedLayer>,
}

fn encode_f64<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let bytes: Vec<u8> = values.flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f64(text: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = B64.decode(text).map_err(|e| CteError::Format(format!("bad base64 payload: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(CteError::Format(format!("expected {expected} values, found {} bytes", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

impl WeightFile {
    fn into_model(self) -> Result<MlpModel> {
        if self.format != WEIGHTS_FORMAT || self.version != WEIGHTS_VERSION {
            return Err(CteError::Format(format!(
                "unsupported weight file {} v{} (expected {WEIGHTS_FORMAT} v{WEIGHTS_VERSION})",
                self.format, self.version
            )));
        }
        if self.layer_dims.len() != self.layers.len() + 1 {
            return Err(CteError::Format("layer count does not match layer_dims".into()));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (w, l) in self.layer_dims.windows(2).zip(&self.layers) {
            let weights = Array2::from_shape_vec((w[0], w[1]), decode_f64(&l.weights, w[0] * w[1])?)
                .map_err(|e| CteError::Format(e.to_string()))?;
            let bias = Array1::from(decode_f64(&l.bias, w[1])?);
            layers.push(Layer { weights, bias });
        }
        let model = MlpModel::from_layers(layers, self.activation, self.head, self.loss)
            .map_err(|e| CteError::Format(e.to_string()))?;
        model.with_explained_output(self.explained_output).map_err(|e| CteError::Format(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// `None` picks cross-entropy for classification and MSE otherwise.
    pub loss: Option<Loss>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![32, 16],
            activation: Activation::Relu,
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            loss: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_loss: f64,
    /// Training accuracy for classification, `None` for regression.
    pub train_accuracy: Option<f64>,
    /// Coefficient of determination on the training data for regression.
    pub train_r2: Option<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;

    fn step(&mut self, params: &mut [&mut f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (i, p) in params.iter_mut().enumerate() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grads[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grads[i] * grads[i];
            **p -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

fn targets(labels: ArrayView1<'_, f64>, loss: Loss, n_out: usize) -> Array2<f64> {
    match loss {
        Loss::CrossEntropy => {
            let mut t = Array2::zeros((labels.len(), n_out));
            for (r, &y) in labels.iter().enumerate() {
                t[[r, y as usize]] = 1.0;
            }
            t
        }
        Loss::Mse => labels.to_owned().insert_axis(Axis(1)),
    }
}

/// Gradients of the mean batch loss w.r.t. every parameter.
fn batch_gradients(model: &MlpModel, x: ArrayView2<'_, f64>, t: ArrayView2<'_, f64>) -> (f64, Vec<Layer>) {
    let acts = model.forward_trace(x);
    let out = acts.last().expect("at least one layer");
    let n = x.nrows() as f64;
    let loss = match model.loss {
        Loss::CrossEntropy => -(out.mapv(|p| p.max(1e-300).ln()) * t).sum() / n,
        Loss::Mse => (out - &t).mapv(|e| e * e).sum() / n,
    };
    // softmax + cross-entropy and identity + MSE share the (out - t) form
    let mut delta = match model.loss {
        Loss::CrossEntropy => (out - &t) / n,
        Loss::Mse => (out - &t) * (2.0 / n),
    };
    let mut grads: Vec<Layer> = Vec::with_capacity(model.layers.len());
    for i in (0..model.layers.len()).rev() {
        let input = if i == 0 { x } else { acts[i - 1].view() };
        grads.push(Layer { weights: input.t().dot(&delta), bias: delta.sum_axis(Axis(0)) });
        if i > 0 {
            let mut back = delta.dot(&model.layers[i].weights.t());
            back.zip_mut_with(&acts[i - 1], |g, &a| *g *= model.act_grad(a));
            delta = back;
        }
    }
    grads.reverse();
    (loss, grads)
}

/// Trains an MLP with Adam on mini-batches drawn from a seeded shuffle.
pub fn train(data: &Dataset, config: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    let labels = data.labels().ok_or_else(|| CteError::config("training needs labeled data"))?;
    if config.epochs == 0 || config.batch_size == 0 || config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
        return Err(CteError::config("epochs, batch size and learning rate must be positive"));
    }
    if data.n_missing() > 0 {
        return Err(CteError::config("training data contains missing values; preprocess first"));
    }
    let (head, n_out, default_loss) = match data.task() {
        TaskKind::Classification { n_classes } => (Head::Softmax, *n_classes, Loss::CrossEntropy),
        TaskKind::Regression => (Head::Identity, 1, Loss::Mse),
        TaskKind::Unlabeled => return Err(CteError::config("training needs labeled data")),
    };
    let loss = config.loss.unwrap_or(default_loss);
    if (loss == Loss::CrossEntropy) != (head == Head::Softmax) {
        return Err(CteError::config("cross-entropy needs a classification task and MSE a regression task"));
    }
    let mut dims = vec![data.n_features()];
    dims.extend(&config.hidden);
    dims.push(n_out);
    let mut model = MlpModel::init(&dims, config.activation, head, loss, config.seed)?;
    let x = data.features();
    let t = targets(labels, loss, n_out);
    let n_params: usize = model.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
    let mut adam = Adam { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 };
    let mut rng = substream(config.seed, "mlp-train", 0);
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    let mut final_loss = f64::NAN;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let xb = x.select(Axis(0), batch);
            let tb = t.select(Axis(0), batch);
            let (l, grads) = batch_gradients(&model, xb.view(), tb.view());
            epoch_loss += l * batch.len() as f64;
            let flat: Vec<f64> = grads.iter().flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied()).collect();
            let mut params: Vec<&mut f64> =
                model.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut())).collect();
            adam.step(&mut params, &flat, config.learning_rate);
        }
        final_loss = epoch_loss / data.n_rows() as f64;
    }
    if model.layers.iter().any(|l| l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite())) {
        return Err(CteError::config("training diverged; lower the learning rate"));
    }
    let pred = model.predict_unchecked(x);
    let report = match head {
        Head::Softmax => {
            let correct = pred.rows().into_iter().zip(labels.iter()).filter(|(p, &y)| argmax(*p) == y as usize).count();
            TrainReport { final_loss, train_accuracy: Some(correct as f64 / data.n_rows() as f64), train_r2: None }
        }
        Head::Identity => {
            let mean = labels.mean().unwrap_or(0.0);
            let ss_tot: f64 = labels.iter().map(|y| (y - mean).powi(2)).sum();
            let ss_res: f64 = pred.column(0).iter().zip(labels.iter()).map(|(p, y)| (p - y).powi(2)).sum();
            let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
            TrainReport { final_loss, train_accuracy: None, train_r2: Some(r2) }
        }
    };
    Ok((model, report))
}

pub(crate) fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn zero_model(d: usize, c: usize, head: Head) -> MlpModel {
        let layer = Layer { weights: Array2::zeros((d, c)), bias: Array1::zeros(c) };
        let loss = if head == Head::Softmax { Loss::CrossEntropy } else { Loss::Mse };
        MlpModel::from_layers(vec![layer], Activation::Relu, head, loss).unwrap()
    }

    #[test]
    fn zero_softmax_is_uniform() {
        let m = zero_model(3, 2, Head::Softmax);
        let p = m.predict(Array2::ones((4, 3)).view()).unwrap();
        assert!(p.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn linear_regression_layer() {
        let layer = Layer { weights: array![[1.0], [2.0]], bias: array![0.0] };
        let m = MlpModel::from_layers(vec![layer], Activation::Relu, Head::Identity, Loss::Mse).unwrap();
        assert_eq!(m.eval(array![[3.0, 4.0]].view()).unwrap()[0], 11.0);
        assert_eq!(m.grad_input(array![-5.0, 1.0].view(), None).unwrap(), array![1.0, 2.0]);
        assert!(m.eval(array![[3.0]].view()).is_err());
        assert!(m.grad_input(array![3.0, 4.0].view(), Some(1)).is_err());
    }

    #[test]
    fn constant_model_has_zero_gradient() {
        let mut m = zero_model(3, 1, Head::Identity);
        m.layers[0].bias[0] = 2.5;
        assert!(m.grad_input(array![1.0, -2.0, 0.3].view(), None).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = MlpModel::init(&[4, 8, 6, 3], Activation::Tanh, Head::Softmax, Loss::CrossEntropy, 3).unwrap();
        let mut rng = substream(1, "fd", 0);
        let h = 1e-4;
        for _ in 0..100 {
            let x = Array1::from_shape_fn(4, |_| rng.random_range(-2.0..2.0));
            let g = m.grad_input(x.view(), None).unwrap();
            for j in 0..4 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += h;
                xm[j] -= h;
                let f = |v: &Array1<f64>| m.eval(v.view().insert_axis(Axis(0))).unwrap()[0];
                let fd = (f(&xp) - f(&xm)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-4 * fd.abs().max(1e-3), "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn batch_matches_rows_and_sums_to_one() {
        let m = MlpModel::init(&[3, 5, 4], Activation::Relu, Head::Softmax, Loss::CrossEntropy, 0).unwrap();
        let x = Array2::from_shape_fn((7, 3), |(i, j)| (i as f64 - 3.0) * 0.7 + j as f64);
        let p = m.predict(x.view()).unwrap();
        for r in 0..7 {
            let single = m.predict(x.slice(ndarray::s![r..r + 1, ..])).unwrap();
            assert_eq!(single.row(0), p.row(r));
            assert!((p.row(r).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn save_load_round_trip_and_errors() {
        let m = MlpModel::init(&[13, 4, 2], Activation::Relu, Head::Softmax, Loss::CrossEntropy, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save_weights(&path).unwrap();
        let back = MlpModel::load_weights(&path).unwrap();
        assert_eq!(back, m);
        assert!(back.expect_inputs(10).is_err());
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(matches!(MlpModel::from_json(&text[..text.len() / 2]), Err(CteError::Format(_))));
        let bumped = text.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(MlpModel::from_json(&bumped), Err(CteError::Format(_))));
    }

    #[test]
    fn trains_separable_blobs_deterministically() {
        let mut rng = substream(2, "blobs", 0);
        let n = 200;
        let labels = Array1::from_shape_fn(n, |i| (i % 2) as f64);
        let x =
            Array2::from_shape_fn((n, 2), |(i, _)| (if i % 2 == 0 { -2.0 } else { 2.0 }) + rng.random_range(-1.0..1.0));
        let ds = Dataset::new(x, Some(labels), None, TaskKind::Classification { n_classes: 2 }).unwrap();
        let cfg =
            TrainConfig { hidden: vec![8], epochs: 50, batch_size: 16, learning_rate: 1e-2, ..Default::default() };
        let (m1, r1) = train(&ds, &cfg).unwrap();
        let (m2, _) = train(&ds, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert!(r1.train_accuracy.unwrap() > 0.95);
        let unlabeled = Dataset::from_features(Array2::zeros((4, 2))).unwrap();
        assert!(train(&unlabeled, &cfg).is_err());
    }

    #[test]
    fn mse_fits_linear_target() {
        let mut rng = substream(3, "lin", 0);
        let n = 300;
        let x = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
        let y = Array1::from_shape_fn(n, |i| 3.0 * x[[i, 0]] + 0.1 * rng.random_range(-1.0..1.0));
        let ds = Dataset::new(x.clone(), Some(y.clone()), None, TaskKind::Regression).unwrap();
        let cfg =
            TrainConfig { hidden: vec![8], epochs: 50, batch_size: 16, learning_rate: 1e-2, ..Default::default() };
        let (m, _) = train(&ds, &cfg).unwrap();
        let pred = m.eval(x.view()).unwrap();
        let corr = {
            let (pm, ym) = (pred.mean().unwrap(), y.mean().unwrap());
            let cov: f64 = pred.iter().zip(&y).map(|(a, b)| (a - pm) * (b - ym)).sum();
            let sp: f64 = pred.iter().map(|a| (a - pm).powi(2)).sum::<f64>().sqrt();
            let sy: f64 = y.iter().map(|b| (b - ym).powi(2)).sum::<f64>().sqrt();
            cov / (sp * sy)
        };
        assert!(corr > 0.9, "{corr}");
    }
}
