//! Multilayer-perceptron probes.
//!
//! Dense layers with rectified-linear hidden activations and a softmax
//! output, trained on mean cross-entropy with Adam updates and early stopping
//! on a stratified validation slice. The network math is generic over the
//! float type: training runs in `f32`, gradient checking in `f64`.

use std::fmt::Debug;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedstore::FeatureTable;
use crate::rng::Stream;

pub const PROBE_MAGIC: &[u8; 8] = b"CTXPRB1\n";

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
    #[error("input dimension mismatch: probe expects {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("row {0} contains a non-finite value")]
    NonFiniteInput(usize),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("degenerate training input: {0}")]
    DegenerateInput(String),
    #[error("config declares {expected} classes but the table has {found}")]
    ClassCount { expected: usize, found: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad probe file: {0}")]
    Format(String),
}

/// Float types the network can run in.
pub trait Real: Float + FromPrimitive + LinalgScalar + ScalarOperand + Debug + Send + Sync + 'static {}
impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

fn default_hidden() -> Vec<usize> {
    vec![1024]
}
fn default_classes() -> usize {
    2
}
fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    32
}
fn default_epochs() -> usize {
    50
}
fn default_patience() -> usize {
    5
}
fn default_val() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    #[serde(default = "default_hidden")]
    pub hidden_layout: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_classes")]
    pub out_classes: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_val")]
    pub val_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden_layout: default_hidden(),
            activation: Activation::Relu,
            out_classes: default_classes(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            val_fraction: default_val(),
            seed: 0,
        }
    }
}

impl ProbeConfig {
    /// Three hidden layers of 20 units.
    pub fn small() -> Self {
        ProbeConfig {
            hidden_layout: vec![20, 20, 20],
            ..Default::default()
        }
    }

    /// Three hidden layers of 1024 units.
    pub fn large() -> Self {
        ProbeConfig {
            hidden_layout: vec![1024, 1024, 1024],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| Err(ProbeError::InvalidConfig(m.to_owned()));
        if self.hidden_layout.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if self.out_classes < 2 {
            return bad("out_classes must be at least 2");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return bad("val_fraction must be in (0, 0.5)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

/// Fully connected layer; `weights` is `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Dense<T> {
    fn zeros_like(&self) -> Self {
        Dense {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub layers: Vec<Dense<T>>,
}

struct Cache<T> {
    /// Inputs to each layer; `inputs[0]` is the batch itself.
    inputs: Vec<Array2<T>>,
    logits: Array2<T>,
}

impl<T: Real> Network<T> {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(input_dim: usize, hidden: &[usize], out: usize, seed: u64) -> Self {
        let mut rng = Stream::root(seed).tag("probe-init").rng();
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(out);
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((w[0], w[1]), || {
                    T::from_f64(rng.random_range(-bound..bound)).unwrap()
                });
                Dense {
                    weights,
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Network { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weights.dim()).collect()
    }

    fn forward_cache(&self, x: ArrayView2<T>) -> Cache<T> {
        let mut inputs = vec![x.to_owned()];
        let last = self.layers.len() - 1;
        let mut logits = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = inputs[i].dot(&layer.weights);
            for mut row in z.rows_mut() {
                row.zip_mut_with(&layer.bias, |a, &b| *a = *a + b);
            }
            if i == last {
                logits = Some(z);
            } else {
                z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
                inputs.push(z);
            }
        }
        Cache {
            inputs,
            logits: logits.unwrap(),
        }
    }

    pub fn logits(&self, x: ArrayView2<T>) -> Array2<T> {
        self.forward_cache(x).logits
    }

    /// Hidden-unit activity pattern for a batch; a change in this pattern
    /// means a rectifier kink was crossed.
    pub fn relu_pattern(&self, x: ArrayView2<T>) -> Vec<bool> {
        let cache = self.forward_cache(x);
        cache.inputs[1..]
            .iter()
            .flat_map(|a| a.iter().map(|v| *v > T::zero()).collect::<Vec<_>>())
            .collect()
    }

    /// Mean cross-entropy, accumulated in f64.
    pub fn loss(&self, x: ArrayView2<T>, y: &[usize]) -> f64 {
        let logits = self.logits(x);
        cross_entropy(&logits, y).0
    }

    /// Mean cross-entropy and its gradient for every parameter.
    pub fn loss_and_grads(&self, x: ArrayView2<T>, y: &[usize]) -> (f64, Vec<Dense<T>>) {
        let cache = self.forward_cache(x);
        let (loss, mut delta) = cross_entropy(&cache.logits, y);
        let mut grads: Vec<Dense<T>> = self.layers.iter().map(Dense::zeros_like).collect();
        for l in (0..self.layers.len()).rev() {
            grads[l].weights = cache.inputs[l].t().dot(&delta);
            grads[l].bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weights.t());
                Zip::from(&mut back)
                    .and(&cache.inputs[l])
                    .for_each(|d, &a| {
                        if a <= T::zero() {
                            *d = T::zero();
                        }
                    });
                delta = back;
            }
        }
        (loss, grads)
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let c = |v: &T| U::from_f64(v.to_f64().unwrap()).unwrap();
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weights: l.weights.map(c),
                    bias: l.bias.map(c),
                })
                .collect(),
        }
    }

    fn param_mut(&mut self, layer: usize, idx: usize) -> &mut T {
        let l = &mut self.layers[layer];
        let nw = l.weights.len();
        if idx < nw {
            let cols = l.weights.ncols();
            &mut l.weights[[idx / cols, idx % cols]]
        } else {
            &mut l.bias[idx - nw]
        }
    }
}

/// Row-wise softmax of `logits`.
pub fn softmax<T: Real>(logits: &Array2<T>) -> Array2<T> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    p
}

/// Returns the mean loss and `(softmax - onehot) / batch`.
fn cross_entropy<T: Real>(logits: &Array2<T>, y: &[usize]) -> (f64, Array2<T>) {
    let n = logits.nrows();
    let mut grad = softmax(logits);
    let mut loss = 0f64;
    for (i, (row, &label)) in logits.rows().into_iter().zip(y).enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64().unwrap()));
        let lse = row.fold(0f64, |s, v| s + (v.to_f64().unwrap() - max).exp()).ln() + max;
        loss += lse - row[label].to_f64().unwrap();
        grad[[i, label]] = grad[[i, label]] - T::one();
    }
    let inv = T::from_usize(n).unwrap().recip();
    grad.mapv_inplace(|v| v * inv);
    (loss / n as f64, grad)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: impl IntoIterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in row.into_iter().enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedProbe {
    pub config: ProbeConfig,
    /// Class names in output order.
    pub classes: Vec<String>,
    pub network: Network<f32>,
    pub epochs_run: usize,
    pub val_accuracy_history: Vec<f64>,
}

impl TrainedProbe {
    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    /// Predicted class index for every row.
    pub fn predict(&self, rows: ArrayView2<f32>) -> Result<Vec<usize>, ProbeError> {
        if rows.ncols() != self.input_dim() {
            return Err(ProbeError::DimMismatch {
                expected: self.input_dim(),
                got: rows.ncols(),
            });
        }
        let logits = self.network.logits(rows);
        Ok(logits.rows().into_iter().map(|r| argmax(r.iter().copied())).collect())
    }
}

/// Untrained probe with classes named `"0".."k-1"`.
pub fn init_probe(cfg: &ProbeConfig, input_dim: usize) -> Result<TrainedProbe, ProbeError> {
    cfg.validate()?;
    if input_dim == 0 {
        return Err(ProbeError::Precondition("input_dim must be positive".into()));
    }
    Ok(TrainedProbe {
        config: cfg.clone(),
        classes: (0..cfg.out_classes).map(|c| c.to_string()).collect(),
        network: Network::init(input_dim, &cfg.hidden_layout, cfg.out_classes, cfg.seed),
        epochs_run: 0,
        val_accuracy_history: Vec::new(),
    })
}

/// Class probabilities for one input vector.
pub fn forward(p: &TrainedProbe, x: &[f32]) -> Result<Vec<f32>, ProbeError> {
    if x.len() != p.input_dim() {
        return Err(ProbeError::DimMismatch {
            expected: p.input_dim(),
            got: x.len(),
        });
    }
    let x = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    Ok(softmax(&p.network.logits(x)).into_iter().collect())
}

fn accuracy_of(net: &Network<f32>, rows: ArrayView2<f32>, y: &[usize]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let logits = net.logits(rows);
    let hits = logits
        .rows()
        .into_iter()
        .zip(y)
        .filter(|(r, &label)| argmax(r.iter().copied()) == label)
        .count();
    hits as f64 / y.len() as f64
}

struct Adam {
    m: Vec<Dense<f32>>,
    v: Vec<Dense<f32>>,
    t: i32,
    lr: f32,
}

impl Adam {
    const BETA1: f32 = 0.9;
    const BETA2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(net: &Network<f32>, lr: f64) -> Self {
        let z: Vec<Dense<f32>> = net.layers.iter().map(Dense::zeros_like).collect();
        Adam {
            m: z.clone(),
            v: z,
            t: 0,
            lr: lr as f32,
        }
    }

    fn step(&mut self, net: &mut Network<f32>, grads: &[Dense<f32>]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut f32, g: &f32, m: &mut f32, v: &mut f32| {
            *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
            *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + Self::EPS);
        };
        for (l, layer) in net.layers.iter_mut().enumerate() {
            Zip::from(&mut layer.weights)
                .and(&grads[l].weights)
                .and(&mut self.m[l].weights)
                .and(&mut self.v[l].weights)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(&grads[l].bias)
                .and(&mut self.m[l].bias)
                .and(&mut self.v[l].bias)
                .for_each(update);
        }
    }
}

/// Stratified validation split: `(train_idx, val_idx)`, both sorted.
fn stratified_split(y: &[usize], k: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..k {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        let mut rng = Stream::root(seed).tag("val-split").index(c as u64).rng();
        idx.shuffle(&mut rng);
        let n_val = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len().saturating_sub(1).max(1));
        let n_val = if idx.len() < 2 { 0 } else { n_val };
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Trains a probe on `table` and returns the best-validation snapshot.
pub fn train(cfg: &ProbeConfig, table: &FeatureTable) -> Result<TrainedProbe, ProbeError> {
    cfg.validate()?;
    if table.is_empty() || table.dim() == 0 {
        return Err(ProbeError::DegenerateInput("empty feature table".into()));
    }
    if let Some((i, _)) = table
        .rows
        .rows()
        .into_iter()
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
    {
        return Err(ProbeError::NonFiniteInput(i));
    }
    let mut classes: Vec<String> = table.labels.clone();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(ProbeError::DegenerateInput(format!(
            "only one class present ({})",
            classes.first().map_or("none", String::as_str)
        )));
    }
    if classes.len() != cfg.out_classes {
        return Err(ProbeError::ClassCount {
            expected: cfg.out_classes,
            found: classes.len(),
        });
    }
    let y: Vec<usize> = table
        .labels
        .iter()
        .map(|l| classes.binary_search(l).unwrap())
        .collect();

    let (train_idx, val_idx) = stratified_split(&y, classes.len(), cfg.val_fraction, cfg.seed);
    let val_x = table.rows.select(Axis(0), &val_idx);
    let val_y: Vec<usize> = val_idx.iter().map(|&i| y[i]).collect();

    let mut net = Network::<f32>::init(table.dim(), &cfg.hidden_layout, cfg.out_classes, cfg.seed);
    let mut adam = Adam::new(&net, cfg.learning_rate);
    let mut best = net.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut history = Vec::new();
    let mut since_best = 0;
    let mut order = train_idx.clone();

    for epoch in 0..cfg.max_epochs {
        let mut rng = Stream::root(cfg.seed).tag("epoch").index(epoch as u64).rng();
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xb = table.rows.select(Axis(0), chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, grads) = net.loss_and_grads(xb.view(), &yb);
            if !loss.is_finite() {
                return Err(ProbeError::NonFiniteLoss { epoch, batch: b });
            }
            adam.step(&mut net, &grads);
        }
        let acc = accuracy_of(&net, val_x.view(), &val_y);
        history.push(acc);
        if acc > best_acc {
            best_acc = acc;
            best = net.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainedProbe {
        config: cfg.clone(),
        classes,
        network: best,
        epochs_run: history.len(),
        val_accuracy_history: history,
    })
}

/// Fraction of rows whose predicted class name equals the label.
pub fn evaluate(p: &TrainedProbe, table: &FeatureTable) -> Result<f64, ProbeError> {
    if table.dim() != p.input_dim() {
        return Err(ProbeError::DimMismatch {
            expected: p.input_dim(),
            got: table.dim(),
        });
    }
    if table.is_empty() {
        return Ok(0.0);
    }
    let pred = p.predict(table.rows.view())?;
    let hits = pred
        .iter()
        .zip(&table.labels)
        .filter(|(&c, label)| p.classes[c] == **label)
        .count();
    Ok(hits as f64 / table.len() as f64)
}

/// Analytic versus central-difference gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub sum_abs_error: f64,
    pub n_params: usize,
    /// Parameters skipped because a perturbation crossed a rectifier kink.
    pub n_skipped: usize,
}

/// Relative errors use this floor in the denominator so that gradients that
/// are numerically zero are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-5;
pub const FD_STEP: f64 = 1e-4;

/// Checks the gradients of a freshly initialized `cfg` network on `x`.
pub fn gradient_check(cfg: &ProbeConfig, x: ArrayView2<f64>, y: &[usize]) -> Result<GradCheck, ProbeError> {
    cfg.validate()?;
    if x.nrows() > 16 || x.nrows() != y.len() || x.nrows() == 0 {
        return Err(ProbeError::Precondition("need 1..=16 rows with one label each".into()));
    }
    if x.ncols() > 32 || cfg.hidden_layout.iter().any(|&w| w > 32) || cfg.out_classes > 32 {
        return Err(ProbeError::Precondition("gradient check is for nets with dims <= 32".into()));
    }
    if y.iter().any(|&c| c >= cfg.out_classes) {
        return Err(ProbeError::Precondition("label out of range".into()));
    }
    let net = Network::<f64>::init(x.ncols(), &cfg.hidden_layout, cfg.out_classes, cfg.seed);
    Ok(gradient_check_network(&net, x, y, FD_STEP))
}

/// Analytic gradient of every parameter, flattened layer by layer
/// (weights row-major, then bias).
pub fn flat_gradient(net: &Network<f64>, x: ArrayView2<f64>, y: &[usize]) -> Vec<f64> {
    let (_, grads) = net.loss_and_grads(x, y);
    grads
        .iter()
        .flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied().collect::<Vec<_>>())
        .collect()
}

/// Central-difference gradient in the same order as [`flat_gradient`].
/// Entries are `None` where a perturbation crossed a rectifier kink.
pub fn numeric_gradient(net: &Network<f64>, x: ArrayView2<f64>, y: &[usize], step: f64) -> Vec<Option<f64>> {
    let pattern = net.relu_pattern(x);
    let mut work = net.clone();
    let mut out = Vec::new();
    for l in 0..net.layers.len() {
        let n = net.layers[l].weights.len() + net.layers[l].bias.len();
        for idx in 0..n {
            let orig = *work.param_mut(l, idx);
            *work.param_mut(l, idx) = orig + step;
            let plus = work.loss(x, y);
            let kink = work.relu_pattern(x) != pattern;
            *work.param_mut(l, idx) = orig - step;
            let minus = work.loss(x, y);
            let kink = kink || work.relu_pattern(x) != pattern;
            *work.param_mut(l, idx) = orig;
            out.push((!kink).then(|| (plus - minus) / (2.0 * step)));
        }
    }
    out
}

pub fn gradient_check_network(net: &Network<f64>, x: ArrayView2<f64>, y: &[usize], step: f64) -> GradCheck {
    let analytic = flat_gradient(net, x, y);
    let numeric = numeric_gradient(net, x, y, step);
    let mut out = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        sum_abs_error: 0.0,
        n_params: analytic.len(),
        n_skipped: 0,
    };
    for (a, n) in analytic.into_iter().zip(numeric) {
        let Some(n) = n else {
            out.n_skipped += 1;
            continue;
        };
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(GRAD_FLOOR);
        out.max_abs_error = out.max_abs_error.max(abs);
        out.max_rel_error = out.max_rel_error.max(rel);
        out.sum_abs_error += abs;
    }
    out
}

#[derive(Serialize, Deserialize)]
struct ProbeHeader {
    config: ProbeConfig,
    classes: Vec<String>,
    shapes: Vec<(usize, usize)>,
    epochs_run: usize,
    val_accuracy_history: Vec<f64>,
}

/// JSON header plus little-endian f32 weight and bias blobs, layer by layer.
pub fn save_probe(path: impl AsRef<Path>, p: &TrainedProbe) -> Result<(), ProbeError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = ProbeHeader {
        config: p.config.clone(),
        classes: p.classes.clone(),
        shapes: p.network.shapes(),
        epochs_run: p.epochs_run,
        val_accuracy_history: p.val_accuracy_history.clone(),
    };
    let h = serde_json::to_vec(&header).expect("serializable header");
    w.write_all(PROBE_MAGIC)?;
    w.write_u32::<LittleEndian>(h.len() as u32)?;
    w.write_all(&h)?;
    for layer in &p.network.layers {
        for &v in layer.weights.iter().chain(layer.bias.iter()) {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_probe(path: impl AsRef<Path>) -> Result<TrainedProbe, ProbeError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != PROBE_MAGIC {
        return Err(ProbeError::Format("bad magic".into()));
    }
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut h = vec![0u8; n];
    r.read_exact(&mut h)?;
    let header: ProbeHeader = serde_json::from_slice(&h).map_err(|e| ProbeError::Format(e.to_string()))?;
    let mut layers = Vec::new();
    for &(rows, cols) in &header.shapes {
        let mut w = vec![0f32; rows * cols];
        r.read_f32_into::<LittleEndian>(&mut w)?;
        let mut b = vec![0f32; cols];
        r.read_f32_into::<LittleEndian>(&mut b)?;
        layers.push(Dense {
            weights: Array2::from_shape_vec((rows, cols), w).unwrap(),
            bias: Array1::from_vec(b),
        });
    }
    Ok(TrainedProbe {
        config: header.config,
        classes: header.classes,
        network: Network { layers },
        epochs_run: header.epochs_run,
        val_accuracy_history: header.val_accuracy_history,
    })
}
