//! Feed-forward binary classifier `w(x, y, z)` separating joint samples
//! (label 1) from product samples (label 0).
//!
//! Architecture: affine + ReLU hidden layers, a scalar affine output, a
//! sigmoid, and a clamp to `[tau, 1 - tau]`. The clamp bounds the odds
//! `w / (1 - w)` and keeps the cross-entropy loss finite. Training minimizes
//! the pooled binary cross-entropy with Adam over shuffled minibatches.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resample::LabeledBatch;
use crate::rng::rng_from_seed;

/// Hidden-layer nonlinearity. Only ReLU is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Network shape and training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub tau: f64,
    #[serde(default)]
    pub optimizer: AdamConfig,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub init_seed: u64,
}

/// Default minibatch size (see README for the trade-off against epochs).
pub const DEFAULT_MINIBATCH: usize = 2048;

impl NetConfig {
    /// Two hidden layers of 64 units, `tau = 1e-3`, 200 epochs.
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            tau: 1e-3,
            optimizer: AdamConfig::default(),
            minibatch_size: DEFAULT_MINIBATCH,
            epochs: 200,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input dimension must be at least 1"));
        }
        if let Some(pos) = self.hidden.iter().position(|&w| w == 0) {
            return Err(Error::config(format!("hidden layer {pos} has zero width")));
        }
        if !(self.tau > 0.0 && self.tau < 0.5) {
            return Err(Error::config(format!("tau must lie in (0, 0.5), got {}", self.tau)));
        }
        if self.minibatch_size == 0 {
            return Err(Error::config("minibatch size must be at least 1"));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.epsilon > 0.0)
        {
            return Err(Error::config("invalid Adam hyperparameters"));
        }
        Ok(())
    }

    /// Number of trainable parameters.
    pub fn parameter_count(&self) -> usize {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(1);
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// One affine map `a -> a W + b` with `W` of shape `(in, out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-epoch training record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean minibatch loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Euclidean norm of all parameters after training.
    pub parameter_norm: f64,
}

/// A trained or freshly initialized classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    layers: Vec<Layer>,
    config: NetConfig,
    pub log: TrainingLog,
}

struct Forward {
    /// Input followed by each hidden activation.
    acts: Vec<Array2<f64>>,
    logits: Array1<f64>,
}

#[inline]
fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

impl Classifier {
    /// Fan-in scaled uniform weights `U(-1/sqrt(in), 1/sqrt(in))`, zero biases.
    pub fn init(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(config.init_seed);
        let mut widths = vec![config.input_dim];
        widths.extend(&config.hidden);
        widths.push(1);
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_fn((w[0], w[1]), |_| rng.gen_range(-bound..bound)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        let mut c = Self {
            layers,
            config,
            log: TrainingLog::default(),
        };
        c.log.parameter_norm = c.parameter_norm();
        Ok(c)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn tau(&self) -> f64 {
        self.config.tau
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn forward(&self, input: ArrayView2<'_, f64>) -> Forward {
        let (hidden, out) = self.layers.split_at(self.layers.len() - 1);
        let mut acts = Vec::with_capacity(hidden.len() + 1);
        acts.push(input.to_owned());
        for layer in hidden {
            let mut pre = acts.last().expect("input present").dot(&layer.weights);
            pre += &layer.bias;
            pre.mapv_inplace(|v| v.max(0.0));
            acts.push(pre);
        }
        let out = &out[0];
        let mut logits = acts.last().expect("input present").dot(&out.weights.column(0));
        logits += out.bias[0];
        Forward { acts, logits }
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.config.input_dim {
            return Err(Error::Dimension {
                expected: self.config.input_dim,
                got: width,
            });
        }
        Ok(())
    }

    /// Pre-sigmoid outputs for each row.
    pub fn logits(&self, features: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.check_width(features.ncols())?;
        let mut out = Array1::zeros(features.nrows());
        for (chunk, mut dst) in features
            .axis_chunks_iter(Axis(0), 4096)
            .zip(out.axis_chunks_iter_mut(Axis(0), 4096))
        {
            dst.assign(&self.forward(chunk).logits);
        }
        Ok(out)
    }

    /// Clamped outputs `w` in `[tau, 1 - tau]` for each row.
    pub fn evaluate_batch(&self, features: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let tau = self.config.tau;
        Ok(self.logits(features)?.mapv(|s| sigmoid(s).clamp(tau, 1.0 - tau)))
    }

    /// Clamped output for one concatenated `(x, y, z)` vector.
    pub fn evaluate(&self, sample: &[f64]) -> Result<f64> {
        let view = ArrayView2::from_shape((1, sample.len()), sample).expect("one row");
        Ok(self.evaluate_batch(view)?[0])
    }

    /// `p1 L1 + (1 - p1) L2` with `p1 = b / (b + b')`, i.e. the mean binary
    /// cross-entropy over the pooled batches.
    pub fn empirical_loss(&self, joint: &LabeledBatch, product: &LabeledBatch) -> Result<f64> {
        if joint.is_empty() || product.is_empty() {
            return Err(Error::Empty("loss needs non-empty joint and product batches".into()));
        }
        let wj = self.evaluate_batch(joint.features().view())?;
        let wp = self.evaluate_batch(product.features().view())?;
        let (b, bp) = (wj.len() as f64, wp.len() as f64);
        let l1 = -wj.mapv(f64::ln).sum() / b;
        let l2 = -wp.mapv(|w| (1.0 - w).ln()).sum() / bp;
        let p1 = b / (b + bp);
        Ok(p1 * l1 + (1.0 - p1) * l2)
    }

    /// Mean cross-entropy and its gradient (flattened like
    /// [`Classifier::parameters`]) over labeled rows.
    pub fn loss_and_gradient(
        &self,
        features: ArrayView2<'_, f64>,
        labels: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        self.check_width(features.ncols())?;
        if labels.len() != features.nrows() || labels.is_empty() {
            return Err(Error::Dimension {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        let (loss, grads) = self.backprop(features, labels);
        let flat = grads
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied())
            .collect();
        Ok((loss, flat))
    }

    fn backprop(&self, input: ArrayView2<'_, f64>, labels: &[f64]) -> (f64, Vec<Layer>) {
        let tau = self.config.tau;
        let rows = input.nrows() as f64;
        let fwd = self.forward(input);
        let mut loss = 0.0;
        let mut delta = Array2::<f64>::zeros((input.nrows(), 1));
        for (i, (&s, &q)) in fwd.logits.iter().zip(labels).enumerate() {
            let sig = sigmoid(s);
            let w = sig.clamp(tau, 1.0 - tau);
            loss -= q * w.ln() + (1.0 - q) * (1.0 - w).ln();
            // The clamp passes gradient only strictly inside (tau, 1 - tau).
            if sig > tau && sig < 1.0 - tau {
                delta[[i, 0]] = (sig - q) / rows;
            }
        }
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let a = &fwd.acts[l];
            let gw = a.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&layer.weights.t());
                Zip::from(&mut back).and(a).for_each(|d, &act| {
                    if act <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(Layer { weights: gw, bias: gb });
        }
        grads.reverse();
        (loss / rows, grads)
    }

    /// All parameters, layer by layer: weights row-major, then biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum();
        if flat.len() != total {
            return Err(Error::Dimension {
                expected: total,
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for (w, v) in l.weights.iter_mut().zip(&mut it) {
                *w = v;
            }
            for (b, v) in l.bias.iter_mut().zip(&mut it) {
                *b = v;
            }
        }
        Ok(())
    }

    pub fn parameter_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Trains on the pooled joint and product batches for the configured
    /// number of epochs; `shuffle_seed` drives the per-epoch permutations.
    pub fn train(
        mut self,
        joint: &LabeledBatch,
        product: &LabeledBatch,
        shuffle_seed: u64,
    ) -> Result<Self> {
        if joint.is_empty() || product.is_empty() {
            return Err(Error::Empty("training needs non-empty joint and product batches".into()));
        }
        self.check_width(joint.input_dim())?;
        self.check_width(product.input_dim())?;
        let pool = ndarray::concatenate(Axis(0), &[joint.features().view(), product.features().view()])
            .expect("equal widths checked");
        let labels: Vec<f64> = std::iter::repeat(1.0)
            .take(joint.len())
            .chain(std::iter::repeat(0.0).take(product.len()))
            .collect();
        self.fit(pool.view(), &labels, shuffle_seed)?;
        Ok(self)
    }

    /// Minibatch Adam over labeled rows.
    pub fn fit(&mut self, pool: ArrayView2<'_, f64>, labels: &[f64], shuffle_seed: u64) -> Result<()> {
        self.check_width(pool.ncols())?;
        let n = pool.nrows();
        let dim = pool.ncols();
        let cfg = self.config.optimizer;
        let bs = self.config.minibatch_size.min(n.max(1));
        let mut rng = rng_from_seed(shuffle_seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut moments: Vec<(Layer, Layer)> = self
            .layers
            .iter()
            .map(|l| {
                let z = Layer {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                };
                (z.clone(), z)
            })
            .collect();
        let mut step = 0i32;
        let mut buf = Array2::<f64>::zeros((bs, dim));
        let mut lab = vec![0.0; bs];
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(bs) {
                let rows = chunk.len();
                if buf.nrows() != rows {
                    buf = Array2::zeros((rows, dim));
                    lab.resize(rows, 0.0);
                }
                for (r, &src) in chunk.iter().enumerate() {
                    buf.row_mut(r).assign(&pool.row(src));
                    lab[r] = labels[src];
                }
                let (loss, grads) = self.backprop(buf.view(), &lab[..rows]);
                total += loss * rows as f64;
                step += 1;
                let c1 = 1.0 - cfg.beta1.powi(step);
                let c2 = 1.0 - cfg.beta2.powi(step);
                for ((layer, g), (m, v)) in self.layers.iter_mut().zip(&grads).zip(&mut moments) {
                    adam_update(&cfg, c1, c2, layer.weights.view_mut(), g.weights.view(), m.weights.view_mut(), v.weights.view_mut());
                    adam_update(&cfg, c1, c2, layer.bias.view_mut(), g.bias.view(), m.bias.view_mut(), v.bias.view_mut());
                }
            }
            let mean = total / n as f64;
            if !mean.is_finite() {
                return Err(Error::Diverged { epoch, loss: mean });
            }
            self.log.epoch_loss.push(mean);
        }
        self.log.parameter_norm = self.parameter_norm();
        Ok(())
    }

    /// Writes a JSON checkpoint of the configuration and row-major weights.
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &Checkpoint::from(self))?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        ck.try_into()
    }
}

fn adam_update<D: ndarray::Dimension>(
    cfg: &AdamConfig,
    c1: f64,
    c2: f64,
    param: ndarray::ArrayViewMut<'_, f64, D>,
    grad: ndarray::ArrayView<'_, f64, D>,
    m: ndarray::ArrayViewMut<'_, f64, D>,
    v: ndarray::ArrayViewMut<'_, f64, D>,
) {
    let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.learning_rate, cfg.epsilon);
    Zip::from(param).and(grad).and(m).and(v).for_each(|p, &g, m, v| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    });
}

/// On-disk classifier format, version 1.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: NetConfig,
    pub layers: Vec<CheckpointLayer>,
    pub log: TrainingLog,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointLayer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

const CHECKPOINT_FORMAT: &str = "cmiknn-classifier";

impl From<&Classifier> for Checkpoint {
    fn from(c: &Classifier) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            config: c.config.clone(),
            layers: c
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
            log: c.log.clone(),
        }
    }
}

impl TryFrom<Checkpoint> for Classifier {
    type Error = Error;

    fn try_from(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != 1 {
            return Err(Error::config(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut c = Classifier::init(ck.config)?;
        if c.layers.len() != ck.layers.len() {
            return Err(Error::config("checkpoint layer count differs from its config"));
        }
        for (dst, src) in c.layers.iter_mut().zip(ck.layers) {
            if (src.rows, src.cols) != dst.weights.dim() || src.bias.len() != dst.bias.len() {
                return Err(Error::config("checkpoint layer shape differs from its config"));
            }
            dst.weights = Array2::from_shape_vec((src.rows, src.cols), src.weights)
                .map_err(|e| Error::config(e.to_string()))?;
            dst.bias = Array1::from(src.bias);
        }
        c.log = ck.log;
        Ok(c)
    }
}
