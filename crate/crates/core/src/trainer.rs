//! Fully connected sigmoid classifier trained by mini-batch SGD on either
//! dense matrices or crossbar tiles.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::crossbar::{CrossbarTile, DeviceModel, PulseStats};
use crate::error::{Error, Result};
use crate::mnist::{Mnist, Split, CLASSES};
use crate::stochastic::aux_stream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Input, hidden..., output.
    pub layers: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub seed: u64,
    /// Weight range per layer on analog tiles; one value is broadcast.
    pub w_max: Vec<f64>,
    /// Use only the first N training / test samples (0 = all).
    pub train_limit: usize,
    pub test_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            layers: vec![784, 256, 128, 10],
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.1,
            lr_decay: 0.5,
            decay_every: 10,
            seed: 1,
            w_max: vec![1.0],
            train_limit: 0,
            test_limit: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 || self.layers.contains(&0) {
            return Err(Error::Config("layer sizes must be positive and at least two".into()));
        }
        if *self.layers.last().unwrap() != CLASSES {
            return Err(Error::Config(format!("output layer must have {CLASSES} units")));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.decay_every == 0 {
            return Err(Error::Config("lr_decay must lie in (0, 1] and decay_every must be >= 1".into()));
        }
        let n = self.layers.len() - 1;
        if !(self.w_max.len() == 1 || self.w_max.len() == n) || self.w_max.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("w_max needs 1 or {n} positive values")));
        }
        Ok(())
    }

    pub fn w_max_for(&self, layer: usize) -> f64 {
        if self.w_max.len() == 1 {
            self.w_max[0]
        } else {
            self.w_max[layer]
        }
    }

    /// LR at zero-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

pub enum Backend {
    FloatingPoint,
    Analog(Arc<DeviceModel>),
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::FloatingPoint => "fp",
            Backend::Analog(_) => "analog",
        }
    }
}

/// Weights of one layer, shape (out, in + 1) with the bias in the last column.
pub enum Layer {
    Dense(Array2<f64>),
    Tile(CrossbarTile),
}

impl Layer {
    pub fn weights(&self) -> ArrayView2<'_, f64> {
        match self {
            Layer::Dense(w) => w.view(),
            Layer::Tile(t) => t.weights(),
        }
    }

    fn apply(&mut self, delta_w: Array2<f64>) -> Result<PulseStats> {
        match self {
            Layer::Dense(w) => {
                *w += &delta_w;
                Ok(PulseStats::default())
            }
            Layer::Tile(t) => t.pulsed_update(delta_w.view()),
        }
    }
}

pub struct Network {
    pub layers: Vec<Layer>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn with_bias(x: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[x, Array2::ones((x.nrows(), 1)).view()]).expect("rows match")
}

fn softmax_rows(z: &mut Array2<f64>) {
    for mut row in z.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

/// Activations of every layer: inputs with bias, then probabilities.
struct Pass {
    inputs: Vec<Array2<f64>>,
    probs: Array2<f64>,
}

impl Network {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initial weights, zero bias.
    pub fn initial_weights(config: &TrainConfig) -> Vec<Array2<f64>> {
        let mut rng = aux_stream(config.seed, "init");
        config
            .layers
            .windows(2)
            .map(|p| {
                let (fan_in, fan_out) = (p[0], p[1]);
                let a = 1.0 / (fan_in as f64).sqrt();
                let mut w = Array2::zeros((fan_out, fan_in + 1));
                for v in w.slice_mut(s![.., ..fan_in]).iter_mut() {
                    *v = rng.random_range(-a..a);
                }
                w
            })
            .collect()
    }

    pub fn new(config: &TrainConfig, backend: &Backend) -> Result<Self> {
        config.validate()?;
        let init = Self::initial_weights(config);
        let layers = init
            .into_iter()
            .enumerate()
            .map(|(k, w)| match backend {
                Backend::FloatingPoint => Ok(Layer::Dense(w)),
                Backend::Analog(model) => Ok(Layer::Tile(CrossbarTile::new(model.clone(), k as u64, w.view(), config.w_max_for(k))?)),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Network { layers })
    }

    fn forward(&self, x: ArrayView2<f64>) -> Pass {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = with_bias(x);
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weights().t());
            inputs.push(a);
            if k + 1 == self.layers.len() {
                softmax_rows(&mut z);
                return Pass { inputs, probs: z };
            }
            z.mapv_inplace(sigmoid);
            a = with_bias(z.view());
        }
        unreachable!("network has at least one layer")
    }

    /// Class probabilities.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).probs
    }

    /// Mean cross-entropy and its gradient for each layer's weights.
    pub fn loss_and_gradients(&self, x: ArrayView2<f64>, y: ArrayView2<f64>) -> (f64, Vec<Array2<f64>>) {
        let pass = self.forward(x);
        let b = x.nrows() as f64;
        let loss = -pass.probs.iter().zip(y.iter()).filter(|(_, &t)| t > 0.0).map(|(p, t)| t * p.max(1e-300).ln()).sum::<f64>() / b;
        let mut delta = (&pass.probs - &y) / b;
        let mut grads = vec![Array2::zeros((0, 0)); self.layers.len()];
        for k in (0..self.layers.len()).rev() {
            let a = &pass.inputs[k];
            grads[k] = delta.t().dot(a);
            if k > 0 {
                let w = self.layers[k].weights();
                let fan_in = w.ncols() - 1;
                let back = delta.dot(&w.slice(s![.., ..fan_in]));
                let act = a.slice(s![.., ..fan_in]);
                delta = back * act.mapv(|s| s * (1.0 - s));
            }
        }
        (loss, grads)
    }

    /// Fraction of correctly classified samples.
    pub fn evaluate(&self, split: &Split) -> f64 {
        if split.is_empty() {
            return 0.0;
        }
        let chunk = 1000;
        let mut correct = 0usize;
        for start in (0..split.len()).step_by(chunk) {
            let end = (start + chunk).min(split.len());
            let p = self.predict_proba(split.images.slice(s![start..end, ..]));
            for (i, row) in p.rows().into_iter().enumerate() {
                if argmax(row.iter().copied()) == split.labels[start + i] as usize {
                    correct += 1;
                }
            }
        }
        correct as f64 / split.len() as f64
    }

    fn update(&mut self, grads: Vec<Array2<f64>>, lr: f64) -> Result<PulseStats> {
        let mut stats = PulseStats::default();
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            stats = stats + layer.apply(g * -lr)?;
        }
        Ok(stats)
    }
}

fn argmax(v: impl Iterator<Item = f64>) -> usize {
    v.enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, x)| if x > acc.1 { (i, x) } else { acc }).0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub test_acc: f64,
    pub pulses_applied: u64,
    pub pulses_skipped: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: TrainConfig,
    pub backend: String,
    pub epochs: Vec<EpochRecord>,
    pub final_accuracy: f64,
    pub wall_time_s: f64,
    /// Free-form provenance (file hashes, noise selector, ...).
    pub metadata: std::collections::BTreeMap<String, String>,
}

impl RunResult {
    /// CSV with the metadata as `#`-prefixed TOML lines on top.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Header<'a> {
            backend: &'a str,
            final_accuracy: f64,
            wall_time_s: f64,
            metadata: &'a std::collections::BTreeMap<String, String>,
            config: &'a TrainConfig,
        }
        let h = Header {
            backend: &self.backend,
            final_accuracy: self.final_accuracy,
            wall_time_s: self.wall_time_s,
            metadata: &self.metadata,
            config: &self.config,
        };
        let toml = toml::to_string(&h).map_err(std::io::Error::other)?;
        for line in toml.lines() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "epoch,loss,test_acc,learning_rate,pulses_applied,pulses_skipped")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{},{},{},{}", e.epoch, e.loss, e.test_acc, e.learning_rate, e.pulses_applied, e.pulses_skipped)?;
        }
        Ok(())
    }
}

/// Trains from scratch; `on_epoch` sees every finished epoch.
pub fn train(
    config: &TrainConfig,
    data: &Mnist,
    backend: &Backend,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunResult> {
    let started = Instant::now();
    config.validate()?;
    if data.train.images.ncols() != config.layers[0] {
        return Err(Error::Dimension {
            expected: format!("{} input features", config.layers[0]),
            got: format!("{}", data.train.images.ncols()),
        });
    }
    let limit = |s: &Split, n: usize| if n == 0 { s.clone() } else { s.head(n) };
    let train_set = limit(&data.train, config.train_limit);
    let test_set = limit(&data.test, config.test_limit);
    let targets = train_set.one_hot();
    let mut net = Network::new(config, backend)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = aux_stream(config.seed, "shuffle");
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut stats = PulseStats::default();
        for idx in order.chunks(config.batch_size) {
            let x = train_set.images.select(Axis(0), idx);
            let y = targets.select(Axis(0), idx);
            let (loss, grads) = net.loss_and_gradients(x.view(), y.view());
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch: epoch + 1, loss });
            }
            loss_sum += loss;
            batches += 1;
            stats = stats + net.update(grads, lr)?;
        }
        let rec = EpochRecord {
            epoch: epoch + 1,
            learning_rate: lr,
            loss: loss_sum / batches as f64,
            test_acc: net.evaluate(&test_set),
            pulses_applied: stats.applied,
            pulses_skipped: stats.skipped,
        };
        on_epoch(&rec);
        epochs.push(rec);
    }
    let final_accuracy = epochs.last().map(|e| e.test_acc).unwrap_or(0.0);
    let mut metadata = std::collections::BTreeMap::new();
    if let Backend::Analog(m) = backend {
        metadata.insert("dg_per_pulse".into(), format!("{:e}", m.dg_per_pulse()));
        if let Layer::Tile(t) = &net.layers[0] {
            metadata.insert("dw_per_pulse_layer0".into(), format!("{:e}", t.dw_per_pulse()));
        }
    }
    Ok(RunResult {
        config: config.clone(),
        backend: backend.name().into(),
        epochs,
        final_accuracy,
        wall_time_s: started.elapsed().as_secs_f64(),
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (TrainConfig, Network) {
        let cfg = TrainConfig { layers: vec![16, 8, 10], seed: 3, ..Default::default() };
        let mut net = Network::new(&cfg, &Backend::FloatingPoint).unwrap();
        let mut rng = aux_stream(11, "bias");
        for l in net.layers.iter_mut() {
            if let Layer::Dense(w) = l {
                w.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
            }
        }
        (cfg, net)
    }

    #[test]
    fn schedule_halves_every_ten_epochs() {
        let c = TrainConfig { learning_rate: 0.8, ..Default::default() };
        assert_eq!(c.learning_rate_at(0), 0.8);
        assert_eq!(c.learning_rate_at(9), 0.8);
        assert_eq!(c.learning_rate_at(10), 0.4);
        assert_eq!(c.learning_rate_at(25), 0.2);
    }

    #[test]
    fn gradients_match_central_differences() {
        let (_, mut net) = toy();
        let mut rng = aux_stream(5, "data");
        let x = Array2::from_shape_fn((4, 16), |_| rng.random_range(0.0..1.0));
        let mut y = Array2::zeros((4, 10));
        for i in 0..4 {
            y[[i, (3 * i) % 10]] = 1.0;
        }
        let (_, grads) = net.loss_and_gradients(x.view(), y.view());
        let h = 1e-6;
        for k in 0..net.layers.len() {
            let shape = grads[k].dim();
            for (i, j) in [(0, 0), (1, 3), (shape.0 - 1, shape.1 - 1), (2, shape.1 / 2)] {
                let probe = |net: &mut Network, d: f64| {
                    if let Layer::Dense(w) = &mut net.layers[k] {
                        w[[i, j]] += d;
                    }
                };
                probe(&mut net, h);
                let lp = net.loss_and_gradients(x.view(), y.view()).0;
                probe(&mut net, -2.0 * h);
                let lm = net.loss_and_gradients(x.view(), y.view()).0;
                probe(&mut net, h);
                let fd = (lp - lm) / (2.0 * h);
                let g = grads[k][[i, j]];
                assert!((fd - g).abs() <= 1e-5 * g.abs().max(1e-3), "layer {k} ({i},{j}): {g} vs {fd}");
            }
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (_, net) = toy();
        let p = net.predict_proba(Array2::from_elem((3, 16), 0.5).view());
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { layers: vec![784, 0, 10], ..Default::default() }.validate().is_err());
    }
}
