//! Feed-forward network with explicit forward/backward passes.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Guard added to variances before taking square roots.
const BN_EPS: f64 = 1e-5;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Elu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp() - 1.0
                }
            }
        }
    }

    /// Derivative expressed through the post-activation value. Both
    /// activations are sign-preserving, so `a > 0` identifies the linear
    /// branch; for ELU the saturating branch has slope `a + 1`.
    fn prime_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if a > 0.0 {
                    1.0
                } else {
                    a + 1.0
                }
            }
        }
    }
}

/// Architecture of one network: `layer_widths` is the input width followed
/// by the hidden widths; the output layer has `output_width` units, never
/// carries batch norm, and is linear unless `output_activation` is set
/// (representation networks activate every layer).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub use_batchnorm: bool,
    pub output_width: usize,
    pub output_activation: bool,
    pub l2_decay: f64,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, output_width: usize) -> Self {
        MlpSpec {
            layer_widths,
            activation,
            use_batchnorm: false,
            output_width,
            output_activation: false,
            l2_decay: 0.0,
        }
    }

    pub fn with_batchnorm(mut self, on: bool) -> Self {
        self.use_batchnorm = on;
        self
    }

    pub fn with_output_activation(mut self, on: bool) -> Self {
        self.output_activation = on;
        self
    }

    pub fn with_l2_decay(mut self, decay: f64) -> Self {
        self.l2_decay = decay;
        self
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() {
            return Err(Error::Config("layer_widths must be non-empty".into()));
        }
        if self.layer_widths.iter().any(|&w| w == 0) || self.output_width == 0 {
            return Err(Error::Config("all layer widths must be >= 1".into()));
        }
        if self.l2_decay < 0.0 || !self.l2_decay.is_finite() {
            return Err(Error::Config("l2_decay must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct BatchNorm {
    gamma: Array1<f64>,
    beta: Array1<f64>,
    running_mean: Array1<f64>,
    running_var: Array1<f64>,
    momentum: f64,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: 0.9,
        }
    }
}

/// Batch statistics cached by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
}

#[derive(Debug, Clone)]
struct Layer {
    w: Array2<f64>, // (in, out)
    b: Array1<f64>,
    bn: Option<BatchNorm>,
}

#[derive(Debug, Clone)]
struct Trace {
    /// Input to every layer; `inputs[l]` feeds layer `l`, the last entry
    /// feeds the output layer.
    inputs: Vec<Array2<f64>>,
    bn: Vec<Option<BnCache>>,
    /// Post-activation output of the final layer, kept only when the
    /// output layer is activated.
    final_out: Option<Array2<f64>>,
    batch_rows: usize,
}

/// Gradients for one layer, shaped exactly like its parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_w: Array2<f64>,
    pub d_b: Array1<f64>,
    pub d_gamma: Option<Array1<f64>>,
    pub d_beta: Option<Array1<f64>>,
}

/// Gradients for a whole model (hidden layers first, output layer last).
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub layers: Vec<LayerGrads>,
}

impl MlpGradients {
    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| {
            l.d_w
                .iter()
                .copied()
                .chain(l.d_b.iter().copied())
                .chain(l.d_gamma.iter().flat_map(|g| g.iter().copied()))
                .chain(l.d_beta.iter().flat_map(|b| b.iter().copied()))
        })
    }

    pub fn all_finite(&self) -> bool {
        self.iter_values().all(f64::is_finite)
    }
}

/// Dense feed-forward network. Hidden layers are linear → (batch norm) →
/// activation; the output layer is purely linear.
#[derive(Debug, Clone)]
pub struct MlpModel {
    spec: MlpSpec,
    layers: Vec<Layer>, // hidden layers followed by the output layer
    trace: Option<Trace>,
}

impl MlpModel {
    /// Initialize with variance-preserving weights: `N(0, 2/fan_in)` for
    /// ReLU nets, `N(0, 1/fan_in)` for ELU nets; biases start at zero.
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let gain = match spec.activation {
            Activation::Relu => 2.0,
            Activation::Elu => 1.0,
        };
        let mut layers = Vec::new();
        let widths = &spec.layer_widths;
        for l in 1..widths.len() {
            layers.push(Layer {
                w: init_weights(widths[l - 1], widths[l], gain, rng),
                b: Array1::zeros(widths[l]),
                bn: spec.use_batchnorm.then(|| BatchNorm::new(widths[l])),
            });
        }
        let last = *widths.last().unwrap();
        layers.push(Layer {
            w: init_weights(last, spec.output_width, gain, rng),
            b: Array1::zeros(spec.output_width),
            bn: None,
        });
        Ok(MlpModel {
            spec,
            layers,
            trace: None,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn n_hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Forward pass. In training mode batch statistics are used (and the
    /// running statistics updated) and a trace is cached for `backward`;
    /// inference mode uses the running statistics and clears any trace.
    pub fn forward(&mut self, batch: &Array2<f64>, training: bool) -> Result<Array2<f64>> {
        self.check_input(batch)?;
        if training {
            if self.spec.use_batchnorm && batch.nrows() < 2 {
                return Err(Error::Config(
                    "training forward with batch norm needs a batch of at least 2 rows".into(),
                ));
            }
            self.forward_train(batch)
        } else {
            let out = self.infer(batch)?;
            self.trace = None;
            Ok(out)
        }
    }

    /// Inference-mode forward (running statistics, no trace, no mutation).
    pub fn infer(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(batch)?;
        let mut a = batch.clone();
        let n_layers = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w) + &layer.b;
            if let Some(bn) = &layer.bn {
                for (mut row, _) in z.outer_iter_mut().zip(0..) {
                    for j in 0..row.len() {
                        let x_hat =
                            (row[j] - bn.running_mean[j]) / (bn.running_var[j] + BN_EPS).sqrt();
                        row[j] = bn.gamma[j] * x_hat + bn.beta[j];
                    }
                }
            }
            if l + 1 < n_layers || self.spec.output_activation {
                z.mapv_inplace(|v| self.spec.activation.apply(v));
            }
            check_finite(&z, l)?;
            a = z;
        }
        Ok(a)
    }

    fn forward_train(&mut self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        let n = batch.nrows();
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut bn_caches = Vec::with_capacity(n_layers);
        let mut a = batch.clone();
        let mut out = None;
        for l in 0..n_layers {
            inputs.push(a.clone());
            let layer = &mut self.layers[l];
            let mut z = a.dot(&layer.w) + &layer.b;
            let mut cache = None;
            if let Some(bn) = &mut layer.bn {
                let mean = z.mean_axis(Axis(0)).unwrap();
                // Biased variance, matching the normalization statistic.
                let mut var = Array1::<f64>::zeros(z.ncols());
                for row in z.outer_iter() {
                    for j in 0..row.len() {
                        let d = row[j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.mapv_inplace(|v| v / n as f64);
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let mut x_hat = z.clone();
                for mut row in x_hat.outer_iter_mut() {
                    for j in 0..row.len() {
                        row[j] = (row[j] - mean[j]) * inv_std[j];
                    }
                }
                for (mut row, xrow) in z.outer_iter_mut().zip(x_hat.outer_iter()) {
                    for j in 0..row.len() {
                        row[j] = bn.gamma[j] * xrow[j] + bn.beta[j];
                    }
                }
                cache = Some(BnCache { x_hat, inv_std });
                let m = bn.momentum;
                for j in 0..mean.len() {
                    bn.running_mean[j] = m * bn.running_mean[j] + (1.0 - m) * mean[j];
                    bn.running_var[j] = m * bn.running_var[j] + (1.0 - m) * var[j];
                }
            }
            bn_caches.push(cache);
            if l + 1 < n_layers || self.spec.output_activation {
                z.mapv_inplace(|v| self.spec.activation.apply(v));
            }
            check_finite(&z, l)?;
            if l + 1 == n_layers {
                out = Some(z.clone());
            }
            a = z;
        }
        let out = out.unwrap();
        self.trace = Some(Trace {
            inputs,
            bn: bn_caches,
            final_out: self.spec.output_activation.then(|| out.clone()),
            batch_rows: n,
        });
        Ok(out)
    }

    /// Reverse pass for the most recent training-mode forward. Returns the
    /// parameter gradients (including the l2-decay contribution on weight
    /// matrices) and the gradient with respect to the batch input.
    pub fn backward(&mut self, upstream: &Array2<f64>) -> Result<(MlpGradients, Array2<f64>)> {
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a training-mode forward".into()))?;
        if upstream.nrows() != trace.batch_rows || upstream.ncols() != self.spec.output_width {
            return Err(Error::State(format!(
                "upstream gradient shape {:?} does not match the traced forward ({} x {})",
                upstream.dim(),
                trace.batch_rows,
                self.spec.output_width
            )));
        }
        let n_layers = self.layers.len();
        let mut grads: Vec<Option<LayerGrads>> = vec![None; n_layers];
        let mut delta = upstream.clone();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let is_output = l + 1 == n_layers;
            let act_out = if is_output {
                trace.final_out.as_ref()
            } else {
                // Activation output equals the next layer's input.
                Some(&trace.inputs[l + 1])
            };
            if let Some(act_out) = act_out {
                for (mut drow, arow) in delta.outer_iter_mut().zip(act_out.outer_iter()) {
                    for j in 0..drow.len() {
                        drow[j] *= self.spec.activation.prime_from_output(arow[j]);
                    }
                }
            }
            let (mut d_gamma, mut d_beta) = (None, None);
            if let Some(bn) = &layer.bn {
                let cache = trace.bn[l].as_ref().expect("bn cache recorded in forward");
                let n = trace.batch_rows as f64;
                let width = delta.ncols();
                let mut dg = Array1::<f64>::zeros(width);
                let mut db = Array1::<f64>::zeros(width);
                let mut sum_dxhat = Array1::<f64>::zeros(width);
                let mut sum_dxhat_xhat = Array1::<f64>::zeros(width);
                for (drow, xrow) in delta.outer_iter().zip(cache.x_hat.outer_iter()) {
                    for j in 0..width {
                        dg[j] += drow[j] * xrow[j];
                        db[j] += drow[j];
                        let dxh = drow[j] * bn.gamma[j];
                        sum_dxhat[j] += dxh;
                        sum_dxhat_xhat[j] += dxh * xrow[j];
                    }
                }
                for (mut drow, xrow) in delta.outer_iter_mut().zip(cache.x_hat.outer_iter()) {
                    for j in 0..width {
                        let dxh = drow[j] * bn.gamma[j];
                        drow[j] = cache.inv_std[j] / n
                            * (n * dxh - sum_dxhat[j] - xrow[j] * sum_dxhat_xhat[j]);
                    }
                }
                d_gamma = Some(dg);
                d_beta = Some(db);
            }
            let input = &trace.inputs[l];
            let mut d_w = input.t().dot(&delta);
            if self.spec.l2_decay > 0.0 {
                d_w.scaled_add(self.spec.l2_decay, &layer.w);
            }
            let d_b = delta.sum_axis(Axis(0));
            grads[l] = Some(LayerGrads {
                d_w,
                d_b,
                d_gamma,
                d_beta,
            });
            delta = delta.dot(&layer.w.t());
        }
        Ok((
            MlpGradients {
                layers: grads.into_iter().map(Option::unwrap).collect(),
            },
            delta,
        ))
    }

    /// Drop any cached forward trace.
    pub fn clear_trace(&mut self) {
        self.trace = None;
    }

    fn check_input(&self, batch: &Array2<f64>) -> Result<()> {
        if batch.ncols() != self.spec.input_width() {
            return Err(Error::Config(format!(
                "batch width {} does not match network input width {}",
                batch.ncols(),
                self.spec.input_width()
            )));
        }
        if batch.nrows() == 0 {
            return Err(Error::Config("batch must contain at least one row".into()));
        }
        Ok(())
    }

    /// Sum of squared weight-matrix entries, the quantity penalized by
    /// `l2_decay` (biases and batch-norm parameters are exempt).
    pub fn weight_squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    /// Number of trainable scalars.
    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.w.len()
                    + l.b.len()
                    + l.bn
                        .as_ref()
                        .map_or(0, |bn| bn.gamma.len() + bn.beta.len())
            })
            .sum()
    }

    /// Flatten all trainable parameters in a stable order (per layer:
    /// weights row-major, biases, then gamma/beta when present).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
            if let Some(bn) = &l.bn {
                out.extend(bn.gamma.iter());
                out.extend(bn.beta.iter());
            }
        }
        out
    }

    /// Inverse of [`params_flat`](Self::params_flat).
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for w in l.w.iter_mut() {
                *w = it.next().unwrap();
            }
            for b in l.b.iter_mut() {
                *b = it.next().unwrap();
            }
            if let Some(bn) = &mut l.bn {
                for g in bn.gamma.iter_mut() {
                    *g = it.next().unwrap();
                }
                for b in bn.beta.iter_mut() {
                    *b = it.next().unwrap();
                }
            }
        }
        Ok(())
    }

    /// Human-readable name of the flattened parameter at `idx`.
    pub fn param_name(&self, mut idx: usize) -> String {
        for (l, layer) in self.layers.iter().enumerate() {
            let blocks: Vec<(&str, usize)> = match &layer.bn {
                Some(bn) => vec![
                    ("w", layer.w.len()),
                    ("b", layer.b.len()),
                    ("gamma", bn.gamma.len()),
                    ("beta", bn.beta.len()),
                ],
                None => vec![("w", layer.w.len()), ("b", layer.b.len())],
            };
            for (name, len) in blocks {
                if idx < len {
                    return format!("layer{l}.{name}[{idx}]");
                }
                idx -= len;
            }
        }
        format!("<out of range {idx}>")
    }

    /// Flat gradient vector in the same order as [`params_flat`](Self::params_flat).
    pub fn grads_flat(&self, grads: &MlpGradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for g in &grads.layers {
            out.extend(g.d_w.iter());
            out.extend(g.d_b.iter());
            if let Some(dg) = &g.d_gamma {
                out.extend(dg.iter());
            }
            if let Some(db) = &g.d_beta {
                out.extend(db.iter());
            }
        }
        out
    }

    pub(crate) fn layer_param_shapes(&self) -> Vec<(usize, usize, usize, Option<usize>)> {
        self.layers
            .iter()
            .map(|l| {
                (
                    l.w.nrows(),
                    l.w.ncols(),
                    l.b.len(),
                    l.bn.as_ref().map(|bn| bn.gamma.len()),
                )
            })
            .collect()
    }

    pub(crate) fn apply_update(&mut self, updates: &MlpGradients) {
        for (layer, u) in self.layers.iter_mut().zip(&updates.layers) {
            layer.w.zip_mut_with(&u.d_w, |w, d| *w -= d);
            layer.b.zip_mut_with(&u.d_b, |b, d| *b -= d);
            if let Some(bn) = &mut layer.bn {
                if let (Some(dg), Some(db)) = (&u.d_gamma, &u.d_beta) {
                    bn.gamma.zip_mut_with(dg, |g, d| *g -= d);
                    bn.beta.zip_mut_with(db, |b, d| *b -= d);
                }
            }
        }
    }
}

fn init_weights(fan_in: usize, fan_out: usize, gain: f64, rng: &mut Rng) -> Array2<f64> {
    let scale = (gain / fan_in as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    })
}

fn check_finite(z: &Array2<f64>, layer: usize) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "non-finite activation in layer {layer}"
        )))
    }
}
