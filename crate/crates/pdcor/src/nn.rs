//! Small feed-forward classifiers with a designated feature tap, manual
//! backpropagation, cross-entropy, and momentum SGD.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

/// Supported activation for hidden layers. The final layer is linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Relu,
}

/// Weights and biases of a feed-forward classifier.
///
/// `feature_tap` names the layer whose post-activation output is the
/// feature map `g(x)`; by default the last hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub feature_tap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `(out, in)` weight matrix.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-layer parameter gradients, same shapes as the model.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

/// Activations cached by a forward pass, for the backward pass.
pub struct ForwardTrace {
    /// Layer inputs: `a[0]` is the batch input, `a[i]` the activation
    /// feeding layer `i`.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation values per layer.
    pre: Vec<Array2<f64>>,
    /// Final logits.
    pub logits: Array2<f64>,
    /// Tap-layer activations.
    pub features: Array2<f64>,
}

impl Mlp {
    /// New model with the given layer widths (`dims[0]` = input dimension,
    /// last entry = class count), uniform `+-1/sqrt(fan_in)` init, and the
    /// feature tap at the last hidden layer.
    pub fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidInput("need at least input and output dims".into()));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidInput("zero layer width".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.gen_range(-bound..bound)
            });
            let bias = Array1::from_shape_fn(fan_out, |_| rng.gen_range(-bound..bound));
            layers.push(Layer { weight, bias });
        }
        let feature_tap = layers.len().saturating_sub(2);
        Ok(Self {
            layers,
            activation: Activation::Relu,
            feature_tap,
        })
    }

    /// Validate shape chaining, finiteness, and tap range.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidInput("model has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].weight.nrows() != pair[1].weight.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} output {} does not feed layer {} input {}",
                    i,
                    pair[0].weight.nrows(),
                    i + 1,
                    pair[1].weight.ncols()
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.nrows() != l.bias.len() {
                return Err(Error::DimensionMismatch(format!("layer {i} bias length")));
            }
            if !l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::InvalidInput(format!("layer {i} has non-finite parameters")));
            }
        }
        if self.feature_tap >= self.layers.len() {
            return Err(Error::InvalidInput(format!(
                "feature tap {} out of range for {} layers",
                self.feature_tap,
                self.layers.len()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    /// Forward pass caching everything needed for a backward pass.
    pub fn forward_trace(&self, x: &SampleBatch) -> Result<ForwardTrace> {
        if x.p() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input dim {} vs model {}",
                x.p(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut features = None;
        let mut a = x.as_array().clone();
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(a.clone());
            let mut z = a.dot(&layer.weight.t());
            for mut row in z.rows_mut() {
                row += &layer.bias;
            }
            pre.push(z.clone());
            a = if i < last {
                z.mapv(|v| v.max(0.0))
            } else {
                z
            };
            if i == self.feature_tap {
                features = Some(a.clone());
            }
        }
        Ok(ForwardTrace {
            inputs,
            pre,
            logits: a.clone(),
            features: features.expect("tap index validated"),
        })
    }

    /// Logits and tap features.
    pub fn forward(&self, x: &SampleBatch) -> Result<(Array2<f64>, Array2<f64>)> {
        let t = self.forward_trace(x)?;
        Ok((t.logits, t.features))
    }

    /// Backward pass from a gradient on the logits and, optionally, a
    /// gradient injected at the tap-layer activations. Returns parameter
    /// gradients and the gradient with respect to the batch input.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        d_logits: &Array2<f64>,
        d_features: Option<&Array2<f64>>,
    ) -> (MlpGrads, Array2<f64>) {
        let last = self.layers.len() - 1;
        let mut weights = vec![Array2::zeros((0, 0)); self.layers.len()];
        let mut biases = vec![Array1::zeros(0); self.layers.len()];

        // d_act: gradient w.r.t. the activation output of the current layer
        let mut d_act = d_logits.clone();
        for i in (0..self.layers.len()).rev() {
            if i == self.feature_tap {
                if let Some(df) = d_features {
                    d_act += df;
                }
            }
            // through the activation (final layer is linear)
            let d_z = if i < last {
                let mut d = d_act.clone();
                d.zip_mut_with(&trace.pre[i], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                d
            } else {
                d_act.clone()
            };
            weights[i] = d_z.t().dot(&trace.inputs[i]);
            biases[i] = d_z.t().dot(&Array1::from_elem(d_z.nrows(), 1.0));
            d_act = d_z.dot(&self.layers[i].weight);
        }
        (MlpGrads { weights, biases }, d_act)
    }

    /// Gradient of a loss with respect to the batch input (for attacks).
    pub fn input_gradient(
        &self,
        x: &SampleBatch,
        d_logits: &Array2<f64>,
    ) -> Result<Array2<f64>> {
        let trace = self.forward_trace(x)?;
        let (_, d_input) = self.backward(&trace, d_logits, None);
        Ok(d_input)
    }

    /// Post-activation output of every layer in order (the last entry is
    /// the logits).
    pub fn layer_activations(&self, x: &SampleBatch) -> Result<Vec<Array2<f64>>> {
        let trace = self.forward_trace(x)?;
        let mut out: Vec<Array2<f64>> = trace.inputs[1..].to_vec();
        out.push(trace.logits);
        Ok(out)
    }

    /// Predicted class indices.
    pub fn predict(&self, x: &SampleBatch) -> Result<Vec<usize>> {
        let (logits, _) = self.forward(x)?;
        Ok(argmax_rows(&logits))
    }

    /// Fraction of correct predictions.
    pub fn accuracy(&self, x: &SampleBatch, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        if pred.len() != labels.len() {
            return Err(Error::DimensionMismatch("labels vs batch".into()));
        }
        let hit = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hit as f64 / labels.len() as f64)
    }
}

pub fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (i, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Mean negative log-softmax of the true-class logits.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[y];
    }
    Ok(total / labels.len() as f64)
}

/// Gradient of [`cross_entropy`] with respect to the logits:
/// `(softmax - onehot) / n`.
pub fn cross_entropy_grad(logits: &Array2<f64>, labels: &[usize]) -> Result<Array2<f64>> {
    check_labels(logits, labels)?;
    let n = labels.len() as f64;
    let mut g = Array2::zeros(logits.raw_dim());
    for (i, (row, &y)) in logits.rows().into_iter().zip(labels).enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (j, e) in exps.iter().enumerate() {
            g[[i, j]] = (e / sum - if j == y { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok(g)
}

fn check_labels(logits: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} logit rows vs {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(Error::InvalidInput(format!(
            "label {bad} out of range for {} classes",
            logits.ncols()
        )));
    }
    Ok(())
}

/// Momentum SGD: `v <- mu v + g`, `p <- p - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Option<MlpGrads>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &MlpGrads) -> Result<()> {
        if grads.weights.len() != model.layers.len() {
            return Err(Error::DimensionMismatch("gradient layer count".into()));
        }
        let velocity = self.velocity.get_or_insert_with(|| MlpGrads {
            weights: model.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: model.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        });
        for (i, layer) in model.layers.iter_mut().enumerate() {
            if grads.weights[i].raw_dim() != layer.weight.raw_dim() {
                return Err(Error::DimensionMismatch(format!("layer {i} weight gradient shape")));
            }
            velocity.weights[i] = self.momentum * &velocity.weights[i] + &grads.weights[i];
            velocity.biases[i] = self.momentum * &velocity.biases[i] + &grads.biases[i];
            layer.weight = &layer.weight - &(self.lr * &velocity.weights[i]);
            layer.bias = &layer.bias - &(self.lr * &velocity.biases[i]);
        }
        Ok(())
    }
}

/// One plain (momentum-free, stateless) SGD update, returning the new
/// parameters.
pub fn sgd_step(model: &Mlp, grads: &MlpGrads, lr: f64) -> Result<Mlp> {
    let mut out = model.clone();
    let mut opt = Sgd::new(lr, 0.0);
    opt.step(&mut out, grads)?;
    Ok(out)
}

impl MlpGrads {
    pub fn zeros_like(model: &Mlp) -> Self {
        Self {
            weights: model.layers.iter().map(|l| Array2::zeros(l.weight.raw_dim())).collect(),
            biases: model.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            *w *= s;
        }
        for b in &mut self.biases {
            *b *= s;
        }
    }

    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        for w in &self.weights {
            s += w.iter().map(|v| v * v).sum::<f64>();
        }
        for b in &self.biases {
            s += b.iter().map(|v| v * v).sum::<f64>();
        }
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}
