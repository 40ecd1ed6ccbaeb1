//! A small fully connected network: ReLU hidden layers and one linear output.
//!
//! Used as the learned ensemble aggregator (squared loss on base-model
//! predictions) and as the tiny feedforward classifier of the grid generator
//! (logistic loss on the output logit). Training is full-batch Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{format_value, FormatError};
use crate::seeded_rng;
use crate::training::{adam_step, AdamParams, AdamState, StopReason};

/// Layer widths `[input, hidden.., 1]` and one flat parameter vector holding,
/// per layer, the `out × in` weight matrix (row-major) followed by the biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) || sizes[sizes.len() - 1] != 1 {
        return Err(Error::InvalidArgument(format!(
            "network widths {sizes:?} must be positive and end in a single output"
        )));
    }
    Ok(())
}

impl Mlp {
    pub fn from_params(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        check_sizes(&sizes)?;
        let want = param_count(&sizes);
        if params.len() != want {
            return Err(Error::ShapeMismatch {
                expected: vec![want],
                found: vec![params.len()],
            });
        }
        Ok(Self { sizes, params })
    }

    pub fn zeros(sizes: Vec<usize>) -> Result<Self> {
        check_sizes(&sizes)?;
        let n = param_count(&sizes);
        Self::from_params(sizes, vec![0.0; n])
    }

    /// Weights uniform on `±1/√fan_in`, biases zero.
    pub fn random(sizes: Vec<usize>, seed: u64) -> Result<Self> {
        let mut mlp = Self::zeros(sizes)?;
        let mut rng = seeded_rng(seed);
        for l in 0..mlp.layers() {
            let bound = 1.0 / (mlp.sizes[l] as f64).sqrt();
            let (w, _) = mlp.layer_range(l);
            for p in &mut mlp.params[w] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        Ok(mlp)
    }

    /// One hidden layer whose output copies input `j` exactly:
    /// `relu(x_j) − relu(−x_j) = x_j`.
    pub fn identity(inputs: usize, hidden: usize, j: usize) -> Result<Self> {
        if j >= inputs || hidden < 2 {
            return Err(Error::InvalidArgument(format!(
                "identity network needs input {j} < {inputs} and at least 2 hidden units"
            )));
        }
        let mut w = vec![0.0; inputs];
        w[j] = 1.0;
        Self::linear(inputs, hidden, &w, None)
    }

    /// One hidden layer computing the mean of its inputs through the first
    /// two hidden units; the remaining units get random input weights and
    /// zero output weights, so the initial output is exactly the mean.
    pub fn mean(inputs: usize, hidden: usize, seed: u64) -> Result<Self> {
        if inputs == 0 || hidden < 2 {
            return Err(Error::InvalidArgument(format!(
                "mean network needs inputs and at least 2 hidden units (got {inputs}, {hidden})"
            )));
        }
        let w = vec![1.0 / inputs as f64; inputs];
        Self::linear(inputs, hidden, &w, Some(seed))
    }

    /// One hidden layer whose output is exactly `w · x` through the first two
    /// hidden units. With a seed the remaining units get random input weights
    /// (still with zero output weights) so training can recruit them;
    /// without one they are all zero.
    pub fn linear(inputs: usize, hidden: usize, w: &[f64], seed: Option<u64>) -> Result<Self> {
        if w.len() != inputs || inputs == 0 || hidden < 2 {
            return Err(Error::InvalidArgument(format!(
                "linear network needs {inputs} > 0 weights (got {}) and at least 2 hidden units",
                w.len()
            )));
        }
        let mut mlp = Self::zeros(vec![inputs, hidden, 1])?;
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut rng = seed.map(seeded_rng);
        let p = &mut mlp.params;
        for h in 0..hidden {
            for i in 0..inputs {
                p[h * inputs + i] = match (h, rng.as_mut()) {
                    (0, _) => w[i],
                    (1, _) => -w[i],
                    (_, Some(r)) => r.random_range(-bound..=bound),
                    (_, None) => 0.0,
                };
            }
        }
        let out = hidden * inputs + hidden;
        p[out] = 1.0;
        p[out + 1] = -1.0;
        Ok(mlp)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Weight and bias ranges of layer `l`.
    fn layer_range(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let start: usize = param_count(&self.sizes[..=l]);
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (start..start + o * i, start + o * i..start + o * i + o)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_width() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.input_width()],
                found: vec![x.len()],
            });
        }
        Ok(())
    }

    /// Activations of every layer, input first and scalar output last.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        for l in 0..self.layers() {
            let (wr, br) = self.layer_range(l);
            let (w, b) = (&self.params[wr], &self.params[br]);
            let input = &acts[l];
            let n_in = input.len();
            let last = l + 1 == self.layers();
            let out: Vec<f64> = b
                .iter()
                .enumerate()
                .map(|(o, &bias)| {
                    let z = bias + w[o * n_in..(o + 1) * n_in].iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                    if last {
                        z
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[f64]) -> f64 {
        self.activations(x).last().expect("output layer")[0]
    }

    /// Adds `upstream · ∂output/∂params` into `grad` and returns the output.
    pub fn accumulate_gradient(&self, x: &[f64], upstream: f64, grad: &mut [f64]) -> Result<f64> {
        self.check_input(x)?;
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.params.len()],
                found: vec![grad.len()],
            });
        }
        Ok(self.backprop(x, upstream, grad))
    }

    fn backprop(&self, x: &[f64], upstream: f64, grad: &mut [f64]) -> f64 {
        let acts = self.activations(x);
        let output = acts[self.layers()][0];
        let mut delta = vec![upstream];
        for l in (0..self.layers()).rev() {
            let (wr, br) = self.layer_range(l);
            let input = &acts[l];
            let n_in = input.len();
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[br.start + o] += d;
                for (g, &a) in grad[wr.start + o * n_in..wr.start + (o + 1) * n_in].iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[wr];
            delta = (0..n_in)
                .map(|i| {
                    if input[i] > 0.0 {
                        delta.iter().enumerate().map(|(o, d)| d * w[o * n_in + i]).sum()
                    } else {
                        0.0
                    }
                })
                .collect();
        }
        output
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean of `(output − y)²`.
    Squared,
    /// Mean binary cross-entropy of `sigmoid(output)` against `y ∈ {0, 1}`.
    Logistic,
}

impl Loss {
    fn value_and_slope(self, out: f64, y: f64) -> (f64, f64) {
        match self {
            Loss::Squared => {
                let r = out - y;
                (r * r, 2.0 * r)
            }
            Loss::Logistic => {
                // softplus(z) − y·z, computed without overflow.
                let softplus = out.max(0.0) + (-out.abs()).exp().ln_1p();
                (softplus - y * out, sigmoid(out) - y)
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpTrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Relative improvement of the monitored loss that resets patience.
    pub tolerance: f64,
}

impl Default for MlpTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_epochs: 2000,
            patience: 200,
            tolerance: 1e-6,
        }
    }
}

impl MlpTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || self.max_epochs == 0 || !(self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument(format!("invalid network training config {self:?}")));
        }
        Ok(())
    }
}

/// Inputs and targets of a full batch.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a [Vec<f64>],
    pub targets: &'a [f64],
}

impl<'a> Batch<'a> {
    pub fn new(inputs: &'a [Vec<f64>], targets: &'a [f64]) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![inputs.len()],
                found: vec![targets.len()],
            });
        }
        if inputs.is_empty() {
            return Err(Error::Empty("training samples"));
        }
        Ok(Self { inputs, targets })
    }
}

#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub mlp: Mlp,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub stop_reason: StopReason,
}

/// Mean loss over a batch.
pub fn batch_loss(mlp: &Mlp, batch: Batch<'_>, loss: Loss) -> Result<f64> {
    let mut sum = 0.0;
    for (x, &y) in batch.inputs.iter().zip(batch.targets) {
        sum += loss.value_and_slope(mlp.forward(x)?, y).0;
    }
    Ok(sum / batch.inputs.len() as f64)
}

fn loss_and_gradient(mlp: &Mlp, batch: Batch<'_>, loss: Loss, grad: &mut [f64]) -> f64 {
    grad.fill(0.0);
    let n = batch.inputs.len() as f64;
    let mut sum = 0.0;
    for (x, &y) in batch.inputs.iter().zip(batch.targets) {
        let out = mlp.forward_unchecked(x);
        let (l, slope) = loss.value_and_slope(out, y);
        sum += l;
        mlp.backprop(x, slope / n, grad);
    }
    sum / n
}

/// Full-batch Adam with early stopping on `val` (or on the training loss when
/// there is none); the best parameters seen are returned.
pub fn train_mlp(
    mut mlp: Mlp,
    train: Batch<'_>,
    val: Option<Batch<'_>>,
    config: &MlpTrainConfig,
    loss: Loss,
) -> Result<MlpTrace> {
    config.validate()?;
    for b in std::iter::once(&train).chain(val.as_ref()) {
        if let Some(x) = b.inputs.iter().find(|x| x.len() != mlp.input_width()) {
            return Err(Error::ShapeMismatch {
                expected: vec![mlp.input_width()],
                found: vec![x.len()],
            });
        }
    }
    let hp = AdamParams {
        lr: config.learning_rate,
        ..AdamParams::default()
    };
    let mut state = AdamState::new(mlp.num_params());
    let mut grad = vec![0.0; mlp.num_params()];
    let monitor_of = |mlp: &Mlp, train_loss: f64| match val {
        Some(v) => batch_loss(mlp, v, loss).expect("validation widths checked"),
        None => train_loss,
    };
    let initial = loss_and_gradient(&mlp, train, loss, &mut grad);
    let mut best = monitor_of(&mlp, initial);
    let mut best_params = mlp.params.clone();
    let mut reference = best;
    let mut stale = 0;
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    if !initial.is_finite() || !best.is_finite() {
        stop_reason = StopReason::Divergence;
    } else {
        for _ in 0..config.max_epochs {
            adam_step(&mut mlp.params, &grad, &mut state, &hp);
            let train_loss = loss_and_gradient(&mlp, train, loss, &mut grad);
            let monitor = monitor_of(&mlp, train_loss);
            train_losses.push(train_loss);
            if val.is_some() {
                val_losses.push(monitor);
            }
            if !train_loss.is_finite() || !monitor.is_finite() {
                stop_reason = StopReason::Divergence;
                break;
            }
            if monitor < best {
                best = monitor;
                best_params.copy_from_slice(&mlp.params);
            }
            if monitor < reference - config.tolerance * reference.abs() {
                reference = monitor;
                stale = 0;
            } else {
                stale += 1;
                if stale > config.patience {
                    stop_reason = StopReason::EarlyStop;
                    break;
                }
            }
        }
    }
    mlp.params = best_params;
    Ok(MlpTrace {
        mlp,
        train_losses,
        val_losses,
        stop_reason,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    sizes: Vec<usize>,
    count: usize,
}

/// JSON header line with the layer widths, then one parameter per line.
pub fn encode_mlp(mlp: &Mlp) -> String {
    let header = Header {
        sizes: mlp.sizes.clone(),
        count: mlp.params.len(),
    };
    let mut out = serde_json::to_string(&header).expect("header serialises");
    out.push('\n');
    for &p in &mlp.params {
        out.push_str(&format_value(p));
        out.push('\n');
    }
    out
}

pub fn decode_mlp(text: &str) -> Result<Mlp> {
    let mut lines = text.lines();
    let header: Header = serde_json::from_str(lines.next().unwrap_or(""))
        .map_err(|e| FormatError::MalformedHeader(e.to_string()))?;
    let mut params = Vec::with_capacity(header.count);
    for (k, l) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let v: f64 = l.trim().parse().map_err(|_| FormatError::MalformedLine {
            line: k + 2,
            reason: format!("bad value {l:?}"),
        })?;
        if !v.is_finite() {
            return Err(FormatError::NonFiniteValue { line: k + 2 }.into());
        }
        params.push(v);
    }
    if params.len() != header.count {
        return Err(FormatError::CountMismatch {
            expected: header.count,
            found: params.len(),
        }
        .into());
    }
    Mlp::from_params(header.sizes, params)
}
