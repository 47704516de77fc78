use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{rng_from_seed, SimRng};

/// What the network's output means.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Real outputs trained with mean squared error.
    Regression { dim: usize },
    /// Class scores trained with softmax cross-entropy; targets are class indices.
    Classification { classes: usize },
}

impl Head {
    pub fn output_dim(&self) -> usize {
        match *self {
            Head::Regression { dim } => dim,
            Head::Classification { classes } => classes,
        }
    }

    /// Number of target values stored per sample.
    pub fn target_dim(&self) -> usize {
        match *self {
            Head::Regression { dim } => dim,
            Head::Classification { .. } => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![100, 100, 10],
            learning_rate: 1e-3,
            batch_size: 64,
        }
    }
}

#[derive(Clone, Debug)]
struct Layer {
    n_in: usize,
    n_out: usize,
    /// Row-major `n_in x n_out`.
    w: Vec<f32>,
    b: Vec<f32>,
}

#[derive(Clone, Debug)]
struct AdamState {
    m: Vec<f32>,
    v: Vec<f32>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Feed-forward ReLU network with a linear output layer, trained with Adam.
#[derive(Clone, Debug)]
pub struct PolicyModel {
    head: Head,
    config: ModelConfig,
    layers: Vec<Layer>,
    /// One state per parameter tensor, in order `w0, b0, w1, b1, ...`.
    adam: Vec<AdamState>,
    adam_t: u64,
    final_loss: Option<f64>,
}

/// Scratch buffers for one minibatch.
struct Workspace {
    /// Activations per layer input, `acts[0]` is the batch itself.
    acts: Vec<Vec<f32>>,
    /// Pre-activations per layer.
    pre: Vec<Vec<f32>>,
    grads_w: Vec<Vec<f32>>,
    grads_b: Vec<Vec<f32>>,
    delta: Vec<f32>,
    delta_prev: Vec<f32>,
}

impl PolicyModel {
    /// Initializes weights and biases uniformly in `+-1/sqrt(fan_in)`.
    pub fn new(input_dim: usize, head: Head, config: ModelConfig, seed: u64) -> Result<Self> {
        if input_dim == 0 || head.output_dim() == 0 {
            return Err(Error::config("model", "input and output dimensions must be positive"));
        }
        if config.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "hidden layers must have positive width"));
        }
        if config.batch_size == 0 || !(config.learning_rate > 0.0) {
            return Err(Error::config("model", "batch size and learning rate must be positive"));
        }
        let mut rng = rng_from_seed(seed);
        let mut widths = vec![input_dim];
        widths.extend(&config.hidden);
        widths.push(head.output_dim());
        let layers: Vec<Layer> = widths
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let bound = 1.0 / (n_in as f32).sqrt();
                Layer {
                    n_in,
                    n_out,
                    w: (0..n_in * n_out).map(|_| rng.random_range(-bound..bound)).collect(),
                    b: (0..n_out).map(|_| rng.random_range(-bound..bound)).collect(),
                }
            })
            .collect();
        let adam = layers
            .iter()
            .flat_map(|l| [l.w.len(), l.b.len()])
            .map(|n| AdamState {
                m: vec![0.0; n],
                v: vec![0.0; n],
            })
            .collect();
        Ok(PolicyModel {
            head,
            config,
            layers,
            adam,
            adam_t: 0,
            final_loss: None,
        })
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Loss on the full dataset after the most recent call to [`PolicyModel::train`].
    pub fn final_loss(&self) -> Option<f64> {
        self.final_loss
    }

    fn workspace(&self, batch: usize) -> Workspace {
        Workspace {
            acts: self.layers.iter().map(|l| vec![0.0; batch * l.n_in]).collect(),
            pre: self.layers.iter().map(|l| vec![0.0; batch * l.n_out]).collect(),
            grads_w: self.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            grads_b: self.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
            delta: Vec::new(),
            delta_prev: Vec::new(),
        }
    }

    /// Runs the network on `batch` rows stored in `ws.acts[0]`; the output lands in the last
    /// pre-activation buffer.
    fn forward(&self, ws: &mut Workspace, batch: usize) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.acts.split_at_mut(l + 1);
            let input = &before[l][..batch * layer.n_in];
            let z = &mut ws.pre[l][..batch * layer.n_out];
            for row in z.chunks_mut(layer.n_out) {
                row.copy_from_slice(&layer.b);
            }
            gemm(
                batch,
                layer.n_in,
                layer.n_out,
                input,
                (layer.n_in, 1),
                &layer.w,
                (layer.n_out, 1),
                z,
                (layer.n_out, 1),
                1.0,
            );
            if l < last {
                let next = &mut after[0][..batch * layer.n_out];
                for (a, z) in next.iter_mut().zip(z.iter()) {
                    *a = z.max(0.0);
                }
            }
        }
    }

    pub fn predict(&self, input: &[f32]) -> Vec<f32> {
        self.predict_batch(input, 1)
    }

    /// Outputs for `batch` row-major inputs.
    pub fn predict_batch(&self, inputs: &[f32], batch: usize) -> Vec<f32> {
        assert_eq!(inputs.len(), batch * self.input_dim(), "input size mismatch");
        let mut ws = self.workspace(batch);
        ws.acts[0].copy_from_slice(inputs);
        self.forward(&mut ws, batch);
        ws.pre.pop().expect("at least one layer")
    }

    /// Mean loss over a dataset, evaluated in chunks.
    pub fn loss(&self, inputs: &[f32], targets: &[f32]) -> f64 {
        let n = inputs.len() / self.input_dim();
        let td = self.head.target_dim();
        let chunk = 1024;
        let mut total = 0.0;
        let mut start = 0;
        while start < n {
            let b = chunk.min(n - start);
            let out = self.predict_batch(&inputs[start * self.input_dim()..(start + b) * self.input_dim()], b);
            total += self.batch_loss(&out, &targets[start * td..(start + b) * td], b, None) * b as f64;
            start += b;
        }
        total / n.max(1) as f64
    }

    /// Mean loss of a batch of outputs; optionally writes `dL/d(output)` into `grad`.
    fn batch_loss(&self, out: &[f32], targets: &[f32], batch: usize, mut grad: Option<&mut Vec<f32>>) -> f64 {
        let od = self.output_dim();
        if let Some(g) = grad.as_deref_mut() {
            g.clear();
            g.resize(batch * od, 0.0);
        }
        let mut total = 0.0f64;
        match self.head {
            Head::Regression { dim } => {
                let scale = 1.0 / (batch * dim) as f64;
                for (i, (y, t)) in out.iter().zip(targets).enumerate() {
                    let diff = (*y - *t) as f64;
                    total += diff * diff * scale;
                    if let Some(g) = grad.as_deref_mut() {
                        g[i] = (2.0 * diff * scale) as f32;
                    }
                }
            }
            Head::Classification { classes } => {
                for (r, (logits, t)) in out.chunks(classes).zip(targets).enumerate() {
                    let target = *t as usize;
                    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
                    let exps: Vec<f64> = logits.iter().map(|z| (*z as f64 - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    total += (sum.ln() - (logits[target] as f64 - max)) / batch as f64;
                    if let Some(g) = grad.as_deref_mut() {
                        for (k, e) in exps.iter().enumerate() {
                            let p = e / sum - if k == target { 1.0 } else { 0.0 };
                            g[r * classes + k] = (p / batch as f64) as f32;
                        }
                    }
                }
            }
        }
        total
    }

    /// One Adam step on a minibatch; returns the minibatch loss.
    fn train_batch(&mut self, ws: &mut Workspace, targets: &[f32], batch: usize) -> f64 {
        self.forward(ws, batch);
        let last = self.layers.len() - 1;
        let mut delta = std::mem::take(&mut ws.delta);
        let loss = {
            let out = &ws.pre[last][..batch * self.output_dim()];
            self.batch_loss(out, targets, batch, Some(&mut delta))
        };
        let mut delta_prev = std::mem::take(&mut ws.delta_prev);
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l < last {
                // ReLU derivative.
                for (d, z) in delta.iter_mut().zip(&ws.pre[l][..batch * layer.n_out]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &ws.acts[l][..batch * layer.n_in];
            gemm(
                layer.n_in,
                batch,
                layer.n_out,
                input,
                (1, layer.n_in),
                &delta,
                (layer.n_out, 1),
                &mut ws.grads_w[l],
                (layer.n_out, 1),
                0.0,
            );
            let gb = &mut ws.grads_b[l];
            gb.iter_mut().for_each(|g| *g = 0.0);
            for row in delta.chunks(layer.n_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                delta_prev.clear();
                delta_prev.resize(batch * layer.n_in, 0.0);
                gemm(
                    batch,
                    layer.n_out,
                    layer.n_in,
                    &delta,
                    (layer.n_out, 1),
                    &layer.w,
                    (1, layer.n_out),
                    &mut delta_prev,
                    (layer.n_in, 1),
                    0.0,
                );
                std::mem::swap(&mut delta, &mut delta_prev);
            }
        }
        ws.delta = delta;
        ws.delta_prev = delta_prev;
        self.adam_update(ws);
        loss
    }

    fn adam_update(&mut self, ws: &Workspace) {
        self.adam_t += 1;
        let t = self.adam_t as i32;
        let lr = self.config.learning_rate;
        let step = (lr * (1.0 - ADAM_BETA2.powi(t)).sqrt() / (1.0 - ADAM_BETA1.powi(t))) as f32;
        let (b1, b2, eps) = (ADAM_BETA1 as f32, ADAM_BETA2 as f32, ADAM_EPS as f32);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (k, (params, grads)) in [(&mut layer.w, &ws.grads_w[l]), (&mut layer.b, &ws.grads_b[l])]
                .into_iter()
                .enumerate()
            {
                let state = &mut self.adam[2 * l + k];
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grads.iter())
                    .zip(state.m.iter_mut().zip(state.v.iter_mut()))
                {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / (v.sqrt() + eps);
                }
            }
        }
    }

    /// Runs `steps` minibatch updates over `n` samples, reshuffling after each pass, and
    /// records the full-dataset loss afterwards.
    pub fn train(&mut self, inputs: &[f32], targets: &[f32], steps: usize, rng: &mut SimRng) -> Result<f64> {
        let d = self.input_dim();
        let td = self.head.target_dim();
        if inputs.is_empty() {
            return Err(Error::Usage("cannot train on an empty dataset".into()));
        }
        if inputs.len() % d != 0 || targets.len() != inputs.len() / d * td {
            return Err(Error::config("dataset", "inputs and targets disagree with the model layout"));
        }
        let n = inputs.len() / d;
        let batch = self.config.batch_size.min(n);
        let mut ws = self.workspace(batch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut cursor = 0;
        let mut batch_targets = vec![0.0f32; batch * td];
        for step in 0..steps {
            if cursor + batch > n {
                order.shuffle(rng);
                cursor = 0;
            }
            for (r, &i) in order[cursor..cursor + batch].iter().enumerate() {
                ws.acts[0][r * d..(r + 1) * d].copy_from_slice(&inputs[i * d..(i + 1) * d]);
                batch_targets[r * td..(r + 1) * td].copy_from_slice(&targets[i * td..(i + 1) * td]);
            }
            cursor += batch;
            let loss = self.train_batch(&mut ws, &batch_targets, batch);
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "training loss became {loss} at step {step} (lr {}, batch {batch}, {n} samples)",
                    self.config.learning_rate
                )));
            }
        }
        let loss = self.loss(inputs, targets);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("final training loss is {loss}")));
        }
        self.final_loss = Some(loss);
        Ok(loss)
    }

    /// Text checkpoint: a header line describing the layout followed by one parameter per line
    /// in layer order (weights row-major, then biases).
    pub fn to_checkpoint(&self) -> String {
        let widths: Vec<String> = std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.n_out))
            .map(|w| w.to_string())
            .collect();
        let head = match self.head {
            Head::Regression { dim } => format!("regression:{dim}"),
            Head::Classification { classes } => format!("classification:{classes}"),
        };
        let mut out = format!(
            "# dida-mlp layers={} head={} params={} lr={} batch={}\n",
            widths.join(","),
            head,
            self.parameter_count(),
            self.config.learning_rate,
            self.config.batch_size
        );
        for layer in &self.layers {
            for x in layer.w.iter().chain(&layer.b) {
                let _ = writeln!(out, "{x:e}");
            }
        }
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty checkpoint".into()))?;
        let field = |name: &str| -> Result<&str> {
            header
                .split_whitespace()
                .find_map(|kv| kv.strip_prefix(name).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::Parse(format!("checkpoint header lacks `{name}`")))
        };
        let widths: Vec<usize> = field("layers")?
            .split(',')
            .map(|w| w.parse().map_err(|_| Error::Parse(format!("bad layer width `{w}`"))))
            .collect::<Result<_>>()?;
        if widths.len() < 2 {
            return Err(Error::Parse("checkpoint needs at least one layer".into()));
        }
        let head = match field("head")?.split_once(':') {
            Some(("regression", d)) => Head::Regression {
                dim: d.parse().map_err(|_| Error::Parse("bad head".into()))?,
            },
            Some(("classification", c)) => Head::Classification {
                classes: c.parse().map_err(|_| Error::Parse("bad head".into()))?,
            },
            _ => return Err(Error::Parse("unknown head".into())),
        };
        let config = ModelConfig {
            hidden: widths[1..widths.len() - 1].to_vec(),
            learning_rate: field("lr")?.parse().map_err(|_| Error::Parse("bad lr".into()))?,
            batch_size: field("batch")?.parse().map_err(|_| Error::Parse("bad batch".into()))?,
        };
        let mut model = PolicyModel::new(widths[0], head, config, 0)?;
        if *widths.last().unwrap() != head.output_dim() {
            return Err(Error::Parse("output width disagrees with the head".into()));
        }
        let mut values = lines.filter(|l| !l.trim().is_empty()).map(|l| {
            l.trim()
                .parse::<f32>()
                .map_err(|_| Error::Parse(format!("bad parameter `{l}`")))
        });
        for layer in &mut model.layers {
            for x in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                *x = values
                    .next()
                    .ok_or_else(|| Error::Parse("checkpoint is truncated".into()))??;
            }
        }
        if values.next().is_some() {
            return Err(Error::Parse("checkpoint has trailing parameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&std::fs::read_to_string(path)?)
    }
}

/// `c = a * b + beta * c` with explicit (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    (rsc, csc): (usize, usize),
    beta: f32,
) {
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= last(m, k, rsa, csa));
    assert!(b.len() >= last(k, n, rsb, csb));
    assert!(c.len() >= last(m, n, rsc, csc));
    // SAFETY: the asserts above keep every strided access inside the slices, and `c` does not
    // alias `a` or `b` because it is borrowed mutably.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}
