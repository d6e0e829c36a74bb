//! Twice-differentiable feedforward softplus classifiers with exact analytic
//! first and second derivatives, plus deterministic trainers.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Norm, Vector};

#[derive(Debug, Clone)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vector,
}

/// Fully-connected classifier. Hidden layers use `softplus(z; beta)`, the
/// final layer is linear.
#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<Layer>,
    pub beta: f64,
}

fn softplus(z: f64, beta: f64) -> f64 {
    let bz = beta * z;
    (bz.max(0.0) + (-bz.abs()).exp().ln_1p()) / beta
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Forward pass with all intermediates kept for backward sweeps.
pub struct Trace {
    /// Pre-activations per layer, `zs[i] = W_i a_i + b_i`.
    pub zs: Vec<Vector>,
    /// Activations, `acts[0] = x`, `acts[i] = softplus(zs[i-1])` for hidden
    /// layers. The logits are `zs.last()` (no final activation).
    pub acts: Vec<Vector>,
}

impl Trace {
    pub fn logits(&self) -> &Vector {
        self.zs.last().expect("model has at least one layer")
    }
}

impl Model {
    /// Random model with the given layer widths `[d, h1, ..., k]`.
    pub fn new_random(dims: &[usize], beta: f64, seed: u64) -> Model {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = (2.0 / fan_in as f64).sqrt();
                let weight = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    rng.gen_range(-1.0..1.0) * scale
                });
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Model { layers, beta }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    fn check_input(&self, x: &Vector) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Structural(format!(
                "input dim {} does not match model dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn check_label(&self, y: usize) -> Result<()> {
        if y >= self.num_classes() {
            return Err(Error::Structural(format!(
                "label {y} out of range for {} classes",
                self.num_classes()
            )));
        }
        Ok(())
    }

    pub fn trace(&self, x: &Vector) -> Result<Trace> {
        self.check_input(x)?;
        let n_layers = self.layers.len();
        let mut zs = Vec::with_capacity(n_layers);
        let mut acts = Vec::with_capacity(n_layers);
        acts.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.weight.dot(acts.last().unwrap()) + &layer.bias;
            if i + 1 < n_layers {
                acts.push(z.mapv(|v| softplus(v, self.beta)));
            }
            zs.push(z);
        }
        Ok(Trace { zs, acts })
    }

    /// Logits `f(x)`.
    pub fn forward(&self, x: &Vector) -> Result<Vector> {
        Ok(self.trace(x)?.logits().clone())
    }

    pub fn predict(&self, x: &Vector) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// Gradient of `<u, f(x)>` with respect to the input, given a trace.
    pub fn input_grad_from_output(&self, trace: &Trace, u: &Vector) -> Vector {
        let n_layers = self.layers.len();
        let mut g = u.clone();
        for i in (0..n_layers).rev() {
            g = self.layers[i].weight.t().dot(&g);
            if i > 0 {
                let sig = trace.zs[i - 1].mapv(|z| logistic(self.beta * z));
                g = &g * &sig;
            }
        }
        g
    }

    /// Exact `d f_y / d x` via the reverse chain rule.
    pub fn grad_logit(&self, x: &Vector, y: usize) -> Result<Vector> {
        self.check_label(y)?;
        let trace = self.trace(x)?;
        let mut u = Array1::zeros(self.num_classes());
        u[y] = 1.0;
        Ok(self.input_grad_from_output(&trace, &u))
    }

    /// Per-layer pre-activation Jacobians `dz_i/dx` (forward accumulation)
    /// and backward gradients `d f_y / d a_i` for the hidden layers.
    fn curvature_parts(&self, trace: &Trace, y: usize) -> (Vec<Matrix>, Vec<Vector>) {
        let n_layers = self.layers.len();
        // Forward: jz[i] = dz_i/dx for hidden layers i = 0..n_layers-1.
        let mut jz: Vec<Matrix> = Vec::with_capacity(n_layers - 1);
        let mut j_prev: Option<Matrix> = None; // da_i/dx, None means identity
        for i in 0..(n_layers - 1) {
            let jzi = match &j_prev {
                None => self.layers[i].weight.clone(),
                Some(j) => self.layers[i].weight.dot(j),
            };
            let sig = trace.zs[i].mapv(|z| logistic(self.beta * z));
            j_prev = Some(&jzi * &sig.view().insert_axis(Axis(1)));
            jz.push(jzi);
        }
        // Backward: grad_a[i] = d f_y / d a_{i+1} for hidden layers.
        let mut grad_a: Vec<Vector> = vec![Array1::zeros(0); n_layers - 1];
        let mut g = Array1::zeros(self.num_classes());
        g[y] = 1.0;
        for i in (1..n_layers).rev() {
            g = self.layers[i].weight.t().dot(&g);
            grad_a[i - 1] = g.clone();
            let sig = trace.zs[i - 1].mapv(|z| logistic(self.beta * z));
            g = &g * &sig;
        }
        (jz, grad_a)
    }

    /// Exact Hessian `d^2 f_y / dx^2`, symmetrized.
    ///
    /// With elementwise activations between affine maps the Hessian is the
    /// sum over hidden layers of `Jz_i^T diag(gbar_i * sp''(z_i)) Jz_i`,
    /// where `Jz_i = dz_i/dx` and `gbar_i = d f_y / d a_i`.
    pub fn hessian_logit(&self, x: &Vector, y: usize) -> Result<Matrix> {
        self.check_label(y)?;
        let trace = self.trace(x)?;
        let d = self.input_dim();
        let (jz, grad_a) = self.curvature_parts(&trace, y);
        let mut h: Matrix = Array2::zeros((d, d));
        for i in 0..jz.len() {
            let w = curvature_weights(&trace.zs[i], &grad_a[i], self.beta);
            let scaled = &jz[i] * &w.view().insert_axis(Axis(1));
            h = h + jz[i].t().dot(&scaled);
        }
        let h = 0.5 * (&h + &h.t());
        Ok(h)
    }

    /// Hessian-vector product `(d^2 f_y / dx^2) v` without materializing the
    /// Hessian. Exact, via a forward directional pass plus per-layer backprop.
    pub fn hessian_vec(&self, x: &Vector, y: usize, v: &Vector) -> Result<Vector> {
        self.check_label(y)?;
        self.check_input(v)?;
        let trace = self.trace(x)?;
        let n_layers = self.layers.len();
        // Forward directional derivatives tz_i = Jz_i v.
        let mut tz: Vec<Vector> = Vec::with_capacity(n_layers - 1);
        let mut t = v.clone();
        for i in 0..(n_layers - 1) {
            let tzi = self.layers[i].weight.dot(&t);
            let sig = trace.zs[i].mapv(|z| logistic(self.beta * z));
            t = &tzi * &sig;
            tz.push(tzi);
        }
        let (_, grad_a) = self.curvature_parts(&trace, y);
        let d = self.input_dim();
        let mut hv: Vector = Array1::zeros(d);
        for i in 0..(n_layers - 1) {
            let w = curvature_weights(&trace.zs[i], &grad_a[i], self.beta);
            // Backprop r = w * tz_i from pre-activation i to the input.
            let mut r = &w * &tz[i];
            let mut s = self.layers[i].weight.t().dot(&r);
            for j in (0..i).rev() {
                let sig = trace.zs[j].mapv(|z| logistic(self.beta * z));
                r = &s * &sig;
                s = self.layers[j].weight.t().dot(&r);
            }
            hv = hv + s;
        }
        Ok(hv)
    }
}

/// `gbar * softplus''(z)` with `softplus''(z) = beta * sig * (1 - sig)`.
fn curvature_weights(z: &Vector, grad_a: &Vector, beta: f64) -> Vector {
    let mut w = Array1::zeros(z.len());
    for i in 0..z.len() {
        let s = logistic(beta * z[i]);
        w[i] = grad_a[i] * beta * s * (1.0 - s);
    }
    w
}

pub fn argmax(v: &Vector) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy loss and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Vector, y: usize) -> (f64, Vector) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|v| (v - max).exp());
    let sum: f64 = exps.sum();
    let loss = sum.ln() + max - logits[y];
    let mut grad = exps.mapv(|v| v / sum);
    grad[y] -= 1.0;
    (loss, grad)
}

/// Gradient of the cross-entropy loss with respect to the input.
pub fn input_grad_of_loss(model: &Model, x: &Vector, y: usize) -> Result<Vector> {
    let trace = model.trace(x)?;
    let (_, dlogits) = cross_entropy(trace.logits(), y);
    Ok(model.input_grad_from_output(&trace, &dlogits))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Momentum,
}

/// Inner adversarial perturbation applied to each batch before the gradient
/// step (a plain PGD adversarial trainer).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvInner {
    pub norm: Norm,
    pub epsilon: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub seed: u64,
    #[serde(default)]
    pub adversarial: Option<AdvInner>,
}

fn default_momentum() -> f64 {
    0.9
}

/// Deterministic minibatch trainer. With a fixed seed two runs produce
/// bit-identical parameters.
pub fn train(model: &Model, data: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    if data.len() == 0 {
        return Err(Error::Structural("train: empty dataset".into()));
    }
    for &y in &data.labels {
        if y >= model.num_classes() {
            return Err(Error::Structural(format!(
                "train: label {y} out of range for {} classes",
                model.num_classes()
            )));
        }
    }
    if cfg.batch_size == 0 || cfg.learning_rate <= 0.0 {
        return Err(Error::Structural(
            "train: batch size and learning rate must be positive".into(),
        ));
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = data.len();
    let mut velocity: Vec<(Matrix, Vector)> = model
        .layers
        .iter()
        .map(|l| (Array2::zeros(l.weight.dim()), Array1::zeros(l.bias.len())))
        .collect();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        // Fisher-Yates with the epoch-persistent rng.
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<(Matrix, Vector)> = model
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.dim()), Array1::zeros(l.bias.len())))
                .collect();
            let mut batch_loss = 0.0;
            for (bi, &idx) in batch.iter().enumerate() {
                let x = match &cfg.adversarial {
                    None => data.inputs[idx].clone(),
                    Some(adv) => {
                        let seed =
                            crate::attack::stable_hash(cfg.seed, epoch * n + idx, bi);
                        let delta = crate::attack::pgd_perturb(
                            &model,
                            &data.inputs[idx],
                            data.labels[idx],
                            adv.norm,
                            adv.epsilon,
                            adv.steps,
                            seed,
                        )?;
                        &data.inputs[idx] + &delta
                    }
                };
                let trace = model.trace(&x)?;
                let (loss, dlogits) = cross_entropy(trace.logits(), data.labels[idx]);
                batch_loss += loss;
                accumulate_param_grads(&model, &trace, &dlogits, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "train: non-finite loss in epoch {epoch}"
                )));
            }
            let scale = 1.0 / batch.len() as f64;
            for (layer, ((gw, gb), (vw, vb))) in model
                .layers
                .iter_mut()
                .zip(grads.iter().zip(velocity.iter_mut()))
            {
                match cfg.optimizer {
                    Optimizer::Sgd => {
                        layer.weight.scaled_add(-cfg.learning_rate * scale, gw);
                        layer.bias.scaled_add(-cfg.learning_rate * scale, gb);
                    }
                    Optimizer::Momentum => {
                        *vw = cfg.momentum * &*vw + scale * gw;
                        *vb = cfg.momentum * &*vb + scale * gb;
                        layer.weight.scaled_add(-cfg.learning_rate, vw);
                        layer.bias.scaled_add(-cfg.learning_rate, vb);
                    }
                }
            }
        }
    }
    Ok(model)
}

fn accumulate_param_grads(
    model: &Model,
    trace: &Trace,
    dlogits: &Vector,
    grads: &mut [(Matrix, Vector)],
) {
    let n_layers = model.layers.len();
    let mut g = dlogits.clone();
    for i in (0..n_layers).rev() {
        // dW_i += g (outer) a_{i-1}; db_i += g
        let a_in = &trace.acts[i];
        {
            let (gw, gb) = &mut grads[i];
            for r in 0..g.len() {
                let gr = g[r];
                for c in 0..a_in.len() {
                    gw[[r, c]] += gr * a_in[c];
                }
            }
            *gb += &g;
        }
        if i > 0 {
            g = model.layers[i].weight.t().dot(&g);
            let beta = model.beta;
            let sig = trace.zs[i - 1].mapv(|z| logistic(beta * z));
            g = &g * &sig;
        }
    }
}

/// Fraction of samples the model classifies correctly.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for i in 0..data.len() {
        if model.predict(&data.inputs[i])? == data.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean cross-entropy on a dataset.
pub fn mean_loss(model: &Model, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let logits = model.forward(&data.inputs[i])?;
        total += cross_entropy(&logits, data.labels[i]).0;
    }
    Ok(total / data.len() as f64)
}

// --- serialization ---------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    beta: f64,
    input_dim: usize,
    num_classes: usize,
    layers: Vec<LayerFile>,
}

impl Model {
    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: 1,
            beta: self.beta,
            input_dim: self.input_dim(),
            num_classes: self.num_classes(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    weights: l.weight.iter().cloned().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.version != 1 {
            return Err(Error::Structural(format!(
                "unsupported model file version {}",
                file.version
            )));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        let mut expect_in = file.input_dim;
        for lf in &file.layers {
            if lf.weights.len() != lf.rows * lf.cols || lf.bias.len() != lf.rows {
                return Err(Error::Structural("model file: bad layer shape".into()));
            }
            if lf.cols != expect_in {
                return Err(Error::Structural(
                    "model file: layer shapes do not chain".into(),
                ));
            }
            expect_in = lf.rows;
            layers.push(Layer {
                weight: Array2::from_shape_vec((lf.rows, lf.cols), lf.weights.clone())
                    .map_err(|e| Error::Structural(e.to_string()))?,
                bias: Array1::from_vec(lf.bias.clone()),
            });
        }
        if expect_in != file.num_classes {
            return Err(Error::Structural(
                "model file: final layer does not match num_classes".into(),
            ));
        }
        if !(file.beta > 0.0) {
            return Err(Error::Structural("model file: beta must be > 0".into()));
        }
        Ok(Model {
            layers,
            beta: file.beta,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Model> {
        Model::from_json(&std::fs::read_to_string(path)?)
    }
}
