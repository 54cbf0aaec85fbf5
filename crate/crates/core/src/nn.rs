//! Dense feed-forward networks with analytic gradients for the two training
//! objectives used by every client: cross-entropy on private labels and
//! KL divergence toward a fixed soft teacher on public inputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Floor applied to probabilities before taking logarithms.
pub const KL_EPS: f64 = 1e-12;

/// Tolerance for accepting a row as a probability distribution.
pub const STOCHASTIC_TOL: f64 = 1e-6;

/// Bytes per parameter or probability on the wire (32-bit floats).
pub const WIRE_BYTES_PER_VALUE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `[in × out]`
    pub weights: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// An ordered stack of dense layers ending in a linear logits layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    layers: Vec<Layer>,
}

impl Model {
    /// Validates that layer dimensions chain and that the last layer is linear.
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("model needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.weights.shape().len() != 2 {
                return Err(dim_err(
                    format!("layer {k} weights"),
                    "rank 2",
                    format!("rank {}", layer.weights.shape().len()),
                ));
            }
            if layer.bias.shape() != [layer.output_dim()] {
                return Err(dim_err(
                    format!("layer {k} bias"),
                    format!("[{}]", layer.output_dim()),
                    format!("{:?}", layer.bias.shape()),
                ));
            }
            if k > 0 && layers[k - 1].output_dim() != layer.input_dim() {
                return Err(dim_err(
                    format!("layer {k} input"),
                    layers[k - 1].output_dim(),
                    layer.input_dim(),
                ));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::Parameter(
                "final layer must be linear (it produces logits)".into(),
            ));
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform initialization for the architecture `dims = [in, h1, .., out]`.
    /// Hidden layers use ReLU; biases start at zero.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        Self::build(dims, |fan_in, fan_out| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect()
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::build(dims, |fan_in, fan_out| vec![0.0; fan_in * fan_out])
    }

    fn build(
        dims: &[usize],
        mut weights: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Parameter(format!(
                "architecture {dims:?} needs an input and an output width, all positive"
            )));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                Ok(Layer {
                    weights: Tensor::new(vec![w[0], w[1]], weights(w[0], w[1]))?,
                    bias: Tensor::zeros(&[w[1]]),
                    activation: if k == last {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Layer widths `[in, h1, .., out]`.
    pub fn architecture(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    /// d_n: the number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Applies `w ← w − lr·g` in place.
    pub fn apply_gradients(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        grads.check_mirrors(self)?;
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.weights.data_mut().iter_mut().zip(g.weights.data()) {
                *w -= lr * gw;
            }
            for (b, gb) in layer.bias.data_mut().iter_mut().zip(g.bias.data()) {
                *b -= lr * gb;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// One gradient tensor per parameter tensor, mirroring a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

impl GradientSet {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Tensor::zeros(l.weights.shape()),
                    bias: Tensor::zeros(l.bias.shape()),
                })
                .collect(),
        }
    }

    fn check_mirrors(&self, model: &Model) -> Result<()> {
        if self.layers.len() != model.layers.len() {
            return Err(dim_err(
                "gradient layer count",
                model.layers.len(),
                self.layers.len(),
            ));
        }
        for (k, (g, l)) in self.layers.iter().zip(&model.layers).enumerate() {
            if g.weights.shape() != l.weights.shape() || g.bias.shape() != l.bias.shape() {
                return Err(dim_err(
                    format!("gradient for layer {k}"),
                    format!("{:?}/{:?}", l.weights.shape(), l.bias.shape()),
                    format!("{:?}/{:?}", g.weights.shape(), g.bias.shape()),
                ));
            }
        }
        Ok(())
    }

    /// Canonical layer-order concatenation (weights then bias per layer).
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.weights.data().iter().chain(g.bias.data()).copied())
            .collect()
    }

    pub fn l2_norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn check_batch(model: &Model, batch: &Tensor) -> Result<()> {
    if batch.shape().len() != 2 || batch.cols() != model.input_dim() {
        return Err(dim_err(
            "layer 0 input",
            format!("[B × {}]", model.input_dim()),
            format!("{:?}", batch.shape()),
        ));
    }
    Ok(())
}

/// `out = x·W + b` for a `[B × in]` batch.
fn affine(x: &Tensor, layer: &Layer) -> Tensor {
    let (b, n_in, n_out) = (x.rows(), layer.input_dim(), layer.output_dim());
    let w = layer.weights.data();
    let mut out = Vec::with_capacity(b * n_out);
    for i in 0..b {
        let mut row = layer.bias.data().to_vec();
        for (p, &xv) in x.row(i).iter().enumerate().take(n_in) {
            let wrow = &w[p * n_out..(p + 1) * n_out];
            for (o, &wv) in row.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
        out.extend_from_slice(&row);
    }
    Tensor::new(vec![b, n_out], out).expect("affine output shape")
}

fn activate(z: &Tensor, act: Activation) -> Tensor {
    match act {
        Activation::Identity => z.clone(),
        Activation::Relu => {
            let data = z.data().iter().map(|&v| v.max(0.0)).collect();
            Tensor::new(z.shape().to_vec(), data).expect("same shape")
        }
    }
}

/// Logits `[B × C]` for a `[B × d_in]` batch.
pub fn forward(model: &Model, batch: &Tensor) -> Result<Tensor> {
    check_batch(model, batch)?;
    let mut a = batch.clone();
    for layer in &model.layers {
        a = activate(&affine(&a, layer), layer.activation);
    }
    Ok(a)
}

/// Layer inputs and pre-activations recorded during a forward pass.
struct Trace {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
}

fn forward_trace(model: &Model, batch: &Tensor) -> Result<(Tensor, Trace)> {
    check_batch(model, batch)?;
    let mut trace = Trace {
        inputs: Vec::with_capacity(model.layers.len()),
        pre: Vec::with_capacity(model.layers.len()),
    };
    let mut a = batch.clone();
    for layer in &model.layers {
        let z = affine(&a, layer);
        let next = activate(&z, layer.activation);
        trace.inputs.push(a);
        trace.pre.push(z);
        a = next;
    }
    Ok((a, trace))
}

/// Backpropagates `dL/dlogits` through the recorded trace.
fn backward(model: &Model, trace: &Trace, dlogits: Tensor) -> GradientSet {
    let mut grads = GradientSet::zeros_like(model);
    let mut delta = dlogits;
    for k in (0..model.layers.len()).rev() {
        let layer = &model.layers[k];
        let x = &trace.inputs[k];
        let (n_in, n_out) = (layer.input_dim(), layer.output_dim());
        let gw = grads.layers[k].weights.data_mut();
        for i in 0..x.rows() {
            let d = delta.row(i);
            for (p, &xv) in x.row(i).iter().enumerate() {
                let g = &mut gw[p * n_out..(p + 1) * n_out];
                for (gv, &dv) in g.iter_mut().zip(d) {
                    *gv += xv * dv;
                }
            }
        }
        let gb = grads.layers[k].bias.data_mut();
        for i in 0..delta.rows() {
            for (gv, &dv) in gb.iter_mut().zip(delta.row(i)) {
                *gv += dv;
            }
        }
        if k == 0 {
            break;
        }
        // delta_prev = (delta · Wᵀ) ⊙ relu'(z_{k-1})
        let w = layer.weights.data();
        let z_prev = &trace.pre[k - 1];
        let relu = model.layers[k - 1].activation == Activation::Relu;
        let mut prev = Vec::with_capacity(delta.rows() * n_in);
        for i in 0..delta.rows() {
            let d = delta.row(i);
            for p in 0..n_in {
                let wrow = &w[p * n_out..(p + 1) * n_out];
                let mut s: f64 = wrow.iter().zip(d).map(|(a, b)| a * b).sum();
                if relu && z_prev.get2(i, p) <= 0.0 {
                    s = 0.0;
                }
                prev.push(s);
            }
        }
        delta = Tensor::new(vec![delta.rows(), n_in], prev).expect("delta shape");
    }
    grads
}

/// Row-wise softmax of `logits / t`, computed with max subtraction.
pub fn softmax_t(logits: &Tensor, t: f64) -> Result<Tensor> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Parameter(format!("temperature must be > 0, got {t}")));
    }
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / t).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(dim_err("labels", logits.rows(), labels.len()));
    }
    let c = logits.cols();
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= c) {
        return Err(Error::Data(format!(
            "label {y} at sample {i} is outside [0, {c})"
        )));
    }
    Ok(())
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = logits.row(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    Ok(total / labels.len() as f64)
}

pub(crate) fn check_stochastic(name: &str, p: &Tensor) -> Result<()> {
    for i in 0..p.rows() {
        let row = p.row(i);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL || row.iter().any(|&v| v < -STOCHASTIC_TOL) {
            return Err(Error::Data(format!(
                "{name} row {i} is not a probability distribution (sum {sum})"
            )));
        }
    }
    Ok(())
}

/// Mean over the batch of `Σ_c p_c (ln p_c − ln q_c)` with the teacher `p`
/// first and the student `q` second. Entries are floored at [`KL_EPS`].
pub fn kl_divergence(teacher: &Tensor, student: &Tensor) -> Result<f64> {
    kl_divergence_eps(teacher, student, KL_EPS)
}

pub fn kl_divergence_eps(teacher: &Tensor, student: &Tensor, eps: f64) -> Result<f64> {
    if teacher.shape() != student.shape() {
        return Err(dim_err(
            "kl_divergence",
            format!("{:?}", teacher.shape()),
            format!("{:?}", student.shape()),
        ));
    }
    check_stochastic("teacher", teacher)?;
    check_stochastic("student", student)?;
    if teacher.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = teacher
        .data()
        .iter()
        .zip(student.data())
        .map(|(&p, &q)| {
            if p <= 0.0 {
                0.0
            } else {
                p * (p.max(eps).ln() - q.max(eps).ln())
            }
        })
        .sum();
    Ok(total / teacher.rows() as f64)
}

/// ∇_w of [`cross_entropy`]`(forward(model, batch), labels)`.
pub fn grad_ce(model: &Model, batch: &Tensor, labels: &[usize]) -> Result<GradientSet> {
    let (logits, trace) = forward_trace(model, batch)?;
    check_labels(&logits, labels)?;
    let mut d = softmax_t(&logits, 1.0)?;
    let scale = 1.0 / labels.len().max(1) as f64;
    for (i, &y) in labels.iter().enumerate() {
        let row = d.row_mut(i);
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(backward(model, &trace, d))
}

/// ∇_w of `KL(teacher ‖ softmax_t(forward(model, batch), t))`, with the
/// teacher held constant. Only the cross-entropy part `−Σ p ln q` depends on
/// the student, giving `dL/dz = (q − p) / (t·B)`.
pub fn grad_kl_student(
    model: &Model,
    batch: &Tensor,
    teacher: &Tensor,
    t: f64,
) -> Result<GradientSet> {
    let (logits, trace) = forward_trace(model, batch)?;
    if teacher.shape() != logits.shape() {
        return Err(dim_err(
            "teacher",
            format!("{:?}", logits.shape()),
            format!("{:?}", teacher.shape()),
        ));
    }
    check_stochastic("teacher", teacher)?;
    let mut d = softmax_t(&logits, t)?;
    let scale = 1.0 / (t * logits.rows().max(1) as f64);
    for (q, &p) in d.data_mut().iter_mut().zip(teacher.data()) {
        *q = (*q - p) * scale;
    }
    Ok(backward(model, &trace, d))
}

/// Returns a copy of `model` after `w ← w − lr·g`.
pub fn sgd_step(model: &Model, grads: &GradientSet, lr: f64) -> Result<Model> {
    if !(lr >= 0.0) {
        return Err(Error::Parameter(format!("learning rate must be >= 0, got {lr}")));
    }
    let mut next = model.clone();
    next.apply_gradients(grads, lr)?;
    Ok(next)
}

/// Canonical parameter vector: per layer, weights (row-major) then bias.
pub fn flatten_params(model: &Model) -> Tensor {
    let data: Vec<f64> = model
        .layers
        .iter()
        .flat_map(|l| l.weights.data().iter().chain(l.bias.data()).copied())
        .collect();
    let n = data.len();
    Tensor::new(vec![n], data).expect("flat shape")
}

/// Inverse of [`flatten_params`] using `template` for the architecture.
pub fn unflatten_params(template: &Model, flat: &[f64]) -> Result<Model> {
    if flat.len() != template.param_count() {
        return Err(dim_err("flat parameters", template.param_count(), flat.len()));
    }
    let mut model = template.clone();
    let mut offset = 0;
    for layer in &mut model.layers {
        for dst in [layer.weights.data_mut(), layer.bias.data_mut()] {
            dst.copy_from_slice(&flat[offset..offset + dst.len()]);
            offset += dst.len();
        }
    }
    Ok(model)
}

/// Size of one parameter message on the wire.
pub fn param_bytes(model: &Model) -> usize {
    model.param_count() * WIRE_BYTES_PER_VALUE
}

/// `Σ_k weights[k] · models[k]`, parameter-wise. All models must share an
/// architecture.
pub fn combine_models(models: &[&Model], weights: &[f64]) -> Result<Model> {
    let first = models
        .first()
        .ok_or_else(|| Error::Parameter("cannot combine zero models".into()))?;
    if models.len() != weights.len() {
        return Err(dim_err("combination weights", models.len(), weights.len()));
    }
    let arch = first.architecture();
    let mut out = Model::zeros(&arch)?;
    for (m, &w) in models.iter().zip(weights) {
        if m.architecture() != arch {
            return Err(Error::Configuration(format!(
                "cannot combine architectures {:?} and {arch:?}",
                m.architecture()
            )));
        }
        for (dst, src) in out.layers.iter_mut().zip(&m.layers) {
            for (d, s) in dst.weights.data_mut().iter_mut().zip(src.weights.data()) {
                *d += w * s;
            }
            for (d, s) in dst.bias.data_mut().iter_mut().zip(src.bias.data()) {
                *d += w * s;
            }
        }
    }
    // Linear combinations may carry -0.0 from zero weights; keep the output
    // activations of the original models.
    for (dst, src) in out.layers.iter_mut().zip(&first.layers) {
        dst.activation = src.activation;
    }
    Ok(out)
}

/// Index of the largest entry in each row.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|i| {
            t.row(i)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &v)| {
                    if v > best.1 {
                        (j, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy(model: &Model, batch: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let logits = forward(model, batch)?;
    let correct = argmax_rows(&logits)
        .iter()
        .zip(labels)
        .filter(|(a, b)| a == b)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}
