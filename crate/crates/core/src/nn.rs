//! Feedforward softmax classifier with hand-written backpropagation.
//!
//! Layer `i` maps `dims[i] -> dims[i+1]` with a weight matrix of shape
//! `(dims[i+1], dims[i])`. Hidden layers apply the configured activation, the
//! final layer produces logits which are turned into class probabilities by a
//! max-shifted softmax.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SeedStream;

/// Floor applied to probabilities before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

/// Architecture of a classifier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    input_dim: usize,
    hidden_dims: Vec<usize>,
    num_classes: usize,
    activation: Activation,
}

impl ModelSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        num_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input_dim must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::invalid(format!(
                "num_classes must be at least 2, got {num_classes}"
            )));
        }
        if hidden_dims.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        Ok(ModelSpec {
            input_dim,
            hidden_dims,
            num_classes,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.hidden_dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `[input, hidden..., classes]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }
}

/// Parameters of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// Shape `(out_dim, in_dim)`.
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// A classifier: spec plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Dense>,
}

/// Gradient of a scalar loss with respect to every model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

/// A minibatch: features plus optional integer labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn unlabeled(features: Matrix) -> Result<Self> {
        Self::validate_features(&features)?;
        Ok(Batch {
            features,
            labels: None,
        })
    }

    pub fn labeled(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        Self::validate_features(&features)?;
        if labels.len() != features.rows() {
            return Err(Error::invalid(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Batch {
            features,
            labels: Some(labels),
        })
    }

    fn validate_features(features: &Matrix) -> Result<()> {
        if features.rows() == 0 {
            return Err(Error::invalid("batch must contain at least one row"));
        }
        if !features.is_finite() {
            return Err(Error::invalid("batch features must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }
}

/// Cached per-layer values from a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer (`inputs[0]` is the batch features).
    inputs: Vec<Matrix>,
    /// Pre-activation of each hidden layer.
    pre_activations: Vec<Matrix>,
}

/// Output of [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Matrix,
    pub probs: Matrix,
    pub trace: Trace,
}

/// Numerically stable softmax of one row of logits, written into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

impl Model {
    /// Scaled-uniform (Glorot) weights, zero biases. Deterministic in `(spec, seed)`.
    pub fn init(spec: ModelSpec, seed: u64) -> Model {
        let dims = spec.layer_dims();
        let root = SeedStream::new(seed).named("init");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                let mut rng = root.split(i as u64).rng();
                let data = (0..fan_in * fan_out)
                    .map(|_| dist.sample(&mut rng))
                    .collect();
                Dense {
                    weights: Matrix::from_vec(fan_out, fan_in, data).expect("shape"),
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Model { spec, layers }
    }

    /// A model whose parameters are all zero; its output is uniform everywhere.
    pub fn zeros(spec: ModelSpec) -> Model {
        let layers = spec
            .layer_dims()
            .windows(2)
            .map(|w| Dense {
                weights: Matrix::zeros(w[1], w[0]),
                biases: vec![0.0; w[1]],
            })
            .collect();
        Model { spec, layers }
    }

    /// Assembles a model from explicit layers, checking shapes and finiteness.
    pub fn from_layers(spec: ModelSpec, layers: Vec<Dense>) -> Result<Model> {
        let dims = spec.layer_dims();
        if layers.len() != dims.len() - 1 {
            return Err(Error::invalid(format!(
                "expected {} layers, got {}",
                dims.len() - 1,
                layers.len()
            )));
        }
        for (i, (layer, w)) in layers.iter().zip(dims.windows(2)).enumerate() {
            if layer.weights.rows() != w[1]
                || layer.weights.cols() != w[0]
                || layer.biases.len() != w[1]
            {
                return Err(Error::invalid(format!("layer {i} has inconsistent shape")));
            }
            if !layer.weights.is_finite() || layer.biases.iter().any(|b| !b.is_finite()) {
                return Err(Error::invalid(format!(
                    "layer {i} has non-finite parameters"
                )));
            }
        }
        Ok(Model { spec, layers })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.biases.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.biases.iter().all(|b| b.is_finite()))
    }

    pub fn forward(&self, features: &Matrix) -> Result<ForwardPass> {
        if features.cols() != self.spec.input_dim {
            return Err(Error::invalid(format!(
                "features have {} columns, model expects {}",
                features.cols(),
                self.spec.input_dim
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(last);
        let mut current = features.clone();
        for layer in &self.layers[..last] {
            let z = affine(&current, layer);
            let mut a = z.clone();
            for v in a.as_mut_slice() {
                *v = self.spec.activation.apply(*v);
            }
            pre_activations.push(z);
            inputs.push(std::mem::replace(&mut current, a));
        }
        let logits = affine(&current, &self.layers[last]);
        inputs.push(current);

        let mut probs = Matrix::zeros(logits.rows(), logits.cols());
        for i in 0..logits.rows() {
            softmax_into(logits.row(i), probs.row_mut(i));
        }
        Ok(ForwardPass {
            logits,
            probs,
            trace: Trace {
                inputs,
                pre_activations,
            },
        })
    }

    /// Class probabilities only.
    pub fn predict(&self, features: &Matrix) -> Result<Matrix> {
        Ok(self.forward(features)?.probs)
    }

    /// Backpropagates a logit gradient through the cached trace.
    ///
    /// `d_logits` must already carry whatever averaging the loss applies; the
    /// returned gradients are plain sums over the batch rows.
    pub fn backward(&self, trace: &Trace, d_logits: &Matrix) -> Result<Gradients> {
        let n = trace.inputs.first().map_or(0, Matrix::rows);
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::invalid("trace does not match the model depth"));
        }
        if d_logits.rows() != n || d_logits.cols() != self.spec.num_classes {
            return Err(Error::invalid(format!(
                "logit gradient is {}x{}, expected {}x{}",
                d_logits.rows(),
                d_logits.cols(),
                n,
                self.spec.num_classes
            )));
        }

        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = d_logits.clone();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &trace.inputs[li];
            let (out_dim, in_dim) = (layer.weights.rows(), layer.weights.cols());

            let mut dw = Matrix::zeros(out_dim, in_dim);
            let mut db = vec![0.0; out_dim];
            for r in 0..n {
                let d = delta.row(r);
                let x = input.row(r);
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    db[o] += dv;
                    for (w, &xv) in dw.row_mut(o).iter_mut().zip(x) {
                        *w += dv * xv;
                    }
                }
            }
            grads.push(Dense {
                weights: dw,
                biases: db,
            });

            if li > 0 {
                let mut next = Matrix::zeros(n, in_dim);
                let pre = &trace.pre_activations[li - 1];
                for r in 0..n {
                    let d = delta.row(r);
                    let dst = next.row_mut(r);
                    for (o, &dv) in d.iter().enumerate() {
                        if dv == 0.0 {
                            continue;
                        }
                        for (t, &w) in dst.iter_mut().zip(layer.weights.row(o)) {
                            *t += dv * w;
                        }
                    }
                    let z = pre.row(r);
                    let a = input.row(r);
                    for ((t, &zv), &av) in dst.iter_mut().zip(z).zip(a) {
                        *t *= self.spec.activation.derivative(zv, av);
                    }
                }
                delta = next;
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Visits every parameter together with its tensor name and flat index.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, usize, &mut f64)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let wname = format!("W{i}");
            for (j, w) in layer.weights.as_mut_slice().iter_mut().enumerate() {
                f(&wname, j, w);
            }
            let bname = format!("b{i}");
            for (j, b) in layer.biases.iter_mut().enumerate() {
                f(&bname, j, b);
            }
        }
    }

    /// `θ ← θ + scale·g`.
    pub fn add_scaled(&mut self, grads: &Gradients, scale: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(g.weights.as_slice())
            {
                *w += scale * gw;
            }
            for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
                *b += scale * gb;
            }
        }
    }
}

fn affine(x: &Matrix, layer: &Dense) -> Matrix {
    let mut z = x.matmul_transposed(&layer.weights);
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(&layer.biases) {
            *v += b;
        }
    }
    z
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Gradients {
        Gradients {
            layers: model
                .layers
                .iter()
                .map(|l| Dense {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a
                .weights
                .as_mut_slice()
                .iter_mut()
                .zip(b.weights.as_slice())
            {
                *x += y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x += y;
            }
        }
    }

    /// Flattened values in the same order as [`Model::for_each_param_mut`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Result of comparing analytic gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    /// Parameter attaining the maximum, e.g. `W1[7]`.
    pub worst_parameter: String,
}

/// Compares `analytic` with central finite differences of `loss` at `model`.
///
/// The per-parameter error is `|analytic − numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(
    model: &Model,
    analytic: &Gradients,
    step: f64,
    mut loss: F,
) -> Result<GradCheck>
where
    F: FnMut(&Model) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let analytic = analytic.flatten();
    if analytic.len() != model.num_parameters() {
        return Err(Error::invalid("gradient shape does not match the model"));
    }

    let mut names = Vec::with_capacity(analytic.len());
    let mut probe = model.clone();
    probe.for_each_param_mut(|name, j, _| names.push(format!("{name}[{j}]")));

    let mut worst = GradCheck {
        max_relative_error: 0.0,
        worst_parameter: String::new(),
    };
    for (p, name) in names.iter().enumerate() {
        let plus = eval_perturbed(&mut probe, p, step, &mut loss);
        let minus = eval_perturbed(&mut probe, p, -step, &mut loss);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteGradCheck {
                parameter: name.clone(),
            });
        }
        let numeric = (plus - minus) / (2.0 * step);
        let err = (analytic[p] - numeric).abs() / numeric.abs().max(1.0);
        if err > worst.max_relative_error || worst.worst_parameter.is_empty() {
            worst = GradCheck {
                max_relative_error: err,
                worst_parameter: name.clone(),
            };
        }
    }
    Ok(worst)
}

fn eval_perturbed<F: FnMut(&Model) -> f64>(
    model: &mut Model,
    index: usize,
    delta: f64,
    loss: &mut F,
) -> f64 {
    let mut original = 0.0;
    let mut k = 0;
    model.for_each_param_mut(|_, _, v| {
        if k == index {
            original = *v;
            *v += delta;
        }
        k += 1;
    });
    let value = loss(model);
    k = 0;
    model.for_each_param_mut(|_, _, v| {
        if k == index {
            *v = original;
        }
        k += 1;
    });
    value
}

/// Uniform random features in `[-scale, scale]`, for tests and the grad-check command.
pub fn random_features<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    let dist = Uniform::new_inclusive(-scale, scale).expect("finite bounds");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}
