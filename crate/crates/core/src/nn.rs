//! Multilayer perceptron classifier over a flat parameter vector.
//!
//! Layout: for every layer in order, the weight matrix (shape `(fan_out, fan_in)`,
//! row-major) followed by the bias vector (length `fan_out`). The last layer is the
//! classification head and produces logits; hidden layers apply the activation.
//!
//! All arithmetic is `f64`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    #[inline]
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
        }
    }
}

/// Network shape. Two descriptors are checkpoint-compatible iff they are equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

/// Position of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerShape {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.fan_in * self.fan_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.fan_out
    }

    pub fn end(&self) -> usize {
        self.bias_offset + self.fan_out
    }
}

impl ArchDescriptor {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        num_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_widths,
            num_classes,
            activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be > 0"));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.hidden_widths.contains(&0) {
            return Err(Error::config("hidden widths must be > 0"));
        }
        Ok(())
    }

    /// `[input_dim, hidden..., num_classes]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_widths);
        dims.push(self.num_classes);
        dims
    }

    pub fn layers(&self) -> Vec<LayerShape> {
        let dims = self.layer_dims();
        let mut offset = 0;
        dims.windows(2)
            .map(|w| {
                let shape = LayerShape {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset = shape.end();
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    /// Same body, different head width.
    pub fn with_num_classes(&self, num_classes: usize) -> Self {
        Self {
            num_classes,
            ..self.clone()
        }
    }

    /// Index ranges of all weight (non-bias) coordinates.
    pub fn weight_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.layers().iter().map(LayerShape::weight_range).collect()
    }
}

/// Flat model parameters together with the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    arch: ArchDescriptor,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(arch: ArchDescriptor, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::dims(format!(
                "parameter vector has {} entries, architecture needs {}",
                values.len(),
                arch.param_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i} is {}", values[i])));
        }
        Ok(Self { arch, values })
    }

    pub fn zeros(arch: ArchDescriptor) -> Result<Self> {
        let n = arch.param_count();
        Self::new(arch, vec![0.0; n])
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `(weights, biases)` views per layer, input side first.
    pub fn layer_views(&self) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        self.arch
            .layers()
            .into_iter()
            .map(|l| {
                let w = ArrayView2::from_shape((l.fan_out, l.fan_in), &self.values[l.weight_range()])
                    .expect("layout computed from arch");
                let b = ArrayView1::from(&self.values[l.bias_range()]);
                (w, b)
            })
            .collect()
    }

    /// Inverse of [`ParamVector::layer_views`].
    pub fn from_layers(arch: ArchDescriptor, layers: &[(Array2<f64>, Array1<f64>)]) -> Result<Self> {
        let shapes = arch.layers();
        if shapes.len() != layers.len() {
            return Err(Error::dims(format!(
                "expected {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        let mut values = Vec::with_capacity(arch.param_count());
        for (shape, (w, b)) in shapes.iter().zip(layers) {
            if w.dim() != (shape.fan_out, shape.fan_in) || b.len() != shape.fan_out {
                return Err(Error::dims(format!(
                    "layer expects weights {:?} and bias {}, got {:?} and {}",
                    (shape.fan_out, shape.fan_in),
                    shape.fan_out,
                    w.dim(),
                    b.len()
                )));
            }
            values.extend(w.iter().copied());
            values.extend(b.iter().copied());
        }
        Self::new(arch, values)
    }

    pub fn l2_distance(&self, other: &ParamVector) -> Result<f64> {
        if self.arch != other.arch {
            return Err(Error::ArchMismatch("cannot measure distance".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Squared L2 norm of the weight coordinates (biases excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.arch
            .weight_ranges()
            .into_iter()
            .flat_map(|r| self.values[r].iter())
            .map(|w| w * w)
            .sum()
    }
}

/// Gradient with the same layout as the [`ParamVector`] it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
}

/// Row-stochastic class probabilities, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    pub probs: Array2<f64>,
    pub labels: Option<Vec<usize>>,
}

impl PredictionBatch {
    pub fn n_samples(&self) -> usize {
        self.probs.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.ncols()
    }

    /// Argmax per row; ties go to the lowest class index.
    pub fn predicted(&self) -> Vec<usize> {
        self.probs
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (k, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

fn sample_layer<R: Rng + ?Sized>(
    activation: Activation,
    shape: &LayerShape,
    values: &mut [f64],
    rng: &mut R,
) {
    let std = match activation {
        Activation::Relu => (2.0 / shape.fan_in as f64).sqrt(),
        Activation::Tanh => (2.0 / (shape.fan_in + shape.fan_out) as f64).sqrt(),
    };
    let normal = Normal::new(0.0, std).expect("std is finite and positive");
    for w in &mut values[shape.weight_range()] {
        *w = normal.sample(rng);
    }
    values[shape.bias_range()].fill(0.0);
}

/// He-normal weights for ReLU, Xavier-normal for tanh, zero biases.
pub fn init_params(arch: &ArchDescriptor, seed: u64) -> Result<ParamVector> {
    arch.validate()?;
    let mut rng = rng_from(seed);
    let mut values = vec![0.0; arch.param_count()];
    for shape in arch.layers() {
        sample_layer(arch.activation, &shape, &mut values, &mut rng);
    }
    ParamVector::new(arch.clone(), values)
}

/// Re-samples one layer in place from `seed`; the draw depends only on `(seed, shape)`.
pub(crate) fn reinit_layer(values: &mut [f64], arch: &ArchDescriptor, layer: usize, seed: u64) {
    let shape = arch.layers()[layer];
    let mut rng = rng_from(seed);
    sample_layer(arch.activation, &shape, values, &mut rng);
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn check_inputs(arch: &ArchDescriptor, inputs: &ArrayView2<'_, f64>) -> Result<()> {
    if inputs.ncols() != arch.input_dim {
        return Err(Error::dims(format!(
            "inputs have {} columns, network expects {}",
            inputs.ncols(),
            arch.input_dim
        )));
    }
    Ok(())
}

/// Per-layer pre-activations and outputs, kept for the backward pass.
struct Trace {
    /// `outputs[0]` is the input batch; `outputs[l + 1]` is layer `l`'s output
    /// (post-activation for hidden layers, logits for the head).
    outputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

fn run_forward(params: &ParamVector, inputs: ArrayView2<'_, f64>) -> Trace {
    let views = params.layer_views();
    let last = views.len() - 1;
    let mut outputs = vec![inputs.to_owned()];
    let mut pre = Vec::with_capacity(views.len());
    for (l, (w, b)) in views.iter().enumerate() {
        let mut z = outputs[l].dot(&w.t());
        z += b;
        let h = if l == last {
            z.clone()
        } else {
            z.mapv(|v| params.arch.activation.apply(v))
        };
        pre.push(z);
        outputs.push(h);
    }
    Trace { outputs, pre }
}

/// Raw head outputs before softmax.
pub fn logits(params: &ParamVector, inputs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_inputs(&params.arch, &inputs)?;
    let mut trace = run_forward(params, inputs);
    Ok(trace.outputs.pop().expect("at least one layer"))
}

pub fn forward(params: &ParamVector, inputs: ArrayView2<'_, f64>) -> Result<PredictionBatch> {
    let z = logits(params, inputs)?;
    Ok(PredictionBatch {
        probs: softmax_rows(&z),
        labels: None,
    })
}

fn check_labels(arch: &ArchDescriptor, n: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::dims(format!(
            "{} labels for {} samples",
            labels.len(),
            n
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= arch.num_classes) {
        return Err(Error::dims(format!(
            "label {bad} out of range for {} classes",
            arch.num_classes
        )));
    }
    if n == 0 {
        return Err(Error::Empty("no samples".into()));
    }
    Ok(())
}

/// Mean cross-entropy of `logits` against `labels`, via log-sum-exp.
fn mean_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            lse - row[y]
        })
        .sum();
    total / labels.len() as f64
}

/// Mean cross-entropy without the weight penalty.
pub fn data_loss(params: &ParamVector, inputs: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    check_inputs(&params.arch, &inputs)?;
    check_labels(&params.arch, inputs.nrows(), labels)?;
    let z = logits(params, inputs)?;
    Ok(mean_cross_entropy(&z, labels))
}

/// Mean cross-entropy plus `(l2_coeff / 2) * ||weights||^2` (biases excluded) and its
/// exact gradient.
pub fn loss_and_grad(
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    labels: &[usize],
    l2_coeff: f64,
) -> Result<(f64, Gradient)> {
    loss_grad_correct(params, inputs, labels, l2_coeff).map(|(loss, grad, _)| (loss, grad))
}

/// [`loss_and_grad`] plus the number of correctly classified samples in the batch.
pub(crate) fn loss_grad_correct(
    params: &ParamVector,
    inputs: ArrayView2<'_, f64>,
    labels: &[usize],
    l2_coeff: f64,
) -> Result<(f64, Gradient, usize)> {
    let arch = &params.arch;
    check_inputs(arch, &inputs)?;
    check_labels(arch, inputs.nrows(), labels)?;
    if !(l2_coeff >= 0.0 && l2_coeff.is_finite()) {
        return Err(Error::config(format!("l2_coeff must be >= 0, got {l2_coeff}")));
    }

    let n = inputs.nrows() as f64;
    let trace = run_forward(params, inputs);
    let logits = trace.outputs.last().expect("at least one layer");
    let mut loss = mean_cross_entropy(logits, labels);
    if l2_coeff > 0.0 {
        loss += 0.5 * l2_coeff * params.weight_norm_sq();
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss is {loss}")));
    }

    // dL/dlogits = (softmax - onehot) / n
    let mut delta = softmax_rows(logits);
    let correct = PredictionBatch {
        probs: delta.clone(),
        labels: None,
    }
    .predicted()
    .iter()
    .zip(labels)
    .filter(|(p, y)| p == y)
    .count();
    for (mut row, &y) in delta.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
    }
    delta.mapv_inplace(|v| v / n);

    let shapes = arch.layers();
    let views = params.layer_views();
    let mut grad = vec![0.0; params.len()];
    for l in (0..shapes.len()).rev() {
        let shape = &shapes[l];
        let d_w = delta.t().dot(&trace.outputs[l]);
        let d_b = delta.sum_axis(Axis(0));
        grad[shape.weight_range()]
            .iter_mut()
            .zip(d_w.iter())
            .for_each(|(g, &v)| *g = v);
        grad[shape.bias_range()]
            .iter_mut()
            .zip(d_b.iter())
            .for_each(|(g, &v)| *g = v);
        if l > 0 {
            let mut d_h = delta.dot(&views[l].0);
            ndarray::Zip::from(&mut d_h)
                .and(&trace.pre[l - 1])
                .and(&trace.outputs[l])
                .for_each(|d, &z, &h| *d *= arch.activation.derivative(z, h));
            delta = d_h;
        }
    }

    if l2_coeff > 0.0 {
        for range in arch.weight_ranges() {
            for i in range {
                grad[i] += l2_coeff * params.values[i];
            }
        }
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient coordinate {i} is {}", grad[i])));
    }
    Ok((loss, Gradient { values: grad }, correct))
}
