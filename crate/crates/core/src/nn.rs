//! The numeric engine: a feed-forward MLP (ReLU hidden layers, softmax
//! cross-entropy) with exact backpropagation and plain SGD, all in f64.
//!
//! Parameters live in a single flat [`ParamVector`] whose layout is fixed by
//! the architecture: for each layer, the weight matrix in (input, output)
//! row-major order, then the bias vector. All operations are pure functions
//! of their inputs; a `ParamVector` is never mutated in place except by
//! value-consuming [`sgd_step`].

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, LabeledExample};
use crate::error::{Error, Result};

/// Layer widths of the MLP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidInput(
                "all layer dimensions must be at least 1".into(),
            ));
        }
        Ok(Self {
            input_dim,
            hidden_dims,
            output_dim,
        })
    }

    /// The even-digit MNIST network: 784 -> 200 -> 100 -> 5.
    pub fn mnist_even() -> Self {
        Self {
            input_dim: 784,
            hidden_dims: vec![200, 100],
            output_dim: 5,
        }
    }

    /// (input, output) widths per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    /// Total parameter count (weights + biases).
    pub fn param_len(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Flat parameter vector over the layout described in the module docs.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

/// A client's parameter delta; dimensionally identical to a [`ParamVector`].
pub type ClientUpdate = ParamVector;

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Element-wise difference `self - other`.
    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        assert_eq!(self.len(), other.len(), "parameter length mismatch");
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

/// One SGD step: `params - lr * grad`, element-wise.
pub fn sgd_step(mut params: ParamVector, grad: &ParamVector, lr: f64) -> ParamVector {
    assert!(lr >= 0.0, "learning rate must be non-negative");
    assert_eq!(params.len(), grad.len(), "parameter length mismatch");
    for (p, g) in params.0.iter_mut().zip(&grad.0) {
        *p -= lr * g;
    }
    params
}

/// A non-empty view over training examples.
pub struct Minibatch<'a> {
    examples: &'a [LabeledExample],
}

impl<'a> Minibatch<'a> {
    pub fn new(examples: &'a [LabeledExample]) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset("minibatch"));
        }
        Ok(Self { examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn examples(&self) -> &[LabeledExample] {
        self.examples
    }
}

/// Classification metrics over a dataset.
///
/// `confusion[true][predicted]` holds raw counts. Precision for class `c` is
/// the column-`c` diagonal over the column sum, `None` when the model never
/// predicted `c`; recall is the row-based analogue.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class_precision: Vec<Option<f64>>,
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let n = confusion.len();
        let total: usize = confusion.iter().map(|row| row.iter().sum::<usize>()).sum();
        let correct: usize = (0..n).map(|c| confusion[c][c]).sum();
        let accuracy = correct as f64 / total as f64;
        let per_class_precision = (0..n)
            .map(|c| {
                let column: usize = confusion.iter().map(|row| row[c]).sum();
                (column > 0).then(|| confusion[c][c] as f64 / column as f64)
            })
            .collect();
        Self {
            accuracy,
            per_class_precision,
            confusion,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> usize {
        self.confusion
            .iter()
            .map(|row| row.iter().sum::<usize>())
            .sum()
    }

    pub fn precision(&self, class: usize) -> Option<f64> {
        self.per_class_precision[class]
    }

    /// Accuracy restricted to examples whose true label is `class`.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let row: usize = self.confusion[class].iter().sum();
        (row > 0).then(|| self.confusion[class][class] as f64 / row as f64)
    }
}

struct LayerShape {
    input: usize,
    output: usize,
    weight_offset: usize,
    bias_offset: usize,
}

/// The MLP engine. Holds only the architecture; parameters are always passed
/// explicitly, so one `Mlp` may serve any number of concurrent model states.
pub struct Mlp {
    arch: MlpArchitecture,
    layers: Vec<LayerShape>,
}

impl Mlp {
    pub fn new(arch: MlpArchitecture) -> Self {
        let mut layers = Vec::new();
        let mut offset = 0;
        for (input, output) in arch.layer_dims() {
            layers.push(LayerShape {
                input,
                output,
                weight_offset: offset,
                bias_offset: offset + input * output,
            });
            offset += input * output + output;
        }
        Self { arch, layers }
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn param_len(&self) -> usize {
        self.arch.param_len()
    }

    /// Scaled-uniform (Glorot) initialization: weights uniform in
    /// +-sqrt(6 / (fan_in + fan_out)) per layer, biases zero.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut values = vec![0.0; self.param_len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &self.layers {
            let bound = (6.0 / (layer.input + layer.output) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for w in &mut values[layer.weight_offset..layer.bias_offset] {
                *w = dist.sample(&mut rng);
            }
        }
        ParamVector(values)
    }

    fn weight_view<'a>(&self, params: &'a [f64], layer: &LayerShape) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape(
            (layer.input, layer.output),
            &params[layer.weight_offset..layer.bias_offset],
        )
        .expect("weight slice matches layer shape")
    }

    fn bias_view<'a>(&self, params: &'a [f64], layer: &LayerShape) -> ArrayView1<'a, f64> {
        ArrayView1::from(&params[layer.bias_offset..layer.bias_offset + layer.output])
    }

    /// Forward pass over a batch, keeping post-activation values per layer
    /// (the final entry holds raw logits).
    fn forward_batch(&self, params: &ParamVector, x: &Array2<f64>) -> Vec<Array2<f64>> {
        let values = params.values();
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut current = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&self.weight_view(values, layer));
            z += &self.bias_view(values, layer);
            if l < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z);
            current = activations.last().unwrap();
        }
        activations
    }

    fn batch_matrix(&self, examples: &[LabeledExample]) -> Array2<f64> {
        let mut x = Array2::zeros((examples.len(), self.arch.input_dim));
        for (i, e) in examples.iter().enumerate() {
            assert_eq!(e.pixels.len(), self.arch.input_dim, "image length mismatch");
            x.row_mut(i)
                .iter_mut()
                .zip(e.pixels.iter())
                .for_each(|(dst, &src)| *dst = src);
        }
        x
    }

    /// Logits for one image.
    pub fn forward(&self, params: &ParamVector, image: &[f64]) -> Result<Vec<f64>> {
        if image.len() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                actual: image.len(),
            });
        }
        if params.len() != self.param_len() {
            return Err(Error::DimensionMismatch {
                expected: self.param_len(),
                actual: params.len(),
            });
        }
        let mut x = Array2::zeros((1, self.arch.input_dim));
        x.row_mut(0)
            .iter_mut()
            .zip(image.iter())
            .for_each(|(dst, &src)| *dst = src);
        let activations = self.forward_batch(params, &x);
        Ok(activations.last().unwrap().row(0).to_vec())
    }

    /// Predicted class for one image: argmax of the logits, ties broken by
    /// the lowest class index.
    pub fn predict(&self, params: &ParamVector, image: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(params, image)?))
    }

    /// Predicted classes for a slice of examples (batched).
    pub fn predict_batch(&self, params: &ParamVector, examples: &[LabeledExample]) -> Vec<usize> {
        let mut predictions = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(EVAL_CHUNK) {
            let x = self.batch_matrix(chunk);
            let activations = self.forward_batch(params, &x);
            let logits = activations.last().unwrap();
            for row in logits.rows() {
                predictions.push(argmax(row.as_slice().unwrap()));
            }
        }
        predictions
    }

    /// Mean softmax cross-entropy over a batch.
    pub fn loss(&self, params: &ParamVector, batch: &Minibatch<'_>) -> f64 {
        let x = self.batch_matrix(batch.examples());
        let activations = self.forward_batch(params, &x);
        let logits = activations.last().unwrap();
        let mut total = 0.0;
        for (row, example) in logits.rows().into_iter().zip(batch.examples()) {
            let row = row.as_slice().unwrap();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            total += sum.ln() - (row[example.label as usize] - max);
        }
        total / batch.len() as f64
    }

    /// Mean softmax cross-entropy and its exact gradient over a batch.
    ///
    /// The softmax is computed with max-subtraction, so the loss is finite
    /// for any finite parameters. The gradient shares the parameter layout.
    pub fn loss_and_grad(&self, params: &ParamVector, batch: &Minibatch<'_>) -> (f64, ParamVector) {
        assert_eq!(params.len(), self.param_len(), "parameter length mismatch");
        let batch_len = batch.len();
        let x = self.batch_matrix(batch.examples());
        let activations = self.forward_batch(params, &x);
        let logits = &activations[activations.len() - 1];

        // Softmax probabilities, loss, and the output delta (P - Y) in one pass.
        let mut delta = logits.clone();
        let mut loss = 0.0;
        for (i, example) in batch.examples().iter().enumerate() {
            let mut row = delta.row_mut(i);
            let slice = row.as_slice_mut().unwrap();
            let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in slice.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            let label = example.label as usize;
            loss += sum.ln() - (logits[(i, label)] - max);
            for v in slice.iter_mut() {
                *v /= sum;
            }
            slice[label] -= 1.0;
        }
        loss /= batch_len as f64;
        delta.mapv_inplace(|v| v / batch_len as f64);

        // Backward pass, writing straight into the flat gradient vector.
        let mut grad = vec![0.0; self.param_len()];
        let values = params.values();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input: &Array2<f64> = if l == 0 { &x } else { &activations[l - 1] };
            {
                let (w_grad, b_grad) = grad[layer.weight_offset..layer.bias_offset + layer.output]
                    .split_at_mut(layer.input * layer.output);
                let mut w_view = ArrayViewMut2::from_shape((layer.input, layer.output), w_grad)
                    .expect("gradient slice matches layer shape");
                ndarray::linalg::general_mat_mul(1.0, &input.t(), &delta, 0.0, &mut w_view);
                let bias_sum = delta.sum_axis(Axis(0));
                b_grad.copy_from_slice(bias_sum.as_slice().unwrap());
            }
            if l > 0 {
                let mut upstream = delta.dot(&self.weight_view(values, layer).t());
                // ReLU mask: the stored activation is zero exactly where the
                // pre-activation was clamped.
                upstream
                    .iter_mut()
                    .zip(activations[l - 1].iter())
                    .for_each(|(u, &a)| {
                        if a <= 0.0 {
                            *u = 0.0;
                        }
                    });
                delta = upstream;
            }
        }
        (loss, ParamVector(grad))
    }

    /// Accuracy, per-class precision, and the confusion matrix over a
    /// dataset. Labels must be valid class indices.
    pub fn evaluate(&self, params: &ParamVector, data: &Dataset) -> Result<EvalReport> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("evaluation dataset"));
        }
        if params.len() != self.param_len() {
            return Err(Error::DimensionMismatch {
                expected: self.param_len(),
                actual: params.len(),
            });
        }
        let classes = self.arch.output_dim;
        for e in data.iter() {
            if (e.label as usize) >= classes {
                return Err(Error::InvalidInput(format!(
                    "label {} out of range for {classes} classes",
                    e.label
                )));
            }
        }
        let predictions = self.predict_batch(params, &data.examples);
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (e, &pred) in data.iter().zip(&predictions) {
            confusion[e.label as usize][pred] += 1;
        }
        Ok(EvalReport::from_confusion(confusion))
    }
}

const EVAL_CHUNK: usize = 512;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
