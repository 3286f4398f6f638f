//! Dense feed-forward network with hand-written backpropagation.
//!
//! Weights are stored `[out × in]`, inputs are row-major `[M × D]`. Every
//! hidden layer applies the model's [`Activation`]; the last layer is linear
//! and produces logits for a softmax cross-entropy loss.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Forwards only the maximum of each disjoint window; output width shrinks by `window`.
    Maxout {
        window: usize,
    },
    /// Local winner-take-all: zeroes every non-maximum entry of each window, width preserved.
    Lwta {
        window: usize,
    },
}

impl Activation {
    pub fn window(&self) -> usize {
        match *self {
            Activation::Relu => 1,
            Activation::Maxout { window } | Activation::Lwta { window } => window,
        }
    }

    /// Width of the post-activation for a layer with `width` pre-activations.
    pub fn output_width(&self, width: usize) -> usize {
        match *self {
            Activation::Maxout { window } => width / window,
            _ => width,
        }
    }

    pub fn check_width(&self, width: usize) -> Result<()> {
        let window = self.window();
        if window == 0 || !width.is_multiple_of(window) {
            return Err(Error::WindowMismatch { width, window });
        }
        Ok(())
    }
}

/// Applies `kind` row-wise to a matrix of pre-activations.
///
/// Ties inside a Maxout/LWTA window go to the lowest column index.
pub fn apply_activation(pre: &Array2<f64>, kind: Activation) -> Result<Array2<f64>> {
    kind.check_width(pre.ncols())?;
    Ok(match kind {
        Activation::Relu => pre.mapv(|v| v.max(0.0)),
        Activation::Lwta { window } => {
            let mut post = Array2::zeros(pre.raw_dim());
            for (row, mut out) in pre.rows().into_iter().zip(post.rows_mut()) {
                let row = row.to_vec();
                for g in 0..row.len() / window {
                    let w = window_argmax(&row, g, window);
                    out[w] = row[w];
                }
            }
            post
        }
        Activation::Maxout { window } => {
            let groups = pre.ncols() / window;
            let mut post = Array2::zeros((pre.nrows(), groups));
            for (row, mut out) in pre.rows().into_iter().zip(post.rows_mut()) {
                let row = row.to_vec();
                for g in 0..groups {
                    out[g] = row[window_argmax(&row, g, window)];
                }
            }
            post
        }
    })
}

fn window_argmax(row: &[f64], group: usize, window: usize) -> usize {
    let start = group * window;
    let mut best = start;
    for i in start + 1..start + window {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

/// Routes `d_post` back through the activation, producing the gradient w.r.t. `pre`.
fn activation_backward(pre: &Array2<f64>, d_post: &Array2<f64>, kind: Activation) -> Array2<f64> {
    match kind {
        Activation::Relu => {
            let mut d = d_post.clone();
            Zip::from(&mut d).and(pre).for_each(|d, &p| {
                if p <= 0.0 {
                    *d = 0.0;
                }
            });
            d
        }
        Activation::Lwta { window } => {
            let mut d = Array2::zeros(pre.raw_dim());
            for ((row, drow), mut out) in pre.rows().into_iter().zip(d_post.rows()).zip(d.rows_mut()) {
                let row = row.to_vec();
                for g in 0..row.len() / window {
                    let w = window_argmax(&row, g, window);
                    out[w] = drow[w];
                }
            }
            d
        }
        Activation::Maxout { window } => {
            let mut d = Array2::zeros(pre.raw_dim());
            for ((row, drow), mut out) in pre.rows().into_iter().zip(d_post.rows()).zip(d.rows_mut()) {
                let row = row.to_vec();
                for g in 0..drow.len() {
                    out[window_argmax(&row, g, window)] = drow[g];
                }
            }
            d
        }
    }
}

/// Labeled examples: `inputs [M × D]`, one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    /// Validates `M ≥ 1`, one label per row and every label `< classes`.
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::EmptyData("batch"));
        }
        if labels.len() != inputs.nrows() {
            return Err(Error::shape("batch labels", inputs.nrows(), labels.len()));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Copies the rows at `indices`.
    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Consecutive sub-batches of at most `size` rows.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = Batch> + '_ {
        let size = size.max(1);
        (0..self.len()).step_by(size).map(move |start| {
            let end = (start + size).min(self.len());
            Batch {
                inputs: self.inputs.slice(ndarray::s![start..end, ..]).to_owned(),
                labels: self.labels[start..end].to_vec(),
            }
        })
    }
}

/// One fully connected layer. Also used as the shape carrier for gradients
/// and per-parameter importance maps.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `[out × in]`
    pub weights: Array2<f64>,
    /// `[out]`
    pub biases: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            weights: Array2::zeros((outputs, inputs)),
            biases: Array1::zeros(outputs),
        }
    }

    /// Fan-based uniform init in ±√(6/(fan_in+fan_out)), zero biases.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite init bounds");
        DenseLayer {
            weights: Array2::from_shape_simple_fn((outputs, inputs), || dist.sample(rng)),
            biases: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        DenseLayer::zeros(self.inputs(), self.outputs())
    }

    pub fn same_shape(&self, other: &DenseLayer) -> bool {
        self.weights.dim() == other.weights.dim() && self.biases.len() == other.biases.len()
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.biases.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

/// Checks that two layer stacks have identical shapes.
pub fn check_same_shapes(context: &'static str, a: &[DenseLayer], b: &[DenseLayer]) -> Result<()> {
    let shapes = |ls: &[DenseLayer]| ls.iter().map(|l| l.weights.dim()).collect::<Vec<_>>();
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| !x.same_shape(y)) {
        return Err(Error::shape(context, shapes(a), shapes(b)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

impl Mlp {
    /// Wraps explicit layers after checking that dimensions chain.
    pub fn new(layers: Vec<DenseLayer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a network needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            activation.check_width(pair[0].outputs())?;
            let expected = activation.output_width(pair[0].outputs());
            if pair[1].inputs() != expected {
                return Err(Error::shape(
                    "layer chaining",
                    (l + 1, expected),
                    (l + 1, pair[1].inputs()),
                ));
            }
        }
        for layer in &layers {
            if layer.biases.len() != layer.outputs() {
                return Err(Error::shape("bias length", layer.outputs(), layer.biases.len()));
            }
        }
        Ok(Mlp { layers, activation })
    }

    /// Randomly initialised network. `hidden` lists pre-activation widths.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &width in hidden {
            activation.check_width(width)?;
            layers.push(DenseLayer::init(fan_in, width, rng));
            fan_in = activation.output_width(width);
        }
        layers.push(DenseLayer::init(fan_in, classes, rng));
        Mlp::new(layers, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map(DenseLayer::outputs).unwrap_or(0)
    }

    pub fn hidden_count(&self) -> usize {
        self.layers.len() - 1
    }

    /// Post-activation width of every hidden layer.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.hidden_count()]
            .iter()
            .map(|l| self.activation.output_width(l.outputs()))
            .collect()
    }

    /// Pre-activation width of every hidden layer.
    pub fn hidden_pre_widths(&self) -> Vec<usize> {
        self.layers[..self.hidden_count()]
            .iter()
            .map(DenseLayer::outputs)
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseLayer::is_finite)
    }

    fn check_input(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::shape("forward input width", self.input_dim(), inputs.ncols()));
        }
        Ok(())
    }

    /// Full forward pass, recording every hidden layer.
    pub fn forward(&self, inputs: ArrayView2<f64>) -> Result<ActivationsRecord> {
        self.check_input(&inputs)?;
        let mut hidden = Vec::with_capacity(self.hidden_count());
        let mut current = inputs.to_owned();
        for layer in &self.layers[..self.hidden_count()] {
            let pre = affine(current.view(), layer);
            let post = apply_activation(&pre, self.activation)?;
            current = post.clone();
            hidden.push(HiddenActivations { pre, post });
        }
        let logits = affine(current.view(), self.layers.last().expect("non-empty"));
        Ok(ActivationsRecord {
            inputs: inputs.to_owned(),
            hidden,
            logits,
        })
    }

    /// Logits only; nothing retained.
    pub fn logits(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&inputs)?;
        let mut current = inputs.to_owned();
        for layer in &self.layers[..self.hidden_count()] {
            current = apply_activation(&affine(current.view(), layer), self.activation)?;
        }
        Ok(affine(current.view(), self.layers.last().expect("non-empty")))
    }

    /// Reverse-mode pass. `injected` adds ∂R/∂h for each hidden post-activation.
    pub fn backward(
        &self,
        record: &ActivationsRecord,
        d_logits: &Array2<f64>,
        injected: Option<&[Array2<f64>]>,
    ) -> Result<Gradients> {
        Ok(self.backward_full(record, d_logits, injected)?.0)
    }

    /// Like [`Mlp::backward`] but also returns the gradient w.r.t. every
    /// hidden pre-activation.
    pub fn backward_full(
        &self,
        record: &ActivationsRecord,
        d_logits: &Array2<f64>,
        injected: Option<&[Array2<f64>]>,
    ) -> Result<(Gradients, Vec<Array2<f64>>)> {
        self.check_record(record)?;
        if d_logits.dim() != record.logits.dim() {
            return Err(Error::shape("d_logits", record.logits.dim(), d_logits.dim()));
        }
        if let Some(inj) = injected {
            let shapes: Vec<_> = record.hidden.iter().map(|h| h.post.dim()).collect();
            let got: Vec<_> = inj.iter().map(|g| g.dim()).collect();
            if shapes != got {
                return Err(Error::shape("injected activation gradients", shapes, got));
            }
        }

        let n = self.layers.len();
        let mut layers = Vec::with_capacity(n);
        let mut pre_grads = vec![Array2::zeros((0, 0)); n - 1];
        let mut delta = d_logits.clone();
        for l in (0..n).rev() {
            let input = if l == 0 {
                record.inputs.view()
            } else {
                record.hidden[l - 1].post.view()
            };
            layers.push(DenseLayer {
                weights: delta.t().dot(&input),
                biases: delta.sum_axis(Axis(0)),
            });
            if l > 0 {
                let mut d_post = delta.dot(&self.layers[l].weights);
                if let Some(inj) = injected {
                    d_post += &inj[l - 1];
                }
                delta = activation_backward(&record.hidden[l - 1].pre, &d_post, self.activation);
                pre_grads[l - 1] = delta.clone();
            }
        }
        layers.reverse();
        Ok((Gradients { layers }, pre_grads))
    }

    fn check_record(&self, record: &ActivationsRecord) -> Result<()> {
        let expected: Vec<_> = self.hidden_pre_widths();
        let got: Vec<_> = record.hidden.iter().map(|h| h.pre.ncols()).collect();
        if expected != got || record.inputs.ncols() != self.input_dim() || record.logits.ncols() != self.num_classes() {
            return Err(Error::shape("activation record vs model", expected, got));
        }
        Ok(())
    }

    /// Plain SGD: θ ← θ − lr·g. Rejects non-finite gradients before touching the model.
    pub fn sgd_step(&mut self, grads: &Gradients, learning_rate: f64) -> Result<()> {
        if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate {learning_rate}")));
        }
        check_same_shapes("sgd gradients", &self.layers, &grads.layers)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weights.scaled_add(-learning_rate, &g.weights);
            layer.biases.scaled_add(-learning_rate, &g.biases);
        }
        Ok(())
    }
}

fn affine(inputs: ArrayView2<f64>, layer: &DenseLayer) -> Array2<f64> {
    let mut out = inputs.dot(&layer.weights.t());
    out += &layer.biases;
    out
}

#[derive(Debug, Clone)]
pub struct HiddenActivations {
    /// `[M × N]` outputs before the nonlinearity.
    pub pre: Array2<f64>,
    /// `[M × N']` outputs after it (`N' = N/k` under Maxout).
    pub post: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ActivationsRecord {
    pub inputs: Array2<f64>,
    pub hidden: Vec<HiddenActivations>,
    pub logits: Array2<f64>,
}

impl ActivationsRecord {
    pub fn posts(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.hidden.iter().map(|h| &h.post)
    }
}

/// Parameter-shaped gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    pub fn zeros_like(model: &Mlp) -> Self {
        Gradients {
            layers: model.layers.iter().map(DenseLayer::zeros_like).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseLayer::is_finite)
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(DenseLayer::values)
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, scale: f64, other: &Gradients) -> Result<()> {
        check_same_shapes("gradient accumulation", &self.layers, &other.layers)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(scale, &b.weights);
            a.biases.scaled_add(scale, &b.biases);
        }
        Ok(())
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Mean softmax cross-entropy and its gradient `(softmax − onehot)/M`.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (m, classes) = logits.dim();
    if labels.len() != m {
        return Err(Error::shape("labels", m, labels.len()));
    }
    if m == 0 {
        return Err(Error::EmptyData("cross-entropy batch"));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    let mut grad = Array2::zeros((m, classes));
    let mut loss = 0.0;
    for ((row, &y), mut g) in logits.rows().into_iter().zip(labels).zip(grad.rows_mut()) {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[y];
        for (c, gv) in g.iter_mut().enumerate() {
            *gv = (row[c] - log_sum).exp();
        }
        g[y] -= 1.0;
    }
    grad /= m as f64;
    Ok((loss / m as f64, grad))
}

/// Central-difference gradient of `loss_fn` over every model parameter.
///
/// Slow (two loss evaluations per parameter); meant as a test oracle.
pub fn finite_difference_gradient<F>(mut loss_fn: F, model: &Mlp, step: f64) -> Result<Gradients>
where
    F: FnMut(&Mlp) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step}")));
    }
    let mut probe = model.clone();
    let mut grads = Gradients::zeros_like(model);
    for l in 0..model.layers.len() {
        let count = model.layers[l].num_params();
        for k in 0..count {
            let original = *param_mut(&mut probe.layers[l], k);
            *param_mut(&mut probe.layers[l], k) = original + step;
            let plus = loss_fn(&probe);
            *param_mut(&mut probe.layers[l], k) = original - step;
            let minus = loss_fn(&probe);
            *param_mut(&mut probe.layers[l], k) = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite("finite-difference loss"));
            }
            *param_mut(&mut grads.layers[l], k) = (plus - minus) / (2.0 * step);
        }
    }
    Ok(grads)
}

fn param_mut(layer: &mut DenseLayer, k: usize) -> &mut f64 {
    let nw = layer.weights.len();
    if k < nw {
        let cols = layer.weights.ncols();
        &mut layer.weights[[k / cols, k % cols]]
    } else {
        &mut layer.biases[k - nw]
    }
}

/// Max relative error `|a − b| / max(|a|, |b|, floor)` over all entries.
pub fn max_relative_error<'a>(
    a: impl IntoIterator<Item = &'a f64>,
    b: impl IntoIterator<Item = &'a f64>,
    floor: f64,
) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(activation: Activation, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::init(3, &[4, 4], 3, activation, &mut rng).unwrap()
    }

    #[test]
    fn zero_model_gives_zero_activations() {
        let model = Mlp::new(vec![DenseLayer::zeros(3, 4), DenseLayer::zeros(4, 2)], Activation::Relu).unwrap();
        let rec = model.forward(array![[0.3, -1.0, 2.0]].view()).unwrap();
        assert!(rec.hidden[0].post.iter().all(|&v| v == 0.0));
        assert!(rec.logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_single_unit() {
        let mut layer = DenseLayer::zeros(1, 1);
        layer.weights[[0, 0]] = 1.0;
        let model = Mlp::new(vec![layer, DenseLayer::zeros(1, 1)], Activation::Relu).unwrap();
        let rec = model.forward(array![[-2.0]].view()).unwrap();
        assert_eq!(rec.hidden[0].pre[[0, 0]], -2.0);
        assert_eq!(rec.hidden[0].post[[0, 0]], 0.0);
    }

    #[test]
    fn lwta_forward_through_layer() {
        // identity first layer so pre-activations equal the input
        let mut first = DenseLayer::zeros(4, 4);
        first.weights.diag_mut().fill(1.0);
        let model = Mlp::new(vec![first, DenseLayer::zeros(4, 2)], Activation::Lwta { window: 2 }).unwrap();
        let rec = model.forward(array![[3.0, 1.0, 0.0, 2.0]].view()).unwrap();
        assert_eq!(rec.hidden[0].post, array![[3.0, 0.0, 0.0, 2.0]]);
    }

    #[test]
    fn activation_definitions() {
        let relu = apply_activation(&array![[-1.0, 0.0, 2.0]], Activation::Relu).unwrap();
        assert_eq!(relu, array![[0.0, 0.0, 2.0]]);
        let x = array![[4.0, 7.0, -1.0, -3.0]];
        let maxout = apply_activation(&x, Activation::Maxout { window: 2 }).unwrap();
        assert_eq!(maxout, array![[7.0, -1.0]]);
        let lwta = apply_activation(&x, Activation::Lwta { window: 2 }).unwrap();
        assert_eq!(lwta, array![[0.0, 7.0, -1.0, 0.0]]);
    }

    #[test]
    fn lwta_tie_keeps_lowest_index() {
        let out = apply_activation(&array![[5.0, 5.0]], Activation::Lwta { window: 2 }).unwrap();
        assert_eq!(out, array![[5.0, 0.0]]);
    }

    #[test]
    fn window_must_divide_width() {
        let err = apply_activation(&array![[1.0, 2.0, 3.0]], Activation::Maxout { window: 2 });
        assert!(matches!(err, Err(Error::WindowMismatch { width: 3, window: 2 })));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Mlp::init(4, &[5], 2, Activation::Lwta { window: 2 }, &mut rng).is_err());
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let model = tiny(Activation::Relu, 1);
        assert!(matches!(
            model.forward(array![[1.0, 2.0]].view()),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn layers_must_chain() {
        let err = Mlp::new(vec![DenseLayer::zeros(3, 4), DenseLayer::zeros(5, 2)], Activation::Relu);
        assert!(err.is_err());
        // maxout halves the width seen by the next layer
        assert!(Mlp::new(
            vec![DenseLayer::zeros(3, 4), DenseLayer::zeros(2, 2)],
            Activation::Maxout { window: 2 }
        )
        .is_ok());
    }

    #[test]
    fn cross_entropy_values() {
        let (loss, _) = softmax_cross_entropy(&array![[0.0, 0.0]], &[1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        let (loss, grad) = softmax_cross_entropy(&array![[1000.0, 0.0]], &[0]).unwrap();
        assert!(loss.is_finite() && loss.abs() < 1e-12);
        assert!(grad.iter().all(|v| v.is_finite()));

        let (loss, _) = softmax_cross_entropy(&array![[1.0, 2.0]], &[1]).unwrap();
        // ln(1 + e^-1)
        assert!((loss - 0.313_261_687_518_222_8).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        assert!(matches!(
            softmax_cross_entropy(&array![[0.0, 0.0]], &[2]),
            Err(Error::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let model = tiny(Activation::Relu, 2);
        let rec = model.forward(array![[0.1, 0.5, -0.2]].view()).unwrap();
        let g = model
            .backward(&rec, &Array2::zeros(rec.logits.raw_dim()), None)
            .unwrap();
        assert!(g.values().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_gradient() {
        let layer = DenseLayer {
            weights: array![[0.5, -1.0], [2.0, 0.25]],
            biases: array![0.1, -0.3],
        };
        let model = Mlp::new(vec![layer], Activation::Relu).unwrap();
        let x = array![[1.0, 2.0], [-1.0, 0.5]];
        let rec = model.forward(x.view()).unwrap();
        let d = array![[1.0, -2.0], [0.5, 3.0]];
        let g = model.backward(&rec, &d, None).unwrap();
        assert_eq!(g.layers[0].weights, d.t().dot(&x));
        assert_eq!(g.layers[0].biases, array![1.5, 1.0]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = array![[0.3, -0.7, 1.1], [0.9, 0.2, -0.4], [-0.5, 0.8, 0.6]];
        let labels = [0, 2, 1];
        for activation in [
            Activation::Relu,
            Activation::Lwta { window: 2 },
            Activation::Maxout { window: 2 },
        ] {
            let model = tiny(activation, 7);
            let rec = model.forward(x.view()).unwrap();
            let injected: Vec<Array2<f64>> = rec.posts().map(|h| h.mapv(|v| 0.3 * v + 0.1)).collect();
            let (_, d_logits) = softmax_cross_entropy(&rec.logits, &labels).unwrap();
            let analytic = model.backward(&rec, &d_logits, Some(&injected)).unwrap();
            // loss + Σ⟨c, h⟩ with c held fixed
            let numeric = finite_difference_gradient(
                |m| {
                    let r = m.forward(x.view()).unwrap();
                    let (ce, _) = softmax_cross_entropy(&r.logits, &labels).unwrap();
                    ce + r.posts().zip(&injected).map(|(h, c)| (h * c).sum()).sum::<f64>()
                },
                &model,
                1e-5,
            )
            .unwrap();
            let err = max_relative_error(analytic.values(), numeric.values(), 1e-6);
            assert!(err < 1e-4, "{activation:?}: {err}");
        }
    }

    #[test]
    fn sgd_step_arithmetic() {
        let mut layer = DenseLayer::zeros(1, 1);
        layer.weights[[0, 0]] = 1.0;
        let mut model = Mlp::new(vec![layer], Activation::Relu).unwrap();
        let before = model.clone();
        let mut g = Gradients::zeros_like(&model);
        g.layers[0].weights[[0, 0]] = 0.5;
        model.sgd_step(&g, 0.0).unwrap();
        assert_eq!(model, before);
        model.sgd_step(&g, 0.01).unwrap();
        assert!((model.layers[0].weights[[0, 0]] - 0.995).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite() {
        let mut model = tiny(Activation::Relu, 3);
        let before = model.clone();
        let mut g = Gradients::zeros_like(&model);
        g.layers[1].biases[0] = f64::NAN;
        assert!(matches!(model.sgd_step(&g, 0.1), Err(Error::NonFinite(_))));
        assert_eq!(model, before);
    }

    #[test]
    fn sgd_decreases_convex_loss() {
        // ½‖θ‖² on every parameter; gradient is θ itself
        let mut model = tiny(Activation::Relu, 4);
        let loss = |m: &Mlp| {
            m.layers
                .iter()
                .flat_map(DenseLayer::values)
                .map(|v| 0.5 * v * v)
                .sum::<f64>()
        };
        let mut last = loss(&model);
        for _ in 0..20 {
            let g = Gradients {
                layers: model.layers.clone(),
            };
            model.sgd_step(&g, 0.05).unwrap();
            let now = loss(&model);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn finite_difference_basics() {
        let mut layer = DenseLayer::zeros(1, 1);
        layer.weights[[0, 0]] = 3.0;
        let model = Mlp::new(vec![layer], Activation::Relu).unwrap();
        let g = finite_difference_gradient(|m| m.layers[0].weights[[0, 0]].powi(2), &model, 1e-5).unwrap();
        assert!((g.layers[0].weights[[0, 0]] - 6.0).abs() < 1e-6);
        let g = finite_difference_gradient(|_| 1.5, &model, 1e-5).unwrap();
        assert!(g.values().all(|&v| v == 0.0));
        assert!(finite_difference_gradient(|_| f64::NAN, &model, 1e-5).is_err());
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(tiny(Activation::Relu, 11), tiny(Activation::Relu, 11));
        assert_ne!(tiny(Activation::Relu, 11), tiny(Activation::Relu, 12));
    }
}
