//! Parameter importance (Ω) and neuron importance (α).
//!
//! Both are per-example gradient magnitudes averaged over a task's data:
//!
//! * MAS: `Ω_k = (1/M) Σ_m |∂g(x_m)/∂θ_k|` with `g(x) = ½‖f(x)‖²` on the logits;
//! * EWC: `F_k = (1/M) Σ_m (∂ℓ(x_m, y_m)/∂θ_k)²`, the empirical diagonal Fisher;
//! * neurons: `α_i = (1/M) Σ_m |∂T(x_m)/∂n_i^m|` on the pre-activation `n_i`,
//!   where `T` is `g` (function mode, paired with MAS) or the cross-entropy
//!   loss (loss mode, paired with EWC).
//!
//! Per-example weight gradients are outer products `d aᵀ`, so their absolute
//! values (and squares) reduce to one matrix product per layer.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{check_same_shapes, softmax, Batch, DenseLayer, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceMethod {
    Mas,
    Ewc,
}

impl ImportanceMethod {
    /// MAS pairs with function-gradient neuron importance, EWC with loss-gradient.
    pub fn neuron_mode(&self) -> NeuronImportanceMode {
        match self {
            ImportanceMethod::Mas => NeuronImportanceMode::FunctionGrad,
            ImportanceMethod::Ewc => NeuronImportanceMode::LossGrad,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ImportanceMethod::Mas => "mas",
            ImportanceMethod::Ewc => "ewc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeuronImportanceMode {
    /// Gradient of the cross-entropy loss; needs labels.
    LossGrad,
    /// Gradient of `½‖logits‖²`; label-free.
    FunctionGrad,
}

/// Element-wise sum of two importance maps of identical shape.
pub trait Accumulate: Sized {
    fn accumulate(&self, other: &Self) -> Result<Self>;
}

/// Accumulates `new` onto `old`; a fresh sequence starts from the zero map.
pub fn accumulate_importance<T: Accumulate>(old: &T, new: &T) -> Result<T> {
    old.accumulate(new)
}

/// Ω (or F) for every parameter, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamImportance {
    pub layers: Vec<DenseLayer>,
    pub method: ImportanceMethod,
}

impl ParamImportance {
    pub fn zeros_like(model: &Mlp, method: ImportanceMethod) -> Self {
        ParamImportance {
            layers: model.layers.iter().map(DenseLayer::zeros_like).collect(),
            method,
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(DenseLayer::values)
    }

    pub fn is_valid(&self) -> bool {
        self.values().all(|v| v.is_finite() && *v >= 0.0)
    }
}

impl Accumulate for ParamImportance {
    fn accumulate(&self, other: &Self) -> Result<Self> {
        check_same_shapes("importance accumulation", &self.layers, &other.layers)?;
        if self.method != other.method {
            return Err(Error::InvalidArgument(format!(
                "cannot accumulate {} importance onto {}",
                other.method.name(),
                self.method.name()
            )));
        }
        let layers = self
            .layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| DenseLayer {
                weights: &a.weights + &b.weights,
                biases: &a.biases + &b.biases,
            })
            .collect();
        Ok(ParamImportance {
            layers,
            method: self.method,
        })
    }
}

/// α for every hidden neuron (pre-activation units).
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronImportance {
    pub layers: Vec<Array1<f64>>,
}

impl NeuronImportance {
    pub fn zeros(widths: &[usize]) -> Self {
        NeuronImportance {
            layers: widths.iter().map(|&w| Array1::zeros(w)).collect(),
        }
    }

    pub fn zeros_like(model: &Mlp) -> Self {
        Self::zeros(&model.hidden_pre_widths())
    }

    pub fn is_valid(&self) -> bool {
        self.layers.iter().flatten().all(|v| v.is_finite() && *v >= 0.0)
    }
}

impl Accumulate for NeuronImportance {
    fn accumulate(&self, other: &Self) -> Result<Self> {
        let a: Vec<_> = self.layers.iter().map(Array1::len).collect();
        let b: Vec<_> = other.layers.iter().map(Array1::len).collect();
        if a != b {
            return Err(Error::shape("neuron importance accumulation", a, b));
        }
        Ok(NeuronImportance {
            layers: self.layers.iter().zip(&other.layers).map(|(x, y)| x + y).collect(),
        })
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Target {
    /// `½‖z‖²`
    Function,
    /// cross-entropy of the true label
    Loss,
}

#[derive(Clone, Copy, PartialEq)]
enum Reduce {
    Abs,
    Square,
}

/// Per-layer deltas and per-layer inputs, one row per example.
type Deltas = (Vec<Array2<f64>>, Vec<Array2<f64>>);

/// Runs forward/backward on one batch with an un-averaged upstream gradient,
/// so every row of every delta is that example's own gradient.
fn per_example_deltas(model: &Mlp, batch: &Batch, target: Target) -> Result<Deltas> {
    let record = model.forward(batch.inputs.view())?;
    let d_logits = match target {
        Target::Function => record.logits.clone(),
        Target::Loss => {
            if batch.labels.len() != batch.len() || batch.labels.is_empty() {
                return Err(Error::InvalidArgument(
                    "loss-gradient importance needs one label per example".into(),
                ));
            }
            let classes = model.num_classes();
            if let Some(&label) = batch.labels.iter().find(|&&y| y >= classes) {
                return Err(Error::LabelOutOfRange { label, classes });
            }
            let mut p = softmax(&record.logits);
            for (mut row, &y) in p.rows_mut().into_iter().zip(&batch.labels) {
                row[y] -= 1.0;
            }
            p
        }
    };
    let (_, mut deltas) = model.backward_full(&record, &d_logits, None)?;
    deltas.push(d_logits);
    let mut inputs = Vec::with_capacity(model.layers.len());
    inputs.push(record.inputs);
    inputs.extend(record.hidden.into_iter().map(|h| h.post));
    Ok((deltas, inputs))
}

struct Accumulator {
    params: Option<Vec<DenseLayer>>,
    neurons: Option<Vec<Array1<f64>>>,
    examples: usize,
}

fn reduce(v: &Array2<f64>, how: Reduce) -> Array2<f64> {
    match how {
        Reduce::Abs => v.mapv(f64::abs),
        Reduce::Square => v.mapv(|x| x * x),
    }
}

fn run<I>(model: &Mlp, batches: I, target: Target, params: Option<Reduce>, neurons: bool) -> Result<Accumulator>
where
    I: IntoIterator<Item = Batch>,
{
    let mut acc = Accumulator {
        params: params.map(|_| model.layers.iter().map(DenseLayer::zeros_like).collect()),
        neurons: neurons.then(|| model.hidden_pre_widths().iter().map(|&w| Array1::zeros(w)).collect()),
        examples: 0,
    };
    for batch in batches {
        if batch.inputs.nrows() == 0 {
            continue;
        }
        let (deltas, inputs) = per_example_deltas(model, &batch, target)?;
        if let (Some(how), Some(layers)) = (params, acc.params.as_mut()) {
            for ((layer, d), a) in layers.iter_mut().zip(&deltas).zip(&inputs) {
                let d = reduce(d, how);
                layer.weights += &d.t().dot(&reduce(a, how));
                layer.biases += &d.sum_axis(Axis(0));
            }
        }
        if let Some(alpha) = acc.neurons.as_mut() {
            for (a, d) in alpha.iter_mut().zip(&deltas) {
                *a += &d.mapv(f64::abs).sum_axis(Axis(0));
            }
        }
        acc.examples += batch.inputs.nrows();
    }
    if acc.examples == 0 {
        return Err(Error::EmptyData("importance data stream"));
    }
    let scale = 1.0 / acc.examples as f64;
    if let Some(layers) = acc.params.as_mut() {
        for layer in layers {
            layer.weights *= scale;
            layer.biases *= scale;
        }
    }
    if let Some(alpha) = acc.neurons.as_mut() {
        for a in alpha {
            *a *= scale;
        }
    }
    Ok(acc)
}

/// MAS importance: mean absolute gradient of `½‖logits‖²`. Labels are ignored.
pub fn mas_parameter_importance<I>(model: &Mlp, batches: I) -> Result<ParamImportance>
where
    I: IntoIterator<Item = Batch>,
{
    let acc = run(model, batches, Target::Function, Some(Reduce::Abs), false)?;
    Ok(ParamImportance {
        layers: acc.params.expect("requested"),
        method: ImportanceMethod::Mas,
    })
}

/// Empirical diagonal Fisher with the true labels.
pub fn ewc_fisher_importance<I>(model: &Mlp, batches: I) -> Result<ParamImportance>
where
    I: IntoIterator<Item = Batch>,
{
    let acc = run(model, batches, Target::Loss, Some(Reduce::Square), false)?;
    Ok(ParamImportance {
        layers: acc.params.expect("requested"),
        method: ImportanceMethod::Ewc,
    })
}

pub fn neuron_importance<I>(model: &Mlp, batches: I, mode: NeuronImportanceMode) -> Result<NeuronImportance>
where
    I: IntoIterator<Item = Batch>,
{
    let target = match mode {
        NeuronImportanceMode::LossGrad => Target::Loss,
        NeuronImportanceMode::FunctionGrad => Target::Function,
    };
    let acc = run(model, batches, target, None, true)?;
    Ok(NeuronImportance {
        layers: acc.neurons.expect("requested"),
    })
}

/// Ω and the paired α in a single pass over the data.
pub fn estimate_importance<I>(
    model: &Mlp,
    batches: I,
    method: ImportanceMethod,
) -> Result<(ParamImportance, NeuronImportance)>
where
    I: IntoIterator<Item = Batch>,
{
    let (target, how) = match method {
        ImportanceMethod::Mas => (Target::Function, Reduce::Abs),
        ImportanceMethod::Ewc => (Target::Loss, Reduce::Square),
    };
    let acc = run(model, batches, target, Some(how), true)?;
    Ok((
        ParamImportance {
            layers: acc.params.expect("requested"),
            method,
        },
        NeuronImportance {
            layers: acc.neurons.expect("requested"),
        },
    ))
}
