//! Finite-difference verification of every penalty and of the composed objective.
//!
//! Each check draws a random small instance, compares the analytic gradient
//! with central differences and records the largest relative error.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::seeded_rng;
use crate::error::Result;
use crate::importance::{ImportanceMethod, NeuronImportance, ParamImportance};
use crate::nn::{finite_difference_gradient, max_relative_error, Activation, Batch, Mlp};
use crate::regularizers::{
    activation_penalty, parameter_penalty, r_slni, r_slnid, r_sni, ActivationPenaltyKind, LocalityKernel,
    ParamPenaltyKind, RegPenalty, RegularizerKind,
};
use crate::trainer::{SequenceConfig, SequenceState};

pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so exact zeros compare absolutely.
pub const ERROR_FLOOR: f64 = 1e-6;
pub const OBJECTIVE: &str = "objective";

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub instances_per_kind: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Scales the analytic gradient of this kind by 1.01 (negative control).
    pub inject_fault: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            instances_per_kind: 3,
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindCheck {
    pub kind: String,
    pub instances: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub checks: Vec<KindCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn instances(&self) -> usize {
        self.checks.iter().map(|c| c.instances).sum()
    }

    pub fn failures(&self) -> impl Iterator<Item = &KindCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Every name the suite checks, in order.
pub fn kinds() -> Vec<&'static str> {
    RegularizerKind::ALL
        .iter()
        .filter(|k| **k != RegularizerKind::NoReg)
        .map(RegularizerKind::name)
        .chain([OBJECTIVE])
        .collect()
}

pub fn run_gradcheck(options: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut checks = Vec::new();
    for (index, name) in kinds().into_iter().enumerate() {
        let mut rng = seeded_rng(options.seed, index as u64);
        let fault = if options.inject_fault.as_deref() == Some(name) {
            1.01
        } else {
            1.0
        };
        let mut worst: f64 = 0.0;
        for _ in 0..options.instances_per_kind {
            let error = match RegularizerKind::parse(name) {
                Some(kind) if kind.acts_on_activations() => check_activation_penalty(kind, &mut rng, options, fault)?,
                Some(kind) => check_parameter_penalty(kind, &mut rng, options, fault)?,
                None => check_objective(&mut rng, options, fault)?,
            };
            worst = worst.max(error);
        }
        checks.push(KindCheck {
            kind: name.to_string(),
            instances: options.instances_per_kind,
            max_relative_error: worst,
            passed: worst < options.tolerance,
        });
    }
    Ok(GradcheckReport {
        tolerance: options.tolerance,
        checks,
    })
}

/// Non-negative activations with some exact zeros, as after a ReLU.
fn random_activations(rng: &mut ChaCha8Rng) -> Array2<f64> {
    let m = rng.random_range(3..8);
    let n = rng.random_range(3..10);
    Array2::from_shape_simple_fn((m, n), || {
        if rng.random_bool(0.25) {
            0.0
        } else {
            rng.random_range(0.05..2.0)
        }
    })
}

fn activation_value(kind: RegularizerKind, h: &Array2<f64>, alpha: &[f64]) -> Result<RegPenalty> {
    let n = h.ncols();
    let gaussian = || LocalityKernel::gaussian(n, n as f64 / 6.0);
    Ok(match kind {
        RegularizerKind::Sni => r_sni(h),
        RegularizerKind::Snid => r_slnid(h, &LocalityKernel::uniform(n), alpha)?,
        RegularizerKind::Slni => r_slni(h, &gaussian()?)?,
        RegularizerKind::Slnid => r_slnid(h, &gaussian()?, alpha)?,
        RegularizerKind::L1Rep => activation_penalty(ActivationPenaltyKind::L1Rep, h),
        _ => activation_penalty(ActivationPenaltyKind::DeCov, h),
    })
}

fn check_activation_penalty(
    kind: RegularizerKind,
    rng: &mut ChaCha8Rng,
    options: &GradcheckOptions,
    fault: f64,
) -> Result<f64> {
    let h = random_activations(rng);
    let alpha: Vec<f64> = (0..h.ncols()).map(|_| rng.random_range(0.0..1.5)).collect();
    let analytic = activation_value(kind, &h, &alpha)?
        .activation_grad()
        .expect("activation penalty")
        * fault;
    let mut numeric = Array2::zeros(h.dim());
    let mut probe = h.clone();
    for idx in ndarray::indices(h.dim()) {
        let original = probe[idx];
        probe[idx] = original + options.step;
        let plus = activation_value(kind, &probe, &alpha)?.value;
        probe[idx] = original - options.step;
        let minus = activation_value(kind, &probe, &alpha)?.value;
        probe[idx] = original;
        numeric[idx] = (plus - minus) / (2.0 * options.step);
    }
    Ok(max_relative_error(analytic.iter(), numeric.iter(), ERROR_FLOOR))
}

fn random_model(rng: &mut ChaCha8Rng, activation: Activation) -> Result<Mlp> {
    let window = activation.window();
    let input = rng.random_range(2..6);
    let hidden: Vec<usize> = (0..rng.random_range(1..3))
        .map(|_| window * rng.random_range(2..5))
        .collect();
    let classes = rng.random_range(2..5);
    Mlp::init(input, &hidden, classes, activation, rng)
}

fn check_parameter_penalty(
    kind: RegularizerKind,
    rng: &mut ChaCha8Rng,
    options: &GradcheckOptions,
    fault: f64,
) -> Result<f64> {
    let kind = match kind {
        RegularizerKind::L1Param => ParamPenaltyKind::L1Param,
        RegularizerKind::L2Wd => ParamPenaltyKind::L2Wd,
        _ => ParamPenaltyKind::OrthReg,
    };
    let model = random_model(rng, Activation::Relu)?;
    let penalty = parameter_penalty(kind, &model);
    let numeric = finite_difference_gradient(|m| parameter_penalty(kind, m).value, &model, options.step)?;
    let analytic = penalty
        .param_grads()
        .expect("parameter penalty")
        .values()
        .map(|g| g * fault);
    let analytic: Vec<f64> = analytic.collect();
    Ok(max_relative_error(&analytic, numeric.values(), ERROR_FLOOR))
}

/// A state with a non-trivial anchor, Ω and α, for a random regularizer and activation.
fn random_state(rng: &mut ChaCha8Rng) -> Result<(SequenceState, Batch)> {
    let kinds = RegularizerKind::ALL;
    let regularizer = kinds[rng.random_range(1..kinds.len())];
    let activation = match rng.random_range(0..3) {
        0 => Activation::Relu,
        1 => Activation::Lwta { window: 2 },
        _ if regularizer.is_discounted() => Activation::Relu,
        _ => Activation::Maxout { window: 2 },
    };
    let shape = random_model(rng, activation)?;
    let hidden: Vec<usize> = shape.hidden_pre_widths();
    let config = SequenceConfig {
        regularizer,
        lambda_ssl: rng.random_range(0.1..1.0),
        lambda_omega: rng.random_range(0.1..5.0),
        hidden: hidden.clone(),
        activation,
        seed: rng.random(),
        ..SequenceConfig::default()
    };
    let mut state = SequenceState::new(shape.input_dim(), shape.num_classes(), &config)?;
    let mut omega = ParamImportance::zeros_like(&state.model, ImportanceMethod::Mas);
    omega
        .layers
        .iter_mut()
        .flat_map(|l| l.values_mut())
        .for_each(|v| *v = rng.random_range(0.0..2.0));
    let alpha = NeuronImportance {
        layers: hidden
            .iter()
            .map(|&w| Array1::from_shape_simple_fn(w, || rng.random_range(0.0..1.5)))
            .collect(),
    };
    state.set_consolidation(shape.layers.clone(), omega, alpha)?;

    let m = rng.random_range(3..7);
    let inputs = Array2::from_shape_simple_fn((m, shape.input_dim()), || rng.random_range(-1.5..1.5));
    let labels = (0..m).map(|_| rng.random_range(0..shape.num_classes())).collect();
    let batch = Batch::new(inputs, labels, shape.num_classes())?;
    Ok((state, batch))
}

fn check_objective(rng: &mut ChaCha8Rng, options: &GradcheckOptions, fault: f64) -> Result<f64> {
    let (state, batch) = random_state(rng)?;
    let analytic: Vec<f64> = state
        .compose_objective(&batch)?
        .grads
        .values()
        .map(|g| g * fault)
        .collect();
    let mut probe = state.clone();
    let numeric = finite_difference_gradient(
        |m| {
            probe.model = m.clone();
            probe.compose_objective(&batch).map(|o| o.total).unwrap_or(f64::NAN)
        },
        &state.model,
        options.step,
    )?;
    Ok(max_relative_error(&analytic, numeric.values(), ERROR_FLOOR))
}
