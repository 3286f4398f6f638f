//! Task-sequence training with the consolidated objective
//!
//! `CE + λ_Ω Σ_k Ω_k (θ_k − θ*_k)² + λ_SSL Σ_l R(H_l)`
//!
//! where `θ*` is the parameter snapshot taken after the previous task and `Ω`
//! the importance accumulated over all previous tasks.

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::soft_boundary::class_pools;
use crate::data::{seeded_rng, Dataset, SoftBoundarySchedule, Task, TaskSplit};
use crate::error::{Error, Result};
use crate::importance::{estimate_importance, Accumulate, ImportanceMethod, NeuronImportance, ParamImportance};
use crate::metrics::{evaluate_accuracy, evaluate_batch_accuracy, mean};
use crate::nn::{softmax_cross_entropy, Activation, Batch, DenseLayer, Gradients, Mlp};
use crate::regularizers::{
    activation_penalty, inhibition_penalty, parameter_penalty, ActivationPenaltyKind, LocalityKernel, ParamPenaltyKind,
    RegularizerKind,
};

const INIT_STREAM: u64 = 1;
const HEAD_STREAM: u64 = 1 << 16;
const SHUFFLE_STREAM: u64 = 2 << 16;
const SAMPLE_STREAM: u64 = 3 << 16;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    /// One output layer for every task.
    #[default]
    Shared,
    /// A fresh output layer per task, swapped in for training and evaluation.
    PerTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceConfig {
    pub lambda_ssl: f64,
    pub lambda_omega: f64,
    pub regularizer: RegularizerKind,
    /// Locality kernel width as a fraction of the layer width.
    pub sigma_fraction: f64,
    pub importance: ImportanceMethod,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub heads: HeadMode,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            lambda_ssl: 0.0,
            lambda_omega: 0.1,
            regularizer: RegularizerKind::NoReg,
            sigma_fraction: 1.0 / 6.0,
            importance: ImportanceMethod::Mas,
            epochs: 10,
            learning_rate: 1e-2,
            batch_size: 32,
            seed: 0,
            hidden: vec![128, 128],
            activation: Activation::Relu,
            heads: HeadMode::Shared,
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [("lambda_ssl", self.lambda_ssl), ("lambda_omega", self.lambda_omega)] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::config(field, format!("must be a finite value ≥ 0, got {value}")));
            }
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate", "must be finite and > 0"));
        }
        if !(self.sigma_fraction > 0.0) || !self.sigma_fraction.is_finite() {
            return Err(Error::config("sigma_fraction", "must be finite and > 0"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be ≥ 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be ≥ 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config(
                "hidden",
                "need at least one hidden layer, all widths ≥ 1",
            ));
        }
        for &w in &self.hidden {
            self.activation
                .check_width(w)
                .map_err(|e| Error::config("activation", e.to_string()))?;
        }
        if self.regularizer.is_discounted() && matches!(self.activation, Activation::Maxout { .. }) {
            return Err(Error::config(
                "regularizer",
                "discounted inhibition needs one importance per penalised unit; maxout merges units",
            ));
        }
        Ok(())
    }

    pub fn sigma(&self, width: usize) -> f64 {
        self.sigma_fraction * width as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: usize,
    pub name: String,
    /// Mean objective over the last epoch.
    pub train_loss: f64,
    /// Test accuracy on this task right after training it.
    pub accuracy: f64,
    /// Test accuracy of every task seen so far, in order.
    pub seen_accuracies: Vec<f64>,
}

/// The objective on one batch, its parts and its gradient.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: f64,
    pub cross_entropy: f64,
    pub anchor: f64,
    /// `Σ_l R(H_l)` before scaling by `λ_SSL`.
    pub regularizer: f64,
    pub grads: Gradients,
}

#[derive(Debug, Clone)]
pub struct SequenceState {
    pub model: Mlp,
    config: SequenceConfig,
    anchor: Vec<DenseLayer>,
    omega: ParamImportance,
    alpha: NeuronImportance,
    task_index: usize,
    /// Output layer of every completed task (per-task heads only).
    heads: Vec<DenseLayer>,
    seen: Vec<(String, TaskSplit)>,
    kernels: Vec<LocalityKernel>,
    inhibition: Vec<Array2<f64>>,
}

impl SequenceState {
    pub fn new(input_dim: usize, num_classes: usize, config: &SequenceConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(config.seed, INIT_STREAM);
        let model = Mlp::init(input_dim, &config.hidden, num_classes, config.activation, &mut rng)?;
        let kernels = model
            .hidden_widths()
            .into_iter()
            .map(|n| {
                if config.regularizer.is_local() {
                    LocalityKernel::gaussian(n, config.sigma(n))
                } else {
                    Ok(LocalityKernel::uniform(n))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let mut state = SequenceState {
            anchor: model.layers.clone(),
            omega: ParamImportance::zeros_like(&model, config.importance),
            alpha: NeuronImportance::zeros_like(&model),
            model,
            config: config.clone(),
            task_index: 0,
            heads: Vec::new(),
            seen: Vec::new(),
            kernels,
            inhibition: Vec::new(),
        };
        state.refresh_inhibition()?;
        Ok(state)
    }

    pub fn config(&self) -> &SequenceConfig {
        &self.config
    }

    pub fn anchor(&self) -> &[DenseLayer] {
        &self.anchor
    }

    pub fn omega(&self) -> &ParamImportance {
        &self.omega
    }

    pub fn alpha(&self) -> &NeuronImportance {
        &self.alpha
    }

    /// Number of completed tasks.
    pub fn task_index(&self) -> usize {
        self.task_index
    }

    pub fn heads(&self) -> &[DenseLayer] {
        &self.heads
    }

    /// Replaces the accumulated importances and the anchor.
    pub fn set_consolidation(
        &mut self,
        anchor: Vec<DenseLayer>,
        omega: ParamImportance,
        alpha: NeuronImportance,
    ) -> Result<()> {
        crate::nn::check_same_shapes("anchor", &self.model.layers, &anchor)?;
        crate::nn::check_same_shapes("omega", &self.model.layers, &omega.layers)?;
        if !omega.is_valid() || !alpha.is_valid() {
            return Err(Error::InvalidArgument("importances must be finite and ≥ 0".into()));
        }
        let widths: Vec<_> = alpha.layers.iter().map(|a| a.len()).collect();
        if widths != self.model.hidden_pre_widths() {
            return Err(Error::shape("alpha", self.model.hidden_pre_widths(), widths));
        }
        self.anchor = anchor;
        self.omega = omega;
        self.alpha = alpha;
        self.refresh_inhibition()
    }

    fn refresh_inhibition(&mut self) -> Result<()> {
        self.inhibition = if self.config.regularizer.is_discounted() {
            self.kernels
                .iter()
                .zip(&self.alpha.layers)
                .map(|(k, a)| k.discounted(a.as_slice().expect("contiguous")))
                .collect::<Result<_>>()?
        } else {
            self.kernels.iter().map(|k| k.weights().clone()).collect()
        };
        Ok(())
    }

    fn anchored_layers(&self) -> usize {
        match self.config.heads {
            HeadMode::Shared => self.model.layers.len(),
            HeadMode::PerTask => self.model.layers.len() - 1,
        }
    }

    /// Loss and exact gradient of the full objective on `batch`.
    pub fn compose_objective(&self, batch: &Batch) -> Result<Objective> {
        let cfg = &self.config;
        let record = self.model.forward(batch.inputs.view())?;
        let (cross_entropy, d_logits) = softmax_cross_entropy(&record.logits, &batch.labels)?;

        let mut regularizer = 0.0;
        let mut injected = None;
        let mut param_grads = None;
        if cfg.lambda_ssl > 0.0 && cfg.regularizer != RegularizerKind::NoReg {
            if cfg.regularizer.acts_on_activations() {
                let mut grads = Vec::with_capacity(record.hidden.len());
                for (l, h) in record.hidden.iter().enumerate() {
                    let penalty = match cfg.regularizer {
                        RegularizerKind::L1Rep => activation_penalty(ActivationPenaltyKind::L1Rep, &h.post),
                        RegularizerKind::DeCov => activation_penalty(ActivationPenaltyKind::DeCov, &h.post),
                        _ => inhibition_penalty(&h.post, &self.inhibition[l])?,
                    };
                    regularizer += penalty.value;
                    grads.push(penalty.activation_grad().expect("activation penalty") * cfg.lambda_ssl);
                }
                injected = Some(grads);
            } else {
                let kind = match cfg.regularizer {
                    RegularizerKind::L1Param => ParamPenaltyKind::L1Param,
                    RegularizerKind::L2Wd => ParamPenaltyKind::L2Wd,
                    _ => ParamPenaltyKind::OrthReg,
                };
                let penalty = parameter_penalty(kind, &self.model);
                regularizer = penalty.value;
                param_grads = penalty.param_grads().cloned();
            }
        }

        let mut grads = self.model.backward(&record, &d_logits, injected.as_deref())?;
        if let Some(g) = &param_grads {
            grads.add_scaled(cfg.lambda_ssl, g)?;
        }

        let mut anchor = 0.0;
        if cfg.lambda_omega > 0.0 {
            let n = self.anchored_layers();
            for (((layer, star), omega), g) in self.model.layers[..n]
                .iter()
                .zip(&self.anchor)
                .zip(&self.omega.layers)
                .zip(&mut grads.layers)
            {
                let dw = &layer.weights - &star.weights;
                let db = &layer.biases - &star.biases;
                anchor += (&omega.weights * &dw * &dw).sum() + (&omega.biases * &db * &db).sum();
                g.weights.scaled_add(2.0 * cfg.lambda_omega, &(&omega.weights * &dw));
                g.biases.scaled_add(2.0 * cfg.lambda_omega, &(&omega.biases * &db));
            }
            anchor *= cfg.lambda_omega;
        }

        Ok(Objective {
            total: cross_entropy + anchor + cfg.lambda_ssl * regularizer,
            cross_entropy,
            anchor,
            regularizer,
            grads,
        })
    }

    fn diverged(&self) -> Error {
        Error::Diverged {
            task: self.task_index + 1,
            lambda_ssl: self.config.lambda_ssl,
            lambda_omega: self.config.lambda_omega,
        }
    }

    /// One SGD step; returns the objective before the step.
    pub fn step(&mut self, batch: &Batch) -> Result<f64> {
        let objective = match self.compose_objective(batch) {
            Err(Error::NonFinite(_)) => return Err(self.diverged()),
            other => other?,
        };
        if !objective.total.is_finite() {
            return Err(self.diverged());
        }
        match self.model.sgd_step(&objective.grads, self.config.learning_rate) {
            Err(Error::NonFinite(_)) => Err(self.diverged()),
            other => other.map(|_| objective.total),
        }
    }

    fn install_head(&mut self, task: &Task) -> Result<()> {
        if self.config.heads == HeadMode::Shared {
            if task.num_classes > self.model.num_classes() {
                return Err(Error::LabelOutOfRange {
                    label: task.num_classes - 1,
                    classes: self.model.num_classes(),
                });
            }
            return Ok(());
        }
        if self.task_index > 0 || self.model.num_classes() != task.num_classes {
            let mut rng = seeded_rng(self.config.seed, HEAD_STREAM + self.task_index as u64);
            let inputs = self.model.layers.last().expect("output layer").inputs();
            *self.model.layers.last_mut().expect("output layer") = DenseLayer::init(inputs, task.num_classes, &mut rng);
        }
        Ok(())
    }

    /// Estimates importance on `data`, accumulates it and snapshots the anchor.
    pub fn consolidate<I>(&mut self, data: I) -> Result<()>
    where
        I: IntoIterator<Item = Batch>,
    {
        let (omega, alpha) = estimate_importance(&self.model, data, self.config.importance)?;
        let mut omega = omega;
        if self.config.heads == HeadMode::PerTask {
            // heads are never anchored; keep their Ω at zero in the current head's shape
            for map in [&mut omega, &mut self.omega] {
                let last = map.layers.last_mut().expect("output layer");
                *last = self.model.layers.last().expect("output layer").zeros_like();
            }
        }
        self.omega = self.omega.accumulate(&omega)?;
        self.alpha = self.alpha.accumulate(&alpha)?;
        self.anchor = self.model.layers.clone();
        self.refresh_inhibition()
    }

    /// Test accuracy of every task seen so far.
    pub fn evaluate_seen(&self) -> Result<Vec<f64>> {
        let mut probe = self.model.clone();
        self.seen
            .iter()
            .enumerate()
            .map(|(t, (_, test))| {
                if self.config.heads == HeadMode::PerTask {
                    *probe.layers.last_mut().expect("output layer") = self.heads[t].clone();
                }
                evaluate_accuracy(&probe, test)
            })
            .collect()
    }

    /// Trains the next task of the sequence, consolidates, and evaluates all seen tasks.
    pub fn train_task(&mut self, task: &Task) -> Result<TaskResult> {
        if task.input_dim() != self.model.input_dim() {
            return Err(Error::shape(
                "task input width",
                self.model.input_dim(),
                task.input_dim(),
            ));
        }
        if task.train.is_empty() {
            return Err(Error::EmptyData("task training set"));
        }
        self.install_head(task)?;
        let mut rng = seeded_rng(self.config.seed, SHUFFLE_STREAM + self.task_index as u64);
        let mut order: Vec<usize> = (0..task.train.len()).collect();
        let mut train_loss = 0.0;
        for _ in 0..self.config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(self.config.batch_size) {
                total += self.step(&task.train.gather(chunk))?;
                batches += 1;
            }
            train_loss = total / batches as f64;
        }

        self.consolidate(task.train.chunks(self.config.batch_size))?;
        if self.config.heads == HeadMode::PerTask {
            self.heads.push(self.model.layers.last().expect("output layer").clone());
        }
        self.seen.push((task.name.clone(), task.test.clone()));
        let seen_accuracies = self.evaluate_seen()?;
        let result = TaskResult {
            task: self.task_index,
            name: task.name.clone(),
            train_loss,
            accuracy: *seen_accuracies.last().expect("at least one task"),
            seen_accuracies,
        };
        self.task_index += 1;
        Ok(result)
    }
}

#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    pub results: Vec<TaskResult>,
    pub state: SequenceState,
}

impl SequenceOutcome {
    /// Accuracy of every task after the last task was trained.
    pub fn final_accuracies(&self) -> &[f64] {
        self.results.last().map(|r| r.seen_accuracies.as_slice()).unwrap_or(&[])
    }

    pub fn mean_accuracy(&self) -> f64 {
        mean(self.final_accuracies())
    }
}

pub fn run_sequence(tasks: &[Task], config: &SequenceConfig) -> Result<SequenceOutcome> {
    run_sequence_with(tasks, config, |_, _| Ok(()))
}

/// Like [`run_sequence`], calling `on_task` after every task.
pub fn run_sequence_with<F>(tasks: &[Task], config: &SequenceConfig, mut on_task: F) -> Result<SequenceOutcome>
where
    F: FnMut(&SequenceState, &TaskResult) -> Result<()>,
{
    let first = tasks.first().ok_or(Error::EmptyData("task sequence"))?;
    let classes = match config.heads {
        HeadMode::Shared => tasks.iter().map(|t| t.num_classes).max().unwrap_or(0),
        HeadMode::PerTask => first.num_classes,
    };
    let mut state = SequenceState::new(first.input_dim(), classes, config)?;
    let mut results = Vec::with_capacity(tasks.len());
    for task in tasks {
        let result = state.train_task(task)?;
        on_task(&state, &result)?;
        results.push(result);
    }
    Ok(SequenceOutcome { results, state })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftBoundaryOutcome {
    /// Per phase, the test accuracy of every class group after that phase.
    pub phase_accuracies: Vec<Vec<f64>>,
    /// Mean objective over each phase's steps.
    pub phase_losses: Vec<f64>,
    /// Per group accuracy at the end of training.
    pub final_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

/// Trains on a gradually shifting class distribution with one shared head.
///
/// Importance is estimated and the anchor refreshed at the end of every phase,
/// on the training examples of the phase's dominant group.
pub fn run_soft_boundary(
    dataset: &Dataset,
    schedule: &SoftBoundarySchedule,
    config: &SequenceConfig,
) -> Result<SoftBoundaryOutcome> {
    run_soft_boundary_with(dataset, schedule, config, |_, _| Ok(()))
}

/// Like [`run_soft_boundary`], calling `on_phase` with the state and phase index after every phase.
pub fn run_soft_boundary_with<F>(
    dataset: &Dataset,
    schedule: &SoftBoundarySchedule,
    config: &SequenceConfig,
    mut on_phase: F,
) -> Result<SoftBoundaryOutcome>
where
    F: FnMut(&SequenceState, usize) -> Result<()>,
{
    if config.heads != HeadMode::Shared {
        return Err(Error::config("heads", "soft-boundary training uses one shared head"));
    }
    if schedule.num_classes() != dataset.num_classes {
        return Err(Error::shape(
            "schedule classes",
            dataset.num_classes,
            schedule.num_classes(),
        ));
    }
    let mut state = SequenceState::new(dataset.input_dim(), dataset.num_classes, config)?;
    let pools = class_pools(&dataset.train.labels, dataset.num_classes);
    let group_tests: Vec<Batch> = schedule
        .groups
        .iter()
        .map(|g| dataset.test.select(&class_members(&dataset.test.labels, g)))
        .collect();
    let mut rng = seeded_rng(config.seed, SAMPLE_STREAM);
    let mut phase_accuracies = Vec::with_capacity(schedule.phases());
    let mut phase_losses = Vec::with_capacity(schedule.phases());
    for (phase, group) in schedule.groups.iter().enumerate() {
        let mut total = 0.0;
        for _ in 0..schedule.steps_per_phase {
            let indices = schedule.sample_indices(phase, &pools, config.batch_size, &mut rng)?;
            total += state.step(&dataset.train.select(&indices))?;
        }
        phase_losses.push(total / schedule.steps_per_phase as f64);
        let members = dataset.train.select(&class_members(&dataset.train.labels, group));
        state.consolidate(members.chunks(config.batch_size))?;
        state.task_index += 1;
        phase_accuracies.push(
            group_tests
                .iter()
                .map(|t| evaluate_batch_accuracy(&state.model, t))
                .collect::<Result<Vec<_>>>()?,
        );
        on_phase(&state, phase)?;
    }
    let final_accuracies = phase_accuracies.last().cloned().unwrap_or_default();
    Ok(SoftBoundaryOutcome {
        mean_accuracy: mean(&final_accuracies),
        phase_accuracies,
        phase_losses,
        final_accuracies,
    })
}

/// Indices of the examples whose label is in `group`.
pub fn class_members(labels: &[usize], group: &[usize]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, y)| group.contains(y))
        .map(|(i, _)| i)
        .collect()
}
