//! Runs the experiment a [`RunConfig`] describes and writes its reports.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{DatasetKind, RunConfig, Schedule};
use crate::data::{
    load_mnist, make_permuted_sequence, make_synthetic_overlap_sequence, Dataset, SoftBoundarySchedule, Task,
};
use crate::error::{Error, Result};
use crate::metrics::{
    activation_histogram, export_report, free_capacity_fraction, ActivationHistogram, EvalReport, ReportFormat,
    REPORT_VERSION,
};
use crate::nn::Batch;
use crate::trainer::{class_members, run_sequence_with, run_soft_boundary_with, TaskResult};

pub const REPORT_STEM: &str = "report";
pub const CONFIG_ECHO: &str = "config.toml";

fn truncate(batch: Batch, limit: Option<usize>) -> Batch {
    match limit {
        Some(n) if n < batch.len() => batch.select(&(0..n).collect::<Vec<_>>()),
        _ => batch,
    }
}

/// MNIST from the configured directory, cut to the configured limits.
pub fn load_mnist_for(config: &RunConfig) -> Result<Dataset> {
    let dataset = load_mnist(&config.dataset.resolved_path())?;
    Ok(Dataset {
        train: truncate(dataset.train, config.dataset.train_limit),
        test: truncate(dataset.test, config.dataset.test_limit),
        num_classes: dataset.num_classes,
    })
}

/// The task sequence of a hard-boundary run.
pub fn build_tasks(config: &RunConfig) -> Result<Vec<Task>> {
    match config.dataset.kind {
        DatasetKind::PermutedMnist => {
            make_permuted_sequence(&load_mnist_for(config)?, config.dataset.n_tasks, config.data_seed())
        }
        DatasetKind::SyntheticOverlap => {
            Ok(make_synthetic_overlap_sequence(&synthetic_spec(config), config.data_seed())?.tasks)
        }
    }
}

fn synthetic_spec(config: &RunConfig) -> crate::data::OverlapSpec {
    let mut spec = config.dataset.synthetic.clone();
    spec.n_tasks = config.dataset.n_tasks;
    spec
}

/// Runs one configuration (sweep lists are ignored; see [`RunConfig::variants`]).
pub fn run_experiment<F>(config: &RunConfig, mut progress: F) -> Result<EvalReport>
where
    F: FnMut(&TaskResult),
{
    config.validate()?;
    match config.dataset.schedule {
        Schedule::Tasks => run_tasks(config, build_tasks(config)?, &mut progress),
        Schedule::SoftBoundary => run_soft(config, &mut progress),
    }
}

fn run_tasks(config: &RunConfig, tasks: Vec<Task>, progress: &mut dyn FnMut(&TaskResult)) -> Result<EvalReport> {
    let layer = config.report.histogram_layer;
    let threshold = config.report.free_threshold;
    let mut histogram = None;
    let mut free_capacity_per_task = Vec::new();
    let first_test = tasks.first().map(|t| t.test.clone());
    let outcome = run_sequence_with(&tasks, &config.training, |state, result| {
        if result.task == 0 {
            let test = first_test.as_ref().expect("non-empty sequence");
            histogram = Some(activation_histogram(&state.model, test.chunks(1000), layer)?);
        }
        free_capacity_per_task.push(free_capacity_fraction(state.omega(), threshold));
        progress(result);
        Ok(())
    })?;
    Ok(EvalReport {
        version: REPORT_VERSION,
        experiment: config.experiment.clone(),
        seed: config.training.seed,
        task_names: tasks.iter().map(|t| t.name.clone()).collect(),
        accuracies: outcome.final_accuracies().to_vec(),
        mean_accuracy: outcome.mean_accuracy(),
        tasks: outcome.results.clone(),
        free_capacity: free_capacity_fraction(outcome.state.omega(), threshold),
        free_capacity_per_task,
        histogram,
        neuron_importance: outcome.state.alpha().layers.iter().map(|a| a.to_vec()).collect(),
        config: config.to_json(),
    })
}

fn run_soft(config: &RunConfig, progress: &mut dyn FnMut(&TaskResult)) -> Result<EvalReport> {
    let sequence = make_synthetic_overlap_sequence(&synthetic_spec(config), config.data_seed())?;
    let dataset = sequence.merged();
    let groups = sequence.class_groups();
    let schedule = SoftBoundarySchedule::new(groups.clone(), config.dataset.steps_per_phase)?;
    let names: Vec<String> = (0..groups.len()).map(|g| format!("group-{}", g + 1)).collect();
    let first_group = dataset.test.select(&class_members(&dataset.test.labels, &groups[0]));
    let threshold = config.report.free_threshold;

    let mut histogram: Option<ActivationHistogram> = None;
    let mut free_capacity_per_task = Vec::new();
    let mut alpha = Vec::new();
    let mut free_capacity = Vec::new();
    let outcome = run_soft_boundary_with(&dataset, &schedule, &config.training, |state, phase| {
        if phase == 0 {
            histogram = Some(activation_histogram(
                &state.model,
                first_group.chunks(1000),
                config.report.histogram_layer,
            )?);
        }
        free_capacity = free_capacity_fraction(state.omega(), threshold);
        free_capacity_per_task.push(free_capacity.clone());
        alpha = state.alpha().layers.iter().map(|a| a.to_vec()).collect();
        Ok(())
    })?;
    let tasks: Vec<TaskResult> = outcome
        .phase_accuracies
        .iter()
        .zip(&outcome.phase_losses)
        .enumerate()
        .map(|(p, (acc, &loss))| TaskResult {
            task: p,
            name: names[p].clone(),
            train_loss: loss,
            accuracy: acc[p],
            seen_accuracies: acc.clone(),
        })
        .collect();
    for t in &tasks {
        progress(t);
    }
    Ok(EvalReport {
        version: REPORT_VERSION,
        experiment: config.experiment.clone(),
        seed: config.training.seed,
        task_names: names,
        accuracies: outcome.final_accuracies.clone(),
        mean_accuracy: outcome.mean_accuracy,
        tasks,
        free_capacity,
        free_capacity_per_task,
        histogram,
        neuron_importance: alpha,
        config: config.to_json(),
    })
}

/// Writes the report in every configured format plus the effective config.
pub fn write_run(report: &EvalReport, config: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for &format in &config.report.formats {
        let ext = match format {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        };
        let path = dir.join(format!("{REPORT_STEM}.{ext}"));
        export_report(report, &path, format)?;
        written.push(path);
    }
    let echo = dir.join(CONFIG_ECHO);
    fs::write(&echo, config.to_toml()).map_err(|e| Error::io(&echo, e))?;
    written.push(echo);
    Ok(written)
}
