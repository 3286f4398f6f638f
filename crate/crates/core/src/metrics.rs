//! Accuracy, free capacity, activation histograms and report export.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::TaskSplit;
use crate::error::{Error, Result};
use crate::importance::ParamImportance;
use crate::nn::{Batch, Mlp};
use crate::trainer::TaskResult;

pub const REPORT_VERSION: u32 = 1;
pub const DEFAULT_FREE_THRESHOLD: f64 = 1e-2;
pub const HISTOGRAM_BINS: usize = 50;

const EVAL_CHUNK: usize = 1000;

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in row.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

pub fn predict(model: &Mlp, inputs: ArrayView2<f64>) -> Result<Vec<usize>> {
    let logits = model.logits(inputs)?;
    Ok(logits.rows().into_iter().map(|r| argmax(r.iter().copied())).collect())
}

/// Counts correct predictions on one batch.
pub fn count_correct(model: &Mlp, batch: &Batch) -> Result<usize> {
    let predictions = predict(model, batch.inputs.view())?;
    Ok(predictions.iter().zip(&batch.labels).filter(|(p, y)| p == y).count())
}

pub fn evaluate_batch_accuracy(model: &Mlp, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyData("test set"));
    }
    let mut correct = 0;
    for chunk in batch.chunks(EVAL_CHUNK) {
        correct += count_correct(model, &chunk)?;
    }
    Ok(correct as f64 / batch.len() as f64)
}

/// Argmax accuracy on a task's test split.
pub fn evaluate_accuracy(model: &Mlp, test: &TaskSplit) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyData("test set"));
    }
    let mut correct = 0;
    for chunk in test.chunks(EVAL_CHUNK) {
        correct += count_correct(model, &chunk)?;
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Fraction of weights (biases excluded) with Ω below `threshold`, per layer.
pub fn free_capacity_fraction(omega: &ParamImportance, threshold: f64) -> Vec<f64> {
    omega
        .layers
        .iter()
        .map(|layer| {
            let total = layer.weights.len();
            if total == 0 {
                return 0.0;
            }
            let free = layer.weights.iter().filter(|&&w| w < threshold).count();
            free as f64 / total as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationHistogram {
    pub layer: usize,
    /// `counts.len() + 1` bin edges over `[0, max]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Mean activation of every neuron, the quantity being binned.
    pub neuron_means: Vec<f64>,
}

impl ActivationHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Share of neurons in the bin containing zero.
    pub fn zero_bin_mass(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.counts[0] as f64 / n as f64,
        }
    }
}

/// Fixed-width histogram of `values` over `[0, max]`. Negative values land in
/// the first bin; when every value is ≤ 0 the range is `[0, 1]`.
pub fn histogram(values: &[f64], bins: usize) -> (Vec<f64>, Vec<usize>) {
    let bins = bins.max(1);
    let max = values.iter().copied().fold(0.0_f64, f64::max);
    let upper = if max > 0.0 { max } else { 1.0 };
    let width = upper / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { upper } else { i as f64 * width })
        .collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let bin = if v <= 0.0 {
            0
        } else {
            ((v / width) as usize).min(bins - 1)
        };
        counts[bin] += 1;
    }
    (edges, counts)
}

/// Per-neuron mean post-activation of hidden layer `layer` over `batches`, binned.
pub fn activation_histogram<I>(model: &Mlp, batches: I, layer: usize) -> Result<ActivationHistogram>
where
    I: IntoIterator<Item = Batch>,
{
    if layer >= model.hidden_count() {
        return Err(Error::InvalidArgument(format!(
            "hidden layer {layer} does not exist ({} hidden layers)",
            model.hidden_count()
        )));
    }
    let mut sums = Array1::<f64>::zeros(model.hidden_widths()[layer]);
    let mut examples = 0;
    for batch in batches {
        if batch.is_empty() {
            continue;
        }
        let record = model.forward(batch.inputs.view())?;
        sums += &record.hidden[layer].post.sum_axis(Axis(0));
        examples += batch.len();
    }
    if examples == 0 {
        return Err(Error::EmptyData("histogram data"));
    }
    let neuron_means: Vec<f64> = sums.iter().map(|s| s / examples as f64).collect();
    let (edges, counts) = histogram(&neuron_means, HISTOGRAM_BINS);
    Ok(ActivationHistogram {
        layer,
        edges,
        counts,
        neuron_means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub experiment: String,
    pub seed: u64,
    pub task_names: Vec<String>,
    /// Test accuracy of every task after the last one was trained.
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub tasks: Vec<TaskResult>,
    /// Per layer, weights only.
    pub free_capacity: Vec<f64>,
    /// Free capacity per layer after each task.
    pub free_capacity_per_task: Vec<Vec<f64>>,
    pub histogram: Option<ActivationHistogram>,
    /// Accumulated α, one vector per hidden layer.
    pub neuron_importance: Vec<Vec<f64>>,
    /// The effective run configuration.
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn recomputed_mean(&self) -> f64 {
        mean(&self.accuracies)
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Metrics written per task in the CSV layout.
pub const CSV_METRICS: [&str; 3] = ["final_accuracy", "accuracy_after_training", "train_loss"];

/// Sidecar path holding the histogram next to a CSV report.
pub fn histogram_sidecar(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.histogram.csv"))
}

pub fn export_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let text = serde_json::to_string_pretty(report).map_err(|e| Error::Parse {
                path: path.to_owned(),
                message: e.to_string(),
            })?;
            fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
        }
        ReportFormat::Csv => {
            write_task_csv(report, path)?;
            if let Some(h) = &report.histogram {
                write_histogram_csv(h, &histogram_sidecar(path))?;
            }
            Ok(())
        }
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    }
}

fn write_task_csv(report: &EvalReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["version", "task", "metric", "value"])
        .map_err(|e| csv_error(path, e))?;
    let version = report.version.to_string();
    for (i, name) in report.task_names.iter().enumerate() {
        let result = report.tasks.get(i);
        let values = [
            report.accuracies.get(i).copied(),
            result.map(|r| r.accuracy),
            result.map(|r| r.train_loss),
        ];
        for (metric, value) in CSV_METRICS.iter().zip(values) {
            let value = value.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([version.as_str(), name, metric, &value])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_histogram_csv(h: &ActivationHistogram, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["layer", "lower", "upper", "count"])
        .map_err(|e| csv_error(path, e))?;
    for (i, count) in h.counts.iter().enumerate() {
        w.write_record([
            h.layer.to_string(),
            h.edges[i].to_string(),
            h.edges[i + 1].to_string(),
            count.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: EvalReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_owned(),
        message: e.to_string(),
    })?;
    if report.version != REPORT_VERSION {
        return Err(Error::Parse {
            path: path.to_owned(),
            message: format!("unsupported report version {}", report.version),
        });
    }
    Ok(report)
}
