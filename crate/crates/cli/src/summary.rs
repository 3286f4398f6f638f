//! `report` subcommand: a regularizer × hidden-size table plus plot-ready CSVs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use selfless::config::RunConfig;
use selfless::metrics::{load_report, EvalReport};
use selfless::{Error, Result};
use walkdir::WalkDir;

pub struct Found {
    pub path: PathBuf,
    pub report: EvalReport,
    pub config: RunConfig,
}

/// Every `report.json` below `dir`, sorted by path.
pub fn collect(dir: &Path) -> Result<Vec<Found>> {
    if !dir.is_dir() {
        return Err(Error::config(
            "run_dir",
            format!("{} is not a directory", dir.display()),
        ));
    }
    let mut found = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::config("run_dir", e.to_string()))?;
        if entry.file_name() != "report.json" {
            continue;
        }
        let path = entry.path().to_path_buf();
        let corrupt = |message: String| Error::config(path.display().to_string(), message);
        let report = load_report(&path).map_err(|e| corrupt(e.to_string()))?;
        let config = RunConfig::from_json(report.config.clone()).map_err(|e| corrupt(e.to_string()))?;
        found.push(Found { path, report, config });
    }
    if found.is_empty() {
        return Err(Error::config(
            "run_dir",
            format!("no report.json under {}", dir.display()),
        ));
    }
    Ok(found)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn cmd_report(dir: &Path, out: Option<&Path>) -> Result<u8> {
    let found = collect(dir)?;
    let out = out.unwrap_or(dir);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    // rows: regularizer, columns: first hidden width; cells average over runs
    let mut cells: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    let mut rows: Vec<String> = Vec::new();
    let mut cols: Vec<usize> = Vec::new();
    for f in &found {
        let row = f.config.training.regularizer.name().to_string();
        let col = f.config.training.hidden[0];
        if !rows.contains(&row) {
            rows.push(row.clone());
        }
        if !cols.contains(&col) {
            cols.push(col);
        }
        cells.entry((row, col)).or_default().push(f.report.mean_accuracy);
    }
    cols.sort_unstable();

    print!("{:<10}", "");
    for c in &cols {
        print!(" {:>10}", format!("h{c}"));
    }
    println!();
    for r in &rows {
        print!("{r:<10}");
        for c in &cols {
            match cells.get(&(r.clone(), *c)) {
                Some(v) => print!(" {:>9.2}%", 100.0 * v.iter().sum::<f64>() / v.len() as f64),
                None => print!(" {:>10}", "-"),
            }
        }
        println!();
    }

    let summary = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary).map_err(csv_err(&summary))?;
    w.write_record([
        "report",
        "experiment",
        "regularizer",
        "hidden",
        "lambda_ssl",
        "seed",
        "mean_accuracy",
    ])
    .map_err(csv_err(&summary))?;
    for f in &found {
        let t = &f.config.training;
        w.write_record([
            f.path.display().to_string(),
            f.report.experiment.clone(),
            t.regularizer.name().to_string(),
            t.hidden[0].to_string(),
            t.lambda_ssl.to_string(),
            t.seed.to_string(),
            f.report.mean_accuracy.to_string(),
        ])
        .map_err(csv_err(&summary))?;
    }
    w.flush().map_err(|e| Error::io(&summary, e))?;

    let capacity = out.join("free_capacity.csv");
    let mut w = csv::Writer::from_path(&capacity).map_err(csv_err(&capacity))?;
    w.write_record(["report", "regularizer", "lambda_ssl", "task", "layer", "free_capacity"])
        .map_err(csv_err(&capacity))?;
    for f in &found {
        for (task, layers) in f.report.free_capacity_per_task.iter().enumerate() {
            for (layer, v) in layers.iter().enumerate() {
                w.write_record([
                    f.path.display().to_string(),
                    f.config.training.regularizer.name().to_string(),
                    f.config.training.lambda_ssl.to_string(),
                    (task + 1).to_string(),
                    layer.to_string(),
                    v.to_string(),
                ])
                .map_err(csv_err(&capacity))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&capacity, e))?;

    let histograms = out.join("histograms.csv");
    let mut w = csv::Writer::from_path(&histograms).map_err(csv_err(&histograms))?;
    w.write_record([
        "report",
        "regularizer",
        "lambda_ssl",
        "layer",
        "lower",
        "upper",
        "count",
    ])
    .map_err(csv_err(&histograms))?;
    for f in &found {
        let Some(h) = &f.report.histogram else { continue };
        for (i, count) in h.counts.iter().enumerate() {
            w.write_record([
                f.path.display().to_string(),
                f.config.training.regularizer.name().to_string(),
                f.config.training.lambda_ssl.to_string(),
                h.layer.to_string(),
                h.edges[i].to_string(),
                h.edges[i + 1].to_string(),
                count.to_string(),
            ])
            .map_err(csv_err(&histograms))?;
        }
    }
    w.flush().map_err(|e| Error::io(&histograms, e))?;
    println!(
        "{} reports; wrote summary.csv, free_capacity.csv, histograms.csv to {}",
        found.len(),
        out.display()
    );
    Ok(0)
}
