use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use autorank::fedsim::best_of;
use autorank::wire::{self, sig6, SMOOTHING_WINDOW};

use crate::output::StagedDir;
use crate::CliError;

struct RunSummary {
    name: String,
    rounds: Vec<usize>,
    smoothed: Vec<f64>,
    best_accuracy: f64,
    best_round: usize,
    best_smoothed: f64,
    final_accuracy: f64,
    total_params: usize,
}

fn missing(path: &Path, what: &str) -> CliError {
    CliError::Data(format!("{}: {what}", path.display()))
}

fn summarize(dir: &Path) -> Result<RunSummary, CliError> {
    let curve_path = dir.join("learning_curve.csv");
    let curve = fs::read(&curve_path).map_err(|e| missing(&curve_path, &e.to_string()))?;
    let points = wire::read_learning_curve(curve.as_slice())
        .map_err(|e| missing(&curve_path, &e.to_string()))?;
    if points.is_empty() {
        return Err(missing(&curve_path, "no rounds recorded"));
    }
    let manifest_path = dir.join("manifest.txt");
    let manifest =
        fs::read_to_string(&manifest_path).map_err(|e| missing(&manifest_path, &e.to_string()))?;
    let total_params = manifest
        .lines()
        .find_map(|l| l.strip_prefix("total_trainable_params = "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| missing(&manifest_path, "no total_trainable_params entry"))?;

    let accuracies: Vec<f64> = points.iter().map(|p| p.test_accuracy).collect();
    let smoothed = wire::smooth(&accuracies, SMOOTHING_WINDOW);
    let (best_accuracy, best_at) = best_of(&accuracies);
    Ok(RunSummary {
        name: dir.display().to_string(),
        rounds: points.iter().map(|p| p.round).collect(),
        best_accuracy,
        best_round: points[best_at - 1].round,
        best_smoothed: best_of(&smoothed).0,
        final_accuracy: *accuracies.last().expect("non-empty"),
        smoothed,
        total_params,
    })
}

pub fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let summaries = runs
        .iter()
        .map(|d| summarize(d))
        .collect::<Result<Vec<_>, _>>()?;

    let mut csv = String::from("run,rounds,best_accuracy,best_round,best_smoothed_accuracy,final_accuracy,total_trainable_params\n");
    let mut curves = String::from("run,round,smoothed_test_accuracy\n");
    let width = summaries
        .iter()
        .map(|s| s.name.len())
        .max()
        .unwrap_or(3)
        .max(3);
    let mut table = format!(
        "{:<width$}  {:>6}  {:>8}  {:>10}  {:>12}  {:>8}  {:>12}\n",
        "run", "rounds", "best_acc", "best_round", "best_smooth", "final", "params"
    );
    for s in &summaries {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            s.name,
            s.rounds.len(),
            sig6(s.best_accuracy),
            s.best_round,
            sig6(s.best_smoothed),
            sig6(s.final_accuracy),
            s.total_params
        );
        for (r, v) in s.rounds.iter().zip(&s.smoothed) {
            let _ = writeln!(curves, "{},{r},{}", s.name, sig6(*v));
        }
        let _ = writeln!(
            table,
            "{:<width$}  {:>6}  {:>8.4}  {:>10}  {:>12.4}  {:>8.4}  {:>12}",
            s.name,
            s.rounds.len(),
            s.best_accuracy,
            s.best_round,
            s.best_smoothed,
            s.final_accuracy,
            s.total_params
        );
    }

    let staged =
        StagedDir::new(out).map_err(|e| CliError::Data(format!("creating output: {e}")))?;
    for (name, body) in [
        ("report.csv", &csv),
        ("smoothed_curves.csv", &curves),
        ("report.txt", &table),
    ] {
        fs::write(staged.path().join(name), body)
            .map_err(|e| CliError::Data(format!("{name}: {e}")))?;
    }
    staged
        .commit()
        .map_err(|e| CliError::Data(format!("committing {}: {e}", out.display())))?;
    print!("{table}");
    Ok(())
}
