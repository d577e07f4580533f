use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{ExperimentError, ExperimentOutcome};
use crate::lora::snapshot;
use crate::seed::{self, Purpose};
use crate::wire::{self, sig6, CurvePoint};

/// Files written by [`write_artifacts`], relative to the output directory.
pub const ARTIFACT_FILES: [&str; 8] = [
    "learning_curve.csv",
    "learning_curve_smoothed.csv",
    "complexity.csv",
    "ranks.csv",
    "similarity.csv",
    "client_losses.csv",
    "global_lora.bin",
    "manifest.txt",
];

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, ExperimentError> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|source| ExperimentError::Io {
            context: format!("creating {}", path.display()),
            source,
        })
}

fn io_err(name: &str) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        context: format!("writing {name}"),
        source,
    }
}

/// Writes every artifact of `outcome` into `dir`. `extra_manifest` lines
/// (tool version, input digests) are appended to the manifest verbatim.
pub fn write_artifacts(
    outcome: &ExperimentOutcome,
    dir: &Path,
    extra_manifest: &[(String, String)],
) -> Result<(), ExperimentError> {
    let points: Vec<CurvePoint> = outcome
        .records
        .iter()
        .map(|r| CurvePoint {
            round: r.round,
            test_accuracy: r.test_accuracy,
            test_loss: r.test_loss,
        })
        .collect();
    let rounds: Vec<usize> = points.iter().map(|p| p.round).collect();

    wire::write_learning_curve(create(dir, "learning_curve.csv")?, &points)?;
    wire::write_smoothed_curve(
        create(dir, "learning_curve_smoothed.csv")?,
        &rounds,
        &outcome.smoothed_accuracies(),
    )?;
    wire::write_complexity_csv(create(dir, "complexity.csv")?, &outcome.reports)?;
    wire::write_ranks_csv(
        create(dir, "ranks.csv")?,
        &outcome.reports,
        &outcome.assignments,
    )?;
    let ids: Vec<String> = outcome
        .assignments
        .iter()
        .map(|a| a.participant_id.clone())
        .collect();
    wire::write_similarity_csv(create(dir, "similarity.csv")?, &ids, &outcome.similarity)?;

    let mut losses = create(dir, "client_losses.csv")?;
    let name = "client_losses.csv";
    writeln!(losses, "round,participant_id,train_loss").map_err(io_err(name))?;
    for r in &outcome.records {
        for (id, l) in ids.iter().zip(&r.client_losses) {
            writeln!(losses, "{},{id},{}", r.round, sig6(*l)).map_err(io_err(name))?;
        }
    }
    losses.flush().map_err(io_err(name))?;

    let mut bin = create(dir, "global_lora.bin")?;
    snapshot::write_state(&mut bin, &outcome.final_state).map_err(io_err("global_lora.bin"))?;
    bin.flush().map_err(io_err("global_lora.bin"))?;

    let mut manifest = create(dir, "manifest.txt")?;
    manifest
        .write_all(manifest_text(outcome, extra_manifest).as_bytes())
        .and_then(|()| manifest.flush())
        .map_err(io_err("manifest.txt"))?;
    Ok(())
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Resolved config, derived seeds, layer layout and outputs. Contains
/// nothing that depends on the machine, the clock or the thread count.
pub fn manifest_text(outcome: &ExperimentOutcome, extra: &[(String, String)]) -> String {
    let mut out = String::from("[config]\n");
    for (k, v) in outcome.config.to_pairs() {
        out += &format!("{k} = {v}\n");
    }
    let s = outcome.config.seed;
    out += "\n[seeds]\n";
    out += &format!("global = {s}\n");
    for (name, purpose) in [
        ("base_init", Purpose::BaseInit),
        ("profile_init", Purpose::ProfileInit),
        ("lora_init", Purpose::LoraInit),
    ] {
        out += &format!("{name} = {}\n", seed::derive(s, purpose, &[]));
    }
    out += "\n[layout]\n";
    out += &format!("layer_dims = {}\n", join(&outcome.dims));
    out += &format!("global_ranks = {}\n", join(&outcome.global_ranks));
    out += &format!("reference_rank = {}\n", outcome.reference_rank);
    for ((a, ranks), volume) in outcome
        .assignments
        .iter()
        .zip(&outcome.client_ranks)
        .zip(&outcome.data_volumes)
    {
        out += &format!(
            "{} = volume {volume}, layer ranks {}\n",
            a.participant_id,
            join(ranks)
        );
    }
    out += &format!(
        "total_trainable_params = {}\n",
        outcome.total_trainable_params
    );
    out += "\n[outputs]\n";
    for f in ARTIFACT_FILES {
        out += &format!("{f}\n");
    }
    if !extra.is_empty() {
        out += "\n[provenance]\n";
        for (k, v) in extra {
            out += &format!("{k} = {v}\n");
        }
    }
    out
}
