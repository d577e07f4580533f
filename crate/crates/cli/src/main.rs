//! `autorank` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or runtime
//! error. Every subcommand writes into a staging directory that replaces
//! `--out` only on success.

mod output;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autorank::complexity::{self, MetricConfig};
use autorank::fedsim::{
    self, ConfigError, DatasetSource, ExperimentConfig, ExperimentError, KEY_HELP,
};
use autorank::rank::{self, RankError};
use autorank::wire;
use clap::{Parser, Subcommand};

use output::{sha256_hex, StagedDir};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) | ExperimentError::Rank(RankError::InvalidFloor(_)) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn data_err(context: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

#[derive(Parser)]
#[command(
    name = "autorank",
    version,
    about = "Data-complexity driven LoRA rank assignment for federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Profile every client of a config and write complexity.csv.
    #[command(after_help = KEY_HELP)]
    Profile {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for client profiling (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Score a metrics CSV with CRITIC + TOPSIS and write ranks.csv and similarity.csv.
    AssignRanks {
        metrics: PathBuf,
        #[arg(long)]
        global_rank: usize,
        #[arg(long, default_value_t = rank::DEFAULT_FLOOR)]
        floor: f64,
        /// finegrain | alt1 | alt2
        #[arg(long, default_value = "finegrain")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment and write every artifact.
    #[command(after_help = KEY_HELP)]
    Simulate {
        config: PathBuf,
        /// Overrides the config's `mode`.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        rounds: Option<usize>,
        /// Overrides the config's `seed` (which defaults to 42).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        rank_ratio: Option<f64>,
        /// Caps client-training parallelism (0 = all cores); outputs do not depend on it.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare completed run directories.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Profile {
            config,
            out,
            threads,
        } => cmd_profile(&config, &out, threads),
        Command::AssignRanks {
            metrics,
            global_rank,
            floor,
            mode,
            out,
        } => cmd_assign_ranks(&metrics, global_rank, floor, &mode, &out),
        Command::Simulate {
            config,
            mode,
            rounds,
            seed,
            rank_ratio,
            threads,
            out,
        } => {
            let overrides = [
                ("mode", mode),
                ("rounds", rounds.map(|r| r.to_string())),
                ("seed", seed.map(|s| s.to_string())),
                ("rank_ratio", rank_ratio.map(|r| r.to_string())),
            ];
            cmd_simulate(&config, &overrides, threads, &out)
        }
        Command::Report { runs, out } => report::cmd_report(&runs, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

struct LoadedConfig {
    config: ExperimentConfig,
    provenance: Vec<(String, String)>,
}

fn tool_version() -> (String, String) {
    (
        "tool_version".into(),
        format!("autorank {}", env!("CARGO_PKG_VERSION")),
    )
}

/// Parses a config file, resolves relative IDX paths against the config's
/// directory and records input digests.
fn load_config(
    path: &Path,
    overrides: &[(&str, Option<String>)],
) -> Result<LoadedConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut config = ExperimentConfig::parse(&text)?;
    for (key, value) in overrides {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    config.validate()?;
    let mut provenance = vec![
        tool_version(),
        ("config_sha256".into(), sha256_hex(text.as_bytes())),
    ];
    if let DatasetSource::Idx { images, labels, .. } = &mut config.dataset {
        let base = path.parent().unwrap_or(Path::new(""));
        for (name, p) in [("idx_images", images), ("idx_labels", labels)] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            let bytes = fs::read(&*p).map_err(data_err(format!("cannot read {}", p.display())))?;
            provenance.push((format!("{name}_sha256"), sha256_hex(&bytes)));
        }
    }
    Ok(LoadedConfig { config, provenance })
}

fn cmd_profile(config_path: &Path, out: &Path, threads: usize) -> Result<(), CliError> {
    let LoadedConfig { config, provenance } = load_config(config_path, &[])?;
    let reports = fedsim::profile(&config, threads)?;
    let staged = StagedDir::new(out).map_err(data_err("creating output"))?;
    let file = fs::File::create(staged.path().join("complexity.csv"))
        .map_err(data_err("complexity.csv"))?;
    wire::write_complexity_csv(file, &reports).map_err(|e| CliError::Data(e.to_string()))?;
    let mut manifest = String::from("[config]\n");
    for (k, v) in config.to_pairs() {
        manifest += &format!("{k} = {v}\n");
    }
    manifest += "\n[outputs]\ncomplexity.csv\n\n[provenance]\n";
    for (k, v) in provenance {
        manifest += &format!("{k} = {v}\n");
    }
    fs::write(staged.path().join("manifest.txt"), manifest).map_err(data_err("manifest.txt"))?;
    staged
        .commit()
        .map_err(data_err(format!("committing {}", out.display())))
}

fn parse_metric_mode(mode: &str) -> Result<MetricConfig, CliError> {
    match mode.trim_start_matches("autorank_") {
        "finegrain" => Ok(MetricConfig::FineGrain),
        "alt1" => Ok(MetricConfig::Alternative1),
        "alt2" => Ok(MetricConfig::Alternative2),
        other => Err(CliError::Usage(format!(
            "unknown metric mode {other:?} (expected finegrain, alt1 or alt2)"
        ))),
    }
}

fn cmd_assign_ranks(
    metrics: &Path,
    global_rank: usize,
    floor: f64,
    mode: &str,
    out: &Path,
) -> Result<(), CliError> {
    let metric = parse_metric_mode(mode)?;
    rank::check_floor(floor).map_err(|e| CliError::Usage(e.to_string()))?;
    if global_rank == 0 {
        return Err(CliError::Usage(RankError::InvalidGlobalRank.to_string()));
    }
    let bytes =
        fs::read(metrics).map_err(data_err(format!("cannot read {}", metrics.display())))?;
    let reports = wire::read_complexity_csv(bytes.as_slice())
        .map_err(|e| CliError::Data(format!("{}: {e}", metrics.display())))?;
    let matrix = complexity::build_decision_matrix(&reports, metric)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let assignments = rank::assign_ranks(&matrix, global_rank, floor).map_err(|e| match e {
        RankError::InvalidFloor(_) | RankError::InvalidGlobalRank => CliError::Usage(e.to_string()),
        other => CliError::Data(other.to_string()),
    })?;
    let ids: Vec<String> = assignments
        .iter()
        .map(|a| a.participant_id.clone())
        .collect();
    let similarity = rank::rank_similarity_matrix(&assignments);

    let staged = StagedDir::new(out).map_err(data_err("creating output"))?;
    let create =
        |name: &str| fs::File::create(staged.path().join(name)).map_err(data_err(name.to_string()));
    let wire_err = |e: wire::WireError| CliError::Data(e.to_string());
    wire::write_ranks_csv(create("ranks.csv")?, &reports, &assignments).map_err(wire_err)?;
    wire::write_similarity_csv(create("similarity.csv")?, &ids, &similarity).map_err(wire_err)?;
    let (k, v) = tool_version();
    let manifest = format!(
        "[parameters]\nglobal_rank = {global_rank}\nfloor = {floor}\nmode = {mode}\n\n[outputs]\nranks.csv\nsimilarity.csv\n\n[provenance]\n{k} = {v}\nmetrics_sha256 = {}\n",
        sha256_hex(&bytes)
    );
    fs::write(staged.path().join("manifest.txt"), manifest).map_err(data_err("manifest.txt"))?;
    staged
        .commit()
        .map_err(data_err(format!("committing {}", out.display())))
}

fn cmd_simulate(
    config_path: &Path,
    overrides: &[(&str, Option<String>)],
    threads: usize,
    out: &Path,
) -> Result<(), CliError> {
    let LoadedConfig { config, provenance } = load_config(config_path, overrides)?;
    let outcome = fedsim::run_experiment(&config, threads)?;
    let staged = StagedDir::new(out).map_err(data_err("creating output"))?;
    fedsim::write_artifacts(&outcome, staged.path(), &provenance)?;
    staged
        .commit()
        .map_err(data_err(format!("committing {}", out.display())))?;
    let (best, round) = outcome.best_accuracy();
    eprintln!(
        "{} rounds, best test accuracy {best:.4} (round {round}), total trainable params {}",
        outcome.records.len(),
        outcome.total_trainable_params
    );
    Ok(())
}
