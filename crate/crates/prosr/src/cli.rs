//! Command-line interface: argument parsing, layered config resolution
//! (defaults < config file < flags), and dispatch to the command
//! implementations.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::{parse_word_list, Config, CONFIG_ENV_VAR};
use crate::{AppError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "prosr",
    version,
    about = "Process-level diagnostics, shaped rewards, CoT filtering, and a synthetic-policy simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
struct CommonArgs {
    /// Config file (TOML); falls back to the PROSR_CONFIG environment
    /// variable, then built-in defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR", default_value = "prosr-out")]
    out: PathBuf,
    /// Master seed for all randomized computation.
    #[arg(long)]
    seed: Option<u64>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
    /// Print a headline summary to stdout after writing outputs.
    #[arg(long)]
    summary: bool,
    /// Worker threads for per-sample computation (does not affect output
    /// bytes).
    #[arg(long)]
    workers: Option<usize>,
}

/// Per-field config overrides, applied after the config file.
#[derive(Debug, Args)]
struct OverrideArgs {
    // Reward weights and thresholds.
    #[arg(long, help_heading = "Reward overrides")]
    lambda_fmt: Option<f64>,
    #[arg(long, help_heading = "Reward overrides")]
    lambda_cf: Option<f64>,
    #[arg(long, help_heading = "Reward overrides")]
    lambda_drift: Option<f64>,
    #[arg(long, help_heading = "Reward overrides")]
    tau_cf: Option<f64>,
    #[arg(long, help_heading = "Reward overrides")]
    margin_m: Option<f64>,
    #[arg(long, help_heading = "Reward overrides")]
    resample_len: Option<usize>,
    #[arg(long, help_heading = "Reward overrides")]
    eps: Option<f64>,
    /// Three comma-separated segment ratios.
    #[arg(long, value_delimiter = ',', help_heading = "Reward overrides")]
    segment_ratios: Option<Vec<f64>>,
    #[arg(long, help_heading = "Reward overrides")]
    min_span_len: Option<usize>,
    #[arg(long, help_heading = "Reward overrides")]
    std_floor: Option<f64>,
    // Diagnostics cutoffs.
    #[arg(long, help_heading = "Diagnostics overrides")]
    nts_cut: Option<f64>,
    #[arg(long, help_heading = "Diagnostics overrides")]
    lrr_tau: Option<f64>,
    #[arg(long, value_delimiter = ',', help_heading = "Diagnostics overrides")]
    lrr_taus: Option<Vec<f64>>,
    // Filter thresholds and word lists.
    #[arg(long, help_heading = "Filter overrides")]
    min_len: Option<usize>,
    #[arg(long, help_heading = "Filter overrides")]
    max_len: Option<usize>,
    #[arg(long, help_heading = "Filter overrides")]
    max_reconsider: Option<usize>,
    #[arg(long, help_heading = "Filter overrides")]
    max_repeated_sentences: Option<usize>,
    #[arg(long, help_heading = "Filter overrides")]
    min_anchor_ratio: Option<f64>,
    #[arg(long, help_heading = "Filter overrides")]
    numeric_anchors: Option<bool>,
    /// Word-list file replacing the built-in reconsideration markers.
    #[arg(long, value_name = "PATH", help_heading = "Filter overrides")]
    reconsider_markers_file: Option<PathBuf>,
    /// Word-list file replacing the built-in spatial lexicon.
    #[arg(long, value_name = "PATH", help_heading = "Filter overrides")]
    spatial_lexicon_file: Option<PathBuf>,
    // Simulator knobs.
    #[arg(long, help_heading = "Simulator overrides")]
    episodes_per_eval: Option<usize>,
    #[arg(long, help_heading = "Simulator overrides")]
    iterations: Option<usize>,
}

impl OverrideArgs {
    fn apply(&self, config: &mut Config) -> Result<()> {
        macro_rules! set {
            ($($field:ident),+ $(,)?) => {
                $(if let Some(v) = self.$field.clone() {
                    config.$field = v;
                })+
            };
        }
        set!(
            lambda_fmt,
            lambda_cf,
            lambda_drift,
            tau_cf,
            margin_m,
            resample_len,
            eps,
            min_span_len,
            std_floor,
            nts_cut,
            lrr_tau,
            lrr_taus,
            min_len,
            max_len,
            max_reconsider,
            max_repeated_sentences,
            min_anchor_ratio,
            numeric_anchors,
            episodes_per_eval,
            iterations,
        );
        if let Some(ratios) = &self.segment_ratios {
            let [r1, r2, r3] = ratios.as_slice() else {
                return Err(AppError::Config(format!(
                    "--segment-ratios expects exactly 3 values, got {}",
                    ratios.len()
                )));
            };
            config.segment_ratios = [*r1, *r2, *r3];
        }
        if let Some(path) = &self.reconsider_markers_file {
            let text = std::fs::read_to_string(path).map_err(AppError::io(path))?;
            config.reconsider_markers = parse_word_list(&text);
        }
        if let Some(path) = &self.spatial_lexicon_file {
            let text = std::fs::read_to_string(path).map_err(AppError::io(path))?;
            config.spatial_lexicon = parse_word_list(&text);
        }
        Ok(())
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Pair original/blank rollouts and compute the diagnostic report.
    Diagnose {
        /// Rollout log (JSONL).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Compute shaped rewards for every original rollout in a log.
    Reward {
        /// Rollout log (JSONL).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Apply the rule-based quality filter to a CoT corpus.
    Filter {
        /// CoT corpus (JSONL).
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run the base-versus-shaped synthetic-policy experiment.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// Replicate seeds, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        /// Run once per weight with both penalty weights set to it, instead
        /// of a single run at the configured weights.
        #[arg(long, value_delimiter = ',', value_name = "W1,W2,...")]
        lambda_sweep: Option<Vec<f64>>,
    },
    /// Exceedance curves over threshold grids from a per-sample table.
    Scan {
        /// A `per_sample.csv` produced by `diagnose`.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        overrides: OverrideArgs,
        /// Similarity cutoffs, comma-separated.
        #[arg(long, value_delimiter = ',')]
        cutoff_grid: Option<Vec<f64>>,
        /// Tail margins, comma-separated.
        #[arg(long, value_delimiter = ',')]
        margin_grid: Option<Vec<f64>>,
        /// Fail (nonzero exit) if either curve is not monotone
        /// non-increasing.
        #[arg(long)]
        check_monotone: bool,
    },
}

fn resolve_config(common: &CommonArgs, overrides: &OverrideArgs) -> Result<Config> {
    let path = common
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV_VAR).map(PathBuf::from));
    let mut config = match path {
        Some(path) => Config::from_file(&path)?,
        None => Config::default(),
    };
    overrides.apply(&mut config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(workers) = common.workers {
        config.workers = workers;
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Diagnose { input, common, overrides } => {
            let config = resolve_config(common, overrides)?;
            commands::diagnose(input, &common.out, &config, common.force, common.summary)
        }
        Command::Reward { input, common, overrides } => {
            let config = resolve_config(common, overrides)?;
            commands::reward(input, &common.out, &config, common.force, common.summary)
        }
        Command::Filter { input, common, overrides } => {
            let config = resolve_config(common, overrides)?;
            commands::filter(input, &common.out, &config, common.force, common.summary)
        }
        Command::Simulate { common, overrides, seeds, lambda_sweep } => {
            let config = resolve_config(common, overrides)?;
            commands::simulate(
                &common.out,
                &config,
                seeds,
                lambda_sweep.as_deref(),
                common.force,
                common.summary,
            )
        }
        Command::Scan { input, common, overrides, cutoff_grid, margin_grid, check_monotone } => {
            let mut config = resolve_config(common, overrides)?;
            if let Some(grid) = cutoff_grid {
                config.cutoff_grid = grid.clone();
            }
            if let Some(grid) = margin_grid {
                config.margin_grid = grid.clone();
            }
            config.validate()?;
            commands::scan(input, &common.out, &config, *check_monotone, common.force, common.summary)
        }
    }
}

/// Parses arguments, runs the selected command, and returns the process exit
/// code; errors are printed to stderr.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_every_subcommand() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        for args in [
            vec!["prosr", "diagnose", "--input", "a.jsonl", "--out", "o"],
            vec!["prosr", "reward", "--input", "a.jsonl", "--lambda-cf", "0.2"],
            vec!["prosr", "filter", "--input", "c.jsonl", "--min-anchor-ratio", "0.1"],
            vec!["prosr", "simulate", "--seeds", "1,2", "--lambda-sweep", "0.05,0.1"],
            vec!["prosr", "scan", "--input", "p.csv", "--cutoff-grid", "0,0.5,1", "--check-monotone"],
        ] {
            Cli::try_parse_from(args).unwrap();
        }
    }

    #[test]
    fn overrides_apply_over_defaults() {
        let cli = Cli::try_parse_from([
            "prosr",
            "reward",
            "--input",
            "a.jsonl",
            "--lambda-cf",
            "0.25",
            "--segment-ratios",
            "1,2,1",
            "--seed",
            "9",
        ])
        .unwrap();
        let Command::Reward { common, overrides, .. } = &cli.command else {
            panic!("expected reward command");
        };
        let config = resolve_config(common, overrides).unwrap();
        assert_eq!(config.lambda_cf, 0.25);
        assert_eq!(config.segment_ratios, [1.0, 2.0, 1.0]);
        assert_eq!(config.seed, 9);
        assert_eq!(config.lambda_drift, 0.1);
    }

    #[test]
    fn invalid_override_is_config_error() {
        let cli =
            Cli::try_parse_from(["prosr", "reward", "--input", "a.jsonl", "--tau-cf", "1.5"])
                .unwrap();
        let Command::Reward { common, overrides, .. } = &cli.command else {
            panic!("expected reward command");
        };
        let err = resolve_config(common, overrides).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
