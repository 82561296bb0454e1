//! Flat TOML configuration with layered resolution: built-in defaults, then
//! the config file, then command-line flag overrides. Unknown keys are
//! rejected, out-of-range values are errors, and the resolved config is
//! echoed into every report.

use std::path::Path;

use serde::{Deserialize, Serialize};

use prosr_core::diagnostics::DiagnosticsConfig;
use prosr_core::filter::FilterConfig;
use prosr_core::rewards::{RewardConfig, DEFAULT_STD_FLOOR};
use prosr_core::simulator::{EnvConfig, PolicyParams, SearchConfig};

use crate::{AppError, Result};

/// Environment variable consulted for a default config path.
pub const CONFIG_ENV_VAR: &str = "PROSR_CONFIG";

const MARKERS_FILE: &str = include_str!("../data/reconsider_markers.txt");
const LEXICON_FILE: &str = include_str!("../data/spatial_lexicon.txt");

/// Parses a plain-text word list: one entry per line, `#` comments and blank
/// lines ignored.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

/// The bundled reconsideration-marker list.
pub fn default_markers() -> Vec<String> {
    parse_word_list(MARKERS_FILE)
}

/// The bundled spatial-anchor lexicon.
pub fn default_lexicon() -> Vec<String> {
    parse_word_list(LEXICON_FILE)
}

/// Every tunable of the toolkit as one flat key-value document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    // Reward weights and thresholds.
    pub lambda_fmt: f64,
    pub lambda_cf: f64,
    pub lambda_drift: f64,
    pub tau_cf: f64,
    pub margin_m: f64,
    pub resample_len: usize,
    pub eps: f64,
    pub segment_ratios: [f64; 3],
    pub min_span_len: usize,
    pub std_floor: f64,
    // Diagnostics cutoffs.
    pub nts_cut: f64,
    pub lrr_tau: f64,
    pub lrr_taus: Vec<f64>,
    // Filter thresholds and word lists.
    pub min_len: usize,
    pub max_len: usize,
    pub max_reconsider: usize,
    pub max_repeated_sentences: usize,
    pub min_anchor_ratio: f64,
    pub numeric_anchors: bool,
    pub reconsider_markers: Vec<String>,
    pub spatial_lexicon: Vec<String>,
    // Simulator environment.
    pub p_prior: f64,
    pub span_len: usize,
    pub curve_start: f64,
    pub curve_end: f64,
    pub noise_sigma: f64,
    pub copy_noise: f64,
    pub bump_height: f64,
    pub bump_width: f64,
    pub bump_base: f64,
    pub episodes_per_eval: usize,
    // Simulator search.
    pub iterations: usize,
    pub step: f64,
    pub a_max: f64,
    pub d_max: f64,
    pub min_gain: f64,
    pub init_g: f64,
    pub init_d: f64,
    pub init_a: f64,
    // Threshold-scan grids.
    pub cutoff_grid: Vec<f64>,
    pub margin_grid: Vec<f64>,
    // Execution.
    pub seed: u64,
    /// Worker threads never change output bytes, so the echoed config omits
    /// them: reports stay identical across worker counts.
    #[serde(skip_serializing)]
    pub workers: usize,
}

fn default_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

impl Default for Config {
    fn default() -> Self {
        let reward = RewardConfig::default();
        let diag = DiagnosticsConfig::default();
        let filter = FilterConfig::default();
        let env = EnvConfig::default();
        let search = SearchConfig::default();
        Self {
            lambda_fmt: reward.lambda_fmt,
            lambda_cf: reward.lambda_cf,
            lambda_drift: reward.lambda_drift,
            tau_cf: reward.tau_cf,
            margin_m: reward.margin_m,
            resample_len: reward.resample_len,
            eps: reward.eps,
            segment_ratios: reward.segment_ratios,
            min_span_len: reward.min_span_len,
            std_floor: DEFAULT_STD_FLOOR,
            nts_cut: diag.nts_cut,
            lrr_tau: diag.lrr_tau,
            lrr_taus: diag.lrr_taus,
            min_len: filter.min_len,
            max_len: filter.max_len,
            max_reconsider: filter.max_reconsider,
            max_repeated_sentences: filter.max_repeated_sentences,
            min_anchor_ratio: filter.min_anchor_ratio,
            numeric_anchors: filter.numeric_anchors,
            reconsider_markers: default_markers(),
            spatial_lexicon: default_lexicon(),
            p_prior: env.p_prior,
            span_len: env.span_len,
            curve_start: env.curve_start,
            curve_end: env.curve_end,
            noise_sigma: env.noise_sigma,
            copy_noise: env.copy_noise,
            bump_height: env.bump_height,
            bump_width: env.bump_width,
            bump_base: env.bump_base,
            episodes_per_eval: env.episodes_per_eval,
            iterations: search.iterations,
            step: search.step,
            a_max: search.a_max,
            d_max: search.d_max,
            min_gain: search.min_gain,
            init_g: search.init.g,
            init_d: search.init.d,
            init_a: search.init.a,
            cutoff_grid: default_grid(),
            margin_grid: default_grid(),
            seed: env.seed,
            workers: 4,
        }
    }
}

impl Config {
    /// Loads and validates a config file over the built-in defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(AppError::io(path))?;
        let config: Config = toml::from_str(&text)
            .map_err(|e| AppError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.reward_config().validate().map_err(|e| AppError::Config(e.to_string()))?;
        if self.min_len > self.max_len {
            return Err(AppError::Config(format!(
                "min_len ({}) must not exceed max_len ({})",
                self.min_len, self.max_len
            )));
        }
        if !(self.min_anchor_ratio >= 0.0) {
            return Err(AppError::Config(format!(
                "min_anchor_ratio must be >= 0, got {}",
                self.min_anchor_ratio
            )));
        }
        if !(self.std_floor > 0.0) {
            return Err(AppError::Config(format!(
                "std_floor must be positive, got {}",
                self.std_floor
            )));
        }
        if self.lrr_taus.is_empty() {
            return Err(AppError::Config(String::from("lrr_taus must be non-empty")));
        }
        if self.cutoff_grid.is_empty() || self.margin_grid.is_empty() {
            return Err(AppError::Config(String::from(
                "cutoff_grid and margin_grid must be non-empty",
            )));
        }
        if self.workers == 0 {
            return Err(AppError::Config(String::from("workers must be positive")));
        }
        self.env_config().validate().map_err(|e| AppError::Config(e.to_string()))?;
        self.search_config().validate().map_err(|e| AppError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            lambda_fmt: self.lambda_fmt,
            lambda_cf: self.lambda_cf,
            lambda_drift: self.lambda_drift,
            tau_cf: self.tau_cf,
            margin_m: self.margin_m,
            resample_len: self.resample_len,
            eps: self.eps,
            segment_ratios: self.segment_ratios,
            min_span_len: self.min_span_len,
        }
    }

    pub fn diagnostics_config(&self) -> DiagnosticsConfig {
        DiagnosticsConfig {
            resample_len: self.resample_len,
            eps: self.eps,
            margin_m: self.margin_m,
            segment_ratios: self.segment_ratios,
            lrr_taus: self.lrr_taus.clone(),
            nts_cut: self.nts_cut,
            lrr_tau: self.lrr_tau,
        }
    }

    pub fn filter_config(&self) -> FilterConfig {
        FilterConfig {
            min_len: self.min_len,
            max_len: self.max_len,
            max_reconsider: self.max_reconsider,
            max_repeated_sentences: self.max_repeated_sentences,
            min_anchor_ratio: self.min_anchor_ratio,
            reconsider_markers: self.reconsider_markers.clone(),
            spatial_lexicon: self.spatial_lexicon.clone(),
            numeric_anchors: self.numeric_anchors,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            p_prior: self.p_prior,
            span_len: self.span_len,
            curve_start: self.curve_start,
            curve_end: self.curve_end,
            noise_sigma: self.noise_sigma,
            copy_noise: self.copy_noise,
            bump_height: self.bump_height,
            bump_width: self.bump_width,
            bump_base: self.bump_base,
            seed: self.seed,
            episodes_per_eval: self.episodes_per_eval,
        }
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            iterations: self.iterations,
            step: self.step,
            seed: self.seed,
            a_max: self.a_max,
            d_max: self.d_max,
            min_gain: self.min_gain,
            init: PolicyParams { g: self.init_g, d: self.init_d, a: self.init_a },
        }
    }
}
