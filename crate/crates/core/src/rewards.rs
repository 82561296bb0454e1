//! Composite reward: answer and format terms, the two bounded shaping
//! penalties, and group-normalized advantages.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{trajectory_similarity, Rollout, RolloutPair};
use crate::is_answer_letter;
use crate::trajectory::{
    self, DEFAULT_EPS, DEFAULT_MIN_SPAN_LEN, DEFAULT_RESAMPLE_LEN, DEFAULT_SEGMENT_RATIOS,
};

/// Floor on the group standard deviation when normalizing advantages.
pub const DEFAULT_STD_FLOOR: f64 = 1e-6;

/// Validity flag recorded when the counterfactual penalty was zeroed because
/// a trajectory was unavailable on either side of the pair.
pub const FLAG_INVALID_SPAN_CF: &str = "invalid_span_cf";
/// Validity flag recorded when the drift penalty was zeroed because the
/// original trajectory was unavailable or too short to segment.
pub const FLAG_INVALID_SPAN_DRIFT: &str = "invalid_span_drift";
/// Validity flag recorded when no blank probe accompanied the rollout.
pub const FLAG_NO_BLANK_PROBE: &str = "no_blank_probe";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("advantage group needs at least 2 rollouts, got {0}")]
    GroupTooSmall(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

/// Weights and thresholds of the shaped reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub lambda_fmt: f64,
    pub lambda_cf: f64,
    pub lambda_drift: f64,
    /// Similarity threshold of the counterfactual penalty; must stay below 1.
    pub tau_cf: f64,
    /// Tolerance margin of the drift penalty.
    pub margin_m: f64,
    pub resample_len: usize,
    pub eps: f64,
    pub segment_ratios: [f64; 3],
    pub min_span_len: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_fmt: 0.2,
            lambda_cf: 0.1,
            lambda_drift: 0.1,
            tau_cf: 0.4,
            margin_m: 0.1,
            resample_len: DEFAULT_RESAMPLE_LEN,
            eps: DEFAULT_EPS,
            segment_ratios: DEFAULT_SEGMENT_RATIOS,
            min_span_len: DEFAULT_MIN_SPAN_LEN,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let err = |msg: String| Err(RewardError::InvalidConfig(msg));
        if !(0.0..1.0).contains(&self.tau_cf) {
            return err(alloc::format!("tau_cf must lie in [0, 1), got {}", self.tau_cf));
        }
        for (name, v) in [
            ("lambda_fmt", self.lambda_fmt),
            ("lambda_cf", self.lambda_cf),
            ("lambda_drift", self.lambda_drift),
            ("margin_m", self.margin_m),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return err(alloc::format!("{name} must be a non-negative finite value, got {v}"));
            }
        }
        if !(self.eps > 0.0) {
            return err(alloc::format!("eps must be positive, got {}", self.eps));
        }
        if self.resample_len == 0 {
            return err(String::from("resample_len must be positive"));
        }
        if self.min_span_len == 0 {
            return err(String::from("min_span_len must be positive"));
        }
        if self.segment_ratios.iter().any(|&r| !(r > 0.0)) {
            return err(String::from("segment_ratios must all be positive"));
        }
        Ok(())
    }
}

/// Reward components and weighted total for one original-condition rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapedReward {
    pub r_acc: f64,
    pub r_fmt: f64,
    pub r_cf: f64,
    pub r_drift: f64,
    pub total: f64,
    pub flags: Vec<String>,
}

/// Group rewards and their normalized advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAdvantages {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

/// Answer reward: 1 iff the parsed answer equals the reference.
pub fn r_acc(rollout: &Rollout, reference: char) -> f64 {
    if rollout.answer == Some(reference) {
        1.0
    } else {
        0.0
    }
}

/// Format reward: 1 iff the text matches
/// `<think>...</think><answer>X</answer>` with X in A-D, optional whitespace
/// between blocks, and nothing but whitespace after the closing answer tag.
pub fn r_fmt(raw_text: &str) -> f64 {
    if format_valid(raw_text) {
        1.0
    } else {
        0.0
    }
}

fn format_valid(raw_text: &str) -> bool {
    let text = raw_text.trim();
    let Some(rest) = text.strip_prefix("<think>") else { return false };
    let Some(close) = rest.find("</think>") else { return false };
    if rest[..close].contains("<think>") {
        return false;
    }
    let rest = rest[close + "</think>".len()..].trim_start();
    let Some(rest) = rest.strip_prefix("<answer>") else { return false };
    let mut chars = rest.chars();
    let Some(letter) = chars.next() else { return false };
    if !is_answer_letter(letter) {
        return false;
    }
    chars.as_str().trim_end() == "</answer>"
}

/// Shape similarity between the pair's original and blank trajectories.
pub fn counterfactual_similarity(pair: &RolloutPair, cfg: &RewardConfig) -> Option<f64> {
    trajectory_similarity(&pair.original, &pair.blank, cfg.resample_len, cfg.eps)
}

/// Counterfactual invariance penalty in [-1, 0].
///
/// Active only when both answers are parsed and equal; then
/// `-clip_[0,1]((s_cf - tau_cf) / (1 - tau_cf))`. When the gate is open but a
/// trajectory is unavailable the penalty is zeroed and a flag is returned.
pub fn r_cf(pair: &RolloutPair, cfg: &RewardConfig) -> (f64, Option<&'static str>) {
    let gate = matches!(
        (pair.original.answer, pair.blank.answer),
        (Some(a), Some(b)) if a == b
    );
    if !gate {
        return (0.0, None);
    }
    match counterfactual_similarity(pair, cfg) {
        Some(s_cf) => {
            let scaled = (s_cf - cfg.tau_cf) / (1.0 - cfg.tau_cf);
            (-scaled.clamp(0.0, 1.0), None)
        }
        None => (0.0, Some(FLAG_INVALID_SPAN_CF)),
    }
}

/// Tail drift penalty in [-1, 0]: `-clip_[0,1]([H_L - H_M - m]_+)`.
/// Zeroed with a flag when the trajectory is unavailable or too short.
pub fn r_drift(rollout: &Rollout, cfg: &RewardConfig) -> (f64, Option<&'static str>) {
    if !rollout.has_trajectory() {
        return (0.0, Some(FLAG_INVALID_SPAN_DRIFT));
    }
    match trajectory::segment_means(&rollout.trajectory, cfg.segment_ratios) {
        Ok(stats) => {
            let delta = trajectory::tail_delta(&stats, cfg.margin_m);
            (-delta.clamp(0.0, 1.0), None)
        }
        Err(_) => (0.0, Some(FLAG_INVALID_SPAN_DRIFT)),
    }
}

/// Assembles the shaped reward for one original-condition rollout.
///
/// The blank rollout is only the counterfactual probe; when absent the
/// counterfactual term is zeroed with a flag.
pub fn shaped_reward(
    original: &Rollout,
    blank: Option<&Rollout>,
    reference: char,
    cfg: &RewardConfig,
) -> ShapedReward {
    let mut flags = Vec::new();
    let acc = r_acc(original, reference);
    let fmt = r_fmt(&original.raw_text);
    let cf = match blank {
        Some(blank) => {
            let pair = RolloutPair {
                sample_id: original.sample_id.clone(),
                original: original.clone(),
                blank: blank.clone(),
                reference_answer: reference,
            };
            let (cf, flag) = r_cf(&pair, cfg);
            if let Some(flag) = flag {
                flags.push(String::from(flag));
            }
            cf
        }
        None => {
            flags.push(String::from(FLAG_NO_BLANK_PROBE));
            0.0
        }
    };
    let (drift, flag) = r_drift(original, cfg);
    if let Some(flag) = flag {
        flags.push(String::from(flag));
    }
    let total = acc + cfg.lambda_fmt * fmt + cfg.lambda_cf * cf + cfg.lambda_drift * drift;
    ShapedReward { r_acc: acc, r_fmt: fmt, r_cf: cf, r_drift: drift, total, flags }
}

/// Shaped reward for a matched pair; the original rollout receives it.
pub fn total_reward(pair: &RolloutPair, reference: char, cfg: &RewardConfig) -> ShapedReward {
    shaped_reward(&pair.original, Some(&pair.blank), reference, cfg)
}

/// Group-normalized advantages: `(r_i - mean) / max(population_std, std_floor)`.
/// Zero-variance groups yield all-zero advantages.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Result<GroupAdvantages, RewardError> {
    let k = rewards.len();
    if k < 2 {
        return Err(RewardError::GroupTooSmall(k));
    }
    let mean = rewards.iter().sum::<f64>() / k as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / k as f64;
    let denom = libm::sqrt(var).max(std_floor);
    Ok(GroupAdvantages {
        rewards: rewards.to_vec(),
        advantages: rewards.iter().map(|r| (r - mean) / denom).collect(),
    })
}
