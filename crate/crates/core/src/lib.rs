//! Core numerics for process-level rollout diagnostics and reward shaping.
//!
//! This crate operates on token-level entropy trajectories extracted from
//! rollout logs. It computes:
//!
//! - paired original/blank-probe diagnostics (blank accuracy, same-answer
//!   rate, normalized trajectory similarity, late-rise rate),
//! - bounded shaping penalties and the composite reward consumed by a
//!   group-relative policy trainer,
//! - rule-based chain-of-thought quality filtering,
//! - a synthetic-policy simulator that reproduces the directional effect of
//!   the shaped reward on the diagnostics at desk scale.
//!
//! Everything here is pure computation over in-memory data; IO, file formats
//! and the CLI live in the companion `prosr` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod diagnostics;
pub mod filter;
pub mod rewards;
pub mod simulator;
pub mod trajectory;

pub use diagnostics::{DiagnosticReport, DiagnosticsConfig, FailureGroup, Rollout, RolloutPair};
pub use rewards::{GroupAdvantages, RewardConfig, ShapedReward};
pub use trajectory::{EntropyTrajectory, NormalizedTrajectory, SegmentStats, ThinkSpan};

/// Answer alphabet for the multiple-choice setting.
pub const ANSWER_LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

/// Returns true for a letter in the answer alphabet.
pub fn is_answer_letter(c: char) -> bool {
    ANSWER_LETTERS.contains(&c)
}
