//! Rule-based chain-of-thought quality filtering: reconsider-marker
//! counting, spatial-anchor ratio, repeated-sentence detection, length
//! bounds, answer-correctness gating, and corpus-level statistics.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Default reconsideration-marker phrases, matched case-insensitively at
/// word boundaries. Multi-word phrases take precedence over single words.
pub const DEFAULT_RECONSIDER_MARKERS: &[&str] = &[
    "wait",
    "let me reconsider",
    "let me re-examine",
    "let me re-think",
    "let me think again",
    "let me re-evaluate",
    "let me revisit",
    "on second thought",
    "let me check",
    "let me look at",
    "hmm",
];

/// Default spatial-anchor lexicon: relative relations, ordinal positions,
/// directional and viewpoint cues, and coordinate or distance words.
/// Multi-word entries count as one match. The shipped data file is the
/// editable canonical copy; this constant mirrors it.
pub const DEFAULT_SPATIAL_LEXICON: &[&str] = &[
    // relative relations
    "left",
    "right",
    "above",
    "below",
    "in front of",
    "front",
    "behind",
    "beside",
    "next to",
    "under",
    "underneath",
    "over",
    "atop",
    "adjacent",
    "between",
    "inside",
    "outside",
    "near",
    "nearer",
    "nearest",
    "closer",
    "closest",
    "farther",
    "farthest",
    "further away",
    "top",
    "bottom",
    "middle",
    "center",
    "edge",
    "corner",
    // ordinal positions
    "leftmost",
    "rightmost",
    "topmost",
    "bottommost",
    "uppermost",
    "lowermost",
    "foreground",
    "background",
    "first row",
    "second row",
    "third row",
    "first column",
    "second column",
    "third column",
    // directional and viewpoint cues
    "north",
    "south",
    "east",
    "west",
    "northeast",
    "northwest",
    "southeast",
    "southwest",
    "clockwise",
    "counterclockwise",
    "viewpoint",
    "perspective",
    "camera",
    "facing",
    "upward",
    "downward",
    "leftward",
    "rightward",
    "toward",
    "away from",
    "horizontal",
    "vertical",
    "diagonal",
    "rotated",
    "rotation",
    "orientation",
    "direction",
    "angle",
    "egocentric",
    "bird's-eye",
    "overhead",
    // coordinate and distance words
    "row",
    "column",
    "coordinate",
    "coordinates",
    "axis",
    "x-axis",
    "y-axis",
    "origin",
    "distance",
    "depth",
    "position",
    "located",
    "location",
];

/// One CoT sample: the reasoning text between the think tags plus the
/// answers needed for the correctness gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotSample {
    pub sample_id: String,
    pub think_text: String,
    pub predicted_answer: Option<char>,
    pub reference_answer: char,
    pub source: String,
}

/// Thresholds and word lists for the five filtering rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_len: usize,
    pub max_len: usize,
    pub max_reconsider: usize,
    pub max_repeated_sentences: usize,
    pub min_anchor_ratio: f64,
    pub reconsider_markers: Vec<String>,
    pub spatial_lexicon: Vec<String>,
    /// Also count parenthesized coordinate pairs and unit-bearing numbers
    /// as spatial anchors.
    pub numeric_anchors: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_len: 40,
            max_len: 400,
            max_reconsider: 2,
            max_repeated_sentences: 3,
            min_anchor_ratio: 0.04,
            reconsider_markers: DEFAULT_RECONSIDER_MARKERS.iter().map(|s| s.to_string()).collect(),
            spatial_lexicon: DEFAULT_SPATIAL_LEXICON.iter().map(|s| s.to_string()).collect(),
            numeric_anchors: true,
        }
    }
}

/// Rule names in the fixed evaluation order.
pub const RULE_ANSWER: &str = "answer";
pub const RULE_LENGTH: &str = "length";
pub const RULE_RECONSIDER: &str = "reconsider";
pub const RULE_REPETITION: &str = "repetition";
pub const RULE_SPATIAL: &str = "spatial grounding";

/// The raw quantities the rules are evaluated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    /// Whitespace-delimited word count of the reasoning text.
    pub length: usize,
    pub reconsider_count: usize,
    pub repeated_sentence_count: usize,
    pub anchor_ratio: f64,
    pub answer_correct: bool,
}

/// Keep/reject decision with every failed rule recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub keep: bool,
    pub failed_rules: Vec<String>,
    pub measurements: Measurements,
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric()
}

/// Case-insensitive, word-boundary, non-overlapping phrase matcher over a
/// shared consumed-byte mask (so no byte is counted twice across patterns).
fn count_matches(lower: &str, consumed: &mut [bool], pattern: &str) -> usize {
    if pattern.is_empty() {
        return 0;
    }
    let bytes = lower.as_bytes();
    let mut count = 0;
    for (i, _) in lower.match_indices(pattern) {
        let end = i + pattern.len();
        if i > 0 && is_word_byte(bytes[i - 1]) {
            continue;
        }
        if end < bytes.len() && is_word_byte(bytes[end]) {
            continue;
        }
        if consumed[i..end].iter().any(|&c| c) {
            continue;
        }
        consumed[i..end].iter_mut().for_each(|c| *c = true);
        count += 1;
    }
    count
}

fn sorted_longest_first(patterns: &[String]) -> Vec<String> {
    let mut out: Vec<String> = patterns.iter().map(|p| p.to_lowercase()).collect();
    out.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    out
}

/// Total non-overlapping, word-boundary occurrences of the marker phrases,
/// case-insensitive, multi-word phrases matched first.
pub fn reconsider_count(text: &str, markers: &[String]) -> usize {
    let lower = text.to_lowercase();
    let mut consumed = alloc::vec![false; lower.len()];
    sorted_longest_first(markers)
        .iter()
        .map(|m| count_matches(&lower, &mut consumed, m))
        .sum()
}

fn coordinate_component(s: &str) -> bool {
    let s = s.trim();
    if s.is_empty() || s.len() > 8 {
        return false;
    }
    let numeric = s.chars().all(|c| c.is_ascii_digit() || c == '.' || c == '-')
        && s.chars().any(|c| c.is_ascii_digit());
    let symbolic = s.len() == 1 && s.chars().all(|c| c.is_ascii_alphabetic());
    numeric || symbolic
}

/// Counts parenthesized pairs like `(3, 4)` or `(x, y)`.
fn count_coordinate_pairs(lower: &str, consumed: &mut [bool]) -> usize {
    let bytes = lower.as_bytes();
    let mut count = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'(' {
            let window_end = (i + 24).min(bytes.len());
            if let Some(off) = bytes[i + 1..window_end].iter().position(|&b| b == b')') {
                let close = i + 1 + off;
                let inner = &lower[i + 1..close];
                let parts: Vec<&str> = inner.split(',').collect();
                if parts.len() == 2
                    && parts.iter().all(|p| coordinate_component(p))
                    && !consumed[i..=close].iter().any(|&c| c)
                {
                    consumed[i..=close].iter_mut().for_each(|c| *c = true);
                    count += 1;
                    i = close + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    count
}

const UNIT_WORDS: &[&str] = &[
    "pixels", "pixel", "px", "meters", "meter", "metres", "metre", "mm", "cm", "km", "m",
    "degrees", "degree", "deg", "\u{b0}", "units", "unit",
];

/// Counts numbers immediately followed by a length/angle unit, e.g. `3 m`,
/// `45 degrees`, `12px`.
fn count_unit_numbers(lower: &str, consumed: &mut [bool]) -> usize {
    let bytes = lower.as_bytes();
    let mut count = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() && (i == 0 || !is_word_byte(bytes[i - 1])) {
            let mut j = i + 1;
            while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                j += 1;
            }
            let mut k = j;
            if k < bytes.len() && bytes[k] == b' ' {
                k += 1;
            }
            let rest = &lower[k..];
            let unit = UNIT_WORDS.iter().find(|&&u| {
                rest.starts_with(u)
                    && rest[u.len()..].bytes().next().map_or(true, |b| !is_word_byte(b))
            });
            if let Some(&unit) = unit {
                let end = k + unit.len();
                if !consumed[i..end].iter().any(|&c| c) {
                    consumed[i..end].iter_mut().for_each(|c| *c = true);
                    count += 1;
                    i = end;
                    continue;
                }
            }
            i = j;
            continue;
        }
        i += 1;
    }
    count
}

/// Fraction of the reasoning trace covered by spatial anchors: matched
/// lexicon patterns (multi-word entries count once) divided by the
/// whitespace-token count, clamped to [0, 1]. Empty text yields 0.
pub fn anchor_ratio(text: &str, lexicon: &[String], numeric_anchors: bool) -> f64 {
    let word_count = text.split_whitespace().count();
    if word_count == 0 {
        return 0.0;
    }
    let lower = text.to_lowercase();
    let mut consumed = alloc::vec![false; lower.len()];
    let mut matches = 0usize;
    if numeric_anchors {
        matches += count_coordinate_pairs(&lower, &mut consumed);
        matches += count_unit_numbers(&lower, &mut consumed);
    }
    matches += sorted_longest_first(lexicon)
        .iter()
        .map(|p| count_matches(&lower, &mut consumed, p))
        .sum::<usize>();
    (matches as f64 / word_count as f64).min(1.0)
}

/// Duplicate sentences beyond their first occurrence. Sentences split on
/// terminal punctuation and newlines, normalized by case and whitespace;
/// sentences shorter than 3 words are ignored.
pub fn repeated_sentence_count(text: &str) -> usize {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for raw in text.split(['.', '!', '?', '\n']) {
        let normalized = raw.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
        if normalized.split_whitespace().count() < 3 {
            continue;
        }
        *seen.entry(normalized).or_insert(0) += 1;
    }
    seen.values().map(|&occ| occ.saturating_sub(1)).sum()
}

/// Evaluates all five rules in fixed order (answer correctness, length,
/// reconsider, repetition, anchor ratio), recording every failure.
pub fn filter_verdict(sample: &CotSample, cfg: &FilterConfig) -> FilterVerdict {
    let measurements = Measurements {
        length: sample.think_text.split_whitespace().count(),
        reconsider_count: reconsider_count(&sample.think_text, &cfg.reconsider_markers),
        repeated_sentence_count: repeated_sentence_count(&sample.think_text),
        anchor_ratio: anchor_ratio(&sample.think_text, &cfg.spatial_lexicon, cfg.numeric_anchors),
        answer_correct: sample.predicted_answer == Some(sample.reference_answer),
    };
    let mut failed_rules = Vec::new();
    if !measurements.answer_correct {
        failed_rules.push(RULE_ANSWER.to_string());
    }
    if measurements.length < cfg.min_len || measurements.length > cfg.max_len {
        failed_rules.push(RULE_LENGTH.to_string());
    }
    if measurements.reconsider_count > cfg.max_reconsider {
        failed_rules.push(RULE_RECONSIDER.to_string());
    }
    if measurements.repeated_sentence_count > cfg.max_repeated_sentences {
        failed_rules.push(RULE_REPETITION.to_string());
    }
    if measurements.anchor_ratio < cfg.min_anchor_ratio {
        failed_rules.push(RULE_SPATIAL.to_string());
    }
    FilterVerdict { keep: failed_rules.is_empty(), failed_rules, measurements }
}

/// Mean of each measurement over a subset of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMeasurements {
    pub length: f64,
    pub reconsider_count: f64,
    pub repeated_sentence_count: f64,
    pub anchor_ratio: f64,
}

fn mean_measurements<'a>(items: impl Iterator<Item = &'a Measurements>) -> Option<MeanMeasurements> {
    let mut n = 0usize;
    let mut acc = MeanMeasurements {
        length: 0.0,
        reconsider_count: 0.0,
        repeated_sentence_count: 0.0,
        anchor_ratio: 0.0,
    };
    for m in items {
        n += 1;
        acc.length += m.length as f64;
        acc.reconsider_count += m.reconsider_count as f64;
        acc.repeated_sentence_count += m.repeated_sentence_count as f64;
        acc.anchor_ratio += m.anchor_ratio;
    }
    if n == 0 {
        return None;
    }
    let n = n as f64;
    acc.length /= n;
    acc.reconsider_count /= n;
    acc.repeated_sentence_count /= n;
    acc.anchor_ratio /= n;
    Some(acc)
}

/// Per-source filtering summary. `before` averages over all samples of the
/// source, `before_correct_only` over the answer-correct subset (the two
/// orderings of the correctness gate), `after` over the kept samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceStats {
    pub source: String,
    pub total: usize,
    pub correct: usize,
    pub kept: usize,
    pub keep_rate: f64,
    pub keep_rate_given_correct: Option<f64>,
    pub before: MeanMeasurements,
    pub before_correct_only: Option<MeanMeasurements>,
    pub after: Option<MeanMeasurements>,
}

/// Per-source keep rates and before/after measurement means, in ascending
/// source order.
pub fn corpus_stats(items: &[(&CotSample, &FilterVerdict)]) -> Vec<SourceStats> {
    let mut by_source: BTreeMap<&str, Vec<&FilterVerdict>> = BTreeMap::new();
    for (sample, verdict) in items {
        by_source.entry(sample.source.as_str()).or_default().push(verdict);
    }
    by_source
        .into_iter()
        .map(|(source, verdicts)| {
            let total = verdicts.len();
            let kept = verdicts.iter().filter(|v| v.keep).count();
            let correct = verdicts.iter().filter(|v| v.measurements.answer_correct).count();
            SourceStats {
                source: source.to_string(),
                total,
                correct,
                kept,
                keep_rate: kept as f64 / total as f64,
                keep_rate_given_correct: (correct > 0).then(|| kept as f64 / correct as f64),
                before: mean_measurements(verdicts.iter().map(|v| &v.measurements))
                    .expect("group is non-empty"),
                before_correct_only: mean_measurements(
                    verdicts
                        .iter()
                        .filter(|v| v.measurements.answer_correct)
                        .map(|v| &v.measurements),
                ),
                after: mean_measurements(
                    verdicts.iter().filter(|v| v.keep).map(|v| &v.measurements),
                ),
            }
        })
        .collect()
}
