//! Paired-rollout diagnostics: answer-level and trajectory-level metrics over
//! matched original/blank-probe rollouts, the per-sample failure-group
//! partition, and the threshold-sensitivity scan.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::is_answer_letter;
use crate::trajectory::{
    self, EntropyTrajectory, ThinkSpan, DEFAULT_EPS, DEFAULT_RESAMPLE_LEN, DEFAULT_SEGMENT_RATIOS,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("no rollout pairs to diagnose")]
    NoPairs,
    #[error("all pairs were excluded from trajectory analysis (invalid spans)")]
    AllPairsExcluded,
    #[error("no original rollouts with a valid trajectory")]
    NoValidOriginals,
    #[error("empty threshold grid")]
    EmptyGrid,
}

/// Which conditioning the rollout was sampled under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Original,
    Blank,
}

/// One sampled generation, reduced to the observables the diagnostics need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub sample_id: String,
    pub condition: Condition,
    /// Entropy values covering exactly the think-span tokens; empty when no
    /// trajectory data was logged or the span is invalid.
    pub trajectory: EntropyTrajectory,
    pub think_span: ThinkSpan,
    pub answer: Option<char>,
    pub format_ok: bool,
    pub raw_text: String,
}

impl Rollout {
    /// True when the think span is valid and trajectory values are available.
    pub fn has_trajectory(&self) -> bool {
        self.think_span.valid && !self.trajectory.is_empty()
    }
}

/// Matched original/blank rollouts for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutPair {
    pub sample_id: String,
    pub original: Rollout,
    pub blank: Rollout,
    pub reference_answer: char,
}

/// Tunables for the diagnostic computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    /// Fixed length trajectories are resampled to before comparison.
    pub resample_len: usize,
    /// Denominator guard for l1 normalization.
    pub eps: f64,
    /// Tolerance margin for the tail re-rise statistic.
    pub margin_m: f64,
    /// Early/middle/late partition ratios.
    pub segment_ratios: [f64; 3],
    /// Thresholds the late-rise rate is reported at.
    pub lrr_taus: Vec<f64>,
    /// Similarity cutoff for the spurious-grounding flag.
    pub nts_cut: f64,
    /// Tail threshold for the tail-instability flag (the headline LRR tau).
    pub lrr_tau: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            resample_len: DEFAULT_RESAMPLE_LEN,
            eps: DEFAULT_EPS,
            margin_m: 0.1,
            segment_ratios: DEFAULT_SEGMENT_RATIOS,
            lrr_taus: alloc::vec![0.05, 0.1, 0.2],
            nts_cut: 0.4,
            lrr_tau: 0.1,
        }
    }
}

/// Failure-group label for one sample. The four labels partition the samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureGroup {
    Clean,
    SpuriousOnly,
    TailOnly,
    Both,
}

/// Per-sample diagnostic record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostics {
    pub sample_id: String,
    pub original_answer: Option<char>,
    pub blank_answer: Option<char>,
    pub same_answer: bool,
    pub original_correct: bool,
    pub blank_correct: bool,
    /// Trajectory similarity; `None` when either span is invalid.
    pub similarity: Option<f64>,
    /// Mid/late segment means of the original rollout, when computable.
    pub h_mid: Option<f64>,
    pub h_late: Option<f64>,
    /// Tail re-rise beyond the margin, when computable.
    pub delta_tail: Option<f64>,
    pub group: FailureGroup,
}

/// One entry of the late-rise-rate report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrrEntry {
    pub tau: f64,
    pub rate: f64,
}

/// Sample counts per failure group, in the report's fixed row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupCounts {
    pub clean: usize,
    pub spurious_only: usize,
    pub tail_only: usize,
    pub both: usize,
}

/// Aggregate diagnostics plus the per-sample table they are derived from.
///
/// Aggregates are deterministic ordered reductions over the per-sample
/// records in ascending `sample_id` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub n: usize,
    pub a_img: f64,
    pub a_blank: f64,
    pub sar: f64,
    pub nts: f64,
    /// Pairs excluded from the similarity mean because of invalid spans.
    pub nts_excluded: usize,
    pub lrr: Vec<LrrEntry>,
    /// Original rollouts the late-rise rate is computed over.
    pub lrr_included: usize,
    pub group_counts: GroupCounts,
    pub per_sample: Vec<SampleDiagnostics>,
}

/// Parses the final answer letter: the last well-formed
/// `<answer>X</answer>` occurrence with `X` in A-D.
pub fn parse_answer(text: &str) -> Option<char> {
    const OPEN: &str = "<answer>";
    const CLOSE: &str = "</answer>";
    let mut found = None;
    for (i, _) in text.match_indices(OPEN) {
        let rest = &text[i + OPEN.len()..];
        let mut chars = rest.chars();
        if let Some(c) = chars.next() {
            if is_answer_letter(c) && chars.as_str().starts_with(CLOSE) {
                found = Some(c);
            }
        }
    }
    found
}

/// Fraction of pairs whose blank-probe answer matches the reference.
/// Unparsed answers never match.
pub fn blank_accuracy(pairs: &[RolloutPair]) -> Result<f64, DiagnosticsError> {
    if pairs.is_empty() {
        return Err(DiagnosticsError::NoPairs);
    }
    let hits = pairs.iter().filter(|p| p.blank.answer == Some(p.reference_answer)).count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Fraction of pairs whose original and blank answers coincide, both parsed.
/// A pair with either answer unparsed counts as different.
pub fn same_answer_rate(pairs: &[RolloutPair]) -> Result<f64, DiagnosticsError> {
    if pairs.is_empty() {
        return Err(DiagnosticsError::NoPairs);
    }
    let hits = pairs
        .iter()
        .filter(|p| matches!((p.original.answer, p.blank.answer), (Some(a), Some(b)) if a == b))
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Similarity of two trajectory shapes: `1 - l1_distance / 2` between the
/// resampled, l1-normalized views. `None` when either side has no valid
/// trajectory.
pub fn trajectory_similarity(
    a: &Rollout,
    b: &Rollout,
    resample_len: usize,
    eps: f64,
) -> Option<f64> {
    if !a.has_trajectory() || !b.has_trajectory() {
        return None;
    }
    let za = trajectory::normalized_view(&a.trajectory, resample_len, eps).ok()?;
    let zb = trajectory::normalized_view(&b.trajectory, resample_len, eps).ok()?;
    Some(similarity_of_views(&za.values(), &zb.values()))
}

/// `1 - l1/2` between two already-normalized views of equal length, clamped
/// to [0, 1].
pub fn similarity_of_views(za: &[f64], zb: &[f64]) -> f64 {
    let l1: f64 = za.iter().zip(zb).map(|(x, y)| (x - y).abs()).sum();
    (1.0 - 0.5 * l1).clamp(0.0, 1.0)
}

/// Mean trajectory similarity over pairs with both spans valid; also returns
/// the excluded-pair count.
pub fn nts(
    pairs: &[RolloutPair],
    resample_len: usize,
    eps: f64,
) -> Result<(f64, usize), DiagnosticsError> {
    if pairs.is_empty() {
        return Err(DiagnosticsError::NoPairs);
    }
    let mut sum = 0.0;
    let mut included = 0usize;
    for pair in pairs {
        if let Some(s) = trajectory_similarity(&pair.original, &pair.blank, resample_len, eps) {
            sum += s;
            included += 1;
        }
    }
    if included == 0 {
        return Err(DiagnosticsError::AllPairsExcluded);
    }
    Ok((sum / included as f64, pairs.len() - included))
}

/// Fraction of original-condition rollouts whose tail re-rise exceeds `tau`.
/// Only rollouts with a valid trajectory of length >= 3 are counted.
pub fn late_rise_rate(
    rollouts: &[&Rollout],
    margin: f64,
    tau: f64,
    segment_ratios: [f64; 3],
) -> Result<f64, DiagnosticsError> {
    let mut included = 0usize;
    let mut exceed = 0usize;
    for r in rollouts {
        if r.condition != Condition::Original || !r.has_trajectory() {
            continue;
        }
        if let Ok(stats) = trajectory::segment_means(&r.trajectory, segment_ratios) {
            included += 1;
            if trajectory::tail_delta(&stats, margin) > tau {
                exceed += 1;
            }
        }
    }
    if included == 0 {
        return Err(DiagnosticsError::NoValidOriginals);
    }
    Ok(exceed as f64 / included as f64)
}

/// Assigns a failure-group label from the per-sample flags: the spurious flag
/// fires on same-answer pairs with similarity strictly above `nts_cut`, the
/// tail flag on tail re-rise strictly above `lrr_tau`.
pub fn failure_group(
    same_answer: bool,
    similarity: Option<f64>,
    delta_tail: Option<f64>,
    nts_cut: f64,
    lrr_tau: f64,
) -> FailureGroup {
    let spurious = same_answer && similarity.is_some_and(|s| s > nts_cut);
    let tail = delta_tail.is_some_and(|d| d > lrr_tau);
    match (spurious, tail) {
        (false, false) => FailureGroup::Clean,
        (true, false) => FailureGroup::SpuriousOnly,
        (false, true) => FailureGroup::TailOnly,
        (true, true) => FailureGroup::Both,
    }
}

/// Exceedance curves over cutoff grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScan {
    /// (cutoff, fraction of similarities strictly above it).
    pub similarity_curve: Vec<(f64, f64)>,
    /// (margin, fraction of samples with positive tail re-rise at it).
    pub margin_curve: Vec<(f64, f64)>,
}

/// Exceedance-rate curves: for each similarity cutoff, the fraction of
/// samples with similarity above it; for each margin, the fraction whose
/// late-minus-mid gap exceeds it. Both curves are monotone non-increasing.
pub fn threshold_scan(
    similarities: &[f64],
    tail_gaps: &[f64],
    cutoff_grid: &[f64],
    margin_grid: &[f64],
) -> Result<ThresholdScan, DiagnosticsError> {
    if cutoff_grid.is_empty() || margin_grid.is_empty() {
        return Err(DiagnosticsError::EmptyGrid);
    }
    let exceedance = |values: &[f64], cut: f64| {
        if values.is_empty() {
            0.0
        } else {
            values.iter().filter(|&&v| v > cut).count() as f64 / values.len() as f64
        }
    };
    Ok(ThresholdScan {
        similarity_curve: cutoff_grid.iter().map(|&c| (c, exceedance(similarities, c))).collect(),
        margin_curve: margin_grid.iter().map(|&m| (m, exceedance(tail_gaps, m))).collect(),
    })
}

/// Computes the full diagnostic report over a set of pairs.
///
/// Pairs are processed in ascending `sample_id` order so the aggregates and
/// the per-sample table are bit-stable across runs and thread counts.
pub fn compute_report(
    pairs: &[RolloutPair],
    cfg: &DiagnosticsConfig,
) -> Result<DiagnosticReport, DiagnosticsError> {
    if pairs.is_empty() {
        return Err(DiagnosticsError::NoPairs);
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].sample_id.cmp(&pairs[b].sample_id));

    let mut per_sample = Vec::with_capacity(pairs.len());
    for &i in &order {
        let pair = &pairs[i];
        let same_answer = matches!(
            (pair.original.answer, pair.blank.answer),
            (Some(a), Some(b)) if a == b
        );
        let similarity =
            trajectory_similarity(&pair.original, &pair.blank, cfg.resample_len, cfg.eps);
        let (h_mid, h_late, delta_tail) = if pair.original.has_trajectory() {
            match trajectory::segment_means(&pair.original.trajectory, cfg.segment_ratios) {
                Ok(stats) => (
                    Some(stats.h_mid),
                    Some(stats.h_late),
                    Some(trajectory::tail_delta(&stats, cfg.margin_m)),
                ),
                Err(_) => (None, None, None),
            }
        } else {
            (None, None, None)
        };
        per_sample.push(SampleDiagnostics {
            sample_id: pair.sample_id.clone(),
            original_answer: pair.original.answer,
            blank_answer: pair.blank.answer,
            same_answer,
            original_correct: pair.original.answer == Some(pair.reference_answer),
            blank_correct: pair.blank.answer == Some(pair.reference_answer),
            similarity,
            h_mid,
            h_late,
            delta_tail,
            group: failure_group(same_answer, similarity, delta_tail, cfg.nts_cut, cfg.lrr_tau),
        });
    }

    let n = per_sample.len();
    let frac = |count: usize| count as f64 / n as f64;
    let a_img = frac(per_sample.iter().filter(|s| s.original_correct).count());
    let a_blank = frac(per_sample.iter().filter(|s| s.blank_correct).count());
    let sar = frac(per_sample.iter().filter(|s| s.same_answer).count());

    let sims: Vec<f64> = per_sample.iter().filter_map(|s| s.similarity).collect();
    if sims.is_empty() {
        return Err(DiagnosticsError::AllPairsExcluded);
    }
    let nts_value = sims.iter().sum::<f64>() / sims.len() as f64;
    let nts_excluded = n - sims.len();

    let deltas: Vec<f64> = per_sample.iter().filter_map(|s| s.delta_tail).collect();
    if deltas.is_empty() {
        return Err(DiagnosticsError::NoValidOriginals);
    }
    let lrr = cfg
        .lrr_taus
        .iter()
        .map(|&tau| LrrEntry {
            tau,
            rate: deltas.iter().filter(|&&d| d > tau).count() as f64 / deltas.len() as f64,
        })
        .collect();

    let mut group_counts = GroupCounts::default();
    for s in &per_sample {
        match s.group {
            FailureGroup::Clean => group_counts.clean += 1,
            FailureGroup::SpuriousOnly => group_counts.spurious_only += 1,
            FailureGroup::TailOnly => group_counts.tail_only += 1,
            FailureGroup::Both => group_counts.both += 1,
        }
    }

    Ok(DiagnosticReport {
        n,
        a_img,
        a_blank,
        sar,
        nts: nts_value,
        nts_excluded,
        lrr,
        lrr_included: deltas.len(),
        group_counts,
        per_sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::EntropyTrajectory;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rollout(id: &str, condition: Condition, values: &[f64], answer: Option<char>) -> Rollout {
        Rollout {
            sample_id: String::from(id),
            condition,
            trajectory: EntropyTrajectory::new(values.to_vec()).unwrap(),
            think_span: ThinkSpan { start: 0, end: values.len(), valid: !values.is_empty() },
            answer,
            format_ok: answer.is_some(),
            raw_text: String::new(),
        }
    }

    fn pair(
        id: &str,
        orig_vals: &[f64],
        blank_vals: &[f64],
        orig_ans: Option<char>,
        blank_ans: Option<char>,
        reference: char,
    ) -> RolloutPair {
        RolloutPair {
            sample_id: String::from(id),
            original: rollout(id, Condition::Original, orig_vals, orig_ans),
            blank: rollout(id, Condition::Blank, blank_vals, blank_ans),
            reference_answer: reference,
        }
    }

    #[test]
    fn parse_answer_direct_match() {
        assert_eq!(parse_answer("<think>x</think><answer>B</answer>"), Some('B'));
    }

    #[test]
    fn parse_answer_out_of_alphabet() {
        assert_eq!(parse_answer("<answer>E</answer>"), None);
    }

    #[test]
    fn parse_answer_takes_last_well_formed() {
        // Oracle: scan all matches, take the last.
        assert_eq!(parse_answer("<answer>A</answer> junk <answer>C</answer>"), Some('C'));
        assert_eq!(parse_answer("<answer>A</answer> junk <answer>E</answer>"), Some('A'));
        assert_eq!(parse_answer("no answer here"), None);
    }

    #[test]
    fn blank_accuracy_direct_count() {
        let pairs = [
            pair("a", &[1.0; 12], &[1.0; 12], Some('A'), Some('A'), 'A'),
            pair("b", &[1.0; 12], &[1.0; 12], Some('B'), Some('B'), 'C'),
        ];
        assert_abs_diff_eq!(blank_accuracy(&pairs).unwrap(), 0.5);
    }

    #[test]
    fn blank_accuracy_unparsed_never_matches() {
        let pairs = [pair("a", &[1.0; 12], &[1.0; 12], Some('A'), None, 'A')];
        assert_eq!(blank_accuracy(&pairs).unwrap(), 0.0);
    }

    #[test]
    fn blank_accuracy_perfect_shortcut() {
        let pairs = [
            pair("a", &[1.0; 12], &[1.0; 12], Some('A'), Some('A'), 'A'),
            pair("b", &[1.0; 12], &[1.0; 12], Some('C'), Some('C'), 'C'),
        ];
        assert_eq!(blank_accuracy(&pairs).unwrap(), 1.0);
        assert_eq!(blank_accuracy(&[]), Err(DiagnosticsError::NoPairs));
    }

    #[test]
    fn same_answer_rate_cases() {
        let pairs = [
            pair("a", &[1.0; 12], &[1.0; 12], Some('A'), Some('A'), 'B'),
            pair("b", &[1.0; 12], &[1.0; 12], Some('A'), Some('B'), 'B'),
            // Unparsed counts as different.
            pair("c", &[1.0; 12], &[1.0; 12], Some('A'), None, 'B'),
        ];
        assert_abs_diff_eq!(same_answer_rate(&pairs).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn similarity_identical_trajectories() {
        let a = rollout("a", Condition::Original, &[1.0, 2.0, 3.0], Some('A'));
        let b = rollout("a", Condition::Blank, &[1.0, 2.0, 3.0], Some('A'));
        assert_abs_diff_eq!(trajectory_similarity(&a, &b, 8, 1e-8).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn similarity_disjoint_support() {
        let a = rollout("a", Condition::Original, &[1.0, 0.0], Some('A'));
        let b = rollout("a", Condition::Blank, &[0.0, 1.0], Some('A'));
        assert_abs_diff_eq!(trajectory_similarity(&a, &b, 2, 1e-12).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn similarity_hand_l1_distance() {
        // z_a = [1, 0], z_b = [0.5, 0.5]: l1 = 1, similarity = 0.5.
        let a = rollout("a", Condition::Original, &[1.0, 0.0], Some('A'));
        let b = rollout("a", Condition::Blank, &[0.5, 0.5], Some('A'));
        assert_abs_diff_eq!(trajectory_similarity(&a, &b, 2, 1e-12).unwrap(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn similarity_undefined_on_invalid_span() {
        let a = rollout("a", Condition::Original, &[1.0, 0.0], Some('A'));
        let mut b = rollout("a", Condition::Blank, &[0.5, 0.5], Some('A'));
        b.think_span.valid = false;
        assert_eq!(trajectory_similarity(&a, &b, 2, 1e-12), None);
    }

    #[test]
    fn nts_mixed_mean() {
        let pairs = [
            pair("a", &[1.0, 2.0], &[1.0, 2.0], Some('A'), Some('A'), 'A'),
            pair("b", &[1.0, 0.0], &[0.5, 0.5], Some('A'), Some('A'), 'A'),
            pair("c", &[1.0, 0.0], &[0.0, 1.0], Some('A'), Some('A'), 'A'),
        ];
        let (value, excluded) = nts(&pairs, 2, 1e-12).unwrap();
        assert_abs_diff_eq!(value, 0.5, epsilon = 1e-9);
        assert_eq!(excluded, 0);
    }

    #[test]
    fn nts_reports_exclusions_and_errors_when_all_excluded() {
        let mut p1 = pair("a", &[1.0, 2.0], &[1.0, 2.0], Some('A'), Some('A'), 'A');
        p1.blank.think_span.valid = false;
        let p2 = pair("b", &[1.0, 0.0], &[1.0, 0.0], Some('A'), Some('A'), 'A');
        let (_, excluded) = nts(&[p1.clone(), p2], 2, 1e-12).unwrap();
        assert_eq!(excluded, 1);
        assert_eq!(nts(&[p1], 2, 1e-12), Err(DiagnosticsError::AllPairsExcluded));
    }

    #[test]
    fn late_rise_rate_flat_trajectories() {
        let rollouts = [
            rollout("a", Condition::Original, &[0.5; 10], Some('A')),
            rollout("b", Condition::Original, &[0.5; 10], Some('A')),
        ];
        let refs: Vec<&Rollout> = rollouts.iter().collect();
        assert_eq!(late_rise_rate(&refs, 0.1, 0.1, DEFAULT_SEGMENT_RATIOS).unwrap(), 0.0);
    }

    #[test]
    fn late_rise_rate_counts_exceeding_rollouts() {
        // [1..10] has delta_tail = 3.4 at m = 0.1 (from the segment-means case).
        let rising: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let rollouts = [
            rollout("a", Condition::Original, &rising, Some('A')),
            rollout("b", Condition::Original, &[0.5; 10], Some('A')),
            rollout("c", Condition::Original, &[0.5; 10], Some('A')),
            rollout("d", Condition::Original, &[0.5; 10], Some('A')),
        ];
        let refs: Vec<&Rollout> = rollouts.iter().collect();
        assert_abs_diff_eq!(late_rise_rate(&refs, 0.1, 0.1, DEFAULT_SEGMENT_RATIOS).unwrap(), 0.25);
        // Threshold above every tail value.
        assert_eq!(late_rise_rate(&refs, 0.1, 5.0, DEFAULT_SEGMENT_RATIOS).unwrap(), 0.0);
    }

    #[test]
    fn late_rise_rate_skips_blank_condition() {
        let rollouts = [rollout("a", Condition::Blank, &[0.5; 10], Some('A'))];
        let refs: Vec<&Rollout> = rollouts.iter().collect();
        assert_eq!(
            late_rise_rate(&refs, 0.1, 0.1, DEFAULT_SEGMENT_RATIOS),
            Err(DiagnosticsError::NoValidOriginals)
        );
    }

    #[test]
    fn failure_group_predicates() {
        assert_eq!(
            failure_group(true, Some(0.9), Some(0.0), 0.4, 0.1),
            FailureGroup::SpuriousOnly
        );
        assert_eq!(failure_group(false, Some(0.9), Some(0.5), 0.4, 0.1), FailureGroup::TailOnly);
        assert_eq!(failure_group(false, Some(0.1), Some(0.0), 0.4, 0.1), FailureGroup::Clean);
        assert_eq!(failure_group(true, Some(0.9), Some(0.5), 0.4, 0.1), FailureGroup::Both);
        // Strict inequality at the similarity boundary.
        assert_eq!(failure_group(true, Some(0.4), Some(0.0), 0.4, 0.1), FailureGroup::Clean);
    }

    #[test]
    fn threshold_scan_bounds_and_counts() {
        let sims = [0.2, 0.5, 0.8];
        let scan = threshold_scan(&sims, &[0.0], &[0.0, 0.4, 1.0], &[0.0]).unwrap();
        assert_eq!(scan.similarity_curve[0].1, 1.0);
        assert_abs_diff_eq!(scan.similarity_curve[1].1, 2.0 / 3.0);
        assert_eq!(scan.similarity_curve[2].1, 0.0);
        assert_eq!(
            threshold_scan(&sims, &[0.0], &[], &[0.0]),
            Err(DiagnosticsError::EmptyGrid)
        );
    }

    #[test]
    fn report_aggregates_match_per_sample() {
        let pairs = [
            pair("b", &[1.0; 12], &[1.0; 12], Some('A'), Some('A'), 'A'),
            pair("a", &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                 &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
                 Some('A'), Some('B'), 'B'),
        ];
        let report = compute_report(&pairs, &DiagnosticsConfig::default()).unwrap();
        assert_eq!(report.n, 2);
        // Sorted by sample_id.
        assert_eq!(report.per_sample[0].sample_id, "a");
        let recomputed_sar = report.per_sample.iter().filter(|s| s.same_answer).count() as f64
            / report.n as f64;
        assert_eq!(report.sar, recomputed_sar);
        let total = report.group_counts.clean
            + report.group_counts.spurious_only
            + report.group_counts.tail_only
            + report.group_counts.both;
        assert_eq!(total, report.n);
    }

    proptest! {
        #[test]
        fn nts_symmetric_and_scale_invariant(
            a in prop::collection::vec(0.01f64..5.0, 12..40),
            b in prop::collection::vec(0.01f64..5.0, 12..40),
            scale in 0.1f64..10.0
        ) {
            let ra = rollout("x", Condition::Original, &a, Some('A'));
            let rb = rollout("x", Condition::Blank, &b, Some('A'));
            let s_ab = trajectory_similarity(&ra, &rb, 64, 1e-8).unwrap();
            let s_ba = trajectory_similarity(&rb, &ra, 64, 1e-8).unwrap();
            prop_assert!((s_ab - s_ba).abs() < 1e-12);

            let scaled: Vec<f64> = a.iter().map(|v| v * scale).collect();
            let ra_scaled = rollout("x", Condition::Original, &scaled, Some('A'));
            let s_scaled = trajectory_similarity(&ra_scaled, &rb, 64, 1e-8).unwrap();
            prop_assert!((s_ab - s_scaled).abs() < 1e-6);
            prop_assert!((0.0..=1.0).contains(&s_ab));
        }

        #[test]
        fn threshold_scan_monotone_non_increasing(
            sims in prop::collection::vec(0.0f64..1.0, 1..100),
            gaps in prop::collection::vec(-1.0f64..2.0, 1..100)
        ) {
            let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
            let scan = threshold_scan(&sims, &gaps, &grid, &grid).unwrap();
            for w in scan.similarity_curve.windows(2) {
                prop_assert!(w[0].1 >= w[1].1);
            }
            for w in scan.margin_curve.windows(2) {
                prop_assert!(w[0].1 >= w[1].1);
            }
        }
    }
}
