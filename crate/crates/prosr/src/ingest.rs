//! Rollout-log parsing: the canonical JSONL record schema, per-line
//! validation with line numbers and field paths, conversion into in-memory
//! rollouts, and the original/blank pairing protocol.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use prosr_core::diagnostics::{self, Condition, Rollout, RolloutPair};
use prosr_core::rewards;
use prosr_core::trajectory::{self, EntropyTrajectory, ThinkSpan};

use crate::workers::par_map;
use crate::{AppError, Result};

/// One line of a rollout log. Unknown fields are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub sample_id: String,
    pub condition: Condition,
    /// Required on at least one record per sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
    pub output_text: String,
    /// Precomputed per-token entropies; mutually exclusive with
    /// `token_probs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_entropies: Option<Vec<f64>>,
    /// Per-token probability distributions; entropies are computed here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probs: Option<Vec<Vec<f64>>>,
    /// Byte ranges of the tokens in `output_text`; required whenever a
    /// trajectory source is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_offsets: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
    /// Reserved for external KL regularization; carried, never interpreted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_logprobs: Option<Vec<f64>>,
}

fn validate_record(record: &RolloutRecord) -> std::result::Result<(), String> {
    if record.sample_id.is_empty() {
        return Err(String::from("sample_id: must be non-empty"));
    }
    if let Some(reference) = &record.reference_answer {
        let mut chars = reference.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if prosr_core::is_answer_letter(c) => {}
            _ => {
                return Err(format!(
                    "reference_answer: expected a single letter A-D, got {reference:?}"
                ))
            }
        }
    }
    let token_count = match (&record.token_entropies, &record.token_probs) {
        (Some(_), Some(_)) => {
            return Err(String::from(
                "token_entropies, token_probs: ambiguous trajectory source (exactly one allowed)",
            ))
        }
        (Some(e), None) => Some(e.len()),
        (None, Some(p)) => Some(p.len()),
        (None, None) => None,
    };
    match (token_count, &record.token_offsets) {
        (Some(_), None) => {
            return Err(String::from(
                "token_offsets: required when a trajectory source is given",
            ))
        }
        (Some(n), Some(offsets)) if offsets.len() != n => {
            return Err(format!(
                "token_offsets: length {} does not match the {} trajectory entries",
                offsets.len(),
                n
            ))
        }
        _ => {}
    }
    if let Some(offsets) = &record.token_offsets {
        let mut prev_end = 0usize;
        for (i, &(s, e)) in offsets.iter().enumerate() {
            if s > e || s < prev_end {
                return Err(format!("token_offsets[{i}]: ranges must be monotone, got ({s}, {e})"));
            }
            if e > record.output_text.len() {
                return Err(format!(
                    "token_offsets[{i}]: end {e} exceeds output_text length {}",
                    record.output_text.len()
                ));
            }
            prev_end = e;
        }
    }
    Ok(())
}

/// Parses and validates one JSONL line. Errors carry the field path.
pub fn parse_record(line: &str) -> std::result::Result<RolloutRecord, String> {
    let mut de = serde_json::Deserializer::from_str(line);
    let record: RolloutRecord =
        serde_path_to_error::deserialize(&mut de).map_err(|e| e.to_string())?;
    validate_record(&record)?;
    Ok(record)
}

/// Converts a validated record into the in-memory rollout form: extracts the
/// thinking span, slices (or computes) the entropy trajectory over it, and
/// parses the answer.
pub fn to_rollout(record: &RolloutRecord, min_span_len: usize) -> std::result::Result<Rollout, String> {
    let entropies: Option<Vec<f64>> = match (&record.token_entropies, &record.token_probs) {
        (Some(e), _) => Some(e.clone()),
        (None, Some(probs)) => {
            let mut out = Vec::with_capacity(probs.len());
            for (i, p) in probs.iter().enumerate() {
                out.push(
                    trajectory::entropy_from_distribution(p)
                        .map_err(|e| format!("token_probs[{i}]: {e}"))?,
                );
            }
            Some(out)
        }
        (None, None) => None,
    };
    let think_span = match (&record.token_offsets, &entropies) {
        (Some(offsets), Some(_)) => {
            trajectory::extract_think_span(&record.output_text, offsets, min_span_len)
        }
        _ => ThinkSpan::invalid(),
    };
    let trajectory = match (&entropies, think_span.valid) {
        (Some(values), true) => EntropyTrajectory::new(values[think_span.start..think_span.end].to_vec())
            .map_err(|e| format!("token_entropies: {e}"))?,
        _ => EntropyTrajectory::empty(),
    };
    Ok(Rollout {
        sample_id: record.sample_id.clone(),
        condition: record.condition,
        trajectory,
        think_span,
        answer: diagnostics::parse_answer(&record.output_text),
        format_ok: rewards::r_fmt(&record.output_text) == 1.0,
        raw_text: record.output_text.clone(),
    })
}

/// A parsed log line: the raw record plus its rollout view and line number.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRecord {
    pub line: usize,
    pub record: RolloutRecord,
    pub rollout: Rollout,
}

/// Reads a rollout JSONL file; blank lines are skipped. The first malformed
/// line aborts with its line number and field path.
pub fn load_rollout_log(path: &Path, min_span_len: usize, workers: usize) -> Result<Vec<LoadedRecord>> {
    let content = std::fs::read_to_string(path).map_err(AppError::io(path))?;
    let lines: Vec<(usize, &str)> = content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let parsed = par_map(&lines, workers, |&(line, text)| {
        parse_record(text)
            .and_then(|record| {
                let rollout = to_rollout(&record, min_span_len)?;
                Ok(LoadedRecord { line, record, rollout })
            })
            .map_err(|message| (line, message))
    });
    parsed
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|(line, message)| AppError::Parse { path: path.to_path_buf(), line, message })
}

/// A record excluded from pairing, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orphan {
    pub sample_id: String,
    pub condition: Condition,
    pub reason: String,
}

/// Pairing outcome: every valid record lands either in a pair or in the
/// orphan report.
#[derive(Debug, Clone, PartialEq)]
pub struct Paired {
    pub pairs: Vec<RolloutPair>,
    pub orphans: Vec<Orphan>,
}

/// Resolves one reference answer per sample; conflicting values are a hard
/// error, not a silent pick.
fn sample_reference(records: &[&LoadedRecord]) -> Result<Option<char>> {
    let mut resolved: Option<char> = None;
    for loaded in records {
        if let Some(reference) = &loaded.record.reference_answer {
            let c = reference.chars().next().expect("validated single letter");
            match resolved {
                None => resolved = Some(c),
                Some(prev) if prev != c => {
                    return Err(AppError::Input(format!(
                        "conflicting reference_answer for sample {}: {prev} vs {c}",
                        loaded.record.sample_id
                    )))
                }
                Some(_) => {}
            }
        }
    }
    Ok(resolved)
}

/// Joins records on sample_id into original/blank pairs. Samples violating
/// the exactly-one-of-each rule (or missing a reference answer) go to the
/// orphan report, one entry per record. Output order is ascending sample_id;
/// the result is invariant under permutation of input lines.
pub fn pair_rollouts(records: &[LoadedRecord]) -> Result<Paired> {
    let mut by_sample: BTreeMap<&str, Vec<&LoadedRecord>> = BTreeMap::new();
    for loaded in records {
        by_sample.entry(loaded.record.sample_id.as_str()).or_default().push(loaded);
    }
    let mut pairs = Vec::new();
    let mut orphans = Vec::new();
    for (sample_id, mut group) in by_sample {
        group.sort_by_key(|l| (l.record.condition == Condition::Blank, l.line));
        let reference = sample_reference(&group)?;
        let originals: Vec<&&LoadedRecord> =
            group.iter().filter(|l| l.record.condition == Condition::Original).collect();
        let blanks: Vec<&&LoadedRecord> =
            group.iter().filter(|l| l.record.condition == Condition::Blank).collect();
        let reason = if originals.len() > 1 {
            Some("duplicate original")
        } else if blanks.len() > 1 {
            Some("duplicate blank")
        } else if originals.is_empty() {
            Some("missing original")
        } else if blanks.is_empty() {
            Some("missing blank")
        } else if reference.is_none() {
            Some("missing reference_answer")
        } else {
            None
        };
        match reason {
            Some(reason) => {
                for loaded in group {
                    orphans.push(Orphan {
                        sample_id: String::from(sample_id),
                        condition: loaded.record.condition,
                        reason: String::from(reason),
                    });
                }
            }
            None => pairs.push(RolloutPair {
                sample_id: String::from(sample_id),
                original: originals[0].rollout.clone(),
                blank: blanks[0].rollout.clone(),
                reference_answer: reference.expect("checked above"),
            }),
        }
    }
    Ok(Paired { pairs, orphans })
}

/// One original rollout prepared for reward computation: its probe is its
/// own blank when present, else the unique blank of its GRPO group.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardUnit {
    pub original: Rollout,
    pub blank: Option<Rollout>,
    pub reference: char,
    pub group_id: Option<String>,
}

/// Prepares every original-condition record for reward computation, in
/// ascending (sample_id, line) order.
pub fn reward_units(records: &[LoadedRecord]) -> Result<Vec<RewardUnit>> {
    let mut by_sample: BTreeMap<&str, Vec<&LoadedRecord>> = BTreeMap::new();
    let mut group_blanks: BTreeMap<&str, Vec<&LoadedRecord>> = BTreeMap::new();
    for loaded in records {
        by_sample.entry(loaded.record.sample_id.as_str()).or_default().push(loaded);
        if loaded.record.condition == Condition::Blank {
            if let Some(group) = &loaded.record.group_id {
                group_blanks.entry(group.as_str()).or_default().push(loaded);
            }
        }
    }
    let mut units = Vec::new();
    for (sample_id, group) in &by_sample {
        let reference = match sample_reference(group)? {
            Some(reference) => reference,
            None => {
                if group.iter().any(|l| l.record.condition == Condition::Original) {
                    return Err(AppError::Input(format!(
                        "missing reference_answer for sample {sample_id}"
                    )));
                }
                continue;
            }
        };
        let sample_blanks: Vec<&&LoadedRecord> =
            group.iter().filter(|l| l.record.condition == Condition::Blank).collect();
        for loaded in group.iter().filter(|l| l.record.condition == Condition::Original) {
            let blank = if sample_blanks.len() == 1 {
                Some(sample_blanks[0].rollout.clone())
            } else if sample_blanks.is_empty() {
                loaded
                    .record
                    .group_id
                    .as_deref()
                    .and_then(|g| group_blanks.get(g))
                    .filter(|blanks| blanks.len() == 1)
                    .map(|blanks| blanks[0].rollout.clone())
            } else {
                None
            };
            units.push(RewardUnit {
                original: loaded.rollout.clone(),
                blank,
                reference,
                group_id: loaded.record.group_id.clone(),
            });
        }
    }
    Ok(units)
}

/// Serializes a core rollout back into the canonical record schema,
/// synthesizing per-token byte offsets inside the think block. Inverse of
/// `to_rollout` up to the bookkeeping tokens covering the tags.
pub fn record_from_rollout(
    rollout: &Rollout,
    reference: char,
    group_id: Option<&str>,
) -> RolloutRecord {
    let text = &rollout.raw_text;
    let n = rollout.trajectory.len();
    let (content_start, content_end) = match (text.find("<think>"), text.find("</think>")) {
        (Some(open), Some(close)) if open + 7 <= close => (open + 7, close),
        _ => (0, 0),
    };
    let width = content_end.saturating_sub(content_start);
    let (offsets, entropies) = if n > 0 && width >= n {
        let mut offsets = Vec::with_capacity(n + 2);
        let mut entropies = Vec::with_capacity(n + 2);
        offsets.push((0, content_start));
        entropies.push(0.0);
        for i in 0..n {
            offsets.push((content_start + i * width / n, content_start + (i + 1) * width / n));
            entropies.push(rollout.trajectory.values()[i]);
        }
        offsets.push((content_end, text.len()));
        entropies.push(0.0);
        (Some(offsets), Some(entropies))
    } else {
        (None, None)
    };
    RolloutRecord {
        sample_id: rollout.sample_id.clone(),
        condition: rollout.condition,
        reference_answer: Some(String::from(reference)),
        output_text: text.clone(),
        token_entropies: entropies,
        token_probs: None,
        token_offsets: offsets,
        group_id: group_id.map(String::from),
        ref_logprobs: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(sample_id: &str, condition: &str) -> String {
        format!(
            r#"{{"sample_id":"{sample_id}","condition":"{condition}","reference_answer":"A","output_text":"<think>abcdefghij</think><answer>A</answer>"}}"#
        )
    }

    fn with_trajectory(sample_id: &str, condition: &str) -> String {
        // 10 single-byte tokens inside the think block (bytes 7..17).
        let offsets: Vec<String> = (7..17).map(|i| format!("[{i},{}]", i + 1)).collect();
        let entropies: Vec<String> = (0..10).map(|i| format!("0.{i}")).collect();
        format!(
            r#"{{"sample_id":"{sample_id}","condition":"{condition}","reference_answer":"B","output_text":"<think>abcdefghij</think><answer>B</answer>","token_entropies":[{}],"token_offsets":[{}]}}"#,
            entropies.join(","),
            offsets.join(",")
        )
    }

    #[test]
    fn minimal_record_parses() {
        let record = parse_record(&minimal("s1", "original")).unwrap();
        assert_eq!(record.sample_id, "s1");
        assert_eq!(record.condition, Condition::Original);
        let rollout = to_rollout(&record, 10).unwrap();
        assert_eq!(rollout.answer, Some('A'));
        assert!(rollout.format_ok);
        // No trajectory source: span invalid, trajectory empty.
        assert!(!rollout.has_trajectory());
    }

    #[test]
    fn wrong_case_condition_names_the_field() {
        let err = parse_record(&minimal("s1", "Blank")).unwrap_err();
        assert!(err.contains("condition"), "error was: {err}");
    }

    #[test]
    fn both_trajectory_sources_rejected() {
        let line = r#"{"sample_id":"s1","condition":"original","output_text":"x","token_entropies":[0.1],"token_probs":[[1.0]],"token_offsets":[[0,1]]}"#;
        let err = parse_record(line).unwrap_err();
        assert!(err.contains("ambiguous trajectory source"), "error was: {err}");
    }

    #[test]
    fn offsets_required_with_entropies() {
        let line = r#"{"sample_id":"s1","condition":"original","output_text":"x","token_entropies":[0.1]}"#;
        let err = parse_record(line).unwrap_err();
        assert!(err.contains("token_offsets"), "error was: {err}");
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let line = r#"{"sample_id":"s1","condition":"blank","output_text":"x","trainer_step":12}"#;
        assert!(parse_record(line).is_ok());
    }

    #[test]
    fn trajectory_slices_to_think_span() {
        let record = parse_record(&with_trajectory("s1", "original")).unwrap();
        let rollout = to_rollout(&record, 10).unwrap();
        assert!(rollout.has_trajectory());
        assert_eq!(rollout.trajectory.len(), 10);
        assert_eq!(rollout.trajectory.values()[3], 0.3);
    }

    #[test]
    fn probs_converted_to_entropies() {
        let line = r#"{"sample_id":"s1","condition":"original","output_text":"<think>abcdefghij</think><answer>A</answer>","token_probs":[[0.5,0.5],[1.0],[1.0],[1.0],[1.0],[1.0],[1.0],[1.0],[1.0],[1.0]],"token_offsets":[[7,8],[8,9],[9,10],[10,11],[11,12],[12,13],[13,14],[14,15],[15,16],[16,17]]}"#;
        let record = parse_record(line).unwrap();
        let rollout = to_rollout(&record, 10).unwrap();
        assert!((rollout.trajectory.values()[0] - core::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(rollout.trajectory.values()[1], 0.0);
    }

    #[test]
    fn parse_serialize_parse_is_fixpoint() {
        for line in [minimal("s1", "original"), with_trajectory("s2", "blank")] {
            let record = parse_record(&line).unwrap();
            let serialized = serde_json::to_string(&record).unwrap();
            assert_eq!(parse_record(&serialized).unwrap(), record);
        }
    }

    fn load(lines: &[String]) -> Vec<LoadedRecord> {
        lines
            .iter()
            .enumerate()
            .map(|(i, line)| {
                let record = parse_record(line).unwrap();
                let rollout = to_rollout(&record, 10).unwrap();
                LoadedRecord { line: i + 1, record, rollout }
            })
            .collect()
    }

    #[test]
    fn pairing_happy_path_and_orphans() {
        let records = load(&[
            minimal("s1", "original"),
            minimal("s1", "blank"),
            minimal("s2", "original"),
            minimal("s3", "original"),
            minimal("s3", "original"),
            minimal("s3", "blank"),
        ]);
        let paired = pair_rollouts(&records).unwrap();
        assert_eq!(paired.pairs.len(), 1);
        assert_eq!(paired.pairs[0].sample_id, "s1");
        assert_eq!(paired.orphans.len(), 4);
        assert_eq!(paired.orphans[0].reason, "missing blank");
        assert!(paired.orphans[1..].iter().all(|o| o.reason == "duplicate original"));
        // Accounting: every valid record is a pair member or an orphan.
        assert_eq!(paired.pairs.len() * 2 + paired.orphans.len(), records.len());
    }

    #[test]
    fn pairing_is_permutation_invariant() {
        let mut lines = vec![
            minimal("s1", "original"),
            minimal("s1", "blank"),
            minimal("s2", "blank"),
            minimal("s2", "original"),
            minimal("s3", "original"),
        ];
        let forward = pair_rollouts(&load(&lines)).unwrap();
        lines.reverse();
        let backward = pair_rollouts(&load(&lines)).unwrap();
        assert_eq!(forward.pairs, backward.pairs);
        assert_eq!(forward.orphans, backward.orphans);
    }

    #[test]
    fn conflicting_reference_is_an_error() {
        let lines = [
            minimal("s1", "original"),
            minimal("s1", "blank").replace(r#""reference_answer":"A""#, r#""reference_answer":"B""#),
        ];
        let err = pair_rollouts(&load(&lines)).unwrap_err();
        assert!(err.to_string().contains("conflicting reference_answer"));
    }

    #[test]
    fn missing_reference_orphans_the_pair() {
        let lines = [
            minimal("s1", "original").replace(r#""reference_answer":"A","#, ""),
            minimal("s1", "blank").replace(r#""reference_answer":"A","#, ""),
        ];
        let paired = pair_rollouts(&load(&lines)).unwrap();
        assert!(paired.pairs.is_empty());
        assert!(paired.orphans.iter().all(|o| o.reason == "missing reference_answer"));
    }

    #[test]
    fn reward_units_use_sample_then_group_probe() {
        let mut group_blank = minimal("s9", "blank");
        group_blank = group_blank.replace(r#""output_text""#, r#""group_id":"g1","output_text""#);
        let mut grouped_orig = minimal("s2", "original");
        grouped_orig = grouped_orig.replace(r#""output_text""#, r#""group_id":"g1","output_text""#);
        let records = load(&[
            minimal("s1", "original"),
            minimal("s1", "blank"),
            grouped_orig,
            group_blank,
            minimal("s3", "original"),
        ]);
        let units = reward_units(&records).unwrap();
        assert_eq!(units.len(), 3);
        // s1 uses its own blank, s2 the shared group probe, s3 none.
        assert!(units[0].blank.is_some());
        assert!(units[1].blank.is_some());
        assert_eq!(units[1].group_id.as_deref(), Some("g1"));
        assert!(units[2].blank.is_none());
    }

    #[test]
    fn record_from_rollout_round_trips_through_to_rollout() {
        use prosr_core::simulator::{generate_pairs, EnvConfig, PolicyParams};
        let params = PolicyParams { g: 0.5, d: 0.5, a: 0.5 };
        let env = EnvConfig { seed: 42, ..EnvConfig::default() };
        for pair in generate_pairs(&params, &env, 20) {
            for (rollout, group) in [(&pair.original, None), (&pair.blank, Some("g0"))] {
                let record = record_from_rollout(rollout, pair.reference_answer, group);
                let line = serde_json::to_string(&record).unwrap();
                let reparsed = parse_record(&line).unwrap();
                let back = to_rollout(&reparsed, 10).unwrap();
                assert_eq!(back.trajectory, rollout.trajectory);
                assert_eq!(back.answer, rollout.answer);
                assert_eq!(back.raw_text, rollout.raw_text);
                assert!(back.think_span.valid);
            }
        }
    }
}
