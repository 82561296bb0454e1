//! Implementations of the five subcommands. Each reads its inputs, runs the
//! core computations (fanning per-sample work out to workers), and writes
//! machine-readable outputs with the resolved config echoed for provenance.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use prosr_core::diagnostics::{self, DiagnosticReport, FailureGroup};
use prosr_core::filter::{self, CotSample, FilterVerdict, SourceStats};
use prosr_core::rewards::{self, ShapedReward};
use prosr_core::simulator::{
    self, derive_seed, generate_pairs, run_experiment, Arm, ArmSummary, EvalStats, PolicyParams,
};

use crate::config::Config;
use crate::formats::{fmt_float, to_json_document, to_json_line};
use crate::ingest::{self, Orphan, RewardUnit};
use crate::workers::par_map;
use crate::{AppError, Result};

/// Creates the output directory and writes one output file, refusing to
/// overwrite existing files unless `force` is set.
fn write_output(out: &Path, name: &str, bytes: &[u8], force: bool) -> Result<PathBuf> {
    std::fs::create_dir_all(out).map_err(AppError::io(out))?;
    let path = out.join(name);
    if path.exists() && !force {
        return Err(AppError::WouldOverwrite(path));
    }
    std::fs::write(&path, bytes).map_err(AppError::io(&path))?;
    Ok(path)
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = String::new();
    for item in items {
        out.push_str(&to_json_line(item)?);
        out.push('\n');
    }
    Ok(out.into_bytes())
}

fn opt_float(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn opt_char(c: Option<char>) -> String {
    c.map(String::from).unwrap_or_default()
}

fn group_label(group: FailureGroup) -> &'static str {
    match group {
        FailureGroup::Clean => "clean",
        FailureGroup::SpuriousOnly => "spurious-only",
        FailureGroup::TailOnly => "tail-only",
        FailureGroup::Both => "both",
    }
}

fn csv_bytes(rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .write_record(&row)
            .map_err(|e| AppError::Input(format!("csv write failed: {e}")))?;
    }
    writer
        .into_inner()
        .map_err(|e| AppError::Input(format!("csv write failed: {e}")))
}

fn empty_to_app_error(e: diagnostics::DiagnosticsError) -> AppError {
    AppError::Empty(e.to_string())
}

#[derive(Serialize)]
struct DiagnoseDocument<'a> {
    config: &'a Config,
    orphan_count: usize,
    report: &'a DiagnosticReport,
}

fn per_sample_csv(report: &DiagnosticReport) -> Result<Vec<u8>> {
    let mut rows = vec![vec![
        "sample_id",
        "original_answer",
        "blank_answer",
        "same_answer",
        "original_correct",
        "blank_correct",
        "similarity",
        "h_mid",
        "h_late",
        "delta_tail",
        "group",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>()];
    for s in &report.per_sample {
        rows.push(vec![
            s.sample_id.clone(),
            opt_char(s.original_answer),
            opt_char(s.blank_answer),
            s.same_answer.to_string(),
            s.original_correct.to_string(),
            s.blank_correct.to_string(),
            opt_float(s.similarity),
            opt_float(s.h_mid),
            opt_float(s.h_late),
            opt_float(s.delta_tail),
            String::from(group_label(s.group)),
        ]);
    }
    csv_bytes(rows)
}

/// Loads a rollout log, pairs it, computes the diagnostic report, and writes
/// `report.json`, `per_sample.csv`, and `orphans.json`.
pub fn diagnose(input: &Path, out: &Path, config: &Config, force: bool, summary: bool) -> Result<()> {
    let records = ingest::load_rollout_log(input, config.min_span_len, config.workers)?;
    let paired = ingest::pair_rollouts(&records)?;
    if paired.pairs.is_empty() {
        return Err(AppError::Empty(format!(
            "{}: no valid rollout pairs ({} orphan records)",
            input.display(),
            paired.orphans.len()
        )));
    }
    let report = diagnostics::compute_report(&paired.pairs, &config.diagnostics_config())
        .map_err(empty_to_app_error)?;
    let doc =
        DiagnoseDocument { config, orphan_count: paired.orphans.len(), report: &report };
    write_output(out, "report.json", to_json_document(&doc)?.as_bytes(), force)?;
    write_output(out, "per_sample.csv", &per_sample_csv(&report)?, force)?;
    #[derive(Serialize)]
    struct OrphanDocument<'a> {
        orphans: &'a [Orphan],
    }
    let orphan_doc = to_json_document(&OrphanDocument { orphans: &paired.orphans })?;
    write_output(out, "orphans.json", orphan_doc.as_bytes(), force)?;
    if summary {
        println!("n={} a_img={:.4} a_blank={:.4} sar={:.4} nts={:.4}", report.n, report.a_img, report.a_blank, report.sar, report.nts);
        for entry in &report.lrr {
            println!("lrr@{}={:.4}", entry.tau, entry.rate);
        }
        let g = &report.group_counts;
        println!(
            "groups: clean={} spurious-only={} tail-only={} both={}",
            g.clean, g.spurious_only, g.tail_only, g.both
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct RewardLine {
    sample_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    group_id: Option<String>,
    r_acc: f64,
    r_fmt: f64,
    r_cf: f64,
    r_drift: f64,
    total: f64,
    flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    advantage: Option<f64>,
}

fn reward_lines(units: &[RewardUnit], config: &Config) -> Result<Vec<RewardLine>> {
    let reward_cfg = config.reward_config();
    let shaped: Vec<ShapedReward> = par_map(units, config.workers, |unit| {
        rewards::shaped_reward(&unit.original, unit.blank.as_ref(), unit.reference, &reward_cfg)
    });
    let mut lines: Vec<RewardLine> = units
        .iter()
        .zip(&shaped)
        .map(|(unit, r)| RewardLine {
            sample_id: unit.original.sample_id.clone(),
            group_id: unit.group_id.clone(),
            r_acc: r.r_acc,
            r_fmt: r.r_fmt,
            r_cf: r.r_cf,
            r_drift: r.r_drift,
            total: r.total,
            flags: r.flags.clone(),
            advantage: None,
        })
        .collect();
    // Group-normalized advantages over each GRPO group of size >= 2, in the
    // deterministic unit order.
    let mut groups: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for (i, unit) in units.iter().enumerate() {
        if let Some(group) = &unit.group_id {
            groups.entry(group.as_str()).or_default().push(i);
        }
    }
    for indices in groups.values() {
        if indices.len() < 2 {
            continue;
        }
        let rewards_vec: Vec<f64> = indices.iter().map(|&i| lines[i].total).collect();
        let advantages = rewards::group_advantages(&rewards_vec, config.std_floor)
            .map_err(|e| AppError::Input(e.to_string()))?;
        for (&i, &a) in indices.iter().zip(&advantages.advantages) {
            lines[i].advantage = Some(a);
        }
    }
    Ok(lines)
}

/// Computes the shaped reward for every original rollout in the log and
/// writes `rewards.jsonl`.
pub fn reward(input: &Path, out: &Path, config: &Config, force: bool, summary: bool) -> Result<()> {
    let records = ingest::load_rollout_log(input, config.min_span_len, config.workers)?;
    let units = ingest::reward_units(&records)?;
    if units.is_empty() {
        return Err(AppError::Empty(format!(
            "{}: no original-condition rollouts",
            input.display()
        )));
    }
    let lines = reward_lines(&units, config)?;
    write_output(out, "rewards.jsonl", &jsonl(&lines)?, force)?;
    if summary {
        let mean = lines.iter().map(|l| l.total).sum::<f64>() / lines.len() as f64;
        println!("rollouts={} mean_total={:.4}", lines.len(), mean);
    }
    Ok(())
}

/// One line of a CoT corpus file.
#[derive(Debug, Clone, Deserialize)]
struct CotRecord {
    sample_id: String,
    think_text: String,
    #[serde(default)]
    predicted_answer: Option<String>,
    reference_answer: String,
    source: String,
}

fn parse_letter(field: &str, value: &str) -> std::result::Result<char, String> {
    let mut chars = value.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if prosr_core::is_answer_letter(c) => Ok(c),
        _ => Err(format!("{field}: expected a single letter A-D, got {value:?}")),
    }
}

fn load_cot_corpus(path: &Path, workers: usize) -> Result<Vec<CotSample>> {
    let content = std::fs::read_to_string(path).map_err(AppError::io(path))?;
    let lines: Vec<(usize, &str)> = content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let parsed = par_map(&lines, workers, |&(line, text)| {
        let mut de = serde_json::Deserializer::from_str(text);
        let record: CotRecord = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| (line, e.to_string()))?;
        let predicted = record
            .predicted_answer
            .as_deref()
            .map(|v| parse_letter("predicted_answer", v))
            .transpose()
            .map_err(|m| (line, m))?;
        let reference = parse_letter("reference_answer", &record.reference_answer)
            .map_err(|m| (line, m))?;
        Ok(CotSample {
            sample_id: record.sample_id,
            think_text: record.think_text,
            predicted_answer: predicted,
            reference_answer: reference,
            source: record.source,
        })
    });
    parsed
        .into_iter()
        .collect::<std::result::Result<Vec<_>, (usize, String)>>()
        .map_err(|(line, message)| AppError::Parse { path: path.to_path_buf(), line, message })
}

#[derive(Serialize)]
struct VerdictLine<'a> {
    sample_id: &'a str,
    source: &'a str,
    #[serde(flatten)]
    verdict: &'a FilterVerdict,
}

fn summary_csv(stats: &[SourceStats]) -> Result<Vec<u8>> {
    let header = [
        "source",
        "total",
        "correct",
        "kept",
        "keep_rate",
        "keep_rate_given_correct",
        "length_before",
        "length_after",
        "reconsider_before",
        "reconsider_after",
        "repeated_before",
        "repeated_after",
        "anchor_ratio_before",
        "anchor_ratio_after",
        "length_correct_only",
        "reconsider_correct_only",
        "repeated_correct_only",
        "anchor_ratio_correct_only",
    ];
    let mut rows = vec![header.iter().map(|s| String::from(*s)).collect::<Vec<_>>()];
    for s in stats {
        let after = s.after.as_ref();
        let correct_only = s.before_correct_only.as_ref();
        rows.push(vec![
            s.source.clone(),
            s.total.to_string(),
            s.correct.to_string(),
            s.kept.to_string(),
            fmt_float(s.keep_rate),
            opt_float(s.keep_rate_given_correct),
            fmt_float(s.before.length),
            opt_float(after.map(|m| m.length)),
            fmt_float(s.before.reconsider_count),
            opt_float(after.map(|m| m.reconsider_count)),
            fmt_float(s.before.repeated_sentence_count),
            opt_float(after.map(|m| m.repeated_sentence_count)),
            fmt_float(s.before.anchor_ratio),
            opt_float(after.map(|m| m.anchor_ratio)),
            opt_float(correct_only.map(|m| m.length)),
            opt_float(correct_only.map(|m| m.reconsider_count)),
            opt_float(correct_only.map(|m| m.repeated_sentence_count)),
            opt_float(correct_only.map(|m| m.anchor_ratio)),
        ]);
    }
    csv_bytes(rows)
}

/// Applies the rule-based quality filter to a CoT corpus and writes
/// `verdicts.jsonl` plus the per-source `summary.csv`.
pub fn filter(input: &Path, out: &Path, config: &Config, force: bool, summary: bool) -> Result<()> {
    let samples = load_cot_corpus(input, config.workers)?;
    if samples.is_empty() {
        return Err(AppError::Empty(format!("{}: no CoT samples", input.display())));
    }
    let filter_cfg = config.filter_config();
    let verdicts: Vec<FilterVerdict> =
        par_map(&samples, config.workers, |s| filter::filter_verdict(s, &filter_cfg));
    let lines: Vec<VerdictLine> = samples
        .iter()
        .zip(&verdicts)
        .map(|(s, v)| VerdictLine { sample_id: &s.sample_id, source: &s.source, verdict: v })
        .collect();
    write_output(out, "verdicts.jsonl", &jsonl(&lines)?, force)?;
    let items: Vec<(&CotSample, &FilterVerdict)> = samples.iter().zip(&verdicts).collect();
    let stats = filter::corpus_stats(&items);
    write_output(out, "summary.csv", &summary_csv(&stats)?, force)?;
    if summary {
        for s in &stats {
            println!("{}: kept {}/{} ({:.1}%)", s.source, s.kept, s.total, 100.0 * s.keep_rate);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RunDoc {
    seed: u64,
    arm: Arm,
    init: PolicyParams,
    final_params: PolicyParams,
    final_stats: EvalStats,
}

#[derive(Serialize)]
struct SimulateDocument<'a> {
    config: &'a Config,
    seeds: &'a [u64],
    runs: Vec<RunDoc>,
    summaries: &'a [ArmSummary],
}

fn trace_csv(report: &simulator::ExperimentReport) -> Result<Vec<u8>> {
    let mut rows = vec![vec![
        "seed", "arm", "iteration", "g", "d", "a", "mean_reward", "accepted",
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>()];
    for run in &report.runs {
        for point in &run.trace {
            rows.push(vec![
                run.seed.to_string(),
                String::from(run.arm.label()),
                point.iteration.to_string(),
                fmt_float(point.params.g),
                fmt_float(point.params.d),
                fmt_float(point.params.a),
                fmt_float(point.mean_reward),
                point.accepted.to_string(),
            ]);
        }
    }
    csv_bytes(rows)
}

fn simulate_report(config: &Config, seeds: &[u64], lambda: Option<f64>) -> Result<simulator::ExperimentReport> {
    let mut reward_cfg = config.reward_config();
    if let Some(lambda) = lambda {
        reward_cfg.lambda_cf = lambda;
        reward_cfg.lambda_drift = lambda;
    }
    run_experiment(&config.env_config(), &reward_cfg, &config.search_config(), seeds)
        .map_err(|e| AppError::Config(e.to_string()))
}

fn report_document(config: &Config, seeds: &[u64], report: &simulator::ExperimentReport) -> Result<String> {
    let runs = report
        .runs
        .iter()
        .map(|r| RunDoc {
            seed: r.seed,
            arm: r.arm,
            init: r.init,
            final_params: r.final_params,
            final_stats: r.final_stats.clone(),
        })
        .collect();
    to_json_document(&SimulateDocument { config, seeds, runs, summaries: &report.summaries })
}

/// Final-policy rollout pairs of the first seed's runs, serialized to the
/// canonical record schema so the diagnostics pipeline can ingest them.
fn simulated_rollout_lines(config: &Config, report: &simulator::ExperimentReport) -> Result<Vec<u8>> {
    let mut lines: Vec<ingest::RolloutRecord> = Vec::new();
    let first_seed = report.runs.first().map(|r| r.seed);
    for (arm_idx, run) in report.runs.iter().enumerate() {
        if Some(run.seed) != first_seed {
            continue;
        }
        let env = config
            .env_config()
            .with_seed(derive_seed(config.seed, 0x5157_0000 + arm_idx as u64));
        for pair in generate_pairs(&run.final_params, &env, config.episodes_per_eval) {
            let group = format!("{}-{}", run.arm.label(), run.seed);
            for rollout in [&pair.original, &pair.blank] {
                let mut record =
                    ingest::record_from_rollout(rollout, pair.reference_answer, Some(&group));
                record.sample_id = format!("{}-{}", run.arm.label(), rollout.sample_id);
                lines.push(record);
            }
        }
    }
    jsonl(&lines)
}

/// Runs the base-versus-shaped experiment (or a reward-weight sweep) and
/// writes the comparison report, iteration traces, and final-policy rollouts.
pub fn simulate(
    out: &Path,
    config: &Config,
    seeds: &[u64],
    lambda_sweep: Option<&[f64]>,
    force: bool,
    summary: bool,
) -> Result<()> {
    match lambda_sweep {
        None => {
            let report = simulate_report(config, seeds, None)?;
            write_output(
                out,
                "report.json",
                report_document(config, seeds, &report)?.as_bytes(),
                force,
            )?;
            write_output(out, "trace.csv", &trace_csv(&report)?, force)?;
            write_output(
                out,
                "rollouts.jsonl",
                &simulated_rollout_lines(config, &report)?,
                force,
            )?;
            if summary {
                print_arm_summaries(&report.summaries);
            }
        }
        Some(weights) => {
            let mut sweep_rows = vec![vec![
                "lambda", "arm", "mean_g", "mean_d", "mean_a", "mean_reward", "mean_a_blank",
                "mean_sar", "mean_nts", "mean_lrr",
            ]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>()];
            for &weight in weights {
                let report = simulate_report(config, seeds, Some(weight))?;
                let name = format!("report_lambda_{weight}.json");
                write_output(
                    out,
                    &name,
                    report_document(config, seeds, &report)?.as_bytes(),
                    force,
                )?;
                for s in &report.summaries {
                    sweep_rows.push(vec![
                        fmt_float(weight),
                        String::from(s.arm.label()),
                        fmt_float(s.mean_g),
                        fmt_float(s.mean_d),
                        fmt_float(s.mean_a),
                        fmt_float(s.mean_reward),
                        fmt_float(s.mean_a_blank),
                        fmt_float(s.mean_sar),
                        fmt_float(s.mean_nts),
                        fmt_float(s.mean_lrr),
                    ]);
                }
                if summary {
                    println!("lambda={weight}");
                    print_arm_summaries(&report.summaries);
                }
            }
            write_output(out, "sweep_summary.csv", &csv_bytes(sweep_rows)?, force)?;
        }
    }
    Ok(())
}

fn print_arm_summaries(summaries: &[ArmSummary]) {
    for s in summaries {
        println!(
            "{}: g={:.3} d={:.3} a={:.3} sar={:.4} nts={:.4} lrr={:.4} a_blank={:.4}",
            s.arm.label(),
            s.mean_g,
            s.mean_d,
            s.mean_a,
            s.mean_sar,
            s.mean_nts,
            s.mean_lrr,
            s.mean_a_blank
        );
    }
}

/// Reads a `per_sample.csv` from `diagnose` and writes exceedance curves
/// over the similarity-cutoff and margin grids.
pub fn scan(
    input: &Path,
    out: &Path,
    config: &Config,
    check_monotone: bool,
    force: bool,
    summary: bool,
) -> Result<()> {
    let mut reader = csv::Reader::from_path(input).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => AppError::Input(format!("{}: {e}", input.display())),
        _ => AppError::Input(format!("{}: {e}", input.display())),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| AppError::Input(format!("{}: {e}", input.display())))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            AppError::Input(format!("{}: missing column {name:?}", input.display()))
        })
    };
    let (sim_col, mid_col, late_col) = (col("similarity")?, col("h_mid")?, col("h_late")?);
    let mut similarities = Vec::new();
    let mut gaps = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| AppError::Parse {
            path: input.to_path_buf(),
            line: i + 2,
            message: e.to_string(),
        })?;
        let value = |idx: usize| -> Result<Option<f64>> {
            let field = row.get(idx).unwrap_or_default();
            if field.is_empty() {
                return Ok(None);
            }
            field.parse::<f64>().map(Some).map_err(|e| AppError::Parse {
                path: input.to_path_buf(),
                line: i + 2,
                message: format!("{}: {e}", headers.get(idx).unwrap_or_default()),
            })
        };
        if let Some(s) = value(sim_col)? {
            similarities.push(s);
        }
        if let (Some(mid), Some(late)) = (value(mid_col)?, value(late_col)?) {
            gaps.push(late - mid);
        }
    }
    if similarities.is_empty() && gaps.is_empty() {
        return Err(AppError::Empty(format!(
            "{}: no per-sample rows with similarity or segment means",
            input.display()
        )));
    }
    let scan = diagnostics::threshold_scan(
        &similarities,
        &gaps,
        &config.cutoff_grid,
        &config.margin_grid,
    )
    .map_err(|e| AppError::Config(e.to_string()))?;
    let mut rows =
        vec![vec![String::from("metric"), String::from("cutoff"), String::from("exceedance")]];
    for &(cutoff, rate) in &scan.similarity_curve {
        rows.push(vec![String::from("similarity"), fmt_float(cutoff), fmt_float(rate)]);
    }
    for &(margin, rate) in &scan.margin_curve {
        rows.push(vec![String::from("margin"), fmt_float(margin), fmt_float(rate)]);
    }
    write_output(out, "exceedance.csv", &csv_bytes(rows)?, force)?;
    if check_monotone {
        let non_increasing = |curve: &[(f64, f64)]| curve.windows(2).all(|w| w[0].1 >= w[1].1);
        if !non_increasing(&scan.similarity_curve) || !non_increasing(&scan.margin_curve) {
            return Err(AppError::Input(String::from(
                "exceedance curves are not monotone non-increasing",
            )));
        }
    }
    if summary {
        println!(
            "similarity points={} margin points={}",
            scan.similarity_curve.len(),
            scan.margin_curve.len()
        );
    }
    Ok(())
}

/// Parts shared by the integration tests: re-exported so fixtures can be
/// built programmatically.
pub use ingest::record_from_rollout as rollout_to_record;

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn fixture_lines() -> String {
        // Two paired samples and one orphan, with 10-token trajectories.
        let mk = |id: &str, condition: &str, answer: char, values: &[f64]| {
            let offsets: Vec<String> = (7..17).map(|i| format!("[{i},{}]", i + 1)).collect();
            let entropies: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
            format!(
                r#"{{"sample_id":"{id}","condition":"{condition}","reference_answer":"A","output_text":"<think>abcdefghij</think><answer>{answer}</answer>","token_entropies":[{}],"token_offsets":[{}]}}"#,
                entropies.join(","),
                offsets.join(",")
            )
        };
        [
            mk("s1", "original", 'A', &[0.5; 10]),
            mk("s1", "blank", 'B', &[0.5; 10]),
            mk("s2", "original", 'A', &[0.9; 10]),
            mk("s2", "blank", 'A', &[0.9; 10]),
            mk("s3", "original", 'A', &[0.5; 10]),
        ]
        .join("\n")
    }

    fn write_fixture(dir: &Path) -> PathBuf {
        let path = dir.join("rollouts.jsonl");
        fs::write(&path, fixture_lines()).unwrap();
        path
    }

    #[test]
    fn diagnose_writes_all_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_fixture(dir.path());
        let out = dir.path().join("out");
        diagnose(&input, &out, &Config::default(), false, false).unwrap();
        let report = fs::read_to_string(out.join("report.json")).unwrap();
        assert!(report.contains("\"a_img\""));
        assert!(report.contains("\"lambda_cf\""));
        let csv_text = fs::read_to_string(out.join("per_sample.csv")).unwrap();
        assert!(csv_text.starts_with("sample_id,"));
        assert_eq!(csv_text.lines().count(), 3);
        let orphans = fs::read_to_string(out.join("orphans.json")).unwrap();
        assert!(orphans.contains("missing blank"));
    }

    #[test]
    fn diagnose_refuses_overwrite_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_fixture(dir.path());
        let out = dir.path().join("out");
        diagnose(&input, &out, &Config::default(), false, false).unwrap();
        let err = diagnose(&input, &out, &Config::default(), false, false).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        diagnose(&input, &out, &Config::default(), true, false).unwrap();
    }

    #[test]
    fn diagnose_empty_input_exits_3() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("empty.jsonl");
        fs::write(&input, "").unwrap();
        let err =
            diagnose(&input, &dir.path().join("out"), &Config::default(), false, false).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn diagnose_output_independent_of_workers() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_fixture(dir.path());
        let mut outputs = Vec::new();
        for workers in [1usize, 4] {
            let out = dir.path().join(format!("out{workers}"));
            let config = Config { workers, ..Config::default() };
            diagnose(&input, &out, &config, false, false).unwrap();
            outputs.push(fs::read(out.join("report.json")).unwrap());
        }
        assert_eq!(outputs[0], outputs[1]);
    }

    #[test]
    fn reward_emits_one_line_per_original() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_fixture(dir.path());
        let out = dir.path().join("out");
        reward(&input, &out, &Config::default(), false, false).unwrap();
        let text = fs::read_to_string(out.join("rewards.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("no_blank_probe"));
    }

    #[test]
    fn filter_writes_verdicts_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("cot.jsonl");
        let mut body = vec!["object"; 50].join(" ");
        body.push_str(" left right above below");
        let lines = [
            format!(
                r#"{{"sample_id":"c1","think_text":"{body}","predicted_answer":"A","reference_answer":"A","source":"src1"}}"#
            ),
            format!(
                r#"{{"sample_id":"c2","think_text":"too short","predicted_answer":"A","reference_answer":"A","source":"src1"}}"#
            ),
        ];
        fs::write(&input, lines.join("\n")).unwrap();
        let out = dir.path().join("out");
        filter(&input, &out, &Config::default(), false, false).unwrap();
        let verdicts = fs::read_to_string(out.join("verdicts.jsonl")).unwrap();
        assert_eq!(verdicts.lines().count(), 2);
        assert!(verdicts.contains("\"keep\":true"));
        assert!(verdicts.contains("\"length\""));
        let summary_text = fs::read_to_string(out.join("summary.csv")).unwrap();
        assert!(summary_text.starts_with("source,"));
        assert_eq!(summary_text.lines().count(), 2);
    }

    fn small_sim_config() -> Config {
        Config {
            iterations: 12,
            episodes_per_eval: 60,
            span_len: 40,
            workers: 1,
            ..Config::default()
        }
    }

    #[test]
    fn simulate_writes_report_trace_and_rollouts() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        simulate(&out, &small_sim_config(), &[1], None, false, false).unwrap();
        let report = fs::read_to_string(out.join("report.json")).unwrap();
        assert!(report.contains("\"base\""));
        assert!(report.contains("\"shaped\""));
        let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
        // Header + 12 iterations x 2 arms.
        assert_eq!(trace.lines().count(), 25);
        // Simulator rollouts are directly ingestible by diagnose.
        let rollouts = out.join("rollouts.jsonl");
        let diag_out = dir.path().join("diag");
        diagnose(&rollouts, &diag_out, &small_sim_config(), false, false).unwrap();
    }

    #[test]
    fn simulate_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut reports = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("out{run}"));
            simulate(&out, &small_sim_config(), &[1], None, false, false).unwrap();
            reports.push(fs::read(out.join("report.json")).unwrap());
        }
        assert_eq!(reports[0], reports[1]);
    }

    #[test]
    fn simulate_lambda_sweep_writes_one_report_per_weight() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        simulate(&out, &small_sim_config(), &[1], Some(&[0.05, 0.1]), false, false).unwrap();
        assert!(out.join("report_lambda_0.05.json").exists());
        assert!(out.join("report_lambda_0.1.json").exists());
        let sweep = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
        // Header + 2 weights x 2 arms.
        assert_eq!(sweep.lines().count(), 5);
    }

    #[test]
    fn scan_reads_diagnose_output() {
        let dir = tempfile::tempdir().unwrap();
        let input = write_fixture(dir.path());
        let diag_out = dir.path().join("diag");
        diagnose(&input, &diag_out, &Config::default(), false, false).unwrap();
        let out = dir.path().join("scan");
        scan(&diag_out.join("per_sample.csv"), &out, &Config::default(), true, false, false)
            .unwrap();
        let text = fs::read_to_string(out.join("exceedance.csv")).unwrap();
        assert!(text.starts_with("metric,cutoff,exceedance"));
        // Header + 21 similarity + 21 margin rows under the default grids.
        assert_eq!(text.lines().count(), 43);
    }

    #[test]
    fn scan_missing_column_is_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("bad.csv");
        fs::write(&input, "sample_id,foo\nx,1\n").unwrap();
        let err = scan(&input, &dir.path().join("out"), &Config::default(), false, false, false)
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("similarity"));
    }
}
