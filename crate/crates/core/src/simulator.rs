//! Synthetic-policy simulator: a generative analog of the shortcut and
//! tail-drift behaviors, plus a seeded derivative-free search loop that shows
//! how the outcome-only and shaped rewards move the policy in opposite
//! directions on the paired-rollout diagnostics.
//!
//! The policy is three scalars: `g` (how often the blank probe copies the
//! original rollout), `d` (late-segment entropy bump), and `a` (genuine
//! answer accuracy). Everything downstream — answers, formatted texts,
//! trajectories — is generated from counter-based per-episode RNG streams so
//! runs are bit-reproducible for a fixed seed.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, Condition, Rollout, RolloutPair};
use crate::rewards::{self, RewardConfig};
use crate::trajectory::{self, EntropyTrajectory, ThinkSpan};
use crate::ANSWER_LETTERS;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid policy params: {0}")]
    InvalidParams(String),
    #[error("invalid environment config: {0}")]
    InvalidEnv(String),
    #[error("invalid search config: {0}")]
    InvalidSearch(String),
    #[error("run_experiment needs at least one seed")]
    NoSeeds,
}

/// The synthetic policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Shortcut strength: probability the blank-condition rollout copies the
    /// original trajectory shape and answer.
    pub g: f64,
    /// Tail bump magnitude added to late-segment entropies, in nats.
    pub d: f64,
    /// Answer accuracy under genuine grounding.
    pub a: f64,
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.g) {
            return Err(SimError::InvalidParams(format!("g must lie in [0, 1], got {}", self.g)));
        }
        if !(self.d >= 0.0) || !self.d.is_finite() {
            return Err(SimError::InvalidParams(format!("d must be >= 0, got {}", self.d)));
        }
        if !(0.0..=1.0).contains(&self.a) {
            return Err(SimError::InvalidParams(format!("a must lie in [0, 1], got {}", self.a)));
        }
        Ok(())
    }
}

/// Environment knobs of the generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Probability the language-prior shortcut yields the correct answer.
    /// Must exceed chance (0.25) for the shortcut to be attractive to an
    /// outcome-only reward.
    pub p_prior: f64,
    /// Thinking-span length in tokens.
    pub span_len: usize,
    /// Entropy template endpoints: linearly decreasing start -> end, nats.
    pub curve_start: f64,
    pub curve_end: f64,
    /// Gaussian noise scale added to every trajectory.
    pub noise_sigma: f64,
    /// Noise scale of the copied blank trajectory in the shortcut branch.
    pub copy_noise: f64,
    /// Shape of the fresh blank trajectory in the genuine branch: a narrow
    /// Gaussian bump over a low floor, so its normalized shape shares little
    /// mass with the decreasing template.
    pub bump_height: f64,
    pub bump_width: f64,
    pub bump_base: f64,
    pub seed: u64,
    pub episodes_per_eval: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            p_prior: 0.8,
            span_len: 80,
            curve_start: 1.5,
            curve_end: 0.3,
            noise_sigma: 0.05,
            copy_noise: 0.05,
            bump_height: 10.0,
            bump_width: 1.5,
            bump_base: 0.005,
            seed: 17,
            episodes_per_eval: 300,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |msg: String| Err(SimError::InvalidEnv(msg));
        if !(0.25..=1.0).contains(&self.p_prior) {
            return err(format!("p_prior must lie in (0.25, 1], got {}", self.p_prior));
        }
        if self.span_len < trajectory::DEFAULT_MIN_SPAN_LEN {
            return err(format!("span_len must be at least 10, got {}", self.span_len));
        }
        if self.episodes_per_eval == 0 {
            return err(String::from("episodes_per_eval must be positive"));
        }
        for (name, v) in [
            ("curve_start", self.curve_start),
            ("curve_end", self.curve_end),
            ("noise_sigma", self.noise_sigma),
            ("copy_noise", self.copy_noise),
            ("bump_height", self.bump_height),
            ("bump_base", self.bump_base),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return err(format!("{name} must be a non-negative finite value, got {v}"));
            }
        }
        if !(self.bump_width > 0.0) {
            return err(format!("bump_width must be positive, got {}", self.bump_width));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Knobs of the (1+1) evolutionary hill climb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub iterations: usize,
    /// Scale of the Gaussian coordinate perturbations.
    pub step: f64,
    pub seed: u64,
    /// Upper clamp for `a` proposals: the searchable accuracy ceiling stays
    /// below `p_prior` so genuine grounding cannot out-earn the shortcut on
    /// the outcome term alone.
    pub a_max: f64,
    /// Upper clamp for `d` proposals.
    pub d_max: f64,
    /// A proposal is accepted only when it beats the incumbent by more than
    /// this margin, so Monte-Carlo drift on flat directions is rejected.
    pub min_gain: f64,
    pub init: PolicyParams,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            iterations: 240,
            step: 0.15,
            seed: 1,
            a_max: 0.75,
            d_max: 2.0,
            min_gain: 1e-3,
            init: PolicyParams { g: 0.3, d: 0.8, a: 0.5 },
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |msg: String| Err(SimError::InvalidSearch(msg));
        if self.iterations == 0 {
            return err(String::from("iterations must be positive"));
        }
        if !(self.step > 0.0) {
            return err(format!("step must be positive, got {}", self.step));
        }
        if !(0.0..=1.0).contains(&self.a_max) {
            return err(format!("a_max must lie in [0, 1], got {}", self.a_max));
        }
        if !(self.d_max >= 0.0) {
            return err(format!("d_max must be >= 0, got {}", self.d_max));
        }
        if !(self.min_gain >= 0.0) {
            return err(format!("min_gain must be >= 0, got {}", self.min_gain));
        }
        self.init.validate()
    }
}

/// splitmix64 finalizer; decorrelates sequential counters into seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a counter.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, episode))
}

fn wrong_answer(reference: char, wrong_idx: usize) -> char {
    let mut wrongs = ANSWER_LETTERS.iter().filter(|&&c| c != reference);
    *wrongs.nth(wrong_idx).expect("three wrong options exist")
}

fn formatted_text(answer: char, episode_tag: &str, min_think_len: usize) -> String {
    // Keep the think block at least min_think_len bytes so one character
    // range per trajectory token fits strictly inside it.
    let mut think = format!("synthetic reasoning trace {episode_tag}:");
    while think.len() < min_think_len {
        think.push_str(" comparing the candidate options step by step");
    }
    format!("<think>{think}</think><answer>{answer}</answer>")
}

fn build_rollout(
    sample_id: &str,
    condition: Condition,
    values: Vec<f64>,
    answer: char,
) -> Rollout {
    let raw_text = formatted_text(answer, sample_id, values.len());
    let parsed = diagnostics::parse_answer(&raw_text);
    let len = values.len();
    Rollout {
        sample_id: String::from(sample_id),
        condition,
        trajectory: EntropyTrajectory::new(values).expect("generated entropies are valid"),
        think_span: ThinkSpan { start: 0, end: len, valid: true },
        answer: parsed,
        format_ok: parsed.is_some(),
        raw_text,
    }
}

/// Draws one original/blank rollout pair from the generative model.
///
/// The original trajectory is the decreasing template plus noise, with `d`
/// added over the late segment. With probability `g` the blank copies the
/// original's trajectory (small independent noise) and its answer; otherwise
/// it draws a fresh bump-shaped trajectory and an independent answer that is
/// correct with probability `p_prior`. All random draws happen in a fixed
/// order regardless of the branch taken, so evaluations at nearby parameters
/// share their noise realizations.
pub fn generate_pair(
    params: &PolicyParams,
    env: &EnvConfig,
    sample_id: &str,
    rng: &mut ChaCha8Rng,
) -> RolloutPair {
    let l = env.span_len;
    let reference = ANSWER_LETTERS[rng.random_range(0..ANSWER_LETTERS.len())];
    let u_branch: f64 = rng.random();
    let u_orig_correct: f64 = rng.random();
    let wrong_orig = rng.random_range(0..3);
    let u_blank_correct: f64 = rng.random();
    let wrong_blank = rng.random_range(0..3);
    let bump_center: f64 = rng.random::<f64>() * (l as f64 - 1.0);
    let noise = Normal::new(0.0, 1.0).expect("unit normal is valid");
    let orig_noise: Vec<f64> = (0..l).map(|_| noise.sample(rng)).collect();
    let blank_noise: Vec<f64> = (0..l).map(|_| noise.sample(rng)).collect();

    let (late_start, _) = {
        let (b1, b2) = trajectory::segment_bounds(l, trajectory::DEFAULT_SEGMENT_RATIOS)
            .expect("span_len is validated against the minimum");
        (b2, b1)
    };
    let template = |i: usize| {
        env.curve_start + (env.curve_end - env.curve_start) * i as f64 / (l as f64 - 1.0)
    };
    let orig_values: Vec<f64> = (0..l)
        .map(|i| {
            let bump = if i >= late_start { params.d } else { 0.0 };
            (template(i) + bump + env.noise_sigma * orig_noise[i]).max(0.0)
        })
        .collect();

    // Under the shortcut the policy answers from the language prior instead
    // of grounding, so the original answer's accuracy follows p_prior there.
    let shortcut = u_branch < params.g;
    let correct_prob = if shortcut { env.p_prior } else { params.a };
    let orig_answer = if u_orig_correct < correct_prob {
        reference
    } else {
        wrong_answer(reference, wrong_orig)
    };

    let (blank_values, blank_answer) = if shortcut {
        let values = orig_values
            .iter()
            .zip(&blank_noise)
            .map(|(&v, &n)| (v + env.copy_noise * n).max(0.0))
            .collect();
        (values, orig_answer)
    } else {
        let values = (0..l)
            .map(|i| {
                let z = (i as f64 - bump_center) / env.bump_width;
                let shape = env.bump_base + env.bump_height * libm::exp(-0.5 * z * z);
                (shape + env.noise_sigma * blank_noise[i]).max(0.0)
            })
            .collect();
        let answer = if u_blank_correct < env.p_prior {
            reference
        } else {
            wrong_answer(reference, wrong_blank)
        };
        (values, answer)
    };

    RolloutPair {
        sample_id: String::from(sample_id),
        original: build_rollout(sample_id, Condition::Original, orig_values, orig_answer),
        blank: build_rollout(sample_id, Condition::Blank, blank_values, blank_answer),
        reference_answer: reference,
    }
}

/// Draws `n` pairs with per-episode RNG streams derived from `env.seed`.
pub fn generate_pairs(params: &PolicyParams, env: &EnvConfig, n: usize) -> Vec<RolloutPair> {
    (0..n)
        .map(|ep| {
            let mut rng = episode_rng(env.seed, ep as u64);
            generate_pair(params, env, &format!("sim-{ep:06}"), &mut rng)
        })
        .collect()
}

/// Monte-Carlo means of the reward and the paired-rollout diagnostics at one
/// policy setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean_reward: f64,
    pub mean_r_cf: f64,
    pub mean_r_drift: f64,
    pub a_blank: f64,
    pub sar: f64,
    pub nts: f64,
    /// Late-rise rate at the headline threshold 0.1.
    pub lrr: f64,
}

/// Threshold the simulator's late-rise rate is reported at.
pub const EVAL_LRR_TAU: f64 = 0.1;

/// Evaluates a policy: mean shaped (or outcome-only) reward plus diagnostic
/// means over `episodes_per_eval` episodes. Deterministic for a fixed
/// `env.seed`. With `use_shaping` off both penalty weights are zeroed.
pub fn evaluate(
    params: &PolicyParams,
    env: &EnvConfig,
    reward_cfg: &RewardConfig,
    use_shaping: bool,
) -> EvalStats {
    let mut cfg = reward_cfg.clone();
    if !use_shaping {
        cfg.lambda_cf = 0.0;
        cfg.lambda_drift = 0.0;
    }
    let pairs = generate_pairs(params, env, env.episodes_per_eval);
    let n = pairs.len() as f64;
    let mut sum_reward = 0.0;
    let mut sum_cf = 0.0;
    let mut sum_drift = 0.0;
    for pair in &pairs {
        let r = rewards::total_reward(pair, pair.reference_answer, &cfg);
        sum_reward += r.total;
        sum_cf += r.r_cf;
        sum_drift += r.r_drift;
    }
    let originals: Vec<&Rollout> = pairs.iter().map(|p| &p.original).collect();
    let (nts, _) = diagnostics::nts(&pairs, cfg.resample_len, cfg.eps)
        .expect("generated pairs always carry valid trajectories");
    EvalStats {
        mean_reward: sum_reward / n,
        mean_r_cf: sum_cf / n,
        mean_r_drift: sum_drift / n,
        a_blank: diagnostics::blank_accuracy(&pairs).expect("at least one episode"),
        sar: diagnostics::same_answer_rate(&pairs).expect("at least one episode"),
        nts,
        lrr: diagnostics::late_rise_rate(
            &originals,
            cfg.margin_m,
            EVAL_LRR_TAU,
            cfg.segment_ratios,
        )
        .expect("generated originals always have valid trajectories"),
    }
}

/// One step of the search trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub params: PolicyParams,
    pub mean_reward: f64,
    pub accepted: bool,
}

/// Search outcome: the incumbent after the final iteration plus the full
/// per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOutcome {
    pub final_params: PolicyParams,
    pub trace: Vec<TracePoint>,
}

fn clamp_params(mut p: PolicyParams, search: &SearchConfig) -> PolicyParams {
    p.g = p.g.clamp(0.0, 1.0);
    p.d = p.d.clamp(0.0, search.d_max);
    p.a = p.a.clamp(0.0, search.a_max.min(1.0));
    p
}

/// Seeded (1+1) evolutionary hill climb on `(g, d, a)`.
///
/// Each iteration perturbs one coordinate with Gaussian noise, clips to the
/// valid ranges, and re-evaluates incumbent and candidate on a shared
/// per-iteration evaluation seed (common random numbers). The candidate
/// replaces the incumbent only when its mean reward is strictly better by
/// more than `min_gain`, so a flat landscape accepts no moves.
pub fn optimize(
    params0: &PolicyParams,
    env: &EnvConfig,
    reward_cfg: &RewardConfig,
    use_shaping: bool,
    search: &SearchConfig,
) -> Result<OptimizeOutcome, SimError> {
    params0.validate()?;
    env.validate()?;
    search.validate()?;
    let mut proposal_rng = ChaCha8Rng::seed_from_u64(search.seed);
    let step = Normal::new(0.0, search.step).expect("step is validated positive");
    let mut current = clamp_params(*params0, search);
    let mut trace = Vec::with_capacity(search.iterations);
    for it in 0..search.iterations {
        let delta: f64 = step.sample(&mut proposal_rng);
        let mut candidate = current;
        match it % 3 {
            0 => candidate.g += delta,
            1 => candidate.d += delta,
            _ => candidate.a += delta,
        }
        let candidate = clamp_params(candidate, search);
        let eval_env = env.with_seed(derive_seed(env.seed, it as u64 + 1));
        let incumbent_reward = evaluate(&current, &eval_env, reward_cfg, use_shaping).mean_reward;
        let candidate_reward = evaluate(&candidate, &eval_env, reward_cfg, use_shaping).mean_reward;
        let accepted = candidate_reward > incumbent_reward + search.min_gain;
        if accepted {
            current = candidate;
        }
        trace.push(TracePoint {
            iteration: it,
            params: current,
            mean_reward: if accepted { candidate_reward } else { incumbent_reward },
            accepted,
        });
    }
    Ok(OptimizeOutcome { final_params: current, trace })
}

/// The two reward regimes compared by the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Base,
    Shaped,
}

impl Arm {
    pub const ALL: [Arm; 2] = [Arm::Base, Arm::Shaped];

    pub fn label(&self) -> &'static str {
        match self {
            Arm::Base => "base",
            Arm::Shaped => "shaped",
        }
    }

    fn use_shaping(&self) -> bool {
        matches!(self, Arm::Shaped)
    }
}

/// One optimized run: a seed/arm cell of the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub arm: Arm,
    pub init: PolicyParams,
    pub final_params: PolicyParams,
    /// Final-policy diagnostics on a larger held-out evaluation.
    pub final_stats: EvalStats,
    pub trace: Vec<TracePoint>,
}

/// Across-seed means of one arm's final policies and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub mean_g: f64,
    pub mean_d: f64,
    pub mean_a: f64,
    pub mean_reward: f64,
    pub mean_a_blank: f64,
    pub mean_sar: f64,
    pub mean_nts: f64,
    pub mean_lrr: f64,
}

/// Full comparison: every seed/arm run plus per-arm summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<ArmSummary>,
}

/// Scale factor of the held-out final evaluation relative to
/// `episodes_per_eval`.
pub const FINAL_EVAL_SCALE: usize = 10;

/// Optimizes the base and shaped arms from identical initial parameters for
/// every seed, evaluates the final policies on a larger held-out episode set,
/// and reports per-run results plus across-seed means per arm.
///
/// The two arms of one seed share their search and evaluation seeds, so the
/// comparison is paired: any divergence comes from the reward alone.
pub fn run_experiment(
    env: &EnvConfig,
    reward_cfg: &RewardConfig,
    search: &SearchConfig,
    seeds: &[u64],
) -> Result<ExperimentReport, SimError> {
    if seeds.is_empty() {
        return Err(SimError::NoSeeds);
    }
    env.validate()?;
    search.validate()?;
    let mut runs = Vec::with_capacity(seeds.len() * Arm::ALL.len());
    for &seed in seeds {
        let seed_env = env.with_seed(derive_seed(env.seed, seed));
        let seed_search = SearchConfig { seed: derive_seed(search.seed, seed), ..search.clone() };
        for arm in Arm::ALL {
            let outcome =
                optimize(&search.init, &seed_env, reward_cfg, arm.use_shaping(), &seed_search)?;
            let final_env = EnvConfig {
                seed: derive_seed(seed_env.seed, u64::MAX),
                episodes_per_eval: env.episodes_per_eval * FINAL_EVAL_SCALE,
                ..seed_env.clone()
            };
            let final_stats =
                evaluate(&outcome.final_params, &final_env, reward_cfg, arm.use_shaping());
            runs.push(RunRecord {
                seed,
                arm,
                init: search.init,
                final_params: outcome.final_params,
                final_stats,
                trace: outcome.trace,
            });
        }
    }
    let summaries = Arm::ALL
        .iter()
        .map(|&arm| {
            let arm_runs: Vec<&RunRecord> = runs.iter().filter(|r| r.arm == arm).collect();
            let n = arm_runs.len() as f64;
            let mean = |f: &dyn Fn(&RunRecord) -> f64| {
                arm_runs.iter().map(|r| f(r)).sum::<f64>() / n
            };
            ArmSummary {
                arm,
                mean_g: mean(&|r| r.final_params.g),
                mean_d: mean(&|r| r.final_params.d),
                mean_a: mean(&|r| r.final_params.a),
                mean_reward: mean(&|r| r.final_stats.mean_reward),
                mean_a_blank: mean(&|r| r.final_stats.a_blank),
                mean_sar: mean(&|r| r.final_stats.sar),
                mean_nts: mean(&|r| r.final_stats.nts),
                mean_lrr: mean(&|r| r.final_stats.lrr),
            }
        })
        .collect();
    Ok(ExperimentReport { runs, summaries })
}
