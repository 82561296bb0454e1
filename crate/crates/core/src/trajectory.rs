//! Token-level entropy trajectories: entropy computation, think-span
//! extraction, resampling, l1 normalization, and stage-wise statistics.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Default fixed length for resampled trajectories.
pub const DEFAULT_RESAMPLE_LEN: usize = 64;
/// Default denominator guard for l1 normalization.
pub const DEFAULT_EPS: f64 = 1e-8;
/// Default early/middle/late partition ratios.
pub const DEFAULT_SEGMENT_RATIOS: [f64; 3] = [3.0, 4.0, 3.0];
/// Default minimum number of thinking-span tokens for a span to count as valid.
pub const DEFAULT_MIN_SPAN_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("empty trajectory")]
    Empty,
    #[error("trajectory of length {len} is shorter than the minimum of {min}")]
    TooShort { len: usize, min: usize },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("negative value {value} at index {index}")]
    Negative { index: usize, value: f64 },
    #[error("probability {value} at index {index} outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1 within 1e-6")]
    NotNormalized { sum: f64 },
    #[error("expected length {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("segment ratios must all be positive")]
    BadRatios,
}

/// Per-token entropy sequence (nats) over a thinking span.
///
/// Elements are finite and non-negative; the sequence may be empty when the
/// span was invalid or no trajectory data was logged.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EntropyTrajectory(Vec<f64>);

impl EntropyTrajectory {
    pub fn new(values: Vec<f64>) -> Result<Self, TrajectoryError> {
        for (index, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(TrajectoryError::NonFinite { index });
            }
            if v < 0.0 {
                return Err(TrajectoryError::Negative { index, value: v });
            }
        }
        Ok(Self(values))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Fixed-length, l1-normalized trajectory. The element sum lies in [0, 1)
/// and is 0 only for an all-zero source trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTrajectory(Vec<f64>);

impl NormalizedTrajectory {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }
}

/// Token index range of the first well-formed `<think>...</think>` block.
/// `start..end` indexes into the rollout's token list; `valid` is false when
/// the tags are missing, nested, out of order, or the span is too short.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThinkSpan {
    pub start: usize,
    pub end: usize,
    pub valid: bool,
}

impl ThinkSpan {
    pub fn invalid() -> Self {
        Self { start: 0, end: 0, valid: false }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Mean entropies of the early, middle, and late segments of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentStats {
    pub h_early: f64,
    pub h_mid: f64,
    pub h_late: f64,
    pub segment_lengths: [usize; 3],
}

/// Shannon entropy in nats of a probability distribution, with `0 ln 0 = 0`.
///
/// The distribution must be non-negative, elementwise at most 1, and sum to 1
/// within 1e-6.
pub fn entropy_from_distribution(probs: &[f64]) -> Result<f64, TrajectoryError> {
    if probs.is_empty() {
        return Err(TrajectoryError::Empty);
    }
    let mut sum = 0.0;
    for (index, &p) in probs.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(TrajectoryError::InvalidProbability { index, value: p });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(TrajectoryError::NotNormalized { sum });
    }
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * libm::log(p);
        }
    }
    Ok(h.max(0.0))
}

/// Finds the token range strictly inside the first well-ordered
/// `<think>...</think>` pair of `text`.
///
/// `token_offsets` are byte ranges, one per token, monotone over the text.
/// A token belongs to the span when its full byte range lies inside the tag
/// content. Missing, reversed, or nested tags yield an invalid span, as does
/// a span shorter than `min_span_len`; nothing is ever thrown.
pub fn extract_think_span(
    text: &str,
    token_offsets: &[(usize, usize)],
    min_span_len: usize,
) -> ThinkSpan {
    const OPEN: &str = "<think>";
    const CLOSE: &str = "</think>";

    let open = match text.find(OPEN) {
        Some(i) => i,
        None => return ThinkSpan::invalid(),
    };
    let close = match text.find(CLOSE) {
        Some(i) => i,
        None => return ThinkSpan::invalid(),
    };
    if close < open {
        return ThinkSpan::invalid();
    }
    let content_start = open + OPEN.len();
    if text[content_start..close].contains(OPEN) {
        return ThinkSpan::invalid();
    }

    let mut start = None;
    let mut end = 0;
    for (i, &(s, e)) in token_offsets.iter().enumerate() {
        if s >= content_start && e <= close && s < e {
            if start.is_none() {
                start = Some(i);
            }
            end = i + 1;
        }
    }
    match start {
        Some(start) => ThinkSpan { start, end, valid: end - start >= min_span_len },
        None => ThinkSpan::invalid(),
    }
}

/// Resamples a trajectory to length `target_len` by piecewise-linear
/// interpolation over the index grid mapping `[0, L-1]` onto
/// `[0, target_len-1]`. A length-1 input extends as a constant; `L == target_len`
/// is the exact identity.
pub fn resample(e: &EntropyTrajectory, target_len: usize) -> Result<Vec<f64>, TrajectoryError> {
    let src = e.values();
    let l = src.len();
    if l == 0 {
        return Err(TrajectoryError::Empty);
    }
    if l == 1 {
        return Ok(vec![src[0]; target_len]);
    }
    if l == target_len {
        return Ok(src.to_vec());
    }
    let mut out = Vec::with_capacity(target_len);
    if target_len == 1 {
        out.push(src[0]);
        return Ok(out);
    }
    let scale = (l - 1) as f64 / (target_len - 1) as f64;
    for j in 0..target_len {
        let pos = j as f64 * scale;
        let i0 = libm::floor(pos) as usize;
        let i1 = (i0 + 1).min(l - 1);
        let frac = pos - i0 as f64;
        out.push(src[i0] + (src[i1] - src[i0]) * frac);
    }
    Ok(out)
}

/// Divides each element by the element sum plus `eps`. An all-zero input maps
/// to the all-zero output.
pub fn l1_normalize(values: &[f64], eps: f64) -> Result<NormalizedTrajectory, TrajectoryError> {
    let mut sum = 0.0;
    for (index, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(TrajectoryError::NonFinite { index });
        }
        if v < 0.0 {
            return Err(TrajectoryError::Negative { index, value: v });
        }
        sum += v;
    }
    let denom = sum + eps;
    Ok(NormalizedTrajectory(values.iter().map(|&v| v / denom).collect()))
}

/// Resample to `target_len` then l1-normalize; the standard trajectory view
/// used for counterfactual comparison.
pub fn normalized_view(
    e: &EntropyTrajectory,
    target_len: usize,
    eps: f64,
) -> Result<NormalizedTrajectory, TrajectoryError> {
    l1_normalize(&resample(e, target_len)?, eps)
}

/// Segment boundary indices `(b1, b2)` for the given partition ratios:
/// nearest-integer rounding of the cumulative ratio positions, minimally
/// adjusted so every segment keeps at least one token.
pub fn segment_bounds(len: usize, ratios: [f64; 3]) -> Result<(usize, usize), TrajectoryError> {
    if ratios.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(TrajectoryError::BadRatios);
    }
    if len < 3 {
        return Err(TrajectoryError::TooShort { len, min: 3 });
    }
    let total = ratios[0] + ratios[1] + ratios[2];
    let b1 = libm::round(len as f64 * ratios[0] / total) as usize;
    let b2 = libm::round(len as f64 * (ratios[0] + ratios[1]) / total) as usize;
    let b1 = b1.clamp(1, len - 2);
    let b2 = b2.clamp(b1 + 1, len - 1);
    Ok((b1, b2))
}

/// Per-segment arithmetic means of the trajectory under the given ratios.
pub fn segment_means(
    e: &EntropyTrajectory,
    ratios: [f64; 3],
) -> Result<SegmentStats, TrajectoryError> {
    let values = e.values();
    let (b1, b2) = segment_bounds(values.len(), ratios)?;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok(SegmentStats {
        h_early: mean(&values[..b1]),
        h_mid: mean(&values[b1..b2]),
        h_late: mean(&values[b2..]),
        segment_lengths: [b1, b2 - b1, values.len() - b2],
    })
}

/// Late-stage entropy re-rise beyond the margin: `max(0, h_late - h_mid - m)`.
pub fn tail_delta(stats: &SegmentStats, margin: f64) -> f64 {
    (stats.h_late - stats.h_mid - margin).max(0.0)
}
