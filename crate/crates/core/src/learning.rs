//! Supervised estimation of `pi`, `A`, `D` and the UPMs from labeled
//! segmentations.
//!
//! The estimators are normalized counts: first-segment states for `pi`,
//! adjacent segment pairs for `A`, complete segment durations for `D`. An
//! additive pseudo-count (Dirichlet MAP) keeps unseen events possible.
//!
//! Unsupervised learning would replace the indicator counts by their
//! posterior expectations under a forward-backward pass; that is not
//! implemented here.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::ln_or_neg_inf;
use crate::model::HsmmParams;
use crate::upm::{fit_mle, PredictiveModel, SegmentBlock, UpmFamily};

/// One labeled segment; `start` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub state: usize,
    pub start: usize,
    pub duration: usize,
}

impl Segment {
    /// 0-based half-open range of observation indices.
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start - 1..self.start - 1 + self.duration
    }
}

/// Ordered segments of one sequence. `final_truncated` marks a last
/// segment that was cut off by the end of the sequence, so its `duration`
/// is only a lower bound on the true one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentLabels {
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub final_truncated: bool,
}

impl SegmentLabels {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self {
            segments,
            final_truncated: false,
        }
    }

    /// Consecutive segments with the given `(state, duration)` pairs starting at 1.
    pub fn from_runs(runs: &[(usize, usize)]) -> Self {
        let mut start = 1;
        let segments = runs
            .iter()
            .map(|&(state, duration)| {
                let s = Segment {
                    state,
                    start,
                    duration,
                };
                start += duration;
                s
            })
            .collect();
        Self::new(segments)
    }

    /// Number of time steps covered.
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Checks that the segments tile `[1, t_len]` and fit a `k`-state model
    /// with maximum duration `d_max`.
    pub fn validate(&self, t_len: usize, k: usize, d_max: usize) -> Result<()> {
        let mut next = 1;
        for (i, s) in self.segments.iter().enumerate() {
            if s.start != next {
                return Err(Error::InvalidLabels(format!(
                    "segment {i} starts at {} but the previous one ends at {}",
                    s.start,
                    next - 1
                )));
            }
            if s.duration == 0 {
                return Err(Error::InvalidLabels(format!("segment {i} has duration 0")));
            }
            if s.duration > d_max {
                return Err(Error::InvalidLabels(format!(
                    "segment {i} (start {}) has duration {} above d_max = {d_max}",
                    s.start, s.duration
                )));
            }
            if s.state >= k {
                return Err(Error::InvalidLabels(format!(
                    "segment {i} (start {}) has state {} but the model has {k} states",
                    s.start, s.state
                )));
            }
            next += s.duration;
        }
        if next - 1 != t_len {
            return Err(Error::InvalidLabels(format!(
                "segments cover 1..={} but the sequence has {t_len} observations",
                next - 1
            )));
        }
        Ok(())
    }

    /// State label of every time step.
    pub fn states_per_step(&self) -> Vec<usize> {
        self.segments
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.state, s.duration))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub observations: Vec<Vec<f64>>,
    pub labels: SegmentLabels,
}

fn default_smoothing() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub k: usize,
    pub d_max: usize,
    /// Pseudo-count added to every `pi`, `A` and `D` cell.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    pub upm: UpmFamily,
    /// Treat the last segment of every sequence as cut off, even when the
    /// labels do not say so (useful for label files, which carry no flag).
    #[serde(default)]
    pub exclude_final_segment: bool,
}

/// `(pi, A, D, warnings)`.
pub type Estimates = (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<String>);

/// Raw event counts behind the estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCounts {
    pub pi: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

impl SegmentCounts {
    pub fn zeros(k: usize, d_max: usize) -> Self {
        Self {
            pi: vec![0.0; k],
            a: vec![vec![0.0; k]; k],
            d: vec![vec![0.0; d_max]; k],
        }
    }

    /// Adds one sequence. The final segment's duration is skipped when
    /// `skip_final_duration` is set.
    pub fn add(&mut self, labels: &SegmentLabels, skip_final_duration: bool) {
        let segs = &labels.segments;
        let Some(first) = segs.first() else { return };
        self.pi[first.state] += 1.0;
        for w in segs.windows(2) {
            self.a[w[0].state][w[1].state] += 1.0;
        }
        let n_complete = if skip_final_duration {
            segs.len() - 1
        } else {
            segs.len()
        };
        for s in &segs[..n_complete] {
            self.d[s.state][s.duration - 1] += 1.0;
        }
    }

    pub fn merge(&mut self, other: &SegmentCounts) {
        add_into(&mut self.pi, &other.pi);
        for (a, b) in self.a.iter_mut().zip(&other.a) {
            add_into(a, b);
        }
        for (a, b) in self.d.iter_mut().zip(&other.d) {
            add_into(a, b);
        }
    }

    /// Smoothed, normalized `(pi, A, D)`. Warnings describe any fallback.
    pub fn estimate(&self, alpha: f64) -> Result<Estimates> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Fit(format!(
                "smoothing {alpha} must be a finite non-negative number"
            )));
        }
        let k = self.pi.len();
        let mut warnings = Vec::new();
        let pi = normalize(&self.pi, alpha).ok_or_else(|| {
            Error::Fit("no sequences to estimate the initial distribution from".into())
        })?;
        let mut a = Vec::with_capacity(k);
        for (i, row) in self.a.iter().enumerate() {
            match normalize(row, alpha) {
                Some(r) => a.push(r),
                None => {
                    let msg = format!(
                        "state {i} is never followed by another segment; its transition row is set uniform over the other states"
                    );
                    warn!("{msg}");
                    warnings.push(msg);
                    a.push(if k == 1 {
                        vec![1.0]
                    } else {
                        (0..k)
                            .map(|j| if j == i { 0.0 } else { 1.0 / (k - 1) as f64 })
                            .collect()
                    });
                }
            }
        }
        let mut d = Vec::with_capacity(k);
        for (i, row) in self.d.iter().enumerate() {
            d.push(normalize(row, alpha).ok_or_else(|| {
                Error::Fit(format!(
                    "state {i} has no complete segment to estimate its duration distribution; use smoothing > 0"
                ))
            })?);
        }
        Ok((pi, a, d, warnings))
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn normalize(counts: &[f64], alpha: f64) -> Option<Vec<f64>> {
    let total: f64 = counts.iter().map(|c| c + alpha).sum();
    if total <= 0.0 {
        return None;
    }
    Some(counts.iter().map(|c| (c + alpha) / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: HsmmParams,
    pub counts: SegmentCounts,
    pub smoothing: f64,
    pub warnings: Vec<String>,
}

fn final_is_cut(labels: &SegmentLabels, config: &FitConfig) -> bool {
    labels.final_truncated || config.exclude_final_segment
}

pub fn fit_supervised(sequences: &[LabeledSequence], config: &FitConfig) -> Result<FitReport> {
    if config.k == 0 || config.d_max == 0 {
        return Err(Error::Fit("k and d_max must be positive".into()));
    }
    let mut counts = SegmentCounts::zeros(config.k, config.d_max);
    let mut blocks = Vec::new();
    let mut dim = None;
    for (i, seq) in sequences.iter().enumerate() {
        seq.labels
            .validate(seq.observations.len(), config.k, config.d_max)
            .map_err(|e| Error::InvalidLabels(format!("sequence {i}: {e}")))?;
        for (t, y) in seq.observations.iter().enumerate() {
            if *dim.get_or_insert(y.len()) != y.len() {
                return Err(Error::Input(format!(
                    "sequence {i}, step {}: dimension {} differs from earlier observations",
                    t + 1,
                    y.len()
                )));
            }
        }
        let cut = final_is_cut(&seq.labels, config);
        counts.add(&seq.labels, cut);
        let n = seq.labels.segments.len();
        for (j, s) in seq.labels.segments.iter().enumerate() {
            blocks.push(SegmentBlock {
                state: s.state,
                observations: &seq.observations[s.range()],
                duration: if cut && j + 1 == n {
                    None
                } else {
                    Some(s.duration)
                },
            });
        }
    }
    if blocks.is_empty() {
        return Err(Error::Fit("no labeled segments".into()));
    }
    let (pi, a, d, mut warnings) = counts.estimate(config.smoothing)?;
    let fitted = fit_mle(&config.upm, config.k, &blocks)?;
    for note in &fitted.notes {
        warn!("{note}");
    }
    warnings.extend(fitted.notes);
    let params = HsmmParams {
        k: config.k,
        d_max: config.d_max,
        pi,
        a,
        d,
        upm: fitted.upm,
    }
    .checked()?;
    Ok(FitReport {
        params,
        counts,
        smoothing: config.smoothing,
        warnings,
    })
}

/// `log p(S) + log p(Y | S)` with the location of every zero-probability event.
#[derive(Debug, Clone, PartialEq)]
pub struct CompleteDataLoglik {
    pub log_p_labels: f64,
    pub log_p_observations: f64,
    pub impossible: Vec<String>,
}

impl CompleteDataLoglik {
    pub fn total(&self) -> f64 {
        self.log_p_labels + self.log_p_observations
    }
}

/// A truncated final segment contributes `log sum_{d >= observed} D(z, d) p(Y | d)`.
pub fn complete_data_loglik(
    params: &HsmmParams,
    sequences: &[LabeledSequence],
) -> Result<CompleteDataLoglik> {
    let params = params.clone().checked()?;
    let mut out = CompleteDataLoglik {
        log_p_labels: 0.0,
        log_p_observations: 0.0,
        impossible: Vec::new(),
    };
    fn note(out: &mut CompleteDataLoglik, v: f64, what: String) {
        if v == f64::NEG_INFINITY {
            out.impossible.push(what);
        }
    }
    for (i, seq) in sequences.iter().enumerate() {
        seq.labels
            .validate(seq.observations.len(), params.k, params.d_max)?;
        let segs = &seq.labels.segments;
        let first = segs[0].state;
        let v = ln_or_neg_inf(params.pi[first]);
        note(&mut out, v, format!("sequence {i}: pi[{first}] = 0"));
        out.log_p_labels += v;
        for (j, w) in segs.windows(2).enumerate() {
            let v = ln_or_neg_inf(params.a[w[0].state][w[1].state]);
            note(
                &mut out,
                v,
                format!(
                    "sequence {i}, segment {}: A[{}][{}] = 0",
                    j + 1,
                    w[0].state,
                    w[1].state
                ),
            );
            out.log_p_labels += v;
        }
        for (j, s) in segs.iter().enumerate() {
            let upm = &params.upm[s.state];
            let ys = &seq.observations[s.range()];
            let truncated = seq.labels.final_truncated && j + 1 == segs.len();
            if truncated {
                // duration and emissions are coupled for dependent UPMs
                let terms: Vec<f64> = (s.duration..=params.d_max)
                    .map(|d| ln_or_neg_inf(params.d[s.state][d - 1]) + upm.segment_loglik(ys, d))
                    .collect();
                let v = crate::math::log_sum_exp(&terms);
                note(
                    &mut out,
                    v,
                    format!("sequence {i}, truncated segment {j}: zero probability"),
                );
                out.log_p_observations += v;
            } else {
                let vd = ln_or_neg_inf(params.d[s.state][s.duration - 1]);
                note(
                    &mut out,
                    vd,
                    format!(
                        "sequence {i}, segment {j}: D[{}][{}] = 0",
                        s.state, s.duration
                    ),
                );
                out.log_p_labels += vd;
                let vy = upm.segment_loglik(ys, s.duration);
                note(
                    &mut out,
                    vy,
                    format!("sequence {i}, segment {j}: observations have zero density"),
                );
                out.log_p_observations += vy;
            }
        }
    }
    Ok(out)
}
