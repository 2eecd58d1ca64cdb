//! Sampling from the generative model, an exhaustive enumeration oracle
//! for small instances, and the seeded synthetic benchmark.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bosd::BosdFilter;
use crate::error::{Error, Result};
use crate::learning::{Segment, SegmentLabels};
use crate::math::{entropy, ln_or_neg_inf, log_add_exp};
use crate::model::{DurationPmf, HsmmParams};
use crate::trace::{quantile, PosteriorTrace, FULL_RESOLUTION};
use crate::upm::{PredictiveModel, SineUpm, Upm};

/// A sampled sequence with its ground truth. `duration` is the full drawn
/// duration even for a final segment cut off at `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSequence {
    pub observations: Vec<Vec<f64>>,
    pub labels: SegmentLabels,
    pub run_length: Vec<usize>,
    pub duration: Vec<usize>,
    pub state: Vec<usize>,
    pub residual: Vec<usize>,
    pub seed: u64,
}

impl SampledSequence {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Checks that the per-step truth agrees with the labels.
    pub fn check_consistency(&self) -> std::result::Result<(), String> {
        let t_len = self.len();
        for v in [
            &self.run_length,
            &self.duration,
            &self.state,
            &self.residual,
        ] {
            if v.len() != t_len {
                return Err("per-step truth and observations differ in length".into());
            }
        }
        if self.labels.len() != t_len {
            return Err("labels do not cover the sequence".into());
        }
        let n = self.labels.segments.len();
        for (j, s) in self.labels.segments.iter().enumerate() {
            for (r, t) in s.range().enumerate() {
                if self.run_length[t] != r || self.state[t] != s.state {
                    return Err(format!("step {}: truth disagrees with segment {j}", t + 1));
                }
                if self.residual[t] + r + 1 != self.duration[t] {
                    return Err(format!("step {}: residual is not d - 1 - r", t + 1));
                }
                let complete = !(self.labels.final_truncated && j + 1 == n);
                if complete && self.duration[t] != s.duration {
                    return Err(format!(
                        "step {}: duration disagrees with segment {j}",
                        t + 1
                    ));
                }
            }
        }
        Ok(())
    }
}

fn weighted(p: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(p).expect("validated probability vector")
}

/// Draws `t_len` observations. The last segment is cut at `t_len` and
/// flagged when its drawn duration runs past the end.
pub fn sample(params: &HsmmParams, t_len: usize, seed: u64) -> Result<SampledSequence> {
    let params = params.clone().checked()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = weighted(&params.pi);
    let a: Vec<_> = params.a.iter().map(|r| weighted(r)).collect();
    let d: Vec<_> = params.d.iter().map(|r| weighted(r)).collect();

    let mut out = SampledSequence {
        observations: Vec::with_capacity(t_len),
        labels: SegmentLabels::default(),
        run_length: Vec::with_capacity(t_len),
        duration: Vec::with_capacity(t_len),
        state: Vec::with_capacity(t_len),
        residual: Vec::with_capacity(t_len),
        seed,
    };
    let mut z = pi.sample(&mut rng);
    while out.observations.len() < t_len {
        let dur = d[z].sample(&mut rng) + 1;
        let ys = params.upm[z].sample_segment(dur, &mut rng);
        let start = out.observations.len() + 1;
        let kept = dur.min(t_len - out.observations.len());
        for (r, y) in ys.into_iter().take(kept).enumerate() {
            out.observations.push(y);
            out.run_length.push(r);
            out.duration.push(dur);
            out.state.push(z);
            out.residual.push(dur - 1 - r);
        }
        out.labels.segments.push(Segment {
            state: z,
            start,
            duration: kept,
        });
        out.labels.final_truncated = kept < dur;
        z = a[z].sample(&mut rng);
    }
    debug_assert_eq!(out.check_consistency(), Ok(()));
    Ok(out)
}

/// Exact posterior after `t` observations, `joint[z][d - 1][r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedStep {
    /// `log p(y_1..y_t)`.
    pub log_marginal: f64,
    pub joint: Vec<Vec<Vec<f64>>>,
}

impl EnumeratedStep {
    pub fn prob(&self, z: usize, d: usize, r: usize) -> f64 {
        self.joint[z][d - 1].get(r).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationResult {
    /// One entry per prefix length `t = 1..=T`.
    pub steps: Vec<EnumeratedStep>,
}

impl EnumerationResult {
    pub fn log_marginal(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.log_marginal)
    }
}

pub const ENUMERATION_MAX_T: usize = 10;
pub const ENUMERATION_MAX_K: usize = 3;
pub const ENUMERATION_MAX_D: usize = 5;

/// Sums over every labeled segmentation of each prefix. The last segment
/// of a prefix may be unfinished, so its duration ranges over all values at
/// least as long as what was observed.
pub fn enumerate_posterior(
    params: &HsmmParams,
    observations: &[Vec<f64>],
) -> Result<EnumerationResult> {
    let params = params.clone().checked()?;
    let t_len = observations.len();
    if t_len > ENUMERATION_MAX_T || params.k > ENUMERATION_MAX_K || params.d_max > ENUMERATION_MAX_D
    {
        return Err(Error::InstanceTooLarge(format!(
            "T = {t_len}, K = {}, D_max = {}; limits are {ENUMERATION_MAX_T}, {ENUMERATION_MAX_K}, {ENUMERATION_MAX_D}",
            params.k, params.d_max
        )));
    }
    for y in observations {
        params.upm[0].check_observation(y)?;
    }
    let steps = (1..=t_len)
        .map(|t| enumerate_prefix(&params, &observations[..t]))
        .collect();
    Ok(EnumerationResult { steps })
}

fn enumerate_prefix(p: &HsmmParams, ys: &[Vec<f64>]) -> EnumeratedStep {
    let mut log_joint: Vec<Vec<Vec<f64>>> = (0..p.k)
        .map(|_| (1..=p.d_max).map(|d| vec![f64::NEG_INFINITY; d]).collect())
        .collect();
    walk(p, ys, 0, None, 0.0, &mut log_joint);
    let mut total = f64::NEG_INFINITY;
    for v in log_joint.iter().flatten().flatten() {
        total = log_add_exp(total, *v);
    }
    let joint = log_joint
        .into_iter()
        .map(|rows| {
            rows.into_iter()
                .map(|row| row.into_iter().map(|v| (v - total).exp()).collect())
                .collect()
        })
        .collect();
    EnumeratedStep {
        log_marginal: total,
        joint,
    }
}

fn walk(
    p: &HsmmParams,
    ys: &[Vec<f64>],
    pos: usize,
    prev: Option<usize>,
    acc: f64,
    out: &mut [Vec<Vec<f64>>],
) {
    let t = ys.len();
    for z in 0..p.k {
        let enter = match prev {
            None => ln_or_neg_inf(p.pi[z]),
            Some(i) => ln_or_neg_inf(p.a[i][z]),
        };
        if enter == f64::NEG_INFINITY {
            continue;
        }
        for len in 1..=p.d_max.min(t - pos) {
            let seg = &ys[pos..pos + len];
            if pos + len == t {
                // unfinished (or exactly finished) last segment
                for d in len..=p.d_max {
                    let v = acc
                        + enter
                        + ln_or_neg_inf(p.d[z][d - 1])
                        + p.upm[z].segment_loglik(seg, d);
                    if v > f64::NEG_INFINITY {
                        let cell = &mut out[z][d - 1][len - 1];
                        *cell = log_add_exp(*cell, v);
                    }
                }
            } else {
                let v = acc
                    + enter
                    + ln_or_neg_inf(p.d[z][len - 1])
                    + p.upm[z].segment_loglik(seg, len);
                if v > f64::NEG_INFINITY {
                    walk(p, ys, pos + len, Some(z), v, out);
                }
            }
        }
    }
}

/// Settings of the four-state scaled-sine replica. The defaults are this
/// crate's own choice; no published values exist to match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub t_len: usize,
    pub d_max: usize,
    pub sigma2: f64,
    /// `(b_k, c_k)` per state.
    pub amplitudes: Vec<(f64, f64)>,
    /// Centre of each state's bell-shaped duration distribution.
    pub duration_means: Vec<f64>,
    pub duration_sd: f64,
    /// Probability of moving to the next state in cyclic order; the rest
    /// is spread over the remaining other states. No self-transitions.
    pub cycle_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            t_len: 1000,
            d_max: 60,
            sigma2: 0.01,
            amplitudes: vec![(3.0, 0.0), (0.0, 3.0), (-3.0, 0.0), (0.0, -3.0)],
            duration_means: vec![20.0, 30.0, 40.0, 25.0],
            duration_sd: 4.0,
            cycle_prob: 0.8,
        }
    }
}

impl SyntheticConfig {
    pub fn params(&self) -> Result<HsmmParams> {
        let k = self.amplitudes.len();
        if k < 2 || self.duration_means.len() != k {
            return Err(Error::Input(
                "synthetic config needs at least 2 states and one duration mean per state".into(),
            ));
        }
        let a = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| {
                        if j == i {
                            0.0
                        } else if j == (i + 1) % k {
                            if k == 2 {
                                1.0
                            } else {
                                self.cycle_prob
                            }
                        } else {
                            (1.0 - self.cycle_prob) / (k - 2) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let d = self
            .duration_means
            .iter()
            .map(|&mu| {
                let w: Vec<f64> = (1..=self.d_max)
                    .map(|d| (-(d as f64 - mu).powi(2) / (2.0 * self.duration_sd.powi(2))).exp())
                    .collect();
                let total: f64 = w.iter().sum();
                DurationPmf::new(w.iter().map(|v| v / total).collect()).map(|p| p.mass().to_vec())
            })
            .collect::<Result<Vec<_>>>()?;
        let upm = self
            .amplitudes
            .iter()
            .map(|&(b, c)| SineUpm::new(b, c, self.sigma2).map(Upm::from))
            .collect::<Result<Vec<_>>>()?;
        HsmmParams {
            k,
            d_max: self.d_max,
            pi: vec![1.0 / k as f64; k],
            a,
            d,
            upm,
        }
        .checked()
    }
}

/// Sampled sequence, its filtered trace and the residual marginals (kept
/// at full resolution for the summary statistics below).
#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub params: HsmmParams,
    pub sequence: SampledSequence,
    pub trace: PosteriorTrace,
    pub residual: Vec<Vec<f64>>,
    pub run_length: Vec<Vec<f64>>,
}

pub fn synthetic_benchmark(config: &SyntheticConfig, seed: u64) -> Result<SyntheticRun> {
    let params = config.params()?;
    let sequence = sample(&params, config.t_len, seed)?;
    let mut filter = BosdFilter::new(&params)?;
    let mut trace = PosteriorTrace::new(params.k, params.d_max, FULL_RESOLUTION);
    let mut residual = Vec::with_capacity(sequence.len());
    let mut run_length = Vec::with_capacity(sequence.len());
    for y in &sequence.observations {
        let m = filter.step(y)?;
        trace.push(&m);
        residual.push(m.residual);
        run_length.push(m.run_length);
    }
    Ok(SyntheticRun {
        params,
        sequence,
        trace,
        residual,
        run_length,
    })
}

impl SyntheticRun {
    pub fn map_accuracy(&self) -> f64 {
        let hits = self
            .trace
            .map_states()
            .iter()
            .zip(&self.sequence.state)
            .filter(|(a, b)| a == b)
            .count();
        hits as f64 / self.sequence.len() as f64
    }

    /// Fraction of steps whose true run length lies in the central
    /// `level` credible interval of the run-length marginal.
    pub fn run_length_coverage(&self, level: f64) -> f64 {
        let lo = (1.0 - level) / 2.0;
        let hi = 1.0 - lo;
        let inside = self
            .run_length
            .iter()
            .zip(&self.sequence.run_length)
            .filter(|(p, &r)| {
                let cdf = crate::math::cumulative(p);
                quantile(&cdf, lo) <= r && r <= quantile(&cdf, hi)
            })
            .count();
        inside as f64 / self.sequence.len() as f64
    }

    /// Mean residual-time entropy over steps in the first quarter of their
    /// segment (`r < d / 4`) and over steps in the second half (`r >= d / 2`).
    pub fn residual_entropy_by_phase(&self) -> (f64, f64) {
        let (mut early, mut ne, mut late, mut nl) = (0.0, 0, 0.0, 0);
        for (t, p) in self.residual.iter().enumerate() {
            let (r, d) = (
                self.sequence.run_length[t] as f64,
                self.sequence.duration[t] as f64,
            );
            let h = entropy(p);
            if r < d / 4.0 {
                early += h;
                ne += 1;
            } else if r >= d / 2.0 {
                late += h;
                nl += 1;
            }
        }
        (early / ne.max(1) as f64, late / nl.max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::upm::GaussianUpm;

    fn gauss(mean: f64) -> Upm {
        GaussianUpm::fixed(vec![mean], vec![vec![1.0]])
            .unwrap()
            .into()
    }

    fn model(k: usize, d_rows: Vec<Vec<f64>>) -> HsmmParams {
        let a = if k == 1 {
            vec![vec![1.0]]
        } else {
            (0..k)
                .map(|i| {
                    (0..k)
                        .map(|j| if i == j { 0.0 } else { 1.0 / (k - 1) as f64 })
                        .collect()
                })
                .collect()
        };
        HsmmParams {
            k,
            d_max: d_rows[0].len(),
            pi: vec![1.0 / k as f64; k],
            a,
            d: d_rows,
            upm: (0..k).map(|z| gauss(z as f64 * 2.0)).collect(),
        }
    }

    #[test]
    fn point_duration_gives_two_segments() {
        let p = model(1, vec![DurationPmf::point(5, 6).unwrap().mass().to_vec()]);
        let s = sample(&p, 10, 1).unwrap();
        assert_eq!(s.labels.segments.len(), 2);
        assert!(!s.labels.final_truncated);
        s.check_consistency().unwrap();
    }

    #[test]
    fn single_state_never_switches() {
        let p = model(1, vec![DurationPmf::uniform(4).unwrap().mass().to_vec()]);
        let s = sample(&p, 50, 3).unwrap();
        assert!(s.labels.segments.iter().all(|seg| seg.state == 0));
    }

    #[test]
    fn seed_determinism_and_truncation_flag() {
        let p = model(2, vec![DurationPmf::uniform(7).unwrap().mass().to_vec(); 2]);
        let a = sample(&p, 33, 42).unwrap();
        assert_eq!(a, sample(&p, 33, 42).unwrap());
        assert_ne!(a.observations, sample(&p, 33, 43).unwrap().observations);
        let last = a.labels.segments.last().unwrap();
        assert_eq!(a.labels.final_truncated, a.duration[32] > last.duration);
        a.check_consistency().unwrap();
    }

    #[test]
    fn duration_histogram_matches_pmf() {
        let pmf = vec![0.1, 0.2, 0.4, 0.2, 0.1];
        let p = model(2, vec![pmf.clone(), pmf.clone()]);
        let s = sample(&p, 40_000, 7).unwrap();
        let segs = &s.labels.segments[..s.labels.segments.len() - 1];
        let mut hist = [0.0; 5];
        for seg in segs.iter().take(10_000) {
            hist[seg.duration - 1] += 1.0;
        }
        let n: f64 = hist.iter().sum();
        assert_eq!(n, 10_000.0);
        let tv: f64 = hist
            .iter()
            .zip(&pmf)
            .map(|(h, q)| (h / n - q).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "total variation {tv}");
    }

    #[test]
    fn single_observation_enumeration() {
        let p = model(2, vec![vec![0.5, 0.5], vec![0.2, 0.8]]);
        let y = vec![vec![0.7]];
        let e = enumerate_posterior(&p, &y).unwrap();
        let mut w = Vec::new();
        for z in 0..2 {
            for d in 1..=2 {
                w.push(
                    p.pi[z]
                        * p.d[z][d - 1]
                        * p.upm[z]
                            .log_predictive(&y[0], 0, d, &p.upm[z].prior())
                            .exp(),
                );
            }
        }
        let s: f64 = w.iter().sum();
        let mut i = 0;
        for z in 0..2 {
            for d in 1..=2 {
                assert!((e.steps[0].prob(z, d, 0) - w[i] / s).abs() < 1e-14);
                i += 1;
            }
        }
        assert!((e.log_marginal() - s.ln()).abs() < 1e-14);
    }

    #[test]
    fn enumeration_refuses_large_instances() {
        let p = model(1, vec![DurationPmf::uniform(6).unwrap().mass().to_vec()]);
        assert!(matches!(
            enumerate_posterior(&p, &[vec![0.0]]),
            Err(Error::InstanceTooLarge(_))
        ));
        let p = model(1, vec![DurationPmf::uniform(3).unwrap().mass().to_vec()]);
        assert!(matches!(
            enumerate_posterior(&p, &vec![vec![0.0]; 11]),
            Err(Error::InstanceTooLarge(_))
        ));
    }

    #[test]
    fn default_synthetic_params_are_valid() {
        let p = SyntheticConfig::default().params().unwrap();
        assert_eq!(p.k, 4);
        assert!(p.validate().is_empty());
    }
}
