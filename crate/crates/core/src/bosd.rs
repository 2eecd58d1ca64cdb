//! Joint filter over run length, segment duration and hidden state.
//!
//! The posterior `p(r_t, d_t, z_t | Y_{1:t})` lives on the triangle
//! `r < d` for every state. A hypothesis either grows (`r + 1`, same `d` and
//! `z`) or, when `r = d - 1`, completes its segment. Completed mass is pushed
//! through the transition matrix and spread over the durations of the next
//! segment, which starts at `r = 0` with the incoming observation.
//!
//! Mass is kept in the linear domain and renormalized every step; the
//! likelihoods are shifted by their maximum before exponentiation, with a
//! log-domain fallback if the shifted sum still underflows.

use crate::error::{Error, Result};
use crate::math::{argmax, cumulative, ln_or_neg_inf, log_sum_exp};
use crate::model::HsmmParams;
use crate::upm::{DurationDependence, PredictiveModel, UpmState};

/// Below this the shifted evidence sum is recomputed in the log domain.
const LINEAR_FLOOR: f64 = 1e-280;

/// Triangular index over `(z, d, r)` with `1 <= d <= d_max`, `r < d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Grid {
    k: usize,
    d_max: usize,
    per_state: usize,
}

impl Grid {
    fn new(k: usize, d_max: usize) -> Self {
        Self {
            k,
            d_max,
            per_state: d_max * (d_max + 1) / 2,
        }
    }

    fn len(&self) -> usize {
        self.k * self.per_state
    }

    /// Index of `(z, d, r = 0)`.
    #[inline]
    fn offset(&self, z: usize, d: usize) -> usize {
        z * self.per_state + d * (d - 1) / 2
    }
}

/// `p(r_t, d_t, z_t | Y_{1:t})`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPosterior {
    grid: Grid,
    mass: Vec<f64>,
}

impl JointPosterior {
    pub fn k(&self) -> usize {
        self.grid.k
    }

    pub fn d_max(&self) -> usize {
        self.grid.d_max
    }

    /// Probability of `(z, d, r)`; zero outside the support `r < d`.
    pub fn prob(&self, z: usize, d: usize, r: usize) -> f64 {
        if d == 0 || d > self.grid.d_max || r >= d || z >= self.grid.k {
            return 0.0;
        }
        self.mass[self.grid.offset(z, d) + r]
    }

    pub fn ln_prob(&self, z: usize, d: usize, r: usize) -> f64 {
        ln_or_neg_inf(self.prob(z, d, r))
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Every supported cell as `(z, d, r, p)`.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        let g = self.grid;
        (0..g.k).flat_map(move |z| {
            (1..=g.d_max).flat_map(move |d| {
                let off = g.offset(z, d);
                (0..d).map(move |r| (z, d, r, self.mass[off + r]))
            })
        })
    }

    pub fn marginals(&self, log_evidence: f64) -> StepMarginals {
        let g = self.grid;
        let mut run_length = vec![0.0; g.d_max];
        let mut residual = vec![0.0; g.d_max];
        let mut duration = vec![0.0; g.d_max];
        let mut state = vec![0.0; g.k];
        for (z, state_z) in state.iter_mut().enumerate() {
            for d in 1..=g.d_max {
                let off = g.offset(z, d);
                let block = &self.mass[off..off + d];
                let mut sum = 0.0;
                for (r, &p) in block.iter().enumerate() {
                    run_length[r] += p;
                    residual[d - 1 - r] += p;
                    sum += p;
                }
                duration[d - 1] += sum;
                *state_z += sum;
            }
        }
        StepMarginals {
            run_length,
            residual,
            duration,
            state,
            log_evidence,
        }
    }
}

/// Marginals of the joint posterior after one step. Vectors are indexed by
/// run length `0..d_max`, residual time `0..d_max`, duration `1..=d_max`
/// (stored at `d - 1`) and state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMarginals {
    pub run_length: Vec<f64>,
    pub residual: Vec<f64>,
    pub duration: Vec<f64>,
    pub state: Vec<f64>,
    /// `log p(y_t | Y_{1:t-1})`.
    pub log_evidence: f64,
}

impl StepMarginals {
    pub fn map_state(&self) -> usize {
        argmax(&self.state)
    }

    pub fn run_length_cdf(&self) -> Vec<f64> {
        cumulative(&self.run_length)
    }

    pub fn residual_cdf(&self) -> Vec<f64> {
        cumulative(&self.residual)
    }
}

/// Per-step argmax of the state marginals, ties to the lowest state.
pub fn map_state_sequence(state_marginals: &[Vec<f64>]) -> Vec<usize> {
    state_marginals.iter().map(|p| argmax(p)).collect()
}

/// UPM statistics, shared across durations when the UPM ignores `d`.
#[derive(Debug, Clone)]
enum Bank {
    /// `(z, r)` at `z * d_max + r`.
    Agnostic(Vec<UpmState>),
    /// `(z, d, r)` on the grid.
    Dependent(Vec<UpmState>),
}

#[derive(Debug, Clone)]
pub struct BosdFilter {
    params: HsmmParams,
    grid: Grid,
    posterior: JointPosterior,
    bank: Bank,
    t: usize,
    cumulative_log_evidence: f64,
    scratch: Scratch,
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    pred: Vec<f64>,
    lik: Vec<f64>,
}

impl BosdFilter {
    /// Base case: mass `pi_z * D_{z,d}` at `r = 0`; no observation absorbed.
    pub fn new(params: &HsmmParams) -> Result<Self> {
        let params = params.clone().checked()?;
        let grid = Grid::new(params.k, params.d_max);
        let mut mass = vec![0.0; grid.len()];
        for z in 0..grid.k {
            for d in 1..=grid.d_max {
                mass[grid.offset(z, d)] = params.pi[z] * params.d[z][d - 1];
            }
        }
        let bank = match params.dependence() {
            DurationDependence::Agnostic => Bank::Agnostic(
                (0..grid.k)
                    .flat_map(|z| std::iter::repeat_n(params.upm[z].prior(), grid.d_max))
                    .collect(),
            ),
            DurationDependence::Dependent => Bank::Dependent(
                (0..grid.k)
                    .flat_map(|z| std::iter::repeat_n(params.upm[z].prior(), grid.per_state))
                    .collect(),
            ),
        };
        let lik_len = match bank {
            Bank::Agnostic(_) => grid.k * grid.d_max,
            Bank::Dependent(_) => grid.len(),
        };
        Ok(Self {
            params,
            grid,
            posterior: JointPosterior { grid, mass },
            bank,
            t: 0,
            cumulative_log_evidence: 0.0,
            scratch: Scratch {
                pred: vec![0.0; grid.len()],
                lik: vec![0.0; lik_len],
            },
        })
    }

    pub fn params(&self) -> &HsmmParams {
        &self.params
    }

    pub fn posterior(&self) -> &JointPosterior {
        &self.posterior
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn cumulative_log_evidence(&self) -> f64 {
        self.cumulative_log_evidence
    }

    pub fn dependence(&self) -> DurationDependence {
        match self.bank {
            Bank::Agnostic(_) => DurationDependence::Agnostic,
            Bank::Dependent(_) => DurationDependence::Dependent,
        }
    }

    /// Marginals of the current posterior (the base case before any step).
    pub fn marginals(&self) -> StepMarginals {
        self.posterior.marginals(0.0)
    }

    /// `p(r_t, d_t, z_t | Y_{1:t-1})`.
    fn predicted_into(&self, out: &mut [f64]) {
        let g = self.grid;
        let post = &self.posterior.mass;
        if self.t == 0 {
            out.copy_from_slice(post);
            return;
        }
        let mut completed = vec![0.0; g.k];
        for (z, eta) in completed.iter_mut().enumerate() {
            for d in 1..=g.d_max {
                let off = g.offset(z, d);
                *eta += post[off + d - 1];
                out[off] = 0.0;
                out[off + 1..off + d].copy_from_slice(&post[off..off + d - 1]);
            }
        }
        for z in 0..g.k {
            let beta: f64 = (0..g.k)
                .map(|from| self.params.a[from][z] * completed[from])
                .sum();
            if beta == 0.0 {
                continue;
            }
            for d in 1..=g.d_max {
                out[g.offset(z, d)] = self.params.d[z][d - 1] * beta;
            }
        }
    }

    /// Log-likelihoods of `y` for every hypothesis with predicted mass.
    /// Returns the largest finite value.
    fn likelihoods_into(&self, y: &[f64], pred: &[f64], lik: &mut [f64]) -> f64 {
        let g = self.grid;
        let mut max = f64::NEG_INFINITY;
        match &self.bank {
            Bank::Agnostic(bank) => {
                for z in 0..g.k {
                    let upm = &self.params.upm[z];
                    // longest run length that still carries mass for state z
                    let mut reach = 0;
                    for d in 1..=g.d_max {
                        let off = g.offset(z, d);
                        if let Some(r) = pred[off..off + d].iter().rposition(|&p| p > 0.0) {
                            reach = reach.max(r + 1);
                        }
                    }
                    for r in 0..g.d_max {
                        let v = if r < reach {
                            upm.log_predictive(y, r, g.d_max, &bank[z * g.d_max + r])
                        } else {
                            f64::NEG_INFINITY
                        };
                        lik[z * g.d_max + r] = v;
                        if v > max {
                            max = v;
                        }
                    }
                }
            }
            Bank::Dependent(bank) => {
                for z in 0..g.k {
                    let upm = &self.params.upm[z];
                    for d in 1..=g.d_max {
                        let off = g.offset(z, d);
                        for r in 0..d {
                            let i = off + r;
                            let v = if pred[i] > 0.0 {
                                upm.log_predictive(y, r, d, &bank[i])
                            } else {
                                f64::NEG_INFINITY
                            };
                            lik[i] = v;
                            if v > max {
                                max = v;
                            }
                        }
                    }
                }
            }
        }
        max
    }

    #[inline]
    fn lik_index(&self, z: usize, d: usize, r: usize) -> usize {
        match self.bank {
            Bank::Agnostic(_) => z * self.grid.d_max + r,
            Bank::Dependent(_) => self.grid.offset(z, d) + r,
        }
    }

    /// Overwrites `pred` with the normalized posterior and returns the log
    /// evidence, or `None` if every hypothesis has zero likelihood.
    fn combine(&self, pred: &mut [f64], lik: &[f64], max: f64) -> Option<f64> {
        if !max.is_finite() {
            return None;
        }
        let g = self.grid;
        let mut sum = 0.0;
        match self.bank {
            Bank::Agnostic(_) => {
                let w: Vec<f64> = lik.iter().map(|&l| (l - max).exp()).collect();
                for z in 0..g.k {
                    let wz = &w[z * g.d_max..(z + 1) * g.d_max];
                    for d in 1..=g.d_max {
                        let off = g.offset(z, d);
                        for (p, &wr) in pred[off..off + d].iter_mut().zip(wz) {
                            *p *= wr;
                            sum += *p;
                        }
                    }
                }
            }
            Bank::Dependent(_) => {
                for (p, &l) in pred.iter_mut().zip(lik) {
                    if *p > 0.0 {
                        *p *= (l - max).exp();
                        sum += *p;
                    }
                }
            }
        }
        if sum >= LINEAR_FLOOR {
            pred.iter_mut().for_each(|p| *p /= sum);
            return Some(max + sum.ln());
        }
        // Linear sum underflowed: redo from the logs. `pred` now holds
        // pred * exp(lik - max), so recover log terms cell by cell.
        let mut logs = vec![f64::NEG_INFINITY; pred.len()];
        self.log_terms(&mut logs, lik);
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() {
            return None;
        }
        for (p, &l) in pred.iter_mut().zip(&logs) {
            *p = (l - lse).exp();
        }
        Some(lse)
    }

    /// `log pred + log lik` per cell, recomputing the prediction.
    fn log_terms(&self, out: &mut [f64], lik: &[f64]) {
        let mut pred = vec![0.0; self.grid.len()];
        self.predicted_into(&mut pred);
        let g = self.grid;
        for z in 0..g.k {
            for d in 1..=g.d_max {
                let off = g.offset(z, d);
                for r in 0..d {
                    let p = pred[off + r];
                    out[off + r] = if p > 0.0 {
                        p.ln() + lik[self.lik_index(z, d, r)]
                    } else {
                        f64::NEG_INFINITY
                    };
                }
            }
        }
    }

    /// Shared by [`Self::step`] and [`Self::predict_logpdf`] so both report
    /// the same number for the same `y`.
    fn evaluate(&self, y: &[f64], pred: &mut [f64], lik: &mut [f64]) -> Result<f64> {
        self.params.upm[0].check_observation(y)?;
        self.predicted_into(pred);
        let max = self.likelihoods_into(y, pred, lik);
        self.combine(pred, lik, max)
            .ok_or(Error::Underflow { step: self.t + 1 })
    }

    /// `log p(y | Y_{1:t})` for a candidate next observation.
    pub fn predict_logpdf(&self, y: &[f64]) -> Result<f64> {
        let mut pred = vec![0.0; self.scratch.pred.len()];
        let mut lik = vec![0.0; self.scratch.lik.len()];
        self.evaluate(y, &mut pred, &mut lik)
    }

    /// Absorb the next observation. On error the filter is unchanged.
    pub fn step(&mut self, y: &[f64]) -> Result<StepMarginals> {
        let mut scratch = std::mem::take(&mut self.scratch);
        let result = self.evaluate(y, &mut scratch.pred, &mut scratch.lik);
        let log_evidence = match result {
            Ok(v) => v,
            Err(e) => {
                self.scratch = scratch;
                return Err(e);
            }
        };
        std::mem::swap(&mut self.posterior.mass, &mut scratch.pred);
        self.scratch = scratch;
        self.advance_bank(y);
        self.t += 1;
        self.cumulative_log_evidence += log_evidence;
        Ok(self.posterior.marginals(log_evidence))
    }

    /// Hypothesis `r` at `t + 1` continues hypothesis `r - 1` at `t`.
    fn advance_bank(&mut self, y: &[f64]) {
        let g = self.grid;
        match &mut self.bank {
            Bank::Agnostic(bank) => {
                for z in 0..g.k {
                    let upm = &self.params.upm[z];
                    let row = &mut bank[z * g.d_max..(z + 1) * g.d_max];
                    row.rotate_right(1);
                    row[0] = upm.prior();
                    for (r, s) in row.iter_mut().enumerate().skip(1) {
                        upm.absorb(s, y, r - 1, g.d_max);
                    }
                }
            }
            Bank::Dependent(bank) => {
                for z in 0..g.k {
                    let upm = &self.params.upm[z];
                    for d in 1..=g.d_max {
                        let off = g.offset(z, d);
                        let block = &mut bank[off..off + d];
                        block.rotate_right(1);
                        block[0] = upm.prior();
                        for (r, s) in block.iter_mut().enumerate().skip(1) {
                            upm.absorb(s, y, r - 1, d);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DurationPmf;
    use crate::upm::{GaussianUpm, SineUpm, Upm};

    fn gauss(mean: f64) -> Upm {
        GaussianUpm::fixed(vec![mean], vec![vec![1.0]])
            .unwrap()
            .into()
    }

    fn two_state(d_max: usize) -> HsmmParams {
        HsmmParams {
            k: 2,
            d_max,
            pi: vec![0.5, 0.5],
            a: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            d: vec![
                DurationPmf::uniform(d_max).unwrap().mass().to_vec(),
                DurationPmf::truncated_geometric(0.3, d_max)
                    .unwrap()
                    .mass()
                    .to_vec(),
            ],
            upm: vec![gauss(-1.0), gauss(2.0)],
        }
    }

    #[test]
    fn point_duration_init() {
        let p = HsmmParams::from_hazard(&DurationPmf::point(3, 4).unwrap().hazard(), gauss(0.0));
        let f = BosdFilter::new(&p).unwrap();
        assert_eq!(f.posterior().prob(0, 3, 0), 1.0);
        assert!((f.posterior().total() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_init_and_state_marginal() {
        let mut p = two_state(4);
        p.d[1] = DurationPmf::uniform(4).unwrap().mass().to_vec();
        let f = BosdFilter::new(&p).unwrap();
        for z in 0..2 {
            for d in 1..=4 {
                assert!((f.posterior().prob(z, d, 0) - 0.125).abs() < 1e-15);
            }
        }
        let mut p = two_state(4);
        p.pi = vec![0.3, 0.7];
        let m = BosdFilter::new(&p).unwrap().marginals();
        assert!((m.state[0] - 0.3).abs() < 1e-15 && (m.state[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn first_prediction_is_weighted_prior_predictive() {
        let p = two_state(3);
        let f = BosdFilter::new(&p).unwrap();
        let y = [0.4];
        let direct = (0.5 * p.upm[0].log_predictive(&y, 0, 3, &UpmState::Empty).exp()
            + 0.5 * p.upm[1].log_predictive(&y, 0, 3, &UpmState::Empty).exp())
        .ln();
        assert!((f.predict_logpdf(&y).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn prediction_is_bit_identical_to_step_evidence() {
        let mut f = BosdFilter::new(&two_state(5)).unwrap();
        for y in [0.1, -1.3, 2.2, 2.0, 1.7, -0.9, -1.1] {
            let predicted = f.predict_logpdf(&[y]).unwrap();
            let m = f.step(&[y]).unwrap();
            assert_eq!(predicted.to_bits(), m.log_evidence.to_bits());
        }
    }

    #[test]
    fn support_and_normalization() {
        let mut f = BosdFilter::new(&two_state(6)).unwrap();
        for i in 0..40 {
            let m = f.step(&[(i as f64 * 0.7).sin() * 2.0]).unwrap();
            let total = f.posterior().total();
            assert!((total - 1.0).abs() < 1e-10);
            for v in [&m.run_length, &m.residual, &m.duration, &m.state] {
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
            // residual marginal by direct summation over the joint
            let mut res = [0.0; 6];
            for (_, d, r, p) in f.posterior().cells() {
                res[d - 1 - r] += p;
            }
            for (a, b) in res.iter().zip(&m.residual) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duration_dependent_bank() {
        let sine = |b: f64| -> Upm { SineUpm::new(b, -b, 0.05).unwrap().into() };
        let mut p = two_state(5);
        p.upm = vec![sine(1.0), sine(-2.0)];
        let mut f = BosdFilter::new(&p).unwrap();
        assert_eq!(f.dependence(), DurationDependence::Dependent);
        for i in 0..20 {
            let y = [(i as f64 * 0.3).sin(), -(i as f64 * 0.3).sin()];
            let e = f.predict_logpdf(&y).unwrap();
            assert_eq!(e, f.step(&y).unwrap().log_evidence);
            assert!((f.posterior().total() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn map_ties_go_to_lowest_state() {
        assert_eq!(
            map_state_sequence(&[vec![0.5, 0.5], vec![0.0, 1.0], vec![1.0, 0.0]]),
            vec![0, 1, 0]
        );
    }

    #[test]
    fn errors_leave_state_untouched() {
        let mut f = BosdFilter::new(&two_state(3)).unwrap();
        f.step(&[0.0]).unwrap();
        let before = f.posterior().clone();
        assert!(matches!(
            f.step(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            f.step(&[f64::INFINITY]),
            Err(Error::NonFiniteObservation)
        ));
        assert!(matches!(
            f.step(&[1e160]),
            Err(Error::Underflow { step: 2 })
        ));
        assert_eq!(f.posterior(), &before);
        assert_eq!(f.steps(), 1);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = two_state(3);
        p.a[0] = vec![0.5, 0.4];
        assert!(matches!(BosdFilter::new(&p), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn far_outliers_use_the_log_fallback() {
        // A state whose likelihood dominates but whose predicted mass is
        // tiny forces the shifted linear sum below the floor.
        let mut p = two_state(2);
        p.pi = vec![1.0 - 1e-300, 1e-300];
        p.upm = vec![gauss(0.0), gauss(40.0)];
        let mut f = BosdFilter::new(&p).unwrap();
        let m = f.step(&[40.0]).unwrap();
        assert!(m.log_evidence.is_finite());
        assert!((f.posterior().total() - 1.0).abs() < 1e-12);
        assert!(m.state[1] > 0.99);
    }
}
