//! Run-length filter for Bayesian online change point detection.
//!
//! The filter keeps `log p(r_t | y_1..y_t)` for run lengths `0..=R`
//! (`R = d_max - 1`) and one UPM statistics value per run-length hypothesis.
//! The first observation always opens a segment (`r_1 = 0`); afterwards a
//! segment of run length `r` either ends with probability `H(r)` or grows.
//! The hazard is capped so that `H(R) = 1`.

use crate::error::{Error, Result};
use crate::math::{cumulative, ln_or_neg_inf, log_sum_exp, log_sum_exp_sum};
use crate::model::HazardFn;
use crate::upm::{DurationDependence, PredictiveModel, Upm, UpmState};

/// `log p(r_t | Y_{1:t})` over `r = 0..=R`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLengthPosterior {
    pub log_mass: Vec<f64>,
}

impl RunLengthPosterior {
    pub fn point(r: usize, len: usize) -> Self {
        let mut log_mass = vec![f64::NEG_INFINITY; len];
        log_mass[r] = 0.0;
        Self { log_mass }
    }

    pub fn from_probabilities(p: &[f64]) -> Self {
        Self {
            log_mass: p.iter().map(|&x| ln_or_neg_inf(x)).collect(),
        }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_mass.iter().map(|v| v.exp()).collect()
    }

    pub fn cdf(&self) -> Vec<f64> {
        cumulative(&self.probabilities())
    }

    pub fn len(&self) -> usize {
        self.log_mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_mass.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct BocpdFilter {
    upm: Upm,
    log_hazard: Vec<f64>,
    log_survive: Vec<f64>,
    posterior: RunLengthPosterior,
    bank: Vec<UpmState>,
    t: usize,
    cumulative_log_evidence: f64,
    log_pred: Vec<f64>,
    log_alpha: Vec<f64>,
}

impl BocpdFilter {
    /// Posterior mass 1 at `r = 0`, every hypothesis at the UPM prior.
    /// Only duration-agnostic UPMs are accepted.
    pub fn new(hazard: &HazardFn, upm: Upm) -> Result<Self> {
        if upm.dependence() == DurationDependence::Dependent {
            return Err(Error::DurationDependentUpm("run-length filtering"));
        }
        upm.check().map_err(Error::InvalidUpm)?;
        let hazard = hazard.capped();
        let n = hazard.d_max();
        let log_hazard = hazard.values().iter().map(|&h| ln_or_neg_inf(h)).collect();
        let log_survive = hazard
            .values()
            .iter()
            .map(|&h| ln_or_neg_inf(1.0 - h))
            .collect();
        let prior = upm.prior();
        Ok(Self {
            log_hazard,
            log_survive,
            posterior: RunLengthPosterior::point(0, n),
            bank: vec![prior; n],
            upm,
            t: 0,
            cumulative_log_evidence: 0.0,
            log_pred: vec![f64::NEG_INFINITY; n],
            log_alpha: vec![f64::NEG_INFINITY; n],
        })
    }

    /// Largest representable run length `R`.
    pub fn max_run_length(&self) -> usize {
        self.log_hazard.len() - 1
    }

    pub fn posterior(&self) -> &RunLengthPosterior {
        &self.posterior
    }

    /// Number of observations consumed.
    pub fn steps(&self) -> usize {
        self.t
    }

    /// `sum_t log p(y_t | Y_{1:t-1})`.
    pub fn cumulative_log_evidence(&self) -> f64 {
        self.cumulative_log_evidence
    }

    pub fn upm(&self) -> &Upm {
        &self.upm
    }

    pub fn stats(&self) -> &[UpmState] {
        &self.bank
    }

    /// `log p(r_t | Y_{1:t-1})` written into `out`.
    fn predicted_into(&self, out: &mut [f64]) {
        if self.t == 0 {
            out.copy_from_slice(&self.posterior.log_mass);
            return;
        }
        let lm = &self.posterior.log_mass;
        out[0] = log_sum_exp_sum(lm, &self.log_hazard);
        for r in 1..lm.len() {
            out[r] = lm[r - 1] + self.log_survive[r - 1];
        }
    }

    fn log_likelihood(&self, y: &[f64], r: usize) -> f64 {
        self.upm
            .log_predictive(y, r, self.log_hazard.len(), &self.bank[r])
    }

    /// Mixture of per-hypothesis predictives weighted by `p(r_t | Y_{1:t-1})`.
    pub fn predictive(&self) -> BocpdPredictive<'_> {
        let mut log_weights = vec![f64::NEG_INFINITY; self.log_hazard.len()];
        self.predicted_into(&mut log_weights);
        BocpdPredictive {
            filter: self,
            log_weights,
        }
    }

    /// `log p(y | Y_{1:t})` for a candidate next observation.
    pub fn predict_logpdf(&self, y: &[f64]) -> Result<f64> {
        self.upm.check_observation(y)?;
        Ok(self.predictive().logpdf(y))
    }

    /// Absorb `y_{t+1}` and return `log p(y_{t+1} | Y_{1:t})`. On error the
    /// filter is left unchanged.
    pub fn step(&mut self, y: &[f64]) -> Result<f64> {
        self.upm.check_observation(y)?;
        let mut log_pred = std::mem::take(&mut self.log_pred);
        let mut log_alpha = std::mem::take(&mut self.log_alpha);
        self.predicted_into(&mut log_pred);
        for (r, a) in log_alpha.iter_mut().enumerate() {
            *a = if log_pred[r] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                log_pred[r] + self.log_likelihood(y, r)
            };
        }
        let log_evidence = log_sum_exp(&log_alpha);
        if !log_evidence.is_finite() {
            self.log_pred = log_pred;
            self.log_alpha = log_alpha;
            return Err(Error::Underflow { step: self.t + 1 });
        }
        for (dst, &a) in self.posterior.log_mass.iter_mut().zip(&log_alpha) {
            *dst = a - log_evidence;
        }
        self.log_pred = log_pred;
        self.log_alpha = log_alpha;

        // Hypothesis r at t+1 continues hypothesis r-1 at t.
        let n = self.bank.len();
        self.bank.rotate_right(1);
        self.bank[0] = self.upm.prior();
        for r in 1..n {
            self.upm.absorb(&mut self.bank[r], y, r - 1, n);
        }
        self.t += 1;
        self.cumulative_log_evidence += log_evidence;
        Ok(log_evidence)
    }
}

/// One-step-ahead predictive distribution of a [`BocpdFilter`].
pub struct BocpdPredictive<'a> {
    filter: &'a BocpdFilter,
    log_weights: Vec<f64>,
}

impl BocpdPredictive<'_> {
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn logpdf(&self, y: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .log_weights
            .iter()
            .enumerate()
            .map(|(r, &w)| {
                if w == f64::NEG_INFINITY {
                    w
                } else {
                    w + self.filter.log_likelihood(y, r)
                }
            })
            .collect();
        log_sum_exp(&terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::upm::{GaussianUpm, SineUpm};

    fn niw() -> Upm {
        GaussianUpm::conjugate(vec![0.0], 1.0, 3.0, vec![vec![1.0]])
            .unwrap()
            .into()
    }

    #[test]
    fn init_state() {
        let f = BocpdFilter::new(&HazardFn::constant(0.1, 10).unwrap(), niw()).unwrap();
        assert_eq!(f.posterior().probabilities()[0], 1.0);
        assert_eq!(f.cumulative_log_evidence(), 0.0);
        let g = BocpdFilter::new(&HazardFn::constant(0.1, 10).unwrap(), niw()).unwrap();
        assert_eq!(f.posterior(), g.posterior());
    }

    #[test]
    fn unit_hazard_keeps_mass_at_zero() {
        let mut f = BocpdFilter::new(&HazardFn::constant(1.0, 6).unwrap(), niw()).unwrap();
        for y in [0.3, -1.0, 2.0, 0.0, 5.0] {
            f.step(&[y]).unwrap();
            assert!((f.posterior().probabilities()[0] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_hazard_grows_deterministically() {
        let mut f = BocpdFilter::new(&HazardFn::constant(0.0, 8).unwrap(), niw()).unwrap();
        // after the (t+1)-th observation the run length is t
        for t in 0..8 {
            f.step(&[0.1 * t as f64]).unwrap();
            assert!(
                (f.posterior().probabilities()[t] - 1.0).abs() < 1e-15,
                "t = {t}"
            );
        }
        // the cap forces a change point
        f.step(&[0.0]).unwrap();
        assert!((f.posterior().probabilities()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn first_prediction_is_the_prior_predictive() {
        let u = niw();
        let f = BocpdFilter::new(&HazardFn::constant(0.2, 5).unwrap(), u.clone()).unwrap();
        let y = [0.4];
        let direct = u.log_predictive(&y, 0, 5, &u.prior());
        assert!((f.predict_logpdf(&y).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn prediction_equals_next_step_evidence() {
        let mut f = BocpdFilter::new(&HazardFn::constant(0.2, 7).unwrap(), niw()).unwrap();
        for y in [0.5, 0.7, -2.0, -2.5, 0.1] {
            let predicted = f.predict_logpdf(&[y]).unwrap();
            let e = f.step(&[y]).unwrap();
            assert!((predicted - e).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_duration_dependent_upm() {
        let sine: Upm = SineUpm::new(1.0, 1.0, 1.0).unwrap().into();
        assert!(matches!(
            BocpdFilter::new(&HazardFn::constant(0.5, 4).unwrap(), sine),
            Err(Error::DurationDependentUpm(_))
        ));
    }

    #[test]
    fn bad_observation_leaves_state_untouched() {
        let mut f = BocpdFilter::new(&HazardFn::constant(0.2, 4).unwrap(), niw()).unwrap();
        f.step(&[1.0]).unwrap();
        let before = f.posterior().clone();
        assert!(f.step(&[f64::NAN]).is_err());
        assert!(f.step(&[1.0, 2.0]).is_err());
        assert_eq!(f.posterior(), &before);
        assert_eq!(f.steps(), 1);
    }

    #[test]
    fn zero_likelihood_everywhere_is_an_underflow() {
        let g: Upm = GaussianUpm::fixed(vec![0.0], vec![vec![1e-6]])
            .unwrap()
            .into();
        let mut f = BocpdFilter::new(&HazardFn::constant(0.2, 4).unwrap(), g).unwrap();
        assert!(matches!(
            f.step(&[1e160]),
            Err(Error::Underflow { step: 1 })
        ));
    }
}
