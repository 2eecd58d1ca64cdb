//! Underlying predictive models (UPMs): `p(y_t | r_t, d_t, z_t, Y^{r_t})`.
//!
//! Each hidden state owns one UPM. A UPM hands out a prior [`PredictiveModel::Stats`]
//! value for a fresh segment, folds observations into it one at a time and
//! scores the next observation given the run length `r` and the total
//! segment duration `d`. Duration-agnostic models ignore `d`.

mod basis;
mod features;
mod fit;
mod gaussian;
mod sine;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RunLength, SegmentDuration};

pub use basis::{BasisStats, BasisUpm, RbfBasis};
pub use features::{band_features, BandFeatureConfig, Periodogram};
pub use fit::{fit_mle, SegmentBlock, UpmFamily, UpmFitResult};
pub use gaussian::{FixedGaussian, GaussianUpm, NiwGaussian, NiwStats};
pub use sine::SineUpm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationDependence {
    Agnostic,
    Dependent,
}

pub trait PredictiveModel {
    type Stats: Clone + fmt::Debug;

    /// Observation dimension `M`.
    fn dim(&self) -> usize;

    fn dependence(&self) -> DurationDependence;

    /// Statistics of an empty segment.
    fn prior(&self) -> Self::Stats;

    /// Absorb `y`, observed at run length `r` of a segment of duration `d`.
    fn absorb(&self, stats: &mut Self::Stats, y: &[f64], r: usize, d: usize);

    /// Log predictive density of `y` at run length `r` in a segment of
    /// duration `d`, given statistics holding the previous `r` observations.
    /// Inputs are trusted; see [`PredictiveModel::predictive_logpdf`].
    fn log_predictive(&self, y: &[f64], r: usize, d: usize, stats: &Self::Stats) -> f64;

    /// Draw the observations of one complete segment of duration `d`.
    fn sample_segment<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Vec<Vec<f64>>;

    fn check_observation(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteObservation);
        }
        Ok(())
    }

    fn predictive_logpdf(
        &self,
        y: &[f64],
        r: RunLength,
        d: SegmentDuration,
        stats: &Self::Stats,
    ) -> Result<f64> {
        self.check_observation(y)?;
        if r.0 >= d.0 {
            return Err(Error::RunLengthOutOfRange {
                run_length: r.0,
                duration: d.0,
            });
        }
        Ok(self.log_predictive(y, r.0, d.0, stats))
    }

    fn update(
        &self,
        stats: &Self::Stats,
        y: &[f64],
        r: RunLength,
        d: SegmentDuration,
    ) -> Result<Self::Stats> {
        self.check_observation(y)?;
        let mut next = stats.clone();
        self.absorb(&mut next, y, r.0, d.0);
        Ok(next)
    }

    /// `log p(y_1..y_n | d)` for the first `n` observations of a segment of
    /// duration `d`, by the chain rule over predictive densities.
    fn segment_loglik(&self, ys: &[Vec<f64>], d: usize) -> f64 {
        let mut stats = self.prior();
        let mut total = 0.0;
        for (r, y) in ys.iter().enumerate() {
            total += self.log_predictive(y, r, d, &stats);
            self.absorb(&mut stats, y, r, d);
        }
        total
    }
}

/// Per-state UPM hyperparameters, tagged by `kind` in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Upm {
    Gaussian(GaussianUpm),
    ScaledSine(SineUpm),
    Basis(BasisUpm),
}

#[derive(Debug, Clone)]
pub enum UpmState {
    Empty,
    Conjugate(NiwStats),
    Basis(BasisStats),
}

impl Upm {
    pub fn kind(&self) -> &'static str {
        match self {
            Upm::Gaussian(_) => "gaussian",
            Upm::ScaledSine(_) => "scaled_sine",
            Upm::Basis(_) => "basis",
        }
    }

    /// Hyperparameter sanity; the message names the offending field.
    pub fn check(&self) -> std::result::Result<(), String> {
        match self {
            Upm::Gaussian(g) => g.check(),
            Upm::ScaledSine(s) => s.check(),
            Upm::Basis(b) => b.check(),
        }
    }
}

impl PredictiveModel for Upm {
    type Stats = UpmState;

    fn dim(&self) -> usize {
        match self {
            Upm::Gaussian(g) => g.dim(),
            Upm::ScaledSine(s) => s.dim(),
            Upm::Basis(b) => b.dim(),
        }
    }

    fn dependence(&self) -> DurationDependence {
        match self {
            Upm::Gaussian(g) => g.dependence(),
            Upm::ScaledSine(s) => s.dependence(),
            Upm::Basis(b) => b.dependence(),
        }
    }

    fn prior(&self) -> UpmState {
        match self {
            Upm::Gaussian(GaussianUpm::Fixed(_)) | Upm::ScaledSine(_) => UpmState::Empty,
            Upm::Gaussian(GaussianUpm::Conjugate(n)) => UpmState::Conjugate(n.prior()),
            Upm::Basis(b) => UpmState::Basis(b.prior()),
        }
    }

    fn absorb(&self, stats: &mut UpmState, y: &[f64], r: usize, d: usize) {
        match (self, stats) {
            (Upm::Gaussian(GaussianUpm::Conjugate(n)), UpmState::Conjugate(s)) => {
                n.absorb(s, y, r, d)
            }
            (Upm::Basis(b), UpmState::Basis(s)) => b.absorb(s, y, r, d),
            (Upm::Gaussian(GaussianUpm::Fixed(_)) | Upm::ScaledSine(_), UpmState::Empty) => {}
            _ => panic!("UPM statistics do not belong to this model"),
        }
    }

    fn log_predictive(&self, y: &[f64], r: usize, d: usize, stats: &UpmState) -> f64 {
        match (self, stats) {
            (Upm::Gaussian(GaussianUpm::Fixed(g)), _) => g.log_predictive(y, r, d, &()),
            (Upm::Gaussian(GaussianUpm::Conjugate(n)), UpmState::Conjugate(s)) => {
                n.log_predictive(y, r, d, s)
            }
            (Upm::ScaledSine(s), _) => s.log_predictive(y, r, d, &()),
            (Upm::Basis(b), UpmState::Basis(s)) => b.log_predictive(y, r, d, s),
            _ => panic!("UPM statistics do not belong to this model"),
        }
    }

    fn sample_segment<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
        match self {
            Upm::Gaussian(g) => g.sample_segment(d, rng),
            Upm::ScaledSine(s) => s.sample_segment(d, rng),
            Upm::Basis(b) => b.sample_segment(d, rng),
        }
    }
}

impl From<GaussianUpm> for Upm {
    fn from(g: GaussianUpm) -> Self {
        Upm::Gaussian(g)
    }
}

impl From<SineUpm> for Upm {
    fn from(s: SineUpm) -> Self {
        Upm::ScaledSine(s)
    }
}

impl From<BasisUpm> for Upm {
    fn from(b: BasisUpm) -> Self {
        Upm::Basis(b)
    }
}
