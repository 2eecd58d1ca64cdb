//! Two-dimensional scaled-sine UPM: `y = (b, c) * sin(x) + eps`,
//! `eps ~ N(0, sigma2 I)`, where the phase `x` sweeps `[0, 1]` over the
//! segment regardless of its duration.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DurationDependence, PredictiveModel};
use crate::error::{Error, Result};
use crate::math::LN_2PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SineRepr", into = "SineRepr")]
pub struct SineUpm {
    pub b: f64,
    pub c: f64,
    pub sigma2: f64,
}

#[derive(Serialize, Deserialize)]
struct SineRepr {
    b: f64,
    c: f64,
    sigma2: f64,
}

impl TryFrom<SineRepr> for SineUpm {
    type Error = Error;

    fn try_from(r: SineRepr) -> Result<Self> {
        Self::new(r.b, r.c, r.sigma2)
    }
}

impl From<SineUpm> for SineRepr {
    fn from(s: SineUpm) -> Self {
        SineRepr {
            b: s.b,
            c: s.c,
            sigma2: s.sigma2,
        }
    }
}

/// Phase of run length `r` in a segment of `d` observations: `r / (d - 1)`,
/// so the first point sits at 0 and the last at 1.
pub fn phase(r: usize, d: usize) -> f64 {
    if d >= 2 {
        r as f64 / (d - 1) as f64
    } else {
        0.0
    }
}

impl SineUpm {
    pub fn new(b: f64, c: f64, sigma2: f64) -> Result<Self> {
        let s = Self { b, c, sigma2 };
        s.check().map_err(Error::InvalidUpm)?;
        Ok(s)
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        if !self.b.is_finite() || !self.c.is_finite() {
            return Err("scaled_sine amplitudes must be finite".into());
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(format!(
                "scaled_sine sigma2 = {} must be positive",
                self.sigma2
            ));
        }
        Ok(())
    }

    pub fn mean(&self, r: usize, d: usize) -> [f64; 2] {
        let s = phase(r, d).sin();
        [self.b * s, self.c * s]
    }
}

impl PredictiveModel for SineUpm {
    type Stats = ();

    fn dim(&self) -> usize {
        2
    }

    fn dependence(&self) -> DurationDependence {
        DurationDependence::Dependent
    }

    fn prior(&self) {}

    fn absorb(&self, _: &mut (), _: &[f64], _: usize, _: usize) {}

    fn log_predictive(&self, y: &[f64], r: usize, d: usize, _: &()) -> f64 {
        let [m0, m1] = self.mean(r, d);
        let e0 = y[0] - m0;
        let e1 = y[1] - m1;
        -(LN_2PI + self.sigma2.ln()) - (e0 * e0 + e1 * e1) / (2.0 * self.sigma2)
    }

    fn sample_segment<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let noise = Normal::new(0.0, self.sigma2.sqrt()).expect("sigma2 > 0");
        (0..d)
            .map(|r| {
                let [m0, m1] = self.mean(r, d);
                vec![m0 + noise.sample(rng), m1 + noise.sample(rng)]
            })
            .collect()
    }
}
