//! Duration-dependent linear-Gaussian UPM over radial basis functions:
//! `y = phi(r / d)^T w + eps`, `w ~ N(mean, cov)`, `eps ~ N(0, sigma2)`.
//!
//! Because the basis is evaluated at the relative position `r / d`, a
//! trajectory stretched over a longer segment is scored by the same shape.
//! Statistics are the Gaussian posterior over `w`, updated with a rank-one
//! (Kalman) step per observation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DurationDependence, PredictiveModel};
use crate::error::{Error, Result};
use crate::math::{to_matrix, SpdFactor, LN_2PI};

/// Gaussian bumps `exp(-(x - c)^2 / (2 w^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfBasis {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
}

impl RbfBasis {
    /// `n` bumps centred at `(i + 0.5) / n` on `[0, 1)`, all with the same width.
    pub fn even(n: usize, width: f64) -> Result<Self> {
        let b = Self {
            centers: (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect(),
            widths: vec![width; n],
        };
        b.check().map_err(Error::InvalidUpm)?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        if self.centers.is_empty() {
            return Err("basis needs at least one function".into());
        }
        if self.widths.len() != self.centers.len() {
            return Err("basis centers and widths differ in length".into());
        }
        if self.widths.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err("basis widths must be positive".into());
        }
        if self.centers.iter().any(|c| !c.is_finite()) {
            return Err("basis centers must be finite".into());
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.centers
                .iter()
                .zip(&self.widths)
                .map(|(c, w)| (-(x - c).powi(2) / (2.0 * w * w)).exp()),
        )
    }
}

/// Relative position `r / d` in `[0, 1)`.
pub fn position(r: usize, d: usize) -> f64 {
    r as f64 / d as f64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BasisRepr {
    basis: RbfBasis,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    sigma2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "BasisRepr", into = "BasisRepr")]
pub struct BasisUpm {
    basis: RbfBasis,
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    sigma2: f64,
    mean_v: DVector<f64>,
    cov_m: DMatrix<f64>,
}

impl PartialEq for BasisUpm {
    fn eq(&self, other: &Self) -> bool {
        self.basis == other.basis
            && self.mean == other.mean
            && self.cov == other.cov
            && self.sigma2 == other.sigma2
    }
}

impl TryFrom<BasisRepr> for BasisUpm {
    type Error = Error;

    fn try_from(r: BasisRepr) -> Result<Self> {
        Self::new(r.basis, r.mean, r.cov, r.sigma2)
    }
}

impl From<BasisUpm> for BasisRepr {
    fn from(b: BasisUpm) -> Self {
        BasisRepr {
            basis: b.basis,
            mean: b.mean,
            cov: b.cov,
            sigma2: b.sigma2,
        }
    }
}

/// Posterior mean and covariance of the weights.
#[derive(Debug, Clone)]
pub struct BasisStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl BasisUpm {
    pub fn new(basis: RbfBasis, mean: Vec<f64>, cov: Vec<Vec<f64>>, sigma2: f64) -> Result<Self> {
        basis.check().map_err(Error::InvalidUpm)?;
        let n = basis.len();
        if mean.len() != n || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidUpm(format!(
                "basis weight mean must have {n} finite entries"
            )));
        }
        let cov_m = to_matrix(&cov)
            .filter(|c| c.nrows() == n && c.ncols() == n)
            .ok_or_else(|| Error::InvalidUpm(format!("basis weight cov must be {n}x{n}")))?;
        SpdFactor::new(&cov_m)
            .ok_or_else(|| Error::InvalidUpm("basis weight cov is not positive definite".into()))?;
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidUpm(format!(
                "basis sigma2 = {sigma2} must be positive"
            )));
        }
        Ok(Self {
            mean_v: DVector::from_vec(mean.clone()),
            basis,
            mean,
            cov,
            sigma2,
            cov_m,
        })
    }

    /// Prior `N(0, prior_var I)` over the weights.
    pub fn isotropic(basis: RbfBasis, prior_var: f64, sigma2: f64) -> Result<Self> {
        let n = basis.len();
        let cov = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { prior_var } else { 0.0 })
                    .collect()
            })
            .collect();
        Self::new(basis, vec![0.0; n], cov, sigma2)
    }

    pub fn basis(&self) -> &RbfBasis {
        &self.basis
    }

    pub fn weight_mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn weight_cov(&self) -> &[Vec<f64>] {
        &self.cov
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn dim(&self) -> usize {
        1
    }

    pub fn dependence(&self) -> DurationDependence {
        DurationDependence::Dependent
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        Self::new(
            self.basis.clone(),
            self.mean.clone(),
            self.cov.clone(),
            self.sigma2,
        )
        .map(|_| ())
        .map_err(|e| e.to_string())
    }

    /// Predictive mean and variance at run length `r` of a duration-`d` segment.
    pub fn predictive_moments(&self, r: usize, d: usize, s: &BasisStats) -> (f64, f64) {
        let phi = self.basis.eval(position(r, d));
        let mean = phi.dot(&s.mean);
        let var = (&s.cov * &phi).dot(&phi) + self.sigma2;
        (mean, var)
    }
}

impl PredictiveModel for BasisUpm {
    type Stats = BasisStats;

    fn dim(&self) -> usize {
        1
    }

    fn dependence(&self) -> DurationDependence {
        DurationDependence::Dependent
    }

    fn prior(&self) -> BasisStats {
        BasisStats {
            mean: self.mean_v.clone(),
            cov: self.cov_m.clone(),
        }
    }

    fn absorb(&self, s: &mut BasisStats, y: &[f64], r: usize, d: usize) {
        let phi = self.basis.eval(position(r, d));
        let gain_dir = &s.cov * &phi;
        let innov_var = gain_dir.dot(&phi) + self.sigma2;
        let resid = y[0] - phi.dot(&s.mean);
        s.mean.axpy(resid / innov_var, &gain_dir, 1.0);
        s.cov.ger(-1.0 / innov_var, &gain_dir, &gain_dir, 1.0);
        // keep the covariance exactly symmetric
        let n = s.cov.nrows();
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (s.cov[(i, j)] + s.cov[(j, i)]);
                s.cov[(i, j)] = v;
                s.cov[(j, i)] = v;
            }
        }
    }

    fn log_predictive(&self, y: &[f64], r: usize, d: usize, s: &BasisStats) -> f64 {
        let (mean, var) = self.predictive_moments(r, d, s);
        let e = y[0] - mean;
        -0.5 * (LN_2PI + var.ln() + e * e / var)
    }

    fn sample_segment<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let lower = SpdFactor::new(&self.cov_m).expect("validated").lower();
        let z = DVector::from_fn(self.basis.len(), |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let w = &self.mean_v + lower * z;
        let noise = Normal::new(0.0, self.sigma2.sqrt()).expect("sigma2 > 0");
        (0..d)
            .map(|r| vec![self.basis.eval(position(r, d)).dot(&w) + noise.sample(rng)])
            .collect()
    }
}
