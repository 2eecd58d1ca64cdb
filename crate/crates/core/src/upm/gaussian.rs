//! Multivariate Gaussian UPMs. Both are duration agnostic.
//!
//! * `fixed`: known `(mean, cov)`; every point is scored by the same density.
//! * `conjugate`: normal-inverse-Wishart prior over `(mu, Sigma)`; the
//!   predictive is a multivariate Student-t updated incrementally.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{DurationDependence, PredictiveModel};
use crate::error::{Error, Result};
use crate::math::{to_matrix, to_rows, SpdFactor, LN_2PI};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GaussianUpm {
    Fixed(FixedGaussian),
    Conjugate(NiwGaussian),
}

impl GaussianUpm {
    pub fn fixed(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        Ok(GaussianUpm::Fixed(FixedGaussian::new(mean, cov)?))
    }

    pub fn conjugate(mean0: Vec<f64>, kappa0: f64, nu0: f64, psi0: Vec<Vec<f64>>) -> Result<Self> {
        Ok(GaussianUpm::Conjugate(NiwGaussian::new(
            mean0, kappa0, nu0, psi0,
        )?))
    }

    pub fn dim(&self) -> usize {
        match self {
            GaussianUpm::Fixed(g) => g.mean.len(),
            GaussianUpm::Conjugate(n) => n.mean0.len(),
        }
    }

    pub fn dependence(&self) -> DurationDependence {
        DurationDependence::Agnostic
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        // Construction already validated; re-run for hand-built values.
        match self {
            GaussianUpm::Fixed(g) => FixedGaussian::new(g.mean.clone(), g.cov.clone())
                .map(|_| ())
                .map_err(|e| e.to_string()),
            GaussianUpm::Conjugate(n) => {
                NiwGaussian::new(n.mean0.clone(), n.kappa0, n.nu0, n.psi0.clone())
                    .map(|_| ())
                    .map_err(|e| e.to_string())
            }
        }
    }

    pub fn sample_segment<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
        match self {
            GaussianUpm::Fixed(g) => g.sample_segment(d, rng),
            GaussianUpm::Conjugate(n) => n.sample_segment(d, rng),
        }
    }
}

fn sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, lower: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    (mean + lower * z).iter().copied().collect()
}

// ---------------------------------------------------------------------------
// Fixed mean and covariance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FixedRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "FixedRepr", into = "FixedRepr")]
pub struct FixedGaussian {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    mean_v: DVector<f64>,
    factor: SpdFactor,
    log_norm: f64,
}

impl PartialEq for FixedGaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl TryFrom<FixedRepr> for FixedGaussian {
    type Error = Error;

    fn try_from(r: FixedRepr) -> Result<Self> {
        Self::new(r.mean, r.cov)
    }
}

impl From<FixedGaussian> for FixedRepr {
    fn from(g: FixedGaussian) -> Self {
        FixedRepr {
            mean: g.mean,
            cov: g.cov,
        }
    }
}

impl FixedGaussian {
    pub fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        let m = mean.len();
        if m == 0 || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidUpm(
                "gaussian mean must be non-empty and finite".into(),
            ));
        }
        let cov_m = to_matrix(&cov)
            .filter(|c| c.nrows() == m && c.ncols() == m)
            .ok_or_else(|| Error::InvalidUpm(format!("gaussian cov must be {m}x{m}")))?;
        let factor = SpdFactor::new(&cov_m)
            .ok_or_else(|| Error::InvalidUpm("gaussian cov is not positive definite".into()))?;
        let log_norm = -0.5 * (m as f64 * LN_2PI + factor.log_det());
        Ok(Self {
            mean_v: DVector::from_vec(mean.clone()),
            mean,
            cov,
            factor,
            log_norm,
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[Vec<f64>] {
        &self.cov
    }

    pub fn log_density(&self, y: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(y) - &self.mean_v;
        self.log_norm - 0.5 * self.factor.mahalanobis(&diff)
    }
}

impl PredictiveModel for FixedGaussian {
    type Stats = ();

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn dependence(&self) -> DurationDependence {
        DurationDependence::Agnostic
    }

    fn prior(&self) {}

    fn absorb(&self, _: &mut (), _: &[f64], _: usize, _: usize) {}

    fn log_predictive(&self, y: &[f64], _: usize, _: usize, _: &()) -> f64 {
        self.log_density(y)
    }

    fn sample_segment<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let lower = self.factor.lower();
        (0..d)
            .map(|_| sample_mvn(&self.mean_v, &lower, rng))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Normal-inverse-Wishart conjugate prior
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NiwRepr {
    mean0: Vec<f64>,
    kappa0: f64,
    nu0: f64,
    psi0: Vec<Vec<f64>>,
}

/// `Sigma ~ IW(psi0, nu0)`, `mu | Sigma ~ N(mean0, Sigma / kappa0)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "NiwRepr", into = "NiwRepr")]
pub struct NiwGaussian {
    mean0: Vec<f64>,
    kappa0: f64,
    nu0: f64,
    psi0: Vec<Vec<f64>>,
    mean0_v: DVector<f64>,
    psi0_m: DMatrix<f64>,
}

impl PartialEq for NiwGaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean0 == other.mean0
            && self.kappa0 == other.kappa0
            && self.nu0 == other.nu0
            && self.psi0 == other.psi0
    }
}

impl TryFrom<NiwRepr> for NiwGaussian {
    type Error = Error;

    fn try_from(r: NiwRepr) -> Result<Self> {
        Self::new(r.mean0, r.kappa0, r.nu0, r.psi0)
    }
}

impl From<NiwGaussian> for NiwRepr {
    fn from(g: NiwGaussian) -> Self {
        NiwRepr {
            mean0: g.mean0,
            kappa0: g.kappa0,
            nu0: g.nu0,
            psi0: g.psi0,
        }
    }
}

/// Running count, mean and scatter matrix of the absorbed observations,
/// plus the Student-t predictive they imply.
#[derive(Debug, Clone)]
pub struct NiwStats {
    n: f64,
    mean: DVector<f64>,
    scatter: DMatrix<f64>,
    loc: DVector<f64>,
    scale: SpdFactor,
    df: f64,
    log_norm: f64,
}

impl NiwStats {
    pub fn count(&self) -> f64 {
        self.n
    }

    pub fn sample_mean(&self) -> &DVector<f64> {
        &self.mean
    }
}

impl NiwGaussian {
    pub fn new(mean0: Vec<f64>, kappa0: f64, nu0: f64, psi0: Vec<Vec<f64>>) -> Result<Self> {
        let m = mean0.len();
        if m == 0 || mean0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidUpm(
                "mean0 must be non-empty and finite".into(),
            ));
        }
        if !(kappa0 > 0.0 && kappa0.is_finite()) {
            return Err(Error::InvalidUpm(format!(
                "kappa0 = {kappa0} must be positive"
            )));
        }
        if !(nu0 > m as f64 - 1.0 && nu0.is_finite()) {
            return Err(Error::InvalidUpm(format!(
                "nu0 = {nu0} must exceed dim - 1 = {}",
                m - 1
            )));
        }
        let psi0_m = to_matrix(&psi0)
            .filter(|c| c.nrows() == m && c.ncols() == m)
            .ok_or_else(|| Error::InvalidUpm(format!("psi0 must be {m}x{m}")))?;
        SpdFactor::new(&psi0_m)
            .ok_or_else(|| Error::InvalidUpm("psi0 is not positive definite".into()))?;
        Ok(Self {
            mean0_v: DVector::from_vec(mean0.clone()),
            mean0,
            kappa0,
            nu0,
            psi0,
            psi0_m,
        })
    }

    fn dim(&self) -> usize {
        self.mean0.len()
    }

    fn finish(&self, n: f64, mean: DVector<f64>, scatter: DMatrix<f64>) -> NiwStats {
        let m = self.dim() as f64;
        let kappa = self.kappa0 + n;
        let nu = self.nu0 + n;
        let loc = (&self.mean0_v * self.kappa0 + &mean * n) / kappa;
        let dev = &mean - &self.mean0_v;
        let psi = &self.psi0_m + &scatter + (&dev * dev.transpose()) * (self.kappa0 * n / kappa);
        let df = nu - m + 1.0;
        let scale_m = psi * ((kappa + 1.0) / (kappa * df));
        let scale = SpdFactor::new(&scale_m).expect("posterior scale stays positive definite");
        let log_norm = ln_gamma(0.5 * (df + m))
            - ln_gamma(0.5 * df)
            - 0.5 * m * (df * std::f64::consts::PI).ln()
            - 0.5 * scale.log_det();
        NiwStats {
            n,
            mean,
            scatter,
            loc,
            scale,
            df,
            log_norm,
        }
    }

    /// Statistics built in one pass over a batch (two-pass mean/scatter).
    pub fn stats_from_batch(&self, ys: &[Vec<f64>]) -> NiwStats {
        let m = self.dim();
        let n = ys.len() as f64;
        let mut mean = DVector::zeros(m);
        for y in ys {
            mean += DVector::from_column_slice(y);
        }
        if n > 0.0 {
            mean /= n;
        }
        let mut scatter = DMatrix::zeros(m, m);
        for y in ys {
            let e = DVector::from_column_slice(y) - &mean;
            scatter += &e * e.transpose();
        }
        self.finish(n, mean, scatter)
    }

    /// Log marginal likelihood `log p(y_1..y_n)` in closed form.
    pub fn log_marginal(&self, ys: &[Vec<f64>]) -> f64 {
        let m = self.dim() as f64;
        let n = ys.len() as f64;
        let post = self.stats_from_batch(ys);
        let kappa = self.kappa0 + n;
        let nu = self.nu0 + n;
        let dev = &post.mean - &self.mean0_v;
        let psi_n =
            &self.psi0_m + &post.scatter + (&dev * dev.transpose()) * (self.kappa0 * n / kappa);
        let logdet = |mat: &DMatrix<f64>| SpdFactor::new(mat).expect("SPD").log_det();
        let mv_lgamma = |a: f64| -> f64 {
            0.25 * m * (m - 1.0) * std::f64::consts::PI.ln()
                + (0..self.dim())
                    .map(|j| ln_gamma(a - 0.5 * j as f64))
                    .sum::<f64>()
        };
        -0.5 * n * m * std::f64::consts::PI.ln() + mv_lgamma(0.5 * nu) - mv_lgamma(0.5 * self.nu0)
            + 0.5 * self.nu0 * logdet(&self.psi0_m)
            - 0.5 * nu * logdet(&psi_n)
            + 0.5 * m * (self.kappa0 / kappa).ln()
    }
}

impl PredictiveModel for NiwGaussian {
    type Stats = NiwStats;

    fn dim(&self) -> usize {
        self.mean0.len()
    }

    fn dependence(&self) -> DurationDependence {
        DurationDependence::Agnostic
    }

    fn prior(&self) -> NiwStats {
        let m = self.dim();
        self.finish(0.0, DVector::zeros(m), DMatrix::zeros(m, m))
    }

    fn absorb(&self, s: &mut NiwStats, y: &[f64], _: usize, _: usize) {
        // Welford update of mean and scatter.
        let y = DVector::from_column_slice(y);
        let n = s.n + 1.0;
        let delta = &y - &s.mean;
        let mean = &s.mean + &delta / n;
        let scatter = &s.scatter + &delta * (&y - &mean).transpose();
        let scatter = (&scatter + scatter.transpose()) * 0.5;
        *s = self.finish(n, mean, scatter);
    }

    fn log_predictive(&self, y: &[f64], _: usize, _: usize, s: &NiwStats) -> f64 {
        let m = self.dim() as f64;
        let diff = DVector::from_column_slice(y) - &s.loc;
        let q = s.scale.mahalanobis(&diff);
        s.log_norm - 0.5 * (s.df + m) * (q / s.df).ln_1p()
    }

    fn sample_segment<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let m = self.dim();
        // Sigma = W^{-1} with W ~ Wishart(psi0^{-1}, nu0) by Bartlett decomposition.
        let v = SpdFactor::new(&self.psi0_m).expect("validated").inverse();
        let l = SpdFactor::new(&v).expect("inverse of SPD is SPD").lower();
        let mut bartlett = DMatrix::zeros(m, m);
        for i in 0..m {
            let chi = ChiSquared::new(self.nu0 - i as f64).expect("nu0 > dim - 1");
            bartlett[(i, i)] = chi.sample(rng).sqrt();
            for j in 0..i {
                bartlett[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let la = &l * bartlett;
        let w = &la * la.transpose();
        let sigma = SpdFactor::new(&w).expect("Wishart draw is SPD").inverse();
        let sigma_l = SpdFactor::new(&sigma).expect("SPD").lower();
        let mu = sample_mvn(&self.mean0_v, &(&sigma_l / self.kappa0.sqrt()), rng);
        let mu = DVector::from_vec(mu);
        (0..d).map(|_| sample_mvn(&mu, &sigma_l, rng)).collect()
    }
}

pub(crate) fn covariance_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    to_rows(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Bivariate normal density written out by hand.
    fn bivariate_density(y: &[f64], mu: &[f64], c: &[[f64; 2]; 2]) -> f64 {
        let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
        let inv = [
            [c[1][1] / det, -c[0][1] / det],
            [-c[1][0] / det, c[0][0] / det],
        ];
        let e = [y[0] - mu[0], y[1] - mu[1]];
        let q = e[0] * (inv[0][0] * e[0] + inv[0][1] * e[1])
            + e[1] * (inv[1][0] * e[0] + inv[1][1] * e[1]);
        (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
    }

    #[test]
    fn fixed_gaussian_matches_direct_density() {
        let c = [[1.5, 0.4], [0.4, 0.8]];
        let g = FixedGaussian::new(vec![0.3, -1.0], vec![c[0].to_vec(), c[1].to_vec()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let y = vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
            let direct = bivariate_density(&y, &[0.3, -1.0], &c).ln();
            assert!((g.log_density(&y) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn fold_equals_batch() {
        let niw = NiwGaussian::new(
            vec![0.0, 1.0],
            0.5,
            4.0,
            vec![vec![1.0, 0.2], vec![0.2, 2.0]],
        )
        .unwrap();
        let ys = vec![vec![0.5, 1.5], vec![-1.0, 0.0], vec![2.0, 3.0]];
        let mut folded = niw.prior();
        for (r, y) in ys.iter().enumerate() {
            niw.absorb(&mut folded, y, r, 10);
        }
        let batch = niw.stats_from_batch(&ys);
        for probe in [[0.0, 0.0], [1.0, -2.0], [3.0, 3.0]] {
            let a = niw.log_predictive(&probe, 3, 10, &folded);
            let b = niw.log_predictive(&probe, 3, 10, &batch);
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn chain_rule_matches_closed_form_marginal() {
        let niw = NiwGaussian::new(vec![0.5], 2.0, 3.0, vec![vec![1.5]]).unwrap();
        let ys: Vec<Vec<f64>> = [0.1, 1.3, -0.4, 2.2, 0.9]
            .iter()
            .map(|&v| vec![v])
            .collect();
        let chain = niw.segment_loglik(&ys, 10);
        assert!((chain - niw.log_marginal(&ys)).abs() < 1e-10);
    }

    #[test]
    fn segment_likelihood_is_exchangeable() {
        let niw = NiwGaussian::new(
            vec![0.0, 0.0],
            1.0,
            3.0,
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        let ys = vec![
            vec![0.5, 1.5],
            vec![-1.0, 0.0],
            vec![2.0, 3.0],
            vec![0.2, -0.7],
        ];
        let mut perm = ys.clone();
        perm.reverse();
        perm.swap(0, 2);
        assert!((niw.segment_loglik(&ys, 8) - niw.segment_loglik(&perm, 8)).abs() < 1e-10);
    }

    #[test]
    fn resets_are_identical() {
        let niw = NiwGaussian::new(vec![0.0], 1.0, 2.0, vec![vec![1.0]]).unwrap();
        let a = niw.prior();
        let b = niw.prior();
        assert_eq!(
            niw.log_predictive(&[0.7], 0, 1, &a),
            niw.log_predictive(&[0.7], 0, 1, &b)
        );
    }

    #[test]
    fn niw_rejects_bad_hyperparameters() {
        assert!(NiwGaussian::new(vec![0.0], 0.0, 2.0, vec![vec![1.0]]).is_err());
        assert!(NiwGaussian::new(
            vec![0.0, 0.0],
            1.0,
            0.5,
            vec![vec![1.0, 0.0], vec![0.0, 1.0]]
        )
        .is_err());
        assert!(NiwGaussian::new(vec![0.0], 1.0, 2.0, vec![vec![0.0]]).is_err());
    }

    #[test]
    fn niw_samples_have_prior_mean() {
        let niw = NiwGaussian::new(vec![3.0], 1.0, 10.0, vec![vec![9.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4000;
        let mean: f64 = (0..n)
            .map(|_| niw.sample_segment(1, &mut rng)[0][0])
            .sum::<f64>()
            / n as f64;
        // predictive sd = sqrt(E[sigma^2] (1 + 1/kappa)) = sqrt(9/8 * 2) = 1.5
        assert!((mean - 3.0).abs() < 0.1, "{mean}");
    }
}
