//! Per-state maximum-likelihood fitting of UPM hyperparameters from
//! labeled segments.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::basis::position;
use super::gaussian::covariance_rows;
use super::sine::phase;
use super::{BasisUpm, GaussianUpm, RbfBasis, SineUpm, Upm};
use crate::error::{Error, Result};
use crate::math::{regularized_factor, SpdFactor};

/// Relative jitter added to fitted covariances before factorization.
pub const COV_JITTER: f64 = 1e-9;
const MIN_VARIANCE: f64 = 1e-12;

/// Which UPM family to fit, with its structural settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpmFamily {
    /// Fixed mean and covariance per state.
    Gaussian,
    ScaledSine,
    Basis {
        count: usize,
        width: f64,
        #[serde(default = "default_ridge")]
        ridge: f64,
    },
}

fn default_ridge() -> f64 {
    1e-6
}

/// Observations of one labeled segment. `duration` is `None` when the
/// segment is cut off by the end of the sequence.
#[derive(Debug, Clone, Copy)]
pub struct SegmentBlock<'a> {
    pub state: usize,
    pub observations: &'a [Vec<f64>],
    pub duration: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct UpmFitResult {
    pub upm: Vec<Upm>,
    pub notes: Vec<String>,
}

pub fn fit_mle(family: &UpmFamily, k: usize, blocks: &[SegmentBlock<'_>]) -> Result<UpmFitResult> {
    let mut notes = Vec::new();
    let mut upm = Vec::with_capacity(k);
    for z in 0..k {
        let mine: Vec<&SegmentBlock<'_>> = blocks.iter().filter(|b| b.state == z).collect();
        let fitted = match family {
            UpmFamily::Gaussian => fit_gaussian(z, &mine, &mut notes)?,
            UpmFamily::ScaledSine => fit_sine(z, &mine, &mut notes)?,
            UpmFamily::Basis {
                count,
                width,
                ridge,
            } => {
                let basis = RbfBasis::new_checked(*count, *width)?;
                fit_basis(z, &mine, basis, *ridge, &mut notes)?
            }
        };
        upm.push(fitted);
    }
    Ok(UpmFitResult { upm, notes })
}

impl RbfBasis {
    fn new_checked(count: usize, width: f64) -> Result<Self> {
        RbfBasis::even(count, width).map_err(|e| Error::Fit(e.to_string()))
    }
}

fn no_data(z: usize, what: &str) -> Error {
    Error::Fit(format!("state {z} has no {what} to fit its UPM"))
}

/// Mean and MLE covariance with trace-scaled jitter; notes any regularization.
fn mean_and_cov(
    z: usize,
    what: &str,
    points: &[DVector<f64>],
    notes: &mut Vec<String>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = points[0].len();
    let n = points.len() as f64;
    let mean = points.iter().fold(DVector::zeros(m), |acc, p| acc + p) / n;
    let mut cov = DMatrix::zeros(m, m);
    for p in points {
        let e = p - &mean;
        cov += &e * e.transpose();
    }
    cov /= n;
    let singular = points.len() <= m || SpdFactor::new(&cov).is_none();
    let (_, reg, jitter) = regularized_factor(&cov, COV_JITTER).ok_or_else(|| {
        Error::Fit(format!(
            "state {z}: {what} covariance cannot be regularized"
        ))
    })?;
    if singular {
        notes.push(format!(
            "state {z}: {what} covariance from {} points is singular; ridge-regularized with jitter {jitter:e}",
            points.len()
        ));
    }
    Ok((mean, reg))
}

fn fit_gaussian(z: usize, blocks: &[&SegmentBlock<'_>], notes: &mut Vec<String>) -> Result<Upm> {
    let points: Vec<DVector<f64>> = blocks
        .iter()
        .flat_map(|b| b.observations.iter())
        .map(|y| DVector::from_column_slice(y))
        .collect();
    if points.is_empty() {
        return Err(no_data(z, "observations"));
    }
    let (mean, cov) = mean_and_cov(z, "observation", &points, notes)?;
    Ok(GaussianUpm::fixed(mean.iter().copied().collect(), covariance_rows(&cov))?.into())
}

fn fit_sine(z: usize, blocks: &[&SegmentBlock<'_>], notes: &mut Vec<String>) -> Result<Upm> {
    let (mut sy0, mut sy1, mut ss, mut n) = (0.0, 0.0, 0.0, 0usize);
    let complete: Vec<_> = blocks
        .iter()
        .filter_map(|b| b.duration.map(|d| (b, d)))
        .collect();
    for (b, d) in &complete {
        for (r, y) in b.observations.iter().enumerate() {
            let s = phase(r, *d).sin();
            sy0 += y[0] * s;
            sy1 += y[1] * s;
            ss += s * s;
            n += 1;
        }
    }
    if n == 0 {
        return Err(no_data(z, "complete segments"));
    }
    let (b_hat, c_hat) = if ss > 0.0 {
        (sy0 / ss, sy1 / ss)
    } else {
        notes.push(format!(
            "state {z}: all segments have duration 1; amplitudes set to 0"
        ));
        (0.0, 0.0)
    };
    let mut sse = 0.0;
    for (b, d) in &complete {
        for (r, y) in b.observations.iter().enumerate() {
            let s = phase(r, *d).sin();
            sse += (y[0] - b_hat * s).powi(2) + (y[1] - c_hat * s).powi(2);
        }
    }
    let sigma2 = floor_variance(z, sse / (2 * n) as f64, notes);
    Ok(SineUpm::new(b_hat, c_hat, sigma2)?.into())
}

fn floor_variance(z: usize, v: f64, notes: &mut Vec<String>) -> f64 {
    if v < MIN_VARIANCE {
        notes.push(format!(
            "state {z}: residual variance {v:e} floored to {MIN_VARIANCE:e}"
        ));
        MIN_VARIANCE
    } else {
        v
    }
}

fn fit_basis(
    z: usize,
    blocks: &[&SegmentBlock<'_>],
    basis: RbfBasis,
    ridge: f64,
    notes: &mut Vec<String>,
) -> Result<Upm> {
    let nb = basis.len();
    let mut weights = Vec::new();
    let (mut sse, mut count) = (0.0, 0usize);
    for b in blocks {
        let Some(d) = b.duration else { continue };
        let rows = b.observations.len();
        let phi = DMatrix::from_fn(rows, nb, |r, j| basis.eval(position(r, d))[j]);
        let y = DVector::from_iterator(rows, b.observations.iter().map(|v| v[0]));
        let gram = phi.transpose() * &phi + DMatrix::identity(nb, nb) * ridge;
        let w = gram
            .cholesky()
            .ok_or_else(|| {
                Error::Fit(format!(
                    "state {z}: ridge system is singular; increase ridge"
                ))
            })?
            .solve(&(phi.transpose() * &y));
        let resid = &y - &phi * &w;
        sse += resid.norm_squared();
        count += rows;
        weights.push(w);
    }
    if weights.is_empty() {
        return Err(no_data(z, "complete segments"));
    }
    let (mean, cov) = mean_and_cov(z, "basis weight", &weights, notes)?;
    let sigma2 = floor_variance(z, sse / count as f64, notes);
    Ok(BasisUpm::new(
        basis,
        mean.iter().copied().collect(),
        covariance_rows(&cov),
        sigma2,
    )?
    .into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn gaussian_fit_is_sample_mean_and_notes_singularity() {
        let obs = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        let blocks = [SegmentBlock {
            state: 0,
            observations: &obs,
            duration: Some(2),
        }];
        let fit = fit_mle(&UpmFamily::Gaussian, 1, &blocks).unwrap();
        let Upm::Gaussian(GaussianUpm::Fixed(g)) = &fit.upm[0] else {
            panic!()
        };
        assert_eq!(g.mean(), &[1.0, 1.0]);
        assert!(fit.notes.iter().any(|n| n.contains("singular")));
    }

    #[test]
    fn missing_state_is_an_error() {
        let obs = vec![vec![0.0]];
        let blocks = [SegmentBlock {
            state: 0,
            observations: &obs,
            duration: Some(1),
        }];
        let err = fit_mle(&UpmFamily::Gaussian, 2, &blocks).unwrap_err();
        assert!(err.to_string().contains("state 1"));
    }

    #[test]
    fn sine_fit_recovers_noise_free_amplitude() {
        let truth = SineUpm::new(3.0, -1.5, 1.0).unwrap();
        let segs: Vec<Vec<Vec<f64>>> = [5usize, 9, 14]
            .iter()
            .map(|&d| (0..d).map(|r| truth.mean(r, d).to_vec()).collect())
            .collect();
        let blocks: Vec<_> = segs
            .iter()
            .map(|s| SegmentBlock {
                state: 0,
                observations: s,
                duration: Some(s.len()),
            })
            .collect();
        let fit = fit_mle(&UpmFamily::ScaledSine, 1, &blocks).unwrap();
        let Upm::ScaledSine(s) = &fit.upm[0] else {
            panic!()
        };
        assert!((s.b - 3.0).abs() < 1e-9);
        assert!((s.c + 1.5).abs() < 1e-9);
        assert!(s.sigma2 > 0.0);
    }

    #[test]
    fn basis_fit_moment_matches_weight_draws() {
        let basis = RbfBasis::even(4, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let d = 40;
        let draws: Vec<DVector<f64>> = (0..50)
            .map(|_| DVector::from_fn(4, |_, _| normal.sample(&mut rng)))
            .collect();
        let segs: Vec<Vec<Vec<f64>>> = draws
            .iter()
            .map(|w| {
                (0..d)
                    .map(|r| vec![basis.eval(position(r, d)).dot(w)])
                    .collect()
            })
            .collect();
        let blocks: Vec<_> = segs
            .iter()
            .map(|s| SegmentBlock {
                state: 0,
                observations: s,
                duration: Some(d),
            })
            .collect();
        let fit = fit_mle(
            &UpmFamily::Basis {
                count: 4,
                width: 0.2,
                ridge: 1e-10,
            },
            1,
            &blocks,
        )
        .unwrap();
        let Upm::Basis(b) = &fit.upm[0] else { panic!() };
        // moment-matching oracle on the true draws
        let mean = draws.iter().fold(DVector::zeros(4), |a, w| a + w) / 50.0;
        let mut cov = DMatrix::zeros(4, 4);
        for w in &draws {
            cov += (w - &mean) * (w - &mean).transpose();
        }
        cov /= 50.0;
        for i in 0..4 {
            assert!((b.weight_mean()[i] - mean[i]).abs() < 1e-5);
            for j in 0..4 {
                assert!(
                    (b.weight_cov()[i][j] - cov[(i, j)]).abs() < 1e-5,
                    "({i},{j})"
                );
            }
        }
        assert_eq!(b.dim(), 1);
    }
}
