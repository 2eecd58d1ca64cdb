//! Residual time `l = d - 1 - r` for the run-length filter.
//!
//! Given the run length, the residual time depends only on the hazard:
//! `p(l | r) = H(r + l) * prod_{g = r}^{r + l - 1} (1 - H(g))`. The table is
//! computed once per hazard and mixed with the run-length posterior at every
//! step.

use crate::bocpd::RunLengthPosterior;
use crate::math::{cumulative, ln_or_neg_inf};
use crate::model::HazardFn;

/// `p(l_t = l | r_t = r)` for `l, r` in `0..=R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualKernel {
    n: usize,
    /// Column-major: `g[r * n + l]`.
    g: Vec<f64>,
}

impl ResidualKernel {
    /// Builds the table from the capped hazard, so every column sums to 1.
    pub fn new(hazard: &HazardFn) -> Self {
        let hazard = hazard.capped();
        let h = hazard.values();
        let n = h.len();
        let mut g = vec![0.0; n * n];
        for r in 0..n {
            let col = &mut g[r * n..(r + 1) * n];
            let mut survive = 1.0;
            for l in 0..n - r {
                col[l] = h[r + l] * survive;
                survive *= 1.0 - h[r + l];
            }
        }
        Self { n, g }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, l: usize, r: usize) -> f64 {
        self.g[r * self.n + l]
    }

    /// Distribution of `l` given `r`.
    pub fn column(&self, r: usize) -> &[f64] {
        &self.g[r * self.n..(r + 1) * self.n]
    }

    /// `p(l | Y) = sum_r p(l | r) p(r | Y)`.
    pub fn posterior(&self, run_length: &RunLengthPosterior) -> ResidualPosterior {
        assert_eq!(
            run_length.len(),
            self.n,
            "run-length posterior and kernel differ in size"
        );
        let mut p = vec![0.0; self.n];
        for (r, &lm) in run_length.log_mass.iter().enumerate() {
            if lm == f64::NEG_INFINITY {
                continue;
            }
            let w = lm.exp();
            for (dst, &g) in p.iter_mut().zip(self.column(r)) {
                *dst += w * g;
            }
        }
        ResidualPosterior {
            log_mass: p.into_iter().map(ln_or_neg_inf).collect(),
        }
    }
}

/// `log p(l_t | Y_{1:t})` over `l = 0..=R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPosterior {
    pub log_mass: Vec<f64>,
}

impl ResidualPosterior {
    pub fn probabilities(&self) -> Vec<f64> {
        self.log_mass.iter().map(|v| v.exp()).collect()
    }

    pub fn cdf(&self) -> Vec<f64> {
        cumulative(&self.probabilities())
    }
}

/// One CDF row per step.
pub fn residual_cdf_trace(posteriors: &[ResidualPosterior]) -> Vec<Vec<f64>> {
    posteriors.iter().map(ResidualPosterior::cdf).collect()
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)] // indices mirror the product formula
mod tests {
    use super::*;
    use crate::model::DurationPmf;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_hazard_ends_immediately() {
        let k = ResidualKernel::new(&HazardFn::constant(1.0, 6).unwrap());
        for r in 0..6 {
            assert_eq!(k.get(0, r), 1.0);
        }
    }

    #[test]
    fn constant_hazard_is_geometric_below_the_cap() {
        let c = 0.3;
        let n = 40;
        let k = ResidualKernel::new(&HazardFn::constant(c, n).unwrap());
        for r in 0..n {
            for l in 0..n - r - 1 {
                let want = c * (1.0 - c).powi(l as i32);
                assert!((k.get(l, r) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_point_pmf() {
        let h = DurationPmf::new(vec![0.2, 0.8]).unwrap().hazard();
        let k = ResidualKernel::new(&h);
        assert!((k.get(0, 0) - 0.2).abs() < 1e-15);
        assert!((k.get(1, 0) - 0.8).abs() < 1e-15);
        assert_eq!(k.get(0, 1), 1.0);
    }

    #[test]
    fn columns_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = HazardFn::new((0..30).map(|_| rng.random::<f64>()).collect()).unwrap();
        let k = ResidualKernel::new(&h);
        for r in 0..30 {
            assert!((k.column(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn point_run_length_gives_kernel_column() {
        let h = HazardFn::new(vec![0.1, 0.4, 0.3, 0.9, 1.0]).unwrap();
        let k = ResidualKernel::new(&h);
        let p = k
            .posterior(&RunLengthPosterior::point(2, 5))
            .probabilities();
        for (l, v) in p.iter().enumerate() {
            assert!((v - k.get(l, 2)).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 5;
        let h: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut w: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let k = ResidualKernel::new(&HazardFn::new(h.clone()).unwrap());
        let got = k
            .posterior(&RunLengthPosterior::from_probabilities(&w))
            .probabilities();
        // oracle straight from the product formula, with the cap at n - 1
        let hc = |i: usize| if i == n - 1 { 1.0 } else { h[i] };
        for l in 0..n {
            let mut want = 0.0;
            for (r, wr) in w.iter().enumerate() {
                if r + l >= n {
                    continue;
                }
                let mut g = hc(r + l);
                for gamma in r..r + l {
                    g *= 1.0 - hc(gamma);
                }
                want += wr * g;
            }
            assert!((got[l] - want).abs() < 1e-12, "l = {l}");
        }
    }

    #[test]
    fn cdf_rows() {
        let mut lm = vec![f64::NEG_INFINITY; 5];
        lm[2] = 0.0;
        let rows = residual_cdf_trace(&[ResidualPosterior { log_mass: lm }]);
        assert_eq!(rows[0], vec![0.0, 0.0, 1.0, 1.0, 1.0]);

        let c = 0.2;
        let k = ResidualKernel::new(&HazardFn::constant(c, 200).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // mass kept away from the cap, where truncation bends the geometric
        let mut w: Vec<f64> = (0..200)
            .map(|r| if r < 100 { rng.random::<f64>() } else { 0.0 })
            .collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        let cdf = k
            .posterior(&RunLengthPosterior::from_probabilities(&w))
            .cdf();
        for l in 0..50 {
            let want = 1.0 - (1.0 - c).powi(l as i32 + 1);
            assert!((cdf[l] - want).abs() < 1e-12);
        }
        assert!(cdf.windows(2).all(|p| p[1] >= p[0]));
        assert!((cdf[199] - 1.0).abs() < 1e-10);
    }
}
