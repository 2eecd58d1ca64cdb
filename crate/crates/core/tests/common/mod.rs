//! Shared oracles and random instances for the integration tests and the
//! acceptance binary. Everything here is computed independently of the
//! filters under test.

#![allow(dead_code)]

use bosd::model::HsmmParams;
use bosd::upm::{BasisUpm, GaussianUpm, RbfBasis, SineUpm, Upm};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

pub fn simplex<R: Rng>(rng: &mut R, n: usize, zero_prob: f64) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < zero_prob {
                    0.0
                } else {
                    rng.random::<f64>() + 0.05
                }
            })
            .collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            return w.into_iter().map(|v| v / s).collect();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Fixed,
    Conjugate,
    Sine,
    Basis,
}

pub const FAMILIES: [Family; 4] = [
    Family::Fixed,
    Family::Conjugate,
    Family::Sine,
    Family::Basis,
];

pub fn random_upm<R: Rng>(rng: &mut R, family: Family) -> Upm {
    let u = |rng: &mut R, lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    match family {
        Family::Fixed => GaussianUpm::fixed(vec![u(rng, -2.0, 2.0)], vec![vec![u(rng, 0.3, 2.0)]])
            .unwrap()
            .into(),
        Family::Conjugate => GaussianUpm::conjugate(
            vec![u(rng, -1.0, 1.0)],
            u(rng, 0.2, 2.0),
            u(rng, 1.5, 4.0),
            vec![vec![u(rng, 0.5, 2.0)]],
        )
        .unwrap()
        .into(),
        Family::Sine => SineUpm::new(u(rng, -2.0, 2.0), u(rng, -2.0, 2.0), u(rng, 0.3, 1.5))
            .unwrap()
            .into(),
        Family::Basis => {
            let n = rng.random_range(1..=3);
            BasisUpm::isotropic(
                RbfBasis::even(n, u(rng, 0.2, 0.6)).unwrap(),
                u(rng, 0.5, 2.0),
                u(rng, 0.2, 1.0),
            )
            .unwrap()
            .into()
        }
    }
}

/// Random model with sparsity in `pi`, `A` and `D`.
pub fn random_params<R: Rng>(rng: &mut R, k: usize, d_max: usize, family: Family) -> HsmmParams {
    HsmmParams {
        k,
        d_max,
        pi: simplex(rng, k, 0.2),
        a: (0..k).map(|_| simplex(rng, k, 0.2)).collect(),
        d: (0..k).map(|_| simplex(rng, d_max, 0.3)).collect(),
        upm: (0..k).map(|_| random_upm(rng, family)).collect(),
    }
}

pub fn random_observations<R: Rng>(
    rng: &mut R,
    params: &HsmmParams,
    t_len: usize,
) -> Vec<Vec<f64>> {
    let m = bosd::upm::PredictiveModel::dim(&params.upm[0]);
    (0..t_len)
        .map(|_| (0..m).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect())
        .collect()
}

/// Closed-form marginal likelihood of a 1-D normal-inverse-gamma (1-D NIW)
/// segment with prior `(mu0, kappa0, nu0, psi0)`.
pub fn nig_log_marginal(ys: &[f64], mu0: f64, kappa0: f64, nu0: f64, psi0: f64) -> f64 {
    let n = ys.len() as f64;
    if ys.is_empty() {
        return 0.0;
    }
    let mean = ys.iter().sum::<f64>() / n;
    let scatter: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let kappa = kappa0 + n;
    let nu = nu0 + n;
    let psi = psi0 + scatter + kappa0 * n / kappa * (mean - mu0).powi(2);
    -0.5 * n * std::f64::consts::PI.ln() + ln_gamma(nu / 2.0) - ln_gamma(nu0 / 2.0)
        + 0.5 * nu0 * psi0.ln()
        - 0.5 * nu * psi.ln()
        + 0.5 * (kappa0 / kappa).ln()
}

/// Evidence under a constant hazard `h` (no cap reached): every gap between
/// consecutive observations is a change point independently with probability `h`.
pub fn constant_hazard_evidence(ys: &[f64], h: f64, seg: impl Fn(&[f64]) -> f64) -> f64 {
    let n = ys.len();
    let mut terms = Vec::new();
    for mask in 0u32..(1 << (n - 1)) {
        let mut lp = 0.0;
        let mut start = 0;
        for gap in 0..n - 1 {
            if mask >> gap & 1 == 1 {
                lp += h.ln() + seg(&ys[start..=gap]);
                start = gap + 1;
            } else {
                lp += (1.0 - h).ln();
            }
        }
        lp += seg(&ys[start..]);
        terms.push(lp);
    }
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Standard HMM forward filter; returns filtered state probabilities and
/// per-step log evidence. `emission(z, y)` is a log density.
pub fn hmm_forward(
    pi: &[f64],
    trans: &[Vec<f64>],
    ys: &[Vec<f64>],
    emission: impl Fn(usize, &[f64]) -> f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = pi.len();
    let mut alpha = pi.to_vec();
    let mut filtered = Vec::new();
    let mut evidence = Vec::new();
    for (t, y) in ys.iter().enumerate() {
        let prior: Vec<f64> = if t == 0 {
            alpha.clone()
        } else {
            (0..k)
                .map(|j| (0..k).map(|i| alpha[i] * trans[i][j]).sum())
                .collect()
        };
        let lik: Vec<f64> = (0..k).map(|z| emission(z, y)).collect();
        let m = lik.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let joint: Vec<f64> = (0..k).map(|z| prior[z] * (lik[z] - m).exp()).collect();
        let s: f64 = joint.iter().sum();
        evidence.push(m + s.ln());
        alpha = joint.iter().map(|v| v / s).collect();
        filtered.push(alpha.clone());
    }
    (filtered, evidence)
}

/// HSMM equivalent of an HMM with self-transition `stay[z]` and
/// off-diagonal jump distribution `jump[z]` (zero diagonal). The duration
/// pmf is geometric with the whole tail at `d_max`, which is exact for any
/// sequence shorter than `d_max`.
pub fn geometric_hsmm(
    pi: &[f64],
    stay: &[f64],
    jump: &[Vec<f64>],
    d_max: usize,
    upm: Vec<Upm>,
) -> (HsmmParams, Vec<Vec<f64>>) {
    let k = pi.len();
    let d = stay
        .iter()
        .map(|&p| {
            let mut v: Vec<f64> = (1..d_max)
                .map(|d| (1.0 - p) * p.powi(d as i32 - 1))
                .collect();
            v.push(p.powi(d_max as i32 - 1));
            v
        })
        .collect();
    let trans = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    if i == j {
                        stay[i]
                    } else {
                        (1.0 - stay[i]) * jump[i][j]
                    }
                })
                .collect()
        })
        .collect();
    (
        HsmmParams {
            k,
            d_max,
            pi: pi.to_vec(),
            a: jump.to_vec(),
            d,
            upm,
        },
        trans,
    )
}

/// Off-diagonal simplex rows.
pub fn random_jumps<R: Rng>(rng: &mut R, k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            if k == 1 {
                return vec![1.0];
            }
            let mut row = simplex(rng, k - 1, 0.0);
            row.insert(i, 0.0);
            row
        })
        .collect()
}

/// Two-channel (EEG, EMG) recording at 128 Hz with one 512-sample epoch per
/// label: wake has fast EEG and strong EMG, REM theta EEG and quiet EMG,
/// NREM slow large EEG and quiet EMG.
pub fn sleep_like_recording<R: Rng>(rng: &mut R, epochs: &[usize]) -> Vec<Vec<f64>> {
    let fs = 128.0;
    let mut out = Vec::with_capacity(epochs.len() * 512);
    for &z in epochs {
        let (f, amp, emg) = match z {
            0 => (20.0, 0.6, 2.0),
            1 => (6.5, 1.0, 0.3),
            _ => (2.0, 2.5, 0.4),
        };
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        for i in 0..512 {
            let x = i as f64 / fs;
            let eeg = amp * (std::f64::consts::TAU * f * x + phase).sin()
                + 0.5 * (rng.random::<f64>() - 0.5);
            out.push(vec![eeg, emg * (rng.random::<f64>() - 0.5)]);
        }
    }
    out
}
