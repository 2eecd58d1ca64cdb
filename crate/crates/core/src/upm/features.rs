//! Frequency-band features for multichannel epochs (e.g. EEG/EMG).
//!
//! Each channel's epoch is turned into a plain periodogram (no window); a
//! band's feature is the mean spectral amplitude over the bins whose
//! frequency falls inside the band, endpoints included.

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFeatureConfig {
    pub sample_rate: f64,
    /// Samples per epoch.
    pub epoch_length: usize,
    /// Frequency intervals `[lo, hi]` in Hz.
    pub bands: Vec<(f64, f64)>,
    /// Emit `ln(amplitude + 1e-12)` instead of the amplitude.
    #[serde(default)]
    pub log_amplitude: bool,
}

impl Default for BandFeatureConfig {
    /// 4-second epochs at 128 Hz with the classical delta/theta/alpha/sigma/beta/gamma split.
    fn default() -> Self {
        Self {
            sample_rate: 128.0,
            epoch_length: 512,
            bands: vec![
                (0.5, 4.0),
                (4.0, 8.0),
                (8.0, 12.0),
                (12.0, 16.0),
                (16.0, 30.0),
                (30.0, 64.0),
            ],
            log_amplitude: false,
        }
    }
}

/// One-sided spectrum of a real signal: bins `0..=n/2`.
#[derive(Debug, Clone)]
pub struct Periodogram {
    /// `|X_k| / n`
    pub amplitude: Vec<f64>,
    /// `|X_k|^2 / n^2`, doubled for bins with a mirrored partner so the sum
    /// equals the mean square of the signal.
    pub power: Vec<f64>,
    pub frequencies: Vec<f64>,
}

impl Periodogram {
    pub fn new(signal: &[f64], sample_rate: f64) -> Self {
        let n = signal.len();
        let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let half = n / 2;
        let nf = n as f64;
        let mut amplitude = Vec::with_capacity(half + 1);
        let mut power = Vec::with_capacity(half + 1);
        let mut frequencies = Vec::with_capacity(half + 1);
        for (k, x) in buf.iter().take(half + 1).enumerate() {
            let a = x.norm() / nf;
            let mirrored = k != 0 && !(n.is_multiple_of(2) && k == half);
            amplitude.push(a);
            power.push(if mirrored { 2.0 * a * a } else { a * a });
            frequencies.push(k as f64 * sample_rate / nf);
        }
        Self {
            amplitude,
            power,
            frequencies,
        }
    }

    fn bins(&self, lo: f64, hi: f64) -> impl Iterator<Item = usize> + '_ {
        let eps = 1e-9;
        self.frequencies
            .iter()
            .enumerate()
            .filter(move |(_, &f)| f >= lo - eps && f <= hi + eps)
            .map(|(k, _)| k)
    }

    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        self.bins(lo, hi).map(|k| self.power[k]).sum()
    }

    pub fn band_mean_amplitude(&self, lo: f64, hi: f64) -> Option<f64> {
        let bins: Vec<usize> = self.bins(lo, hi).collect();
        if bins.is_empty() {
            return None;
        }
        Some(bins.iter().map(|&k| self.amplitude[k]).sum::<f64>() / bins.len() as f64)
    }
}

/// Feature vector for one epoch: channel-major, band-minor.
pub fn band_features(
    epoch: &[Vec<f64>],
    bands: &[(f64, f64)],
    sample_rate: f64,
    log_amplitude: bool,
) -> Result<Vec<f64>> {
    if epoch.is_empty() {
        return Err(Error::Features("epoch has no channels".into()));
    }
    let len = epoch[0].len();
    if len < 2 {
        return Err(Error::Features(format!("epoch length {len} is below 2")));
    }
    if epoch.iter().any(|c| c.len() != len) {
        return Err(Error::Features("channels differ in length".into()));
    }
    if sample_rate.is_nan() || sample_rate <= 0.0 {
        return Err(Error::Features(format!(
            "sample rate {sample_rate} must be positive"
        )));
    }
    let nyquist = sample_rate / 2.0;
    for &(lo, hi) in bands {
        if lo.is_nan() || hi.is_nan() || lo > hi || lo < 0.0 {
            return Err(Error::Features(format!(
                "band [{lo}, {hi}] is empty or negative"
            )));
        }
        if hi > nyquist + 1e-9 {
            return Err(Error::Features(format!(
                "band [{lo}, {hi}] exceeds Nyquist frequency {nyquist}"
            )));
        }
    }
    let mut out = Vec::with_capacity(epoch.len() * bands.len());
    for channel in epoch {
        let pg = Periodogram::new(channel, sample_rate);
        for &(lo, hi) in bands {
            let a = pg.band_mean_amplitude(lo, hi).ok_or_else(|| {
                Error::Features(format!(
                    "band [{lo}, {hi}] contains no frequency bin at resolution {}",
                    sample_rate / len as f64
                ))
            })?;
            out.push(if log_amplitude { (a + 1e-12).ln() } else { a });
        }
    }
    Ok(out)
}
