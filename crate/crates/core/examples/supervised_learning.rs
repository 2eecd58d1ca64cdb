//! Sample labeled sequences from a known model, refit it by counting, and
//! compare the estimates with the truth.

use bosd::learning::{complete_data_loglik, fit_supervised, FitConfig, LabeledSequence};
use bosd::sampler::{sample, SyntheticConfig};
use bosd::upm::{Upm, UpmFamily};

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn main() -> bosd::Result<()> {
    let truth = SyntheticConfig::default().params()?;
    let seqs: Vec<LabeledSequence> = (0..50)
        .map(|seed| {
            sample(&truth, 1000, seed).map(|s| LabeledSequence {
                observations: s.observations,
                labels: s.labels,
            })
        })
        .collect::<bosd::Result<_>>()?;
    let config = FitConfig {
        k: truth.k,
        d_max: truth.d_max,
        smoothing: 1e-3,
        upm: UpmFamily::ScaledSine,
        exclude_final_segment: false,
    };
    let report = fit_supervised(&seqs, &config)?;
    let est = &report.params;
    println!("max |pi - pi_hat| {:.4}", max_err(&est.pi, &truth.pi));
    for z in 0..truth.k {
        let (Upm::ScaledSine(a), Upm::ScaledSine(b)) = (&est.upm[z], &truth.upm[z]) else {
            unreachable!()
        };
        println!(
            "state {z}: A row err {:.4}, D row err {:.4}, b {:.3} (true {:.3}), c {:.3} (true {:.3}), sigma2 {:.4}",
            max_err(&est.a[z], &truth.a[z]),
            max_err(&est.d[z], &truth.d[z]),
            a.b,
            b.b,
            a.c,
            b.c,
            a.sigma2
        );
    }
    for w in &report.warnings {
        println!("warning: {w}");
    }
    let fitted = complete_data_loglik(est, &seqs)?.total();
    let true_ll = complete_data_loglik(&truth, &seqs)?.total();
    println!("complete-data log-likelihood: fitted {fitted:.1}, true {true_ll:.1}");
    Ok(())
}
