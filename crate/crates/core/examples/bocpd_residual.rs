//! Run-length filtering of a piecewise-constant signal with a conjugate
//! Gaussian model, plus the residual-time prediction of when the current
//! segment will end.

use bosd::bocpd::BocpdFilter;
use bosd::model::DurationPmf;
use bosd::residual::ResidualKernel;
use bosd::trace::quantile;
use bosd::upm::GaussianUpm;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> bosd::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let levels = [(0.0, 40), (3.0, 25), (-1.0, 35)];
    let ys: Vec<f64> = levels
        .iter()
        .flat_map(|&(m, n)| (0..n).map(move |_| m))
        .map(|m| m + noise.sample(&mut rng))
        .collect();

    // durations concentrated around 30
    let w: Vec<f64> = (1..=80)
        .map(|d| (-((d as f64 - 30.0) / 10.0).powi(2) / 2.0).exp())
        .collect();
    let s: f64 = w.iter().sum();
    let hazard = DurationPmf::new(w.iter().map(|v| v / s).collect())?.hazard();
    let kernel = ResidualKernel::new(&hazard);
    let upm = GaussianUpm::conjugate(vec![0.0], 0.1, 3.0, vec![vec![0.5]])?;
    let mut f = BocpdFilter::new(&hazard, upm.into())?;

    println!("  t      y   MAP r   median l   90% l");
    for (t, y) in ys.iter().enumerate() {
        f.step(&[*y])?;
        let rl = f.posterior().probabilities();
        let map_r = bosd::math::argmax(&rl);
        let res = kernel.posterior(f.posterior()).cdf();
        if t % 5 == 4 {
            println!(
                "{:>3} {:>6.2} {:>7} {:>10} {:>7}",
                t + 1,
                y,
                map_r,
                quantile(&res, 0.5),
                quantile(&res, 0.9)
            );
        }
    }
    println!("log evidence {:.3}", f.cumulative_log_evidence());
    Ok(())
}
