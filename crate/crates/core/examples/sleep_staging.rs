//! Three-state sleep staging from EEG/EMG band features: a generated
//! two-channel recording goes through the feature extractor, a supervised
//! fit with Gaussian UPMs and the BOSD filter, and is scored per state
//! against the stored reference figures.
//!
//! Real recordings use the same path through the CLI:
//! `bosd features`, `bosd fit`, `bosd infer`, `bosd eval`.

use bosd::bosd::BosdFilter;
use bosd::cli::epoch_features;
use bosd::learning::{fit_supervised, FitConfig, LabeledSequence, SegmentLabels};
use bosd::metrics::{MetricsReport, ReferenceFixture};
use bosd::upm::{BandFeatureConfig, UpmFamily};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Wake: fast EEG, strong EMG. REM: theta EEG, quiet EMG. NREM: slow, large EEG.
fn recording(rng: &mut impl Rng, epochs: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for &z in epochs {
        let (f, amp, emg) = [(20.0, 0.6, 2.0), (6.5, 1.0, 0.3), (2.0, 2.5, 0.4)][z];
        let phase = rng.random::<f64>() * std::f64::consts::TAU;
        for i in 0..512 {
            let x = i as f64 / 128.0;
            let eeg = amp * (std::f64::consts::TAU * f * x + phase).sin()
                + 0.5 * (rng.random::<f64>() - 0.5);
            out.push(vec![eeg, emg * (rng.random::<f64>() - 0.5)]);
        }
    }
    out
}

fn labels(rng: &mut impl Rng, epochs: usize) -> SegmentLabels {
    let mut runs = Vec::new();
    let (mut z, mut n) = (rng.random_range(0..3), 0);
    while n < epochs {
        let len = rng.random_range(4..=20).min(epochs - n);
        runs.push((z, len));
        n += len;
        z = (z + rng.random_range(1..3)) % 3;
    }
    SegmentLabels::from_runs(&runs)
}

fn main() -> bosd::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let features = BandFeatureConfig {
        log_amplitude: true,
        ..Default::default()
    };
    let mut data = Vec::new();
    for _ in 0..3 {
        let l = labels(&mut rng, 300);
        let raw = recording(&mut rng, &l.states_per_step());
        data.push(LabeledSequence {
            observations: epoch_features(&raw, &features)?,
            labels: l,
        });
    }
    let test = data.pop().unwrap();
    let fit = fit_supervised(
        &data,
        &FitConfig {
            k: 3,
            d_max: 20,
            smoothing: 1e-3,
            upm: UpmFamily::Gaussian,
            exclude_final_segment: true,
        },
    )?;
    let mut filter = BosdFilter::new(&fit.params)?;
    let mut predicted = Vec::new();
    for y in &test.observations {
        predicted.push(filter.step(y)?.map_state());
    }
    let names: Vec<String> = ["wake", "rem", "nrem"].map(String::from).to_vec();
    let report =
        MetricsReport::compute(&test.labels.states_per_step(), &predicted, 3, Some(&names))?
            .with_reference(&ReferenceFixture::sleep_staging());
    println!("state  precision  recall   F1     support");
    for s in &report.states {
        println!(
            "{:<6} {:>9.3} {:>7.3} {:>6.3} {:>8}",
            s.name, s.precision, s.recall, s.f1, s.support
        );
    }
    println!(
        "macro F1 {:.3}, weighted F1 {:.3}",
        report.macro_avg.f1, report.weighted_avg.f1
    );
    for row in &report.reference.unwrap().rows {
        println!(
            "{}: F1 {:.3} vs reference {:.2} ({:+.3})",
            row.state, row.observed.f1, row.reference.f1, row.f1_delta
        );
    }
    Ok(())
}
