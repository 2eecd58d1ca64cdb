//! Two-stage beat segmentation with the duration-dependent basis-function
//! UPM. Each stage has a fixed shape stretched to its duration; the filter
//! has to infer both where a stage ends and how long it is.

use bosd::bosd::BosdFilter;
use bosd::learning::{fit_supervised, FitConfig, LabeledSequence, SegmentLabels};
use bosd::metrics::{MetricsReport, ReferenceFixture};
use bosd::upm::UpmFamily;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Stage 0: sharp spike in the middle. Stage 1: broad bump then baseline.
fn shape(z: usize, x: f64) -> f64 {
    match z {
        0 => 2.0 * (-((x - 0.5) / 0.08).powi(2)).exp() - 0.2,
        _ => 0.6 * (-((x - 0.3) / 0.15).powi(2)).exp(),
    }
}

fn beats(rng: &mut impl Rng, n: usize) -> LabeledSequence {
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut runs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..n {
        for (z, (lo, hi)) in [(0, (8, 14)), (1, (16, 30))] {
            let d: usize = rng.random_range(lo..=hi);
            runs.push((z, d));
            ys.extend(
                (0..d).map(|r| vec![shape(z, r as f64 / d as f64) + noise.sample(rng)]),
            );
        }
    }
    LabeledSequence {
        observations: ys,
        labels: SegmentLabels::from_runs(&runs),
    }
}

fn main() -> bosd::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let train: Vec<LabeledSequence> = (0..4).map(|_| beats(&mut rng, 40)).collect();
    let test = beats(&mut rng, 40);
    let fit = fit_supervised(
        &train,
        &FitConfig {
            k: 2,
            d_max: 32,
            smoothing: 1e-3,
            upm: UpmFamily::Basis {
                count: 10,
                width: 0.08,
                ridge: 1e-6,
            },
            exclude_final_segment: false,
        },
    )?;
    let mut filter = BosdFilter::new(&fit.params)?;
    let mut predicted = Vec::new();
    let mut residual_hits = 0;
    let truth = test.labels.states_per_step();
    for (t, y) in test.observations.iter().enumerate() {
        let m = filter.step(y)?;
        predicted.push(m.map_state());
        // does the MAP residual land on the true end of the stage?
        let seg = test
            .labels
            .segments
            .iter()
            .find(|s| s.range().contains(&t))
            .unwrap();
        let true_l = seg.range().end - 1 - t;
        residual_hits += usize::from(bosd::math::argmax(&m.residual) == true_l);
    }
    let report = MetricsReport::compute(&truth, &predicted, 2, None)?
        .with_reference(&ReferenceFixture::ecg());
    for s in &report.states {
        println!(
            "{}: precision {:.3}, recall {:.3}, F1 {:.3}",
            s.name, s.precision, s.recall, s.f1
        );
    }
    for row in &report.reference.unwrap().rows {
        println!("{}: F1 delta vs reference {:+.3}", row.state, row.f1_delta);
    }
    println!(
        "MAP residual exactly right at {:.1}% of steps",
        100.0 * residual_hits as f64 / truth.len() as f64
    );
    Ok(())
}
