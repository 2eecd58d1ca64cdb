//! Per-state classification metrics of MAP state sequences, plus stored
//! reference figures for comparing against runs on real recordings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMetrics {
    pub state: usize,
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of true steps in this state.
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub states: Vec<StateMetrics>,
    /// Unweighted mean over states.
    pub macro_avg: Averages,
    /// Mean weighted by support.
    pub weighted_avg: Averages,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceComparison>,
}

/// 0/0 counts as 0.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl MetricsReport {
    /// Compares per-step labels. `names` defaults to `S0, S1, ...`.
    pub fn compute(
        truth: &[usize],
        predicted: &[usize],
        k: usize,
        names: Option<&[String]>,
    ) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Input(format!(
                "{} labeled steps but {} predicted steps",
                truth.len(),
                predicted.len()
            )));
        }
        if let Some(&z) = truth.iter().chain(predicted).find(|&&z| z >= k) {
            return Err(Error::Input(format!("state {z} is outside 0..{k}")));
        }
        let mut confusion = vec![vec![0usize; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t][p] += 1;
        }
        let states: Vec<StateMetrics> = (0..k)
            .map(|z| {
                let tp = confusion[z][z];
                let support: usize = confusion[z].iter().sum();
                let predicted_z: usize = confusion.iter().map(|row| row[z]).sum();
                let precision = ratio(tp, predicted_z);
                let recall = ratio(tp, support);
                StateMetrics {
                    state: z,
                    name: names
                        .and_then(|n| n.get(z).cloned())
                        .unwrap_or_else(|| format!("S{z}")),
                    precision,
                    recall,
                    f1: harmonic(precision, recall),
                    support,
                }
            })
            .collect();
        let n = truth.len();
        let mean =
            |f: fn(&StateMetrics) -> f64| states.iter().map(f).sum::<f64>() / k.max(1) as f64;
        let weighted = |f: fn(&StateMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                states.iter().map(|s| f(s) * s.support as f64).sum::<f64>() / n as f64
            }
        };
        let correct: usize = (0..k).map(|z| confusion[z][z]).sum();
        Ok(Self {
            macro_avg: Averages {
                precision: mean(|s| s.precision),
                recall: mean(|s| s.recall),
                f1: mean(|s| s.f1),
            },
            weighted_avg: Averages {
                precision: weighted(|s| s.precision),
                recall: weighted(|s| s.recall),
                f1: weighted(|s| s.f1),
            },
            states,
            confusion,
            accuracy: ratio(correct, n),
            reference: None,
        })
    }

    pub fn with_reference(mut self, fixture: &ReferenceFixture) -> Self {
        self.reference = Some(fixture.compare(&self));
        self
    }
}

/// Reported precision / recall / F1 per named state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFixture {
    pub name: String,
    pub states: Vec<(String, Averages)>,
}

impl ReferenceFixture {
    /// Three-state mouse sleep staging from EEG/EMG band features (states
    /// ordered wake, REM, NREM).
    pub fn sleep_staging() -> Self {
        let s = |n: &str, p, r, f1| {
            (
                n.to_string(),
                Averages {
                    precision: p,
                    recall: r,
                    f1,
                },
            )
        };
        Self {
            name: "sleep_staging".into(),
            states: vec![
                s("wake", 0.94, 0.93, 0.93),
                s("rem", 0.90, 0.91, 0.91),
                s("nrem", 0.81, 0.87, 0.84),
            ],
        }
    }

    /// Two-stage ECG segmentation with the basis-function UPM.
    pub fn ecg() -> Self {
        let s = |n: &str, p, r, f1| {
            (
                n.to_string(),
                Averages {
                    precision: p,
                    recall: r,
                    f1,
                },
            )
        };
        Self {
            name: "ecg".into(),
            states: vec![s("S0", 0.99, 0.81, 0.89), s("S1", 0.84, 0.99, 0.91)],
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "sleep_staging" => Some(Self::sleep_staging()),
            "ecg" => Some(Self::ecg()),
            _ => None,
        }
    }

    /// Matches states by name (case-insensitive), falling back to position.
    pub fn compare(&self, report: &MetricsReport) -> ReferenceComparison {
        let rows = self
            .states
            .iter()
            .enumerate()
            .filter_map(|(i, (name, reference))| {
                let observed = report
                    .states
                    .iter()
                    .find(|s| s.name.eq_ignore_ascii_case(name))
                    .or_else(|| report.states.get(i))?;
                Some(ReferenceDelta {
                    state: name.clone(),
                    reference: *reference,
                    observed: Averages {
                        precision: observed.precision,
                        recall: observed.recall,
                        f1: observed.f1,
                    },
                    f1_delta: observed.f1 - reference.f1,
                })
            })
            .collect();
        ReferenceComparison {
            fixture: self.name.clone(),
            rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDelta {
    pub state: String,
    pub reference: Averages,
    pub observed: Averages,
    /// `observed - reference`; informational only.
    pub f1_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceComparison {
    pub fixture: String,
    pub rows: Vec<ReferenceDelta>,
}
