//! Generative model types: durations, hazards and the full HSMM parameter set.
//!
//! A segment of state `z` lasts `d` observations with probability
//! `D[z][d-1]`. The equivalent run-length parameterization is the hazard
//! `H(r) = P(d = r + 1 | d > r)`, i.e. the probability that a segment which
//! has already emitted `r + 1` observations ends right there.
//!
//! All probabilities here are stored in the linear domain; the filters move
//! to log or scaled representations internally.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json;
use crate::upm::{DurationDependence, PredictiveModel, Upm};

/// Tolerance on the sum of a probability vector accepted at construction.
pub const PMF_INPUT_TOLERANCE: f64 = 1e-9;
/// Tolerance on the sum of a stored probability vector.
pub const PMF_TOLERANCE: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Latent-variable newtypes
// ---------------------------------------------------------------------------

/// Number of steps elapsed since the most recent change point (0 at a change point).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RunLength(pub usize);

/// Total number of observations emitted by the enclosing segment (>= 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentDuration(pub usize);

/// Observations remaining in the active segment after the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResidualTime(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HiddenState(pub usize);

impl ResidualTime {
    /// `l = d - 1 - r`; `None` when `r >= d`.
    pub fn within(run_length: RunLength, duration: SegmentDuration) -> Option<Self> {
        (run_length.0 < duration.0).then(|| Self(duration.0 - 1 - run_length.0))
    }
}

// ---------------------------------------------------------------------------
// Duration p.m.f. and hazard
// ---------------------------------------------------------------------------

/// Probability mass over segment durations `1..=d_max`; `mass[i]` is `P(d = i + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DurationPmf {
    mass: Vec<f64>,
}

impl DurationPmf {
    /// Validates and renormalizes. The input sum may deviate from one by at
    /// most [`PMF_INPUT_TOLERANCE`].
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        let mass = normalized("duration pmf", mass)?;
        Ok(Self { mass })
    }

    /// Geometric `c (1 - c)^(d - 1)` truncated to `1..=d_max` and renormalized.
    pub fn truncated_geometric(c: f64, d_max: usize) -> Result<Self> {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::InvalidPmf {
                what: "truncated geometric".into(),
                reason: format!("ratio {c} not in (0, 1]"),
            });
        }
        let mass = (1..=d_max)
            .map(|d| c * (1.0 - c).powi(d as i32 - 1))
            .collect();
        Self::new(rescale(mass))
    }

    pub fn uniform(d_max: usize) -> Result<Self> {
        Self::new(vec![1.0 / d_max as f64; d_max])
    }

    /// All mass on a single duration.
    pub fn point(duration: usize, d_max: usize) -> Result<Self> {
        if duration == 0 || duration > d_max {
            return Err(Error::InvalidPmf {
                what: "point duration".into(),
                reason: format!("duration {duration} outside 1..={d_max}"),
            });
        }
        let mut mass = vec![0.0; d_max];
        mass[duration - 1] = 1.0;
        Self::new(mass)
    }

    pub fn d_max(&self) -> usize {
        self.mass.len()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// `P(d)` for `d` in `1..=d_max`, zero outside.
    pub fn prob(&self, d: usize) -> f64 {
        if d == 0 {
            0.0
        } else {
            self.mass.get(d - 1).copied().unwrap_or(0.0)
        }
    }

    /// `S[r] = P(d > r)` for `r` in `0..d_max`, accumulated from the tail.
    pub fn survival(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.mass.len()];
        let mut acc = 0.0;
        for r in (0..self.mass.len()).rev() {
            acc += self.mass[r];
            out[r] = acc;
        }
        out
    }

    pub fn hazard(&self) -> HazardFn {
        hazard_from_duration(self)
    }

    pub fn mean(&self) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }
}

impl<'de> Deserialize<'de> for DurationPmf {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let mass = Vec::<f64>::deserialize(de)?;
        Self::new(mass).map_err(serde::de::Error::custom)
    }
}

/// Change-point probability `H(r)` for run lengths `0..d_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct HazardFn {
    values: Vec<f64>,
}

impl HazardFn {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidPmf {
                what: "hazard".into(),
                reason: "empty hazard".into(),
            });
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidHazard { index, value });
        }
        Ok(Self { values })
    }

    /// `H(r) = c` for every run length.
    pub fn constant(c: f64, d_max: usize) -> Result<Self> {
        Self::new(vec![c; d_max])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, r: usize) -> f64 {
        self.values[r]
    }

    /// Support size; run lengths range over `0..d_max`.
    pub fn d_max(&self) -> usize {
        self.values.len()
    }

    /// True when the last run length forces a change point.
    pub fn is_capped(&self) -> bool {
        self.values.last() == Some(&1.0)
    }

    /// Copy with `H(d_max - 1) = 1`, the convention every filter uses at the
    /// run-length cap. Logs a warning when this moves mass.
    pub fn capped(&self) -> HazardFn {
        let mut values = self.values.clone();
        if let Some(last) = values.last_mut() {
            if *last < 1.0 {
                log::warn!(
                    "hazard at the run-length cap r = {} is {}; surviving mass is forced to a change point",
                    self.values.len() - 1,
                    last
                );
                *last = 1.0;
            }
        }
        HazardFn { values }
    }

    pub fn to_duration(&self) -> DurationPmf {
        duration_from_hazard(self)
    }
}

impl<'de> Deserialize<'de> for HazardFn {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(de)?;
        Self::new(values).map_err(serde::de::Error::custom)
    }
}

/// `H(r) = P(d = r + 1) / P(d >= r + 1)`, with `H(r) = 1` where the survival
/// mass is zero.
pub fn hazard_from_duration(pmf: &DurationPmf) -> HazardFn {
    let survival = pmf.survival();
    let values = pmf
        .mass
        .iter()
        .zip(&survival)
        .map(|(&p, &s)| if s > 0.0 { (p / s).min(1.0) } else { 1.0 })
        .collect();
    HazardFn { values }
}

/// `P(d) = H(d - 1) * prod_{g < d - 1} (1 - H(g))`. Mass still surviving
/// after the last run length is assigned to `d = d_max`.
pub fn duration_from_hazard(hazard: &HazardFn) -> DurationPmf {
    let mut mass = Vec::with_capacity(hazard.values.len());
    let mut survive = 1.0;
    for &h in &hazard.values {
        mass.push(survive * h);
        survive *= 1.0 - h;
    }
    if survive > 0.0 {
        log::warn!(
            "hazard leaves {survive:e} survival mass beyond d_max = {}; assigning it to d_max",
            hazard.values.len()
        );
        *mass.last_mut().expect("hazard is non-empty") += survive;
    }
    DurationPmf {
        mass: rescale(mass),
    }
}

fn rescale(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 && s != 1.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    v
}

fn normalized(what: &str, v: Vec<f64>) -> Result<Vec<f64>> {
    let bad = |reason: String| Error::InvalidPmf {
        what: what.to_string(),
        reason,
    };
    if v.is_empty() {
        return Err(bad("empty".into()));
    }
    if let Some((i, x)) = v
        .iter()
        .enumerate()
        .find(|(_, x)| !x.is_finite() || **x < 0.0)
    {
        return Err(bad(format!("entry {i} is {x}")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > PMF_INPUT_TOLERANCE {
        return Err(bad(format!("sums to {s}")));
    }
    Ok(rescale(v))
}

// ---------------------------------------------------------------------------
// Full parameter set
// ---------------------------------------------------------------------------

/// Initial p.m.f., transition matrix, duration matrix and per-state UPM
/// hyperparameters. Plain data: call [`HsmmParams::validate`] before use
/// (the filters do so on construction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsmmParams {
    pub k: usize,
    pub d_max: usize,
    pub pi: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub upm: Vec<Upm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Error,
    Advisory,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Shape(String),
    NonFinite(String),
    PiNegative {
        index: usize,
        value: f64,
    },
    PiSum {
        sum: f64,
    },
    TransitionNegative {
        row: usize,
        col: usize,
        value: f64,
    },
    TransitionRowSum {
        row: usize,
        sum: f64,
    },
    DurationNegative {
        state: usize,
        duration: usize,
        value: f64,
    },
    DurationRowSum {
        state: usize,
        sum: f64,
    },
    Upm {
        state: usize,
        reason: String,
    },
    UpmMismatch(String),
    /// Nonzero `A[i][i]`; legal, but confounded with longer durations.
    SelfTransition {
        state: usize,
        value: f64,
    },
}

impl Problem {
    pub fn severity(&self) -> Severity {
        match self {
            Problem::SelfTransition { .. } => Severity::Advisory,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Problem::Shape(s) => write!(f, "shape: {s}"),
            Problem::NonFinite(s) => write!(f, "non-finite value in {s}"),
            Problem::PiNegative { index, value } => write!(f, "pi[{index}] = {value} is negative"),
            Problem::PiSum { sum } => write!(f, "pi sums to {sum}"),
            Problem::TransitionNegative { row, col, value } => {
                write!(f, "A[{row}][{col}] = {value} is negative")
            }
            Problem::TransitionRowSum { row, sum } => write!(f, "A row {row} sums to {sum}"),
            Problem::DurationNegative { state, duration, value } => write!(
                f,
                "D[state {state}][duration {duration}] = {value} is negative"
            ),
            Problem::DurationRowSum { state, sum } => {
                write!(f, "D row for state {state} sums to {sum}")
            }
            Problem::Upm { state, reason } => write!(f, "UPM of state {state}: {reason}"),
            Problem::UpmMismatch(s) => write!(f, "UPM mismatch: {s}"),
            Problem::SelfTransition { state, value } => write!(
                f,
                "advisory: A[{state}][{state}] = {value}; self-transitions are confounded with longer durations"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub problems: Vec<Problem>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    /// No error-level problems (advisories allowed).
    pub fn is_usable(&self) -> bool {
        self.errors().next().is_none()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Problem> {
        self.problems
            .iter()
            .filter(|p| p.severity() == Severity::Error)
    }

    pub fn advisories(&self) -> impl Iterator<Item = &Problem> {
        self.problems
            .iter()
            .filter(|p| p.severity() == Severity::Advisory)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.problems {
            writeln!(f, "  - {p}")?;
        }
        Ok(())
    }
}

fn sum_ok(sum: f64) -> bool {
    (sum - 1.0).abs() <= PMF_TOLERANCE
}

impl HsmmParams {
    /// Single-state model equivalent to a run-length hazard.
    pub fn from_hazard(hazard: &HazardFn, upm: Upm) -> Self {
        let pmf = hazard.to_duration();
        Self {
            k: 1,
            d_max: pmf.d_max(),
            pi: vec![1.0],
            a: vec![vec![1.0]],
            d: vec![pmf.mass().to_vec()],
            upm: vec![upm],
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut problems = Vec::new();
        let k = self.k;
        if k == 0 || self.d_max == 0 {
            problems.push(Problem::Shape(format!(
                "k = {k} and d_max = {} must be positive",
                self.d_max
            )));
            return ValidationReport { problems };
        }
        if self.pi.len() != k {
            problems.push(Problem::Shape(format!(
                "pi has {} entries, expected {k}",
                self.pi.len()
            )));
        } else if self.pi.iter().any(|v| !v.is_finite()) {
            problems.push(Problem::NonFinite("pi".into()));
        } else {
            for (index, &value) in self.pi.iter().enumerate() {
                if value < 0.0 {
                    problems.push(Problem::PiNegative { index, value });
                }
            }
            let sum: f64 = self.pi.iter().sum();
            if !sum_ok(sum) {
                problems.push(Problem::PiSum { sum });
            }
        }

        if self.a.len() != k || self.a.iter().any(|r| r.len() != k) {
            problems.push(Problem::Shape(format!("A must be {k}x{k}")));
        } else {
            for (row, r) in self.a.iter().enumerate() {
                if r.iter().any(|v| !v.is_finite()) {
                    problems.push(Problem::NonFinite(format!("A row {row}")));
                    continue;
                }
                for (col, &value) in r.iter().enumerate() {
                    if value < 0.0 {
                        problems.push(Problem::TransitionNegative { row, col, value });
                    }
                }
                let sum: f64 = r.iter().sum();
                if !sum_ok(sum) {
                    problems.push(Problem::TransitionRowSum { row, sum });
                }
                if k > 1 && r[row] > 0.0 {
                    problems.push(Problem::SelfTransition {
                        state: row,
                        value: r[row],
                    });
                }
            }
        }

        if self.d.len() != k || self.d.iter().any(|r| r.len() != self.d_max) {
            problems.push(Problem::Shape(format!("D must be {k}x{}", self.d_max)));
        } else {
            for (state, r) in self.d.iter().enumerate() {
                if r.iter().any(|v| !v.is_finite()) {
                    problems.push(Problem::NonFinite(format!("D row {state}")));
                    continue;
                }
                for (i, &value) in r.iter().enumerate() {
                    if value < 0.0 {
                        problems.push(Problem::DurationNegative {
                            state,
                            duration: i + 1,
                            value,
                        });
                    }
                }
                let sum: f64 = r.iter().sum();
                if !sum_ok(sum) {
                    problems.push(Problem::DurationRowSum { state, sum });
                }
            }
        }

        if self.upm.len() != k {
            problems.push(Problem::Shape(format!(
                "{} UPM blocks, expected {k}",
                self.upm.len()
            )));
        } else {
            for (state, u) in self.upm.iter().enumerate() {
                if let Err(reason) = u.check() {
                    problems.push(Problem::Upm { state, reason });
                }
            }
            if let Some(first) = self.upm.first() {
                for (state, u) in self.upm.iter().enumerate().skip(1) {
                    if u.kind() != first.kind() {
                        problems.push(Problem::UpmMismatch(format!(
                            "state {state} is {} but state 0 is {}",
                            u.kind(),
                            first.kind()
                        )));
                    } else if u.dim() != first.dim() {
                        problems.push(Problem::UpmMismatch(format!(
                            "state {state} has dimension {} but state 0 has {}",
                            u.dim(),
                            first.dim()
                        )));
                    } else if u.dependence() != first.dependence() {
                        problems.push(Problem::UpmMismatch(format!(
                            "state {state} differs in duration dependence from state 0"
                        )));
                    }
                }
            }
        }
        ValidationReport { problems }
    }

    /// Returns `self` if usable, otherwise the report as an error.
    pub fn checked(self) -> Result<Self> {
        let report = self.validate();
        if report.is_usable() {
            Ok(self)
        } else {
            Err(Error::InvalidModel(report))
        }
    }

    pub fn duration_pmf(&self, state: usize) -> Result<DurationPmf> {
        DurationPmf::new(self.d[state].clone())
    }

    pub fn hazard(&self, state: usize) -> Result<HazardFn> {
        Ok(self.duration_pmf(state)?.hazard())
    }

    pub fn obs_dim(&self) -> usize {
        self.upm.first().map_or(0, |u| u.dim())
    }

    pub fn dependence(&self) -> DurationDependence {
        if self
            .upm
            .iter()
            .any(|u| u.dependence() == DurationDependence::Dependent)
        {
            DurationDependence::Dependent
        } else {
            DurationDependence::Agnostic
        }
    }

    /// Canonical JSON. Models with non-finite entries are refused.
    pub fn to_json(&self) -> Result<String> {
        let report = self.validate();
        if !report.is_usable() {
            return Err(Error::InvalidModel(report));
        }
        json::to_canonical_string(self).map_err(|e| Error::Input(format!("serializing model: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Input(format!("parsing model JSON: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::Input(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}
