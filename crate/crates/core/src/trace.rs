//! Per-step posterior summaries for export: run-length CDF, residual CDF,
//! state marginals, MAP state and log evidence.
//!
//! CDFs are sampled on a grid of indices. Up to `full_resolution` every
//! index is kept; above that the grid is strided, always ending at the last
//! index so each sampled row still ends at 1.

use std::io::{Read, Write};

use crate::bosd::StepMarginals;
use crate::error::{Error, Result};
use crate::math::{argmax, cumulative};

/// Default cap on CDF columns per row before striding kicks in.
pub const FULL_RESOLUTION: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfGrid {
    points: Vec<usize>,
}

impl CdfGrid {
    /// Grid over `0..len`.
    pub fn new(len: usize, full_resolution: usize) -> Self {
        if len <= full_resolution.max(1) {
            return Self {
                points: (0..len).collect(),
            };
        }
        let stride = len.div_ceil(full_resolution.max(1));
        let mut points: Vec<usize> = (0..len).step_by(stride).collect();
        if *points.last().unwrap() != len - 1 {
            points.push(len - 1);
        }
        Self { points }
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn sample(&self, cdf: &[f64]) -> Vec<f64> {
        self.points.iter().map(|&i| cdf[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 1-based step index.
    pub t: usize,
    pub log_evidence: f64,
    pub map_state: usize,
    pub state: Vec<f64>,
    pub run_length_cdf: Vec<f64>,
    pub residual_cdf: Vec<f64>,
}

impl TraceRow {
    pub fn from_marginals(t: usize, m: &StepMarginals, grid: &CdfGrid) -> Self {
        Self {
            t,
            log_evidence: m.log_evidence,
            map_state: m.map_state(),
            state: m.state.clone(),
            run_length_cdf: grid.sample(&cumulative(&m.run_length)),
            residual_cdf: grid.sample(&cumulative(&m.residual)),
        }
    }

    /// Single-state row from run-length and residual probabilities.
    pub fn from_run_length(
        t: usize,
        log_evidence: f64,
        run_length: &[f64],
        residual: &[f64],
        grid: &CdfGrid,
    ) -> Self {
        Self {
            t,
            log_evidence,
            map_state: 0,
            state: vec![1.0],
            run_length_cdf: grid.sample(&cumulative(run_length)),
            residual_cdf: grid.sample(&cumulative(residual)),
        }
    }
}

/// In-memory trace.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTrace {
    pub grid: CdfGrid,
    pub k: usize,
    pub rows: Vec<TraceRow>,
}

impl PosteriorTrace {
    pub fn new(k: usize, d_max: usize, full_resolution: usize) -> Self {
        Self {
            grid: CdfGrid::new(d_max, full_resolution),
            k,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, m: &StepMarginals) {
        let t = self.rows.len() + 1;
        self.rows.push(TraceRow::from_marginals(t, m, &self.grid));
    }

    pub fn map_states(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.map_state).collect()
    }

    pub fn cumulative_log_evidence(&self) -> f64 {
        self.rows.iter().map(|r| r.log_evidence).sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut tw = TraceWriter::new(w, self.k, self.grid.clone())?;
        for row in &self.rows {
            tw.write(row)?;
        }
        tw.finish()
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("trace CSV: {e}"))
}

/// Streams rows to CSV with header
/// `t,log_evidence,map_state,p_state_<z>...,rl_cdf_<r>...,res_cdf_<l>...`,
/// where `<r>` and `<l>` are the grid indices.
pub struct TraceWriter<W: Write> {
    out: csv::Writer<W>,
    k: usize,
    grid: CdfGrid,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(w: W, k: usize, grid: CdfGrid) -> Result<Self> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string(), "log_evidence".into(), "map_state".into()];
        header.extend((0..k).map(|z| format!("p_state_{z}")));
        header.extend(grid.points().iter().map(|r| format!("rl_cdf_{r}")));
        header.extend(grid.points().iter().map(|l| format!("res_cdf_{l}")));
        out.write_record(&header).map_err(csv_err)?;
        Ok(Self { out, k, grid })
    }

    pub fn grid(&self) -> &CdfGrid {
        &self.grid
    }

    pub fn write(&mut self, row: &TraceRow) -> Result<()> {
        debug_assert_eq!(row.state.len(), self.k);
        let mut rec = Vec::with_capacity(3 + self.k + 2 * self.grid.points().len());
        rec.push(row.t.to_string());
        rec.push(row.log_evidence.to_string());
        rec.push(row.map_state.to_string());
        rec.extend(row.state.iter().map(f64::to_string));
        rec.extend(row.run_length_cdf.iter().map(f64::to_string));
        rec.extend(row.residual_cdf.iter().map(f64::to_string));
        self.out.write_record(&rec).map_err(csv_err)
    }

    pub fn finish(mut self) -> Result<()> {
        self.out
            .flush()
            .map_err(|e| Error::Input(format!("writing trace: {e}")))
    }
}

/// `(map_state, log_evidence)` per row of a trace CSV.
pub fn read_trace_summary<R: Read>(r: R) -> Result<Vec<(usize, f64)>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("trace CSV has no `{name}` column")))
    };
    let (map_col, ev_col) = (col("map_state")?, col("log_evidence")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let parse_err = |what: &str| Error::Input(format!("trace CSV line {}: bad {what}", i + 2));
        let z = rec
            .get(map_col)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("map_state"))?;
        let e = rec
            .get(ev_col)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("log_evidence"))?;
        out.push((z, e));
    }
    Ok(out)
}

/// Index of the first CDF entry reaching `q`.
pub fn quantile(cdf: &[f64], q: f64) -> usize {
    cdf.iter()
        .position(|&c| c >= q - 1e-12)
        .unwrap_or(cdf.len() - 1)
}

/// MAP state of a marginal vector, ties to the lowest state.
pub fn map_state(state: &[f64]) -> usize {
    argmax(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_full_and_strided() {
        assert_eq!(CdfGrid::new(5, 256).points(), &[0, 1, 2, 3, 4]);
        let g = CdfGrid::new(1500, 256);
        assert!(g.points().len() <= 257);
        assert_eq!(*g.points().last().unwrap(), 1499);
        assert!(g.points().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn csv_round_trip_of_summary() {
        let m = StepMarginals {
            run_length: vec![0.2, 0.8, 0.0],
            residual: vec![0.5, 0.25, 0.25],
            duration: vec![0.0, 0.5, 0.5],
            state: vec![0.4, 0.6],
            log_evidence: -1.25,
        };
        let mut trace = PosteriorTrace::new(2, 3, 256);
        trace.push(&m);
        trace.push(&m);
        assert_eq!(trace.rows[0].run_length_cdf, vec![0.2, 1.0, 1.0]);
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(
            "t,log_evidence,map_state,p_state_0,p_state_1,rl_cdf_0,rl_cdf_1,rl_cdf_2,res_cdf_0"
        ));
        let rows = read_trace_summary(&buf[..]).unwrap();
        assert_eq!(rows, vec![(1, -1.25), (1, -1.25)]);
    }

    #[test]
    fn quantiles() {
        let cdf = [0.01, 0.3, 0.96, 1.0];
        assert_eq!(quantile(&cdf, 0.025), 1);
        assert_eq!(quantile(&cdf, 0.975), 3);
    }
}
