//! Command-line surface: sample, fit, infer, eval and features.
//!
//! File formats:
//! - sequence CSV: `t,y_1,...,y_M`, `t` 1-based;
//! - labels CSV: `seq_id,state,start,duration`, `start` 1-based;
//! - trace CSV: see [`crate::trace::TraceWriter`];
//! - model JSON: see [`HsmmParams::to_json`].
//!
//! Exit codes: 0 success, 1 posterior underflow, 2 anything else.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bocpd::BocpdFilter;
use crate::bosd::BosdFilter;
use crate::error::{Error, Result};
use crate::learning::{
    complete_data_loglik, fit_supervised, FitConfig, LabeledSequence, Segment, SegmentLabels,
};
use crate::metrics::{MetricsReport, ReferenceFixture};
use crate::model::HsmmParams;
use crate::residual::ResidualKernel;
use crate::sampler::{sample, SyntheticConfig};
use crate::trace::{read_trace_summary, CdfGrid, TraceRow, TraceWriter, FULL_RESOLUTION};
use crate::upm::{band_features, BandFeatureConfig, UpmFamily};

#[derive(Debug, Parser)]
#[command(name = "bosd", version, about = "Bayesian online segment detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw sequences from a model (or the synthetic replica) with labels.
    Sample(SampleArgs),
    /// Supervised maximum-likelihood fit from labeled sequences.
    Fit(FitArgs),
    /// Run a filter over one sequence and write the posterior trace.
    Infer(InferArgs),
    /// Score a trace's MAP states against labels.
    Eval(EvalArgs),
    /// Turn a raw multichannel recording into per-epoch band features.
    Features(FeaturesArgs),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sample from this model instead of the synthetic one in the config.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of sequences.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Sequence length; defaults to the synthetic config's `t_len`.
    #[arg(long)]
    pub length: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Sequence CSVs; the i-th file is `seq_id = i` in the labels.
    #[arg(required = true)]
    pub sequences: Vec<PathBuf>,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model JSON to write; the report goes next to it as `<stem>.report.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Run-length filter; needs a single-state model.
    Bocpd,
    Bosd,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    pub sequence: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Bosd)]
    pub mode: Mode,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Trace CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub trace: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Which sequence of the labels file the trace belongs to.
    #[arg(long, default_value_t = 0)]
    pub seq_id: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Raw recording CSV: `t,ch_1,...,ch_C`, one row per sample.
    pub recording: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Feature sequence CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

/// Single JSON config shared by all commands; every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub seed: Option<u64>,
    pub synthetic: SyntheticConfig,
    pub fit: Option<FitConfig>,
    pub features: BandFeatureConfig,
    /// CDF columns kept at full resolution in traces.
    pub trace_resolution: Option<usize>,
    /// Display names of the states, used to match reference fixtures.
    pub state_names: Option<Vec<String>>,
    /// `sleep_staging` or `ecg`.
    pub reference: Option<String>,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = read_to_string(p)?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Input(format!("{}: {e}", p.display())))
            }
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Underflow { .. } => 1,
        _ => 2,
    }
}

fn read_to_string(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Error::Input(format!("{}: {e}", p.display())))
}

fn io_err(p: &Path, e: impl std::fmt::Display) -> Error {
    Error::Input(format!("{}: {e}", p.display()))
}

fn create(p: &Path) -> Result<BufWriter<File>> {
    File::create(p)
        .map(BufWriter::new)
        .map_err(|e| io_err(p, e))
}

// ---------------------------------------------------------------------------
// file formats

pub fn write_sequence<W: Write>(w: W, observations: &[Vec<f64>]) -> Result<()> {
    let m = observations.first().map_or(0, Vec::len);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|i| format!("y_{i}")));
    let e = |e: csv::Error| Error::Input(format!("writing sequence: {e}"));
    out.write_record(&header).map_err(e)?;
    for (t, y) in observations.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(y.iter().map(f64::to_string));
        out.write_record(&rec).map_err(e)?;
    }
    out.flush()
        .map_err(|err| Error::Input(format!("writing sequence: {err}")))
}

/// Reads a sequence CSV, dropping the `t` column.
pub fn read_sequence(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let width = rdr.headers().map_err(|e| io_err(path, e))?.len();
    if width < 2 {
        return Err(io_err(path, "expected header `t,y_1,...,y_M`"));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let y = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| io_err(path, format!("line {}: {e}", i + 2)))?;
        out.push(y);
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRecord {
    seq_id: usize,
    state: usize,
    start: usize,
    duration: usize,
}

pub fn write_labels<W: Write>(w: W, labels: &[SegmentLabels]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let e = |e: csv::Error| Error::Input(format!("writing labels: {e}"));
    for (seq_id, l) in labels.iter().enumerate() {
        for s in &l.segments {
            out.serialize(LabelRecord {
                seq_id,
                state: s.state,
                start: s.start,
                duration: s.duration,
            })
            .map_err(e)?;
        }
    }
    if labels.iter().all(SegmentLabels::is_empty) {
        out.write_record(["seq_id", "state", "start", "duration"])
            .map_err(e)?;
    }
    out.flush()
        .map_err(|err| Error::Input(format!("writing labels: {err}")))
}

/// Segments per `seq_id`, in file order.
pub fn read_labels(path: &Path) -> Result<BTreeMap<usize, SegmentLabels>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let mut out: BTreeMap<usize, SegmentLabels> = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<LabelRecord>().enumerate() {
        let r = rec.map_err(|e| io_err(path, format!("line {}: {e}", i + 2)))?;
        out.entry(r.seq_id).or_default().segments.push(Segment {
            state: r.state,
            start: r.start,
            duration: r.duration,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// commands

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sample(a) => cmd_sample(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Infer(a) => cmd_infer(&a).map(|e| println!("cumulative log evidence: {e}")),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Features(a) => cmd_features(&a),
    }
}

/// Writes `sequence_<i>.csv`, `labels.csv` and `model.json` into `--out`.
pub fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let config = CliConfig::load(a.config.as_deref())?;
    let params = match &a.model {
        Some(p) => HsmmParams::load(p)?,
        None => config.synthetic.params()?,
    };
    let seed = a.seed.or(config.seed).unwrap_or(0);
    let t_len = a.length.unwrap_or(config.synthetic.t_len);
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let mut labels = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let s = sample(&params, t_len, seed.wrapping_add(i as u64))?;
        let path = a.out.join(format!("sequence_{i:03}.csv"));
        write_sequence(create(&path)?, &s.observations)?;
        labels.push(s.labels);
    }
    let lp = a.out.join("labels.csv");
    write_labels(create(&lp)?, &labels)?;
    params.save(&a.out.join("model.json"))?;
    log::info!(
        "sampled {} sequence(s) of length {t_len} with seed {seed}",
        a.count
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct FitSidecar<'a> {
    counts: &'a crate::learning::SegmentCounts,
    smoothing: f64,
    warnings: &'a [String],
    log_p_labels: f64,
    log_p_observations: f64,
    sequences: usize,
}

fn default_fit_config(sequences: &[LabeledSequence]) -> FitConfig {
    let segs = sequences.iter().flat_map(|s| &s.labels.segments);
    FitConfig {
        k: segs.clone().map(|s| s.state + 1).max().unwrap_or(1),
        d_max: segs.map(|s| s.duration).max().unwrap_or(1),
        smoothing: 1e-3,
        upm: UpmFamily::Gaussian,
        exclude_final_segment: false,
    }
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let config = CliConfig::load(a.config.as_deref())?;
    let mut labels = read_labels(&a.labels)?;
    let mut sequences = Vec::with_capacity(a.sequences.len());
    for (i, p) in a.sequences.iter().enumerate() {
        let observations = read_sequence(p)?;
        let l = labels.remove(&i).ok_or_else(|| {
            Error::Input(format!(
                "{}: no segments with seq_id {i} (for {})",
                a.labels.display(),
                p.display()
            ))
        })?;
        sequences.push(LabeledSequence {
            observations,
            labels: l,
        });
    }
    if let Some(extra) = labels.keys().next() {
        log::warn!("labels for seq_id {extra} and above have no sequence file; ignored");
    }
    let fit = config
        .fit
        .clone()
        .unwrap_or_else(|| default_fit_config(&sequences));
    for (i, s) in sequences.iter().enumerate() {
        s.labels
            .validate(s.observations.len(), fit.k, fit.d_max)
            .map_err(|e| Error::Input(format!("{} (seq_id {i}): {e}", a.labels.display())))?;
    }
    let report = fit_supervised(&sequences, &fit)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let ll = complete_data_loglik(&report.params, &sequences)?;
    report.params.save(&a.out)?;
    let sidecar = FitSidecar {
        counts: &report.counts,
        smoothing: report.smoothing,
        warnings: &report.warnings,
        log_p_labels: ll.log_p_labels,
        log_p_observations: ll.log_p_observations,
        sequences: sequences.len(),
    };
    let path = a.out.with_extension("report.json");
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Input(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

/// Streams the sequence through the filter; returns the cumulative log evidence.
pub fn cmd_infer(a: &InferArgs) -> Result<f64> {
    let config = CliConfig::load(a.config.as_deref())?;
    let params = HsmmParams::load(&a.model)?;
    let observations = read_sequence(&a.sequence)?;
    let resolution = config.trace_resolution.unwrap_or(FULL_RESOLUTION);
    let grid = CdfGrid::new(params.d_max, resolution);
    let out = create(&a.out)?;
    infer_stream(&params, a.mode, &observations, out, grid)
}

/// Filter `observations` and stream the trace to `out`.
pub fn infer_stream<W: Write>(
    params: &HsmmParams,
    mode: Mode,
    observations: &[Vec<f64>],
    out: W,
    grid: CdfGrid,
) -> Result<f64> {
    let mut total = 0.0;
    match mode {
        Mode::Bosd => {
            let mut tw = TraceWriter::new(out, params.k, grid)?;
            let mut filter = BosdFilter::new(params)?;
            for (t, y) in observations.iter().enumerate() {
                let m = filter.step(y)?;
                total += m.log_evidence;
                tw.write(&TraceRow::from_marginals(t + 1, &m, tw.grid()))?;
            }
            tw.finish()?;
        }
        Mode::Bocpd => {
            if params.k != 1 {
                return Err(Error::Input(format!(
                    "bocpd mode needs a single-state model, got k = {}",
                    params.k
                )));
            }
            let hazard = params.hazard(0)?;
            let kernel = ResidualKernel::new(&hazard);
            let mut tw = TraceWriter::new(out, 1, grid)?;
            let mut filter = BocpdFilter::new(&hazard, params.upm[0].clone())?;
            for (t, y) in observations.iter().enumerate() {
                let e = filter.step(y)?;
                total += e;
                let rl = filter.posterior();
                let res = kernel.posterior(rl).probabilities();
                tw.write(&TraceRow::from_run_length(
                    t + 1,
                    e,
                    &rl.probabilities(),
                    &res,
                    tw.grid(),
                ))?;
            }
            tw.finish()?;
        }
    }
    Ok(total)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<MetricsReport> {
    let config = CliConfig::load(a.config.as_deref())?;
    let text = read_to_string(&a.trace)?;
    let k_trace = text.lines().next().map_or(0, |h| {
        h.split(',').filter(|c| c.starts_with("p_state_")).count()
    });
    let summary = read_trace_summary(text.as_bytes()).map_err(|e| io_err(&a.trace, e))?;
    let predicted: Vec<usize> = summary.iter().map(|&(z, _)| z).collect();
    let labels = read_labels(&a.labels)?;
    let l = labels.get(&a.seq_id).ok_or_else(|| {
        Error::Input(format!(
            "{}: no segments with seq_id {}",
            a.labels.display(),
            a.seq_id
        ))
    })?;
    let truth = l.states_per_step();
    let k = k_trace.max(truth.iter().map(|z| z + 1).max().unwrap_or(0));
    let mut report = MetricsReport::compute(&truth, &predicted, k, config.state_names.as_deref())?;
    if let Some(name) = &config.reference {
        let fixture = ReferenceFixture::by_name(name)
            .ok_or_else(|| Error::Input(format!("unknown reference fixture `{name}`")))?;
        report = report.with_reference(&fixture);
    }
    let json =
        serde_json::to_string_pretty(&report).map_err(|e| Error::Input(e.to_string()))? + "\n";
    match &a.out {
        Some(p) => fs::write(p, json).map_err(|e| io_err(p, e))?,
        None => print!("{json}"),
    }
    Ok(report)
}

/// Splits a recording into non-overlapping epochs of `epoch_length`
/// samples (a short tail is dropped) and writes one feature row per epoch.
pub fn cmd_features(a: &FeaturesArgs) -> Result<()> {
    let config = CliConfig::load(a.config.as_deref())?;
    let f = &config.features;
    let samples = read_sequence(&a.recording)?;
    let rows = epoch_features(&samples, f)?;
    write_sequence(create(&a.out)?, &rows)
}

/// `samples[t][channel]` to one feature vector per full epoch.
pub fn epoch_features(samples: &[Vec<f64>], f: &BandFeatureConfig) -> Result<Vec<Vec<f64>>> {
    if f.epoch_length == 0 {
        return Err(Error::Features("epoch_length must be positive".into()));
    }
    let channels = samples.first().map_or(0, Vec::len);
    samples
        .chunks_exact(f.epoch_length)
        .map(|chunk| {
            let epoch: Vec<Vec<f64>> = (0..channels)
                .map(|c| chunk.iter().map(|s| s[c]).collect())
                .collect();
            band_features(&epoch, &f.bands, f.sample_rate, f.log_amplitude)
        })
        .collect()
}
