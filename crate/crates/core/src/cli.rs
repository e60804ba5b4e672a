//! The `pnr` command line. Every subcommand reads and writes files only;
//! nothing is seeded from the clock.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::calibrate::calibrate_nbar;
use crate::discriminate::AngleSearch;
use crate::edge::{extract_edges_at, median, threshold_sweep, EdgePair, ThresholdMode, ThresholdPolicy};
use crate::error::{Error, Result};
use crate::io::{
    read_labels, read_point_table, read_waveform_file, write_edge_table, write_labels, write_point_table, write_table,
    WaveformReader, WaveformWriter,
};
use crate::pca::{fit_pca_rows, project, PcaBasis, WeightPoint};
use crate::pipeline::auto_components;
use crate::preprocess::{FilterPolicy, TraceFilter};
use crate::report::{GroupFilter, PathAnalysis, PathKind, PcaSummary, RunReport};
use crate::waveform::{Source, SyntheticConfig, SyntheticSource, Trace};

#[derive(Debug, Parser)]
#[command(name = "pnr", version, about = "Photon-number resolution from detector waveforms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate labelled synthetic records.
    Simulate(SimulateArgs),
    /// Reject invalid records and window the rest.
    Filter(FilterArgs),
    /// Fit a PCA basis and project records onto it.
    Pca(PcaArgs),
    /// Find the projection angle and fit the photon-number mixture.
    Discriminate(DiscriminateArgs),
    /// Extract threshold-crossing times, or sweep the threshold.
    Edges(EdgesArgs),
    /// Merge reports and write plot data.
    Report(ReportArgs),
    /// Mean photon number from count and repetition rates.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Args)]
pub struct OutputDir {
    #[arg(long, default_value = ".")]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.5)]
    pub nbar: f64,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    /// Samples per record.
    #[arg(long, default_value_t = 30_000)]
    pub samples: usize,
    #[command(flatten)]
    pub out: OutputDir,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    pub input: PathBuf,
    /// Analysis window length, samples.
    #[arg(long, default_value_t = 19_000)]
    pub window: usize,
    #[arg(long, default_value_t = 0)]
    pub window_offset: usize,
    /// Leading samples used for the baseline estimate.
    #[arg(long, default_value_t = 1000)]
    pub baseline: usize,
    /// Labels of the input records; the kept ones are written alongside.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputDir,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub components: usize,
    /// Records, taken in input order, used to fit the basis.
    #[arg(long, default_value_t = 1000)]
    pub training: usize,
    #[command(flatten)]
    pub out: OutputDir,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PathArg {
    Pca,
    Edge,
}

impl From<PathArg> for PathKind {
    fn from(p: PathArg) -> Self {
        match p {
            PathArg::Pca => PathKind::Pca,
            PathArg::Edge => PathKind::Edge,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Mixture components; sized from --nbar when absent.
    #[arg(long)]
    pub components: Option<usize>,
    /// Poisson mean held while scoring angles.
    #[arg(long)]
    pub nbar: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub n_min: u32,
    #[arg(long, default_value_t = 0.5)]
    pub angle_step: f64,
    #[arg(long)]
    pub bins: Option<usize>,
}

impl FitArgs {
    fn components(&self) -> Result<usize> {
        match (self.components, self.nbar) {
            (Some(k), _) => Ok(k),
            (None, Some(n)) if n > 0.0 => Ok(auto_components(n, self.n_min)),
            (None, Some(n)) => Err(Error::invalid(format!("--nbar must be positive, got {n}"))),
            (None, None) => Err(Error::invalid("give --components or --nbar")),
        }
    }

    fn search(&self) -> AngleSearch {
        AngleSearch {
            step: self.angle_step,
            n_bar: self.nbar,
            bins: self.bins,
        }
    }
}

#[derive(Debug, Args)]
pub struct DiscriminateArgs {
    /// Point table from `pca` or `edges`.
    pub points: PathBuf,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_enum, default_value = "pca")]
    pub path: PathArg,
    /// Report group name; defaults to the input file stem.
    #[arg(long)]
    pub group: Option<String>,
    /// True photon numbers, for classification accuracy.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputDir,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Absolute,
    Fraction,
}

#[derive(Debug, Args)]
pub struct EdgesArgs {
    pub input: PathBuf,
    /// Volts, or a fraction of the median peak.
    #[arg(long, default_value_t = 0.5, conflicts_with = "sweep")]
    pub threshold: f64,
    #[arg(long, value_enum, default_value = "fraction", conflicts_with = "sweep")]
    pub threshold_mode: ModeArg,
    /// Crossing times are rounded to this, seconds.
    #[arg(long, default_value_t = 1.5e-12)]
    pub timing_resolution: f64,
    /// Sweep absolute thresholds `FROM:TO:STEPS` and score each.
    #[arg(long, value_parser = parse_sweep)]
    pub sweep: Option<(f64, f64, usize)>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub out: OutputDir,
}

fn parse_sweep(s: &str) -> std::result::Result<(f64, f64, usize), String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [from, to, steps] = parts[..] else {
        return Err("expected FROM:TO:STEPS".into());
    };
    let from: f64 = from.parse().map_err(|e| format!("FROM: {e}"))?;
    let to: f64 = to.parse().map_err(|e| format!("TO: {e}"))?;
    let steps: usize = steps.parse().map_err(|e| format!("STEPS: {e}"))?;
    if steps < 1 || !(to >= from) {
        return Err("need FROM <= TO and STEPS >= 1".into());
    }
    Ok((from, to, steps))
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Reports written by `discriminate` (or earlier `report` runs).
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Filter summaries written by `filter`.
    #[arg(long = "filter-report")]
    pub filter_reports: Vec<PathBuf>,
    /// Basis written by `pca`, summarized in the report.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputDir,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Detected events per second.
    #[arg(long)]
    pub count_rate: f64,
    /// Laser repetition rate, per second.
    #[arg(long)]
    pub rep_rate: f64,
}

/// Basis as written by `pca`, with the training size for the report.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct BasisFile {
    training_traces: usize,
    basis: PcaBasis,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Filter(a) => filter(&a),
        Command::Pca(a) => pca(&a),
        Command::Discriminate(a) => discriminate(&a),
        Command::Edges(a) => edges(&a),
        Command::Report(a) => report(&a),
        Command::Calibrate(a) => {
            println!("{}", calibrate_nbar(a.count_rate, a.rep_rate)?);
            Ok(())
        }
    }
}

fn out_dir(o: &OutputDir) -> Result<&Path> {
    fs::create_dir_all(&o.output_dir)?;
    Ok(&o.output_dir)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    if a.count == 0 {
        return Err(Error::invalid("--count must be at least 1"));
    }
    let src = SyntheticSource::new(SyntheticConfig {
        n_bar: a.nbar,
        rng_seed: a.seed,
        n_samples: a.samples,
        ..Default::default()
    })?;
    let dir = out_dir(&a.out)?;
    let cfg = src.config();
    let mut w = WaveformWriter::create(dir.join("traces.pnrw"), cfg.sample_period, cfg.n_samples, Some(a.nbar))?;
    let mut labels = Vec::with_capacity(a.count);
    let mut floored = 0;
    for id in 0..a.count as u64 {
        let rec = src.record(id);
        w.write_trace(&rec.trace)?;
        labels.push((id, rec.true_n));
        floored += rec.amplitude_floored as usize;
    }
    w.finish()?;
    let mut notes = vec![format!("seed={} nbar={}", a.seed, a.nbar)];
    if floored > 0 {
        notes.push(format!("amplitude floor engaged in {floored} records"));
    }
    write_labels(File::create(dir.join("labels.csv"))?, &labels, &notes)?;
    fs::write(dir.join("oracle.json"), serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(())
}

fn filter(a: &FilterArgs) -> Result<()> {
    let mut reader = WaveformReader::open(&a.input)?;
    let header = reader.header().clone();
    let policy = FilterPolicy {
        window_offset: a.window_offset,
        window_length: a.window,
        baseline_region: 0..a.baseline,
        ..Default::default()
    };
    policy.validate(header.samples_per_trace as usize)?;
    let labels: Option<HashMap<u64, u32>> = match &a.labels {
        Some(p) => Some(read_labels(BufReader::new(File::open(p)?))?.into_iter().collect()),
        None => None,
    };
    let dir = out_dir(&a.out)?;
    let mut w = WaveformWriter::create(dir.join("filtered.pnrw"), header.sample_period(), a.window, header.label)?;
    let mut f = TraceFilter::new(policy);
    let mut kept_labels = Vec::new();
    let mut zero_accepted = 0;
    let mut kept = 0u64;
    while let Some(t) = reader.next_trace()? {
        let (_, windowed) = f.process(&t)?;
        let Some(win) = windowed else { continue };
        w.write_trace(&win)?;
        if let Some(l) = &labels {
            let n = *l
                .get(&t.id())
                .ok_or_else(|| Error::invalid(format!("no label for record {}", t.id())))?;
            zero_accepted += (n == 0) as usize;
            kept_labels.push((kept, n));
        }
        kept += 1;
    }
    reader.finish()?;
    w.finish()?;
    if labels.is_some() {
        write_labels(File::create(dir.join("labels.csv"))?, &kept_labels, &[])?;
    }
    let summary = GroupFilter {
        group: header.label.map_or_else(|| stem(&a.input), |n| format!("nbar{n}")),
        report: f.report(),
        zero_accepted: labels.is_some().then_some(zero_accepted),
    };
    fs::write(dir.join("filter_report.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    if kept == 0 {
        return Err(Error::EmptyResult("no record passed the filter".into()));
    }
    Ok(())
}

fn pca(a: &PcaArgs) -> Result<()> {
    if a.training == 0 {
        return Err(Error::invalid("--training must be at least 1"));
    }
    let mut training: Vec<Trace> = Vec::new();
    'files: for p in &a.inputs {
        let mut r = WaveformReader::open(p)?;
        while let Some(t) = r.next_trace()? {
            if training.len() == a.training {
                break 'files;
            }
            training.push(t);
        }
    }
    let rows: Vec<&[f32]> = training.iter().map(Trace::samples).collect();
    let basis = fit_pca_rows(&rows, a.components.max(2))?;
    let training_traces = training.len();
    drop(training);

    let dir = out_dir(&a.out)?;
    for p in &a.inputs {
        let mut r = WaveformReader::open(p)?;
        let mut points: Vec<WeightPoint> = Vec::new();
        while let Some(t) = r.next_trace()? {
            points.push(project(&basis, &t)?);
        }
        r.finish()?;
        let out = BufWriter::new(File::create(dir.join(format!("{}_weights.csv", stem(p))))?);
        write_point_table(out, &points, ["trace_id", "w1", "w2"], &[format!("source={}", p.display())])?;
    }
    let file = BasisFile {
        training_traces,
        basis,
    };
    fs::write(dir.join("pca_basis.json"), serde_json::to_string(&file)? + "\n")?;
    Ok(())
}

fn read_points(path: &Path) -> Result<Vec<WeightPoint>> {
    read_point_table(BufReader::new(File::open(path)?))
}

fn discriminate(a: &DiscriminateArgs) -> Result<()> {
    let k = a.fit.components()?;
    let points = read_points(&a.points)?;
    let labels: Option<HashMap<u64, u32>> = match &a.labels {
        Some(p) => Some(read_labels(BufReader::new(File::open(p)?))?.into_iter().collect()),
        None => None,
    };
    let group = a.group.clone().unwrap_or_else(|| match a.fit.nbar {
        Some(n) => format!("nbar{n}"),
        None => stem(&a.points),
    });
    let analysis = PathAnalysis::analyze(
        a.path.into(),
        group,
        &points,
        labels.as_ref(),
        k,
        a.fit.n_min,
        &a.fit.search(),
    )?;
    let report = RunReport {
        analyses: vec![analysis],
        ..Default::default()
    };
    let dir = out_dir(&a.out)?;
    fs::write(dir.join("report.json"), report.to_json()?)?;
    Ok(())
}

fn policy(a: &EdgesArgs) -> ThresholdPolicy {
    ThresholdPolicy {
        mode: match a.threshold_mode {
            ModeArg::Absolute => ThresholdMode::AbsoluteVolts,
            ModeArg::Fraction => ThresholdMode::FractionOfMedianPeak,
        },
        value: a.threshold,
        timing_resolution: a.timing_resolution,
    }
}

fn edges(a: &EdgesArgs) -> Result<()> {
    let policy = policy(a);
    policy.validate()?;
    if let Some((from, to, steps)) = a.sweep {
        let k = a.fit.components()?;
        let set = read_waveform_file(&a.input, Source::Measured)?;
        let thresholds: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    from
                } else {
                    from + (to - from) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let rows = threshold_sweep(&set, &thresholds, a.timing_resolution, k, a.fit.n_min, &a.fit.search())?;
        let table: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| vec![r.threshold, r.score, r.angle, r.points as f64])
            .collect();
        let dir = out_dir(&a.out)?;
        let out = BufWriter::new(File::create(dir.join("sweep.csv"))?);
        return write_table(out, &["threshold", "score", "angle", "points"], &table, &[]);
    }

    // The fraction mode needs the median peak first, so read twice rather
    // than hold every record.
    let threshold = match policy.mode {
        ThresholdMode::AbsoluteVolts => policy.value,
        ThresholdMode::FractionOfMedianPeak => {
            let mut r = WaveformReader::open(&a.input)?;
            let mut peaks = Vec::new();
            while let Some(t) = r.next_trace()? {
                peaks.push(t.peak());
            }
            r.finish()?;
            let m = median(&mut peaks).ok_or_else(|| Error::EmptyResult("waveform file holds no traces".into()))?;
            policy.volts(m)
        }
    };
    let mut r = WaveformReader::open(&a.input)?;
    let mut edges: Vec<EdgePair> = Vec::new();
    let mut dropped = 0;
    while let Some(t) = r.next_trace()? {
        match extract_edges_at(&t, threshold, a.timing_resolution) {
            Ok(e) => edges.push(e),
            Err(Error::NoCrossing { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    r.finish()?;
    let dir = out_dir(&a.out)?;
    let notes = vec![format!("threshold_volts={threshold} dropped={dropped}")];
    write_edge_table(BufWriter::new(File::create(dir.join("edges.csv"))?), &edges, &notes)?;
    if edges.is_empty() {
        return Err(Error::EmptyResult("no record crossed the threshold".into()));
    }
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let mut parts = Vec::new();
    for p in &a.reports {
        parts.push(RunReport::from_json(&fs::read_to_string(p)?)?);
    }
    let mut extra = RunReport::default();
    for p in &a.filter_reports {
        extra.filter.push(serde_json::from_str(&fs::read_to_string(p)?)?);
    }
    if let Some(p) = &a.basis {
        let file: BasisFile = serde_json::from_str(&fs::read_to_string(p)?)?;
        extra.pca = Some(PcaSummary::new(&file.basis, file.training_traces));
    }
    parts.push(extra);
    let merged = RunReport::merge(parts);
    merged.write_all(out_dir(&a.out)?)?;
    Ok(())
}
