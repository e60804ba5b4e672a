//! End-to-end run on synthetic records: filter, PCA and edge extraction,
//! then discrimination on both feature planes.
//!
//! Records are generated, filtered and reduced one at a time, so memory
//! holds only the training subset and the per-record feature points.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::discriminate::AngleSearch;
use crate::edge::{extract_edges_at, median, EdgePair, ThresholdMode, ThresholdPolicy};
use crate::error::{Error, Result};
use crate::pca::{fit_pca_rows, project, PcaBasis, WeightPoint};
use crate::preprocess::{FilterPolicy, TraceFilter};
use crate::report::{GroupFilter, PathAnalysis, PathKind, PcaSummary, RunReport};
use crate::waveform::{poisson_pmf_unchecked, SyntheticConfig, SyntheticSource, Trace};

/// Tail mass of the Poisson prior (given at least one photon) left out of
/// an automatically sized mixture.
pub const AUTO_TAIL_MASS: f64 = 1e-3;

/// Smallest component count `K` for which photon numbers above
/// `n_min + K − 1` carry less than [`AUTO_TAIL_MASS`] of the prior over
/// `n ≥ n_min`. At least 2.
pub fn auto_components(n_bar: f64, n_min: u32) -> usize {
    let below: f64 = (0..n_min as u64).map(|n| poisson_pmf_unchecked(n, n_bar)).sum();
    let mass = 1.0 - below;
    let mut covered = 0.0;
    let mut k = 0;
    while k < 64 {
        covered += poisson_pmf_unchecked(n_min as u64 + k as u64, n_bar);
        k += 1;
        if k >= 2 && (mass - covered) / mass < AUTO_TAIL_MASS {
            break;
        }
    }
    k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub n_bar: f64,
    pub count: usize,
    pub seed: u64,
}

impl GroupSpec {
    pub fn name(&self) -> String {
        format!("nbar{}", self.n_bar)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Pulse model; `n_bar` and `rng_seed` are taken from each group.
    pub oracle: SyntheticConfig,
    pub groups: Vec<GroupSpec>,
    pub filter: FilterPolicy,
    /// Accepted records per group used to fit the PCA basis.
    pub training_per_group: usize,
    pub pca_components: usize,
    /// Mixture components; chosen per group by [`auto_components`] when absent.
    pub mixture_components: Option<usize>,
    pub angle_step: f64,
    pub bins: Option<usize>,
    pub threshold: ThresholdPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            oracle: SyntheticConfig::default(),
            groups: vec![
                GroupSpec {
                    n_bar: 1.5,
                    count: 50_000,
                    seed: 1,
                },
                GroupSpec {
                    n_bar: 3.5,
                    count: 50_000,
                    seed: 2,
                },
            ],
            filter: FilterPolicy::default(),
            training_per_group: 500,
            pca_components: 2,
            mixture_components: None,
            angle_step: 0.5,
            bins: None,
            threshold: ThresholdPolicy {
                mode: ThresholdMode::FractionOfMedianPeak,
                value: 0.5,
                timing_resolution: 1.5e-12,
            },
        }
    }
}

/// Feature points and labels of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupData {
    pub spec: GroupSpec,
    pub filter: GroupFilter,
    /// Records generated per true photon number.
    pub true_counts: BTreeMap<u32, usize>,
    pub pca_points: Vec<WeightPoint>,
    pub edges: Vec<EdgePair>,
    /// Accepted records without a usable threshold crossing.
    pub edges_dropped: usize,
    /// True photon number of every accepted record, by record id.
    pub labels: HashMap<u64, u32>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: RunReport,
    pub basis: PcaBasis,
    /// Edge threshold applied to every group, volts.
    pub threshold: f64,
    pub groups: Vec<GroupData>,
}

fn sources(cfg: &PipelineConfig) -> Result<Vec<SyntheticSource>> {
    cfg.groups
        .iter()
        .map(|g| {
            SyntheticSource::new(SyntheticConfig {
                n_bar: g.n_bar,
                rng_seed: g.seed,
                ..cfg.oracle.clone()
            })
        })
        .collect()
}

/// First `training_per_group` accepted records of each group.
fn training_set(cfg: &PipelineConfig, sources: &[SyntheticSource]) -> Result<Vec<Trace>> {
    let mut out = Vec::new();
    for (g, src) in cfg.groups.iter().zip(sources) {
        let mut filter = TraceFilter::new(cfg.filter.clone());
        let mut kept = 0;
        for id in 0..g.count as u64 {
            if kept == cfg.training_per_group {
                break;
            }
            if let (_, Some(w)) = filter.process(&src.record(id).trace)? {
                out.push(w);
                kept += 1;
            }
        }
    }
    Ok(out)
}

/// Runs both analysis paths on every group of synthetic records.
pub fn run_synthetic(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    if cfg.groups.is_empty() {
        return Err(Error::invalid("no record groups configured"));
    }
    cfg.threshold.validate()?;
    cfg.filter.validate(cfg.oracle.n_samples)?;
    let sources = sources(cfg)?;

    let training = training_set(cfg, &sources)?;
    if training.is_empty() {
        return Err(Error::EmptyResult("no record passed the filter".into()));
    }
    let rows: Vec<&[f32]> = training.iter().map(Trace::samples).collect();
    let basis = fit_pca_rows(&rows, cfg.pca_components.max(2))?;
    let mut peaks: Vec<f64> = training.iter().map(Trace::peak).collect();
    let threshold = cfg.threshold.volts(median(&mut peaks).expect("training set is non-empty"));
    let training_len = training.len();
    drop(training);

    let mut groups = Vec::with_capacity(cfg.groups.len());
    for (spec, src) in cfg.groups.iter().zip(&sources) {
        groups.push(reduce_group(cfg, spec, src, &basis, threshold)?);
    }

    let mut report = RunReport {
        filter: groups.iter().map(|g| g.filter.clone()).collect(),
        pca: Some(PcaSummary::new(&basis, training_len)),
        analyses: Vec::new(),
    };
    for g in &groups {
        let k = cfg
            .mixture_components
            .unwrap_or_else(|| auto_components(g.spec.n_bar, 1));
        let search = AngleSearch {
            step: cfg.angle_step,
            n_bar: Some(g.spec.n_bar),
            bins: cfg.bins,
        };
        let name = g.spec.name();
        report.analyses.push(PathAnalysis::analyze(
            PathKind::Pca,
            &name,
            &g.pca_points,
            Some(&g.labels),
            k,
            1,
            &search,
        )?);
        let edge_points: Vec<WeightPoint> = g.edges.iter().map(|e| e.to_point()).collect();
        report.analyses.push(PathAnalysis::analyze(
            PathKind::Edge,
            &name,
            &edge_points,
            Some(&g.labels),
            k,
            1,
            &search,
        )?);
    }
    Ok(PipelineOutput {
        report,
        basis,
        threshold,
        groups,
    })
}

fn reduce_group(
    cfg: &PipelineConfig,
    spec: &GroupSpec,
    src: &SyntheticSource,
    basis: &PcaBasis,
    threshold: f64,
) -> Result<GroupData> {
    let mut filter = TraceFilter::new(cfg.filter.clone());
    let mut true_counts = BTreeMap::new();
    let mut pca_points = Vec::new();
    let mut edges = Vec::new();
    let mut edges_dropped = 0;
    let mut labels = HashMap::new();
    let mut zero_accepted = 0;
    for id in 0..spec.count as u64 {
        let rec = src.record(id);
        *true_counts.entry(rec.true_n).or_insert(0) += 1;
        let (_, windowed) = filter.process(&rec.trace)?;
        let Some(w) = windowed else { continue };
        if rec.true_n == 0 {
            zero_accepted += 1;
        }
        labels.insert(id, rec.true_n);
        pca_points.push(project(basis, &w)?);
        match extract_edges_at(&w, threshold, cfg.threshold.timing_resolution) {
            Ok(e) => edges.push(e),
            Err(Error::NoCrossing { .. }) => edges_dropped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(GroupData {
        spec: spec.clone(),
        filter: GroupFilter {
            group: spec.name(),
            report: filter.report(),
            zero_accepted: Some(zero_accepted),
        },
        true_counts,
        pca_points,
        edges,
        edges_dropped,
        labels,
    })
}
