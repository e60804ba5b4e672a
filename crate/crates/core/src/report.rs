//! Run reports and plot data.
//!
//! A [`RunReport`] is a JSON document holding everything needed to redraw
//! the figures of a run: filter tallies, the PCA summary, and for every
//! analysed path the weight histogram, projection angle, fitted mixture and
//! confidence values. Serialization is deterministic: no timestamps, maps
//! are ordered, floats are printed by shortest round-trip.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discriminate::{
    find_optimal_angle, project_angle, AngleSearch, ConfidenceReport, Hist1D, Hist2D, PoissonMixture,
    ProjectionModel,
};
use crate::error::{Error, Result};
use crate::io::write_table;
use crate::pca::{PcaBasis, WeightPoint};
use crate::preprocess::FilterReport;

/// Bins per axis of the stored weight-plane histogram.
pub const WEIGHT_HIST_BINS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    /// Principal-component weights of full waveforms.
    Pca,
    /// Rising and falling threshold-crossing times.
    Edge,
}

impl PathKind {
    pub fn name(self) -> &'static str {
        match self {
            PathKind::Pca => "pca",
            PathKind::Edge => "edge",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// One discrimination run on one set of feature-plane points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathAnalysis {
    pub path: PathKind,
    pub group: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_bar_label: Option<f64>,
    pub points: usize,
    pub weight_histogram: Hist2D,
    pub projection: ProjectionModel,
    pub mixture: PoissonMixture,
    /// Histogram of projected values the mixture was fitted to.
    pub fit_histogram: Hist1D,
    pub iterations: usize,
    pub unresolved: Vec<(u32, u32)>,
    pub confidence: ConfidenceReport,
    /// Maximum-posterior classification against known labels, per true
    /// photon number. Empty without labels.
    pub accuracy: BTreeMap<u32, Accuracy>,
}

impl PathAnalysis {
    /// Finds the projection angle, fits the mixture and, when labels are
    /// given, scores maximum-posterior classification.
    #[allow(clippy::too_many_arguments)]
    pub fn analyze(
        path: PathKind,
        group: impl Into<String>,
        points: &[WeightPoint],
        labels: Option<&HashMap<u64, u32>>,
        k: usize,
        n_min: u32,
        search: &AngleSearch,
    ) -> Result<Self> {
        let result = find_optimal_angle(points, k, n_min, search)?;
        let weight_histogram = Hist2D::from_points(points, WEIGHT_HIST_BINS, WEIGHT_HIST_BINS)?;
        let mut accuracy = BTreeMap::new();
        if let Some(labels) = labels {
            let values = project_angle(points, result.model.angle);
            for (p, s) in points.iter().zip(values) {
                let Some(&truth) = labels.get(&p.trace_id) else {
                    continue;
                };
                let a: &mut Accuracy = accuracy.entry(truth).or_default();
                a.total += 1;
                if result.fit.mixture.classify(s) == truth {
                    a.correct += 1;
                }
            }
        }
        Ok(Self {
            path,
            group: group.into(),
            n_bar_label: search.n_bar,
            points: points.len(),
            weight_histogram,
            projection: result.model,
            mixture: result.fit.mixture,
            fit_histogram: result.fit.histogram,
            iterations: result.fit.iterations,
            unresolved: result.fit.unresolved,
            confidence: result.confidence,
            accuracy,
        })
    }

    /// Expected counts of the fitted mixture at each fit-histogram bin.
    pub fn model_counts(&self) -> Vec<f64> {
        let w = self.fit_histogram.width();
        self.fit_histogram
            .centers()
            .iter()
            .map(|&c| self.mixture.total * self.mixture.density(c) * w)
            .collect()
    }

    fn stem(&self) -> String {
        let group: String = self
            .group
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
            .collect();
        format!("{}_{}", self.path.name(), group)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub n_components: usize,
    pub trace_len: usize,
    pub training_traces: usize,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaSummary {
    pub fn new(basis: &PcaBasis, training_traces: usize) -> Self {
        Self {
            n_components: basis.n_components(),
            trace_len: basis.trace_len(),
            training_traces,
            explained_variance: basis.explained_variance.clone(),
            explained_variance_ratio: basis.explained_variance_ratio.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFilter {
    pub group: String,
    pub report: FilterReport,
    /// Noise-only records that passed the filter, when labels are known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_accepted: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub filter: Vec<GroupFilter>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaSummary>,
    pub analyses: Vec<PathAnalysis>,
}

impl RunReport {
    pub fn analysis(&self, path: PathKind, group: &str) -> Option<&PathAnalysis> {
        self.analyses.iter().find(|a| a.path == path && a.group == group)
    }

    /// Rejects reports containing non-finite numbers (serialized as `null`;
    /// absent optional fields are omitted instead).
    pub fn validate(&self) -> Result<()> {
        let v = serde_json::to_value(self)?;
        if has_null(&v) {
            return Err(Error::invalid("report contains non-finite numbers"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Combines reports, keeping the first filter/PCA entry per group and
    /// sorting analyses by (group, path).
    pub fn merge(reports: impl IntoIterator<Item = RunReport>) -> Self {
        let mut out = RunReport::default();
        for r in reports {
            for f in r.filter {
                if !out.filter.iter().any(|g| g.group == f.group) {
                    out.filter.push(f);
                }
            }
            if out.pca.is_none() {
                out.pca = r.pca;
            }
            out.analyses.extend(r.analyses);
        }
        out.filter.sort_by(|a, b| a.group.cmp(&b.group));
        out.analyses
            .sort_by(|a, b| a.group.cmp(&b.group).then(a.path.cmp(&b.path)));
        out
    }

    /// Writes `report.json`, per-analysis CSV tables and SVG renderings into
    /// `dir`. Returns the files written.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let path = dir.join("report.json");
        fs::write(&path, self.to_json()?)?;
        written.push(path);
        for a in &self.analyses {
            written.extend(write_plot_data(a, dir)?);
        }
        Ok(written)
    }
}

fn has_null(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Null => true,
        serde_json::Value::Array(a) => a.iter().any(has_null),
        serde_json::Value::Object(o) => o.values().any(has_null),
        _ => false,
    }
}

/// Delimited-text plot data and SVG figures for one analysis.
pub fn write_plot_data(a: &PathAnalysis, dir: &Path) -> Result<Vec<PathBuf>> {
    let stem = a.stem();
    let note = vec![format!("path={} group={}", a.path.name(), a.group)];
    let mut written = Vec::new();

    let model = a.model_counts();
    let rows: Vec<Vec<f64>> = a
        .fit_histogram
        .edges
        .windows(2)
        .zip(&a.fit_histogram.counts)
        .zip(&model)
        .map(|((e, &c), &m)| vec![e[0], e[1], c as f64, m])
        .collect();
    let p = dir.join(format!("{stem}_projected.csv"));
    write_table(fs::File::create(&p)?, &["bin_lo", "bin_hi", "count", "model"], &rows, &note)?;
    written.push(p);

    let h = &a.weight_histogram;
    let mut rows = Vec::new();
    for (i, row) in h.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            rows.push(vec![h.x_edges[i], h.x_edges[i + 1], h.y_edges[j], h.y_edges[j + 1], c as f64]);
        }
    }
    let p = dir.join(format!("{stem}_plane.csv"));
    write_table(fs::File::create(&p)?, &["x_lo", "x_hi", "y_lo", "y_hi", "count"], &rows, &note)?;
    written.push(p);

    let priors = a.mixture.priors();
    let rows: Vec<Vec<f64>> = a
        .confidence
        .per_n
        .iter()
        .zip(&priors)
        .map(|((n, c), p)| vec![*n as f64, *c, *p])
        .collect();
    let p = dir.join(format!("{stem}_confidence.csv"));
    write_table(fs::File::create(&p)?, &["n", "c_n", "prior"], &rows, &note)?;
    written.push(p);

    let p = dir.join(format!("{stem}_projected.svg"));
    fs::write(&p, render_fit_svg(a))?;
    written.push(p);
    let p = dir.join(format!("{stem}_plane.svg"));
    fs::write(&p, render_plane_svg(a))?;
    written.push(p);
    Ok(written)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, x_label: &str, y_label: &str, x_range: (f64, f64), y_range: (f64, f64)) {
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0, MARGIN / 1.5);
    let _ = writeln!(
        s,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{x0}" y="{}" text-anchor="start">{:.4e}</text><text x="{x1}" y="{}" text-anchor="end">{:.4e}</text>"#,
        y0 + 16.0,
        x_range.0,
        y0 + 16.0,
        x_range.1
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 8.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">{} (max {:.4e})</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label),
        y_range.1
    );
}

fn fmt_xy(x: f64, y: f64) -> String {
    format!("{x:.2},{y:.2}")
}

/// Histogram of projected values with the fitted mixture and its
/// components overlaid.
pub fn render_fit_svg(a: &PathAnalysis) -> String {
    let h = &a.fit_histogram;
    let model = a.model_counts();
    let lo = h.edges[0];
    let hi = *h.edges.last().expect("edges");
    let top = h
        .counts
        .iter()
        .map(|&c| c as f64)
        .chain(model.iter().copied())
        .fold(1.0, f64::max);
    let (px0, py0, px1, py1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0, MARGIN / 1.5);
    let sx = |x: f64| px0 + (x - lo) / (hi - lo) * (px1 - px0);
    let sy = |y: f64| py0 - y / top * (py0 - py1);

    let title = format!(
        "{} {}: angle {:.2} deg, n_bar {:.3}",
        a.path.name(),
        a.group,
        a.projection.angle,
        a.mixture.n_bar
    );
    let mut s = svg_open(&title);
    let mut bars = String::from("M");
    for (e, &c) in h.edges.windows(2).zip(&h.counts) {
        let _ = write!(bars, "{} {} ", fmt_xy(sx(e[0]), sy(c as f64)), fmt_xy(sx(e[1]), sy(c as f64)));
    }
    let _ = writeln!(s, r##"<path d="{}" fill="none" stroke="#4a6fa5"/>"##, bars.trim_end());

    let centers = h.centers();
    let w = h.width();
    let priors = a.mixture.priors();
    for (i, p) in priors.iter().enumerate() {
        let pts: Vec<String> = centers
            .iter()
            .map(|&c| fmt_xy(sx(c), sy(a.mixture.total * p * a.mixture.component_pdf(i, c) * w)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#888888" stroke-dasharray="3,3"/>"##,
            pts.join(" ")
        );
    }
    let pts: Vec<String> = centers.iter().zip(&model).map(|(&c, &m)| fmt_xy(sx(c), sy(m))).collect();
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#c0392b" stroke-width="1.5" stroke-dasharray="6,3"/>"##,
        pts.join(" ")
    );
    for (i, m) in a.mixture.means.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
            sx(*m),
            py1 + 10.0,
            a.mixture.photon_number(i)
        );
    }
    axes(&mut s, "projected value", "counts", (lo, hi), (0.0, top));
    s.push_str("</svg>\n");
    s
}

/// Weight-plane histogram as a grey-scale heat map with the projection
/// direction drawn through its centre.
pub fn render_plane_svg(a: &PathAnalysis) -> String {
    let h = &a.weight_histogram;
    let (xlo, xhi) = (h.x_edges[0], *h.x_edges.last().expect("edges"));
    let (ylo, yhi) = (h.y_edges[0], *h.y_edges.last().expect("edges"));
    let top = h.counts.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
    let (px0, py0, px1, py1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0, MARGIN / 1.5);
    let sx = |x: f64| px0 + (x - xlo) / (xhi - xlo) * (px1 - px0);
    let sy = |y: f64| py0 - (y - ylo) / (yhi - ylo) * (py0 - py1);

    let (xl, yl) = match a.path {
        PathKind::Pca => ("w1", "w2"),
        PathKind::Edge => ("t_rise (s)", "t_fall (s)"),
    };
    let mut s = svg_open(&format!("{} {}: {} points", a.path.name(), a.group, a.points));
    for (i, row) in h.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let shade = 230.0 - 230.0 * (c as f64).ln_1p() / top.ln_1p();
            let g = shade.round() as u8;
            let (x0, x1) = (sx(h.x_edges[i]), sx(h.x_edges[i + 1]));
            let (y0, y1) = (sy(h.y_edges[j + 1]), sy(h.y_edges[j]));
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({g},{g},{g})"/>"#,
                x0,
                y0,
                x1 - x0,
                y1 - y0
            );
        }
    }
    // Projection axis in data coordinates, scaled to the plot box.
    let (cx, cy) = ((xlo + xhi) / 2.0, (ylo + yhi) / 2.0);
    let (sin, cos) = a.projection.angle.to_radians().sin_cos();
    let (dx, dy) = (cos * (xhi - xlo) / 2.0, sin * (yhi - ylo) / 2.0);
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#c0392b" stroke-dasharray="6,3"/>"##,
        sx(cx - dx),
        sy(cy - dy),
        sx(cx + dx),
        sy(cy + dy)
    );
    axes(&mut s, xl, yl, (xlo, xhi), (ylo, yhi));
    s.push_str("</svg>\n");
    s
}
