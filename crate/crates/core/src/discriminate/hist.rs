use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pca::WeightPoint;

/// Fewest bins a fitting histogram may have.
pub const MIN_FIT_BINS: usize = 60;
/// Most bins a fitting histogram may have.
pub const MAX_FIT_BINS: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hist1D {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Hist1D {
    /// Uniform bins over `[lo, hi]`; the upper edge is inclusive.
    pub fn uniform(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let edges = uniform_edges(lo, hi, bins);
        let mut counts = vec![0u64; bins];
        for &v in values {
            if let Some(b) = bin_index(v, lo, hi, bins) {
                counts[b] += 1;
            }
        }
        Self { edges, counts }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub(crate) fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let w = (hi - lo) / bins as f64;
    (0..=bins)
        .map(|i| if i == bins { hi } else { lo + i as f64 * w })
        .collect()
}

fn bin_index(v: f64, lo: f64, hi: f64, bins: usize) -> Option<usize> {
    if !(v >= lo && v <= hi) {
        return None;
    }
    let b = ((v - lo) / (hi - lo) * bins as f64).floor() as usize;
    Some(b.min(bins - 1))
}

/// Quantile by linear interpolation between order statistics.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Bin count from the Freedman–Diaconis width, clamped to
/// `[MIN_FIT_BINS, MAX_FIT_BINS]` across the data range.
pub fn freedman_diaconis_bins(sorted: &[f64]) -> usize {
    let n = sorted.len();
    let range = sorted[n - 1] - sorted[0];
    if !(range > 0.0) || n < 2 {
        return MIN_FIT_BINS;
    }
    let iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
    let width = 2.0 * iqr / (n as f64).cbrt();
    if !(width > 0.0) {
        return MIN_FIT_BINS;
    }
    ((range / width).ceil() as usize).clamp(MIN_FIT_BINS, MAX_FIT_BINS)
}

/// Two-dimensional histogram of feature-plane points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hist2D {
    pub x_edges: Vec<f64>,
    pub y_edges: Vec<f64>,
    /// `counts[i][j]` counts points in x-bin `i`, y-bin `j`.
    pub counts: Vec<Vec<u64>>,
}

impl Hist2D {
    pub fn from_points(points: &[WeightPoint], bins_x: usize, bins_y: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("no points to histogram"));
        }
        if bins_x == 0 || bins_y == 0 {
            return Err(Error::invalid("histogram needs at least one bin per axis"));
        }
        let (xlo, xhi) = span(points.iter().map(|p| p.w1));
        let (ylo, yhi) = span(points.iter().map(|p| p.w2));
        let mut counts = vec![vec![0u64; bins_y]; bins_x];
        for p in points {
            let i = bin_index(p.w1, xlo, xhi, bins_x).expect("within span");
            let j = bin_index(p.w2, ylo, yhi, bins_y).expect("within span");
            counts[i][j] += 1;
        }
        Ok(Self {
            x_edges: uniform_edges(xlo, xhi, bins_x),
            y_edges: uniform_edges(ylo, yhi, bins_y),
            counts,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 0.5 } else { 0.5 * lo.abs() };
        (lo - pad, hi + pad)
    }
}
