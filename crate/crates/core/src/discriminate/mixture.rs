//! Gaussian mixture with amplitudes tied to a truncated Poisson law, fitted to
//! a histogram by damped nonlinear least squares.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::hist::{freedman_diaconis_bins, quantile, Hist1D};
use crate::error::{Error, Result};
use crate::waveform::ln_factorial;

/// Consecutive components closer than this many summed sigmas are flagged
/// as unresolved.
pub const RESOLVE_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonMixture {
    pub n_bar: f64,
    /// Photon number of the first component.
    pub n_min: u32,
    pub means: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// Expected counts per component, `A · prior(n)`.
    pub amplitudes: Vec<f64>,
    /// Total count scale `A`.
    pub total: f64,
    /// Reduced chi-square of the fit; zero for hand-built mixtures.
    pub fit_residual: f64,
}

impl PoissonMixture {
    /// Builds a mixture and derives its amplitudes from `(total, n_bar, n_min, K)`.
    pub fn new(n_bar: f64, n_min: u32, means: Vec<f64>, sigmas: Vec<f64>, total: f64) -> Result<Self> {
        if means.is_empty() || means.len() != sigmas.len() {
            return Err(Error::invalid("means and sigmas must be non-empty and equally long"));
        }
        if !(n_bar > 0.0 && n_bar.is_finite()) {
            return Err(Error::invalid(format!("n_bar must be positive, got {n_bar}")));
        }
        if sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("component sigmas must be positive"));
        }
        if means.iter().any(|m| !m.is_finite()) || !(total > 0.0 && total.is_finite()) {
            return Err(Error::invalid("means and total must be finite, total positive"));
        }
        let priors = truncated_poisson(n_bar, n_min, means.len());
        let amplitudes = priors.iter().map(|p| total * p).collect();
        Ok(Self {
            n_bar,
            n_min,
            means,
            sigmas,
            amplitudes,
            total,
            fit_residual: 0.0,
        })
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn photon_number(&self, component: usize) -> u32 {
        self.n_min + component as u32
    }

    pub fn photon_numbers(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.k()).map(|i| self.photon_number(i))
    }

    /// Poisson prior renormalized over the modeled photon numbers.
    pub fn priors(&self) -> Vec<f64> {
        truncated_poisson(self.n_bar, self.n_min, self.k())
    }

    /// `p(s | n)` for component `i`.
    pub fn component_pdf(&self, i: usize, s: f64) -> f64 {
        log_normal_pdf(s, self.means[i], self.sigmas[i]).exp()
    }

    /// `p(s) = Σ p(s|n) p(n)`.
    pub fn density(&self, s: f64) -> f64 {
        self.priors()
            .iter()
            .enumerate()
            .map(|(i, p)| p * self.component_pdf(i, s))
            .sum()
    }

    /// Posterior `p(n | s)` over the components.
    pub fn posterior(&self, s: f64) -> Vec<f64> {
        let log_priors: Vec<f64> = self.priors().iter().map(|p| p.ln()).collect();
        posterior_from_logs(&log_priors, &self.means, &self.sigmas, s)
    }

    /// Photon number with the largest posterior at `s`.
    pub fn classify(&self, s: f64) -> u32 {
        let post = self.posterior(s);
        let mut best = 0;
        for (i, p) in post.iter().enumerate() {
            if *p > post[best] {
                best = i;
            }
        }
        self.photon_number(best)
    }

    /// Photon-number pairs `(n, n+1)` whose components overlap.
    pub fn unresolved_pairs(&self) -> Vec<(u32, u32)> {
        (0..self.k().saturating_sub(1))
            .filter(|&i| {
                let gap = (self.means[i + 1] - self.means[i]).abs();
                gap < RESOLVE_FACTOR * (self.sigmas[i] + self.sigmas[i + 1])
            })
            .map(|i| (self.photon_number(i), self.photon_number(i + 1)))
            .collect()
    }
}

pub(crate) fn log_normal_pdf(s: f64, mean: f64, sigma: f64) -> f64 {
    let u = (s - mean) / sigma;
    -0.5 * u * u - sigma.ln() - 0.5 * (2.0 * PI).ln()
}

pub(crate) fn posterior_from_logs(log_priors: &[f64], means: &[f64], sigmas: &[f64], s: f64) -> Vec<f64> {
    let logs: Vec<f64> = log_priors
        .iter()
        .zip(means.iter().zip(sigmas))
        .map(|(lp, (m, sg))| lp + log_normal_pdf(s, *m, *sg))
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Poisson pmf over `n_min..n_min+k`, renormalized to sum to one.
pub fn truncated_poisson(n_bar: f64, n_min: u32, k: usize) -> Vec<f64> {
    let logs: Vec<f64> = (0..k)
        .map(|i| {
            let n = (n_min as u64) + i as u64;
            n as f64 * n_bar.ln() - n_bar - ln_factorial(n)
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Optional starting values for [`fit_mixture`]. Values are in data units.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixtureInit {
    pub n_bar: Option<f64>,
    /// Hold `n_bar` at its initial value instead of fitting it.
    pub fix_n_bar: bool,
    /// One mean per component, ordered by photon number.
    pub means: Option<Vec<f64>>,
    pub sigmas: Option<Vec<f64>>,
    /// Override the Freedman–Diaconis bin count.
    pub bins: Option<usize>,
    pub max_iterations: Option<usize>,
}

/// Result of [`fit_mixture`]: the mixture plus what it was fitted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub mixture: PoissonMixture,
    pub histogram: Hist1D,
    pub iterations: usize,
    pub unresolved: Vec<(u32, u32)>,
}

const DEFAULT_MAX_ITERATIONS: usize = 500;
const PROBE_ITERATIONS: usize = 40;

/// Fits `k` Poisson-tied Gaussian components to the histogram of `values`.
///
/// Values are standardized (median, standard deviation) before binning so
/// the fit is equivariant under affine rescaling of the input.
pub fn fit_mixture(values: &[f64], k: usize, n_min: u32, init: &MixtureInit) -> Result<MixtureFit> {
    if k == 0 {
        return Err(Error::invalid("component count must be at least 1"));
    }
    if values.len() < 10 * k {
        return Err(Error::InsufficientData {
            needed: 10 * k,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("values must be finite"));
    }
    if let Some(m) = &init.means {
        if m.len() != k {
            return Err(Error::invalid("initial means must have one entry per component"));
        }
    }
    if let Some(s) = &init.sigmas {
        if s.len() != k {
            return Err(Error::invalid("initial sigmas must have one entry per component"));
        }
    }

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let center = quantile(&sorted, 0.5);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let scale = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(scale > 0.0) || !(scale > 1e-14 * center.abs()) {
        return Err(Error::DegenerateData("values have zero spread".into()));
    }
    let z_sorted: Vec<f64> = sorted.iter().map(|v| (v - center) / scale).collect();
    let bins = init.bins.unwrap_or_else(|| freedman_diaconis_bins(&z_sorted));
    if bins < 2 {
        return Err(Error::invalid("need at least two bins"));
    }
    let (lo, hi) = (z_sorted[0], z_sorted[z_sorted.len() - 1]);
    let hist = Hist1D::uniform(&z_sorted, lo, hi, bins);

    let to_z = |v: f64| (v - center) / scale;
    let z_init = MixtureInit {
        n_bar: init.n_bar,
        fix_n_bar: init.fix_n_bar,
        means: init.means.as_ref().map(|m| m.iter().map(|&v| to_z(v)).collect()),
        sigmas: init.sigmas.as_ref().map(|s| s.iter().map(|v| v / scale).collect()),
        bins: None,
        max_iterations: init.max_iterations,
    };

    let orientations: Vec<f64> = match &z_init.means {
        Some(m) if k > 1 => vec![if m[k - 1] >= m[0] { 1.0 } else { -1.0 }],
        _ if k == 1 => vec![1.0],
        _ => vec![1.0, -1.0],
    };
    let problem = Problem::new(&hist, k, n_min, &z_init);
    let held = Problem {
        fix_n_bar: true,
        ..Problem::new(&hist, k, n_min, &z_init)
    };
    // Every start gets a short probe; only the best one runs to convergence.
    let probe = PROBE_ITERATIONS.min(problem.max_iterations);
    let mut best: Option<Solution> = None;
    let consider = |sol: Solution, best: &mut Option<Solution>| {
        if best.as_ref().map_or(true, |b| sol.chi2 < b.chi2) {
            *best = Some(sol);
        }
    };
    for &o in &orientations {
        let peaks = initial_guess(&hist, k, n_min, o, &z_init);
        let mut starts = vec![peaks.clone()];
        if z_init.means.is_none() && k > 1 {
            starts.push(quantile_guess(&z_sorted, k, n_min, o, peaks.n_bar, hist.width()));
        }
        for start in starts {
            if !z_init.fix_n_bar {
                // Settle the shape with the Poisson mean held first, then
                // release it; a free start alone often stalls in a poor basin.
                let staged = held.run(start.clone(), probe);
                let mut sol = problem.run(Start::from_solution(&staged, o), probe);
                sol.iterations += staged.iterations;
                consider(sol, &mut best);
            }
            consider(problem.run(start, probe), &mut best);
        }
    }
    let mut sol = best.expect("at least one start ran");
    if !sol.converged {
        let used = sol.iterations;
        let budget = problem.max_iterations.saturating_sub(used).max(1);
        sol = problem.run(Start::from_solution(&sol, sol.orientation), budget);
        sol.iterations += used;
    }
    if !sol.converged {
        return Err(Error::FitFailure {
            message: format!("no convergence within {} iterations", problem.max_iterations),
            iterations: sol.iterations.min(problem.max_iterations),
            last: Some(Box::new(rescale(sol.mixture, center, scale))),
        });
    }

    let mixture = rescale(sol.mixture, center, scale);
    let histogram = Hist1D {
        edges: hist.edges.iter().map(|e| center + scale * e).collect(),
        counts: hist.counts.clone(),
    };
    let unresolved = mixture.unresolved_pairs();
    Ok(MixtureFit {
        mixture,
        histogram,
        iterations: sol.iterations,
        unresolved,
    })
}

fn rescale(mut m: PoissonMixture, center: f64, scale: f64) -> PoissonMixture {
    for v in &mut m.means {
        *v = center + scale * *v;
    }
    for s in &mut m.sigmas {
        *s *= scale;
    }
    m
}

/// Starting point in standardized units, ordered by photon number.
#[derive(Clone)]
struct Start {
    orientation: f64,
    total: f64,
    n_bar: f64,
    means: Vec<f64>,
    sigmas: Vec<f64>,
}

impl Start {
    fn from_solution(sol: &Solution, orientation: f64) -> Self {
        let m = &sol.mixture;
        Self {
            orientation,
            total: m.total,
            n_bar: m.n_bar,
            means: m.means.clone(),
            sigmas: m.sigmas.clone(),
        }
    }
}

fn initial_guess(hist: &Hist1D, k: usize, n_min: u32, orientation: f64, init: &MixtureInit) -> Start {
    let total = hist.total() as f64;
    let width = hist.width();
    let centers = hist.centers();
    let smoothed = kernel_smooth(&hist.counts);
    let peaks = prominent_peaks(&smoothed, k);

    if k == 1 {
        let n = total;
        let mean = hist.counts.iter().zip(&centers).map(|(&c, x)| c as f64 * x).sum::<f64>() / n;
        let var = hist.counts.iter().zip(&centers).map(|(&c, x)| c as f64 * (x - mean).powi(2)).sum::<f64>() / n;
        return Start {
            orientation,
            total,
            n_bar: init.n_bar.unwrap_or(1.0).max(1e-3),
            means: vec![init.means.as_ref().map_or(mean, |m| m[0])],
            sigmas: vec![init.sigmas.as_ref().map_or(var.sqrt().max(width), |s| s[0])],
        };
    }

    // Peak positions ordered along the photon-number direction.
    let mut ordered: Vec<(f64, f64)> = peaks.iter().map(|&b| (centers[b], smoothed[b])).collect();
    ordered.sort_by(|a, b| a.0.total_cmp(&b.0));
    if orientation < 0.0 {
        ordered.reverse();
    }
    let gaps: Vec<f64> = ordered.windows(2).map(|w| (w[1].0 - w[0].0).abs()).collect();
    let gap = if gaps.is_empty() {
        (hist.edges[hist.bins()] - hist.edges[0]) / (2.0 * k as f64)
    } else {
        let mut g = gaps.clone();
        g.sort_by(f64::total_cmp);
        quantile(&g, 0.5)
    }
    .max(2.0 * width);

    let means = match &init.means {
        Some(m) => m.clone(),
        None => {
            let mut m: Vec<f64> = ordered.iter().map(|p| p.0).take(k).collect();
            let step = gaps.last().copied().unwrap_or(gap).max(2.0 * width);
            while m.len() < k {
                let last = *m.last().expect("at least one peak");
                m.push(last + orientation * step);
            }
            m
        }
    };
    let sigmas = match &init.sigmas {
        Some(s) => s.clone(),
        None => vec![(0.5 * gap).max(0.5 * width); k],
    };
    let n_bar = init.n_bar.unwrap_or_else(|| {
        let mass: f64 = ordered.iter().map(|p| p.1).sum();
        let weighted: f64 = ordered
            .iter()
            .enumerate()
            .map(|(i, p)| (n_min as f64 + i as f64) * p.1)
            .sum();
        if mass > 0.0 {
            weighted / mass
        } else {
            n_min.max(1) as f64
        }
    });
    Start {
        orientation,
        total,
        n_bar: n_bar.clamp(1e-3, 100.0),
        means,
        sigmas,
    }
}

/// Start that assigns sorted values to components by cumulative prior
/// mass: component `n` takes the slice of the sorted data its Poisson
/// weight would cover if the components did not overlap.
fn quantile_guess(sorted: &[f64], k: usize, n_min: u32, orientation: f64, n_bar: f64, width: f64) -> Start {
    let q = truncated_poisson(n_bar, n_min, k);
    let n = sorted.len() as f64;
    let mut means = Vec::with_capacity(k);
    let mut sigmas = Vec::with_capacity(k);
    let mut lo = 0.0;
    for qi in &q {
        let hi = lo + qi;
        let (a, b) = if orientation > 0.0 { (lo, hi) } else { (1.0 - hi, 1.0 - lo) };
        let at = |f: f64| quantile(sorted, f.clamp(0.0, 1.0));
        means.push(at(0.5 * (a + b)));
        let spread = if (b - a) * n >= 20.0 {
            (at(a + 0.75 * (b - a)) - at(a + 0.25 * (b - a))) / 1.349
        } else {
            0.0
        };
        sigmas.push(spread);
        lo = hi;
    }
    // Slices too thin to measure inherit the nearest measured width.
    let fallback = sigmas.iter().copied().filter(|s| *s > 0.0).fold(f64::NAN, f64::min);
    let floor = 0.5 * width;
    let mut last = if fallback.is_nan() { floor } else { fallback };
    for s in &mut sigmas {
        if *s > 0.0 {
            last = *s;
        } else {
            *s = last;
        }
        *s = s.max(floor);
    }
    for i in 1..k {
        let min_next = means[i - 1] + orientation * 1e-3 * width;
        if orientation * (means[i] - min_next) < 0.0 {
            means[i] = min_next;
        }
    }
    Start {
        orientation,
        total: n,
        n_bar,
        means,
        sigmas,
    }
}

/// Number of distinct peaks (at most `k`) in the smoothed histogram.
pub(crate) fn count_peaks(hist: &Hist1D, k: usize) -> usize {
    prominent_peaks(&kernel_smooth(&hist.counts), k).len()
}

/// Gaussian kernel smoothing with a one-bin bandwidth.
fn kernel_smooth(counts: &[u64]) -> Vec<f64> {
    let weights: Vec<f64> = (-4i64..=4).map(|d| (-0.5 * (d * d) as f64).exp()).collect();
    (0..counts.len() as i64)
        .map(|i| {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for (w, d) in weights.iter().zip(-4i64..=4) {
                let j = i + d;
                if j >= 0 && (j as usize) < counts.len() {
                    acc += w * counts[j as usize] as f64;
                    norm += w;
                }
            }
            acc / norm
        })
        .collect()
}

/// Up to `k` local maxima, tallest first, that stand out from counting noise.
fn prominent_peaks(s: &[f64], k: usize) -> Vec<usize> {
    let n = s.len();
    let mut maxima = Vec::new();
    let mut i = 0;
    while i < n {
        // Treat plateaus as a single candidate at their first bin.
        let mut j = i;
        while j + 1 < n && s[j + 1] == s[i] {
            j += 1;
        }
        let left_ok = i == 0 || s[i - 1] < s[i];
        let right_ok = j + 1 == n || s[j + 1] < s[i];
        if left_ok && right_ok && s[i] > 0.0 {
            maxima.push(i);
        }
        i = j + 1;
    }
    let global = maxima.iter().map(|&m| s[m]).fold(0.0, f64::max);
    let mut kept: Vec<usize> = maxima
        .iter()
        .copied()
        .filter(|&m| {
            let prom = prominence(s, m);
            s[m] >= global || prom >= (2.0 * s[m].sqrt()).max(0.01 * global)
        })
        .collect();
    kept.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    kept.truncate(k);
    kept
}

fn prominence(s: &[f64], m: usize) -> f64 {
    let h = s[m];
    let mut left_min = h;
    let mut reached_higher_left = false;
    for j in (0..m).rev() {
        if s[j] > h {
            reached_higher_left = true;
            break;
        }
        left_min = left_min.min(s[j]);
    }
    let mut right_min = h;
    let mut reached_higher_right = false;
    for &v in &s[m + 1..] {
        if v > h {
            reached_higher_right = true;
            break;
        }
        right_min = right_min.min(v);
    }
    let base = match (reached_higher_left, reached_higher_right) {
        (true, true) => left_min.max(right_min),
        (true, false) => left_min,
        (false, true) => right_min,
        (false, false) => left_min.min(right_min),
    };
    h - base
}

struct Solution {
    mixture: PoissonMixture,
    orientation: f64,
    chi2: f64,
    iterations: usize,
    converged: bool,
}

/// Least-squares problem over standardized histogram counts.
///
/// Parameter layout: `[ln A, ln n̄, μ₁, ln g₂ … ln g_K, ln σ₁ … ln σ_K]`,
/// with `μ_k = μ₁ + o·Σ_{j≤k} g_j`, which keeps the means strictly
/// monotone in component index.
struct Problem<'a> {
    edges: &'a [f64],
    counts: Vec<f64>,
    weights: Vec<f64>,
    k: usize,
    n_min: u32,
    fix_n_bar: bool,
    max_iterations: usize,
    ln_sigma_bounds: (f64, f64),
    ln_gap_bounds: (f64, f64),
}

struct Eval {
    model: Vec<f64>,
    jacobian: DMatrix<f64>,
}

impl<'a> Problem<'a> {
    fn new(hist: &'a Hist1D, k: usize, n_min: u32, init: &MixtureInit) -> Self {
        let counts: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
        let weights = counts.iter().map(|&c| 1.0 / c.max(1.0)).collect();
        let width = hist.width();
        let range = hist.edges[hist.bins()] - hist.edges[0];
        Self {
            edges: &hist.edges,
            counts,
            weights,
            k,
            n_min,
            fix_n_bar: init.fix_n_bar,
            max_iterations: init.max_iterations.unwrap_or(DEFAULT_MAX_ITERATIONS),
            ln_sigma_bounds: ((0.5 * width).ln(), (10.0 * range).ln()),
            ln_gap_bounds: ((1e-3 * width).ln(), (2.0 * range).ln()),
        }
    }

    fn n_params(&self) -> usize {
        2 * self.k + 2
    }

    fn pack(&self, s: &Start) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.push(s.total.ln());
        p.push(s.n_bar.ln());
        p.push(s.means[0]);
        for w in s.means.windows(2) {
            let g = (s.orientation * (w[1] - w[0])).max(1e-300);
            p.push(g.ln());
        }
        for sg in &s.sigmas {
            p.push(sg.ln());
        }
        self.clamp(&mut p, s.orientation);
        p
    }

    /// Keeps parameters in their boxes and every mean inside the histogram
    /// range, so no component can park its mass where no bin sees it.
    fn clamp(&self, p: &mut [f64], orientation: f64) {
        let k = self.k;
        let (lo, hi) = (self.edges[0], self.edges[self.edges.len() - 1]);
        p[1] = p[1].clamp((1e-3f64).ln(), (100.0f64).ln());
        p[2] = p[2].clamp(lo, hi);
        for g in &mut p[3..2 + k] {
            *g = g.clamp(self.ln_gap_bounds.0, self.ln_gap_bounds.1);
        }
        for s in &mut p[2 + k..] {
            *s = s.clamp(self.ln_sigma_bounds.0, self.ln_sigma_bounds.1);
        }
        if k > 1 {
            let room = if orientation > 0.0 { hi - p[2] } else { p[2] - lo };
            let span: f64 = p[3..2 + k].iter().map(|g| g.exp()).sum();
            if span > room {
                // Leave a sliver so gaps stay positive at the range edge.
                let shrink = (room.max(1e-3 * (hi - lo)) / span).ln();
                for g in &mut p[3..2 + k] {
                    *g += shrink;
                }
            }
        }
    }

    fn unpack(&self, p: &[f64], orientation: f64) -> (f64, f64, Vec<f64>, Vec<f64>, Vec<f64>) {
        let k = self.k;
        let total = p[0].exp();
        let n_bar = p[1].exp();
        let gaps: Vec<f64> = p[3..2 + k].iter().map(|g| g.exp()).collect();
        let mut means = Vec::with_capacity(k);
        means.push(p[2]);
        for g in &gaps {
            let last = *means.last().expect("non-empty");
            means.push(last + orientation * g);
        }
        let sigmas = p[2 + k..].iter().map(|s| s.exp()).collect();
        (total, n_bar, means, sigmas, gaps)
    }

    fn evaluate(&self, p: &[f64], orientation: f64, with_jacobian: bool) -> Eval {
        let k = self.k;
        let bins = self.counts.len();
        let (total, n_bar, means, sigmas, gaps) = self.unpack(p, orientation);
        let q = truncated_poisson(n_bar, self.n_min, k);
        let mean_n: f64 = q
            .iter()
            .enumerate()
            .map(|(i, qi)| qi * (self.n_min as f64 + i as f64))
            .sum();

        let mut model = vec![0.0; bins];
        let mut jac = DMatrix::zeros(if with_jacobian { bins } else { 0 }, self.n_params());
        // Per-component bin integrals and their derivatives.
        let mut cdf = vec![0.0; bins + 1];
        let mut pdf_u = vec![0.0; bins + 1];
        let mut u_pdf_u = vec![0.0; bins + 1];
        let mut dmu = vec![vec![0.0; bins]; if with_jacobian { k } else { 0 }];
        for c in 0..k {
            let (mu, sg) = (means[c], sigmas[c]);
            for (e, edge) in self.edges.iter().enumerate() {
                let u = (edge - mu) / sg;
                cdf[e] = 0.5 * libm::erfc(-u / SQRT_2);
                if with_jacobian {
                    let ph = (-0.5 * u * u).exp() / (2.0 * PI).sqrt();
                    pdf_u[e] = ph;
                    u_pdf_u[e] = u * ph;
                }
            }
            let amp = total * q[c];
            for b in 0..bins {
                let integral = cdf[b + 1] - cdf[b];
                let contrib = amp * integral;
                model[b] += contrib;
                if with_jacobian {
                    jac[(b, 0)] += contrib;
                    jac[(b, 1)] += amp * (self.n_min as f64 + c as f64 - mean_n) * integral;
                    let d_mu = -amp * (pdf_u[b + 1] - pdf_u[b]) / sg;
                    dmu[c][b] = d_mu;
                    jac[(b, 2 + k + c)] = -amp * (u_pdf_u[b + 1] - u_pdf_u[b]);
                }
            }
        }
        if with_jacobian {
            if self.fix_n_bar {
                jac.column_mut(1).fill(0.0);
            }
            for b in 0..bins {
                // μ₁ moves every mean; g_j moves means j.. onward.
                let mut tail = 0.0;
                for c in (0..k).rev() {
                    tail += dmu[c][b];
                    if c >= 1 {
                        jac[(b, 2 + c)] = tail * orientation * gaps[c - 1];
                    }
                }
                jac[(b, 2)] = tail;
            }
        }
        Eval { model, jacobian: jac }
    }

    fn chi2(&self, model: &[f64]) -> f64 {
        self.counts
            .iter()
            .zip(model)
            .zip(&self.weights)
            .map(|((y, m), w)| w * (y - m) * (y - m))
            .sum()
    }

    fn to_mixture(&self, p: &[f64], orientation: f64, chi2: f64) -> PoissonMixture {
        let (total, n_bar, means, sigmas, _) = self.unpack(p, orientation);
        let dof = (self.counts.len() as f64 - self.n_params() as f64).max(1.0);
        let priors = truncated_poisson(n_bar, self.n_min, self.k);
        PoissonMixture {
            n_bar,
            n_min: self.n_min,
            amplitudes: priors.iter().map(|q| total * q).collect(),
            means,
            sigmas,
            total,
            fit_residual: chi2 / dof,
        }
    }

    /// Levenberg–Marquardt from `start` for at most `cap` iterations.
    fn run(&self, start: Start, cap: usize) -> Solution {
        let o = start.orientation;
        let mut p = self.pack(&start);
        let np = self.n_params();
        let mut current = self.evaluate(&p, o, true);
        let mut chi2 = self.chi2(&current.model);
        let mut lambda = 1e-3;
        let mut quiet_steps = 0;

        for iter in 1..=cap {
            let r: Vec<f64> = self.counts.iter().zip(&current.model).map(|(y, m)| y - m).collect();
            let j = &current.jacobian;
            let mut jtwj = DMatrix::zeros(np, np);
            let mut jtwr = DVector::zeros(np);
            for b in 0..r.len() {
                let w = self.weights[b];
                let row = j.row(b);
                for a in 0..np {
                    let ja = row[a];
                    if ja == 0.0 {
                        continue;
                    }
                    jtwr[a] += w * ja * r[b];
                    for c in a..np {
                        jtwj[(a, c)] += w * ja * row[c];
                    }
                }
            }
            for a in 0..np {
                for c in 0..a {
                    jtwj[(a, c)] = jtwj[(c, a)];
                }
            }
            if self.fix_n_bar {
                jtwj[(1, 1)] = 1.0;
                jtwr[1] = 0.0;
            }

            let mut accepted = false;
            while lambda < 1e16 {
                let mut a = jtwj.clone();
                for d in 0..np {
                    let diag = jtwj[(d, d)].max(1e-12);
                    a[(d, d)] += lambda * diag;
                }
                let step = match a.cholesky() {
                    Some(ch) => ch.solve(&jtwr),
                    None => {
                        lambda *= 4.0;
                        continue;
                    }
                };
                let mut trial = p.clone();
                for (t, s) in trial.iter_mut().zip(step.iter()) {
                    *t += s;
                }
                self.clamp(&mut trial, o);
                let eval = self.evaluate(&trial, o, false);
                let trial_chi2 = self.chi2(&eval.model);
                if trial_chi2.is_finite() && trial_chi2 <= chi2 {
                    let improvement = chi2 - trial_chi2;
                    p = trial;
                    chi2 = trial_chi2;
                    current = self.evaluate(&p, o, true);
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    if improvement <= 1e-8 * chi2.max(1e-300) {
                        quiet_steps += 1;
                    } else {
                        quiet_steps = 0;
                    }
                    break;
                }
                lambda *= 4.0;
            }
            if !accepted || quiet_steps >= 2 {
                // No downhill step exists at any damping: a (local) optimum.
                return Solution {
                    mixture: self.to_mixture(&p, o, chi2),
                    orientation: o,
                    chi2,
                    iterations: iter,
                    converged: true,
                };
            }
        }
        Solution {
            mixture: self.to_mixture(&p, o, chi2),
            orientation: o,
            chi2,
            iterations: cap,
            converged: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Draws from the Poisson-tied mixture itself.
    fn sample(m: &PoissonMixture, count: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let priors = m.priors();
        (0..count)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut c = priors.len() - 1;
                for (i, p) in priors.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        c = i;
                        break;
                    }
                }
                let z: f64 = rng.sample(StandardNormal);
                m.means[c] + m.sigmas[c] * z
            })
            .collect()
    }

    #[test]
    fn recovers_two_component_model() {
        let truth = PoissonMixture::new(1.5, 1, vec![-1.0, 1.0], vec![0.2, 0.2], 1.0).unwrap();
        let values = sample(&truth, 100_000, 7);
        let fit = fit_mixture(&values, 2, 1, &MixtureInit::default()).unwrap();
        let m = &fit.mixture;
        assert!((m.means[0] + 1.0).abs() < 0.01, "{:?}", m.means);
        assert!((m.means[1] - 1.0).abs() < 0.01, "{:?}", m.means);
        assert!((m.n_bar - 1.5).abs() < 0.1, "{}", m.n_bar);
        assert!(fit.unresolved.is_empty());
    }

    #[test]
    fn single_component_matches_sample_moments() {
        let truth = PoissonMixture::new(1.0, 1, vec![3.0], vec![0.5], 1.0).unwrap();
        let values = sample(&truth, 20_000, 3);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let fit = fit_mixture(&values, 1, 1, &MixtureInit::default()).unwrap();
        let se_mean = sd / n.sqrt();
        let se_sd = sd / (2.0 * n).sqrt();
        assert!((fit.mixture.means[0] - mean).abs() < 3.0 * se_mean);
        assert!((fit.mixture.sigmas[0] - sd).abs() < 3.0 * se_sd);
    }

    #[test]
    fn descending_orientation_is_found() {
        // Photon number increases toward negative values. Three components
        // with n_min = 1 would be ambiguous: reversed Poisson weights are
        // again Poisson weights with mean 6/n̄.
        let truth = PoissonMixture::new(1.0, 1, vec![5.5, 4.0, 2.5, 1.0], vec![0.25; 4], 1.0).unwrap();
        let values = sample(&truth, 50_000, 11);
        let fit = fit_mixture(&values, 4, 1, &MixtureInit::default()).unwrap();
        let m = &fit.mixture;
        for (got, want) in m.means.iter().zip(&truth.means) {
            assert!((got - want).abs() < 0.02, "{:?}", m.means);
        }
        assert!((m.n_bar - 1.0).abs() < 0.1);
    }

    #[test]
    fn means_are_strictly_monotone() {
        let truth = PoissonMixture::new(3.0, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![0.3; 5], 1.0).unwrap();
        let values = sample(&truth, 30_000, 5);
        let m = fit_mixture(&values, 5, 1, &MixtureInit::default()).unwrap().mixture;
        let up = m.means.windows(2).all(|w| w[1] > w[0]);
        let down = m.means.windows(2).all(|w| w[1] < w[0]);
        assert!(up || down);
        let priors = m.priors();
        for (a, p) in m.amplitudes.iter().zip(&priors) {
            assert!((a - m.total * p).abs() <= 1e-9 * m.total);
        }
    }

    #[test]
    fn scale_equivariance() {
        let truth = PoissonMixture::new(1.5, 1, vec![-1.0, 0.0, 1.0, 1.8], vec![0.2, 0.2, 0.25, 0.25], 1.0).unwrap();
        let values = sample(&truth, 20_000, 19);
        let scaled: Vec<f64> = values.iter().map(|v| v * 37.5).collect();
        let a = fit_mixture(&values, 4, 1, &MixtureInit::default()).unwrap().mixture;
        let b = fit_mixture(&scaled, 4, 1, &MixtureInit::default()).unwrap().mixture;
        assert!((a.n_bar - b.n_bar).abs() < 1e-6, "{a:?} {b:?}");
        for i in 0..4 {
            assert!((a.means[i] * 37.5 - b.means[i]).abs() < 1e-6 * 37.5);
            assert!((a.sigmas[i] * 37.5 - b.sigmas[i]).abs() < 1e-6 * 37.5);
        }
    }

    #[test]
    fn too_few_values() {
        let v = vec![0.0; 19];
        assert!(matches!(
            fit_mixture(&v, 2, 1, &MixtureInit::default()),
            Err(Error::InsufficientData { needed: 20, got: 19 })
        ));
    }

    #[test]
    fn constant_values_are_degenerate() {
        let v = vec![2.0; 100];
        assert!(matches!(
            fit_mixture(&v, 1, 1, &MixtureInit::default()),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let truth = PoissonMixture::new(2.0, 1, vec![0.0, 1.0, 2.0], vec![0.2; 3], 1.0).unwrap();
        let values = sample(&truth, 5_000, 2);
        let init = MixtureInit {
            max_iterations: Some(1),
            ..Default::default()
        };
        match fit_mixture(&values, 3, 1, &init) {
            Err(Error::FitFailure { last, iterations, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(last.unwrap().k(), 3);
            }
            other => panic!("expected fit failure, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_components_are_flagged() {
        let m = PoissonMixture::new(2.0, 1, vec![0.0, 1.0, 1.5], vec![0.2, 0.2, 0.2], 1.0).unwrap();
        assert_eq!(m.unresolved_pairs(), vec![(2, 3)]);
    }

    #[test]
    fn truncated_prior_is_normalized() {
        let p = truncated_poisson(3.5, 1, 8);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!((p[1] / p[0] - 3.5 / 2.0).abs() < 1e-12);
    }
}
