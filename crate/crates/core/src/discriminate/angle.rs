use serde::{Deserialize, Serialize};

use super::confidence::{confidence, ConfidenceReport};
use super::hist::{freedman_diaconis_bins, Hist1D};
use super::mixture::{fit_mixture, MixtureFit, MixtureInit};
use super::project_angle;
use crate::error::{Error, Result};
use crate::pca::WeightPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    /// Degrees in `[0, 180)`.
    pub angle: f64,
    /// Prior-weighted mean confidence at this angle.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSearch {
    /// Coarse grid step in degrees; refinement covers ±step at step/10.
    pub step: f64,
    /// Poisson mean held fixed while scoring angles. Estimated from the data
    /// when absent.
    pub n_bar: Option<f64>,
    pub bins: Option<usize>,
}

impl Default for AngleSearch {
    fn default() -> Self {
        Self {
            step: 0.5,
            n_bar: None,
            bins: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleResult {
    pub model: ProjectionModel,
    pub fit: MixtureFit,
    pub confidence: ConfidenceReport,
}

/// Wraps an angle into `[0, 180)`.
pub fn reduce_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(180.0);
    if a >= 180.0 {
        0.0
    } else {
        a
    }
}

struct Scored {
    angle: f64,
    score: f64,
}

fn better(candidate: &Scored, best: &Option<Scored>) -> bool {
    match best {
        None => true,
        Some(b) => candidate.score > b.score || (candidate.score == b.score && candidate.angle < b.angle),
    }
}

fn score_at(points: &[WeightPoint], angle: f64, k: usize, n_min: u32, init: &MixtureInit) -> Option<f64> {
    let values = project_angle(points, angle);
    let fit = fit_mixture(&values, k, n_min, init).ok()?;
    let rep = confidence(&fit.mixture).ok()?;
    let s = rep.weighted_mean(&fit.mixture);
    s.is_finite().then_some(s)
}

/// Grid-searches the projection angle that maximizes the prior-weighted
/// confidence, refines around the best grid point, and refits the mixture
/// there with the Poisson mean free.
pub fn find_optimal_angle(points: &[WeightPoint], k: usize, n_min: u32, search: &AngleSearch) -> Result<AngleResult> {
    if k == 0 {
        return Err(Error::invalid("component count must be at least 1"));
    }
    if points.len() < 10 * k {
        return Err(Error::InsufficientData {
            needed: 10 * k,
            got: points.len(),
        });
    }
    if !(search.step > 0.0 && search.step <= 90.0) {
        return Err(Error::invalid("angle step must lie in (0, 90]"));
    }

    let n_bar_ref = match search.n_bar {
        Some(n) if n > 0.0 => n,
        Some(n) => return Err(Error::invalid(format!("n_bar must be positive, got {n}"))),
        None => estimate_n_bar(points, k, n_min, search.bins)?,
    };
    let fixed = MixtureInit {
        n_bar: Some(n_bar_ref),
        fix_n_bar: true,
        bins: search.bins,
        ..Default::default()
    };

    let mut best: Option<Scored> = None;
    let grid = (180.0 / search.step).round() as usize;
    for i in 0..grid {
        let angle = i as f64 * search.step;
        if let Some(score) = score_at(points, angle, k, n_min, &fixed) {
            let cand = Scored { angle, score };
            if better(&cand, &best) {
                best = Some(cand);
            }
        }
    }
    let coarse = best.ok_or_else(|| Error::FitFailure {
        message: "mixture fit failed at every angle".into(),
        iterations: 0,
        last: None,
    })?;

    let fine = search.step / 10.0;
    let mut best = Some(Scored {
        angle: coarse.angle,
        score: coarse.score,
    });
    for j in -10i32..=10 {
        if j == 0 {
            continue;
        }
        let angle = reduce_angle(coarse.angle + j as f64 * fine);
        if let Some(score) = score_at(points, angle, k, n_min, &fixed) {
            let cand = Scored { angle, score };
            if better(&cand, &best) {
                best = Some(cand);
            }
        }
    }
    let best = best.expect("seeded with the coarse optimum");

    let values = project_angle(points, best.angle);
    let held = fit_mixture(&values, k, n_min, &fixed)?;
    let free = MixtureInit {
        n_bar: Some(held.mixture.n_bar),
        fix_n_bar: false,
        means: Some(held.mixture.means.clone()),
        sigmas: Some(held.mixture.sigmas.clone()),
        bins: search.bins,
        ..Default::default()
    };
    let fit = fit_mixture(&values, k, n_min, &free).unwrap_or(held);
    let mut rep = confidence(&fit.mixture)?;
    rep.angle = best.angle;
    Ok(AngleResult {
        model: ProjectionModel {
            angle: best.angle,
            score: best.score,
        },
        fit,
        confidence: rep,
    })
}

/// Poisson mean from a free fit at the coarse angle showing the most
/// distinct histogram peaks.
fn estimate_n_bar(points: &[WeightPoint], k: usize, n_min: u32, bins: Option<usize>) -> Result<f64> {
    let mut best_angle = 0.0;
    let mut most = 0;
    for i in 0..18 {
        let angle = i as f64 * 10.0;
        let mut values = project_angle(points, angle);
        values.sort_by(f64::total_cmp);
        let (lo, hi) = (values[0], values[values.len() - 1]);
        if !(hi > lo) {
            continue;
        }
        let b = bins.unwrap_or_else(|| freedman_diaconis_bins(&values));
        let hist = Hist1D::uniform(&values, lo, hi, b);
        let peaks = super::mixture::count_peaks(&hist, k);
        if peaks > most {
            most = peaks;
            best_angle = angle;
        }
    }
    let values = project_angle(points, best_angle);
    let init = MixtureInit {
        bins,
        ..Default::default()
    };
    Ok(fit_mixture(&values, k, n_min, &init)?.mixture.n_bar)
}
