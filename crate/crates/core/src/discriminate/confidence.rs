use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::mixture::{posterior_from_logs, PoissonMixture, RESOLVE_FACTOR};
use crate::error::{Error, Result};

/// Quadrature covers this many sigmas either side of each component mean.
const TAIL_SIGMAS: f64 = 9.0;
/// Quadrature step in units of the component's own sigma.
const STEP_SIGMAS: f64 = 0.01;

/// Expected record count below which a component's width, and so its
/// confidence, is too poorly determined to report.
pub const MIN_REPORTED_COUNT: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    /// `C_n` for every modeled photon number.
    pub per_n: BTreeMap<u32, f64>,
    /// Projection angle in degrees the mixture was fitted at.
    pub angle: f64,
    pub fit_residual: f64,
    /// Largest photon number whose confidence is considered meaningful: the
    /// end of the leading run of resolved components, excluding the last
    /// modeled component where the prior is truncated and any component
    /// expected to hold fewer than [`MIN_REPORTED_COUNT`] records.
    pub n_max_reported: u32,
}

impl ConfidenceReport {
    /// `Σ p(n) C_n` over the modeled photon numbers.
    pub fn weighted_mean(&self, mix: &PoissonMixture) -> f64 {
        mix.priors()
            .iter()
            .zip(self.per_n.values())
            .map(|(p, c)| p * c)
            .sum()
    }

    /// `C_n` for `n_min ..= n_max_reported`.
    pub fn reported(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.per_n
            .iter()
            .filter(move |(n, _)| **n <= self.n_max_reported)
            .map(|(n, c)| (*n, *c))
    }
}

/// Confidence `C_n = ∫ p(s|n)² p(n) / p(s) ds` for every component.
///
/// Written as the expectation of the posterior `p(n|s)` under component
/// `n`, each integral runs on that component's own standardized axis with
/// the trapezoidal rule. The posterior is taken in log space, so far tails
/// do not produce `0/0`.
pub fn confidence(mix: &PoissonMixture) -> Result<ConfidenceReport> {
    if mix.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::invalid("component sigmas must be positive"));
    }
    let k = mix.k();
    let log_priors: Vec<f64> = mix.priors().iter().map(|p| p.ln()).collect();
    let half = (TAIL_SIGMAS / STEP_SIGMAS).round() as i64;
    let norm = STEP_SIGMAS / (2.0 * PI).sqrt();
    let mut sums = vec![0.0; k];
    for c in 0..k {
        let mut acc = 0.0;
        for i in -half..=half {
            let u = i as f64 * STEP_SIGMAS;
            let w = if i.abs() == half { 0.5 } else { 1.0 };
            let post = posterior_from_logs(&log_priors, &mix.means, &mix.sigmas, mix.means[c] + mix.sigmas[c] * u);
            acc += w * (-0.5 * u * u).exp() * post[c];
        }
        sums[c] = norm * acc;
    }

    let per_n = sums
        .iter()
        .enumerate()
        .map(|(c, v)| (mix.photon_number(c), v.clamp(0.0, 1.0)))
        .collect();
    Ok(ConfidenceReport {
        per_n,
        angle: 0.0,
        fit_residual: mix.fit_residual,
        n_max_reported: n_max_reported(mix),
    })
}

fn n_max_reported(mix: &PoissonMixture) -> u32 {
    let k = mix.k();
    let mut run = 1;
    while run < k {
        let gap = (mix.means[run] - mix.means[run - 1]).abs();
        if gap < RESOLVE_FACTOR * (mix.sigmas[run] + mix.sigmas[run - 1]) {
            break;
        }
        run += 1;
    }
    if run == k && k > 1 {
        run -= 1;
    }
    while run > 1 && mix.amplitudes[run - 1] < MIN_REPORTED_COUNT {
        run -= 1;
    }
    mix.n_min + run as u32 - 1
}
