//! Weight-plane histograms, angle projection, Poisson-tied mixture fits and
//! the confidence measure. Shared by the PCA and edge-timing paths.

pub mod angle;
pub mod confidence;
pub mod hist;
pub mod mixture;

pub use angle::{find_optimal_angle, reduce_angle, AngleResult, AngleSearch, ProjectionModel};
pub use confidence::{confidence, ConfidenceReport, MIN_REPORTED_COUNT};
pub use hist::{freedman_diaconis_bins, Hist1D, Hist2D};
pub use mixture::{fit_mixture, truncated_poisson, MixtureFit, MixtureInit, PoissonMixture, RESOLVE_FACTOR};

use crate::pca::WeightPoint;

/// `s = w2·sin(angle) + w1·cos(angle)` for every point, angle in degrees.
pub fn project_angle(points: &[WeightPoint], angle: f64) -> Vec<f64> {
    let (sin, cos) = angle.to_radians().sin_cos();
    points.iter().map(|p| p.w2 * sin + p.w1 * cos).collect()
}
