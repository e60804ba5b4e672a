//! Principal-component basis for windowed traces.
//!
//! Small problems go through a singular-value factorization of the centered
//! data matrix. Large ones eigendecompose whichever Gram matrix is smaller
//! (`X·Xᵀ` for few long traces, `Xᵀ·X` otherwise) and map back.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::{Trace, TraceSet};

/// Above this many rows or columns the SVD route is replaced by a Gram
/// eigendecomposition.
const SVD_LIMIT: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub mean_trace: Vec<f64>,
    /// Unit vectors, ordered by decreasing explained variance.
    pub components: Vec<Vec<f64>>,
    /// Covariance eigenvalues (volts², `N − 1` normalization).
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Coordinates of one record in a two-dimensional feature plane: PCA
/// weights `(w₁, w₂)` or edge times `(t_rise, t_fall)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightPoint {
    pub w1: f64,
    pub w2: f64,
    pub trace_id: u64,
}

impl PcaBasis {
    pub fn trace_len(&self) -> usize {
        self.mean_trace.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Weights of `samples` on every component.
    pub fn weights(&self, samples: &[f32]) -> Result<Vec<f64>> {
        if samples.len() != self.trace_len() {
            return Err(Error::invalid(format!(
                "trace length {} does not match basis length {}",
                samples.len(),
                self.trace_len()
            )));
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                samples
                    .iter()
                    .zip(&self.mean_trace)
                    .zip(c)
                    .map(|((&v, &m), &ci)| (v as f64 - m) * ci)
                    .sum()
            })
            .collect())
    }

    /// `mean + Σ wᵢ cᵢ` over the leading `weights.len()` components.
    pub fn reconstruct(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = self.mean_trace.clone();
        for (w, c) in weights.iter().zip(&self.components) {
            for (o, &ci) in out.iter_mut().zip(c) {
                *o += w * ci;
            }
        }
        out
    }

    /// Copy restricted to the leading `k` components.
    pub fn truncated(&self, k: usize) -> PcaBasis {
        let k = k.min(self.n_components());
        PcaBasis {
            mean_trace: self.mean_trace.clone(),
            components: self.components[..k].to_vec(),
            explained_variance: self.explained_variance[..k].to_vec(),
            explained_variance_ratio: self.explained_variance_ratio[..k].to_vec(),
        }
    }
}

/// Fits `n_components` principal components to `training`.
pub fn fit_pca(training: &TraceSet, n_components: usize) -> Result<PcaBasis> {
    let rows: Vec<&[f32]> = training.traces().iter().map(Trace::samples).collect();
    fit_pca_rows(&rows, n_components)
}

/// Same as [`fit_pca`] on bare sample rows.
pub fn fit_pca_rows(rows: &[&[f32]], n_components: usize) -> Result<PcaBasis> {
    if n_components == 0 {
        return Err(Error::invalid("n_components must be at least 1"));
    }
    let n = rows.len();
    if n < n_components + 1 {
        return Err(Error::InsufficientData {
            needed: n_components + 1,
            got: n,
        });
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("training traces differ in length"));
    }
    if n_components > d {
        return Err(Error::InsufficientData {
            needed: n_components,
            got: d,
        });
    }

    let mut mean = vec![0.0f64; d];
    for r in rows {
        for (m, &v) in mean.iter_mut().zip(r.iter()) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] as f64 - mean[j]);
    let raw_norm: f64 = rows
        .iter()
        .flat_map(|r| r.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    let sum_sq = x.norm_squared();
    if sum_sq.sqrt() <= 1e-12 * raw_norm || sum_sq == 0.0 {
        return Err(Error::DegenerateData("training traces have zero variance".into()));
    }
    let dof = (n - 1) as f64;
    let total_variance = sum_sq / dof;

    let (eigenvalues, mut vectors) = if n.max(d) <= SVD_LIMIT {
        svd_route(x, n_components)
    } else {
        gram_route(x, n_components)?
    };

    orthonormalize(&mut vectors)?;
    for v in &mut vectors {
        fix_sign(v);
    }
    let explained_variance: Vec<f64> = eigenvalues.iter().map(|l| (l / dof).max(0.0)).collect();
    let explained_variance_ratio = explained_variance.iter().map(|v| v / total_variance).collect();

    Ok(PcaBasis {
        mean_trace: mean,
        components: vectors,
        explained_variance,
        explained_variance_ratio,
    })
}

/// Returns (squared singular values, right singular vectors), top `k`.
fn svd_route(x: DMatrix<f64>, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let vals = order[..k].iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    let vecs = order[..k].iter().map(|&i| v_t.row(i).iter().copied().collect()).collect();
    (vals, vecs)
}

fn gram_route(x: DMatrix<f64>, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (n, d) = x.shape();
    if n <= d {
        let gram = &x * x.transpose();
        let eig = gram.symmetric_eigen();
        let order = descending(&eig.eigenvalues);
        let mut vals = Vec::with_capacity(k);
        let mut vecs = Vec::with_capacity(k);
        let top = eig.eigenvalues[order[0]].max(0.0);
        for &i in &order[..k] {
            let lambda = eig.eigenvalues[i];
            if !(lambda > 1e-13 * top) {
                return Err(Error::DegenerateData(format!(
                    "training data has rank below {k} components"
                )));
            }
            let u: DVector<f64> = eig.eigenvectors.column(i).into_owned();
            let v = x.tr_mul(&u) / lambda.sqrt();
            vals.push(lambda);
            vecs.push(v.iter().copied().collect());
        }
        Ok((vals, vecs))
    } else {
        let cov = x.tr_mul(&x);
        let eig = cov.symmetric_eigen();
        let order = descending(&eig.eigenvalues);
        let vals = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs = order[..k]
            .iter()
            .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
            .collect();
        Ok((vals, vecs))
    }
}

fn descending(values: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Modified Gram–Schmidt, in order.
fn orthonormalize(vectors: &mut [Vec<f64>]) -> Result<()> {
    for i in 0..vectors.len() {
        let (done, rest) = vectors.split_at_mut(i);
        let v = &mut rest[0];
        for u in done.iter() {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(u) {
                *a -= dot * b;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::DegenerateData("principal component vanished".into()));
        }
        for a in v.iter_mut() {
            *a /= norm;
        }
    }
    Ok(())
}

/// Flip so the largest-magnitude element (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, a) in v.iter().enumerate() {
        if a.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for a in v.iter_mut() {
            *a = -*a;
        }
    }
}

/// Weights `(w₁, w₂)` of `trace` on the first two components.
pub fn project(basis: &PcaBasis, trace: &Trace) -> Result<WeightPoint> {
    if basis.n_components() < 2 {
        return Err(Error::invalid("projection needs a basis with at least two components"));
    }
    let w = basis.truncated(2).weights(trace.samples())?;
    Ok(WeightPoint {
        w1: w[0],
        w2: w[1],
        trace_id: trace.id(),
    })
}
