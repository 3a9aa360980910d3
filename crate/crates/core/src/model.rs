//! Model space: Gaussian components, finite mixtures, datasets, and the
//! discrete candidate sets that solvers search over.
//!
//! Construction is where validation lives. Once a value of these types
//! exists, downstream code may rely on its invariants (positive-definite
//! covariances, simplex weights, consistent dimensions, finite entries)
//! without re-checking.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::math::{pairwise_sum, LogSumExp};
use crate::patch::PatchSpec;

/// `ln(2 pi)`.
pub(crate) const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Relative tolerance for covariance symmetry checks.
const SYMMETRY_RTOL: f64 = 1e-12;

/// Tolerance on `|sum(weights) - 1|` for mixture weights.
const SIMPLEX_TOL: f64 = 1e-12;

/// A single multivariate Gaussian with cached Cholesky factorization.
///
/// The covariance is factored once at construction (`Sigma = L L^T`); all
/// density evaluations reuse the factor and never form an explicit inverse.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    mean: Vec<f64>,
    covariance: DMatrix<f64>,
    /// Lower-triangular Cholesky factor of `covariance`.
    chol_l: DMatrix<f64>,
    /// `-(d/2) ln(2 pi) - (1/2) ln det(covariance)`.
    log_norm: f64,
}

impl GaussianComponent {
    /// Validates and factors a component.
    ///
    /// Rejects: empty or mismatched shapes, non-finite entries, asymmetry
    /// beyond `1e-12 * max|Sigma_ab|`, and covariances that are not strictly
    /// positive definite.
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidArgument("component mean is empty".into()));
        }
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "mean has dimension {d} but covariance is {}x{}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("component mean has a non-finite entry".into()));
        }
        let mut max_abs = 0.0_f64;
        for &v in covariance.iter() {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(
                    "covariance has a non-finite entry".into(),
                ));
            }
            max_abs = max_abs.max(v.abs());
        }
        let mut max_asym = 0.0_f64;
        for a in 0..d {
            for b in (a + 1)..d {
                max_asym = max_asym.max((covariance[(a, b)] - covariance[(b, a)]).abs());
            }
        }
        if max_asym > SYMMETRY_RTOL * max_abs {
            return Err(Error::InvalidArgument(format!(
                "covariance asymmetry {max_asym:.3e} exceeds {:.3e}",
                SYMMETRY_RTOL * max_abs
            )));
        }
        let chol = covariance.clone().cholesky().ok_or_else(|| {
            Error::NotPositiveDefinite("covariance has no Cholesky factorization".into())
        })?;
        let chol_l = chol.l();
        let mut log_det = 0.0;
        for a in 0..d {
            let l_aa = chol_l[(a, a)];
            if !(l_aa > 0.0) || !l_aa.is_finite() {
                return Err(Error::NotPositiveDefinite(format!(
                    "Cholesky pivot {a} is {l_aa}"
                )));
            }
            log_det += 2.0 * l_aa.ln();
        }
        if !log_det.is_finite() {
            return Err(Error::NotPositiveDefinite(
                "log-determinant is not finite".into(),
            ));
        }
        let log_norm = -0.5 * (d as f64 * LOG_2PI + log_det);
        Ok(GaussianComponent {
            mean,
            covariance,
            chol_l,
            log_norm,
        })
    }

    /// Convenience constructor from plain nested rows.
    pub fn from_rows(mean: Vec<f64>, covariance_rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = mean.len();
        if covariance_rows.len() != d || covariance_rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(format!(
                "covariance rows do not form a {d}x{d} matrix"
            )));
        }
        let flat: Vec<f64> = covariance_rows.into_iter().flatten().collect();
        GaussianComponent::new(mean, DMatrix::from_row_slice(d, d, &flat))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Lower Cholesky factor of the covariance.
    pub fn cholesky_l(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    /// `ln det(covariance)`, recovered from the cached factor.
    pub fn log_det_covariance(&self) -> f64 {
        let mut log_det = 0.0;
        for a in 0..self.dim() {
            log_det += 2.0 * self.chol_l[(a, a)].ln();
        }
        log_det
    }

    /// Log density `ln N(x; mean, covariance)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has dimension {} but component has {}",
                x.len(),
                self.dim()
            )));
        }
        let mut scratch = vec![0.0; self.dim()];
        Ok(self.log_density_with(x, &mut scratch))
    }

    /// Log density with caller-provided scratch of length `dim()`; the hot
    /// path used by the matrix builder.
    pub(crate) fn log_density_with(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        debug_assert_eq!(scratch.len(), d);
        // Forward-substitute L z = (x - mean); the quadratic form is |z|^2.
        let mut quad = 0.0;
        for a in 0..d {
            let mut s = x[a] - self.mean[a];
            for b in 0..a {
                s -= self.chol_l[(a, b)] * scratch[b];
            }
            let z = s / self.chol_l[(a, a)];
            scratch[a] = z;
            quad += z * z;
        }
        self.log_norm - 0.5 * quad
    }

    /// Squared Mahalanobis distance `(x - mean)^T Sigma^{-1} (x - mean)`.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has dimension {} but component has {}",
                x.len(),
                self.dim()
            )));
        }
        let mut scratch = vec![0.0; self.dim()];
        let log_pdf = self.log_density_with(x, &mut scratch);
        Ok(-2.0 * (log_pdf - self.log_norm))
    }

    /// Largest eigenvalue of the covariance.
    pub(crate) fn max_covariance_eigenvalue(&self) -> f64 {
        self.covariance
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v))
    }
}

/// A finite Gaussian mixture with strictly validated weights.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    weights: Vec<f64>,
    components: Vec<GaussianComponent>,
}

impl MixtureModel {
    /// Requires at least one component, equal dimensions, non-negative
    /// weights summing to 1 within `1e-12`.
    pub fn new(weights: Vec<f64>, components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("mixture has no components".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::DimensionMismatch(
                "mixture components have unequal dimensions".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "mixture weights must be finite and non-negative".into(),
            ));
        }
        let total = pairwise_sum(&weights);
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        Ok(MixtureModel { weights, components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// Mixture log density `ln sum_k w_k N(x; mu_k, Sigma_k)`; components
    /// with zero weight contribute exactly nothing.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "point has dimension {} but mixture has {}",
                x.len(),
                self.dim()
            )));
        }
        let mut scratch = vec![0.0; self.dim()];
        let mut acc = LogSumExp::new();
        for (w, comp) in self.weights.iter().zip(&self.components) {
            if *w > 0.0 {
                acc.push(w.ln() + comp.log_density_with(x, &mut scratch));
            }
        }
        Ok(acc.value())
    }
}

/// Minimum pairwise mean separation measured in units of
/// `sqrt(d * max(lambda_max(Sigma_i), lambda_max(Sigma_j)))`.
///
/// A mixture is "c-separated" when this value is at least c. Returns
/// `+inf` for a single-component mixture (no pair to separate).
pub fn c_separation(mixture: &MixtureModel) -> f64 {
    let d = mixture.dim() as f64;
    let lambda_max: Vec<f64> = mixture
        .components()
        .iter()
        .map(|c| c.max_covariance_eigenvalue())
        .collect();
    let mut c = f64::INFINITY;
    for i in 0..mixture.n_components() {
        for j in (i + 1)..mixture.n_components() {
            let dist_sq: f64 = mixture.components()[i]
                .mean()
                .iter()
                .zip(mixture.components()[j].mean())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let scale = (d * lambda_max[i].max(lambda_max[j])).sqrt();
            c = c.min(dist_sq.sqrt() / scale);
        }
    }
    c
}

/// Points stored row-major, with optional integer labels (e.g. the source
/// component of each sampled point).
#[derive(Debug, Clone)]
pub struct Dataset {
    points: Vec<f64>,
    n_points: usize,
    dim: usize,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    /// Builds a dataset from per-point rows; all rows must share one
    /// nonzero dimension and every coordinate must be finite.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("dataset has no points".into()));
        }
        let dim = rows[0].len();
        let n = rows.len();
        let mut flat = Vec::with_capacity(n * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch(
                    "dataset rows have unequal lengths".into(),
                ));
            }
            flat.extend_from_slice(row);
        }
        Dataset::from_flat(n, dim, flat)
    }

    /// Builds a dataset from a row-major flat buffer.
    pub fn from_flat(n_points: usize, dim: usize, points: Vec<f64>) -> Result<Self> {
        if n_points == 0 || dim == 0 {
            return Err(Error::InvalidArgument(
                "dataset must have at least one point and one dimension".into(),
            ));
        }
        if points.len() != n_points * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} values cannot form {n_points} points of dimension {dim}",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "dataset has a non-finite coordinate".into(),
            ));
        }
        Ok(Dataset {
            points,
            n_points,
            dim,
            labels: None,
        })
    }

    /// Attaches one label per point.
    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n_points {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} points",
                labels.len(),
                self.n_points
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major flat view of all points.
    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }
}

/// `1/n`-normalized sample mean and covariance of row-major `points`.
pub(crate) fn sample_moments(points: &[f64], n: usize, d: usize) -> (Vec<f64>, DMatrix<f64>) {
    debug_assert_eq!(points.len(), n * d);
    debug_assert!(n > 0);
    let mut mean = vec![0.0; d];
    for row in points.chunks_exact(d) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut scatter = DMatrix::<f64>::zeros(d, d);
    for row in points.chunks_exact(d) {
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                scatter[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = scatter[(a, b)] / n as f64;
            scatter[(a, b)] = v;
            scatter[(b, a)] = v;
        }
    }
    (mean, scatter)
}

/// How a candidate set was produced; carried through serialization so a
/// set can be audited or regenerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SetProvenance {
    /// Hand-assembled or loaded from explicit parameters.
    Explicit,
    /// Generated by [`crate::grid::build_grid_set`].
    Grid { spec: GridSpec },
    /// Fitted from image patches by [`crate::patch::fit_patch_models`].
    Patch {
        spec: PatchSpec,
        skipped_patches: usize,
    },
}

/// An ordered, immutable set of candidate components sharing one dimension.
///
/// Candidate indices used throughout the crate (weight vectors, supports,
/// solutions) refer to positions in this set.
#[derive(Debug, Clone)]
pub struct ComponentSet {
    components: Vec<GaussianComponent>,
    dim: usize,
    provenance: SetProvenance,
}

impl ComponentSet {
    pub fn new(components: Vec<GaussianComponent>, provenance: SetProvenance) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("candidate set is empty".into()));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch(
                "candidate components have unequal dimensions".into(),
            ));
        }
        Ok(ComponentSet {
            components,
            dim,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, m: usize) -> &GaussianComponent {
        &self.components[m]
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn provenance(&self) -> &SetProvenance {
        &self.provenance
    }
}
