//! Lower-bound solvers. A feasible K-sparse mixture is found either by
//! running unconstrained EM in data space and projecting each fitted
//! component onto its nearest candidate (fast, heuristic), or by
//! enumerating every K-subset of candidates (exact, exponential). Both
//! finish by refitting the weights on the chosen support with the convex
//! solver, which is the exact weight-MLE for a fixed support.

use itertools::Itertools;
use nalgebra::DMatrix;
use rand::seq::index::sample as index_sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{convex_em, ConvexEmConfig, InitStrategy};
use crate::error::{Error, Result};
use crate::likelihood::{mixture_ll, DataFingerprint, LogLikelihoodMatrix, WeightVector};
use crate::math::{pairwise_sum, LogSumExp};
use crate::model::{sample_moments, ComponentSet, Dataset, GaussianComponent, MixtureModel};
use crate::rng::rng_from_seed;

/// Relative ridge added to every M-step covariance, floored absolutely so
/// zero-variance clusters still yield a positive definite matrix.
const EM_RIDGE_SCALE: f64 = 1e-6;
const EM_RIDGE_FLOOR: f64 = 1e-12;

/// A cluster whose total responsibility falls below this fraction of the
/// dataset is considered collapsed and gets reseeded.
const COLLAPSE_FRACTION: f64 = 1e-12;

/// EM with the ridge is monotone only up to the ridge perturbation; dips
/// beyond this are treated as bugs rather than round-off.
const EM_DIP_TOL: f64 = 1e-6;

/// Distance between two Gaussian components, used to project fitted
/// components onto the candidate set.
pub trait ComponentDistance: Sync {
    fn distance(&self, a: &GaussianComponent, b: &GaussianComponent) -> f64;
}

/// Jeffreys divergence (symmetrized Kullback-Leibler) between Gaussians,
/// evaluated through the cached Cholesky factors.
pub struct SymmetrizedKl;

impl ComponentDistance for SymmetrizedKl {
    fn distance(&self, a: &GaussianComponent, b: &GaussianComponent) -> f64 {
        let d = a.dim();
        assert_eq!(d, b.dim(), "components must share a dimension");
        let la = a.cholesky_l();
        let lb = b.cholesky_l();
        // tr(B^-1 A) = ||Lb^-1 La||_F^2 and the two mean terms are
        // Mahalanobis norms, so everything reduces to triangular solves.
        let cross_ab = lb
            .solve_lower_triangular(la)
            .expect("cached Cholesky factors are nonsingular")
            .norm_squared();
        let cross_ba = la
            .solve_lower_triangular(lb)
            .expect("cached Cholesky factors are nonsingular")
            .norm_squared();
        let mean_a = a.mahalanobis_sq(b.mean()).expect("dimensions already checked");
        let mean_b = b.mahalanobis_sq(a.mean()).expect("dimensions already checked");
        0.25 * (cross_ab + cross_ba - 2.0 * d as f64 + mean_a + mean_b)
    }
}

/// Plain parameter-space distance: squared Euclidean between means plus
/// squared Frobenius between covariances.
pub struct ParamEuclidean;

impl ComponentDistance for ParamEuclidean {
    fn distance(&self, a: &GaussianComponent, b: &GaussianComponent) -> f64 {
        assert_eq!(a.dim(), b.dim(), "components must share a dimension");
        let mean_sq: f64 = a
            .mean()
            .iter()
            .zip(b.mean())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        mean_sq + (a.covariance() - b.covariance()).norm_squared()
    }
}

/// Unconstrained-EM configuration.
#[derive(Debug, Clone)]
pub struct ContinuousEmConfig {
    /// Number of mixture components to fit.
    pub k: usize,
    pub max_iterations: usize,
    /// Stop once the per-iteration gain falls to `tol * max(1, |LL|)`.
    pub relative_tolerance: f64,
    /// Reseeds of collapsed components before giving up.
    pub max_reseeds: usize,
}

impl Default for ContinuousEmConfig {
    fn default() -> Self {
        ContinuousEmConfig {
            k: 1,
            max_iterations: 500,
            relative_tolerance: 1e-9,
            max_reseeds: 10,
        }
    }
}

/// Result of one unconstrained EM run.
#[derive(Debug, Clone)]
pub struct ContinuousFit {
    pub mixture: MixtureModel,
    /// Log-likelihood (nats/point) of `mixture`, from its own E-step.
    pub ll: f64,
    /// Log-likelihood per iteration.
    pub trace: Vec<f64>,
    pub reseeds: usize,
}

fn ridged(cov: DMatrix<f64>) -> DMatrix<f64> {
    let d = cov.nrows();
    let ridge = (EM_RIDGE_SCALE * cov.trace() / d as f64).max(EM_RIDGE_FLOOR);
    cov + DMatrix::identity(d, d) * ridge
}

/// Fits a `k`-component Gaussian mixture by EM from a seeded random
/// start (means drawn from the data, shared data covariance). Returns
/// the best iterate seen; reseeds collapsed components from the worst
/// explained point.
pub fn continuous_em(
    dataset: &Dataset,
    config: &ContinuousEmConfig,
    seed: u64,
) -> Result<ContinuousFit> {
    let n = dataset.n_points();
    let d = dataset.dim();
    let k = config.k;
    if k == 0 {
        return Err(Error::InvalidArgument("component count must be at least 1".into()));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "cannot fit {k} components to {n} points"
        )));
    }
    if config.max_iterations == 0 {
        return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
    }
    if !config.relative_tolerance.is_finite() || config.relative_tolerance < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "relative tolerance must be finite and non-negative, got {}",
            config.relative_tolerance
        )));
    }

    let mut rng = rng_from_seed(seed);
    let (_, data_cov) = sample_moments(dataset.as_flat(), n, d);
    let seed_cov = ridged(data_cov);
    let picks = index_sample(&mut rng, n, k).into_vec();
    let mut weights = vec![1.0 / k as f64; k];
    let mut components: Vec<GaussianComponent> = picks
        .iter()
        .map(|&i| GaussianComponent::new(dataset.row(i).to_vec(), seed_cov.clone()))
        .collect::<Result<_>>()?;

    let mut trace = Vec::new();
    let mut reseeds = 0;
    let mut prev_ll = f64::NEG_INFINITY;
    let mut best: Option<(f64, Vec<f64>, Vec<GaussianComponent>)> = None;
    let mut resp = vec![0.0; n * k];
    let mut ell = vec![0.0; n];
    let mut scratch = vec![0.0; d];

    for _ in 0..config.max_iterations {
        // E-step: responsibilities and the current log-likelihood.
        let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        for i in 0..n {
            let x = dataset.row(i);
            let row = &mut resp[i * k..(i + 1) * k];
            let mut acc = LogSumExp::new();
            for (m, comp) in components.iter().enumerate() {
                row[m] = log_w[m] + comp.log_density_with(x, &mut scratch);
                acc.push(row[m]);
            }
            ell[i] = acc.value();
            for r in row.iter_mut() {
                *r = (*r - ell[i]).exp();
            }
        }
        let ll = pairwise_sum(&ell) / n as f64;
        if !ll.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "EM log-likelihood became {ll}"
            )));
        }
        trace.push(ll);
        if ll < prev_ll - EM_DIP_TOL {
            return Err(Error::NumericalFailure(format!(
                "EM log-likelihood fell from {prev_ll} to {ll}"
            )));
        }
        let improved = best.as_ref().is_none_or(|(b, _, _)| ll > *b);
        if improved {
            best = Some((ll, weights.clone(), components.clone()));
        }
        // The ridge perturbs the exact M-step, so treat any non-gain as
        // convergence rather than demanding strict ascent.
        if prev_ll.is_finite()
            && ll - prev_ll <= config.relative_tolerance * ll.abs().max(1.0)
        {
            break;
        }
        prev_ll = ll;

        // Cluster masses; reseed any collapsed component at the worst
        // explained point and restart the step.
        let masses: Vec<f64> = (0..k)
            .map(|m| {
                let col: Vec<f64> = (0..n).map(|i| resp[i * k + m]).collect();
                pairwise_sum(&col)
            })
            .collect();
        if let Some(dead) = masses.iter().position(|&nm| nm < COLLAPSE_FRACTION * n as f64) {
            reseeds += 1;
            if reseeds > config.max_reseeds {
                return Err(Error::NumericalFailure(format!(
                    "component collapsed {reseeds} times; data cannot support {k} components"
                )));
            }
            let worst = (0..n)
                .min_by(|&a, &b| ell[a].partial_cmp(&ell[b]).expect("ll entries are finite"))
                .expect("dataset is non-empty");
            components[dead] =
                GaussianComponent::new(dataset.row(worst).to_vec(), seed_cov.clone())?;
            weights[dead] = 1.0 / k as f64;
            let total = pairwise_sum(&weights);
            for w in &mut weights {
                *w /= total;
            }
            prev_ll = f64::NEG_INFINITY;
            continue;
        }

        // M-step: weighted moments, two passes for the scatter.
        for (m, &mass) in masses.iter().enumerate() {
            let mut mean = vec![0.0; d];
            for i in 0..n {
                let r = resp[i * k + m];
                for (s, &x) in mean.iter_mut().zip(dataset.row(i)) {
                    *s += r * x;
                }
            }
            for s in &mut mean {
                *s /= mass;
            }
            let mut scatter = DMatrix::zeros(d, d);
            for i in 0..n {
                let r = resp[i * k + m];
                let x = dataset.row(i);
                for a in 0..d {
                    let da = x[a] - mean[a];
                    for b in a..d {
                        scatter[(a, b)] += r * da * (x[b] - mean[b]);
                    }
                }
            }
            for a in 0..d {
                for b in 0..a {
                    scatter[(a, b)] = scatter[(b, a)];
                }
            }
            components[m] = GaussianComponent::new(mean, ridged(scatter / mass))?;
            weights[m] = mass / n as f64;
        }
        let total = pairwise_sum(&weights);
        for w in &mut weights {
            *w /= total;
        }
    }

    let (ll, weights, components) = best.expect("at least one E-step ran");
    Ok(ContinuousFit {
        mixture: MixtureModel::new(weights, components)?,
        ll,
        trace,
        reseeds,
    })
}

/// Projects each fitted component onto its nearest candidate (ties break
/// to the lowest index), merging components that land on the same
/// candidate. Returns the projected weights and their log-likelihood on
/// the shared matrix, so lower bounds stay comparable.
pub fn project_to_set<D: ComponentDistance>(
    mixture: &MixtureModel,
    set: &ComponentSet,
    matrix: &LogLikelihoodMatrix,
    metric: &D,
) -> Result<(WeightVector, f64)> {
    if mixture.dim() != set.dim() {
        return Err(Error::DimensionMismatch(format!(
            "mixture dimension {} vs candidate dimension {}",
            mixture.dim(),
            set.dim()
        )));
    }
    if matrix.n_models() != set.len() {
        return Err(Error::InconsistentInputs(format!(
            "matrix has {} columns but the candidate set has {} components",
            matrix.n_models(),
            set.len()
        )));
    }
    let mut merged: Vec<(usize, f64)> = Vec::new();
    for (comp, &w) in mixture.components().iter().zip(mixture.weights()) {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for j in 0..set.len() {
            let dist = metric.distance(comp, set.get(j));
            assert!(!dist.is_nan(), "component distance must not be NaN");
            if dist < best_dist {
                best = j;
                best_dist = dist;
            }
        }
        match merged.iter_mut().find(|(j, _)| *j == best) {
            Some((_, acc)) => *acc += w,
            None => merged.push((best, w)),
        }
    }
    let weights = WeightVector::sparse(set.len(), &merged)?;
    let ll = mixture_ll(matrix, &weights)?;
    Ok((weights, ll))
}

fn default_refit_config() -> ConvexEmConfig {
    ConvexEmConfig {
        gap_tolerance: 1e-10,
        record_trace: false,
        ..ConvexEmConfig::default()
    }
}

/// Re-optimizes the weights of `start` over its own support (the exact
/// weight-MLE for that support, by concavity). Never decreases the
/// log-likelihood relative to `start` beyond round-off.
pub fn refit_weights(
    matrix: &LogLikelihoodMatrix,
    start: &WeightVector,
) -> Result<(WeightVector, f64)> {
    refit_weights_with(matrix, start, &default_refit_config())
}

/// [`refit_weights`] with an explicit solver configuration (the
/// configured init strategy is ignored; refitting always starts from
/// `start`'s own weights).
pub fn refit_weights_with(
    matrix: &LogLikelihoodMatrix,
    start: &WeightVector,
    config: &ConvexEmConfig,
) -> Result<(WeightVector, f64)> {
    if start.len() != matrix.n_models() {
        return Err(Error::DimensionMismatch(format!(
            "weights cover {} candidates but the matrix has {} columns",
            start.len(),
            matrix.n_models()
        )));
    }
    let support = start.effective_support();
    if support.is_empty() {
        return Err(Error::InvalidArgument("starting weights have no support".into()));
    }
    let n = matrix.n_points();
    let data = matrix.data();
    let m = matrix.n_models();
    let mut sub = Vec::with_capacity(n * support.len());
    for i in 0..n {
        let row = &data[i * m..(i + 1) * m];
        sub.extend(support.iter().map(|&j| row[j]));
    }
    let submatrix = LogLikelihoodMatrix::from_entries(n, support.len(), sub)?;
    let start_sub: Vec<f64> = support.iter().map(|&j| start.weights()[j]).collect();
    let sub_config = ConvexEmConfig {
        init: InitStrategy::Given(WeightVector::dense(start_sub)?),
        ..config.clone()
    };
    let result = convex_em(&submatrix, &sub_config)?;
    let entries: Vec<(usize, f64)> = support
        .iter()
        .zip(result.weights.weights())
        .filter(|(_, &w)| w > 0.0)
        .map(|(&j, &w)| (j, w))
        .collect();
    Ok((WeightVector::sparse(m, &entries)?, result.ub_ll))
}

/// Where a discrete solution came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SolutionProvenance {
    /// Best of a projected-EM multistart; `restart` is the winning index.
    ProjectedEm { restart: Option<usize> },
    /// Exhaustive enumeration of supports.
    BruteForce,
    /// Supplied externally.
    User,
}

/// A feasible K-sparse mixture over the candidate set: a lower bound
/// witness.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    /// Sorted candidate indices with positive weight.
    pub support: Vec<usize>,
    /// Weights aligned with `support`.
    pub weights: Vec<f64>,
    /// Log-likelihood (nats/point) of this mixture.
    pub ll: f64,
    pub provenance: SolutionProvenance,
    pub(crate) fingerprint: Option<DataFingerprint>,
}

impl DiscreteSolution {
    pub fn fingerprint(&self) -> Option<&DataFingerprint> {
        self.fingerprint.as_ref()
    }

    /// The solution's weights as a vector over all `len` candidates.
    pub fn weight_vector(&self, len: usize) -> Result<WeightVector> {
        let entries: Vec<(usize, f64)> = self
            .support
            .iter()
            .zip(&self.weights)
            .map(|(&j, &w)| (j, w))
            .collect();
        WeightVector::sparse(len, &entries)
    }

    fn from_weights(
        w: &WeightVector,
        ll: f64,
        provenance: SolutionProvenance,
        fingerprint: Option<DataFingerprint>,
    ) -> Self {
        let support = w.effective_support();
        let weights = support.iter().map(|&j| w.weights()[j]).collect();
        DiscreteSolution {
            support,
            weights,
            ll,
            provenance,
            fingerprint,
        }
    }
}

/// One multistart restart: the data-space fit, its projection, and the
/// refitted (final) log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub restart: usize,
    pub continuous_ll: f64,
    pub projected_ll: f64,
    pub refit_ll: f64,
}

/// Multistart configuration.
#[derive(Debug, Clone)]
pub struct MultistartConfig {
    pub restarts: usize,
    /// Restart `r` uses seed `base_seed + r`.
    pub base_seed: u64,
    pub em: ContinuousEmConfig,
    /// Re-optimize weights over each projected support. Off reproduces
    /// the plain projection pipeline; records then carry
    /// `refit_ll == projected_ll`.
    pub refit: bool,
}

/// Runs projected EM from `restarts` seeded starts in parallel and keeps
/// the best refitted solution (ties break to the lowest restart index).
/// Individual restarts may fail (e.g. repeated collapse); the call fails
/// only when every restart does.
pub fn projected_em_multistart<D: ComponentDistance>(
    dataset: &Dataset,
    set: &ComponentSet,
    matrix: &LogLikelihoodMatrix,
    metric: &D,
    config: &MultistartConfig,
) -> Result<(DiscreteSolution, Vec<RestartRecord>)> {
    if config.restarts == 0 {
        return Err(Error::InvalidArgument("at least one restart required".into()));
    }
    let outcomes: Vec<Result<(RestartRecord, WeightVector)>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let fit = continuous_em(dataset, &config.em, config.base_seed + r as u64)?;
            let (projected, projected_ll) = project_to_set(&fit.mixture, set, matrix, metric)?;
            let (weights, refit_ll) = if config.refit {
                refit_weights(matrix, &projected)?
            } else {
                (projected, projected_ll)
            };
            Ok((
                RestartRecord {
                    restart: r,
                    continuous_ll: fit.ll,
                    projected_ll,
                    refit_ll,
                },
                weights,
            ))
        })
        .collect();
    let mut records = Vec::new();
    let mut best: Option<(RestartRecord, WeightVector)> = None;
    let mut first_error = None;
    for outcome in outcomes {
        match outcome {
            Ok((record, weights)) => {
                if best.as_ref().is_none_or(|(b, _)| record.refit_ll > b.refit_ll) {
                    best = Some((record, weights.clone()));
                }
                records.push(record);
            }
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    match best {
        Some((record, weights)) => Ok((
            DiscreteSolution::from_weights(
                &weights,
                record.refit_ll,
                SolutionProvenance::ProjectedEm {
                    restart: Some(record.restart),
                },
                matrix.fingerprint().copied(),
            ),
            records,
        )),
        None => Err(first_error.expect("no successes implies at least one error")),
    }
}

/// Exhaustive-search configuration.
#[derive(Debug, Clone)]
pub struct BruteForceConfig {
    /// Upper limit on the number of supports that will be enumerated.
    pub max_supports: u128,
    /// Weight solver used per support.
    pub refit: ConvexEmConfig,
}

impl Default for BruteForceConfig {
    fn default() -> Self {
        BruteForceConfig {
            max_supports: 200_000,
            refit: default_refit_config(),
        }
    }
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)?;
        acc /= (i + 1) as u128;
    }
    Some(acc)
}

/// The exact K-sparse MLE by enumerating every size-`k` support and
/// refitting weights on each. The mixture-likelihood of at most `k`
/// components is attained in the closure of exactly-`k` supports, so
/// enumerating size-`k` subsets suffices.
pub fn brute_force_mle(
    matrix: &LogLikelihoodMatrix,
    k: usize,
    config: &BruteForceConfig,
) -> Result<DiscreteSolution> {
    let m = matrix.n_models();
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!(
            "support size {k} must lie in 1..={m}"
        )));
    }
    let count = binomial(m, k).ok_or_else(|| Error::ResourceLimit {
        what: "support enumeration".into(),
        required: u128::MAX,
        budget: config.max_supports,
        unit: "supports",
    })?;
    if count > config.max_supports {
        return Err(Error::ResourceLimit {
            what: "support enumeration".into(),
            required: count,
            budget: config.max_supports,
            unit: "supports",
        });
    }
    let mut best: Option<(WeightVector, f64)> = None;
    for support in (0..m).combinations(k) {
        let start = WeightVector::uniform_on(m, &support)?;
        let (weights, ll) = refit_weights_with(matrix, &start, &config.refit)?;
        if best.as_ref().is_none_or(|(_, b)| ll > *b) {
            best = Some((weights, ll));
        }
    }
    let (weights, ll) = best.expect("at least one support was enumerated");
    Ok(DiscreteSolution::from_weights(
        &weights,
        ll,
        SolutionProvenance::BruteForce,
        matrix.fingerprint().copied(),
    ))
}

/// Mean log-likelihood of uniformly weighted, uniformly drawn size-`k`
/// supports: the calibration floor for the optimality ratio.
pub fn random_baseline_ll(
    matrix: &LogLikelihoodMatrix,
    k: usize,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let m = matrix.n_models();
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!(
            "support size {k} must lie in 1..={m}"
        )));
    }
    if draws == 0 {
        return Err(Error::InvalidArgument("at least one draw required".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut lls = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut support = index_sample(&mut rng, m, k).into_vec();
        support.sort_unstable();
        let w = WeightVector::uniform_on(m, &support)?;
        lls.push(mixture_ll(matrix, &w)?);
    }
    Ok(pairwise_sum(&lls) / draws as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::build_matrix;
    use crate::model::{sample_moments, ComponentSet, Dataset, SetProvenance};
    use crate::sample::{sample_mixture, RandomMixtureParams};
    use crate::testing::random_instance;

    fn gauss_1d(mean: f64, var: f64) -> GaussianComponent {
        GaussianComponent::new(vec![mean], DMatrix::from_row_slice(1, 1, &[var])).unwrap()
    }

    #[test]
    fn symmetrized_kl_known_values() {
        // Unit-variance mean shift m: Jeffreys divergence is m^2 / 2.
        let a = gauss_1d(0.0, 1.0);
        let b = gauss_1d(3.0, 1.0);
        let kl = SymmetrizedKl.distance(&a, &b);
        assert!((kl - 4.5).abs() < 1e-12, "got {kl}");
        // Same mean, variances v and 1: (v + 1/v - 2) / 4.
        let c = gauss_1d(0.0, 4.0);
        let kl = SymmetrizedKl.distance(&a, &c);
        assert!((kl - (4.0 + 0.25 - 2.0) / 4.0).abs() < 1e-12, "got {kl}");
        assert_eq!(SymmetrizedKl.distance(&a, &a), 0.0);
        let asym = SymmetrizedKl.distance(&b, &a);
        assert!((SymmetrizedKl.distance(&a, &b) - asym).abs() < 1e-12);
    }

    #[test]
    fn param_euclidean_known_value() {
        let a = gauss_1d(0.0, 1.0);
        let b = gauss_1d(2.0, 3.0);
        let dist = ParamEuclidean.distance(&a, &b);
        assert!((dist - (4.0 + 4.0)).abs() < 1e-12, "got {dist}");
    }

    #[test]
    fn projection_picks_nearest_and_merges() {
        let set = ComponentSet::new(
            vec![gauss_1d(0.0, 1.0), gauss_1d(5.0, 1.0), gauss_1d(10.0, 1.0)],
            SetProvenance::Explicit,
        )
        .unwrap();
        let dataset = Dataset::from_rows(vec![vec![0.0], vec![5.0], vec![10.0]]).unwrap();
        let matrix = build_matrix(&dataset, &set).unwrap();
        // Two fitted components both nearest to candidate 1 merge there.
        let mixture = MixtureModel::new(
            vec![0.3, 0.3, 0.4],
            vec![gauss_1d(4.4, 1.0), gauss_1d(5.4, 1.0), gauss_1d(9.2, 1.0)],
        )
        .unwrap();
        let (w, ll) = project_to_set(&mixture, &set, &matrix, &SymmetrizedKl).unwrap();
        assert_eq!(w.effective_support(), vec![1, 2]);
        assert!((w.weights()[1] - 0.6).abs() < 1e-12);
        assert!((w.weights()[2] - 0.4).abs() < 1e-12);
        assert!(ll.is_finite());
        // Equidistant fit breaks the tie toward the lower index.
        let mid = MixtureModel::new(vec![1.0], vec![gauss_1d(2.5, 1.0)]).unwrap();
        let (w, _) = project_to_set(&mid, &set, &matrix, &SymmetrizedKl).unwrap();
        assert_eq!(w.effective_support(), vec![0]);
    }

    #[test]
    fn refit_never_loses_likelihood() {
        let (dataset, set) = random_instance(11, 50, 2, 10);
        let matrix = build_matrix(&dataset, &set).unwrap();
        let start = WeightVector::sparse(10, &[(2, 0.9), (7, 0.1)]).unwrap();
        let before = mixture_ll(&matrix, &start).unwrap();
        let (after_w, after_ll) = refit_weights(&matrix, &start).unwrap();
        assert!(after_ll >= before - 1e-12, "{after_ll} < {before}");
        assert_eq!(after_w.effective_support(), vec![2, 7]);
        let direct = mixture_ll(&matrix, &after_w).unwrap();
        assert!((after_ll - direct).abs() < 1e-12);
    }

    #[test]
    fn refit_on_full_support_matches_convex_solver() {
        let (dataset, set) = random_instance(12, 40, 2, 6);
        let matrix = build_matrix(&dataset, &set).unwrap();
        let config = ConvexEmConfig {
            gap_tolerance: 1e-12,
            ..default_refit_config()
        };
        let (_, refit_ll) =
            refit_weights_with(&matrix, &WeightVector::uniform(6).unwrap(), &config).unwrap();
        let full = convex_em(&matrix, &ConvexEmConfig { gap_tolerance: 1e-12, ..ConvexEmConfig::default() })
            .unwrap();
        assert!(
            (refit_ll - full.ub_ll).abs() < 1e-9,
            "{refit_ll} vs {}",
            full.ub_ll
        );
    }

    #[test]
    fn continuous_em_single_component_matches_moments() {
        let (dataset, _) = random_instance(13, 80, 2, 1);
        let fit = continuous_em(&dataset, &ContinuousEmConfig::default(), 5).unwrap();
        let (mean, cov) = sample_moments(dataset.as_flat(), 80, 2);
        let comp = &fit.mixture.components()[0];
        for (a, b) in comp.mean().iter().zip(&mean) {
            assert!((a - b).abs() < 1e-9, "mean {a} vs {b}");
        }
        let expected = ridged(cov);
        assert!((comp.covariance() - expected).norm() < 1e-9);
        assert_eq!(fit.mixture.weights(), &[1.0]);
    }

    #[test]
    fn continuous_em_trace_ascends() {
        let params = RandomMixtureParams::default();
        let mixture = crate::sample::random_mixture(3, &params, 21).unwrap();
        let dataset = sample_mixture(&mixture, 200, 22).unwrap();
        let fit = continuous_em(
            &dataset,
            &ContinuousEmConfig {
                k: 3,
                ..ContinuousEmConfig::default()
            },
            23,
        )
        .unwrap();
        for pair in fit.trace.windows(2) {
            assert!(
                pair[1] >= pair[0] - EM_DIP_TOL,
                "EM dipped: {} -> {}",
                pair[0],
                pair[1]
            );
        }
        assert!(fit.ll >= *fit.trace.first().unwrap());
    }

    #[test]
    fn brute_force_finds_the_planted_support() {
        // Three tight clusters; candidates at the right spots plus decoys.
        let mut rows = Vec::new();
        for c in [-6.0, 0.0, 6.0] {
            for i in 0..20 {
                rows.push(vec![c + 0.01 * (i as f64 - 10.0)]);
            }
        }
        let dataset = Dataset::from_rows(rows).unwrap();
        let set = ComponentSet::new(
            vec![
                gauss_1d(-6.0, 0.01),
                gauss_1d(-3.0, 0.01),
                gauss_1d(0.0, 0.01),
                gauss_1d(3.0, 0.01),
                gauss_1d(6.0, 0.01),
            ],
            SetProvenance::Explicit,
        )
        .unwrap();
        let matrix = build_matrix(&dataset, &set).unwrap();
        let solution = brute_force_mle(&matrix, 3, &BruteForceConfig::default()).unwrap();
        assert_eq!(solution.support, vec![0, 2, 4]);
        for &w in &solution.weights {
            assert!((w - 1.0 / 3.0).abs() < 0.05, "clusters are balanced, got {w}");
        }
        assert_eq!(solution.provenance, SolutionProvenance::BruteForce);
    }

    #[test]
    fn brute_force_respects_the_budget() {
        let (dataset, set) = random_instance(14, 10, 1, 12);
        let matrix = build_matrix(&dataset, &set).unwrap();
        let config = BruteForceConfig {
            max_supports: 10,
            ..BruteForceConfig::default()
        };
        match brute_force_mle(&matrix, 3, &config) {
            Err(Error::ResourceLimit { required, budget, .. }) => {
                assert_eq!(required, 220, "C(12, 3)");
                assert_eq!(budget, 10);
            }
            other => panic!("expected a resource limit, got {other:?}"),
        }
    }

    #[test]
    fn binomial_handles_edges() {
        assert_eq!(binomial(10, 0), Some(1));
        assert_eq!(binomial(10, 10), Some(1));
        assert_eq!(binomial(10, 3), Some(120));
        assert_eq!(binomial(3, 10), Some(0));
        assert_eq!(binomial(200, 100), None, "overflows u128");
    }

    #[test]
    fn random_baseline_is_deterministic_and_bounded() {
        let (dataset, set) = random_instance(15, 40, 2, 8);
        let matrix = build_matrix(&dataset, &set).unwrap();
        let a = random_baseline_ll(&matrix, 3, 16, 99).unwrap();
        let b = random_baseline_ll(&matrix, 3, 16, 99).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        let best = brute_force_mle(&matrix, 3, &BruteForceConfig::default()).unwrap();
        assert!(a <= best.ll + 1e-12, "baseline {a} beat the exact MLE {}", best.ll);
    }

    #[test]
    fn multistart_returns_records_and_best() {
        let params = RandomMixtureParams::default();
        let mixture = crate::sample::random_mixture(2, &params, 31).unwrap();
        let dataset = sample_mixture(&mixture, 150, 32).unwrap();
        let grid_comps: Vec<GaussianComponent> = mixture
            .components()
            .iter()
            .cloned()
            .chain((0..6).map(|i| {
                GaussianComponent::new(
                    vec![i as f64 - 3.0, 0.0],
                    DMatrix::identity(2, 2),
                )
                .unwrap()
            }))
            .collect();
        let set = ComponentSet::new(grid_comps, SetProvenance::Explicit).unwrap();
        let matrix = build_matrix(&dataset, &set).unwrap();
        let config = MultistartConfig {
            restarts: 4,
            base_seed: 77,
            refit: true,
            em: ContinuousEmConfig {
                k: 2,
                ..ContinuousEmConfig::default()
            },
        };
        let (solution, records) =
            projected_em_multistart(&dataset, &set, &matrix, &SymmetrizedKl, &config).unwrap();
        assert_eq!(records.len(), 4);
        for rec in &records {
            assert!(
                rec.refit_ll >= rec.projected_ll - 1e-10,
                "refit must not lose likelihood: {} -> {}",
                rec.projected_ll,
                rec.refit_ll
            );
            assert!(solution.ll >= rec.refit_ll - 1e-12, "best solution must dominate");
        }
        assert_eq!(solution.support.len(), solution.weights.len());
        assert!(solution.support.len() <= 2, "at most k components");
        match solution.provenance {
            SolutionProvenance::ProjectedEm { restart: Some(r) } => {
                let rec = records.iter().find(|rec| rec.restart == r).unwrap();
                assert_eq!(rec.refit_ll, solution.ll);
            }
            ref other => panic!("unexpected provenance {other:?}"),
        }
    }
}
