//! Seeded data generators: Gaussian mixtures, axis-aligned rectangle
//! mixtures (a deliberately misspecified regime), and random 2-D test
//! instances.
//!
//! Per-point draw order is fixed (one component choice, then the
//! coordinate draws), so generated datasets are stable across platforms
//! and releases of this crate's internals.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::rotated_covariance_2d;
use crate::likelihood::WeightVector;
use crate::math::pairwise_sum;
use crate::model::{ComponentSet, Dataset, GaussianComponent, MixtureModel};
use crate::rng::rng_from_seed;

/// Draws `n` labeled points from a mixture. Labels record the generating
/// component.
pub fn sample_mixture(model: &MixtureModel, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot sample 0 points".into()));
    }
    let d = model.dim();
    let mut rng = rng_from_seed(seed);
    let mut points = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut z = vec![0.0f64; d];
    for _ in 0..n {
        let k = pick_index(model.weights(), rng.random::<f64>());
        for slot in z.iter_mut() {
            *slot = StandardNormal.sample(&mut rng);
        }
        let comp = &model.components()[k];
        let l = comp.cholesky_l();
        for a in 0..d {
            let mut x = comp.mean()[a];
            for b in 0..=a {
                x += l[(a, b)] * z[b];
            }
            points.push(x);
        }
        labels.push(k);
    }
    Dataset::from_flat(n, d, points)?.with_labels(labels)
}

/// First index whose cumulative weight exceeds `u`; never selects a
/// zero-weight entry.
fn pick_index(weights: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            cum += w;
            last_positive = k;
            if u < cum {
                return k;
            }
        }
    }
    // Round-off can leave cum marginally below 1; fall back to the last
    // positive-weight component.
    last_positive
}

/// An axis-aligned box with strictly positive extent on every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Rectangle {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Rectangle {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(Error::DimensionMismatch(
                "rectangle corners must share a nonzero dimension".into(),
            ));
        }
        for (a, (&l, &h)) in lo.iter().zip(&hi).enumerate() {
            if !l.is_finite() || !h.is_finite() || !(h > l) {
                return Err(Error::InvalidArgument(format!(
                    "rectangle axis {a} must satisfy lo < hi, got [{l}, {h}]"
                )));
            }
        }
        Ok(Rectangle { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&v, (&l, &h))| v >= l && v <= h)
    }
}

/// A weighted union of uniform distributions on rectangles: data that no
/// Gaussian mixture matches exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RectangleMixture {
    rectangles: Vec<Rectangle>,
    weights: Vec<f64>,
}

impl RectangleMixture {
    pub fn new(rectangles: Vec<Rectangle>, weights: Vec<f64>) -> Result<Self> {
        if rectangles.is_empty() {
            return Err(Error::InvalidArgument("no rectangles given".into()));
        }
        if weights.len() != rectangles.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} rectangles",
                weights.len(),
                rectangles.len()
            )));
        }
        let d = rectangles[0].dim();
        if rectangles.iter().any(|r| r.dim() != d) {
            return Err(Error::DimensionMismatch(
                "rectangles have unequal dimensions".into(),
            ));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "rectangle weights must be finite and non-negative".into(),
            ));
        }
        let total = pairwise_sum(&weights);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "rectangle weights sum to {total}, not 1"
            )));
        }
        Ok(RectangleMixture {
            rectangles,
            weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.rectangles[0].dim()
    }

    pub fn rectangles(&self) -> &[Rectangle] {
        &self.rectangles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Draws `n` labeled points, each uniform on its chosen rectangle.
pub fn sample_rectangles(mix: &RectangleMixture, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("cannot sample 0 points".into()));
    }
    let d = mix.dim();
    let mut rng = rng_from_seed(seed);
    let mut points = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = pick_index(mix.weights(), rng.random::<f64>());
        let rect = &mix.rectangles()[k];
        for a in 0..d {
            let u = rng.random::<f64>();
            points.push(rect.lo[a] + u * (rect.hi[a] - rect.lo[a]));
        }
        labels.push(k);
    }
    Dataset::from_flat(n, d, points)?.with_labels(labels)
}

/// Ranges for random 2-D mixture instances.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomMixtureParams {
    /// Means are drawn uniformly from `[-w, w]^2`.
    pub mean_half_width: f64,
    /// Covariance eigenvalues are drawn log-uniformly from this range.
    pub eigenvalue_range: (f64, f64),
}

impl Default for RandomMixtureParams {
    fn default() -> Self {
        RandomMixtureParams {
            mean_half_width: 3.0,
            eigenvalue_range: (0.2, 2.0),
        }
    }
}

/// A random `k`-component 2-D mixture. Weights are normalized
/// `0.5 + U[0,1)` draws, so every component keeps weight at least
/// `1/(3k)`; covariances have log-uniform eigenvalues and a uniform
/// principal-axis angle.
pub fn random_mixture(k: usize, params: &RandomMixtureParams, seed: u64) -> Result<MixtureModel> {
    if k == 0 {
        return Err(Error::InvalidArgument("mixture needs at least one component".into()));
    }
    let (lo, hi) = params.eigenvalue_range;
    if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "eigenvalue range [{lo}, {hi}] must be positive and ordered"
        )));
    }
    if !params.mean_half_width.is_finite() || params.mean_half_width < 0.0 {
        return Err(Error::InvalidArgument(
            "mean half-width must be finite and non-negative".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let w = params.mean_half_width;
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    let mut components = Vec::with_capacity(k);
    for _ in 0..k {
        let mx = -w + 2.0 * w * rng.random::<f64>();
        let my = -w + 2.0 * w * rng.random::<f64>();
        let l1 = (ln_lo + (ln_hi - ln_lo) * rng.random::<f64>()).exp();
        let l2 = (ln_lo + (ln_hi - ln_lo) * rng.random::<f64>()).exp();
        let angle = std::f64::consts::PI * rng.random::<f64>();
        components.push(GaussianComponent::new(
            vec![mx, my],
            rotated_covariance_2d(l1, l2, angle),
        )?);
    }
    let mut weights: Vec<f64> = (0..k).map(|_| 0.5 + rng.random::<f64>()).collect();
    let total = pairwise_sum(&weights);
    for w in &mut weights {
        *w /= total;
    }
    MixtureModel::new(weights, components)
}

/// A data-generating process for experiments: either a Gaussian mixture
/// (well-specified) or a rectangle mixture (misspecified).
#[derive(Debug, Clone)]
pub enum DataGenerator {
    Mixture(MixtureModel),
    Rectangles(RectangleMixture),
}

impl DataGenerator {
    pub fn dim(&self) -> usize {
        match self {
            DataGenerator::Mixture(m) => m.dim(),
            DataGenerator::Rectangles(r) => r.dim(),
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        match self {
            DataGenerator::Mixture(m) => sample_mixture(m, n, seed),
            DataGenerator::Rectangles(r) => sample_rectangles(r, n, seed),
        }
    }

    /// The generator expressed as sparse weights over `set`, when every
    /// positive-weight generating component is a member (parameters equal
    /// within `1e-12` entrywise). `None` for rectangle generators or when
    /// any component is missing from the set.
    pub fn true_weights_in(&self, set: &ComponentSet) -> Option<WeightVector> {
        let model = match self {
            DataGenerator::Mixture(m) => m,
            DataGenerator::Rectangles(_) => return None,
        };
        if model.dim() != set.dim() {
            return None;
        }
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for (w, comp) in model.weights().iter().zip(model.components()) {
            if *w == 0.0 {
                continue;
            }
            let found = set.components().iter().position(|cand| {
                comp.mean()
                    .iter()
                    .zip(cand.mean())
                    .all(|(a, b)| (a - b).abs() <= 1e-12)
                    && comp
                        .covariance()
                        .iter()
                        .zip(cand.covariance().iter())
                        .all(|(a, b)| (a - b).abs() <= 1e-12)
            })?;
            match entries.iter_mut().find(|(i, _)| *i == found) {
                Some((_, acc)) => *acc += *w,
                None => entries.push((found, *w)),
            }
        }
        WeightVector::sparse(set.len(), &entries).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SetProvenance;
    use nalgebra::DMatrix;

    fn far_two_component() -> MixtureModel {
        let c0 = GaussianComponent::new(vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        let c1 = GaussianComponent::new(vec![20.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        MixtureModel::new(vec![0.8, 0.2], vec![c0, c1]).unwrap()
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let model = far_two_component();
        let a = sample_mixture(&model, 64, 7).unwrap();
        let b = sample_mixture(&model, 64, 7).unwrap();
        assert_eq!(a.as_flat(), b.as_flat(), "same seed, same data");
        assert_eq!(a.labels(), b.labels());
        let c = sample_mixture(&model, 64, 8).unwrap();
        assert_ne!(a.as_flat(), c.as_flat(), "different seed, different data");
    }

    #[test]
    fn labels_track_generating_components() {
        let model = far_two_component();
        let data = sample_mixture(&model, 2000, 11).unwrap();
        let labels = data.labels().unwrap();
        let ones = labels.iter().filter(|&&l| l == 1).count();
        // Binomial(2000, 0.2): mean 400, sd ~ 17.9.
        assert!((330..=470).contains(&ones), "label frequency tracks weights, got {ones}");
        for i in 0..data.n_points() {
            let x = data.row(i);
            let near1 = (x[0] - 20.0).abs() < 10.0;
            assert_eq!(labels[i] == 1, near1, "point {i} lies near its labeled mean");
        }
    }

    #[test]
    fn sample_moments_approach_model_moments() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let comp = GaussianComponent::new(vec![1.0, -2.0], cov.clone()).unwrap();
        let model = MixtureModel::new(vec![1.0], vec![comp]).unwrap();
        let data = sample_mixture(&model, 20_000, 3).unwrap();
        let (mean, scatter) = crate::model::sample_moments(data.as_flat(), 20_000, 2);
        assert!((mean[0] - 1.0).abs() < 0.05 && (mean[1] + 2.0).abs() < 0.05);
        for a in 0..2 {
            for b in 0..2 {
                assert!(
                    (scatter[(a, b)] - cov[(a, b)]).abs() < 0.08,
                    "covariance entry ({a},{b}) off: {}",
                    scatter[(a, b)]
                );
            }
        }
    }

    #[test]
    fn zero_weight_components_are_never_sampled() {
        let model = MixtureModel::new(
            vec![1.0, 0.0],
            vec![
                GaussianComponent::new(vec![0.0], DMatrix::from_row_slice(1, 1, &[1.0])).unwrap(),
                GaussianComponent::new(vec![100.0], DMatrix::from_row_slice(1, 1, &[1.0])).unwrap(),
            ],
        )
        .unwrap();
        let data = sample_mixture(&model, 500, 5).unwrap();
        assert!(data.labels().unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn rectangle_samples_stay_in_bounds() {
        let mix = RectangleMixture::new(
            vec![
                Rectangle::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap(),
                Rectangle::new(vec![5.0, 5.0], vec![6.0, 6.0]).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let data = sample_rectangles(&mix, 400, 13).unwrap();
        let labels = data.labels().unwrap();
        for i in 0..data.n_points() {
            let rect = &mix.rectangles()[labels[i]];
            assert!(rect.contains(data.row(i)), "point {i} escaped its rectangle");
        }
        let ones = labels.iter().filter(|&&l| l == 1).count();
        assert!((150..=250).contains(&ones), "roughly balanced labels, got {ones}");
    }

    #[test]
    fn rectangle_validation() {
        assert!(Rectangle::new(vec![0.0], vec![0.0]).is_err(), "zero extent");
        assert!(Rectangle::new(vec![1.0], vec![0.0]).is_err(), "inverted");
        assert!(Rectangle::new(vec![], vec![]).is_err(), "empty");
        let r1 = Rectangle::new(vec![0.0], vec![1.0]).unwrap();
        let r2 = Rectangle::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(
            RectangleMixture::new(vec![r1.clone(), r2], vec![0.5, 0.5]).is_err(),
            "mixed dimensions"
        );
        assert!(RectangleMixture::new(vec![r1], vec![0.9]).is_err(), "weights must sum to 1");
    }

    #[test]
    fn random_mixture_respects_parameter_ranges() {
        let params = RandomMixtureParams {
            mean_half_width: 2.0,
            eigenvalue_range: (0.3, 1.5),
        };
        let model = random_mixture(4, &params, 99).unwrap();
        assert_eq!(model.n_components(), 4);
        for comp in model.components() {
            assert!(comp.mean().iter().all(|v| v.abs() <= 2.0));
            let eigs = comp.covariance().clone().symmetric_eigen().eigenvalues;
            for &e in eigs.iter() {
                assert!(
                    (0.3 - 1e-9..=1.5 + 1e-9).contains(&e),
                    "eigenvalue {e} outside requested range"
                );
            }
        }
        for &w in model.weights() {
            assert!(w >= 1.0 / 12.0 - 1e-12, "weights bounded away from zero, got {w}");
        }
        let again = random_mixture(4, &params, 99).unwrap();
        assert_eq!(model.weights(), again.weights(), "deterministic per seed");
    }

    #[test]
    fn true_weights_found_when_components_are_members() {
        let model = far_two_component();
        let decoy = GaussianComponent::new(vec![-5.0, 3.0], DMatrix::identity(2, 2)).unwrap();
        let set = ComponentSet::new(
            vec![
                decoy,
                model.components()[1].clone(),
                model.components()[0].clone(),
            ],
            SetProvenance::Explicit,
        )
        .unwrap();
        let gen = DataGenerator::Mixture(model);
        let w = gen.true_weights_in(&set).expect("both components are members");
        assert_eq!(w.weights(), &[0.0, 0.2, 0.8]);
        assert_eq!(w.declared_support(), Some(&[1usize, 2][..]));
    }

    #[test]
    fn true_weights_absent_when_a_component_is_missing() {
        let model = far_two_component();
        let set = ComponentSet::new(
            vec![model.components()[0].clone()],
            SetProvenance::Explicit,
        )
        .unwrap();
        assert!(DataGenerator::Mixture(model).true_weights_in(&set).is_none());
        let rect = RectangleMixture::new(
            vec![Rectangle::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()],
            vec![1.0],
        )
        .unwrap();
        let set2 = ComponentSet::new(
            vec![GaussianComponent::new(vec![0.0, 0.0], DMatrix::identity(2, 2)).unwrap()],
            SetProvenance::Explicit,
        )
        .unwrap();
        assert!(
            DataGenerator::Rectangles(rect).true_weights_in(&set2).is_none(),
            "rectangle generators have no true mixture weights"
        );
    }
}
