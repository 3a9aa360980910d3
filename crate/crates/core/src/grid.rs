//! Structured 2-D candidate grids: mean sites crossed with covariances
//! parameterized by eigenvalue pairs and principal-axis angles.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ComponentSet, GaussianComponent, SetProvenance};

/// How eigenvalue lists expand into covariance shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenPairing {
    /// Unordered value pairs: each single eigenvalue contributes one
    /// isotropic covariance (angle-free), and each pair of distinct
    /// eigenvalues is swept over all angles with the larger value on the
    /// rotated major axis. Per mean: `u + C(u,2) * |angles|` members.
    #[default]
    OrderedPairs,
    /// Full cartesian product `eigenvalues^2 x angles`. Simpler counting,
    /// but isotropic shapes repeat once per angle. Per mean:
    /// `u^2 * |angles|` members.
    FullCross,
}

/// Declarative description of a 2-D covariance/mean grid.
///
/// Members are enumerated means-outer, covariance shapes inner; the shape
/// order within a mean is: isotropic members in eigenvalue-list order, then
/// index pairs `(i, j)` with `i < j` in lexicographic order, angles
/// innermost (for `full-cross`: ordered pairs `(i, j)` row-major, angles
/// innermost). This order is part of the contract; candidate indices stay
/// meaningful across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Candidate means.
    pub mean_sites: Vec<[f64; 2]>,
    /// Candidate covariance eigenvalues; positive, pairwise distinct.
    pub eigenvalues: Vec<f64>,
    /// Principal-axis angles in radians, each in `[0, pi)`, pairwise
    /// distinct.
    pub angles: Vec<f64>,
    #[serde(default)]
    pub pairing: EigenPairing,
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if self.mean_sites.is_empty() {
            return Err(Error::InvalidArgument("grid has no mean sites".into()));
        }
        if self
            .mean_sites
            .iter()
            .any(|s| s.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidArgument("grid mean site is non-finite".into()));
        }
        if self.eigenvalues.is_empty() {
            return Err(Error::InvalidArgument("grid has no eigenvalues".into()));
        }
        for (i, &v) in self.eigenvalues.iter().enumerate() {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "grid eigenvalue {i} must be finite and positive, got {v}"
                )));
            }
            if self.eigenvalues[..i].contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "grid eigenvalues must be pairwise distinct, {v} repeats"
                )));
            }
        }
        if self.angles.is_empty() {
            return Err(Error::InvalidArgument("grid has no angles".into()));
        }
        for (i, &a) in self.angles.iter().enumerate() {
            if !a.is_finite() || !(0.0..std::f64::consts::PI).contains(&a) {
                return Err(Error::InvalidArgument(format!(
                    "grid angle {i} must lie in [0, pi), got {a}"
                )));
            }
            if self.angles[..i].contains(&a) {
                return Err(Error::InvalidArgument(format!(
                    "grid angles must be pairwise distinct, {a} repeats"
                )));
            }
        }
        Ok(())
    }

    /// Number of covariance shapes generated per mean site.
    pub fn shapes_per_mean(&self) -> u128 {
        let u = self.eigenvalues.len() as u128;
        let angles = self.angles.len() as u128;
        match self.pairing {
            EigenPairing::OrderedPairs => u + u * (u - 1) / 2 * angles,
            EigenPairing::FullCross => u * u * angles,
        }
    }

    /// Total member count without materializing anything.
    pub fn expected_count(&self) -> u128 {
        self.mean_sites.len() as u128 * self.shapes_per_mean()
    }
}

/// Inclusive linspace lattice of mean sites, row-major over y then x
/// varying fastest in x. A count of 1 collapses to the lower endpoint.
pub fn lattice_means(
    x_range: (f64, f64),
    x_count: usize,
    y_range: (f64, f64),
    y_count: usize,
) -> Vec<[f64; 2]> {
    let axis = |(lo, hi): (f64, f64), count: usize| -> Vec<f64> {
        if count <= 1 {
            vec![lo]
        } else {
            (0..count)
                .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                .collect()
        }
    };
    let xs = axis(x_range, x_count);
    let ys = axis(y_range, y_count);
    let mut sites = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            sites.push([x, y]);
        }
    }
    sites
}

/// `count` evenly spaced angles `k * pi / count`, `k = 0..count`.
pub fn uniform_angles(count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| k as f64 * std::f64::consts::PI / count as f64)
        .collect()
}

/// Covariance with eigenvalues `(l1, l2)` and major axis rotated by `angle`.
pub(crate) fn rotated_covariance_2d(l1: f64, l2: f64, angle: f64) -> DMatrix<f64> {
    let (s, c) = angle.sin_cos();
    let s11 = c * c * l1 + s * s * l2;
    let s22 = s * s * l1 + c * c * l2;
    let s12 = c * s * (l1 - l2);
    DMatrix::from_row_slice(2, 2, &[s11, s12, s12, s22])
}

/// Materializes the grid in its documented enumeration order.
pub fn build_grid_set(spec: &GridSpec) -> Result<ComponentSet> {
    spec.validate()?;
    let count = spec.expected_count();
    if count > usize::MAX as u128 {
        return Err(Error::ResourceLimit {
            what: "grid materialization".into(),
            required: count,
            budget: usize::MAX as u128,
            unit: "components",
        });
    }
    // Covariance shapes are shared across means; build them once.
    let mut shapes: Vec<DMatrix<f64>> = Vec::new();
    match spec.pairing {
        EigenPairing::OrderedPairs => {
            for &v in &spec.eigenvalues {
                shapes.push(DMatrix::from_row_slice(2, 2, &[v, 0.0, 0.0, v]));
            }
            for i in 0..spec.eigenvalues.len() {
                for j in (i + 1)..spec.eigenvalues.len() {
                    let l1 = spec.eigenvalues[i].max(spec.eigenvalues[j]);
                    let l2 = spec.eigenvalues[i].min(spec.eigenvalues[j]);
                    for &a in &spec.angles {
                        shapes.push(rotated_covariance_2d(l1, l2, a));
                    }
                }
            }
        }
        EigenPairing::FullCross => {
            for &l1 in &spec.eigenvalues {
                for &l2 in &spec.eigenvalues {
                    for &a in &spec.angles {
                        shapes.push(rotated_covariance_2d(l1, l2, a));
                    }
                }
            }
        }
    }
    let mut components = Vec::with_capacity(count as usize);
    for site in &spec.mean_sites {
        for shape in &shapes {
            components.push(GaussianComponent::new(site.to_vec(), shape.clone())?);
        }
    }
    ComponentSet::new(components, SetProvenance::Grid { spec: spec.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn base_spec() -> GridSpec {
        GridSpec {
            mean_sites: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            eigenvalues: vec![1.0, 2.0, 4.0],
            angles: vec![0.0, PI / 2.0],
            pairing: EigenPairing::OrderedPairs,
        }
    }

    #[test]
    fn ordered_pairs_count() {
        // Per mean: 3 isotropic + C(3,2) = 3 pairs x 2 angles = 9; 4 means -> 36.
        let spec = base_spec();
        assert_eq!(spec.expected_count(), 36);
        let set = build_grid_set(&spec).unwrap();
        assert_eq!(set.len() as u128, spec.expected_count());
    }

    #[test]
    fn full_cross_count() {
        let spec = GridSpec {
            pairing: EigenPairing::FullCross,
            ..base_spec()
        };
        assert_eq!(spec.expected_count(), 4 * 9 * 2);
        let set = build_grid_set(&spec).unwrap();
        assert_eq!(set.len() as u128, spec.expected_count());
    }

    #[test]
    fn published_scale_configuration_is_order_one_million() {
        // 3000 means, 12 eigenvalues, 8 angles under unordered pairing:
        // 3000 * (12 + 66 * 8) = 1,620,000.
        let spec = GridSpec {
            mean_sites: vec![[0.0, 0.0]; 3000],
            eigenvalues: (0..12).map(|i| 0.1 * 1.5_f64.powi(i)).collect(),
            angles: uniform_angles(8),
            pairing: EigenPairing::OrderedPairs,
        };
        assert_eq!(spec.expected_count(), 1_620_000);
    }

    #[test]
    fn enumeration_order_is_means_outer_shapes_inner() {
        let spec = base_spec();
        let set = build_grid_set(&spec).unwrap();
        let per_mean = spec.shapes_per_mean() as usize;
        // First member: mean 0, first isotropic shape.
        assert_eq!(set.get(0).mean(), &[0.0, 0.0]);
        assert_eq!(set.get(0).covariance()[(0, 0)], 1.0);
        assert_eq!(set.get(0).covariance()[(0, 1)], 0.0);
        // Block boundary: member per_mean starts the second mean with the
        // same first shape.
        assert_eq!(set.get(per_mean).mean(), &[1.0, 0.0]);
        assert_eq!(set.get(per_mean).covariance()[(0, 0)], 1.0);
        // Shapes within a block repeat exactly across means.
        for s in 0..per_mean {
            assert_eq!(
                set.get(s).covariance(),
                set.get(per_mean + s).covariance(),
                "shape {s} must repeat for every mean"
            );
        }
    }

    #[test]
    fn isotropic_members_appear_once_per_eigenvalue() {
        let spec = base_spec();
        let set = build_grid_set(&spec).unwrap();
        let per_mean = spec.shapes_per_mean() as usize;
        let isotropic = set.components()[..per_mean]
            .iter()
            .filter(|c| {
                let cov = c.covariance();
                cov[(0, 1)] == 0.0 && cov[(0, 0)] == cov[(1, 1)]
            })
            .count();
        assert_eq!(isotropic, 3, "one isotropic member per eigenvalue");
    }

    #[test]
    fn rotation_places_major_axis() {
        // Angle 0: major eigenvalue on x. Angle pi/2: on y.
        let at0 = rotated_covariance_2d(4.0, 1.0, 0.0);
        assert_eq!(at0[(0, 0)], 4.0);
        assert_eq!(at0[(1, 1)], 1.0);
        let at90 = rotated_covariance_2d(4.0, 1.0, PI / 2.0);
        assert!((at90[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((at90[(1, 1)] - 4.0).abs() < 1e-14);
        assert!(at90[(0, 1)].abs() < 1e-14);
        // Angle pi/4 mixes evenly: [[2.5, 1.5], [1.5, 2.5]].
        let at45 = rotated_covariance_2d(4.0, 1.0, PI / 4.0);
        assert!((at45[(0, 0)] - 2.5).abs() < 1e-14);
        assert!((at45[(0, 1)] - 1.5).abs() < 1e-14);
        assert!((at45[(1, 1)] - 2.5).abs() < 1e-14);
    }

    #[test]
    fn rotated_covariance_has_requested_eigenvalues() {
        let cov = rotated_covariance_2d(3.0, 0.5, 1.1);
        let eigs = cov.symmetric_eigen().eigenvalues;
        let mut vals: Vec<f64> = eigs.iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[0] - 0.5).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pair_orientation_is_value_normalized() {
        // Listing eigenvalues as (1, 4) or (4, 1) must give the same pair
        // member: larger value on the angle-0 major axis.
        let spec_a = GridSpec {
            mean_sites: vec![[0.0, 0.0]],
            eigenvalues: vec![1.0, 4.0],
            angles: vec![0.0],
            pairing: EigenPairing::OrderedPairs,
        };
        let spec_b = GridSpec {
            eigenvalues: vec![4.0, 1.0],
            ..spec_a.clone()
        };
        let set_a = build_grid_set(&spec_a).unwrap();
        let set_b = build_grid_set(&spec_b).unwrap();
        // Pair member is the last of the 3 members (2 isotropic + 1 pair).
        assert_eq!(
            set_a.get(2).covariance(),
            set_b.get(2).covariance(),
            "pair orientation must not depend on list order"
        );
        assert_eq!(set_a.get(2).covariance()[(0, 0)], 4.0);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let ok = base_spec();
        for (mutate, why) in [
            (
                GridSpec { mean_sites: vec![], ..ok.clone() },
                "no means",
            ),
            (
                GridSpec { eigenvalues: vec![], ..ok.clone() },
                "no eigenvalues",
            ),
            (
                GridSpec { eigenvalues: vec![1.0, -2.0], ..ok.clone() },
                "negative eigenvalue",
            ),
            (
                GridSpec { eigenvalues: vec![1.0, 1.0], ..ok.clone() },
                "duplicate eigenvalue",
            ),
            (
                GridSpec { angles: vec![], ..ok.clone() },
                "no angles",
            ),
            (
                GridSpec { angles: vec![PI], ..ok.clone() },
                "angle out of [0, pi)",
            ),
            (
                GridSpec { angles: vec![-0.1], ..ok.clone() },
                "negative angle",
            ),
            (
                GridSpec { angles: vec![0.5, 0.5], ..ok.clone() },
                "duplicate angle",
            ),
        ] {
            assert!(build_grid_set(&mutate).is_err(), "spec with {why} must be rejected");
        }
        assert!(build_grid_set(&ok).is_ok());
    }

    #[test]
    fn lattice_and_angle_helpers() {
        let sites = lattice_means((-1.0, 1.0), 3, (0.0, 2.0), 2);
        assert_eq!(sites.len(), 6);
        assert_eq!(sites[0], [-1.0, 0.0]);
        assert_eq!(sites[2], [1.0, 0.0]);
        assert_eq!(sites[3], [-1.0, 2.0]);
        assert_eq!(lattice_means((5.0, 9.0), 1, (2.0, 2.0), 1), vec![[5.0, 2.0]]);
        let angles = uniform_angles(4);
        assert_eq!(angles.len(), 4);
        assert_eq!(angles[0], 0.0);
        assert!((angles[3] - 3.0 * PI / 4.0).abs() < 1e-15);
    }
}
