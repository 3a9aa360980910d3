//! Image patches as mixture candidates: every patch of an RGB image is
//! summarized as one 5-D Gaussian over `(x, y, R, G, B)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sample_moments, ComponentSet, GaussianComponent, SetProvenance};

/// Feature dimension: pixel position plus color.
pub const PATCH_DIM: usize = 5;

/// Relative ridge applied to every fitted covariance.
const RIDGE_SCALE: f64 = 1e-6;

/// Floor on the trace-based ridge scale, so zero-variance patches still
/// produce positive-definite covariances.
const RIDGE_FLOOR: f64 = 1e-8;

/// An 8-bit RGB image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl PixelImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("image has zero extent".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels cannot fill a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(PixelImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    /// Feature vector `(x, y, R, G, B)` of one pixel: `x` is the column
    /// index, `y` the row index, colors kept on their native `0..=255`
    /// scale. The same convention is used wherever pixels meet models.
    pub fn feature(&self, row: usize, col: usize) -> [f64; PATCH_DIM] {
        let [r, g, b] = self.pixel(row, col);
        [col as f64, row as f64, r as f64, g as f64, b as f64]
    }
}

/// Patch extraction parameters; doubles as the provenance record of a
/// patch-derived candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    /// Square patch side lengths, fitted in the given order.
    pub sizes: Vec<usize>,
    /// Step between patch origins, shared by both axes.
    pub stride: usize,
    /// Fraction of each patch's pixels discarded as outliers, in `[0, 0.5)`.
    pub trim_fraction: f64,
}

impl PatchSpec {
    fn validate(&self, image: &PixelImage) -> Result<()> {
        if self.sizes.is_empty() {
            return Err(Error::InvalidArgument("no patch sizes given".into()));
        }
        for &s in &self.sizes {
            if s == 0 {
                return Err(Error::InvalidArgument("patch size 0 is invalid".into()));
            }
            if s > image.width() || s > image.height() {
                return Err(Error::InvalidArgument(format!(
                    "patch size {s} exceeds the {}x{} image",
                    image.width(),
                    image.height()
                )));
            }
        }
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        if !(0.0..0.5).contains(&self.trim_fraction) {
            return Err(Error::InvalidArgument(format!(
                "trim fraction must lie in [0, 0.5), got {}",
                self.trim_fraction
            )));
        }
        Ok(())
    }
}

/// Ridge-regularized covariance: `S + 1e-6 * max(tr(S)/d, 1e-8) * I`.
fn ridge_covariance(mut scatter: DMatrix<f64>) -> DMatrix<f64> {
    let d = scatter.nrows();
    let trace: f64 = (0..d).map(|a| scatter[(a, a)]).sum();
    let ridge = RIDGE_SCALE * (trace / d as f64).max(RIDGE_FLOOR);
    for a in 0..d {
        scatter[(a, a)] += ridge;
    }
    scatter
}

/// Fits one patch; `None` means the patch was skipped under the trim rule.
fn fit_one(features: &[f64], trim_fraction: f64) -> Result<Option<GaussianComponent>> {
    let n = features.len() / PATCH_DIM;
    let (mean, scatter) = sample_moments(features, n, PATCH_DIM);
    let initial = GaussianComponent::new(mean, ridge_covariance(scatter))?;
    let trim = (trim_fraction * n as f64).floor() as usize;
    if trim == 0 {
        return Ok(Some(initial));
    }
    // A patch that trimming would leave too small for a meaningful 5-D fit
    // is dropped entirely.
    if n - trim < PATCH_DIM + 1 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let dist: Vec<f64> = (0..n)
        .map(|i| {
            initial
                .mahalanobis_sq(&features[i * PATCH_DIM..(i + 1) * PATCH_DIM])
                .expect("patch features match the fitted dimension")
        })
        .collect();
    order.sort_by(|&a, &b| {
        dist[a]
            .partial_cmp(&dist[b])
            .expect("mahalanobis distances are finite")
            .then(a.cmp(&b))
    });
    let kept = &order[..n - trim];
    let mut kept_features = Vec::with_capacity(kept.len() * PATCH_DIM);
    for &i in kept {
        kept_features.extend_from_slice(&features[i * PATCH_DIM..(i + 1) * PATCH_DIM]);
    }
    let (mean, scatter) = sample_moments(&kept_features, kept.len(), PATCH_DIM);
    Ok(Some(GaussianComponent::new(mean, ridge_covariance(scatter))?))
}

/// Fits one Gaussian per patch of every requested size, scanning origins
/// row-major with the given stride, sizes in the given order.
///
/// Patches whose trimmed pixel count falls below `d + 1` are skipped; the
/// skip count is recorded in the resulting set's provenance.
pub fn fit_patch_models(image: &PixelImage, spec: &PatchSpec) -> Result<ComponentSet> {
    spec.validate(image)?;
    let mut patches: Vec<(usize, usize, usize)> = Vec::new();
    for &size in &spec.sizes {
        let mut r0 = 0;
        while r0 + size <= image.height() {
            let mut c0 = 0;
            while c0 + size <= image.width() {
                patches.push((size, r0, c0));
                c0 += spec.stride;
            }
            r0 += spec.stride;
        }
    }
    let fitted: Vec<Option<GaussianComponent>> = patches
        .par_iter()
        .map(|&(size, r0, c0)| {
            let mut features = Vec::with_capacity(size * size * PATCH_DIM);
            for r in r0..r0 + size {
                for c in c0..c0 + size {
                    features.extend_from_slice(&image.feature(r, c));
                }
            }
            fit_one(&features, spec.trim_fraction)
        })
        .collect::<Result<_>>()?;
    let skipped = fitted.iter().filter(|c| c.is_none()).count();
    let components: Vec<GaussianComponent> = fitted.into_iter().flatten().collect();
    if components.is_empty() {
        return Err(Error::InvalidArgument(
            "every patch was skipped by the trim rule; no candidates produced".into(),
        ));
    }
    ComponentSet::new(
        components,
        SetProvenance::Patch {
            spec: spec.clone(),
            skipped_patches: skipped,
        },
    )
}
