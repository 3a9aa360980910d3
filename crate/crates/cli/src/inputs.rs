//! Turns the declarative data/models sections into concrete inputs:
//! datasets (read, sampled, or subsampled from an image) and candidate
//! sets (read, grid-enumerated, or patch-fitted).

use std::fs;

use rand::seq::index::sample as index_sample;

use mixcert_core::error::{Error, Result};
use mixcert_core::grid::build_grid_set;
use mixcert_core::model::{ComponentSet, Dataset, GaussianComponent, MixtureModel};
use mixcert_core::patch::{fit_patch_models, PatchSpec, PixelImage};
use mixcert_core::rng::rng_from_seed;
use mixcert_core::sample::{
    sample_mixture, sample_rectangles, DataGenerator, Rectangle, RectangleMixture,
};

use crate::config::{ComponentSpec, DataConfig, ModelsConfig, RunConfig, PIXEL_SEED_OFFSET};
use crate::formats::{read_component_set, read_dataset_csv, read_ppm};

/// A loaded data source; `image` is kept for segmentation and
/// patch-model fitting, `generated` marks points that only exist in this
/// run (and so are worth writing out for audit).
pub struct LoadedData {
    pub dataset: Dataset,
    pub image: Option<PixelImage>,
    pub generated: bool,
}

pub fn mixture_model(weights: &[f64], specs: &[ComponentSpec]) -> Result<MixtureModel> {
    let components: Vec<GaussianComponent> = specs
        .iter()
        .map(|s| GaussianComponent::from_rows(s.mean.clone(), s.cov.clone()))
        .collect::<Result<_>>()?;
    MixtureModel::new(weights.to_vec(), components)
}

/// The configured data source as a generator, for experiments that sweep
/// sample sizes themselves (`n` in the config is ignored there).
pub fn data_generator(config: &RunConfig) -> Result<DataGenerator> {
    match &config.data {
        DataConfig::Mixture { weights, components, .. } => {
            Ok(DataGenerator::Mixture(mixture_model(weights, components)?))
        }
        DataConfig::Rectangles { rectangles, weights, .. } => {
            let rects: Vec<Rectangle> = rectangles
                .iter()
                .map(|r| Rectangle::new(r.lo.clone(), r.hi.clone()))
                .collect::<Result<_>>()?;
            Ok(DataGenerator::Rectangles(RectangleMixture::new(
                rects,
                weights.clone(),
            )?))
        }
        DataConfig::Csv { .. } | DataConfig::Image { .. } => Err(Error::InvalidArgument(
            "this run needs a generator data source (mixture or rectangles)".into(),
        )),
    }
}

/// All pixels as (x, y, R, G, B) rows, uniformly subsampled (sorted
/// row-major positions, seeded) when the image exceeds `cap` pixels.
pub fn pixel_dataset(image: &PixelImage, cap: usize, seed: u64) -> Result<Dataset> {
    let total = image.width() * image.height();
    let picks: Vec<usize> = if total <= cap {
        (0..total).collect()
    } else {
        let mut picks = index_sample(&mut rng_from_seed(seed), total, cap).into_vec();
        picks.sort_unstable();
        picks
    };
    let mut points = Vec::with_capacity(picks.len() * 5);
    for p in picks {
        points.extend_from_slice(&image.feature(p / image.width(), p % image.width()));
    }
    Dataset::from_flat(points.len() / 5, 5, points)
}

pub fn load_data(config: &RunConfig) -> Result<LoadedData> {
    match &config.data {
        DataConfig::Csv { path } => Ok(LoadedData {
            dataset: read_dataset_csv(fs::read(path)?.as_slice())?,
            image: None,
            generated: false,
        }),
        DataConfig::Mixture { weights, components, n } => {
            let model = mixture_model(weights, components)?;
            Ok(LoadedData {
                dataset: sample_mixture(&model, *n, config.seed)?,
                image: None,
                generated: true,
            })
        }
        DataConfig::Rectangles { rectangles, weights, n } => {
            let rects: Vec<Rectangle> = rectangles
                .iter()
                .map(|r| Rectangle::new(r.lo.clone(), r.hi.clone()))
                .collect::<Result<_>>()?;
            let mix = RectangleMixture::new(rects, weights.clone())?;
            Ok(LoadedData {
                dataset: sample_rectangles(&mix, *n, config.seed)?,
                image: None,
                generated: true,
            })
        }
        DataConfig::Image { path, pixel_cap } => {
            let image = read_ppm(&fs::read(path)?)?;
            let dataset =
                pixel_dataset(&image, *pixel_cap, config.seed + PIXEL_SEED_OFFSET)?;
            Ok(LoadedData {
                dataset,
                image: Some(image),
                generated: true,
            })
        }
    }
}

/// Builds the candidate set; `data_image` feeds patch fitting when the
/// models section names no image of its own.
pub fn load_models(config: &RunConfig, data_image: Option<&PixelImage>) -> Result<ComponentSet> {
    match &config.models {
        ModelsConfig::Json { path } => read_component_set(fs::read(path)?.as_slice()),
        ModelsConfig::Grid { .. } => build_grid_set(&config.models.grid_spec()?),
        ModelsConfig::Patch { image, sizes, stride, trim_fraction } => {
            let owned;
            let source = match (image, data_image) {
                (Some(path), _) => {
                    owned = read_ppm(&fs::read(path)?)?;
                    &owned
                }
                (None, Some(img)) => img,
                (None, None) => {
                    return Err(Error::InvalidArgument(
                        "patch models need an image: set models.image or use an image data source"
                            .into(),
                    ))
                }
            };
            fit_patch_models(
                source,
                &PatchSpec {
                    sizes: sizes.clone(),
                    stride: *stride,
                    trim_fraction: *trim_fraction,
                },
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    #[test]
    fn pixel_dataset_caps_and_sorts() {
        let pixels: Vec<[u8; 3]> = (0..12u8).map(|i| [i, i, i]).collect();
        let image = PixelImage::new(4, 3, pixels).unwrap();
        let full = pixel_dataset(&image, 100, 1).unwrap();
        assert_eq!(full.n_points(), 12);
        assert_eq!(full.dim(), 5);

        let capped = pixel_dataset(&image, 5, 1).unwrap();
        assert_eq!(capped.n_points(), 5);
        // Subsampled rows keep row-major image order: x-coordinates within
        // a fixed y stay non-decreasing.
        let rows: Vec<&[f64]> = (0..5).map(|i| capped.row(i)).collect();
        for pair in rows.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            assert!(
                b[1] > a[1] || (b[1] == a[1] && b[0] > a[0]),
                "positions must stay sorted"
            );
        }
        let again = pixel_dataset(&image, 5, 1).unwrap();
        assert_eq!(again.as_flat(), capped.as_flat(), "seeded subsample is deterministic");
        let other = pixel_dataset(&image, 5, 2).unwrap();
        assert_ne!(other.as_flat(), capped.as_flat(), "seed changes the subsample");
    }

    #[test]
    fn generator_requires_a_generative_source() {
        let json = r#"{"seed":1,"k":1,"data":{"source":"csv","path":"p"},
                       "models":{"source":"json","path":"s"}}"#;
        let config = RunConfig::from_json(json.as_bytes(), Path::new(".")).unwrap();
        assert!(data_generator(&config).is_err());

        let json = r#"{"seed":1,"k":1,
            "data":{"source":"rectangles","n":10,"weights":[1.0],
                    "rectangles":[{"lo":[0,0],"hi":[1,1]}]},
            "models":{"source":"json","path":"s"}}"#;
        let config = RunConfig::from_json(json.as_bytes(), Path::new(".")).unwrap();
        let generator = data_generator(&config).unwrap();
        assert_eq!(generator.dim(), 2);
        let sampled = generator.sample(10, 3).unwrap();
        assert_eq!(sampled.n_points(), 10);
    }
}
