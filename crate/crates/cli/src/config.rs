//! Run configuration: one JSON document declares the data source, the
//! candidate set, the component budget, and per-stage solver settings.
//! Unknown keys are rejected everywhere, and every random quantity is
//! driven by the single top-level seed, so a config plus the recorded
//! seed reproduces a run exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use mixcert_core::bound::{ConvexEmConfig, InitStrategy};
use mixcert_core::error::{Error, Result};
use mixcert_core::grid::{EigenPairing, GridSpec};
use mixcert_core::likelihood::DEFAULT_MEMORY_BUDGET;
use mixcert_core::solvers::{BruteForceConfig, ContinuousEmConfig};

pub const DEFAULT_PIXEL_CAP: usize = 20_000;
pub const DEFAULT_SEGMENT_K: usize = 5;

/// Seed offsets keep the pipeline stages statistically independent while
/// derived from the one recorded seed.
pub const SOLVE_SEED_OFFSET: u64 = 10_000;
pub const BASELINE_SEED_OFFSET: u64 = 20_000;
pub const PIXEL_SEED_OFFSET: u64 = 30_000;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; all stage seeds derive from it by fixed offsets.
    pub seed: u64,
    /// Component budget K. Required by solve/certify/experiment; segment
    /// defaults to 5.
    pub k: Option<usize>,
    pub data: DataConfig,
    pub models: ModelsConfig,
    /// Byte budget for materializing the likelihood matrix.
    #[serde(default = "default_memory_budget")]
    pub memory_budget_bytes: u128,
    #[serde(default)]
    pub bound: BoundSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub certify: CertifySection,
    /// Required by the experiment command, ignored elsewhere.
    pub experiment: Option<ExperimentSection>,
}

fn default_memory_budget() -> u128 {
    DEFAULT_MEMORY_BUDGET
}

impl RunConfig {
    /// Parses and validates a config document. `dir` is the directory the
    /// document came from; relative paths inside it resolve against `dir`.
    pub fn from_json(bytes: &[u8], dir: &Path) -> Result<Self> {
        let mut config: RunConfig = serde_json::from_slice(bytes)
            .map_err(|e| Error::Format(format!("bad run config: {e}")))?;
        config.resolve_paths(dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&bytes, dir)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        match &mut self.data {
            DataConfig::Csv { path } => fix(path),
            DataConfig::Image { path, .. } => fix(path),
            DataConfig::Mixture { .. } | DataConfig::Rectangles { .. } => {}
        }
        match &mut self.models {
            ModelsConfig::Json { path } => fix(path),
            ModelsConfig::Patch { image: Some(path), .. } => fix(path),
            ModelsConfig::Patch { image: None, .. } | ModelsConfig::Grid { .. } => {}
        }
    }

    fn validate(&self) -> Result<()> {
        if self.k == Some(0) {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if self.memory_budget_bytes == 0 {
            return Err(Error::InvalidArgument("memory budget must be positive".into()));
        }
        self.data.validate()?;
        self.bound.validate()?;
        self.solve.validate()?;
        Ok(())
    }

    /// K for solving stages; `segment` falls back to the default of 5.
    pub fn k_required(&self, command: &str) -> Result<usize> {
        match self.k {
            Some(k) => Ok(k),
            None if command == "segment" => Ok(DEFAULT_SEGMENT_K),
            None => Err(Error::InvalidArgument(format!(
                "the {command} command needs \"k\" in the config"
            ))),
        }
    }
}

/// A mean/covariance pair as written in JSON.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectangleSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Where the data points come from.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    /// Points from a CSV file (`x1,...,xd[,label]`).
    Csv { path: PathBuf },
    /// `n` points sampled from the given Gaussian mixture with the master
    /// seed.
    Mixture {
        weights: Vec<f64>,
        components: Vec<ComponentSpec>,
        n: usize,
    },
    /// `n` points sampled from a weighted union of axis-aligned
    /// rectangles (a non-Gaussian generator).
    Rectangles {
        rectangles: Vec<RectangleSpec>,
        weights: Vec<f64>,
        n: usize,
    },
    /// Pixels of a PPM image as (x, y, R, G, B) features on their native
    /// column/row and `0..=255` color scales; uniformly subsampled to
    /// `pixel_cap` points when larger.
    Image {
        path: PathBuf,
        #[serde(default = "default_pixel_cap")]
        pixel_cap: usize,
    },
}

fn default_pixel_cap() -> usize {
    DEFAULT_PIXEL_CAP
}

impl DataConfig {
    fn validate(&self) -> Result<()> {
        match self {
            DataConfig::Mixture { n, .. } | DataConfig::Rectangles { n, .. } if *n == 0 => {
                Err(Error::InvalidArgument("sample count n must be at least 1".into()))
            }
            DataConfig::Image { pixel_cap: 0, .. } => {
                Err(Error::InvalidArgument("pixel cap must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Lattice shorthand for grid mean sites.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub x_range: (f64, f64),
    pub x_count: usize,
    pub y_range: (f64, f64),
    pub y_count: usize,
}

/// Where the candidate set comes from.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelsConfig {
    /// A serialized candidate set.
    Json { path: PathBuf },
    /// 2-D mean/eigenvalue/angle grid. Means come from either an
    /// explicit `mean_sites` list or a `lattice`; angles from either an
    /// explicit `angles` list (radians in `[0, pi)`) or a uniform
    /// `angle_count`.
    Grid {
        mean_sites: Option<Vec<[f64; 2]>>,
        lattice: Option<LatticeSpec>,
        eigenvalues: Vec<f64>,
        angles: Option<Vec<f64>>,
        angle_count: Option<usize>,
        #[serde(default)]
        pairing: EigenPairing,
    },
    /// Gaussians fitted to image patches. `image` defaults to the data
    /// image when the data source is one.
    Patch {
        image: Option<PathBuf>,
        sizes: Vec<usize>,
        stride: usize,
        trim_fraction: f64,
    },
}

impl ModelsConfig {
    /// Materializes a grid variant into a concrete spec.
    pub fn grid_spec(&self) -> Result<GridSpec> {
        let ModelsConfig::Grid {
            mean_sites,
            lattice,
            eigenvalues,
            angles,
            angle_count,
            pairing,
        } = self
        else {
            return Err(Error::InvalidArgument("not a grid models source".into()));
        };
        let mean_sites = match (mean_sites, lattice) {
            (Some(sites), None) => sites.clone(),
            (None, Some(l)) => {
                mixcert_core::grid::lattice_means(l.x_range, l.x_count, l.y_range, l.y_count)
            }
            _ => {
                return Err(Error::InvalidArgument(
                    "grid needs exactly one of \"mean_sites\" and \"lattice\"".into(),
                ))
            }
        };
        let angles = match (angles, angle_count) {
            (Some(a), None) => a.clone(),
            (None, Some(c)) => mixcert_core::grid::uniform_angles(*c),
            _ => {
                return Err(Error::InvalidArgument(
                    "grid needs exactly one of \"angles\" and \"angle_count\"".into(),
                ))
            }
        };
        Ok(GridSpec {
            mean_sites,
            eigenvalues: eigenvalues.clone(),
            angles,
            pairing: *pairing,
        })
    }
}

/// Convex-bound settings; defaults match the library.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSection {
    pub max_iterations: usize,
    pub gap_tolerance: f64,
    /// Zero disables the stall test.
    pub relative_ll_tolerance: f64,
    pub eta: f64,
    pub prune_threshold: Option<f64>,
    /// `null` starts uniform; a seed starts from Dirichlet(1) weights.
    pub init_seed: Option<u64>,
    /// Stream the candidate set in column blocks of this size instead of
    /// materializing the matrix (the bound stage only).
    pub column_block: Option<usize>,
    pub record_trace: bool,
}

impl Default for BoundSection {
    fn default() -> Self {
        let base = ConvexEmConfig::default();
        BoundSection {
            max_iterations: base.max_iterations,
            gap_tolerance: base.gap_tolerance,
            relative_ll_tolerance: base.relative_ll_tolerance,
            eta: base.eta,
            prune_threshold: base.prune_threshold,
            init_seed: None,
            column_block: None,
            record_trace: true,
        }
    }
}

impl BoundSection {
    fn validate(&self) -> Result<()> {
        if self.column_block == Some(0) {
            return Err(Error::InvalidArgument("column block must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_core(&self) -> ConvexEmConfig {
        ConvexEmConfig {
            max_iterations: self.max_iterations,
            gap_tolerance: self.gap_tolerance,
            relative_ll_tolerance: self.relative_ll_tolerance,
            eta: self.eta,
            prune_threshold: self.prune_threshold,
            init: match self.init_seed {
                Some(s) => InitStrategy::SeededRandom(s),
                None => InitStrategy::Uniform,
            },
            record_trace: self.record_trace,
        }
    }
}

/// Component-distance choice for projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricChoice {
    #[default]
    SymmetrizedKl,
    ParamEuclidean,
}

/// Brute-force behavior in the solve stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BruteForceMode {
    /// Never enumerate.
    #[default]
    Off,
    /// Enumerate when `C(M, K)` fits the budget, silently skip otherwise.
    Auto,
    /// Enumerate or fail with the required count.
    Require,
}

/// Lower-bound solver settings.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSection {
    pub restarts: usize,
    pub em_max_iterations: usize,
    pub em_relative_tolerance: f64,
    pub em_max_reseeds: usize,
    /// Re-optimize weights after projection; off reproduces the plain
    /// projection pipeline.
    pub refit: bool,
    pub metric: MetricChoice,
    pub brute_force: BruteForceMode,
    pub brute_force_max_supports: u128,
}

impl Default for SolveSection {
    fn default() -> Self {
        let em = ContinuousEmConfig::default();
        let bf = BruteForceConfig::default();
        SolveSection {
            restarts: 10,
            em_max_iterations: em.max_iterations,
            em_relative_tolerance: em.relative_tolerance,
            em_max_reseeds: em.max_reseeds,
            refit: true,
            metric: MetricChoice::default(),
            brute_force: BruteForceMode::default(),
            brute_force_max_supports: bf.max_supports,
        }
    }
}

impl SolveSection {
    fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        Ok(())
    }

    pub fn em_config(&self, k: usize) -> ContinuousEmConfig {
        ContinuousEmConfig {
            k,
            max_iterations: self.em_max_iterations,
            relative_tolerance: self.em_relative_tolerance,
            max_reseeds: self.em_max_reseeds,
        }
    }
}

/// Certificate calibration settings.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    pub baseline_draws: usize,
    /// `null` derives `seed + 20000`.
    pub baseline_seed: Option<u64>,
}

impl Default for CertifySection {
    fn default() -> Self {
        CertifySection {
            baseline_draws: 1000,
            baseline_seed: None,
        }
    }
}

/// Which experiment to run and its grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExperimentSection {
    /// Bound tightness versus sample size (requires a generator data
    /// source). Cell seeds are `seed + 0..seeds`.
    Tightness {
        #[serde(default = "default_sample_sizes")]
        sample_sizes: Vec<usize>,
        #[serde(default = "default_seed_count")]
        seeds: u64,
        #[serde(default = "default_restarts")]
        restarts: usize,
        #[serde(default = "default_experiment_draws")]
        baseline_draws: usize,
    },
    /// Optimality ratio versus mixture c-separation: random K-mixtures
    /// rescaled to each target separation.
    Separation {
        #[serde(default = "default_targets")]
        targets: Vec<f64>,
        #[serde(default = "default_repeats")]
        repeats: usize,
        #[serde(default = "default_instance_n")]
        n: usize,
        #[serde(default = "default_restarts")]
        restarts: usize,
        #[serde(default = "default_experiment_draws")]
        baseline_draws: usize,
    },
    /// Ratio after one restart versus improvement after many.
    Restarts {
        #[serde(default = "default_instances")]
        instances: usize,
        #[serde(default = "default_instance_n")]
        n: usize,
        #[serde(default = "default_study_restarts")]
        restarts: usize,
        #[serde(default = "default_experiment_draws")]
        baseline_draws: usize,
    },
}

fn default_sample_sizes() -> Vec<usize> {
    vec![30, 100, 300, 1000]
}
fn default_seed_count() -> u64 {
    10
}
fn default_restarts() -> usize {
    10
}
fn default_experiment_draws() -> usize {
    64
}
fn default_targets() -> Vec<f64> {
    vec![0.5, 1.0, 1.5, 2.0]
}
fn default_repeats() -> usize {
    10
}
fn default_instance_n() -> usize {
    200
}
fn default_instances() -> usize {
    30
}
fn default_study_restarts() -> usize {
    100
}
