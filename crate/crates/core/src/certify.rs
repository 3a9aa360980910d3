//! Certificate assembly: checks that an upper bound and a feasible
//! solution were computed from the same inputs, recomputes the claimed
//! values, calibrates against random supports, and reports the
//! optimality ratio `(LL - LL_rand) / (UB - LL_rand)`.

use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{convex_em, BoundResult, ConvexEmConfig};
use crate::error::{Error, Result};
use crate::likelihood::{
    build_matrix, mixture_ll, DataFingerprint, LogLikelihoodMatrix,
};
use crate::math::pairwise_sum;
use crate::model::{ComponentSet, Dataset, MixtureModel};
use crate::sample::DataGenerator;
use crate::solvers::{
    projected_em_multistart, random_baseline_ll, ContinuousEmConfig, DiscreteSolution,
    MultistartConfig, SolutionProvenance, SymmetrizedKl,
};

/// Fraction of the calibrated interval the solution covered. Raw value;
/// may exceed `[0, 1]` only by round-off (above) or when the solution is
/// worse than random supports (below).
pub fn optimality_ratio(lb: f64, ub: f64, ll_rand: f64) -> Result<f64> {
    if !lb.is_finite() || !ub.is_finite() || !ll_rand.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ratio inputs must be finite: lb = {lb}, ub = {ub}, ll_rand = {ll_rand}"
        )));
    }
    if ub <= ll_rand + 1e-12 {
        return Err(Error::DegenerateCalibration(format!(
            "upper bound {ub} does not exceed the random baseline {ll_rand}; \
             the instance cannot calibrate a ratio"
        )));
    }
    Ok((lb - ll_rand) / (ub - ll_rand))
}

/// The raw ratio clamped to `[0, 1]` for reporting.
pub fn clamp_ratio(raw: f64) -> f64 {
    raw.clamp(0.0, 1.0)
}

/// Options for [`certify`].
#[derive(Debug, Clone)]
pub struct CertifyOptions {
    /// Random supports drawn for the baseline.
    pub baseline_draws: usize,
    pub baseline_seed: u64,
    /// Hash of the run configuration, recorded verbatim.
    pub config_hash: String,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            baseline_draws: 1000,
            baseline_seed: 0,
            config_hash: String::new(),
        }
    }
}

/// A checked, self-describing optimality certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub ub_ll: f64,
    pub gap: f64,
    pub certified_ub: f64,
    pub converged: bool,
    pub iterations: usize,
    pub lb_ll: f64,
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
    pub provenance: SolutionProvenance,
    pub ll_rand: f64,
    /// `(lb - ll_rand) / (ub - ll_rand)` clamped to `[0, 1]`.
    pub opt_ratio: f64,
    /// The same ratio before clamping.
    pub opt_ratio_raw: f64,
    pub config_hash: String,
    pub dataset_hash: String,
    pub models_hash: String,
    /// Unix seconds at assembly time.
    pub timestamp: u64,
    /// Baseline seed, recorded for reproduction.
    pub seed: u64,
}

fn check_fingerprint(
    kind: &str,
    found: Option<&DataFingerprint>,
    expected: &DataFingerprint,
) -> Result<()> {
    match found {
        None => Err(Error::InconsistentInputs(format!(
            "{kind} carries no input fingerprint; recompute it from the dataset and set"
        ))),
        Some(fp) if fp != expected => Err(Error::InconsistentInputs(format!(
            "{kind} was computed from different inputs than the dataset and set supplied"
        ))),
        Some(_) => Ok(()),
    }
}

/// Validates that `bound` and `solution` describe the supplied inputs,
/// recomputes the claimed log-likelihoods, checks the sandwich
/// `lb <= certified_ub`, and assembles the certificate.
pub fn certify(
    dataset: &Dataset,
    set: &ComponentSet,
    matrix: &LogLikelihoodMatrix,
    k: usize,
    bound: &BoundResult,
    solution: &DiscreteSolution,
    opts: &CertifyOptions,
) -> Result<Certificate> {
    let n = matrix.n_points();
    let m = matrix.n_models();
    if dataset.n_points() != n || set.len() != m {
        return Err(Error::InconsistentInputs(format!(
            "matrix is {n} x {m} but the dataset has {} points and the set {} candidates",
            dataset.n_points(),
            set.len()
        )));
    }
    let expected = DataFingerprint::compute(dataset, set);
    check_fingerprint("likelihood matrix", matrix.fingerprint(), &expected)?;
    check_fingerprint("bound", bound.fingerprint(), &expected)?;
    check_fingerprint("solution", solution.fingerprint(), &expected)?;
    if k == 0 {
        return Err(Error::InvalidArgument("component budget must be at least 1".into()));
    }
    if solution.support.len() > k {
        return Err(Error::InvalidArgument(format!(
            "solution uses {} components, over the budget of {k}",
            solution.support.len()
        )));
    }

    // Recompute both sides rather than trusting the carried values.
    let w = solution.weight_vector(m)?;
    let lb_ll = mixture_ll(matrix, &w)?;
    if (lb_ll - solution.ll).abs() > 1e-10 {
        return Err(Error::InconsistentInputs(format!(
            "solution claims log-likelihood {} but evaluates to {lb_ll}",
            solution.ll
        )));
    }
    let ub_ll = mixture_ll(matrix, &bound.weights)?;
    if (ub_ll - bound.ub_ll).abs() > 1e-10 {
        return Err(Error::InconsistentInputs(format!(
            "bound claims log-likelihood {} but evaluates to {ub_ll}",
            bound.ub_ll
        )));
    }
    if lb_ll > bound.certified_ub + 1e-10 {
        return Err(Error::NumericalFailure(format!(
            "sandwich violated: lower bound {lb_ll} exceeds certified upper bound {}",
            bound.certified_ub
        )));
    }

    let ll_rand = random_baseline_ll(matrix, k, opts.baseline_draws, opts.baseline_seed)?;
    let raw = optimality_ratio(lb_ll, bound.certified_ub, ll_rand)?;
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(Certificate {
        n,
        m,
        k,
        ub_ll: bound.ub_ll,
        gap: bound.final_gap,
        certified_ub: bound.certified_ub,
        converged: bound.converged,
        iterations: bound.iterations_used,
        lb_ll,
        support: solution.support.clone(),
        weights: solution.weights.clone(),
        provenance: solution.provenance.clone(),
        ll_rand,
        opt_ratio: clamp_ratio(raw),
        opt_ratio_raw: raw,
        config_hash: opts.config_hash.clone(),
        dataset_hash: expected.dataset_hex(),
        models_hash: expected.models_hex(),
        timestamp,
        seed: opts.baseline_seed,
    })
}

/// Estimation-error diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EeDiagnostic {
    /// Mean log density of the fitted model on the evaluation sample.
    pub ll_data: f64,
    /// Mean log density on the Monte Carlo sample.
    pub ll_mc: f64,
    /// `|ll_data - ll_mc|`.
    pub deviation: f64,
}

fn mean_log_density(model: &MixtureModel, dataset: &Dataset, rows: usize) -> Result<f64> {
    let lls: Vec<f64> = (0..rows)
        .map(|i| model.log_density(dataset.row(i)))
        .collect::<Result<_>>()?;
    Ok(pairwise_sum(&lls) / rows as f64)
}

/// Compares the fitted model's mean log density on an `n`-point sample
/// from `truth` against a `mc_samples`-point Monte Carlo sample drawn
/// with the same seed, so the shorter sample is always a prefix of the
/// longer one. With `mc_samples == n` the two samples coincide and the
/// deviation is exactly zero.
pub fn ee_diagnostic(
    truth: &MixtureModel,
    fitted: &MixtureModel,
    n: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<EeDiagnostic> {
    if n == 0 || mc_samples == 0 {
        return Err(Error::InvalidArgument(
            "both sample sizes must be at least 1".into(),
        ));
    }
    if truth.dim() != fitted.dim() {
        return Err(Error::DimensionMismatch(format!(
            "generator dimension {} vs fitted dimension {}",
            truth.dim(),
            fitted.dim()
        )));
    }
    let sample = crate::sample::sample_mixture(truth, n.max(mc_samples), seed)?;
    let ll_data = mean_log_density(fitted, &sample, n)?;
    let ll_mc = mean_log_density(fitted, &sample, mc_samples)?;
    Ok(EeDiagnostic {
        ll_data,
        ll_mc,
        deviation: (ll_data - ll_mc).abs(),
    })
}

/// Tightness-curve configuration: the grid of sample sizes and seeds,
/// and the solver settings used in every cell.
#[derive(Debug, Clone)]
pub struct CurveConfig {
    pub sample_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Component budget for lower bounds and calibration.
    pub k: usize,
    pub restarts: usize,
    pub baseline_draws: usize,
    pub bound: ConvexEmConfig,
    pub em: ContinuousEmConfig,
}

impl CurveConfig {
    pub fn new(k: usize) -> Self {
        CurveConfig {
            sample_sizes: vec![30, 100, 300, 1000],
            seeds: (0..10).collect(),
            k,
            restarts: 10,
            baseline_draws: 64,
            bound: ConvexEmConfig {
                record_trace: false,
                ..ConvexEmConfig::default()
            },
            em: ContinuousEmConfig {
                k,
                ..ContinuousEmConfig::default()
            },
        }
    }
}

/// One experiment cell: an `(n, seed)` pair with its bounds, baselines,
/// and ratios. `ll_true` and `opt_ratio_true` are present only when the
/// generator's own mixture is expressible in the candidate set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveCell {
    pub n: usize,
    pub seed: u64,
    pub ub: f64,
    pub lb: f64,
    pub ll_rand: f64,
    pub ll_true: Option<f64>,
    pub opt_ratio: f64,
    pub opt_ratio_true: Option<f64>,
}

/// Runs the full pipeline (sample, bound, multistart, calibrate) on
/// every `(n, seed)` cell. Derived seeds keep the stages independent:
/// the multistart uses `seed + 10_000` and the baseline `seed + 20_000`.
pub fn tightness_curve(
    generator: &DataGenerator,
    set: &ComponentSet,
    config: &CurveConfig,
) -> Result<Vec<CurveCell>> {
    if config.sample_sizes.is_empty() || config.seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "the experiment needs at least one sample size and one seed".into(),
        ));
    }
    let true_w = generator.true_weights_in(set);
    let cells: Vec<(usize, u64)> = config
        .sample_sizes
        .iter()
        .flat_map(|&n| config.seeds.iter().map(move |&s| (n, s)))
        .collect();
    cells
        .into_par_iter()
        .map(|(n, seed)| {
            let dataset = generator.sample(n, seed)?;
            let matrix = build_matrix(&dataset, set)?;
            let bound = convex_em(&matrix, &config.bound)?;
            let multistart = MultistartConfig {
                restarts: config.restarts,
                base_seed: seed + 10_000,
                refit: true,
                em: ContinuousEmConfig {
                    k: config.k,
                    ..config.em.clone()
                },
            };
            let (solution, _) =
                projected_em_multistart(&dataset, set, &matrix, &SymmetrizedKl, &multistart)?;
            let ll_rand =
                random_baseline_ll(&matrix, config.k, config.baseline_draws, seed + 20_000)?;
            let opt_ratio = clamp_ratio(optimality_ratio(
                solution.ll,
                bound.certified_ub,
                ll_rand,
            )?);
            let (ll_true, opt_ratio_true) = match &true_w {
                Some(w) => {
                    let ll = mixture_ll(&matrix, w)?;
                    let ratio =
                        clamp_ratio(optimality_ratio(ll, bound.certified_ub, ll_rand)?);
                    (Some(ll), Some(ratio))
                }
                None => (None, None),
            };
            Ok(CurveCell {
                n,
                seed,
                ub: bound.certified_ub,
                lb: solution.ll,
                ll_rand,
                ll_true,
                opt_ratio,
                opt_ratio_true,
            })
        })
        .collect()
}
