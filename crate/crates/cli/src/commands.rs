//! The five commands. Each one loads its inputs, runs the pipeline
//! stages it needs, stages artifacts through the [`RunWriter`], and
//! reports whether the run converged.

use rayon::prelude::*;

use mixcert_core::bound::{convex_em, convex_em_chunked, BoundResult, ConvexEmConfig};
use mixcert_core::certify::{
    certify, clamp_ratio, optimality_ratio, tightness_curve, CertifyOptions, CurveConfig,
};
use mixcert_core::error::{Error, Result};
use mixcert_core::likelihood::{build_matrix_with_budget, LogLikelihoodMatrix};
use mixcert_core::model::{c_separation, ComponentSet, Dataset, GaussianComponent, MixtureModel};
use mixcert_core::patch::PixelImage;
use mixcert_core::report::{
    write_bound, write_certificate, write_curve_csv, write_restarts_csv, write_solution,
};
use mixcert_core::sample::{random_mixture, sample_mixture, RandomMixtureParams};
use mixcert_core::solvers::{
    brute_force_mle, projected_em_multistart, random_baseline_ll, BruteForceConfig,
    DiscreteSolution, MultistartConfig, ParamEuclidean, RestartRecord, SymmetrizedKl,
};
use mixcert_core::testing::spearman;

use crate::config::{
    BruteForceMode, ExperimentSection, MetricChoice, RunConfig, BASELINE_SEED_OFFSET,
    SOLVE_SEED_OFFSET,
};
use crate::formats::{label_image, write_dataset_csv, write_ppm};
use crate::inputs::{data_generator, load_data, load_models, LoadedData};
use crate::output::RunWriter;

pub struct CommandOutcome {
    pub converged: bool,
}

/// The bound stage: chunked column streaming when configured and
/// actually narrower than the set, in-memory (budget-checked) otherwise.
fn bound_stage(
    config: &RunConfig,
    dataset: &Dataset,
    set: &ComponentSet,
    matrix: Option<&LogLikelihoodMatrix>,
) -> Result<BoundResult> {
    let core = config.bound.to_core();
    match (config.bound.column_block, matrix) {
        (Some(block), _) if block < set.len() => {
            convex_em_chunked(dataset, set, &core, block)
        }
        (_, Some(matrix)) => convex_em(matrix, &core),
        (_, None) => {
            let matrix = build_matrix_with_budget(dataset, set, config.memory_budget_bytes)?;
            convex_em(&matrix, &core)
        }
    }
}

fn run_multistart(
    config: &RunConfig,
    k: usize,
    dataset: &Dataset,
    set: &ComponentSet,
    matrix: &LogLikelihoodMatrix,
) -> Result<(DiscreteSolution, Vec<RestartRecord>)> {
    let ms = MultistartConfig {
        restarts: config.solve.restarts,
        base_seed: config.seed + SOLVE_SEED_OFFSET,
        em: config.solve.em_config(k),
        refit: config.solve.refit,
    };
    match config.solve.metric {
        MetricChoice::SymmetrizedKl => {
            projected_em_multistart(dataset, set, matrix, &SymmetrizedKl, &ms)
        }
        MetricChoice::ParamEuclidean => {
            projected_em_multistart(dataset, set, matrix, &ParamEuclidean, &ms)
        }
    }
}

fn maybe_brute_force(
    config: &RunConfig,
    matrix: &LogLikelihoodMatrix,
    k: usize,
) -> Result<Option<DiscreteSolution>> {
    let bf = BruteForceConfig {
        max_supports: config.solve.brute_force_max_supports,
        ..BruteForceConfig::default()
    };
    match config.solve.brute_force {
        BruteForceMode::Off => Ok(None),
        BruteForceMode::Require => brute_force_mle(matrix, k, &bf).map(Some),
        BruteForceMode::Auto => match brute_force_mle(matrix, k, &bf) {
            Ok(solution) => Ok(Some(solution)),
            Err(Error::ResourceLimit { required, budget, .. }) => {
                eprintln!(
                    "brute force skipped: {required} supports exceed the budget of {budget}"
                );
                Ok(None)
            }
            Err(e) => Err(e),
        },
    }
}

/// Sampled datasets exist only inside this run, so they are written out;
/// file-backed ones are already on disk.
fn write_dataset_if_generated(writer: &mut RunWriter, data: &LoadedData) -> Result<()> {
    if data.generated {
        writer.write("dataset.csv", |buf| write_dataset_csv(buf, &data.dataset))?;
    }
    Ok(())
}

fn certify_options(config: &RunConfig, config_hash: &str) -> CertifyOptions {
    CertifyOptions {
        baseline_draws: config.certify.baseline_draws,
        baseline_seed: config
            .certify
            .baseline_seed
            .unwrap_or(config.seed + BASELINE_SEED_OFFSET),
        config_hash: config_hash.to_string(),
    }
}

pub fn cmd_bound(config: &RunConfig, writer: &mut RunWriter) -> Result<CommandOutcome> {
    let data = load_data(config)?;
    let set = load_models(config, data.image.as_ref())?;
    let bound = bound_stage(config, &data.dataset, &set, None)?;
    write_dataset_if_generated(writer, &data)?;
    writer.write("bound.json", |buf| write_bound(buf, &bound))?;
    println!(
        "bound: n = {}, M = {}, certified ub = {:.6}, gap = {:.3e}, {} iterations{}",
        data.dataset.n_points(),
        set.len(),
        bound.certified_ub,
        bound.final_gap,
        bound.iterations_used,
        if bound.converged { "" } else { " (not converged)" },
    );
    Ok(CommandOutcome { converged: bound.converged })
}

pub fn cmd_solve(config: &RunConfig, writer: &mut RunWriter) -> Result<CommandOutcome> {
    let k = config.k_required("solve")?;
    let data = load_data(config)?;
    let set = load_models(config, data.image.as_ref())?;
    let matrix = build_matrix_with_budget(&data.dataset, &set, config.memory_budget_bytes)?;
    let (solution, records) = run_multistart(config, k, &data.dataset, &set, &matrix)?;
    write_dataset_if_generated(writer, &data)?;
    writer.write("solution.json", |buf| write_solution(buf, &solution))?;
    writer.write("restarts.csv", |buf| write_restarts_csv(buf, &records))?;
    println!(
        "solve: ll = {:.6} on {} of {} candidates ({} of {} restarts succeeded)",
        solution.ll,
        solution.support.len(),
        set.len(),
        records.len(),
        config.solve.restarts,
    );
    if let Some(exact) = maybe_brute_force(config, &matrix, k)? {
        println!("brute force: ll = {:.6}", exact.ll);
        writer.write("solution_brute_force.json", |buf| write_solution(buf, &exact))?;
    }
    Ok(CommandOutcome { converged: true })
}

pub fn cmd_certify(
    config: &RunConfig,
    config_hash: &str,
    writer: &mut RunWriter,
) -> Result<CommandOutcome> {
    let k = config.k_required("certify")?;
    let data = load_data(config)?;
    let set = load_models(config, data.image.as_ref())?;
    let matrix = build_matrix_with_budget(&data.dataset, &set, config.memory_budget_bytes)?;
    let bound = bound_stage(config, &data.dataset, &set, Some(&matrix))?;
    let (mut solution, records) = run_multistart(config, k, &data.dataset, &set, &matrix)?;
    let exact = maybe_brute_force(config, &matrix, k)?;
    if let Some(s) = &exact {
        if s.ll > solution.ll {
            solution = s.clone();
        }
    }
    let certificate = certify(
        &data.dataset,
        &set,
        &matrix,
        k,
        &bound,
        &solution,
        &certify_options(config, config_hash),
    )?;
    write_dataset_if_generated(writer, &data)?;
    writer.write("bound.json", |buf| write_bound(buf, &bound))?;
    writer.write("solution.json", |buf| write_solution(buf, &solution))?;
    writer.write("restarts.csv", |buf| write_restarts_csv(buf, &records))?;
    if let Some(s) = &exact {
        writer.write("solution_brute_force.json", |buf| write_solution(buf, s))?;
    }
    writer.write("certificate.json", |buf| write_certificate(buf, &certificate))?;
    println!(
        "certify: opt ratio = {:.4} (lb = {:.6}, certified ub = {:.6}, baseline = {:.6}){}",
        certificate.opt_ratio,
        certificate.lb_ll,
        certificate.certified_ub,
        certificate.ll_rand,
        if certificate.converged { "" } else { " (bound not converged)" },
    );
    Ok(CommandOutcome { converged: bound.converged })
}

pub fn cmd_experiment(config: &RunConfig, writer: &mut RunWriter) -> Result<CommandOutcome> {
    let k = config.k_required("experiment")?;
    let Some(section) = &config.experiment else {
        return Err(Error::InvalidArgument(
            "the experiment command needs an \"experiment\" section".into(),
        ));
    };
    match section {
        ExperimentSection::Tightness { sample_sizes, seeds, restarts, baseline_draws } => {
            run_tightness(config, k, sample_sizes, *seeds, *restarts, *baseline_draws, writer)?
        }
        ExperimentSection::Separation { targets, repeats, n, restarts, baseline_draws } => {
            run_separation(
                config,
                k,
                targets,
                *repeats,
                *n,
                *restarts,
                *baseline_draws,
                writer,
            )?
        }
        ExperimentSection::Restarts { instances, n, restarts, baseline_draws } => {
            run_restarts_study(
                config,
                k,
                *instances,
                *n,
                *restarts,
                *baseline_draws,
                writer,
            )?
        }
    }
    Ok(CommandOutcome { converged: true })
}

fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    values.sort_by(|a, b| a.partial_cmp(b).expect("comparable values"));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

fn experiment_bound_config(config: &RunConfig) -> ConvexEmConfig {
    // Traces across hundreds of cells would dwarf the results; always off.
    ConvexEmConfig {
        record_trace: false,
        ..config.bound.to_core()
    }
}

fn run_tightness(
    config: &RunConfig,
    k: usize,
    sample_sizes: &[usize],
    seeds: u64,
    restarts: usize,
    baseline_draws: usize,
    writer: &mut RunWriter,
) -> Result<()> {
    let generator = data_generator(config)?;
    let set = load_models(config, None)?;
    let mut curve = CurveConfig::new(k);
    curve.sample_sizes = sample_sizes.to_vec();
    curve.seeds = (0..seeds).map(|i| config.seed + i).collect();
    curve.restarts = restarts;
    curve.baseline_draws = baseline_draws;
    curve.bound = experiment_bound_config(config);
    curve.em = config.solve.em_config(k);
    let cells = tightness_curve(&generator, &set, &curve)?;
    writer.write("curve.csv", |buf| write_curve_csv(buf, &cells))?;
    for &n in sample_sizes {
        let mut ratios: Vec<f64> =
            cells.iter().filter(|c| c.n == n).map(|c| c.opt_ratio).collect();
        println!("tightness: n = {n}, median opt ratio = {:.4}", median(&mut ratios));
    }
    Ok(())
}

/// A random K-mixture whose means are rescaled about their centroid so
/// the c-separation lands on `target` exactly (separation is linear in
/// mean scaling; covariances are untouched).
fn scaled_random_mixture(k: usize, seed: u64, target: f64) -> Result<MixtureModel> {
    assert!(target > 0.0, "separation target must be positive");
    let params = RandomMixtureParams::default();
    for attempt in 0..10 {
        let model = random_mixture(k, &params, seed + attempt * 10_000_000)?;
        let c = c_separation(&model);
        if !(c > 1e-9) || !c.is_finite() {
            continue;
        }
        let scale = target / c;
        let d = model.dim();
        let mut centroid = vec![0.0; d];
        for comp in model.components() {
            for (acc, v) in centroid.iter_mut().zip(comp.mean()) {
                *acc += v;
            }
        }
        for v in &mut centroid {
            *v /= k as f64;
        }
        let components: Vec<GaussianComponent> = model
            .components()
            .iter()
            .map(|comp| {
                let mean: Vec<f64> = comp
                    .mean()
                    .iter()
                    .zip(&centroid)
                    .map(|(m, c0)| c0 + scale * (m - c0))
                    .collect();
                GaussianComponent::new(mean, comp.covariance().clone())
            })
            .collect::<Result<_>>()?;
        return MixtureModel::new(model.weights().to_vec(), components);
    }
    Err(Error::NumericalFailure(
        "no drawn mixture had usable separation to rescale".into(),
    ))
}

struct SeparationRow {
    target: f64,
    repeat: usize,
    c: f64,
    ub: f64,
    lb: f64,
    ll_rand: f64,
    ratio: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_separation(
    config: &RunConfig,
    k: usize,
    targets: &[f64],
    repeats: usize,
    n: usize,
    restarts: usize,
    baseline_draws: usize,
    writer: &mut RunWriter,
) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidArgument(
            "the separation sweep needs k >= 2 (one component has no separation)".into(),
        ));
    }
    if targets.is_empty() || repeats == 0 {
        return Err(Error::InvalidArgument(
            "the separation sweep needs at least one target and one repeat".into(),
        ));
    }
    let set = load_models(config, None)?;
    if set.dim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "the separation sweep draws 2-D mixtures; the candidate set is {}-D",
            set.dim()
        )));
    }
    let bound_cfg = experiment_bound_config(config);
    let cells: Vec<(usize, usize)> = (0..targets.len())
        .flat_map(|t| (0..repeats).map(move |r| (t, r)))
        .collect();
    let rows: Vec<SeparationRow> = cells
        .into_par_iter()
        .map(|(t, r)| {
            let idx = (t * repeats + r) as u64;
            let target = targets[t];
            let model = scaled_random_mixture(k, config.seed + 400_000 + idx, target)?;
            let dataset = sample_mixture(&model, n, config.seed + 100_000 + idx)?;
            let matrix =
                build_matrix_with_budget(&dataset, &set, config.memory_budget_bytes)?;
            let bound = convex_em(&matrix, &bound_cfg)?;
            let ms = MultistartConfig {
                restarts,
                base_seed: config.seed + 200_000 + idx * 10_000,
                em: config.solve.em_config(k),
                refit: config.solve.refit,
            };
            let (solution, _) = match config.solve.metric {
                MetricChoice::SymmetrizedKl => {
                    projected_em_multistart(&dataset, &set, &matrix, &SymmetrizedKl, &ms)?
                }
                MetricChoice::ParamEuclidean => {
                    projected_em_multistart(&dataset, &set, &matrix, &ParamEuclidean, &ms)?
                }
            };
            let ll_rand =
                random_baseline_ll(&matrix, k, baseline_draws, config.seed + 300_000 + idx)?;
            let raw = optimality_ratio(solution.ll, bound.certified_ub, ll_rand)?;
            Ok(SeparationRow {
                target,
                repeat: r,
                c: c_separation(&model),
                ub: bound.certified_ub,
                lb: solution.ll,
                ll_rand,
                ratio: clamp_ratio(raw),
            })
        })
        .collect::<Result<_>>()?;
    writer.write("separation.csv", |buf| {
        use std::io::Write;
        writeln!(buf, "target,repeat,c_separation,ub,lb,ll_rand,opt_ratio")?;
        for row in &rows {
            writeln!(
                buf,
                "{},{},{},{},{},{},{}",
                row.target, row.repeat, row.c, row.ub, row.lb, row.ll_rand, row.ratio
            )?;
        }
        Ok(())
    })?;
    writer.write("separation_bins.csv", |buf| {
        use std::io::Write;
        writeln!(buf, "target,count,mean_ratio,median_ratio")?;
        for (t, &target) in targets.iter().enumerate() {
            let mut ratios: Vec<f64> = rows
                .iter()
                .skip(t * repeats)
                .take(repeats)
                .map(|row| row.ratio)
                .collect();
            let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
            writeln!(buf, "{},{},{},{}", target, ratios.len(), mean, median(&mut ratios))?;
        }
        Ok(())
    })?;
    for (t, &target) in targets.iter().enumerate() {
        let mut ratios: Vec<f64> =
            rows.iter().skip(t * repeats).take(repeats).map(|row| row.ratio).collect();
        println!(
            "separation: c = {target}, median opt ratio = {:.4} over {repeats} repeats",
            median(&mut ratios)
        );
    }
    Ok(())
}

fn run_restarts_study(
    config: &RunConfig,
    k: usize,
    instances: usize,
    n: usize,
    restarts: usize,
    baseline_draws: usize,
    writer: &mut RunWriter,
) -> Result<()> {
    if instances == 0 {
        return Err(Error::InvalidArgument("the study needs at least one instance".into()));
    }
    let set = load_models(config, None)?;
    if set.dim() != 2 {
        return Err(Error::InvalidArgument(format!(
            "the restarts study draws 2-D mixtures; the candidate set is {}-D",
            set.dim()
        )));
    }
    let bound_cfg = experiment_bound_config(config);
    let rows: Vec<(f64, f64)> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let idx = i as u64;
            let model =
                random_mixture(k, &RandomMixtureParams::default(), config.seed + 400_000 + idx)?;
            let dataset = sample_mixture(&model, n, config.seed + 100_000 + idx)?;
            let matrix =
                build_matrix_with_budget(&dataset, &set, config.memory_budget_bytes)?;
            let bound = convex_em(&matrix, &bound_cfg)?;
            let ms = MultistartConfig {
                restarts,
                base_seed: config.seed + 200_000 + idx * 10_000,
                em: config.solve.em_config(k),
                refit: config.solve.refit,
            };
            let (solution, records) = match config.solve.metric {
                MetricChoice::SymmetrizedKl => {
                    projected_em_multistart(&dataset, &set, &matrix, &SymmetrizedKl, &ms)?
                }
                MetricChoice::ParamEuclidean => {
                    projected_em_multistart(&dataset, &set, &matrix, &ParamEuclidean, &ms)?
                }
            };
            let ll_rand =
                random_baseline_ll(&matrix, k, baseline_draws, config.seed + 300_000 + idx)?;
            // records[0] is the lowest-indexed restart that succeeded: the
            // single-restart pipeline's outcome.
            let first = records[0].refit_ll;
            let ratio_1 = clamp_ratio(optimality_ratio(first, bound.certified_ub, ll_rand)?);
            let ratio_r =
                clamp_ratio(optimality_ratio(solution.ll, bound.certified_ub, ll_rand)?);
            Ok((ratio_1, ratio_r))
        })
        .collect::<Result<_>>()?;
    writer.write("restarts_study.csv", |buf| {
        use std::io::Write;
        writeln!(buf, "instance,ratio_1,ratio_r,improvement")?;
        for (i, (r1, rr)) in rows.iter().enumerate() {
            writeln!(buf, "{},{},{},{}", i, r1, rr, rr - r1)?;
        }
        Ok(())
    })?;
    let first: Vec<f64> = rows.iter().map(|(r1, _)| *r1).collect();
    let gains: Vec<f64> = rows.iter().map(|(r1, rr)| rr - r1).collect();
    let constant =
        |v: &[f64]| v.windows(2).all(|w| w[0] == w[1]);
    if instances >= 2 && !constant(&first) && !constant(&gains) {
        println!(
            "restarts: Spearman(ratio after 1, improvement after {restarts}) = {:.3} \
             over {instances} instances",
            spearman(&first, &gains)
        );
    } else {
        println!("restarts: rank correlation undefined over {instances} instances");
    }
    Ok(())
}

pub fn cmd_segment(
    config: &RunConfig,
    config_hash: &str,
    writer: &mut RunWriter,
) -> Result<CommandOutcome> {
    let k = config.k_required("segment")?;
    let data = load_data(config)?;
    let Some(image) = &data.image else {
        return Err(Error::InvalidArgument(
            "segment needs an image data source".into(),
        ));
    };
    let set = load_models(config, Some(image))?;
    let matrix = build_matrix_with_budget(&data.dataset, &set, config.memory_budget_bytes)?;
    let bound = bound_stage(config, &data.dataset, &set, Some(&matrix))?;
    let (solution, records) = run_multistart(config, k, &data.dataset, &set, &matrix)?;
    let certificate = certify(
        &data.dataset,
        &set,
        &matrix,
        k,
        &bound,
        &solution,
        &certify_options(config, config_hash),
    )?;
    let labels = segment_labels(image, &set, &solution)?;
    let mask = label_image(image.width(), image.height(), &labels)?;
    write_dataset_if_generated(writer, &data)?;
    writer.write("bound.json", |buf| write_bound(buf, &bound))?;
    writer.write("solution.json", |buf| write_solution(buf, &solution))?;
    writer.write("restarts.csv", |buf| write_restarts_csv(buf, &records))?;
    writer.write("certificate.json", |buf| write_certificate(buf, &certificate))?;
    writer.write("mask.ppm", |buf| write_ppm(buf, &mask))?;
    println!(
        "segment: {} x {} image, {} clusters used of budget {k}, opt ratio = {:.4}",
        image.width(),
        image.height(),
        solution.support.len(),
        certificate.opt_ratio,
    );
    Ok(CommandOutcome { converged: bound.converged })
}

/// Hard assignment: each pixel goes to the supported component
/// maximizing `ln w_j + ln N(x; mu_j, Sigma_j)`.
fn segment_labels(
    image: &PixelImage,
    set: &ComponentSet,
    solution: &DiscreteSolution,
) -> Result<Vec<usize>> {
    let components: Vec<&GaussianComponent> =
        solution.support.iter().map(|&j| set.get(j)).collect();
    let log_weights: Vec<f64> = solution.weights.iter().map(|w| w.ln()).collect();
    (0..image.width() * image.height())
        .into_par_iter()
        .map(|p| {
            let x = image.feature(p / image.width(), p % image.width());
            let mut best = (0, f64::NEG_INFINITY);
            for (j, (comp, lw)) in components.iter().zip(&log_weights).enumerate() {
                let score = lw + comp.log_density(&x)?;
                if score > best.1 {
                    best = (j, score);
                }
            }
            Ok(best.0)
        })
        .collect()
}
