//! Contract tests for the convex bound: soundness of the certificate,
//! agreement with an independent reference optimizer, equivalence of the
//! streaming path, and bitwise reproducibility across thread counts.

use mixcert_core::bound::{convex_em, convex_em_chunked, ConvexEmConfig, InitStrategy};
use mixcert_core::likelihood::{build_matrix, mixture_ll};
use mixcert_core::rng::rng_from_seed;
use mixcert_core::testing::{random_instance, random_simplex_point, reference_simplex_optimum,
    simplex_grid_maximum};

fn tight() -> ConvexEmConfig {
    ConvexEmConfig {
        gap_tolerance: 1e-11,
        relative_ll_tolerance: 0.0,
        max_iterations: 200_000,
        ..ConvexEmConfig::default()
    }
}

#[test]
fn certified_ub_dominates_random_feasible_points() {
    for seed in 0..10 {
        let (dataset, set) = random_instance(1000 + seed, 60, 2, 12);
        let matrix = build_matrix(&dataset, &set).unwrap();
        let result = convex_em(&matrix, &ConvexEmConfig::default()).unwrap();
        let mut rng = rng_from_seed(9000 + seed);
        for _ in 0..200 {
            let w = random_simplex_point(&mut rng, set.len());
            let ll = mixture_ll(&matrix, &w).unwrap();
            assert!(
                ll <= result.certified_ub + 1e-10,
                "seed {seed}: feasible point beat the certificate: {ll} > {}",
                result.certified_ub
            );
        }
    }
}

#[test]
fn matches_projected_gradient_reference() {
    for seed in 0..8 {
        let (dataset, set) = random_instance(2000 + seed, 50, 2, 8);
        let matrix = build_matrix(&dataset, &set).unwrap();
        let result = convex_em(&matrix, &tight()).unwrap();
        let reference = reference_simplex_optimum(&matrix, 4000 + seed, 1e-13);
        assert!(
            (result.ub_ll - reference).abs() < 1e-7,
            "seed {seed}: convex optimum {} vs reference {}",
            result.ub_ll,
            reference
        );
        assert!(
            reference <= result.certified_ub + 1e-10,
            "seed {seed}: reference exceeded the certificate"
        );
    }
}

#[test]
fn matches_barycentric_grid_on_tiny_sets() {
    for seed in 0..4 {
        let (dataset, set) = random_instance(3000 + seed, 40, 1, 3);
        let matrix = build_matrix(&dataset, &set).unwrap();
        let result = convex_em(&matrix, &tight()).unwrap();
        let grid_best = simplex_grid_maximum(&matrix, 1000);
        assert!(
            grid_best <= result.certified_ub + 1e-10,
            "seed {seed}: grid point beat the certificate"
        );
        // A grid with 1e-3 spacing comes within O(1e-6) of a smooth
        // optimum, so the two values must be close from below.
        assert!(
            result.ub_ll >= grid_best - 1e-12,
            "seed {seed}: solver fell below the best grid point: {} < {grid_best}",
            result.ub_ll
        );
        assert!(
            result.ub_ll - grid_best < 1e-4,
            "seed {seed}: solver and grid disagree: {} vs {grid_best}",
            result.ub_ll
        );
    }
}

#[test]
fn streaming_path_agrees_with_in_memory() {
    for seed in 0..6 {
        let (dataset, set) = random_instance(5000 + seed, 40, 2, 9);
        let matrix = build_matrix(&dataset, &set).unwrap();
        let config = tight();
        let direct = convex_em(&matrix, &config).unwrap();
        for block in [1, 3] {
            let chunked = convex_em_chunked(&dataset, &set, &config, block).unwrap();
            assert!(
                (direct.certified_ub - chunked.certified_ub).abs() < 1e-10,
                "seed {seed} block {block}: {} vs {}",
                direct.certified_ub,
                chunked.certified_ub
            );
            assert!((direct.ub_ll - chunked.ub_ll).abs() < 1e-10);
        }
        let whole = convex_em_chunked(&dataset, &set, &config, set.len() + 5).unwrap();
        assert_eq!(
            direct.ub_ll.to_bits(),
            whole.ub_ll.to_bits(),
            "a single-block streaming run must be bit-identical"
        );
        assert_eq!(direct.certified_ub.to_bits(), whole.certified_ub.to_bits());
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let (dataset, set) = random_instance(7000, 90, 3, 15);
    let matrix = build_matrix(&dataset, &set).unwrap();
    let config = ConvexEmConfig {
        init: InitStrategy::SeededRandom(42),
        ..ConvexEmConfig::default()
    };
    let runs: Vec<_> = [1usize, 2, 4]
        .iter()
        .map(|&threads| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| convex_em(&matrix, &config).unwrap())
        })
        .collect();
    for r in &runs[1..] {
        assert_eq!(runs[0].ub_ll.to_bits(), r.ub_ll.to_bits());
        assert_eq!(runs[0].final_gap.to_bits(), r.final_gap.to_bits());
        assert_eq!(runs[0].iterations_used, r.iterations_used);
        assert_eq!(runs[0].weights, r.weights);
    }
    let streamed: Vec<_> = [1usize, 3]
        .iter()
        .map(|&threads| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| convex_em_chunked(&dataset, &set, &config, 4).unwrap())
        })
        .collect();
    assert_eq!(streamed[0].ub_ll.to_bits(), streamed[1].ub_ll.to_bits());
    assert_eq!(streamed[0].final_gap.to_bits(), streamed[1].final_gap.to_bits());
}

#[test]
fn init_choice_does_not_move_the_optimum() {
    let (dataset, set) = random_instance(8000, 70, 2, 10);
    let matrix = build_matrix(&dataset, &set).unwrap();
    let mut values = Vec::new();
    for seed in 0..5 {
        let config = ConvexEmConfig {
            init: InitStrategy::SeededRandom(seed),
            ..tight()
        };
        values.push(convex_em(&matrix, &config).unwrap().ub_ll);
    }
    let config = ConvexEmConfig { init: InitStrategy::Uniform, ..tight() };
    values.push(convex_em(&matrix, &config).unwrap().ub_ll);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(hi - lo < 1e-8, "init spread too wide: [{lo}, {hi}]");
}
