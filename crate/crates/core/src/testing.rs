//! Slow, simple reference implementations used by tests to cross-check
//! the optimized code paths. Everything here favors obviousness over
//! speed; none of it is part of the supported API.

use nalgebra::DMatrix;
use rand::Rng;

use crate::likelihood::{LogLikelihoodMatrix, WeightVector};
use crate::math::pairwise_sum;
use crate::model::{ComponentSet, Dataset, GaussianComponent, SetProvenance};
use crate::rng::rng_from_seed;

/// Multivariate normal log density via explicit inverse and determinant;
/// no Cholesky, no scratch reuse.
pub fn dense_log_density(mean: &[f64], cov: &DMatrix<f64>, x: &[f64]) -> f64 {
    let d = mean.len();
    assert_eq!(cov.nrows(), d, "covariance must match the mean dimension");
    assert_eq!(x.len(), d, "point must match the mean dimension");
    let det = cov.determinant();
    assert!(det > 0.0, "reference density needs a positive determinant");
    let inv = cov.clone().try_inverse().expect("covariance must be invertible");
    let diff = DMatrix::from_fn(d, 1, |i, _| x[i] - mean[i]);
    let quad = (diff.transpose() * &inv * &diff)[(0, 0)];
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad)
}

/// Mixture log-likelihood per point, computed in plain probability space
/// with Kahan compensation. Valid only while densities stay in range.
pub fn naive_mixture_ll(matrix: &LogLikelihoodMatrix, weights: &[f64]) -> f64 {
    let n = matrix.n_points();
    let m = matrix.n_models();
    assert_eq!(weights.len(), m, "one weight per model");
    let mut total = 0.0;
    let mut comp = 0.0;
    for i in 0..n {
        let mut p = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            p += w * matrix.entry(i, j).exp();
        }
        assert!(p > 0.0, "naive evaluation underflowed; use a smaller instance");
        let term = p.ln() - comp;
        let t = total + term;
        comp = (t - total) - term;
        total = t;
    }
    total / n as f64
}

/// Euclidean projection onto the probability simplex (sorting method).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("no NaN in simplex projection"));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    let mut rho = 0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
            rho = k + 1;
        }
    }
    assert!(rho > 0, "projection always has at least one active coordinate");
    v.iter().map(|&u| (u - theta).max(0.0)).collect()
}

fn ll_and_gradient(matrix: &LogLikelihoodMatrix, w: &[f64]) -> (f64, Vec<f64>) {
    let n = matrix.n_points();
    let m = matrix.n_models();
    let mut ll = 0.0;
    let mut g = vec![0.0; m];
    for i in 0..n {
        let row: Vec<f64> = (0..m).map(|j| matrix.entry(i, j)).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = row.iter().map(|&l| (l - max).exp()).collect();
        let p: f64 = w.iter().zip(&dens).map(|(&wj, &dj)| wj * dj).sum();
        assert!(p > 0.0, "mixture density vanished in the reference solver");
        ll += p.ln() + max;
        for (gj, &dj) in g.iter_mut().zip(&dens) {
            *gj += dj / p;
        }
    }
    (ll / n as f64, g.iter().map(|&v| v / n as f64).collect())
}

/// Reference maximizer of the relaxed objective: projected gradient
/// ascent with backtracking line search from several random starts.
/// Slow but independent of the production update rule.
pub fn reference_simplex_optimum(matrix: &LogLikelihoodMatrix, seed: u64, tol: f64) -> f64 {
    let m = matrix.n_models();
    let mut rng = rng_from_seed(seed);
    let mut best = f64::NEG_INFINITY;
    let starts = 5;
    for s in 0..starts {
        let mut w = if s == 0 {
            vec![1.0 / m as f64; m]
        } else {
            let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
            project_to_simplex(&raw)
        };
        let (mut ll, mut g) = ll_and_gradient(matrix, &w);
        let mut step = 1.0;
        for _ in 0..200_000 {
            let mut improved = false;
            // Backtracking: accept the first projected step that improves.
            while step > 1e-18 {
                let trial: Vec<f64> = w
                    .iter()
                    .zip(&g)
                    .map(|(&wj, &gj)| wj + step * gj)
                    .collect();
                let trial = project_to_simplex(&trial);
                let (trial_ll, trial_g) = ll_and_gradient(matrix, &trial);
                if trial_ll > ll {
                    let gain = trial_ll - ll;
                    w = trial;
                    ll = trial_ll;
                    g = trial_g;
                    improved = true;
                    step *= 2.0;
                    if gain < tol {
                        improved = false;
                    }
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        best = best.max(ll);
    }
    best
}

/// Exhaustive search over a barycentric grid with `resolution` cells per
/// axis; returns the best grid log-likelihood. Only for tiny `m`.
pub fn simplex_grid_maximum(matrix: &LogLikelihoodMatrix, resolution: usize) -> f64 {
    let m = matrix.n_models();
    assert!(m >= 1 && m <= 4, "grid search is exponential in the model count");
    let mut best = f64::NEG_INFINITY;
    let mut counts = vec![0usize; m];
    loop {
        let used: usize = counts[..m - 1].iter().sum();
        if used <= resolution {
            counts[m - 1] = resolution - used;
            let w: Vec<f64> = counts.iter().map(|&c| c as f64 / resolution as f64).collect();
            best = best.max(masked_ll(matrix, &w));
        }
        // Advance the mixed-radix counter over the first m-1 coordinates.
        let mut k = 0;
        loop {
            if k == m - 1 {
                return best;
            }
            counts[k] += 1;
            if counts[..m - 1].iter().sum::<usize>() <= resolution {
                break;
            }
            counts[k] = 0;
            k += 1;
        }
    }
}

/// Like `ll_and_gradient` but tolerates zero-density rows (boundary grid
/// points) by reporting negative infinity instead of panicking.
fn masked_ll(matrix: &LogLikelihoodMatrix, w: &[f64]) -> f64 {
    let n = matrix.n_points();
    let m = matrix.n_models();
    let mut ll = 0.0;
    for i in 0..n {
        let row: Vec<f64> = (0..m).map(|j| matrix.entry(i, j)).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let p: f64 = w
            .iter()
            .zip(&row)
            .map(|(&wj, &lj)| wj * (lj - max).exp())
            .sum();
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        ll += p.ln() + max;
    }
    ll / n as f64
}

/// Spearman rank correlation; ties get average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "paired samples required");
    assert!(a.len() >= 2, "correlation needs at least two pairs");
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean).powi(2);
        vb += (y - mean).powi(2);
    }
    assert!(va > 0.0 && vb > 0.0, "constant sequences have no rank correlation");
    cov / (va * vb).sqrt()
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("no NaN in ranks"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Composite Simpson quadrature on `[lo, hi]` with `2 * half_intervals`
/// subintervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, half_intervals: usize) -> f64 {
    assert!(half_intervals > 0, "at least one Simpson panel required");
    let n = 2 * half_intervals;
    let h = (hi - lo) / n as f64;
    let mut terms = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        terms.push(w * f(lo + k as f64 * h));
    }
    pairwise_sum(&terms) * h / 3.0
}

/// Small random well-conditioned test instance: `n` points of dimension
/// `d` and `m` unit-ish Gaussian candidates near the data.
pub fn random_instance(seed: u64, n: usize, d: usize, m: usize) -> (Dataset, ComponentSet) {
    let mut rng = rng_from_seed(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let comps: Vec<GaussianComponent> = (0..m)
        .map(|_| {
            let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let scale: f64 = rng.random_range(0.5..2.0);
            let cov = DMatrix::from_diagonal_element(d, d, scale);
            GaussianComponent::new(mean, cov).expect("diagonal covariance is positive definite")
        })
        .collect();
    let dataset = Dataset::from_rows(rows).expect("generated rows are rectangular");
    let set = ComponentSet::new(comps, SetProvenance::Explicit).expect("non-empty set");
    (dataset, set)
}

/// Uniformly random simplex point (independent exponentials normalized).
pub fn random_simplex_point<R: Rng>(rng: &mut R, m: usize) -> WeightVector {
    let raw: Vec<f64> = (0..m)
        .map(|_| (-(1.0 - rng.random::<f64>()).ln()).max(f64::MIN_POSITIVE))
        .collect();
    let total: f64 = raw.iter().sum();
    WeightVector::dense(raw.into_iter().map(|v| v / total).collect())
        .expect("normalized positives form a valid weight vector")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_projection_fixes_simplex_points() {
        let w = vec![0.2, 0.5, 0.3];
        let p = project_to_simplex(&w);
        for (a, b) in w.iter().zip(&p) {
            assert!((a - b).abs() < 1e-15, "projection must fix feasible points");
        }
    }

    #[test]
    fn simplex_projection_known_value() {
        // Projecting (1, 1) onto the simplex splits the excess evenly.
        let p = project_to_simplex(&[1.0, 1.0]);
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);
        // One dominant coordinate saturates.
        let p = project_to_simplex(&[2.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn simpson_integrates_cubics_exactly() {
        // Simpson is exact on cubics: integral of x^3 on [0, 2] is 4.
        let v = simpson(|x| x * x * x, 0.0, 2.0, 1);
        assert!((v - 4.0).abs() < 1e-13, "got {v}");
    }

    #[test]
    fn spearman_detects_monotone_relations() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let up = [2.0, 4.0, 5.0, 7.0, 11.0];
        let down = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&a, &up) - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &down) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties() {
        let a = [1.0, 2.0, 2.0, 3.0];
        let b = [1.0, 2.0, 2.0, 3.0];
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn average_ranks_on_ties() {
        let r = average_ranks(&[10.0, 20.0, 20.0, 30.0]);
        assert_eq!(r, vec![1.0, 2.5, 2.5, 4.0]);
    }
}
