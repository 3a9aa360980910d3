//! The convex relaxation: maximize the mixture log-likelihood over the
//! full weight simplex (sparsity dropped) by multiplicative EM updates
//! with safeguarded overrelaxation.
//!
//! Because the relaxed objective is concave, the gradient certificate
//! `LL(w') <= LL(w) + (max_m g_m - 1)` holds for every feasible `w'` at
//! every iterate, so stopping at any point still yields a sound upper
//! bound: `certified_ub = ub_ll + final_gap`. The reported final values
//! are always recomputed from scratch at the final weights, never taken
//! from incrementally updated state.
//!
//! Two engines share one iteration loop. The in-memory engine caches the
//! density-ratio matrix `exp(L[i][m] - ell_i)` (column-major), making each
//! iteration a handful of multiply-add passes with no transcendentals; it
//! costs a second matrix-sized buffer. The streaming engine holds no
//! matrix at all and recomputes log densities on every pass, trading time
//! for O(N + M) memory.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::likelihood::{
    build_matrix, gap_from_gradient, normalized_ll, row_log_mixture, DataFingerprint,
    LogLikelihoodMatrix, WeightVector, ROW_CHUNK,
};
use crate::math::{pairwise_sum, LogSumExp};
use crate::model::{ComponentSet, Dataset};
use crate::rng::rng_from_seed;

/// Iterations between from-scratch recomputations of the incremental
/// state, bounding round-off drift.
const REFRESH_INTERVAL: usize = 32;

/// Inner blocking of support reductions; keeps accumulation error orders
/// of magnitude below the ascent tolerance.
const DOT_BLOCK: usize = 64;

/// Tolerance for the per-iteration ascent check (nats per point).
const MONOTONE_TOL: f64 = 1e-12;

/// Starting point of the convex solver.
#[derive(Debug, Clone)]
pub enum InitStrategy {
    /// Uniform weights over all candidates.
    Uniform,
    /// Caller-provided weights (must match the candidate count). Zero
    /// entries stay zero: multiplicative updates never leave the face the
    /// iteration starts on, so the result bounds only that face.
    Given(WeightVector),
    /// Dirichlet(1) weights drawn from the given seed.
    SeededRandom(u64),
}

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The duality gap reached `gap_tolerance`.
    GapConverged,
    /// The log-likelihood improvement fell below `relative_ll_tolerance`.
    LlStalled,
    /// `max_iterations` updates were used.
    MaxIterations,
}

/// Convex solver configuration.
#[derive(Debug, Clone)]
pub struct ConvexEmConfig {
    pub max_iterations: usize,
    /// Stop once the duality gap (nats/point) falls to this value.
    pub gap_tolerance: f64,
    /// Stop once the per-iteration gain falls to `tol * max(1, |LL|)`.
    /// Zero disables this test; gains are measured directly (not as a
    /// difference of log-likelihoods), so they stay resolvable far below
    /// the round-off floor of `LL` itself.
    pub relative_ll_tolerance: f64,
    /// Overrelaxation factor in `[1, 2)`; `1` disables overrelaxation.
    pub eta: f64,
    /// Weights at or below this are zeroed at finalization; `None` means
    /// `1e-12 / M`.
    pub prune_threshold: Option<f64>,
    pub init: InitStrategy,
    /// Record `(ll, gap)` per iteration. The final entry always matches
    /// the reported `(ub_ll, final_gap)`.
    pub record_trace: bool,
}

impl Default for ConvexEmConfig {
    fn default() -> Self {
        ConvexEmConfig {
            max_iterations: 10_000,
            gap_tolerance: 1e-8,
            relative_ll_tolerance: 0.0,
            eta: 1.8,
            prune_threshold: None,
            init: InitStrategy::Uniform,
            record_trace: true,
        }
    }
}

impl ConvexEmConfig {
    fn validate(&self, n_models: usize) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !self.gap_tolerance.is_finite() || self.gap_tolerance < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "gap tolerance must be finite and non-negative, got {}",
                self.gap_tolerance
            )));
        }
        if !self.relative_ll_tolerance.is_finite() || self.relative_ll_tolerance < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "relative ll tolerance must be finite and non-negative, got {}",
                self.relative_ll_tolerance
            )));
        }
        if !(1.0..2.0).contains(&self.eta) {
            return Err(Error::InvalidArgument(format!(
                "overrelaxation factor must lie in [1, 2), got {}",
                self.eta
            )));
        }
        if let Some(p) = self.prune_threshold {
            if !p.is_finite() || p < 0.0 || p >= 1.0 / n_models as f64 {
                return Err(Error::InvalidArgument(format!(
                    "prune threshold must lie in [0, 1/M), got {p}"
                )));
            }
        }
        if let InitStrategy::Given(w) = &self.init {
            if w.len() != n_models {
                return Err(Error::DimensionMismatch(format!(
                    "initial weights have {} entries for {} candidates",
                    w.len(),
                    n_models
                )));
            }
        }
        Ok(())
    }
}

/// One recorded iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub ll: f64,
    pub gap: f64,
}

/// Output of the convex solver: relaxed optimum, certificate, and
/// diagnostics.
#[derive(Debug, Clone)]
pub struct BoundResult {
    /// Final (pruned) weights over the candidate set.
    pub weights: WeightVector,
    /// Log-likelihood of `weights`, recomputed fresh at finalization.
    pub ub_ll: f64,
    /// Duality gap at `weights`, recomputed fresh at finalization.
    pub final_gap: f64,
    /// `ub_ll + final_gap`: an upper bound on the log-likelihood of every
    /// feasible weight vector, sparse ones included.
    pub certified_ub: f64,
    pub iterations_used: usize,
    pub termination: Termination,
    /// False when the solver stopped with `final_gap > 10 * gap_tolerance`.
    pub converged: bool,
    /// `(ll, gap)` per iteration starting from the initial point; empty
    /// when trace recording is off.
    pub trace: Vec<TracePoint>,
    pub(crate) fingerprint: Option<DataFingerprint>,
}

impl BoundResult {
    pub fn fingerprint(&self) -> Option<&DataFingerprint> {
        self.fingerprint.as_ref()
    }
}

/// Evaluation back end: where per-candidate log densities come from and
/// how the iteration's three reductions are carried out.
trait Engine: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    /// Per-row mixture log densities at the given support/log-weights.
    fn fresh_ell(&self, support: &[usize], logw: &[f64]) -> Vec<f64>;
    /// For each support-aligned candidate weight vector, the per-row ratio
    /// `sigma_i = sum_j w_j exp(L[i][support_j] - ell_i)`, i.e. the factor
    /// by which the mixture density changes when moving to that candidate.
    fn sigmas(&self, ell: &[f64], support: &[usize], cands: &[&[f64]]) -> Vec<Vec<f64>>;
    /// Gradient `g_m = (1/n) sum_i exp(L[i][m] - ell_i)` at the committed
    /// `ell`. `committed_sigma` is the row scaling that took the previous
    /// `ell` to this one; engines may exploit or ignore it.
    fn gradient(&mut self, ell: &[f64], committed_sigma: Option<&[f64]>) -> Vec<f64>;
}

/// Blocked reduction helper: accumulates `terms` in groups of
/// [`DOT_BLOCK`] so round-off stays ~(DOT_BLOCK + p/DOT_BLOCK) ulps.
struct BlockedSum {
    total: f64,
    block: f64,
    in_block: usize,
}

impl BlockedSum {
    fn new() -> Self {
        BlockedSum {
            total: 0.0,
            block: 0.0,
            in_block: 0,
        }
    }

    #[inline]
    fn push(&mut self, v: f64) {
        self.block += v;
        self.in_block += 1;
        if self.in_block == DOT_BLOCK {
            self.total += self.block;
            self.block = 0.0;
            self.in_block = 0;
        }
    }

    fn value(&self) -> f64 {
        self.total + self.block
    }
}

/// In-memory engine: owns the ratio matrix `e = exp(L - ell)` stored
/// column-major (`e[m * n + i]`), so every per-column pass is contiguous.
struct InMemoryEngine<'a> {
    matrix: &'a LogLikelihoodMatrix,
    e: Vec<f64>,
}

impl<'a> InMemoryEngine<'a> {
    fn new(matrix: &'a LogLikelihoodMatrix) -> Self {
        InMemoryEngine {
            matrix,
            e: vec![0.0; matrix.n_points() * matrix.n_models()],
        }
    }
}

impl Engine for InMemoryEngine<'_> {
    fn n_rows(&self) -> usize {
        self.matrix.n_points()
    }

    fn n_cols(&self) -> usize {
        self.matrix.n_models()
    }

    fn fresh_ell(&self, support: &[usize], logw: &[f64]) -> Vec<f64> {
        row_log_mixture(self.matrix, support, logw)
    }

    fn sigmas(&self, _ell: &[f64], support: &[usize], cands: &[&[f64]]) -> Vec<Vec<f64>> {
        // The cached ratios already incorporate ell, so each sigma is a
        // weighted sum of support columns: an AXPY sweep per column group.
        let n = self.n_rows();
        let mut out: Vec<Vec<f64>> = cands.iter().map(|_| vec![0.0; n]).collect();
        let n_cands = cands.len();
        // Work on disjoint row ranges; within a range, sweep support
        // columns in order, folding DOT_BLOCK-sized column groups into the
        // output to bound accumulation error.
        let mut ranges: Vec<(usize, Vec<&mut [f64]>)> = Vec::new();
        {
            let mut rest: Vec<&mut [f64]> = out.iter_mut().map(|v| v.as_mut_slice()).collect();
            let mut lo = 0;
            while lo < n {
                let take = ROW_CHUNK.min(n - lo);
                let mut heads = Vec::with_capacity(n_cands);
                let mut tails = Vec::with_capacity(n_cands);
                for slice in rest {
                    let (head, tail) = slice.split_at_mut(take);
                    heads.push(head);
                    tails.push(tail);
                }
                ranges.push((lo, heads));
                rest = tails;
                lo += take;
            }
        }
        ranges.into_par_iter().for_each(|(lo, mut outs)| {
            let rows = outs[0].len();
            let mut group = vec![0.0; rows * n_cands];
            let mut j = 0;
            while j < support.len() {
                let hi = (j + DOT_BLOCK).min(support.len());
                group.fill(0.0);
                for jj in j..hi {
                    let col = &self.e[support[jj] * n + lo..support[jj] * n + lo + rows];
                    for (c, chunk) in group.chunks_mut(rows).enumerate() {
                        let w = cands[c][jj];
                        for (acc, &v) in chunk.iter_mut().zip(col) {
                            *acc += w * v;
                        }
                    }
                }
                for (c, chunk) in group.chunks(rows).enumerate() {
                    for (slot, &v) in outs[c].iter_mut().zip(chunk) {
                        *slot += v;
                    }
                }
                j = hi;
            }
        });
        out
    }

    fn gradient(&mut self, ell: &[f64], committed_sigma: Option<&[f64]>) -> Vec<f64> {
        let n = self.n_rows();
        let m = self.n_cols();
        let n_chunks = n.div_ceil(ROW_CHUNK);
        let data = self.matrix.data();
        let mut g = vec![0.0; m];
        let inv: Option<Vec<f64>> = committed_sigma.map(|s| s.iter().map(|v| 1.0 / v).collect());
        g.par_iter_mut()
            .zip(self.e.par_chunks_mut(n))
            .enumerate()
            .for_each(|(mcol, (slot, col))| {
                let mut chunk_sums = vec![0.0; n_chunks];
                match &inv {
                    Some(inv) => {
                        // Rescale the cached column by 1/sigma_i in place
                        // while accumulating its mean.
                        for (chunk, sum) in chunk_sums.iter_mut().enumerate() {
                            let lo = chunk * ROW_CHUNK;
                            let hi = (lo + ROW_CHUNK).min(n);
                            let mut acc = 0.0;
                            for i in lo..hi {
                                let v = col[i] * inv[i];
                                col[i] = v;
                                acc += v;
                            }
                            *sum = acc;
                        }
                    }
                    None => {
                        // Rebuild the column as exp(L - ell) from scratch.
                        for (chunk, sum) in chunk_sums.iter_mut().enumerate() {
                            let lo = chunk * ROW_CHUNK;
                            let hi = (lo + ROW_CHUNK).min(n);
                            let mut acc = 0.0;
                            for i in lo..hi {
                                let v = (data[i * m + mcol] - ell[i]).exp();
                                col[i] = v;
                                acc += v;
                            }
                            *sum = acc;
                        }
                    }
                }
                *slot = pairwise_sum(&chunk_sums) / n as f64;
            });
        g
    }
}

/// Streaming engine: recomputes log densities on demand; holds only O(N)
/// state beyond its inputs. `col_block` sets the column granularity of
/// gradient passes.
struct StreamedEngine<'a> {
    dataset: &'a Dataset,
    set: &'a ComponentSet,
    col_block: usize,
}

impl Engine for StreamedEngine<'_> {
    fn n_rows(&self) -> usize {
        self.dataset.n_points()
    }

    fn n_cols(&self) -> usize {
        self.set.len()
    }

    fn fresh_ell(&self, support: &[usize], logw: &[f64]) -> Vec<f64> {
        let n = self.n_rows();
        let d = self.dataset.dim();
        let mut ell = vec![0.0; n];
        ell.par_chunks_mut(ROW_CHUNK)
            .enumerate()
            .for_each(|(chunk_idx, out)| {
                let mut scratch = vec![0.0; d];
                let i0 = chunk_idx * ROW_CHUNK;
                for (r, slot) in out.iter_mut().enumerate() {
                    let x = self.dataset.row(i0 + r);
                    let mut acc = LogSumExp::new();
                    for (&mj, &lw) in support.iter().zip(logw) {
                        acc.push(lw + self.set.get(mj).log_density_with(x, &mut scratch));
                    }
                    *slot = acc.value();
                }
            });
        ell
    }

    fn sigmas(&self, ell: &[f64], support: &[usize], cands: &[&[f64]]) -> Vec<Vec<f64>> {
        let n = self.n_rows();
        let d = self.dataset.dim();
        let n_cands = cands.len();
        let flat: Vec<f64> = (0..n)
            .into_par_iter()
            .chunks(ROW_CHUNK)
            .flat_map_iter(|rows| {
                let mut scratch = vec![0.0; d];
                let mut vals = Vec::with_capacity(rows.len() * n_cands);
                for &i in &rows {
                    let x = self.dataset.row(i);
                    let mut sums: Vec<BlockedSum> =
                        (0..n_cands).map(|_| BlockedSum::new()).collect();
                    for (j, &mj) in support.iter().enumerate() {
                        let ratio = (self.set.get(mj).log_density_with(x, &mut scratch)
                            - ell[i])
                            .exp();
                        for (c, s) in sums.iter_mut().enumerate() {
                            s.push(cands[c][j] * ratio);
                        }
                    }
                    vals.extend(sums.iter().map(|s| s.value()));
                }
                vals
            })
            .collect();
        let mut out: Vec<Vec<f64>> = (0..n_cands).map(|_| vec![0.0; n]).collect();
        for i in 0..n {
            for c in 0..n_cands {
                out[c][i] = flat[i * n_cands + c];
            }
        }
        out
    }

    fn gradient(&mut self, ell: &[f64], _committed_sigma: Option<&[f64]>) -> Vec<f64> {
        let n = self.n_rows();
        let m = self.n_cols();
        let d = self.dataset.dim();
        let n_chunks = n.div_ceil(ROW_CHUNK);
        let mut g = vec![0.0; m];
        g.par_chunks_mut(self.col_block)
            .enumerate()
            .for_each(|(block_idx, out)| {
                let c0 = block_idx * self.col_block;
                let mut scratch = vec![0.0; d];
                let mut chunk_sums = vec![0.0; n_chunks];
                for (b, slot) in out.iter_mut().enumerate() {
                    let comp = self.set.get(c0 + b);
                    for (chunk, sum) in chunk_sums.iter_mut().enumerate() {
                        let lo = chunk * ROW_CHUNK;
                        let hi = (lo + ROW_CHUNK).min(n);
                        let mut acc = 0.0;
                        for i in lo..hi {
                            acc += (comp.log_density_with(self.dataset.row(i), &mut scratch)
                                - ell[i])
                                .exp();
                        }
                        *sum = acc;
                    }
                    *slot = pairwise_sum(&chunk_sums) / n as f64;
                }
            });
        g
    }
}

/// Initial dense weights according to the strategy.
fn initial_weights(m: usize, init: &InitStrategy) -> Vec<f64> {
    match init {
        InitStrategy::Uniform => vec![1.0 / m as f64; m],
        InitStrategy::Given(w) => w.weights().to_vec(),
        InitStrategy::SeededRandom(seed) => {
            use rand::Rng;
            let mut rng = rng_from_seed(*seed);
            let mut pi: Vec<f64> = (0..m)
                .map(|_| (-(1.0 - rng.random::<f64>()).ln()).max(f64::MIN_POSITIVE))
                .collect();
            let total = pairwise_sum(&pi);
            for v in &mut pi {
                *v /= total;
            }
            pi
        }
    }
}

/// Support-aligned plain EM step: `w_j ∝ pi_j * g_j`, normalized.
fn plain_step(pi: &[f64], g: &[f64], support: &[usize]) -> Vec<f64> {
    let mut w: Vec<f64> = support.iter().map(|&mj| pi[mj] * g[mj]).collect();
    let total = pairwise_sum(&w);
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Support-aligned overrelaxed step `pi + eta_t (plain - pi)` where
/// `eta_t` is `eta` capped by the fraction-to-boundary rule: the step
/// stops at 99.9% of the distance to the nearest zero. Weights therefore
/// stay strictly positive, so no candidate is ever permanently locked out
/// of the support (multiplicative updates cannot revive an exact zero).
fn overrelaxed_step(pi: &[f64], plain: &[f64], support: &[usize], eta: f64) -> Vec<f64> {
    let mut eta_t = eta;
    for (&mj, &p) in support.iter().zip(plain) {
        if p < pi[mj] {
            eta_t = eta_t.min(0.999 * pi[mj] / (pi[mj] - p));
        }
    }
    let mut w: Vec<f64> = support
        .iter()
        .zip(plain)
        .map(|(&mj, &p)| pi[mj] + eta_t * (p - pi[mj]))
        .collect();
    let total = pairwise_sum(&w);
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Zeroes weights at or below `threshold` and renormalizes the survivors.
fn prune_weights(pi: &mut [f64], threshold: f64) {
    for v in pi.iter_mut() {
        if *v <= threshold {
            *v = 0.0;
        }
    }
    let total = pairwise_sum(pi);
    for v in pi.iter_mut() {
        *v /= total;
    }
}

fn dense_support(pi: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let support: Vec<usize> = (0..pi.len()).filter(|&j| pi[j] > 0.0).collect();
    let logw: Vec<f64> = support.iter().map(|&j| pi[j].ln()).collect();
    (support, logw)
}

/// The shared iteration loop.
fn run_loop<E: Engine>(
    mut engine: E,
    config: &ConvexEmConfig,
    fingerprint: Option<DataFingerprint>,
) -> Result<BoundResult> {
    let m = engine.n_cols();
    config.validate(m)?;
    let prune = config.prune_threshold.unwrap_or(1e-12 / m as f64);

    let mut pi = initial_weights(m, &config.init);
    let (mut support, logw) = dense_support(&pi);
    if support.is_empty() {
        return Err(Error::InvalidArgument(
            "initial weights have no positive entries".into(),
        ));
    }
    let mut ell = engine.fresh_ell(&support, &logw);
    let mut ll = normalized_ll(&ell);
    let mut g = engine.gradient(&ell, None);
    let mut gap = gap_from_gradient(&g);
    if !ll.is_finite() || !gap.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "initial evaluation produced ll = {ll}, gap = {gap}"
        )));
    }

    let mut trace = Vec::new();
    if config.record_trace {
        trace.push(TracePoint { ll, gap });
    }
    let mut termination = Termination::MaxIterations;
    let mut iterations_used = 0;

    for t in 1..=config.max_iterations {
        iterations_used = t;
        let w_plain = plain_step(&pi, &g, &support);
        let w_over = if config.eta > 1.0 {
            Some(overrelaxed_step(&pi, &w_plain, &support, config.eta))
        } else {
            None
        };
        let cands: Vec<&[f64]> = match &w_over {
            Some(over) => vec![&w_plain, over],
            None => vec![&w_plain],
        };
        let sigmas = engine.sigmas(&ell, &support, &cands);

        // Per-candidate gain, mean(ln sigma_i) = LL(candidate) - LL(pi),
        // measured directly so it stays resolvable when far smaller than
        // an ulp of the log-likelihood itself.
        let log_sigmas: Vec<Vec<f64>> = sigmas
            .iter()
            .map(|sigma| sigma.iter().map(|&s| s.ln()).collect())
            .collect();
        let gains: Vec<f64> = log_sigmas.iter().map(|ls| normalized_ll(ls)).collect();
        // Overrelaxation safeguard: the overrelaxed point is taken only
        // when it does not fall below the plain EM step.
        let choice = if gains.len() == 2 && gains[1] >= gains[0] { 1 } else { 0 };
        let gain = gains[choice];
        if !gain.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "log-likelihood gain became {gain} at iteration {t}"
            )));
        }
        if gain < -MONOTONE_TOL {
            return Err(Error::NumericalFailure(format!(
                "log-likelihood decreased by {gain} at iteration {t}"
            )));
        }

        // Commit the winner.
        let winner: &[f64] = if choice == 1 {
            w_over.as_ref().expect("choice 1 implies an overrelaxed candidate")
        } else {
            &w_plain
        };
        for (&mj, &w) in support.iter().zip(winner) {
            pi[mj] = w;
        }
        let sigma = &sigmas[choice];
        for (e, &ls) in ell.iter_mut().zip(&log_sigmas[choice]) {
            *e += ls;
        }
        ll += gain;
        if t % REFRESH_INTERVAL == 0 {
            // Rebuild ell (and the engine's cached state) from scratch to
            // shed incremental round-off.
            let (s, lw) = dense_support(&pi);
            support = s;
            ell = engine.fresh_ell(&support, &lw);
            ll = normalized_ll(&ell);
            g = engine.gradient(&ell, None);
        } else {
            support.retain(|&mj| pi[mj] > 0.0);
            g = engine.gradient(&ell, Some(sigma));
        }
        gap = gap_from_gradient(&g);
        if !ll.is_finite() || !gap.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "iteration {t} produced ll = {ll}, gap = {gap}"
            )));
        }
        if config.record_trace {
            trace.push(TracePoint { ll, gap });
        }
        if gap <= config.gap_tolerance {
            termination = Termination::GapConverged;
            break;
        }
        if config.relative_ll_tolerance > 0.0
            && gain <= config.relative_ll_tolerance * ll.abs().max(1.0)
        {
            termination = Termination::LlStalled;
            break;
        }
    }

    // Finalize: prune, then recompute everything fresh so the certificate
    // never rests on incrementally updated values.
    prune_weights(&mut pi, prune);
    let (support, logw) = dense_support(&pi);
    let ell = engine.fresh_ell(&support, &logw);
    let ub_ll = normalized_ll(&ell);
    let g = engine.gradient(&ell, None);
    let final_gap = gap_from_gradient(&g);
    if !ub_ll.is_finite() || !final_gap.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "final evaluation produced ll = {ub_ll}, gap = {final_gap}"
        )));
    }
    if config.record_trace {
        // Keep the trace's last entry consistent with the reported values.
        if let Some(last) = trace.last_mut() {
            *last = TracePoint {
                ll: ub_ll,
                gap: final_gap,
            };
        }
    }
    let entries: Vec<(usize, f64)> = support.iter().map(|&j| (j, pi[j])).collect();
    let weights = WeightVector::sparse(m, &entries)?;
    let converged = final_gap <= 10.0 * config.gap_tolerance;
    Ok(BoundResult {
        weights,
        ub_ll,
        final_gap,
        certified_ub: ub_ll + final_gap,
        iterations_used,
        termination,
        converged,
        trace,
        fingerprint,
    })
}

/// Runs the convex relaxation on an in-memory matrix.
///
/// Allocates one additional matrix-sized buffer for cached density
/// ratios; use [`convex_em_chunked`] when that is unaffordable.
pub fn convex_em(matrix: &LogLikelihoodMatrix, config: &ConvexEmConfig) -> Result<BoundResult> {
    run_loop(
        InMemoryEngine::new(matrix),
        config,
        matrix.fingerprint().copied(),
    )
}

/// Runs the convex relaxation without materializing the matrix,
/// recomputing log densities per pass in column blocks of `column_block`.
///
/// With `column_block >= set.len()` the full matrix fits a single block;
/// the computation then materializes it and is bit-identical to
/// [`convex_em`]. Otherwise results agree with the in-memory path to
/// round-off (~1e-12), not bitwise.
pub fn convex_em_chunked(
    dataset: &Dataset,
    set: &ComponentSet,
    config: &ConvexEmConfig,
    column_block: usize,
) -> Result<BoundResult> {
    if column_block == 0 {
        return Err(Error::InvalidArgument("column block must be at least 1".into()));
    }
    if dataset.dim() != set.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dataset dimension {} vs model dimension {}",
            dataset.dim(),
            set.dim()
        )));
    }
    if column_block >= set.len() {
        let matrix = build_matrix(dataset, set)?;
        return convex_em(&matrix, config);
    }
    let fingerprint = DataFingerprint::compute(dataset, set);
    run_loop(
        StreamedEngine {
            dataset,
            set,
            col_block: column_block,
        },
        config,
        Some(fingerprint),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{build_matrix, fw_gap, mixture_ll};
    use crate::model::{ComponentSet, Dataset, GaussianComponent, SetProvenance};
    use nalgebra::DMatrix;

    fn unit_1d(mean: f64) -> GaussianComponent {
        GaussianComponent::new(vec![mean], DMatrix::from_row_slice(1, 1, &[1.0])).unwrap()
    }

    fn small_instance() -> (Dataset, ComponentSet, LogLikelihoodMatrix) {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![((i as f64) * 0.7).sin() * 2.0 + if i % 3 == 0 { 2.0 } else { -1.0 }])
            .collect();
        let dataset = Dataset::from_rows(rows).unwrap();
        let set = ComponentSet::new(
            (-2..=2).map(|k| unit_1d(k as f64)).collect(),
            SetProvenance::Explicit,
        )
        .unwrap();
        let matrix = build_matrix(&dataset, &set).unwrap();
        (dataset, set, matrix)
    }

    #[test]
    fn single_candidate_converges_in_one_iteration() {
        let dataset = Dataset::from_rows(vec![vec![0.4], vec![-1.0], vec![2.0]]).unwrap();
        let set = ComponentSet::new(vec![unit_1d(0.0)], SetProvenance::Explicit).unwrap();
        let matrix = build_matrix(&dataset, &set).unwrap();
        let result = convex_em(&matrix, &ConvexEmConfig::default()).unwrap();
        assert_eq!(result.iterations_used, 1, "one update, then the gap check fires");
        assert_eq!(result.termination, Termination::GapConverged);
        assert_eq!(result.final_gap, 0.0, "a single candidate has gradient exactly 1");
        assert!(result.converged);
        let col_mean = (matrix.entry(0, 0) + matrix.entry(1, 0) + matrix.entry(2, 0)) / 3.0;
        assert!((result.ub_ll - col_mean).abs() < 1e-15);
        assert_eq!(result.certified_ub, result.ub_ll);
        assert_eq!(result.weights.weights(), &[1.0]);
    }

    #[test]
    fn symmetric_instance_finds_uniform_optimum() {
        // Points {0, 1} under unit Gaussians at {0, 1}: by symmetry the
        // relaxed optimum is the uniform mixture.
        let dataset = Dataset::from_rows(vec![vec![0.0], vec![1.0]]).unwrap();
        let set = ComponentSet::new(vec![unit_1d(0.0), unit_1d(1.0)], SetProvenance::Explicit)
            .unwrap();
        let matrix = build_matrix(&dataset, &set).unwrap();
        let config = ConvexEmConfig {
            gap_tolerance: 1e-12,
            ..ConvexEmConfig::default()
        };
        let result = convex_em(&matrix, &config).unwrap();
        assert!((result.weights.weights()[0] - 0.5).abs() < 1e-6);
        let direct = mixture_ll(&matrix, &result.weights).unwrap();
        assert!(
            (result.ub_ll - direct).abs() < 1e-12,
            "reported ub_ll must match a fresh evaluation"
        );
        assert!(result.final_gap <= 1e-12);
    }

    #[test]
    fn trace_is_monotone_and_ends_at_reported_values() {
        let (_, _, matrix) = small_instance();
        let result = convex_em(&matrix, &ConvexEmConfig::default()).unwrap();
        assert!(!result.trace.is_empty());
        for pair in result.trace.windows(2) {
            assert!(
                pair[1].ll >= pair[0].ll - 1e-12,
                "trace must ascend within tolerance: {} -> {}",
                pair[0].ll,
                pair[1].ll
            );
        }
        let last = result.trace.last().unwrap();
        assert_eq!(last.ll, result.ub_ll);
        assert_eq!(last.gap, result.final_gap);
        assert_eq!(result.trace.len(), result.iterations_used + 1);
    }

    #[test]
    fn certificate_dominates_final_ll_and_fresh_gap_agrees() {
        let (_, _, matrix) = small_instance();
        let result = convex_em(&matrix, &ConvexEmConfig::default()).unwrap();
        assert!(result.certified_ub >= result.ub_ll);
        assert_eq!(result.certified_ub, result.ub_ll + result.final_gap);
        let fresh_gap = fw_gap(&matrix, &result.weights).unwrap();
        assert!(
            (fresh_gap - result.final_gap).abs() < 1e-12,
            "independent gap evaluation must agree: {fresh_gap} vs {}",
            result.final_gap
        );
        let fresh_ll = mixture_ll(&matrix, &result.weights).unwrap();
        assert!((fresh_ll - result.ub_ll).abs() < 1e-12);
    }

    #[test]
    fn inits_agree_on_the_optimum() {
        let (_, _, matrix) = small_instance();
        let config = |init| ConvexEmConfig {
            init,
            gap_tolerance: 1e-10,
            ..ConvexEmConfig::default()
        };
        let a = convex_em(&matrix, &config(InitStrategy::Uniform)).unwrap();
        let b = convex_em(&matrix, &config(InitStrategy::SeededRandom(7))).unwrap();
        let w0 = WeightVector::dense(vec![0.55, 0.2, 0.1, 0.1, 0.05]).unwrap();
        let c = convex_em(&matrix, &config(InitStrategy::Given(w0))).unwrap();
        assert!((a.ub_ll - b.ub_ll).abs() < 1e-8, "{} vs {}", a.ub_ll, b.ub_ll);
        assert!((a.ub_ll - c.ub_ll).abs() < 1e-8, "{} vs {}", a.ub_ll, c.ub_ll);
    }

    #[test]
    fn overrelaxation_matches_plain_em_solution() {
        let (_, _, matrix) = small_instance();
        let plain = convex_em(
            &matrix,
            &ConvexEmConfig {
                eta: 1.0,
                gap_tolerance: 1e-10,
                ..ConvexEmConfig::default()
            },
        )
        .unwrap();
        let over = convex_em(
            &matrix,
            &ConvexEmConfig {
                eta: 1.9,
                gap_tolerance: 1e-10,
                ..ConvexEmConfig::default()
            },
        )
        .unwrap();
        assert!(
            (plain.ub_ll - over.ub_ll).abs() < 1e-8,
            "overrelaxation changes the path, not the optimum"
        );
        assert!(
            over.iterations_used <= plain.iterations_used,
            "overrelaxation should not be slower on a benign instance ({} vs {})",
            over.iterations_used,
            plain.iterations_used
        );
    }

    #[test]
    fn config_validation() {
        let (_, _, matrix) = small_instance();
        let bad = [
            ConvexEmConfig { max_iterations: 0, ..ConvexEmConfig::default() },
            ConvexEmConfig { gap_tolerance: -1.0, ..ConvexEmConfig::default() },
            ConvexEmConfig { gap_tolerance: f64::NAN, ..ConvexEmConfig::default() },
            ConvexEmConfig { relative_ll_tolerance: -1e-9, ..ConvexEmConfig::default() },
            ConvexEmConfig { eta: 2.0, ..ConvexEmConfig::default() },
            ConvexEmConfig { eta: 0.5, ..ConvexEmConfig::default() },
            ConvexEmConfig { prune_threshold: Some(0.5), ..ConvexEmConfig::default() },
            ConvexEmConfig {
                init: InitStrategy::Given(WeightVector::uniform(3).unwrap()),
                ..ConvexEmConfig::default()
            },
        ];
        for config in bad {
            assert!(convex_em(&matrix, &config).is_err(), "{config:?} must be rejected");
        }
    }

    #[test]
    fn pruning_zeroes_dust() {
        let (_, _, matrix) = small_instance();
        let result = convex_em(
            &matrix,
            &ConvexEmConfig {
                prune_threshold: Some(1e-3),
                ..ConvexEmConfig::default()
            },
        )
        .unwrap();
        for &w in result.weights.weights() {
            assert!(w == 0.0 || w > 1e-3, "no weight may survive at or below the threshold");
        }
        let total: f64 = result.weights.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stall_termination_fires_when_enabled() {
        let (_, _, matrix) = small_instance();
        let result = convex_em(
            &matrix,
            &ConvexEmConfig {
                gap_tolerance: 0.0,
                relative_ll_tolerance: 1e-6,
                ..ConvexEmConfig::default()
            },
        )
        .unwrap();
        assert_eq!(result.termination, Termination::LlStalled);
        assert!(
            result.certified_ub >= result.ub_ll,
            "a stalled run still reports a sound certificate"
        );
    }

    #[test]
    fn trace_recording_can_be_disabled() {
        let (_, _, matrix) = small_instance();
        let result = convex_em(
            &matrix,
            &ConvexEmConfig {
                record_trace: false,
                ..ConvexEmConfig::default()
            },
        )
        .unwrap();
        assert!(result.trace.is_empty());
    }

    #[test]
    fn not_converged_is_flagged_not_an_error() {
        let (_, _, matrix) = small_instance();
        let result = convex_em(
            &matrix,
            &ConvexEmConfig {
                max_iterations: 1,
                gap_tolerance: 1e-14,
                ..ConvexEmConfig::default()
            },
        )
        .unwrap();
        assert_eq!(result.termination, Termination::MaxIterations);
        assert!(!result.converged, "a large remaining gap must clear the converged flag");
        assert!(result.certified_ub >= result.ub_ll, "the certificate is still sound");
    }

    #[test]
    fn chunked_single_block_is_bitwise_identical() {
        let (dataset, set, matrix) = small_instance();
        let config = ConvexEmConfig::default();
        let direct = convex_em(&matrix, &config).unwrap();
        let chunked = convex_em_chunked(&dataset, &set, &config, set.len()).unwrap();
        assert_eq!(direct.ub_ll.to_bits(), chunked.ub_ll.to_bits());
        assert_eq!(direct.final_gap.to_bits(), chunked.final_gap.to_bits());
        assert_eq!(direct.certified_ub.to_bits(), chunked.certified_ub.to_bits());
        assert_eq!(direct.weights, chunked.weights);
        assert_eq!(direct.iterations_used, chunked.iterations_used);
    }

    #[test]
    fn chunked_small_blocks_agree_to_roundoff() {
        let (dataset, set, matrix) = small_instance();
        let config = ConvexEmConfig::default();
        let direct = convex_em(&matrix, &config).unwrap();
        for block in [1, 2, 3] {
            let chunked = convex_em_chunked(&dataset, &set, &config, block).unwrap();
            assert!(
                (direct.ub_ll - chunked.ub_ll).abs() < 1e-10,
                "block {block}: {} vs {}",
                direct.ub_ll,
                chunked.ub_ll
            );
            assert!((direct.certified_ub - chunked.certified_ub).abs() < 1e-10);
        }
    }

    #[test]
    fn chunked_validates_inputs() {
        let (dataset, set, _) = small_instance();
        assert!(convex_em_chunked(&dataset, &set, &ConvexEmConfig::default(), 0).is_err());
        let other = Dataset::from_rows(vec![vec![0.0, 1.0]]).unwrap();
        assert!(convex_em_chunked(&other, &set, &ConvexEmConfig::default(), 2).is_err());
    }
}
