//! The point-by-candidate log-likelihood matrix `L[i][m] = ln P(x_i | theta_m)`
//! and the weight-vector operations defined over it.
//!
//! Everything downstream (bounds, solvers, certificates) consumes this
//! matrix, so its arithmetic contracts are strict: entries are always
//! finite, mixture evaluations stay in the log domain, and every reduction
//! has a thread-count-independent association order.

use std::io::{Read, Write};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::{pairwise_sum, LogSumExp};
use crate::model::{ComponentSet, Dataset, MixtureModel};

/// Default cap on matrix memory (bytes).
pub const DEFAULT_MEMORY_BUDGET: u128 = 8 << 30;

/// Rows per parallel work item. Fixed (not derived from worker count) so
/// chunk boundaries, and therefore all reductions, are reproducible.
pub(crate) const ROW_CHUNK: usize = 256;

/// Columns per block in column-major passes.
const COL_BLOCK: usize = 128;

/// Cache file magic.
const CACHE_MAGIC: &[u8; 4] = b"MXLL";
const CACHE_VERSION: u32 = 1;

/// SHA-256 digests identifying the dataset and model set a matrix, bound,
/// or solution was computed from. Checked by certification so artifacts
/// from different inputs cannot be silently combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataFingerprint {
    dataset: [u8; 32],
    models: [u8; 32],
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl DataFingerprint {
    pub fn compute(dataset: &Dataset, set: &ComponentSet) -> Self {
        let mut h = Sha256::new();
        h.update((dataset.n_points() as u64).to_le_bytes());
        h.update((dataset.dim() as u64).to_le_bytes());
        for v in dataset.as_flat() {
            h.update(v.to_le_bytes());
        }
        match dataset.labels() {
            None => h.update([0u8]),
            Some(labels) => {
                h.update([1u8]);
                for &l in labels {
                    h.update((l as u64).to_le_bytes());
                }
            }
        }
        let dataset_digest: [u8; 32] = h.finalize().into();

        let mut h = Sha256::new();
        h.update((set.len() as u64).to_le_bytes());
        h.update((set.dim() as u64).to_le_bytes());
        for comp in set.components() {
            for v in comp.mean() {
                h.update(v.to_le_bytes());
            }
            for v in comp.covariance().iter() {
                h.update(v.to_le_bytes());
            }
        }
        let models_digest: [u8; 32] = h.finalize().into();
        DataFingerprint {
            dataset: dataset_digest,
            models: models_digest,
        }
    }

    pub fn dataset_hex(&self) -> String {
        hex(&self.dataset)
    }

    pub fn models_hex(&self) -> String {
        hex(&self.models)
    }
}

/// Dense row-major matrix of per-point, per-candidate log densities.
#[derive(Debug, Clone)]
pub struct LogLikelihoodMatrix {
    data: Vec<f64>,
    n_points: usize,
    n_models: usize,
    fingerprint: Option<DataFingerprint>,
}

impl LogLikelihoodMatrix {
    /// Wraps caller-computed log densities (any family honoring the
    /// log-density contract). Entries must be finite. The result carries no
    /// fingerprint, so it cannot feed certification directly.
    pub fn from_entries(n_points: usize, n_models: usize, data: Vec<f64>) -> Result<Self> {
        if n_points == 0 || n_models == 0 {
            return Err(Error::InvalidArgument(
                "matrix must have at least one row and one column".into(),
            ));
        }
        if data.len() != n_points * n_models {
            return Err(Error::DimensionMismatch(format!(
                "{} entries cannot fill a {n_points}x{n_models} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "log-likelihood entry ({}, {}) is not finite",
                pos / n_models,
                pos % n_models
            )));
        }
        Ok(LogLikelihoodMatrix {
            data,
            n_points,
            n_models,
            fingerprint: None,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_models..(i + 1) * self.n_models]
    }

    pub fn entry(&self, i: usize, m: usize) -> f64 {
        self.data[i * self.n_models + m]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn fingerprint(&self) -> Option<&DataFingerprint> {
        self.fingerprint.as_ref()
    }

    /// Verifies that this matrix (e.g. one loaded from cache) really is the
    /// log-likelihood matrix of `(dataset, set)`, then attaches their
    /// fingerprint. Verification recomputes the full first row plus a
    /// strided sample of entries and demands bit-exact agreement, which
    /// deterministic evaluation guarantees for a genuine cache.
    pub fn adopt_fingerprint(&mut self, dataset: &Dataset, set: &ComponentSet) -> Result<()> {
        if dataset.n_points() != self.n_points || set.len() != self.n_models {
            return Err(Error::InconsistentInputs(format!(
                "matrix is {}x{} but dataset/models are {}x{}",
                self.n_points,
                self.n_models,
                dataset.n_points(),
                set.len()
            )));
        }
        if dataset.dim() != set.dim() {
            return Err(Error::DimensionMismatch(format!(
                "dataset dimension {} vs model dimension {}",
                dataset.dim(),
                set.dim()
            )));
        }
        let mut scratch = vec![0.0; dataset.dim()];
        let mut check = |i: usize, m: usize| -> Result<()> {
            let expect = set.get(m).log_density_with(dataset.row(i), &mut scratch);
            if expect.to_bits() != self.entry(i, m).to_bits() {
                return Err(Error::InconsistentInputs(format!(
                    "cached entry ({i}, {m}) does not match a fresh evaluation"
                )));
            }
            Ok(())
        };
        for m in 0..self.n_models {
            check(0, m)?;
        }
        let total = self.n_points * self.n_models;
        let stride = (total / 64).max(1);
        let mut pos = 0;
        while pos < total {
            check(pos / self.n_models, pos % self.n_models)?;
            pos += stride;
        }
        self.fingerprint = Some(DataFingerprint::compute(dataset, set));
        Ok(())
    }

    /// Writes the binary cache: magic, version, dimensions, then row-major
    /// little-endian entries.
    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.n_points as u64).to_le_bytes())?;
        w.write_all(&(self.n_models as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 << 10);
        for chunk in self.data.chunks(1 << 10) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads a cache written by [`LogLikelihoodMatrix::write_cache`]. The
    /// result carries no fingerprint until
    /// [`LogLikelihoodMatrix::adopt_fingerprint`] verifies it.
    pub fn read_cache<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format("matrix cache has wrong magic bytes".into()));
        }
        let mut word4 = [0u8; 4];
        r.read_exact(&mut word4)?;
        let version = u32::from_le_bytes(word4);
        if version != CACHE_VERSION {
            return Err(Error::Format(format!(
                "matrix cache version {version} is not supported"
            )));
        }
        let mut word8 = [0u8; 8];
        r.read_exact(&mut word8)?;
        let n_points = u64::from_le_bytes(word8);
        r.read_exact(&mut word8)?;
        let n_models = u64::from_le_bytes(word8);
        let total = (n_points as u128) * (n_models as u128);
        if n_points == 0 || n_models == 0 || total.saturating_mul(8) > DEFAULT_MEMORY_BUDGET {
            return Err(Error::Format(format!(
                "matrix cache declares an unusable shape {n_points}x{n_models}"
            )));
        }
        let total = total as usize;
        let mut data = vec![0.0f64; total];
        let mut buf = vec![0u8; 8 << 10];
        let mut filled = 0;
        while filled < total {
            let take = (total - filled).min(buf.len() / 8);
            r.read_exact(&mut buf[..take * 8])?;
            for (k, slot) in data[filled..filled + take].iter_mut().enumerate() {
                *slot = f64::from_le_bytes(buf[k * 8..k * 8 + 8].try_into().unwrap());
            }
            filled += take;
        }
        LogLikelihoodMatrix::from_entries(n_points as usize, n_models as usize, data)
            .map_err(|e| Error::Format(format!("matrix cache is invalid: {e}")))
    }
}

/// Builds the matrix under the default memory budget.
pub fn build_matrix(dataset: &Dataset, set: &ComponentSet) -> Result<LogLikelihoodMatrix> {
    build_matrix_with_budget(dataset, set, DEFAULT_MEMORY_BUDGET)
}

/// Builds the matrix, refusing allocations beyond `budget_bytes`.
pub fn build_matrix_with_budget(
    dataset: &Dataset,
    set: &ComponentSet,
    budget_bytes: u128,
) -> Result<LogLikelihoodMatrix> {
    if dataset.dim() != set.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dataset dimension {} vs model dimension {}",
            dataset.dim(),
            set.dim()
        )));
    }
    let n = dataset.n_points();
    let m = set.len();
    let required = (n as u128) * (m as u128) * 8;
    if required > budget_bytes {
        return Err(Error::ResourceLimit {
            what: "log-likelihood matrix".into(),
            required,
            budget: budget_bytes,
            unit: "bytes",
        });
    }
    let mut data = vec![0.0f64; n * m];
    let d = dataset.dim();
    data.par_chunks_mut(ROW_CHUNK * m)
        .enumerate()
        .for_each(|(chunk_idx, chunk)| {
            let mut scratch = vec![0.0; d];
            let i0 = chunk_idx * ROW_CHUNK;
            for (r, out_row) in chunk.chunks_mut(m).enumerate() {
                let x = dataset.row(i0 + r);
                for (out, comp) in out_row.iter_mut().zip(set.components()) {
                    *out = comp.log_density_with(x, &mut scratch);
                }
            }
        });
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(format!(
            "log density of point {} under candidate {} is not finite",
            pos / m,
            pos % m
        )));
    }
    Ok(LogLikelihoodMatrix {
        data,
        n_points: n,
        n_models: m,
        fingerprint: Some(DataFingerprint::compute(dataset, set)),
    })
}

/// A mixing-weight vector over the candidate set: non-negative, summing to
/// one within `1e-12`, optionally carrying an explicit sparse support.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
    /// Sorted candidate indices; weights vanish outside it when present.
    support: Option<Vec<usize>>,
}

impl WeightVector {
    /// A dense weight vector; every index is considered supported.
    pub fn dense(weights: Vec<f64>) -> Result<Self> {
        Self::validate_weights(&weights)?;
        Ok(WeightVector {
            weights,
            support: None,
        })
    }

    /// A sparse vector from `(index, weight)` entries; indices must be
    /// unique and in range, entries may be given in any order.
    pub fn sparse(len: usize, entries: &[(usize, f64)]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidArgument("sparse weight vector has no entries".into()));
        }
        let mut weights = vec![0.0; len];
        let mut support: Vec<usize> = Vec::with_capacity(entries.len());
        for &(idx, w) in entries {
            if idx >= len {
                return Err(Error::InvalidArgument(format!(
                    "support index {idx} out of range for {len} candidates"
                )));
            }
            if support.contains(&idx) {
                return Err(Error::InvalidArgument(format!(
                    "support index {idx} repeats"
                )));
            }
            support.push(idx);
            weights[idx] = w;
        }
        support.sort_unstable();
        Self::validate_weights(&weights)?;
        Ok(WeightVector {
            weights,
            support: Some(support),
        })
    }

    /// Uniform weights over all `len` candidates.
    pub fn uniform(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidArgument("weight vector of length 0".into()));
        }
        Ok(WeightVector {
            weights: vec![1.0 / len as f64; len],
            support: None,
        })
    }

    /// Uniform weights on an explicit support.
    pub fn uniform_on(len: usize, support: &[usize]) -> Result<Self> {
        let w = 1.0 / support.len() as f64;
        let entries: Vec<(usize, f64)> = support.iter().map(|&i| (i, w)).collect();
        Self::sparse(len, &entries)
    }

    fn validate_weights(weights: &[f64]) -> Result<()> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("weight vector of length 0".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total = pairwise_sum(weights);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// The declared support, when one was given at construction.
    pub fn declared_support(&self) -> Option<&[usize]> {
        self.support.as_deref()
    }

    /// Indices with strictly positive weight, sorted.
    pub fn effective_support(&self) -> Vec<usize> {
        match &self.support {
            Some(s) => s.iter().copied().filter(|&i| self.weights[i] > 0.0).collect(),
            None => (0..self.weights.len()).filter(|&i| self.weights[i] > 0.0).collect(),
        }
    }

    /// Number of strictly positive weights.
    pub fn effective_k(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }
}

/// Sorted nonzero support and matching log weights — the form every
/// log-domain evaluation consumes.
pub(crate) fn support_and_log_weights(w: &WeightVector) -> (Vec<usize>, Vec<f64>) {
    let support = w.effective_support();
    let logw = support.iter().map(|&i| w.weights()[i].ln()).collect();
    (support, logw)
}

/// Per-point mixture log densities `ell_i = ln sum_m pi_m exp(L[i][m])`
/// over the given support. Parallel over fixed-size row chunks.
pub(crate) fn row_log_mixture(
    matrix: &LogLikelihoodMatrix,
    support: &[usize],
    logw: &[f64],
) -> Vec<f64> {
    let m = matrix.n_models();
    let mut ell = vec![0.0; matrix.n_points()];
    ell.par_chunks_mut(ROW_CHUNK)
        .enumerate()
        .for_each(|(chunk_idx, out)| {
            let i0 = chunk_idx * ROW_CHUNK;
            for (r, slot) in out.iter_mut().enumerate() {
                let row = &matrix.data[(i0 + r) * m..(i0 + r + 1) * m];
                let mut acc = LogSumExp::new();
                for (&mj, &lw) in support.iter().zip(logw) {
                    acc.push(lw + row[mj]);
                }
                *slot = acc.value();
            }
        });
    ell
}

/// Normalized log-likelihood `(1/n) sum_i ell_i` with a fixed reduction
/// order.
pub(crate) fn normalized_ll(ell: &[f64]) -> f64 {
    pairwise_sum(ell) / ell.len() as f64
}

/// The likelihood gradient `g_m = (1/n) sum_i exp(L[i][m] - ell_i)` for
/// every candidate `m`. Parallel over column blocks; within a column the
/// reduction is pairwise over fixed row chunks.
pub(crate) fn gradient_at(matrix: &LogLikelihoodMatrix, ell: &[f64]) -> Vec<f64> {
    let n = matrix.n_points();
    let m = matrix.n_models();
    let n_chunks = n.div_ceil(ROW_CHUNK);
    let mut g = vec![0.0; m];
    g.par_chunks_mut(COL_BLOCK).enumerate().for_each(|(block_idx, out)| {
        let c0 = block_idx * COL_BLOCK;
        let width = out.len();
        // partials[chunk * width + b] = sum over the chunk's rows.
        let mut partials = vec![0.0; n_chunks * width];
        for chunk in 0..n_chunks {
            let lo = chunk * ROW_CHUNK;
            let hi = (lo + ROW_CHUNK).min(n);
            let dst = &mut partials[chunk * width..(chunk + 1) * width];
            for i in lo..hi {
                let seg = &matrix.data[i * m + c0..i * m + c0 + width];
                let e = ell[i];
                for (acc, &l) in dst.iter_mut().zip(seg) {
                    *acc += (l - e).exp();
                }
            }
        }
        let mut column = vec![0.0; n_chunks];
        for (b, slot) in out.iter_mut().enumerate() {
            for chunk in 0..n_chunks {
                column[chunk] = partials[chunk * width + b];
            }
            *slot = pairwise_sum(&column) / n as f64;
        }
    });
    g
}

/// `max_m g_m - 1` clamped at zero, shared by gap computations.
pub(crate) fn gap_from_gradient(g: &[f64]) -> f64 {
    let max_g = g.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    (max_g - 1.0).max(0.0)
}

/// Normalized mixture log-likelihood of weights `w` on the matrix.
/// Zero-weight candidates contribute exactly nothing.
pub fn mixture_ll(matrix: &LogLikelihoodMatrix, w: &WeightVector) -> Result<f64> {
    if w.len() != matrix.n_models() {
        return Err(Error::DimensionMismatch(format!(
            "weight vector has {} entries for {} candidates",
            w.len(),
            matrix.n_models()
        )));
    }
    let (support, logw) = support_and_log_weights(w);
    if support.is_empty() {
        return Err(Error::InvalidArgument(
            "weight vector has no positive entries".into(),
        ));
    }
    let ell = row_log_mixture(matrix, &support, &logw);
    let ll = normalized_ll(&ell);
    if !ll.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "mixture log-likelihood evaluated to {ll}"
        )));
    }
    Ok(ll)
}

/// The mixture model selected by sparse weights over a candidate set:
/// the supported candidates with their weights.
pub fn mixture_from_weights(set: &ComponentSet, w: &WeightVector) -> Result<MixtureModel> {
    if w.len() != set.len() {
        return Err(Error::DimensionMismatch(format!(
            "weight vector has {} entries for {} candidates",
            w.len(),
            set.len()
        )));
    }
    let support = w.effective_support();
    if support.is_empty() {
        return Err(Error::InvalidArgument(
            "weight vector has no positive entries".into(),
        ));
    }
    let weights: Vec<f64> = support.iter().map(|&j| w.weights()[j]).collect();
    let components: Vec<_> = support.iter().map(|&j| set.get(j).clone()).collect();
    MixtureModel::new(weights, components)
}

/// Dense row-major result matrix (used for responsibilities).
#[derive(Debug, Clone)]
pub struct RowMatrix {
    pub data: Vec<f64>,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl RowMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

/// Posterior responsibilities `q[i][m] = pi_m exp(L[i][m]) / sum_l pi_l
/// exp(L[i][l])`. Rows sum to one; zero-weight candidates get exactly zero.
/// Allocates a full `n x m` matrix.
pub fn responsibilities(matrix: &LogLikelihoodMatrix, w: &WeightVector) -> Result<RowMatrix> {
    if w.len() != matrix.n_models() {
        return Err(Error::DimensionMismatch(format!(
            "weight vector has {} entries for {} candidates",
            w.len(),
            matrix.n_models()
        )));
    }
    let (support, logw) = support_and_log_weights(w);
    if support.is_empty() {
        return Err(Error::InvalidArgument(
            "weight vector has no positive entries".into(),
        ));
    }
    let ell = row_log_mixture(matrix, &support, &logw);
    let n = matrix.n_points();
    let m = matrix.n_models();
    let mut data = vec![0.0; n * m];
    data.par_chunks_mut(ROW_CHUNK * m)
        .enumerate()
        .for_each(|(chunk_idx, chunk)| {
            let i0 = chunk_idx * ROW_CHUNK;
            for (r, out_row) in chunk.chunks_mut(m).enumerate() {
                let i = i0 + r;
                let row = matrix.row(i);
                for (&mj, &lw) in support.iter().zip(&logw) {
                    out_row[mj] = (lw + row[mj] - ell[i]).exp();
                }
            }
        });
    Ok(RowMatrix {
        data,
        n_rows: n,
        n_cols: m,
    })
}

/// The Frank-Wolfe duality gap `max_m g_m - 1` at `w` (clamped at zero).
///
/// For every feasible weight vector `w'`, concavity of the objective gives
/// `LL(w') <= LL(w) + fw_gap(w)`, which is what turns any stopping point of
/// the convex solver into a certified upper bound.
pub fn fw_gap(matrix: &LogLikelihoodMatrix, w: &WeightVector) -> Result<f64> {
    if w.len() != matrix.n_models() {
        return Err(Error::DimensionMismatch(format!(
            "weight vector has {} entries for {} candidates",
            w.len(),
            matrix.n_models()
        )));
    }
    let (support, logw) = support_and_log_weights(w);
    if support.is_empty() {
        return Err(Error::InvalidArgument(
            "weight vector has no positive entries".into(),
        ));
    }
    let ell = row_log_mixture(matrix, &support, &logw);
    let g = gradient_at(matrix, &ell);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(
            "likelihood gradient evaluated to a non-finite value".into(),
        ));
    }
    Ok(gap_from_gradient(&g))
}
