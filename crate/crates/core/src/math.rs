//! Deterministic numeric primitives: log-domain reductions and
//! order-stable summation.
//!
//! Every reduction here has a fixed association order that depends only on
//! input length, never on thread count, so repeated runs produce
//! bit-identical results.

/// Leaf size for the pairwise summation tree.
const SUM_BLOCK: usize = 32;

/// Sums a slice by pairwise tree reduction over fixed-size leaves.
///
/// Error grows like O(log n) in the number of leaves instead of O(n) for a
/// running sum, and the association order is a pure function of `values.len()`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= SUM_BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// `log(exp(a) + exp(b))` without overflow; correct for `-inf` inputs.
pub fn logsumexp2(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// `log sum_j exp(values[j])` over a slice; `-inf` for an empty slice or a
/// slice of `-inf` entries.
pub fn logsumexp(values: &[f64]) -> f64 {
    let mut acc = LogSumExp::new();
    for &v in values {
        acc.push(v);
    }
    acc.value()
}

/// Streaming log-sum-exp accumulator in `(max, sum of exp(x - max))` form.
///
/// Merging a single block into a fresh accumulator passes that block's state
/// through untouched, so a one-block stream reproduces the direct
/// computation bit for bit.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    pub fn new() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    /// Adds one term `exp(x)`.
    pub fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    /// Merges a pre-reduced block given as `(block_max, sum of exp(x - block_max))`.
    pub fn merge_block(&mut self, block_max: f64, block_sum: f64) {
        if block_sum == 0.0 {
            return;
        }
        if self.sum == 0.0 {
            self.max = block_max;
            self.sum = block_sum;
        } else if block_max > self.max {
            self.sum = self.sum * (self.max - block_max).exp() + block_sum;
            self.max = block_max;
        } else {
            self.sum += block_sum * (block_max - self.max).exp();
        }
    }

    /// Current value of `log sum exp`; `-inf` when nothing was pushed.
    pub fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }

    /// Internal `(max, sum)` state, for handing one accumulator to another
    /// via [`LogSumExp::merge_block`].
    pub fn parts(&self) -> (f64, f64) {
        (self.max, self.sum)
    }
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_exact_integers() {
        // Integer-valued doubles sum exactly, so any association order must
        // give the same answer.
        let values: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&values), 500_500.0, "integer sum is exact");
    }

    #[test]
    fn pairwise_sum_handles_short_slices() {
        assert_eq!(pairwise_sum(&[]), 0.0, "empty slice sums to zero");
        assert_eq!(pairwise_sum(&[3.5]), 3.5, "singleton passes through");
    }

    #[test]
    fn pairwise_sum_beats_naive_accumulation() {
        // 2^20 copies of 0.1: the exact sum is 104857.6 up to one rounding
        // of 0.1 itself. A naive running sum drifts by ~n*eps*sum; the
        // pairwise tree stays within ~log(n) roundings.
        let values = vec![0.1f64; 1 << 20];
        let exact = 0.1 * (1u32 << 20) as f64;
        let pairwise_err = (pairwise_sum(&values) - exact).abs();
        let naive: f64 = values.iter().sum();
        let naive_err = (naive - exact).abs();
        assert!(pairwise_err < 1e-8, "pairwise error {pairwise_err} too large");
        assert!(
            pairwise_err <= naive_err,
            "pairwise ({pairwise_err}) must not be worse than naive ({naive_err})"
        );
    }

    #[test]
    fn logsumexp_matches_direct_small_values() {
        let values = [-1.0, -2.0, -3.0];
        let direct = (f64::exp(-1.0) + f64::exp(-2.0) + f64::exp(-3.0)).ln();
        assert!(
            (logsumexp(&values) - direct).abs() < 1e-14,
            "logsumexp must match direct evaluation when exp cannot overflow"
        );
    }

    #[test]
    fn logsumexp_is_overflow_safe() {
        let values = [1000.0, 1000.0];
        let got = logsumexp(&values);
        let expect = 1000.0 + 2.0_f64.ln();
        assert!(
            (got - expect).abs() < 1e-12,
            "log(2 e^1000) = 1000 + log 2, got {got}"
        );
        let tiny = [-1e6, -1e6 - 1.0];
        assert!(logsumexp(&tiny).is_finite(), "underflow must not produce -inf");
    }

    #[test]
    fn logsumexp_empty_and_neg_inf() {
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_eq!(
            logsumexp(&[f64::NEG_INFINITY, 0.0]),
            0.0,
            "-inf terms contribute exactly nothing"
        );
    }

    #[test]
    fn logsumexp2_agrees_with_slice_version() {
        for (a, b) in [(0.3, -4.0), (-700.0, -701.0), (5.0, 5.0)] {
            assert!(
                (logsumexp2(a, b) - logsumexp(&[a, b])).abs() < 1e-15,
                "two-argument and slice forms agree"
            );
        }
    }

    #[test]
    fn streaming_single_block_is_bitwise_passthrough() {
        let values = [-0.7, -3.1, -1.9, -2.2];
        let mut direct = LogSumExp::new();
        for &v in &values {
            direct.push(v);
        }
        let mut merged = LogSumExp::new();
        merged.merge_block(direct.max, direct.sum);
        assert_eq!(
            merged.value().to_bits(),
            direct.value().to_bits(),
            "one-block merge must be exact passthrough"
        );
    }

    #[test]
    fn streaming_multi_block_matches_direct_closely() {
        let values: Vec<f64> = (0..97).map(|i| -((i as f64) * 0.37).sin().abs() * 30.0).collect();
        let direct = logsumexp(&values);
        let mut acc = LogSumExp::new();
        for chunk in values.chunks(8) {
            let mut block = LogSumExp::new();
            for &v in chunk {
                block.push(v);
            }
            acc.merge_block(block.max, block.sum);
        }
        assert!(
            (acc.value() - direct).abs() < 1e-13,
            "blocked merge stays within round-off of the direct reduction"
        );
    }
}
