//! Deterministic data-parallel primitives.
//!
//! Reductions are computed as ordered partial sums over fixed-size chunks,
//! then combined in chunk order. The `_seq` variants run the same chunked
//! algorithm on one thread, so both paths produce bit-identical results
//! regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length for ordered reductions. Fixed so that the summation order
/// never depends on the thread count.
const CHUNK: usize = 4096;

/// Inputs shorter than this are not worth the fork/join overhead.
const PAR_MIN_LEN: usize = 1 << 13;

/// Dot product with fixed chunked summation order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(feature = "parallel")]
    {
        if a.len() >= PAR_MIN_LEN {
            let partials: Vec<f64> = a
                .par_chunks(CHUNK)
                .zip(b.par_chunks(CHUNK))
                .map(|(ca, cb)| chunk_dot(ca, cb))
                .collect();
            return partials.iter().sum();
        }
    }
    dot_seq(a, b)
}

/// Sequential twin of [`dot`]; same chunking, same result.
pub fn dot_seq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.chunks(CHUNK)
        .zip(b.chunks(CHUNK))
        .map(|(ca, cb)| chunk_dot(ca, cb))
        .sum()
}

#[inline]
fn chunk_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Sum with fixed chunked summation order.
pub fn sum(a: &[f64]) -> f64 {
    #[cfg(feature = "parallel")]
    {
        if a.len() >= PAR_MIN_LEN {
            let partials: Vec<f64> = a.par_chunks(CHUNK).map(|c| c.iter().sum::<f64>()).collect();
            return partials.iter().sum();
        }
    }
    sum_seq(a)
}

/// Sequential twin of [`sum`].
pub fn sum_seq(a: &[f64]) -> f64 {
    a.chunks(CHUNK).map(|c| c.iter().sum::<f64>()).sum()
}

/// Max of |a_i|; order-independent, safe to parallelize freely.
pub fn max_abs(a: &[f64]) -> f64 {
    #[cfg(feature = "parallel")]
    {
        if a.len() >= PAR_MIN_LEN {
            return a
                .par_chunks(CHUNK)
                .map(|c| c.iter().fold(0.0f64, |m, x| m.max(x.abs())))
                .reduce(|| 0.0, f64::max);
        }
    }
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// y += alpha * x
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    #[cfg(feature = "parallel")]
    {
        if y.len() >= PAR_MIN_LEN {
            y.par_iter_mut().zip(x.par_iter()).for_each(|(yi, xi)| *yi += alpha * xi);
            return;
        }
    }
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Apply `f(row_index, row_slice)` to each `width`-long row of `out`.
pub fn row_map<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert_eq!(out.len() % width, 0);
    #[cfg(feature = "parallel")]
    {
        if out.len() >= PAR_MIN_LEN {
            out.par_chunks_mut(width).enumerate().for_each(|(j, row)| f(j, row));
            return;
        }
    }
    row_map_seq(out, width, f);
}

/// Sequential twin of [`row_map`].
pub fn row_map_seq<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    for (j, row) in out.chunks_mut(width).enumerate() {
        f(j, row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_and_seq_reductions_agree_bitwise() {
        let n = 3 * CHUNK + 17;
        let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos()).collect();
        assert_eq!(dot(&a, &b).to_bits(), dot_seq(&a, &b).to_bits());
        assert_eq!(sum(&a).to_bits(), sum_seq(&a).to_bits());
    }

    #[test]
    fn axpy_matches_scalar_loop() {
        let x = vec![1.0, 2.0, 3.0];
        let mut y = vec![10.0, 20.0, 30.0];
        axpy(&mut y, 0.5, &x);
        assert_eq!(y, vec![10.5, 21.0, 31.5]);
    }
}
