//! Dense matrix kernels shared by the convolution, fully-connected and
//! graph-convolution layers.
//!
//! All parallel splits are over disjoint output rows with a chunk size that
//! depends only on the problem shape, so results are bit-identical
//! regardless of thread count.

use rayon::prelude::*;

use crate::real::Real;

/// Problems smaller than this many multiply-adds stay on one thread.
const PAR_THRESHOLD: usize = 1 << 15;

fn row_chunk(n: usize) -> usize {
    // Aim for chunks of ~16k output scalars.
    (1 << 14) / n.max(1) + 1
}

/// `c = a * b` with `a` M x K, `b` K x N, all row-major.
pub fn matmul<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let body = |(ci, a_rows): (&mut [T], &[T])| {
        let rows = ci.len() / n;
        for i in 0..rows {
            let out = &mut ci[i * n..(i + 1) * n];
            out.fill(T::zero());
            let a_row = &a_rows[i * k..(i + 1) * k];
            for (kk, &av) in a_row.iter().enumerate() {
                if av == T::zero() {
                    continue;
                }
                let b_row = &b[kk * n..(kk + 1) * n];
                for (o, &bv) in out.iter_mut().zip(b_row) {
                    *o = *o + av * bv;
                }
            }
        }
    };
    if m * k * n < PAR_THRESHOLD {
        body((c, a));
    } else {
        let chunk = row_chunk(n);
        c.par_chunks_mut(chunk * n)
            .zip(a.par_chunks(chunk * k))
            .for_each(body);
    }
}

/// `c += a^T * b` with `a` M x K, `b` M x N, `c` K x N.
pub fn matmul_at_b_accum<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    let work = |(chunk_idx, ci): (usize, &mut [T])| {
        let chunk = row_chunk(n);
        let k0 = chunk_idx * chunk;
        let rows = ci.len() / n;
        for mm in 0..m {
            let b_row = &b[mm * n..(mm + 1) * n];
            let a_row = &a[mm * k..(mm + 1) * k];
            for r in 0..rows {
                let av = a_row[k0 + r];
                if av == T::zero() {
                    continue;
                }
                let out = &mut ci[r * n..(r + 1) * n];
                for (o, &bv) in out.iter_mut().zip(b_row) {
                    *o = *o + av * bv;
                }
            }
        }
    };
    if m * k * n < PAR_THRESHOLD {
        work((0, c));
    } else {
        let chunk = row_chunk(n);
        c.par_chunks_mut(chunk * n).enumerate().for_each(work);
    }
}

/// `c = a * b^T` with `a` M x N, `b` K x N, `c` M x K.
pub fn matmul_a_bt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    let body = |(ci, a_rows): (&mut [T], &[T])| {
        let rows = ci.len() / k;
        for i in 0..rows {
            let a_row = &a_rows[i * n..(i + 1) * n];
            let out = &mut ci[i * k..(i + 1) * k];
            for (kk, o) in out.iter_mut().enumerate() {
                let b_row = &b[kk * n..(kk + 1) * n];
                let mut acc = T::zero();
                for (&x, &y) in a_row.iter().zip(b_row) {
                    acc = acc + x * y;
                }
                *o = acc;
            }
        }
    };
    if m * n * k < PAR_THRESHOLD {
        body((c, a));
    } else {
        let chunk = row_chunk(k);
        c.par_chunks_mut(chunk * k)
            .zip(a.par_chunks(chunk * n))
            .for_each(body);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for kk in 0..k {
                for j in 0..n {
                    c[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn kernels_match_naive_reference() {
        let mut rng = SeededRng::new(1);
        for &(m, k, n) in &[(1usize, 1usize, 1usize), (3, 4, 5), (17, 9, 23), (64, 32, 48)] {
            let a: Vec<f64> = (0..m * k).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let mut c = vec![0.0; m * n];
            matmul(&a, &b, &mut c, m, k, n);
            let want = naive_matmul(&a, &b, m, k, n);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }

            // a^T * b against naive on the transposed operand.
            let mut at = vec![0.0; k * m];
            for i in 0..m {
                for kk in 0..k {
                    at[kk * m + i] = a[i * k + kk];
                }
            }
            let bm: Vec<f64> = (0..m * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let mut c2 = vec![0.0; k * n];
            matmul_at_b_accum(&a, &bm, &mut c2, m, k, n);
            let want2 = naive_matmul(&at, &bm, k, m, n);
            for (x, y) in c2.iter().zip(&want2) {
                assert!((x - y).abs() < 1e-12);
            }

            // a * b^T.
            let bt_src: Vec<f64> = (0..k * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let am: Vec<f64> = (0..m * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let mut c3 = vec![0.0; m * k];
            matmul_a_bt(&am, &bt_src, &mut c3, m, n, k);
            let mut btt = vec![0.0; n * k];
            for kk in 0..k {
                for j in 0..n {
                    btt[j * k + kk] = bt_src[kk * n + j];
                }
            }
            let want3 = naive_matmul(&am, &btt, m, n, k);
            for (x, y) in c3.iter().zip(&want3) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn accumulate_adds_onto_existing() {
        let a = vec![1.0, 2.0]; // 2x1
        let b = vec![3.0, 4.0]; // 2x1
        let mut c = vec![10.0]; // 1x1
        matmul_at_b_accum(&a, &b, &mut c, 2, 1, 1);
        assert_eq!(c[0], 10.0 + 1.0 * 3.0 + 2.0 * 4.0);
    }
}
