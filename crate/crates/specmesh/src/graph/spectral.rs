//! Dense spectral reference path.
//!
//! Everything here goes through a full eigendecomposition and is intended
//! for validation at small vertex counts; the size guard makes accidental
//! production use loud. The fast Chebyshev layer is checked against
//! [`dense_spectral_filter_oracle`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::{rescale_laplacian, Laplacian, SparseMatrix};
use crate::tensor::Tensor;

/// Largest vertex count accepted by the dense routines.
pub const DENSE_GUARD: usize = 512;

/// Eigenvalues (ascending) and the orthonormal eigenvector matrix of a
/// symmetric sparse matrix.
pub fn dense_eigenbasis(matrix: &SparseMatrix) -> Result<(Vec<f64>, Tensor<f64>)> {
    dense_eigenbasis_bounded(matrix, DENSE_GUARD)
}

/// [`dense_eigenbasis`] with a caller-chosen size bound, for uses with a
/// larger (still desk-scale) budget such as deformation-basis construction.
pub fn dense_eigenbasis_bounded(
    matrix: &SparseMatrix,
    guard: usize,
) -> Result<(Vec<f64>, Tensor<f64>)> {
    let n = matrix.rows();
    if n != matrix.cols() {
        return Err(Error::InvalidSparse("matrix must be square".into()));
    }
    if n > guard {
        return Err(Error::InvalidArgument(format!(
            "dense eigendecomposition guarded at {guard} vertices, got {n}"
        )));
    }
    matrix.assert_finite()?;
    let mut dense = DMatrix::<f64>::zeros(n, n);
    for &(r, c, v) in matrix.entries() {
        dense[(r as usize, c as usize)] = v;
    }
    let eig = dense.symmetric_eigen();
    // nalgebra returns an arbitrary order; sort ascending for a stable basis.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut basis = Tensor::<f64>::zeros(&[n, n]);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            basis.data_mut()[row * n + col] = eig.eigenvectors[(row, src)];
        }
    }
    Ok((values, basis))
}

/// Exact spectral filtering `U g(Lambda) U^T x`, with `g` the Chebyshev
/// expansion of `theta` evaluated on the rescaled eigenvalues.
///
/// Uses the same `lambda_max` as the fast path so the two stay comparable.
pub fn dense_spectral_filter_oracle(
    laplacian: &Laplacian,
    theta: &[f64],
    x: &Tensor<f64>,
) -> Result<Tensor<f64>> {
    let n = laplacian.matrix.rows();
    if n > DENSE_GUARD {
        return Err(Error::InvalidArgument(format!(
            "spectral oracle guarded at {DENSE_GUARD} vertices, got {n}"
        )));
    }
    if theta.is_empty() {
        return Err(Error::InvalidArgument("need at least one coefficient".into()));
    }
    if x.rank() != 2 || x.dims()[0] != n {
        return Err(Error::ShapeMismatch(format!(
            "input must be {n}xF, got {:?}",
            x.dims()
        )));
    }
    // Validate the rescaling is possible before filtering.
    let _ = rescale_laplacian(laplacian)?;
    let (values, basis) = dense_eigenbasis(&laplacian.matrix)?;
    let gains: Vec<f64> = values
        .iter()
        .map(|&lam| {
            let scaled = 2.0 * lam / laplacian.lambda_max - 1.0;
            chebyshev_eval(theta, scaled)
        })
        .collect();
    let xhat = graph_fourier(x, &basis)?;
    let mut filtered = xhat;
    let f = filtered.dims()[1];
    for i in 0..n {
        for j in 0..f {
            let v = filtered.at2(i, j) * gains[i];
            filtered.data_mut()[i * f + j] = v;
        }
    }
    inverse_graph_fourier(&filtered, &basis)
}

/// Scalar Chebyshev expansion via the three-term recurrence.
pub fn chebyshev_eval(theta: &[f64], x: f64) -> f64 {
    let mut acc = theta[0];
    if theta.len() == 1 {
        return acc;
    }
    let mut t_prev = 1.0;
    let mut t_cur = x;
    acc += theta[1] * t_cur;
    for &c in &theta[2..] {
        let t_next = 2.0 * x * t_cur - t_prev;
        acc += c * t_next;
        t_prev = t_cur;
        t_cur = t_next;
    }
    acc
}

/// `xhat = U^T x`.
pub fn graph_fourier(x: &Tensor<f64>, basis: &Tensor<f64>) -> Result<Tensor<f64>> {
    fourier_apply(x, basis, true)
}

/// `x = U xhat`.
pub fn inverse_graph_fourier(xhat: &Tensor<f64>, basis: &Tensor<f64>) -> Result<Tensor<f64>> {
    fourier_apply(xhat, basis, false)
}

fn fourier_apply(x: &Tensor<f64>, basis: &Tensor<f64>, transpose: bool) -> Result<Tensor<f64>> {
    if basis.rank() != 2 || basis.dims()[0] != basis.dims()[1] {
        return Err(Error::ShapeMismatch("basis must be square".into()));
    }
    let n = basis.dims()[0];
    if x.rank() != 2 || x.dims()[0] != n {
        return Err(Error::ShapeMismatch(format!(
            "signal rows {:?} do not match basis size {n}",
            x.dims()
        )));
    }
    let f = x.dims()[1];
    let mut out = Tensor::<f64>::zeros(&[n, f]);
    for i in 0..n {
        for j in 0..f {
            let mut acc = 0.0;
            for k in 0..n {
                let u = if transpose {
                    basis.at2(k, i)
                } else {
                    basis.at2(i, k)
                };
                acc += u * x.at2(k, j);
            }
            out.data_mut()[i * f + j] = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_adjacency, build_laplacian};
    use crate::rng::SeededRng;

    fn triangle_laplacian() -> Laplacian {
        build_laplacian(&build_adjacency(&[[0, 1, 2]], 3).unwrap()).unwrap()
    }

    #[test]
    fn oracle_identity_coefficient() {
        let lap = triangle_laplacian();
        let x = Tensor::from_vec(&[3, 2], vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.25]).unwrap();
        let y = dense_spectral_filter_oracle(&lap, &[1.0, 0.0, 0.0], &x).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn oracle_linear_coefficient_is_rescaled_laplacian() {
        let lap = triangle_laplacian();
        let x = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, -0.5]).unwrap();
        let y = dense_spectral_filter_oracle(&lap, &[0.0, 1.0], &x).unwrap();
        let rescaled = rescale_laplacian(&lap).unwrap();
        let mut want = vec![0.0; 3];
        rescaled.matvec(x.data(), &mut want);
        for (a, b) in want.iter().zip(y.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn oracle_size_guard() {
        let n = DENSE_GUARD + 1;
        let mut entries = Vec::new();
        for i in 0..n as u32 - 1 {
            entries.push((i, i + 1, 1.0));
            entries.push((i + 1, i, 1.0));
        }
        let a = SparseMatrix::from_triplets(n, n, entries).unwrap();
        assert!(dense_eigenbasis(&a).is_err());
    }

    #[test]
    fn fourier_round_trip_and_norm() {
        let mut rng = SeededRng::new(99);
        for n in [4usize, 11, 50] {
            let mut entries = Vec::new();
            for i in 0..n as u32 - 1 {
                entries.push((i, i + 1, 1.0));
                entries.push((i + 1, i, 1.0));
            }
            // Add a few chords for irregularity.
            for _ in 0..n / 3 {
                let a = rng.below(n) as u32;
                let b = rng.below(n) as u32;
                if a != b && a.abs_diff(b) != 1 {
                    entries.push((a, b, 1.0));
                    entries.push((b, a, 1.0));
                }
            }
            entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
            entries.dedup_by_key(|&mut (r, c, _)| (r, c));
            let a = SparseMatrix::from_triplets(n, n, entries).unwrap();
            let lap = build_laplacian(&a).unwrap();
            let (_, basis) = dense_eigenbasis(&lap.matrix).unwrap();
            let x = Tensor::from_vec(
                &[n, 3],
                (0..n * 3).map(|_| rng.uniform_in(-2.0, 2.0)).collect(),
            )
            .unwrap();
            let xhat = graph_fourier(&x, &basis).unwrap();
            let back = inverse_graph_fourier(&xhat, &basis).unwrap();
            for (a, b) in x.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= 1e-9);
            }
            let norm = |t: &Tensor<f64>| t.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm(&x) - norm(&xhat)).abs() <= 1e-9);
        }
    }

    #[test]
    fn fourier_of_eigenvector_is_basis_vector() {
        let lap = triangle_laplacian();
        let (_, basis) = dense_eigenbasis(&lap.matrix).unwrap();
        let n = 3;
        let first: Vec<f64> = (0..n).map(|i| basis.at2(i, 0)).collect();
        let x = Tensor::from_vec(&[n, 1], first).unwrap();
        let xhat = graph_fourier(&x, &basis).unwrap();
        assert!((xhat.at2(0, 0).abs() - 1.0).abs() <= 1e-9);
        for i in 1..n {
            assert!(xhat.at2(i, 0).abs() <= 1e-9);
        }
    }

    #[test]
    fn rescaled_spectrum_in_unit_interval() {
        let mut rng = SeededRng::new(3);
        for n in [5usize, 20, 50] {
            let mut entries = Vec::new();
            for i in 0..n as u32 - 1 {
                entries.push((i, i + 1, 1.0));
                entries.push((i + 1, i, 1.0));
            }
            for _ in 0..n {
                let a = rng.below(n) as u32;
                let b = rng.below(n) as u32;
                if a != b && a.abs_diff(b) != 1 {
                    entries.push((a, b, 1.0));
                    entries.push((b, a, 1.0));
                }
            }
            entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
            entries.dedup_by_key(|&mut (r, c, _)| (r, c));
            let a = SparseMatrix::from_triplets(n, n, entries).unwrap();
            let lap = build_laplacian(&a).unwrap();
            // Exact lambda_max from the dense solve.
            let (values, _) = dense_eigenbasis(&lap.matrix).unwrap();
            let exact = Laplacian {
                matrix: lap.matrix.clone(),
                lambda_max: *values.last().unwrap(),
            };
            let rescaled = rescale_laplacian(&exact).unwrap();
            let (rv, _) = dense_eigenbasis(&rescaled).unwrap();
            for v in rv {
                assert!(v.abs() <= 1.0 + 1e-9, "rescaled eigenvalue {v}");
            }
        }
    }
}
