//! Graph and mesh representation: sparse adjacency, Laplacian construction,
//! spectral rescaling, and the largest-eigenvalue estimate that rescaling
//! needs.

pub mod off;
pub mod spectral;
pub mod spm;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Seed for the power-iteration start vector; fixed so eigenvalue estimates
/// are reproducible.
const POWER_ITERATION_SEED: u64 = 0x5eed_1a9_0001;

pub const DEFAULT_EIG_TOL: f64 = 1e-6;
pub const DEFAULT_EIG_MAX_ITERS: usize = 1000;

/// Sparse real matrix stored as deduplicated (row, col, value) triples in
/// row-major order, with row offsets for fast per-row iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(u32, u32, f64)>,
    row_ptr: Vec<usize>,
}

impl SparseMatrix {
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut entries: Vec<(u32, u32, f64)>,
    ) -> Result<Self> {
        for &(r, c, _) in &entries {
            if r as usize >= rows || c as usize >= cols {
                return Err(Error::InvalidSparse(format!(
                    "entry ({r}, {c}) out of bounds for {rows}x{cols}"
                )));
            }
        }
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::InvalidSparse(format!(
                    "duplicate entry at ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        let row_ptr = build_row_ptr(rows, &entries);
        Ok(SparseMatrix {
            rows,
            cols,
            entries,
            row_ptr,
        })
    }

    pub fn identity(n: usize) -> Self {
        let entries: Vec<_> = (0..n as u32).map(|i| (i, i, 1.0)).collect();
        let row_ptr = build_row_ptr(n, &entries);
        SparseMatrix {
            rows: n,
            cols: n,
            entries,
            row_ptr,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Entries in deterministic row-major order.
    pub fn entries(&self) -> &[(u32, u32, f64)] {
        &self.entries
    }

    pub fn row_entries(&self, r: usize) -> &[(u32, u32, f64)] {
        &self.entries[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row_entries(r)
            .iter()
            .find(|&&(_, cc, _)| cc as usize == c)
            .map(|&(_, _, v)| v)
            .unwrap_or(0.0)
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut entries: Vec<_> = self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let row_ptr = build_row_ptr(self.cols, &entries);
        SparseMatrix {
            rows: self.cols,
            cols: self.rows,
            entries,
            row_ptr,
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        self.entries
            .iter()
            .all(|&(r, c, v)| (self.get(c as usize, r as usize) - v).abs() <= tol)
    }

    pub fn assert_finite(&self) -> Result<()> {
        if self.entries.iter().all(|&(_, _, v)| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("sparse matrix".into()))
        }
    }

    /// y = A x for a dense vector x.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(y.len(), self.rows);
        for r in 0..self.rows {
            let mut acc = 0.0;
            for &(_, c, v) in self.row_entries(r) {
                acc += v * x[c as usize];
            }
            y[r] = acc;
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.cols]; self.rows];
        for &(r, c, v) in &self.entries {
            m[r as usize][c as usize] = v;
        }
        m
    }
}

fn build_row_ptr(rows: usize, entries: &[(u32, u32, f64)]) -> Vec<usize> {
    let mut ptr = vec![0usize; rows + 1];
    for &(r, _, _) in entries {
        ptr[r as usize + 1] += 1;
    }
    for i in 0..rows {
        ptr[i + 1] += ptr[i];
    }
    ptr
}

/// Triangle mesh with the face-derived binary adjacency matrix.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub adjacency: SparseMatrix,
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[u32; 3]>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::InvalidMesh("mesh has no vertices".into()));
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidMesh(format!("non-finite vertex {i}")));
            }
        }
        let adjacency = build_adjacency(&faces, vertices.len())?;
        Ok(Mesh {
            vertices,
            faces,
            adjacency,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// True when every vertex can reach vertex 0 over face edges.
    pub fn is_edge_connected(&self) -> bool {
        let n = self.vertex_count();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &(_, c, _) in self.adjacency.row_entries(v) {
                let c = c as usize;
                if !seen[c] {
                    seen[c] = true;
                    count += 1;
                    stack.push(c);
                }
            }
        }
        count == n
    }
}

/// Binary symmetric adjacency from shared face edges.
pub fn build_adjacency(faces: &[[u32; 3]], n: usize) -> Result<SparseMatrix> {
    if n == 0 {
        return Err(Error::InvalidMesh("vertex count must be at least 1".into()));
    }
    let mut edges = Vec::with_capacity(faces.len() * 6);
    for (fi, f) in faces.iter().enumerate() {
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(Error::InvalidMesh(format!(
                "degenerate face {fi}: {:?}",
                f
            )));
        }
        for &(a, b) in &[(f[0], f[1]), (f[1], f[2]), (f[0], f[2])] {
            if a as usize >= n || b as usize >= n {
                return Err(Error::InvalidMesh(format!(
                    "face {fi} references vertex out of range [0, {n})"
                )));
            }
            edges.push((a, b, 1.0));
            edges.push((b, a, 1.0));
        }
    }
    edges.sort_unstable_by_key(|&(r, c, _)| (r, c));
    edges.dedup_by_key(|&mut (r, c, _)| (r, c));
    SparseMatrix::from_triplets(n, n, edges)
}

/// Combinatorial Laplacian `L = D - A` together with a largest-eigenvalue
/// estimate used for spectral rescaling.
#[derive(Clone, Debug)]
pub struct Laplacian {
    pub matrix: SparseMatrix,
    pub lambda_max: f64,
}

pub fn build_laplacian(adjacency: &SparseMatrix) -> Result<Laplacian> {
    if adjacency.rows() != adjacency.cols() {
        return Err(Error::InvalidSparse("adjacency must be square".into()));
    }
    if !adjacency.is_symmetric(0.0) {
        return Err(Error::InvalidSparse("adjacency must be symmetric".into()));
    }
    let n = adjacency.rows();
    let mut entries = Vec::with_capacity(adjacency.nnz() + n);
    for r in 0..n {
        let mut degree = 0.0;
        for &(_, c, v) in adjacency.row_entries(r) {
            if c as usize == r {
                return Err(Error::InvalidSparse(
                    "adjacency must have zero diagonal".into(),
                ));
            }
            degree += v;
            entries.push((r as u32, c, -v));
        }
        entries.push((r as u32, r as u32, degree));
    }
    let matrix = SparseMatrix::from_triplets(n, n, entries)?;
    let lambda_max = max_eigenvalue(&matrix, DEFAULT_EIG_TOL, DEFAULT_EIG_MAX_ITERS)?;
    Ok(Laplacian { matrix, lambda_max })
}

/// Largest-eigenvalue estimate by power iteration with a fixed seeded start
/// vector. Falls back to the Gershgorin bound when the iteration stalls.
pub fn max_eigenvalue(matrix: &SparseMatrix, tol: f64, max_iters: usize) -> Result<f64> {
    if matrix.rows() != matrix.cols() {
        return Err(Error::InvalidSparse("matrix must be square".into()));
    }
    matrix.assert_finite()?;
    let n = matrix.rows();
    let mut rng = SeededRng::new(POWER_ITERATION_SEED);
    let mut v: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let norm = l2(&v);
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    let mut av = vec![0.0; n];
    let mut lambda_prev = 0.0;
    for _ in 0..max_iters {
        matrix.matvec(&v, &mut av);
        let lambda = dot(&v, &av);
        let av_norm = l2(&av);
        if av_norm == 0.0 {
            // Matrix annihilates the iterate: zero is the only reachable value.
            return Ok(0.0);
        }
        for (x, a) in v.iter_mut().zip(&av) {
            *x = a / av_norm;
        }
        if (lambda - lambda_prev).abs() <= tol * lambda.abs().max(1.0) {
            return Ok(lambda);
        }
        lambda_prev = lambda;
    }
    // Stalled: Gershgorin row-sum bound (equals twice the maximum degree for
    // a combinatorial Laplacian).
    let bound = (0..n)
        .map(|r| matrix.row_entries(r).iter().map(|&(_, _, v)| v.abs()).sum())
        .fold(0.0, f64::max);
    Ok(bound)
}

/// Affine spectral map `2 L / lambda_max - I`, placing the spectrum in [-1, 1].
pub fn rescale_laplacian(laplacian: &Laplacian) -> Result<SparseMatrix> {
    if laplacian.lambda_max <= 0.0 {
        return Err(Error::DegenerateGraph(format!(
            "lambda_max must be positive, got {}",
            laplacian.lambda_max
        )));
    }
    let n = laplacian.matrix.rows();
    let scale = 2.0 / laplacian.lambda_max;
    let mut entries = Vec::with_capacity(laplacian.matrix.nnz() + n);
    for r in 0..n {
        let mut saw_diag = false;
        for &(_, c, v) in laplacian.matrix.row_entries(r) {
            if c as usize == r {
                entries.push((r as u32, c, v * scale - 1.0));
                saw_diag = true;
            } else {
                entries.push((r as u32, c, v * scale));
            }
        }
        if !saw_diag {
            entries.push((r as u32, r as u32, -1.0));
        }
    }
    SparseMatrix::from_triplets(n, n, entries)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_adjacency(n: usize) -> SparseMatrix {
        let mut e = Vec::new();
        for i in 0..n - 1 {
            e.push((i as u32, i as u32 + 1, 1.0));
            e.push((i as u32 + 1, i as u32, 1.0));
        }
        SparseMatrix::from_triplets(n, n, e).unwrap()
    }

    #[test]
    fn adjacency_single_triangle() {
        let a = build_adjacency(&[[0, 1, 2]], 3).unwrap();
        for &(i, j) in &[(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)] {
            assert_eq!(a.get(i, j), 1.0);
        }
        assert_eq!(a.nnz(), 6);
        for i in 0..3 {
            assert_eq!(a.get(i, i), 0.0);
        }
    }

    #[test]
    fn adjacency_empty_faces() {
        let a = build_adjacency(&[], 2).unwrap();
        assert_eq!(a.nnz(), 0);
        assert_eq!(a.rows(), 2);
    }

    #[test]
    fn adjacency_shared_edge_deduplicated() {
        let a = build_adjacency(&[[0, 1, 2], [1, 2, 3]], 4).unwrap();
        assert_eq!(a.get(1, 2), 1.0);
        // (1,2) appears exactly once in the entry list
        let count = a
            .entries()
            .iter()
            .filter(|&&(r, c, _)| r == 1 && c == 2)
            .count();
        assert_eq!(count, 1);
    }

    #[test]
    fn adjacency_rejects_bad_faces() {
        assert!(build_adjacency(&[[0, 1, 5]], 3).is_err());
        assert!(build_adjacency(&[[0, 0, 1]], 3).is_err());
    }

    #[test]
    fn laplacian_path_graph() {
        let lap = build_laplacian(&path_adjacency(3)).unwrap();
        let dense = lap.matrix.to_dense();
        let expected = [[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(dense[i][j], expected[i][j]);
            }
        }
    }

    #[test]
    fn laplacian_isolated_vertex() {
        let a = SparseMatrix::from_triplets(1, 1, vec![]).unwrap();
        let lap = build_laplacian(&a).unwrap();
        assert_eq!(lap.matrix.get(0, 0), 0.0);
        assert_eq!(lap.lambda_max, 0.0);
    }

    #[test]
    fn laplacian_triangle() {
        let lap = build_laplacian(&build_adjacency(&[[0, 1, 2]], 3).unwrap()).unwrap();
        let dense = lap.matrix.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 2.0 } else { -1.0 };
                assert_eq!(dense[i][j], want);
            }
        }
    }

    #[test]
    fn laplacian_rejects_asymmetric() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 1, 1.0)]).unwrap();
        assert!(build_laplacian(&a).is_err());
    }

    #[test]
    fn laplacian_row_sums_zero() {
        let lap = build_laplacian(&build_adjacency(&[[0, 1, 2], [1, 2, 3]], 4).unwrap()).unwrap();
        for r in 0..4 {
            let s: f64 = lap.matrix.row_entries(r).iter().map(|&(_, _, v)| v).sum();
            assert!(s.abs() <= 1e-9, "row {r} sums to {s}");
        }
    }

    #[test]
    fn power_iteration_path3() {
        // Spectrum of the P3 Laplacian is {0, 1, 3}.
        let lap = build_laplacian(&path_adjacency(3)).unwrap();
        assert!((lap.lambda_max - 3.0).abs() <= 1e-5);
    }

    #[test]
    fn power_iteration_triangle() {
        // Spectrum of the K3 Laplacian is {0, 3, 3}.
        let lap = build_laplacian(&build_adjacency(&[[0, 1, 2]], 3).unwrap()).unwrap();
        assert!((lap.lambda_max - 3.0).abs() <= 1e-5);
    }

    #[test]
    fn power_iteration_rejects_non_finite() {
        let m = SparseMatrix::from_triplets(2, 2, vec![(0, 0, f64::NAN)]).unwrap();
        assert!(max_eigenvalue(&m, 1e-6, 100).is_err());
    }

    #[test]
    fn rescale_path3() {
        let lap = Laplacian {
            matrix: build_laplacian(&path_adjacency(3)).unwrap().matrix,
            lambda_max: 3.0,
        };
        let r = rescale_laplacian(&lap).unwrap().to_dense();
        let e = [
            [-1.0 / 3.0, -2.0 / 3.0, 0.0],
            [-2.0 / 3.0, 1.0 / 3.0, -2.0 / 3.0],
            [0.0, -2.0 / 3.0, -1.0 / 3.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[i][j] - e[i][j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rescale_triangle() {
        let lap = Laplacian {
            matrix: build_laplacian(&build_adjacency(&[[0, 1, 2]], 3).unwrap())
                .unwrap()
                .matrix,
            lambda_max: 3.0,
        };
        let r = rescale_laplacian(&lap).unwrap().to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 / 3.0 } else { -2.0 / 3.0 };
                assert!((r[i][j] - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rescale_rejects_zero_lambda() {
        let lap = Laplacian {
            matrix: SparseMatrix::from_triplets(1, 1, vec![]).unwrap(),
            lambda_max: 0.0,
        };
        assert!(rescale_laplacian(&lap).is_err());
    }

    #[test]
    fn rescale_covers_isolated_vertices() {
        // Vertex 3 is isolated; its rescaled diagonal must still carry -1.
        let a = build_adjacency(&[[0, 1, 2]], 4).unwrap();
        let lap = build_laplacian(&a).unwrap();
        let r = rescale_laplacian(&lap).unwrap();
        assert_eq!(r.get(3, 3), -1.0);
    }

    #[test]
    fn sparse_rejects_duplicates_and_out_of_range() {
        assert!(SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn mesh_connectivity() {
        let verts = vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]];
        let m = Mesh::new(verts.clone(), vec![[0, 1, 2]]).unwrap();
        assert!(!m.is_edge_connected());
        let m2 = Mesh::new(verts[..3].to_vec(), vec![[0, 1, 2]]).unwrap();
        assert!(m2.is_edge_connected());
    }

    #[test]
    fn triangle_adjacency_is_symmetric_zero_diag() {
        let a = build_adjacency(&[[0, 1, 2], [1, 2, 3], [2, 3, 4]], 5).unwrap();
        assert!(a.is_symmetric(0.0));
        for i in 0..5 {
            assert_eq!(a.get(i, i), 0.0);
        }
    }
}
