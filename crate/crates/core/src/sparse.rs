//! Triplet assembly, compressed-row storage and a sparse LU wrapper.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Par};
use nalgebra::DMatrix;

use crate::error::{FenepError, Result};

#[derive(Clone, Debug, Default)]
pub struct Triplets {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n_rows && j < self.n_cols);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    /// Adds `scale · other` at block offset `(row_off, col_off)`.
    pub fn add_block(&mut self, other: &Triplets, scale: f64, row_off: usize, col_off: usize) {
        for &(i, j, v) in &other.entries {
            self.push(i + row_off, j + col_off, scale * v);
        }
    }

    /// Adds `scale · otherᵀ` at block offset `(row_off, col_off)`.
    pub fn add_block_transposed(&mut self, other: &Triplets, scale: f64, row_off: usize, col_off: usize) {
        for &(i, j, v) in &other.entries {
            self.push(j + row_off, i + col_off, scale * v);
        }
    }

    pub fn to_csr(&self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, &self.entries)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from unsorted entries, summing duplicates.
    pub fn from_triplets(n_rows: usize, n_cols: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut sorted = entries.to_vec();
        sorted.sort_unstable_by_key(|a| (a.0, a.1));
        let mut indptr = vec![0; n_rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().expect("entry present") += v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        Self {
            n_rows,
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let entries: Vec<_> = (0..self.n_rows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (j, i, v)))
            .collect();
        Self::from_triplets(self.n_cols, self.n_rows, &entries)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows.min(self.n_cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// Largest absolute entry of `A − Aᵀ`.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst: f64 = 0.0;
        for i in 0..self.n_rows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - t.get(i, j)).abs());
            }
            for (j, v) in t.row(i) {
                worst = worst.max((v - self.get(i, j)).abs());
            }
        }
        worst
    }
}

/// Sparse LU factorization (sequential for bitwise reproducibility).
pub struct SparseLu {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl SparseLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.n_rows != a.n_cols {
            return Err(FenepError::Solver(format!(
                "cannot factor a {}×{} matrix",
                a.n_rows, a.n_cols
            )));
        }
        faer::set_global_parallelism(Par::Seq);
        let triplets: Vec<_> = (0..a.n_rows)
            .flat_map(|i| a.row(i).map(move |(j, v)| Triplet::new(i, j, v)))
            .collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(a.n_rows, a.n_cols, &triplets)
            .map_err(|e| FenepError::Solver(format!("sparse matrix construction failed: {e:?}")))?;
        let lu = m
            .sp_lu()
            .map_err(|e| FenepError::Solver(format!("sparse LU failed: {e:?}")))?;
        Ok(Self { n: a.n_rows, lu })
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let b = Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(FenepError::Solver("singular factorization (non-finite solution)".into()));
        }
        Ok(out)
    }
}

/// One-shot sparse solve with a relative residual check.
pub fn solve(a: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let x = SparseLu::factor(a)?.solve(rhs)?;
    let r = a.matvec(&x);
    let res = r.iter().zip(rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = rhs.iter().map(|v| v.abs()).fold(0.0, f64::max)
        + a.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
            * x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if res > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(FenepError::Solver(format!(
            "linear solve inaccurate: residual {res:.3e} (scale {scale:.3e}), matrix likely singular"
        )));
    }
    Ok(x)
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0), (0, 0, 3.0), (0, 1, -1.0)]);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(0, 1), -1.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.matvec(&[1.0, 1.0]), vec![3.0, 2.0]);
    }

    #[test]
    fn lu_solves_nonsymmetric_system() {
        let m = CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, -2.0), (1, 1, 5.0), (1, 2, 1.0), (2, 2, 3.0), (2, 0, 1.0)],
        );
        let x_true = [1.0, -2.0, 0.5];
        let b = m.matvec(&x_true);
        let x = solve(&m, &b).unwrap();
        for (a, b) in x.iter().zip(x_true) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_system_reported() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(solve(&m, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn transpose_and_asymmetry() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 2.0), (1, 0, 2.0), (0, 0, 1.0)]);
        assert_eq!(m.asymmetry(), 0.0);
        let n = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.5)]);
        assert_eq!(n.transpose().get(2, 0), 1.5);
    }
}
