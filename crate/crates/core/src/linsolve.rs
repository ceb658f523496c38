//! Sparse direct linear solver on a fixed sparsity pattern.
//!
//! The Newton iterations of the coupled solver repeatedly assemble and solve
//! systems with an unchanging structure, so [`SparseSystem`] separates the
//! three phases: the pattern (and the fill-reducing symbolic LU analysis) is
//! computed once, values are re-filled every iteration through slot lookups,
//! and only the numeric factorization runs per solve.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::MatMut;

use crate::{Error, Real, Result};

/// Square sparse matrix in compressed-column form with a reusable symbolic
/// LU factorization.
pub struct SparseSystem {
    n: usize,
    symbolic: SymbolicSparseColMat<usize>,
    values: Vec<Real>,
    symbolic_lu: SymbolicLu<usize>,
}

impl SparseSystem {
    /// Builds the pattern from `(row, col)` pairs; duplicates are merged.
    pub fn new(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (r, c) in entries {
            if r >= n || c >= n {
                return Err(Error::Linear(format!(
                    "pattern entry ({r}, {c}) outside {n}x{n} system"
                )));
            }
            cols[c].push(r);
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0usize);
        for mut rows in cols {
            rows.sort_unstable();
            rows.dedup();
            row_idx.extend_from_slice(&rows);
            col_ptr.push(row_idx.len());
        }
        let nnz = row_idx.len();
        let symbolic = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
        let symbolic_lu = SymbolicLu::try_new(symbolic.as_ref())
            .map_err(|e| Error::Linear(format!("symbolic factorization failed: {e:?}")))?;
        Ok(Self {
            n,
            symbolic,
            values: vec![0.0; nnz],
            symbolic_lu,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Resets all stored values to zero, keeping the pattern.
    pub fn zero(&mut self) {
        self.values.fill(0.0);
    }

    fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let col_ptr = self.symbolic.as_ref().col_ptr();
        let row_idx = self.symbolic.as_ref().row_idx();
        let start = col_ptr[col];
        let end = col_ptr[col + 1];
        row_idx[start..end]
            .binary_search(&row)
            .ok()
            .map(|i| start + i)
    }

    /// Adds `v` to entry `(row, col)`.
    ///
    /// Panics if the entry is outside the pattern: that is an assembly bug,
    /// not a runtime condition.
    #[inline]
    pub fn add(&mut self, row: usize, col: usize, v: Real) {
        match self.slot(row, col) {
            Some(s) => self.values[s] += v,
            None => panic!("entry ({row}, {col}) lies outside the sparsity pattern"),
        }
    }

    /// Reads the current value at `(row, col)`; zero if outside the pattern.
    pub fn get(&self, row: usize, col: usize) -> Real {
        self.slot(row, col).map_or(0.0, |s| self.values[s])
    }

    /// Factorizes the current values and overwrites `rhs` with the solution.
    pub fn solve_in_place(&self, rhs: &mut [Real]) -> Result<()> {
        if rhs.len() != self.n {
            return Err(Error::Linear(format!(
                "right-hand side has length {}, system is {}x{}",
                rhs.len(),
                self.n,
                self.n
            )));
        }
        let mat = SparseColMatRef::new(self.symbolic.as_ref(), &self.values);
        // The factorization panics on an exactly-zero pivot instead of
        // returning an error; contain that so a singular tangent reaches the
        // caller as a solver error.
        let lu = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            Lu::try_new_with_symbolic(self.symbolic_lu.clone(), mat)
        }))
        .map_err(|_| Error::Linear("numeric factorization hit a zero pivot".into()))?
        .map_err(|e| Error::Linear(format!("numeric factorization failed: {e:?}")))?;
        lu.solve_in_place(MatMut::from_column_major_slice_mut(rhs, self.n, 1));
        for (i, x) in rhs.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Linear(format!(
                    "non-finite solution component at index {i} (singular or badly scaled matrix)"
                )));
            }
        }
        Ok(())
    }

    /// Multiplies the current matrix with `x` (used for residual checks).
    pub fn matvec(&self, x: &[Real], y: &mut [Real]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        y.fill(0.0);
        let col_ptr = self.symbolic.as_ref().col_ptr();
        let row_idx = self.symbolic.as_ref().row_idx();
        for c in 0..self.n {
            let xc = x[c];
            for s in col_ptr[c]..col_ptr[c + 1] {
                y[row_idx[s]] += self.values[s] * xc;
            }
        }
    }
}
