//! Thin wrapper around faer's dense Cholesky factorization.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::{cholesky_in_place, cholesky_in_place_scratch};
use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::{Mat, MatMut, Par};

use crate::error::{Error, Result};

/// Pivots whose square falls below this fraction of the largest diagonal
/// entry are treated as a numerically singular matrix.
const PIVOT_RATIO_FLOOR: f64 = 1e-13;

/// Lower Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Mat<f64>,
}

impl Cholesky {
    /// Factorizes the symmetric matrix `a` in place. Only the lower triangle
    /// of `a` is read.
    pub fn factor(mut a: Mat<f64>, context: &'static str) -> Result<Self> {
        let n = a.nrows();
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
        let mut mem = MemBuffer::new(cholesky_in_place_scratch::<f64>(n, Par::Seq, Default::default()));
        let stack = MemStack::new(&mut mem);
        cholesky_in_place(a.as_mut(), Default::default(), Par::Seq, stack, Default::default())
            .map_err(|e| Error::NotPositiveDefinite {
                context,
                detail: format!("{e:?}"),
            })?;
        for j in 0..n {
            let pivot = a[(j, j)];
            if !(pivot * pivot > PIVOT_RATIO_FLOOR * max_diag) {
                return Err(Error::NotPositiveDefinite {
                    context,
                    detail: format!(
                        "pivot {j} squared is {:.3e} against a largest diagonal of {max_diag:.3e}",
                        pivot * pivot
                    ),
                });
            }
            for i in 0..j {
                a[(i, j)] = 0.0;
            }
        }
        Ok(Cholesky { l: a })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &Mat<f64> {
        &self.l
    }

    /// `L z`, touching only the lower triangle.
    pub fn lower_mul(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(z.len(), n);
        let mut out = vec![0.0; n];
        for (j, &zj) in z.iter().enumerate() {
            let col = self.l.col_as_slice(j);
            for i in j..n {
                out[i] += col[i] * zj;
            }
        }
        out
    }

    /// Overwrites `rhs` with `L⁻¹ rhs`.
    pub fn solve_lower_in_place(&self, rhs: MatMut<'_, f64>) {
        solve_lower_triangular_in_place(self.l.as_ref(), rhs, Par::Seq);
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.solve_lower_in_place(rhs.as_mut());
        solve_upper_triangular_in_place(self.l.transpose(), rhs.as_mut(), Par::Seq);
        rhs.col_as_slice(0).to_vec()
    }

    /// `‖L⁻¹ b‖²`, i.e. `bᵀ A⁻¹ b`.
    pub fn inverse_quadratic_form(&self, b: &[f64]) -> f64 {
        let mut rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        self.solve_lower_in_place(rhs.as_mut());
        rhs.col_as_slice(0).iter().map(|v| v * v).sum()
    }
}
