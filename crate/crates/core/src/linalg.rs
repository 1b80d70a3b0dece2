//! Dense LU factorization with partial (row) pivoting.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Absolute pivot magnitude below which the matrix is treated as singular.
pub const PIVOT_THRESHOLD: f64 = 1e-12;

/// Solves `a * x = b` by Gaussian elimination with row pivoting.
pub fn lu_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    let mut m = a.clone();
    let mut x = b.clone();

    for k in 0..n {
        let (pivot_row, pivot) =
            (k..n)
                .map(|r| (r, m[(r, k)].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if !(pivot >= PIVOT_THRESHOLD) {
            return Err(Error::SingularJacobian { column: k, pivot });
        }
        if pivot_row != k {
            m.swap_rows(k, pivot_row);
            x.swap_rows(k, pivot_row);
        }
        let diag = m[(k, k)];
        for r in (k + 1)..n {
            let factor = m[(r, k)] / diag;
            if factor == 0.0 {
                continue;
            }
            m[(r, k)] = 0.0;
            for c in (k + 1)..n {
                m[(r, c)] -= factor * m[(k, c)];
            }
            x[r] -= factor * x[k];
        }
    }

    for k in (0..n).rev() {
        let mut s = x[k];
        for c in (k + 1)..n {
            s -= m[(k, c)] * x[c];
        }
        x[k] = s / m[(k, k)];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn needs_pivoting() {
        // zero in the leading position
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        let b = DVector::from_vec(vec![4.0, 5.0]);
        let x = lu_solve(&a, &b).unwrap();
        assert!((x[0] + 3.5).abs() < 1e-14);
        assert!((x[1] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn singular_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            lu_solve(&a, &b),
            Err(Error::SingularJacobian { column: 1, .. })
        ));
    }

    #[test]
    fn nan_pivot_is_singular() {
        let a = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        let b = DVector::from_vec(vec![1.0]);
        assert!(lu_solve(&a, &b).is_err());
    }

    proptest! {
        #[test]
        fn residual_is_small(
            vals in proptest::collection::vec(-1.0f64..1.0, 25),
            rhs in proptest::collection::vec(-1.0f64..1.0, 5),
        ) {
            // diagonally dominant, hence well conditioned
            let mut a = DMatrix::from_row_slice(5, 5, &vals);
            for i in 0..5 {
                a[(i, i)] += 6.0;
            }
            let b = DVector::from_vec(rhs);
            let x = lu_solve(&a, &b).unwrap();
            let r = &a * &x - &b;
            prop_assert!(r.amax() < 1e-12);
        }
    }
}
