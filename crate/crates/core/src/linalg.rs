//! Thin LAPACK/BLAS bindings for the dense symmetric problems that dominate
//! the fitting cost: divide-and-conquer symmetric eigendecomposition
//! (`dsyevd`), Cholesky solves (`dposv`), and matrix products (`dgemm`).
//!
//! `nalgebra` matrices are column-major, so they can be handed to Fortran
//! routines directly.

use nalgebra::{DMatrix, DVector};
use std::os::raw::c_char;

extern "C" {
    fn dsyevd_(
        jobz: *const c_char,
        uplo: *const c_char,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        w: *mut f64,
        work: *mut f64,
        lwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );

    fn dposv_(
        uplo: *const c_char,
        n: *const i32,
        nrhs: *const i32,
        a: *mut f64,
        lda: *const i32,
        b: *mut f64,
        ldb: *const i32,
        info: *mut i32,
    );

    fn dgemm_(
        transa: *const c_char,
        transb: *const c_char,
        m: *const i32,
        n: *const i32,
        k: *const i32,
        alpha: *const f64,
        a: *const f64,
        lda: *const i32,
        b: *const f64,
        ldb: *const i32,
        beta: *const f64,
        c: *mut f64,
        ldc: *const i32,
    );
}

/// Eigendecomposition of a symmetric matrix. Returns `(eigenvalues,
/// eigenvectors)` with eigenvalues in ascending order and eigenvectors in
/// the corresponding columns.
///
/// Panics if the input is not square or LAPACK reports a failure to
/// converge (which does not happen for finite symmetric input).
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "sym_eigen requires a square matrix");
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let mut a = m.clone();
    let mut w = DVector::zeros(n);
    let ni = n as i32;
    let jobz = b'V' as c_char;
    let uplo = b'L' as c_char;
    let mut info: i32 = 0;

    // Workspace query.
    let mut work_query = [0.0f64];
    let mut iwork_query = [0i32];
    let neg1 = -1i32;
    unsafe {
        dsyevd_(
            &jobz,
            &uplo,
            &ni,
            a.as_mut_slice().as_mut_ptr(),
            &ni,
            w.as_mut_slice().as_mut_ptr(),
            work_query.as_mut_ptr(),
            &neg1,
            iwork_query.as_mut_ptr(),
            &neg1,
            &mut info,
        );
    }
    assert_eq!(info, 0, "dsyevd workspace query failed: info={info}");

    let lwork = work_query[0] as i32;
    let liwork = iwork_query[0];
    let mut work = vec![0.0f64; lwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    unsafe {
        dsyevd_(
            &jobz,
            &uplo,
            &ni,
            a.as_mut_slice().as_mut_ptr(),
            &ni,
            w.as_mut_slice().as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    assert_eq!(info, 0, "dsyevd failed: info={info}");
    (w, a)
}

/// Solve `A X = B` for symmetric positive-definite `A` via Cholesky.
/// Returns `None` if the factorization fails (matrix not PD).
pub fn chol_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    assert_eq!(n, b.nrows());
    let mut af = a.clone();
    let mut x = b.clone();
    let ni = n as i32;
    let nrhs = b.ncols() as i32;
    let uplo = b'L' as c_char;
    let mut info: i32 = 0;
    if n == 0 {
        return Some(x);
    }
    unsafe {
        dposv_(
            &uplo,
            &ni,
            &nrhs,
            af.as_mut_slice().as_mut_ptr(),
            &ni,
            x.as_mut_slice().as_mut_ptr(),
            &ni,
            &mut info,
        );
    }
    if info == 0 {
        Some(x)
    } else {
        None
    }
}

/// `A * B` through BLAS `dgemm`.
pub fn matmul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    gemm(a, false, b, false)
}

/// `op(A) * op(B)` where `op` is optional transposition.
pub fn gemm(a: &DMatrix<f64>, trans_a: bool, b: &DMatrix<f64>, trans_b: bool) -> DMatrix<f64> {
    let (m, ka) = if trans_a {
        (a.ncols(), a.nrows())
    } else {
        (a.nrows(), a.ncols())
    };
    let (kb, n) = if trans_b {
        (b.ncols(), b.nrows())
    } else {
        (b.nrows(), b.ncols())
    };
    assert_eq!(ka, kb, "inner dimensions must agree");
    let mut c = DMatrix::zeros(m, n);
    if m == 0 || n == 0 || ka == 0 {
        return c;
    }
    let (mi, ni, ki) = (m as i32, n as i32, ka as i32);
    let ta = if trans_a { b'T' } else { b'N' } as c_char;
    let tb = if trans_b { b'T' } else { b'N' } as c_char;
    let alpha = 1.0;
    let beta = 0.0;
    let lda = a.nrows() as i32;
    let ldb = b.nrows() as i32;
    unsafe {
        dgemm_(
            &ta,
            &tb,
            &mi,
            &ni,
            &ki,
            &alpha,
            a.as_slice().as_ptr(),
            &lda,
            b.as_slice().as_ptr(),
            &ldb,
            &beta,
            c.as_mut_slice().as_mut_ptr(),
            &mi,
        );
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn eigen_recovers_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let (w, v) = sym_eigen(&m);
        assert_abs_diff_eq!(w[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[2], 3.0, epsilon = 1e-12);
        let rec = &v * DMatrix::from_diagonal(&w) * v.transpose();
        assert!((rec - m).norm() < 1e-12);
    }

    #[test]
    fn chol_solve_matches_direct() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let x = chol_solve(&a, &b).unwrap();
        let r = &a * &x - &b;
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn chol_solve_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(chol_solve(&a, &b).is_none());
    }

    #[test]
    fn gemm_matches_nalgebra() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = DMatrix::from_row_slice(3, 2, &[7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        assert!((matmul(&a, &b) - &a * &b).norm() < 1e-12);
        assert!((gemm(&a, true, &a, false) - a.transpose() * &a).norm() < 1e-12);
    }
}
