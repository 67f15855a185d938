//! Safe matrix-multiply wrappers over the strided GEMM kernel.

use crate::scalar::Scalar;

/// `c[m×n] += alpha * a[m×k] · b[k×n]`, all row-major contiguous.
pub fn gemm_nn<T: Scalar>(m: usize, k: usize, n: usize, alpha: T, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    unsafe {
        T::gemm_raw(
            m, k, n, alpha,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c[m×n] += alpha * a[m×k] · bᵀ` where `b` is stored `[n×k]` row-major.
pub fn gemm_nt<T: Scalar>(m: usize, k: usize, n: usize, alpha: T, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    assert_eq!(c.len(), m * n);
    unsafe {
        T::gemm_raw(
            m, k, n, alpha,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c[m×n] += alpha * aᵀ · b` where `a` is stored `[k×m]` row-major.
pub fn gemm_tn<T: Scalar>(m: usize, k: usize, n: usize, alpha: T, a: &[T], b: &[T], beta: T, c: &mut [T]) {
    assert_eq!(a.len(), k * m);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    unsafe {
        T::gemm_raw(
            m, k, n, alpha,
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nn_matches_manual() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0f64; 4];
        gemm_nn(2, 3, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn nt_matches_nn_with_transposed_operand() {
        // b stored [n×k]; compare a·bᵀ against manual.
        let a = [1.0, 0.0, 0.0, 1.0]; // 2x2 identity
        let b = [1.0, 2.0, 3.0, 4.0]; // interpreted as bᵀ of [[1,3],[2,4]]
        let mut c = [0.0f64; 4];
        gemm_nt(2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn tn_matches_nn_with_transposed_operand() {
        let a = [1.0, 2.0, 3.0, 4.0]; // stored [k×m] = [[1,2],[3,4]], aᵀ = [[1,3],[2,4]]
        let b = [1.0, 0.0, 0.0, 1.0];
        let mut c = [0.0f64; 4];
        gemm_tn(2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [1.0, 3.0, 2.0, 4.0]);
    }
}
