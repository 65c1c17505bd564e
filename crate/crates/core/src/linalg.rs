//! Small dense linear-algebra helpers.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

/// Replaces `m` by `(m + mᵀ)/2`.
pub fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_sym_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    let eig = m.clone().symmetric_eigen();
    eig.eigenvalues.iter().copied().fold(T::max_value().unwrap(), |a, b| a.min(b))
}

/// Largest absolute entry.
pub fn max_abs<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
}

pub fn all_finite<T: Real>(m: &DMatrix<T>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// `diag(1,…,1,0,…,0)` with `d` leading ones.
pub fn ones_d<T: Real>(d: usize, n: usize) -> DMatrix<T> {
    DMatrix::from_fn(n, n, |i, j| if i == j && i < d { T::one() } else { T::zero() })
}

/// `diag(0,…,0,1,…,1)` with ones past index `d`.
pub fn ones_m<T: Real>(d: usize, n: usize) -> DMatrix<T> {
    DMatrix::from_fn(n, n, |i, j| if i == j && i >= d { T::one() } else { T::zero() })
}

/// Zeroes the first `d` entries.
pub fn mask_m<T: Real>(v: &DVector<T>, d: usize) -> DVector<T> {
    DVector::from_fn(v.len(), |i, _| if i >= d { v[i] } else { T::zero() })
}

/// Zeroes entries at and after index `d`.
pub fn mask_d<T: Real>(v: &DVector<T>, d: usize) -> DVector<T> {
    DVector::from_fn(v.len(), |i, _| if i < d { v[i] } else { T::zero() })
}

/// Row-major copy of a matrix.
pub fn to_row_major<T: Real>(m: &DMatrix<T>) -> Vec<T> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Square matrix from a row-major slice.
pub fn from_row_major<T: Real>(n: usize, data: &[T]) -> DMatrix<T> {
    DMatrix::from_row_slice(n, data.len() / n, data)
}

/// `M` restricted to its leading `d` rows, as `d × n`.
pub fn top_rows<T: Real>(m: &DMatrix<T>, d: usize) -> DMatrix<T> {
    m.rows(0, d).into_owned()
}

/// `y = M x` on row-major storage.
#[inline]
pub fn matvec<T: Real>(n: usize, m: &[T], x: &[T], y: &mut [T]) {
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let mut acc = T::zero();
        for j in 0..n {
            acc += row[j] * x[j];
        }
        y[i] = acc;
    }
}

/// `y = Mᵀ x` on row-major storage.
#[inline]
pub fn matvec_t<T: Real>(n: usize, m: &[T], x: &[T], y: &mut [T]) {
    for v in y.iter_mut().take(n) {
        *v = T::zero();
    }
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let xi = x[i];
        for j in 0..n {
            y[j] += row[j] * xi;
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `½ zᵀ M z + bᵀ z + c` on row-major storage.
#[inline]
pub fn quad_form<T: Real>(n: usize, m: &[T], b: &[T], c: T, z: &[T]) -> T {
    let mut acc = c;
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let mut r = T::zero();
        for j in 0..n {
            r += row[j] * z[j];
        }
        acc += z[i] * (T::lit(0.5) * r + b[i]);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrize_averages_off_diagonal() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        symmetrize(&mut m);
        assert_eq!(m[(0, 1)], 3.0);
        assert_eq!(m[(1, 0)], 3.0);
    }

    #[test]
    fn quad_form_matches_dense() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_vec(vec![0.1, -0.2]);
        let z = DVector::from_vec(vec![0.3, 0.7]);
        let dense: f64 = 0.5 * z.dot(&(&m * &z)) + b.dot(&z) + 0.4;
        let fast = quad_form(2, &to_row_major(&m), b.as_slice(), 0.4, z.as_slice());
        assert!((dense - fast).abs() < 1e-15);
    }
}
