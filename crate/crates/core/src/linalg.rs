//! Complex dense linear-algebra aliases and small helpers shared by the
//! numeric modules.

use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64 as C64;

pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// `exp(j * phase)`.
#[inline]
pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

/// `u v^H`.
pub fn outer(u: &CVec, v: &CVec) -> CMat {
    u * v.adjoint()
}

/// `0.5 (M + M^H)`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Largest entrywise deviation from Hermitian symmetry, relative to the
/// largest entry.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let diff = (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    diff / scale
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. Returns `(values, vectors)` with vectors as columns.
pub fn hermitian_eig_desc(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    hermitian_part(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `Re tr(A B)` for Hermitian `A`, `B`: the real inner product used for
/// every trace-linear functional.
pub fn trace_inner(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let n = a.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for i in 0..n {
            let x = a[(i, j)];
            let y = b[(j, i)];
            acc += x.re * y.re - x.im * y.im;
        }
    }
    acc
}

/// `g^H w`, with `g` stored as a column vector.
#[inline]
pub fn inner(g: &CVec, w: &CVec) -> C64 {
    g.iter().zip(w.iter()).map(|(a, b)| a.conj() * b).sum()
}

/// Vector from a slice of `(re, im)` pairs; mostly for tests and fixtures.
pub fn cvec(entries: &[(f64, f64)]) -> CVec {
    CVec::from_iterator(entries.len(), entries.iter().map(|&(r, i)| C64::new(r, i)))
}
