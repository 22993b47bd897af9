//! Dense complex linear algebra helpers shared by the channel model and the
//! optimizers.

use nalgebra::{DMatrix, DVector};
pub use nalgebra::Complex;

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// `v v^H`.
pub fn outer(v: &CVec) -> CMat {
    v * v.adjoint()
}

/// Column-major stacking of the columns of `m`.
pub fn vectorize(m: &CMat) -> CVec {
    CVec::from_iterator(m.len(), m.iter().copied())
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn frobenius_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn hermitian_defect(m: &CMat) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// decreasing order; column `i` of the returned matrix pairs with value `i`.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    hermitian_eigen(m).0
}

/// Largest eigenvalue and a unit eigenvector for it.
pub fn leading_eigenpair(m: &CMat) -> (f64, CVec) {
    let (values, vectors) = hermitian_eigen(m);
    if values.is_empty() {
        return (0.0, CVec::zeros(0));
    }
    (values[0], vectors.column(0).into_owned())
}

pub fn min_eigenvalue(m: &CMat) -> f64 {
    hermitian_eigenvalues(m).last().copied().unwrap_or(0.0)
}

/// Nuclear norm of a Hermitian matrix (sum of absolute eigenvalues).
pub fn nuclear_norm(m: &CMat) -> f64 {
    hermitian_eigenvalues(m).iter().map(|v| v.abs()).sum()
}

/// Spectral norm of a Hermitian matrix (largest absolute eigenvalue).
pub fn spectral_norm(m: &CMat) -> f64 {
    hermitian_eigenvalues(m)
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `Re Tr(A B)`.
pub fn re_trace_product(a: &CMat, b: &CMat) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

/// PSD factor `F` with `F F^H ≈ X`, keeping eigen-directions whose value
/// exceeds `rel_cutoff · λ_max`. Discarded directions only shrink `X` in the
/// Loewner order.
pub fn psd_factor(m: &CMat, rel_cutoff: f64) -> CMat {
    let (values, vectors) = hermitian_eigen(m);
    let n = m.nrows();
    let top = values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return CMat::zeros(n, 0);
    }
    let kept: Vec<usize> = (0..values.len())
        .filter(|&i| values[i] > rel_cutoff * top)
        .collect();
    let mut f = CMat::zeros(n, kept.len());
    for (col, &i) in kept.iter().enumerate() {
        f.set_column(col, &(vectors.column(i) * C64::from(values[i].sqrt())));
    }
    f
}

pub fn cvec(values: &[C64]) -> CVec {
    CVec::from_column_slice(values)
}

pub fn real_matrix(m: &DMatrix<f64>) -> CMat {
    m.map(C64::from)
}
