//! Thin bridge to nalgebra for the symmetric eigendecompositions used by
//! whitening and decorrelation.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
///
/// Column `i` of the returned vector matrix is the eigenvector of the `i`-th
/// eigenvalue; each eigenvector's sign is fixed so that its largest-magnitude
/// entry is positive.
pub(crate) fn symmetric_eigen_desc(a: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let eig = SymmetricEigen::new(m);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .total_cmp(&eig.eigenvalues[i])
            .then(i.cmp(&j))
    });

    let values = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for row in 0..n {
            vectors[[row, dst]] = sign * col[row];
        }
    }
    (values, vectors)
}

/// Population covariance (denominator = row count) of the columns of an
/// already-centered matrix.
pub(crate) fn covariance_of_centered(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows() as f64;
    x.t().dot(&x) / n
}

/// Population covariance of the columns of `x`.
pub(crate) fn covariance(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = &x - &mean;
    covariance_of_centered(centered.view())
}

pub(crate) fn max_abs_deviation_from_identity(a: ArrayView2<'_, f64>) -> f64 {
    a.indexed_iter()
        .map(|((i, j), &v)| (v - if i == j { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max)
}
