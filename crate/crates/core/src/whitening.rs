//! Centering, optional PCA reduction and whitening.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg;

/// Eigenvalues at or below this are treated as degenerate directions.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;

/// Affine map `x -> (x - mean) · kᵀ` whose output has identity covariance on
/// the fitting data.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    pub mean: Array1<f64>,
    /// C×D; row `i` is the `i`-th principal direction divided by `sqrt(λ_i)`.
    pub k: Array2<f64>,
    /// Retained covariance eigenvalues, descending.
    pub explained_variance: Array1<f64>,
}

impl WhiteningModel {
    pub fn n_components(&self) -> usize {
        self.k.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.k.ncols()
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "whitening expects {} columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let centered = &x - &self.mean;
        Ok(centered.dot(&self.k.t()))
    }
}

/// Fits the whitening transform on `x` (rows are samples), keeping at most
/// `n_components` principal directions.
///
/// Covariance uses denominator V. Directions whose eigenvalue does not exceed
/// [`EIGENVALUE_FLOOR`] are dropped, so the retained count can be smaller than
/// requested.
pub fn fit_whitening(x: ArrayView2<'_, f64>, n_components: usize) -> Result<WhiteningModel> {
    let (v, d) = x.dim();
    if n_components < 1 {
        return Err(Error::InvalidArgument("n_components must be at least 1".into()));
    }
    if n_components > d {
        return Err(Error::InvalidArgument(format!(
            "n_components = {n_components} exceeds the input dimension {d}"
        )));
    }
    if v < 2 {
        return Err(Error::InvalidArgument(format!(
            "whitening needs at least 2 samples, got {v}"
        )));
    }

    let mean = x.mean_axis(Axis(0)).expect("v >= 2");
    let centered = &x - &mean;
    let cov = linalg::covariance_of_centered(centered.view());
    let (eigenvalues, eigenvectors) = linalg::symmetric_eigen_desc(cov.view());

    let c = eigenvalues
        .iter()
        .take(n_components)
        .take_while(|&&l| l > EIGENVALUE_FLOOR)
        .count();
    if c == 0 {
        return Err(Error::InvalidArgument(
            "input has no variance above the eigenvalue floor".into(),
        ));
    }
    if c < n_components {
        log::warn!(
            "whitening: requested {n_components} components but only {c} eigenvalues exceed {EIGENVALUE_FLOOR:e}; reducing to {c}"
        );
    }

    let mut k = Array2::zeros((c, d));
    for i in 0..c {
        let scale = eigenvalues[i].sqrt().recip();
        k.row_mut(i)
            .assign(&eigenvectors.column(i).mapv(|e| e * scale));
    }

    Ok(WhiteningModel {
        mean,
        k,
        explained_variance: eigenvalues.slice(ndarray::s![..c]).to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
    }

    /// Cyclic Jacobi eigenvalue iteration; test-only oracle independent of
    /// the nalgebra path.
    fn jacobi_eigenvalues(mut a: Array2<f64>) -> Vec<f64> {
        let n = a.nrows();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[[i, j]] * a[[i, j]])
                .sum();
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[[p, q]].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[[k, p]];
                        let akq = a[[k, q]];
                        a[[k, p]] = c * akp - s * akq;
                        a[[k, q]] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[[p, k]];
                        let aqk = a[[q, k]];
                        a[[p, k]] = c * apk - s * aqk;
                        a[[q, k]] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut vals: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
        vals.sort_by(|x, y| y.total_cmp(x));
        vals
    }

    #[test]
    fn already_white_data_stays_white() {
        // Exactly white 4-point design in 2D.
        let x = array![[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]];
        let w = fit_whitening(x.view(), 2).unwrap();
        let out = w.transform(x.view()).unwrap();
        let cov = linalg::covariance(out.view());
        assert!(linalg::max_abs_deviation_from_identity(cov.view()) < 1e-6);
    }

    #[test]
    fn rank_one_input_drops_a_component() {
        let x = array![[1.0, 1.0], [-1.0, -1.0]];
        let w = fit_whitening(x.view(), 2).unwrap();
        assert_eq!(w.n_components(), 1);
        let out = w.transform(x.view()).unwrap();
        assert!((out[[0, 0]].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn explained_variance_matches_independent_eigenvalues() {
        let z = gaussian(1000, 8, 11);
        let scales = Array1::from_iter((1..=8).map(|i| (i as f64).sqrt()));
        let x = &z * &scales;
        let w = fit_whitening(x.view(), 8).unwrap();

        let oracle = jacobi_eigenvalues(linalg::covariance(x.view()));
        for (got, want) in w.explained_variance.iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-9 * want.max(1.0), "{got} vs {want}");
        }
        // Population eigenvalues are 8, 7, ..., 1; sampling error at n=1000 is a few percent.
        for (i, got) in w.explained_variance.iter().enumerate() {
            let target = (8 - i) as f64;
            assert!((got - target).abs() < 0.25 * target, "{got} vs {target}");
        }
    }

    #[test]
    fn whitened_covariance_is_identity() {
        let z = gaussian(2000, 6, 3);
        let mix = gaussian(6, 6, 4);
        let x = z.dot(&mix) + 5.0;
        let w = fit_whitening(x.view(), 6).unwrap();
        let out = w.transform(x.view()).unwrap();
        let cov = linalg::covariance(out.view());
        assert!(linalg::max_abs_deviation_from_identity(cov.view()) < 1e-6);
        let mean = out.mean_axis(Axis(0)).unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-9));
    }

    #[test]
    fn reduction_keeps_leading_directions() {
        let z = gaussian(500, 5, 9);
        let w = fit_whitening(z.view(), 3).unwrap();
        assert_eq!(w.k.dim(), (3, 5));
        let out = w.transform(z.view()).unwrap();
        assert_eq!(out.ncols(), 3);
    }

    #[test]
    fn deterministic() {
        let z = gaussian(300, 4, 1);
        let a = fit_whitening(z.view(), 4).unwrap();
        let b = fit_whitening(z.view(), 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn argument_errors() {
        let z = gaussian(10, 3, 1);
        assert!(fit_whitening(z.view(), 0).is_err());
        assert!(fit_whitening(z.view(), 4).is_err());
        assert!(fit_whitening(z.slice(ndarray::s![..1, ..]), 2).is_err());
        let w = fit_whitening(z.view(), 2).unwrap();
        assert!(matches!(w.transform(gaussian(2, 2, 0).view()), Err(Error::Shape(_))));
    }

    #[test]
    fn transform_is_affine() {
        let z = gaussian(200, 3, 5);
        let w = fit_whitening(z.view(), 3).unwrap();
        let a = z.slice(ndarray::s![..10, ..]).to_owned();
        let b = z.slice(ndarray::s![10..20, ..]).to_owned();
        let alpha = 0.3;
        let mixed = &a * alpha + &b * (1.0 - alpha);
        let lhs = w.transform(mixed.view()).unwrap();
        let rhs = w.transform(a.view()).unwrap() * alpha + w.transform(b.view()).unwrap() * (1.0 - alpha);
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}
