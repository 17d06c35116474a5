//! Symmetric (parallel) FastICA on whitened data.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding_io::{EmbeddingMatrix, Vocabulary};
use crate::error::{Error, Result};
use crate::linalg;
use crate::whitening::{fit_whitening, WhiteningModel};

/// Largest entrywise deviation of the input covariance from identity that
/// [`fit_ica`] accepts as "whitened".
pub const WHITENESS_TOLERANCE: f64 = 0.01;

/// Smallest accepted ratio of smallest to largest eigenvalue of `w·wᵀ`.
const MIN_DECORRELATION_CONDITION: f64 = 1e-12;

/// Nonlinearity used as the derivative of the negentropy contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contrast {
    #[default]
    Logcosh,
    Exp,
    Cube,
}

impl Contrast {
    #[inline]
    pub fn g(self, u: f64) -> f64 {
        match self {
            Contrast::Logcosh => u.tanh(),
            Contrast::Exp => u * (-0.5 * u * u).exp(),
            Contrast::Cube => u * u * u,
        }
    }

    #[inline]
    pub fn g_prime(self, u: f64) -> f64 {
        match self {
            Contrast::Logcosh => {
                let t = u.tanh();
                1.0 - t * t
            }
            Contrast::Exp => (1.0 - u * u) * (-0.5 * u * u).exp(),
            Contrast::Cube => 3.0 * u * u,
        }
    }

    /// The contrast function itself, whose derivative is [`Contrast::g`].
    #[inline]
    pub fn big_g(self, u: f64) -> f64 {
        match self {
            Contrast::Logcosh => {
                let a = u.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
            Contrast::Exp => -(-0.5 * u * u).exp(),
            Contrast::Cube => 0.25 * u * u * u * u,
        }
    }

    /// `E[G(ν)]` for a standard normal `ν`.
    pub fn gaussian_reference(self) -> f64 {
        match self {
            Contrast::Logcosh => 0.374_567_207_491_288_9,
            Contrast::Exp => -std::f64::consts::FRAC_1_SQRT_2,
            Contrast::Cube => 0.75,
        }
    }
}

impl fmt::Display for Contrast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Contrast::Logcosh => "logcosh",
            Contrast::Exp => "exp",
            Contrast::Cube => "cube",
        })
    }
}

impl FromStr for Contrast {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logcosh" => Ok(Contrast::Logcosh),
            "exp" => Ok(Contrast::Exp),
            "cube" => Ok(Contrast::Cube),
            other => Err(Error::InvalidArgument(format!(
                "unknown contrast {other:?} (expected logcosh, exp or cube)"
            ))),
        }
    }
}

/// Evaluates `g` and `g'` elementwise.
pub fn contrast_eval(u: ArrayView1<'_, f64>, contrast: Contrast) -> (Array1<f64>, Array1<f64>) {
    (u.mapv(|x| contrast.g(x)), u.mapv(|x| contrast.g_prime(x)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcaConfig {
    pub n_components: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub contrast: Contrast,
    /// Number of random initializations; the run with the largest total
    /// negentropy approximation is kept.
    pub restarts: usize,
}

impl IcaConfig {
    pub fn new(n_components: usize) -> Self {
        IcaConfig {
            n_components,
            seed: 0,
            tolerance: 1e-4,
            max_iter: 200,
            contrast: Contrast::Logcosh,
            restarts: 1,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn contrast(mut self, contrast: Contrast) -> Self {
        self.contrast = contrast;
        self
    }

    pub fn restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_components < 1 {
            return Err(Error::InvalidArgument("n_components must be at least 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if self.restarts < 1 {
            return Err(Error::InvalidArgument("restarts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of the fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IcaRun {
    /// C×C unmixing matrix with orthonormal rows.
    pub w: Array2<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    /// Sum over components of `(E[G(y)] − E[G(ν)])²`.
    pub negentropy: f64,
}

/// A fitted decomposition of an embedding matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct IcaModel {
    pub vocab: Vocabulary,
    pub whitening: WhiteningModel,
    /// C×C unmixing matrix in whitened space.
    pub w: Array2<f64>,
    /// V×C word-component values.
    pub s: Array2<f64>,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub contrast: Contrast,
    pub restarts: usize,
    pub iterations_run: usize,
    pub converged: bool,
    /// Per-component polarity applied by sign normalization; `None` until
    /// the model has been normalized.
    pub sign_flips: Option<Vec<i8>>,
}

impl IcaModel {
    /// Whitens `embeddings` to `config.n_components` dimensions and runs
    /// FastICA on the result.
    pub fn fit(vocab: Vocabulary, embeddings: &EmbeddingMatrix, config: &IcaConfig) -> Result<Self> {
        config.validate()?;
        if vocab.len() != embeddings.v() {
            return Err(Error::Shape(format!(
                "vocabulary has {} tokens but the matrix has {} rows",
                vocab.len(),
                embeddings.v()
            )));
        }
        let x = embeddings.to_f64();
        let whitening = fit_whitening(x.view(), config.n_components)?;
        let x_white = whitening.transform(x.view())?;
        let mut config = config.clone();
        config.n_components = whitening.n_components();
        let run = fit_ica(x_white.view(), &config)?;
        let s = compute_sources(run.w.view(), x_white.view())?;
        Ok(IcaModel {
            vocab,
            whitening,
            w: run.w,
            s,
            seed: config.seed,
            tolerance: config.tolerance,
            max_iter: config.max_iter,
            contrast: config.contrast,
            restarts: config.restarts,
            iterations_run: run.iterations_run,
            converged: run.converged,
            sign_flips: None,
        })
    }

    pub fn n_components(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_sign_normalized(&self) -> bool {
        self.sign_flips.is_some()
    }

    /// Full map from centered embedding space to sources: `w · k` (C×D).
    pub fn unmixing_in_input_space(&self) -> Array2<f64> {
        self.w.dot(&self.whitening.k)
    }
}

/// Returns `(w·wᵀ)^(-1/2) · w`, whose rows are orthonormal and span the same
/// space as the rows of `w`.
pub fn symmetric_decorrelate(w: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if w.nrows() != w.ncols() || w.nrows() == 0 {
        return Err(Error::Shape(format!(
            "unmixing matrix must be square and non-empty, got {:?}",
            w.dim()
        )));
    }
    let gram = w.dot(&w.t());
    let (values, vectors) = linalg::symmetric_eigen_desc(gram.view());
    let largest = values[0];
    let smallest = values[values.len() - 1];
    if !(largest.is_finite() && largest > 0.0) || smallest <= largest * MIN_DECORRELATION_CONDITION {
        return Err(Error::Decorrelation(format!(
            "w·wᵀ is singular or ill-conditioned (eigenvalues {smallest:e} .. {largest:e})"
        )));
    }
    let inv_sqrt = values.mapv(|l| l.sqrt().recip());
    let scaled = &vectors * &inv_sqrt;
    Ok(scaled.dot(&vectors.t()).dot(&w))
}

/// Parallel FastICA fixed-point iteration on whitened samples (rows of
/// `x_white`).
pub fn fit_ica(x_white: ArrayView2<'_, f64>, config: &IcaConfig) -> Result<IcaRun> {
    config.validate()?;
    let (v, c) = x_white.dim();
    if c != config.n_components {
        return Err(Error::Shape(format!(
            "config asks for {} components but the whitened input has {c} columns",
            config.n_components
        )));
    }
    if v < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {v}")));
    }
    let deviation = linalg::max_abs_deviation_from_identity(linalg::covariance(x_white).view());
    if deviation.is_nan() || deviation > WHITENESS_TOLERANCE {
        return Err(Error::NotWhitened(format!(
            "sample covariance deviates from identity by {deviation:.4} (limit {WHITENESS_TOLERANCE})"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<IcaRun> = None;
    for restart in 0..config.restarts {
        let init = Array2::from_shape_fn((c, c), |_| StandardNormal.sample(&mut rng));
        let run = iterate(x_white, init, config)?;
        if config.restarts > 1 {
            log::debug!("restart {restart}: negentropy {:.6}", run.negentropy);
        }
        if best.as_ref().is_none_or(|b| run.negentropy > b.negentropy) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn negentropy(x_white: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>, contrast: Contrast) -> f64 {
    let n = x_white.nrows() as f64;
    let reference = contrast.gaussian_reference();
    x_white
        .dot(&w.t())
        .columns()
        .into_iter()
        .map(|y| (y.iter().map(|&u| contrast.big_g(u)).sum::<f64>() / n - reference).powi(2))
        .sum()
}

fn iterate(x_white: ArrayView2<'_, f64>, init: Array2<f64>, config: &IcaConfig) -> Result<IcaRun> {
    let (v, c) = x_white.dim();
    let mut w = symmetric_decorrelate(init.view())?;

    let n = v as f64;
    let mut iterations_run = 0;
    let mut converged = false;
    for iteration in 1..=config.max_iter {
        let mut projected = x_white.dot(&w.t());
        let mut g_prime_mean = Array1::<f64>::zeros(c);
        for (j, mut column) in projected.axis_iter_mut(Axis(1)).enumerate() {
            let mut acc = 0.0;
            for u in column.iter_mut() {
                acc += config.contrast.g_prime(*u);
                *u = config.contrast.g(*u);
            }
            g_prime_mean[j] = acc / n;
        }
        let mut update = projected.t().dot(&x_white) / n;
        Zip::from(update.rows_mut())
            .and(w.rows())
            .and(&g_prime_mean)
            .for_each(|mut row, old, &gp| row.scaled_add(-gp, &old));
        let w_new = symmetric_decorrelate(update.view())?;

        let change = w_new
            .rows()
            .into_iter()
            .zip(w.rows())
            .map(|(a, b)| (1.0 - a.dot(&b).abs()).abs())
            .fold(0.0, f64::max);
        w = w_new;
        iterations_run = iteration;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "FastICA did not converge within {} iterations (seed {})",
            config.max_iter,
            config.seed
        );
    }
    Ok(IcaRun {
        negentropy: negentropy(x_white, w.view(), config.contrast),
        w,
        iterations_run,
        converged,
    })
}

/// Source matrix `x_white · wᵀ`.
pub fn compute_sources(w: ArrayView2<'_, f64>, x_white: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if w.ncols() != x_white.ncols() {
        return Err(Error::Shape(format!(
            "unmixing matrix has {} columns but data has {}",
            w.ncols(),
            x_white.ncols()
        )));
    }
    Ok(x_white.dot(&w.t()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::Uniform;

    fn max_orthonormality_error(w: &Array2<f64>) -> f64 {
        linalg::max_abs_deviation_from_identity(w.dot(&w.t()).view())
    }

    #[test]
    fn contrast_values() {
        let (g, gp) = contrast_eval(array![0.0].view(), Contrast::Logcosh);
        assert_eq!((g[0], gp[0]), (0.0, 1.0));
        let (g, gp) = contrast_eval(array![2.0].view(), Contrast::Cube);
        assert_eq!((g[0], gp[0]), (8.0, 12.0));
        let (g, gp) = contrast_eval(array![1.0].view(), Contrast::Exp);
        assert!((g[0] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((g[0] - 0.60653).abs() < 1e-5);
        assert_eq!(gp[0], 0.0);
    }

    #[test]
    fn contrast_derivative_matches_finite_difference() {
        let h = 1e-6;
        for contrast in [Contrast::Logcosh, Contrast::Exp, Contrast::Cube] {
            for &u in &[-2.3, -0.7, 0.0, 0.4, 1.9] {
                let fd = (contrast.g(u + h) - contrast.g(u - h)) / (2.0 * h);
                assert!((fd - contrast.g_prime(u)).abs() < 1e-6, "{contrast} at {u}");
            }
        }
    }

    #[test]
    fn contrast_parses() {
        assert_eq!("exp".parse::<Contrast>().unwrap(), Contrast::Exp);
        assert!("tanh".parse::<Contrast>().is_err());
    }

    #[test]
    fn decorrelate_identity_and_rotation() {
        let eye = Array2::<f64>::eye(3);
        let out = symmetric_decorrelate(eye.view()).unwrap();
        for (a, b) in out.iter().zip(eye.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
        let t: f64 = 0.7;
        let q = array![[t.cos(), -t.sin()], [t.sin(), t.cos()]];
        let out = symmetric_decorrelate(q.view()).unwrap();
        for (a, b) in out.iter().zip(q.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn decorrelate_diagonal_gives_identity() {
        // (w wᵀ)^(-1/2) w = diag(1/2, 1/3) diag(2, 3) = I
        let w = array![[2.0, 0.0], [0.0, 3.0]];
        let out = symmetric_decorrelate(w.view()).unwrap();
        for (a, b) in out.iter().zip(Array2::<f64>::eye(2).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn decorrelate_preserves_row_span() {
        let w = array![[1.0, 2.0, 0.5], [0.3, -1.0, 2.0], [1.5, 0.2, -0.7]];
        let out = symmetric_decorrelate(w.view()).unwrap();
        assert!(max_orthonormality_error(&out) < 1e-12);
        // out = M w with M symmetric positive definite, so w = M⁻¹ out and
        // out·outᵀ = I implies M = (w wᵀ)^(-1/2); check M² (w wᵀ) = I.
        let m = out.dot(&linalg_inverse3(&w));
        let check = m.dot(&m).dot(&w.dot(&w.t()));
        assert!(linalg::max_abs_deviation_from_identity(check.view()) < 1e-10);
    }

    fn linalg_inverse3(a: &Array2<f64>) -> Array2<f64> {
        // adjugate / determinant
        let m = |i: usize, j: usize| a[[i, j]];
        let det = m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1))
            - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0))
            + m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
        let mut inv = Array2::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                inv[[i, j]] = (m(r0, c0) * m(r1, c1) - m(r0, c1) * m(r1, c0)) / det;
            }
        }
        inv
    }

    #[test]
    fn decorrelate_rejects_singular() {
        let w = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(matches!(symmetric_decorrelate(w.view()), Err(Error::Decorrelation(_))));
    }

    #[test]
    fn compute_sources_examples() {
        let x = array![[1.0, 0.0]];
        assert_eq!(compute_sources(Array2::eye(2).view(), x.view()).unwrap(), x);
        let swap = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(compute_sources(swap.view(), x.view()).unwrap(), array![[0.0, 1.0]]);
        assert!(compute_sources(Array2::eye(3).view(), x.view()).is_err());
    }

    fn whiten(x: &Array2<f64>) -> Array2<f64> {
        let w = fit_whitening(x.view(), x.ncols()).unwrap();
        w.transform(x.view()).unwrap()
    }

    fn abs_pearson(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
        let ma = a.mean().unwrap();
        let mb = b.mean().unwrap();
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b.iter()) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        (sab / (saa * sbb).sqrt()).abs()
    }

    #[test]
    fn recovers_two_uniform_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bound = 3f64.sqrt();
        let uniform = Uniform::new(-bound, bound).unwrap();
        let sources = Array2::from_shape_fn((50_000, 2), |_| uniform.sample(&mut rng));
        let mixing = array![[1.0, 1.0], [0.0, 2.0]];
        let x = sources.dot(&mixing.t());
        let xw = whiten(&x);
        let run = fit_ica(xw.view(), &IcaConfig::new(2).seed(0)).unwrap();
        assert!(max_orthonormality_error(&run.w) < 1e-8);
        let s = compute_sources(run.w.view(), xw.view()).unwrap();
        for recovered in s.columns() {
            let best = sources
                .columns()
                .into_iter()
                .map(|t| abs_pearson(recovered, t))
                .fold(0.0, f64::max);
            assert!(best > 0.99, "best |corr| {best}");
        }
    }

    #[test]
    fn gaussian_input_terminates_without_nan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((2000, 3), |_| StandardNormal.sample(&mut rng));
        let xw = whiten(&x);
        let run = fit_ica(xw.view(), &IcaConfig::new(3).max_iter(50)).unwrap();
        assert!(run.iterations_run <= 50);
        assert!(run.w.iter().all(|v| v.is_finite()));
        assert!(max_orthonormality_error(&run.w) < 1e-8);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let exp = rand_distr::Exp::new(1.0).unwrap();
        let x = Array2::from_shape_fn((3000, 3), |_| {
            let e: f64 = exp.sample(&mut rng);
            if rng.random_bool(0.5) {
                e
            } else {
                -e
            }
        });
        let xw = whiten(&x);
        let config = IcaConfig::new(3).seed(42);
        let a = fit_ica(xw.view(), &config).unwrap();
        let b = fit_ica(xw.view(), &config).unwrap();
        assert_eq!(a, b);
        let c = fit_ica(xw.view(), &config.clone().seed(43)).unwrap();
        assert_ne!(a.w, c.w);
    }

    #[test]
    fn sources_have_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let uniform = Uniform::new(-1.0, 1.0).unwrap();
        let x = Array2::from_shape_fn((5000, 4), |_| uniform.sample(&mut rng));
        let xw = whiten(&x);
        let run = fit_ica(xw.view(), &IcaConfig::new(4)).unwrap();
        let s = compute_sources(run.w.view(), xw.view()).unwrap();
        let cov = linalg::covariance(s.view());
        assert!(linalg::max_abs_deviation_from_identity(cov.view()) < 1e-6);
    }

    #[test]
    fn rejects_unwhitened_input_and_bad_config() {
        let x = array![[0.0, 0.0], [10.0, 0.0], [0.0, 1.0], [3.0, 3.0]];
        assert!(matches!(fit_ica(x.view(), &IcaConfig::new(2)), Err(Error::NotWhitened(_))));
        let xw = whiten(&x);
        assert!(matches!(fit_ica(xw.view(), &IcaConfig::new(3)), Err(Error::Shape(_))));
        assert!(fit_ica(xw.view(), &IcaConfig::new(2).tolerance(0.0)).is_err());
        assert!(fit_ica(xw.view(), &IcaConfig::new(2).max_iter(0)).is_err());
        assert!(fit_ica(xw.view(), &IcaConfig::new(2).restarts(0)).is_err());
    }

    #[test]
    fn big_g_is_antiderivative_of_g() {
        let h = 1e-6;
        for contrast in [Contrast::Logcosh, Contrast::Exp, Contrast::Cube] {
            for &u in &[-25.0, -2.3, -0.7, 0.0, 0.4, 1.9, 30.0] {
                let fd = (contrast.big_g(u + h) - contrast.big_g(u - h)) / (2.0 * h);
                let scale = 1.0 + contrast.big_g(u).abs();
                assert!((fd - contrast.g(u)).abs() < 1e-6 * scale, "{contrast} at {u}");
            }
        }
        assert!((Contrast::Logcosh.big_g(1.3) - 1.3f64.cosh().ln()).abs() < 1e-14);
    }

    #[test]
    fn gaussian_reference_matches_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z: Vec<f64> = (0..400_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        for contrast in [Contrast::Logcosh, Contrast::Exp, Contrast::Cube] {
            let mean = z.iter().map(|&u| contrast.big_g(u)).sum::<f64>() / z.len() as f64;
            assert!((mean - contrast.gaussian_reference()).abs() < 0.01, "{contrast}: {mean}");
        }
    }

    #[test]
    fn restarts_keep_the_most_non_gaussian_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let uniform = Uniform::new(-1.0, 1.0).unwrap();
        let x = Array2::from_shape_fn((4000, 4), |_| uniform.sample(&mut rng));
        let xw = whiten(&x);
        let base = IcaConfig::new(4).seed(9);
        let single = fit_ica(xw.view(), &base).unwrap();
        assert_eq!(single, fit_ica(xw.view(), &base.clone().restarts(1)).unwrap());
        let many = fit_ica(xw.view(), &base.clone().restarts(5)).unwrap();
        assert!(many.negentropy >= single.negentropy);
        assert!(max_orthonormality_error(&many.w) < 1e-8);
        assert_eq!(many, fit_ica(xw.view(), &base.restarts(5)).unwrap());
    }
}
