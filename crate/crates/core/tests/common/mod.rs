//! Synthetic fixtures with known ground truth.
#![allow(dead_code)]

pub mod process;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Exp, StandardNormal};
use wordica::{EmbeddingMatrix, Vocabulary};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Unit-variance Laplace samples (scale 1/sqrt(2)).
pub fn laplace(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let exp = Exp::new(1.0).unwrap();
    let scale = 0.5f64.sqrt();
    Array2::from_shape_fn((rows, cols), |_| {
        let e: f64 = exp.sample(rng);
        if rng.random_bool(0.5) {
            scale * e
        } else {
            -scale * e
        }
    })
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Random square mixing matrix whose condition number stays below `max_cond`.
pub fn well_conditioned_mixing(n: usize, max_cond: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    loop {
        let m = gaussian(n, n, rng) + Array2::<f64>::eye(n) * 2.0;
        let sv = nalgebra::DMatrix::from_fn(n, n, |i, j| m[[i, j]]).singular_values();
        let cond = sv.max() / sv.min();
        if cond < max_cond {
            return m;
        }
    }
}

/// Rows of the result are orthonormal (Gram-Schmidt on Gaussian draws).
pub fn orthonormal_rows(k: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    assert!(k <= d);
    let mut basis: Array2<f64> = Array2::zeros((k, d));
    let mut i = 0;
    while i < k {
        let mut v: Array1<f64> = Array1::from_shape_fn(d, |_| StandardNormal.sample(rng));
        for j in 0..i {
            let proj = v.dot(&basis.row(j));
            v.scaled_add(-proj, &basis.row(j));
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            basis.row_mut(i).assign(&(v / norm));
            i += 1;
        }
    }
    basis
}

pub fn pearson(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// |Pearson| between every recovered column and every true column.
pub fn abs_corr_matrix(recovered: &Array2<f64>, truth: &Array2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((recovered.ncols(), truth.ncols()), |(i, j)| {
        pearson(recovered.column(i), truth.column(j)).abs()
    })
}

/// Best permutation score by brute force: max over permutations of the
/// minimum matched |corr|. Only for small k.
pub fn best_permutation_min(corr: &Array2<f64>) -> (Vec<usize>, f64) {
    let k = corr.nrows();
    assert_eq!(k, corr.ncols());
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (perm.clone(), f64::NEG_INFINITY);
    permute(&mut perm, 0, corr, &mut best);
    best
}

fn permute(perm: &mut Vec<usize>, start: usize, corr: &Array2<f64>, best: &mut (Vec<usize>, f64)) {
    if start == perm.len() {
        let score = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| corr[[i, j]])
            .fold(f64::INFINITY, f64::min);
        if score > best.1 {
            *best = (perm.clone(), score);
        }
        return;
    }
    for i in start..perm.len() {
        perm.swap(start, i);
        permute(perm, start + 1, corr, best);
        perm.swap(start, i);
    }
}

/// Share of words carrying 1, 2 and 3 features.
pub const COUNT_WEIGHTS: [f64; 3] = [0.7, 0.2, 0.1];

/// Vocabulary whose words are sums of 1 to 3 of `n_features` orthonormal
/// feature vectors plus isotropic Gaussian noise.
pub struct FeatureFixture {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingMatrix,
    /// V×F 0/1 matrix: which features each word carries.
    pub membership: Array2<f64>,
}

impl FeatureFixture {
    pub fn build(n_words: usize, n_features: usize, dim: usize, noise: f64, seed: u64) -> Self {
        Self::build_weighted(n_words, n_features, dim, noise, seed, &COUNT_WEIGHTS)
    }

    /// `count_weights[k]` is the relative frequency of words with k+1 features.
    pub fn build_weighted(
        n_words: usize,
        n_features: usize,
        dim: usize,
        noise: f64,
        seed: u64,
        count_weights: &[f64],
    ) -> Self {
        let mut rng = rng(seed);
        let counts = WeightedIndex::new(count_weights).unwrap();
        let features = orthonormal_rows(n_features, dim, &mut rng);
        let mut membership = Array2::zeros((n_words, n_features));
        let mut data = Array2::zeros((n_words, dim));
        for w in 0..n_words {
            let count = counts.sample(&mut rng) + 1;
            let mut chosen: Vec<usize> = Vec::with_capacity(count);
            while chosen.len() < count {
                let f = rng.random_range(0..n_features);
                if !chosen.contains(&f) {
                    chosen.push(f);
                }
            }
            let mut row = data.row_mut(w);
            for &f in &chosen {
                membership[[w, f]] = 1.0;
                row += &features.row(f);
            }
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += noise * z;
            }
        }
        let vocab = Vocabulary::new((0..n_words).map(|i| format!("word{i:05}")).collect()).unwrap();
        FeatureFixture {
            vocab,
            embeddings: EmbeddingMatrix::from_f64(&data).unwrap(),
            membership,
        }
    }

    pub fn has_all(&self, word: usize, features: &[usize]) -> bool {
        features.iter().all(|&f| self.membership[[word, f]] == 1.0)
    }

    /// For each feature, the source column with the highest |corr| to its
    /// membership indicator, and that correlation.
    pub fn feature_components(&self, s: &Array2<f64>) -> Vec<(usize, f64)> {
        let corr = abs_corr_matrix(&self.membership, s);
        corr.rows()
            .into_iter()
            .map(|row| {
                let (best, value) = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
                (best, value)
            })
            .collect()
    }
}
