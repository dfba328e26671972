//! Conditional mean embeddings represented by their coefficient vectors.
//!
//! An embedding `μ = Ψ a` is never materialized; only `a` is stored, and RKHS quantities are
//! evaluated through the output Gram matrix (`‖μ‖² = aᵀ K_y a`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{center_columns, GramMatrix};
use crate::linalg::{add_diagonal, Factorization};

/// Which sample, if any, the embedding is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Conditioning {
    Index(usize),
    Free,
}

/// Coefficients `a` of an embedding `μ = Ψ a`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCoefficients {
    pub weights: DVector<f64>,
    pub conditioning: Conditioning,
    pub lambda: f64,
}

/// Empirical estimator used for the conditional embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingForm {
    /// `a_i = (K_x + λI)⁻¹ k_{x_i}`, the form the invariance matrix is derived from.
    Alg1,
    /// `a_i = (H K_x + λnI)⁻¹ k_{x_i}`.
    Eq5,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::argument(format!("lambda must be positive, got {lambda}")))
    }
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i < n {
        Ok(())
    } else {
        Err(Error::argument(format!("index {i} out of range for n = {n}")))
    }
}

/// The factorized system `K_x + λI`, shared by every conditioning index.
pub struct ConditionalEmbedder<'a> {
    kx: &'a GramMatrix,
    lambda: f64,
    system: Factorization,
}

impl<'a> ConditionalEmbedder<'a> {
    pub fn new(kx: &'a GramMatrix, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        let system = Factorization::new(add_diagonal(kx.values().clone(), lambda))?;
        Ok(ConditionalEmbedder { kx, lambda, system })
    }

    /// `a_i = (K_x + λI)⁻¹ k_{x_i}`.
    pub fn coeffs(&self, i: usize) -> Result<EmbeddingCoefficients> {
        check_index(i, self.kx.n())?;
        let rhs = DMatrix::from_column_slice(self.kx.n(), 1, self.kx.values().column(i).as_slice());
        let a = self.system.solve(&rhs)?;
        Ok(EmbeddingCoefficients {
            weights: a.column(0).into_owned(),
            conditioning: Conditioning::Index(i),
            lambda: self.lambda,
        })
    }

    /// All coefficient vectors at once, as the columns of `(K_x + λI)⁻¹ K_x`.
    pub fn coeff_matrix(&self) -> Result<DMatrix<f64>> {
        self.system.solve(self.kx.values())
    }

    /// `(K_x + λI)⁻¹ B` for an arbitrary right-hand side.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.system.solve(rhs)
    }
}

/// `a_i = (K_x + λI)⁻¹ k_{x_i}` for a single index.
pub fn cond_embedding_coeffs(kx: &GramMatrix, i: usize, lambda: f64) -> Result<EmbeddingCoefficients> {
    ConditionalEmbedder::new(kx, lambda)?.coeffs(i)
}

/// Coefficient matrix for the alternative estimator: columns of `(H K_x + λnI)⁻¹ K_x`.
pub fn eq5_coeff_matrix(kx: &GramMatrix, lambda: f64) -> Result<DMatrix<f64>> {
    check_lambda(lambda)?;
    let n = kx.n();
    let mut hk = kx.values().clone();
    center_columns(&mut hk);
    let system = Factorization::new(add_diagonal(hk, lambda * n as f64))?;
    system.solve(kx.values())
}

/// `aᵀ K_y a`. May be negative when `K_y` is indefinite; callers decide how to clamp.
pub fn embedding_sq_norm(a: &EmbeddingCoefficients, ky: &GramMatrix) -> Result<f64> {
    quadratic_form(&a.weights, ky.values())
}

pub(crate) fn quadratic_form(a: &DVector<f64>, k: &DMatrix<f64>) -> Result<f64> {
    if a.len() != k.nrows() {
        return Err(Error::argument(format!(
            "coefficient length {} does not match Gram dimension {}",
            a.len(),
            k.nrows()
        )));
    }
    Ok(a.dot(&(k * a)))
}

/// Reference density `u` used for importance reweighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceKind {
    /// Uniform on `[min(xs), max(xs)]`.
    UniformOnRange,
}

/// Importance weights `r_i = u(x_i) / p̂(x_i)`, clipped from above at an empirical quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReweightingVector {
    weights: Vec<f64>,
    pub reference: ReferenceKind,
    pub clip_quantile: f64,
}

impl ReweightingVector {
    /// Wraps explicit weights (e.g. the identity reweighting). Entries must be finite and positive.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::argument("reweighting entries must be finite and positive"));
        }
        Ok(ReweightingVector {
            weights,
            reference: ReferenceKind::UniformOnRange,
            clip_quantile: 1.0,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Silverman's rule of thumb, `1.06·s·n^(-1/5)` with the sample standard deviation `s`.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    1.06 * var.sqrt() * n.powf(-0.2)
}

/// Gaussian kernel density estimate of `xs`, evaluated at each sample.
pub fn gaussian_kde_at_samples(xs: &[f64], bandwidth: f64) -> Vec<f64> {
    let n = xs.len() as f64;
    let norm = 1.0 / (n * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    xs.iter()
        .map(|&x| {
            xs.iter()
                .map(|&xj| {
                    let z = (x - xj) / bandwidth;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Importance weights of a uniform reference against a Gaussian KDE of `xs`.
///
/// Weights above the `clip_quantile` empirical quantile are clamped to it; `clip_quantile = 1`
/// disables clipping.
pub fn reweighting_vector(
    xs: &[f64],
    reference: ReferenceKind,
    clip_quantile: f64,
) -> Result<ReweightingVector> {
    if xs.len() < 5 {
        return Err(Error::argument("reweighting needs at least 5 samples"));
    }
    if !(clip_quantile > 0.5 && clip_quantile <= 1.0) {
        return Err(Error::argument(format!(
            "clip quantile must lie in (0.5, 1], got {clip_quantile}"
        )));
    }
    let (min, max) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if !(max > min) {
        return Err(Error::argument("reweighting needs a nondegenerate sample range"));
    }
    let density = match reference {
        ReferenceKind::UniformOnRange => 1.0 / (max - min),
    };
    let kde = gaussian_kde_at_samples(xs, silverman_bandwidth(xs));
    let mut weights: Vec<f64> = kde.iter().map(|p| density / p).collect();
    if clip_quantile < 1.0 {
        let cap = empirical_quantile(&weights, clip_quantile);
        for w in &mut weights {
            *w = w.min(cap);
        }
    }
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::numerical("density ratio is not finite and positive", None));
    }
    Ok(ReweightingVector {
        weights,
        reference,
        clip_quantile,
    })
}

/// Columns `a_i = H R^½ (H R^½ K_x R^½ H + λnI)⁻¹ R^½ H k_{x_i}` for every `i`.
pub fn reweighted_coeff_matrix(
    kx: &GramMatrix,
    r: &ReweightingVector,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    check_lambda(lambda)?;
    let n = kx.n();
    if r.len() != n {
        return Err(Error::argument(format!(
            "reweighting length {} does not match Gram dimension {n}",
            r.len()
        )));
    }
    let sqrt_r: Vec<f64> = r.weights().iter().map(|w| w.sqrt()).collect();
    // S = R^½ H: row-scaled centering. S K_x Sᵀ = R^½ H K_x H R^½.
    // The system matrix is H (R^½ K_x R^½) H, so build it as H·(D K D)·H.
    let scaled = DMatrix::from_fn(n, n, |i, j| sqrt_r[i] * kx.values()[(i, j)] * sqrt_r[j]);
    let mut system = scaled;
    center_columns(&mut system);
    crate::kernels::center_rows(&mut system);
    let system = Factorization::new(add_diagonal(system, lambda * n as f64))?;

    // RHS: R^½ H K_x.
    let mut rhs = kx.values().clone();
    center_columns(&mut rhs);
    for (i, mut row) in rhs.row_iter_mut().enumerate() {
        row *= sqrt_r[i];
    }
    let mut a = system.solve(&rhs)?;
    // Leading H R^½.
    for (i, mut row) in a.row_iter_mut().enumerate() {
        row *= sqrt_r[i];
    }
    center_columns(&mut a);
    Ok(a)
}

/// Single-index form of [`reweighted_coeff_matrix`].
pub fn reweighted_cond_coeffs(
    kx: &GramMatrix,
    r: &ReweightingVector,
    i: usize,
    lambda: f64,
) -> Result<EmbeddingCoefficients> {
    check_index(i, kx.n())?;
    let a = reweighted_coeff_matrix(kx, r, lambda)?;
    Ok(EmbeddingCoefficients {
        weights: a.column(i).into_owned(),
        conditioning: Conditioning::Index(i),
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{centering_matrix, gram, KernelSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gram_of(m: DMatrix<f64>) -> GramMatrix {
        GramMatrix::from_matrix(m, KernelSpec::Log).unwrap()
    }

    fn random_psd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let m = &b * b.transpose();
        (&m + m.transpose()) * 0.5
    }

    /// Dense evaluation of the reweighted formula with explicit inverses, left to right.
    fn reweighted_oracle(kx: &DMatrix<f64>, r: &[f64], lambda: f64) -> DMatrix<f64> {
        let n = kx.nrows();
        let h = centering_matrix(n).unwrap();
        let rh = DMatrix::from_diagonal(&DVector::from_iterator(n, r.iter().map(|v| v.sqrt())));
        let inner = &h * &rh * kx * &rh * &h + DMatrix::identity(n, n) * (lambda * n as f64);
        let inv = inner.try_inverse().unwrap();
        &h * &rh * inv * &rh * &h * kx
    }

    #[test]
    fn scalar_and_diagonal_solves() {
        let kx = gram_of(DMatrix::from_element(1, 1, 1.0));
        let a = cond_embedding_coeffs(&kx, 0, 1e-3).unwrap();
        assert!((a.weights[0] - 1.0 / 1.001).abs() < 1e-15);

        let kx = gram_of(DMatrix::identity(2, 2));
        let a = cond_embedding_coeffs(&kx, 1, 1e-3).unwrap();
        assert_eq!(a.weights[0], 0.0);
        assert!((a.weights[1] - 1.0 / 1.001).abs() < 1e-15);
        assert_eq!(a.conditioning, Conditioning::Index(1));
    }

    #[test]
    fn argument_errors() {
        let kx = gram_of(DMatrix::identity(2, 2));
        assert!(matches!(cond_embedding_coeffs(&kx, 2, 1e-3), Err(Error::Argument(_))));
        assert!(matches!(cond_embedding_coeffs(&kx, 0, 0.0), Err(Error::Argument(_))));
        let a = EmbeddingCoefficients {
            weights: DVector::from_vec(vec![1.0, 0.0, 0.0]),
            conditioning: Conditioning::Free,
            lambda: 1.0,
        };
        assert!(matches!(embedding_sq_norm(&a, &kx), Err(Error::Argument(_))));
    }

    #[test]
    fn heavy_regularization_shrinks_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let kx = gram(&KernelSpec::composite(crate::kernels::CompositeMode::Product), &xs).unwrap();
        let n = kx.n() as f64;
        let mut last = f64::INFINITY;
        for lambda in [1e-1, 1e1, 1e3, 1e6, 1e9] {
            let a = cond_embedding_coeffs(&kx, 3, lambda).unwrap();
            let norm = a.weights.norm();
            assert!(norm < last);
            last = norm;
        }
        let k_norm = kx.values().column(3).norm();
        assert!(last <= 1e-6 * k_norm * n);
    }

    #[test]
    fn sq_norm_examples() {
        let ky = gram_of(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]));
        let e1 = EmbeddingCoefficients {
            weights: DVector::from_vec(vec![1.0, 0.0]),
            conditioning: Conditioning::Free,
            lambda: 1.0,
        };
        assert_eq!(embedding_sq_norm(&e1, &ky).unwrap(), 1.0);
        let ones = gram_of(DMatrix::from_element(2, 2, 1.0));
        let half = EmbeddingCoefficients {
            weights: DVector::from_vec(vec![0.5, 0.5]),
            ..e1.clone()
        };
        assert_eq!(embedding_sq_norm(&half, &ones).unwrap(), 1.0);
        let zero = EmbeddingCoefficients {
            weights: DVector::zeros(2),
            ..e1
        };
        assert_eq!(embedding_sq_norm(&zero, &ky).unwrap(), 0.0);
    }

    #[test]
    fn reweighting_uniform_grid_is_near_one() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let r = reweighting_vector(&xs, ReferenceKind::UniformOnRange, 0.95).unwrap();
        assert!(r.weights().iter().all(|w| (0.5..=2.0).contains(w)));
        let r = reweighting_vector(&xs, ReferenceKind::UniformOnRange, 1.0).unwrap();
        assert!(r.weights().iter().all(|w| (0.5..=2.0).contains(w)));
    }

    #[test]
    fn reweighting_errors_and_clipping() {
        assert!(reweighting_vector(&[1.0; 10], ReferenceKind::UniformOnRange, 0.95).is_err());
        assert!(reweighting_vector(&[1.0, 2.0, 3.0], ReferenceKind::UniformOnRange, 0.95).is_err());
        assert!(reweighting_vector(&[1.0, 2.0, 3.0, 4.0, 5.0], ReferenceKind::UniformOnRange, 0.4).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..200).map(|_| rng.random::<f64>().powi(3)).collect();
        let raw = reweighting_vector(&xs, ReferenceKind::UniformOnRange, 1.0).unwrap();
        let clipped = reweighting_vector(&xs, ReferenceKind::UniformOnRange, 0.95).unwrap();
        let cap = empirical_quantile(raw.weights(), 0.95);
        for (r, c) in raw.weights().iter().zip(clipped.weights()) {
            assert_eq!(*c, r.min(cap));
        }
        assert!(raw.weights().iter().any(|w| *w > cap));
    }

    #[test]
    fn reweighted_single_sample_is_zero() {
        let kx = gram_of(DMatrix::from_element(1, 1, 1.0));
        let r = ReweightingVector::from_weights(vec![2.0]).unwrap();
        let a = reweighted_cond_coeffs(&kx, &r, 0, 1e-3).unwrap();
        assert_eq!(a.weights[0], 0.0);
    }

    #[test]
    fn reweighted_identity_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let kx = random_psd(6, &mut rng);
        let r = ReweightingVector::from_weights(vec![1.0; 6]).unwrap();
        let a = reweighted_coeff_matrix(&gram_of(kx.clone()), &r, 1e-3).unwrap();
        let oracle = reweighted_oracle(&kx, &[1.0; 6], 1e-3);
        assert!((a - oracle).amax() < 1e-10);
    }

    #[test]
    fn reweighted_matches_dense_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let kx = random_psd(5, &mut rng);
            let r: Vec<f64> = (0..5).map(|_| rng.random_range(0.2..3.0)).collect();
            let rv = ReweightingVector::from_weights(r.clone()).unwrap();
            let a = reweighted_coeff_matrix(&gram_of(kx.clone()), &rv, 1e-2).unwrap();
            let oracle = reweighted_oracle(&kx, &r, 1e-2);
            let scale = oracle.amax().max(1.0);
            assert!((&a - &oracle).amax() <= 1e-10 * scale, "{}", (&a - &oracle).amax());
            for col in a.column_iter() {
                assert!(col.sum().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn eq5_matches_dense_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let kx = random_psd(7, &mut rng);
        let a = eq5_coeff_matrix(&gram_of(kx.clone()), 1e-3).unwrap();
        let h = centering_matrix(7).unwrap();
        let oracle = (&h * &kx + DMatrix::identity(7, 7) * (7.0 * 1e-3)).try_inverse().unwrap() * &kx;
        assert!((a - oracle).amax() < 1e-9);
    }

    proptest! {
        #[test]
        fn ridge_residual_is_small(xs in prop::collection::vec(-3.0f64..3.0, 3..30), lambda in 1e-4f64..1.0) {
            let kx = gram(&KernelSpec::rbf_median(), &xs).unwrap();
            let emb = ConditionalEmbedder::new(&kx, lambda).unwrap();
            for i in 0..kx.n() {
                let a = emb.coeffs(i).unwrap();
                let k = kx.values().column(i);
                let residual = add_diagonal(kx.values().clone(), lambda) * &a.weights - k;
                prop_assert!(residual.norm() <= 1e-8 * k.norm());
            }
        }

        #[test]
        fn psd_quadratic_form_nonnegative(seed in any::<u64>(), n in 2usize..15) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ky = random_psd(n, &mut rng);
            let a = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            let q = quadratic_form(&a, &ky).unwrap();
            prop_assert!(q >= -1e-10 * ky.trace());
        }
    }
}
