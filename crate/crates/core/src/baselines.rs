//! Baseline direction scorers: kernel deviance (KCDC), entropy-based IGCI, and additive-noise
//! regression with an HSIC residual test. Every scorer returns a per-direction score where smaller
//! means more plausible, so they plug into the same decision rule as KIIM.

use nalgebra::{DMatrix, DVector};

use crate::config::{IgciReference, KiimConfig};
use crate::dataset::{standardize, Direction, PairedDataset};
use crate::embeddings::{quadratic_form, ConditionalEmbedder};
use crate::error::{Error, Result};
use crate::kernels::{center_columns, gram, GramMatrix, KernelSpec};
use crate::linalg::{add_diagonal, Factorization};

const KCDC_MIN: usize = 5;
const IGCI_MIN: usize = 10;
const ANM_MIN: usize = 10;
const HSIC_MIN: usize = 5;

fn require(n: usize, min: usize, what: &str) -> Result<()> {
    if n < min {
        Err(Error::argument(format!("{what} needs at least {min} samples, got {n}")))
    } else {
        Ok(())
    }
}

/// Population variance of the conditional embedding norms `sqrt(max(0, a_iᵀ K_y a_i))`.
pub fn kcdc_from_grams(kx: &GramMatrix, ky: &GramMatrix, lambda: f64) -> Result<f64> {
    if kx.n() != ky.n() {
        return Err(Error::argument("Gram dimensions differ"));
    }
    let a = ConditionalEmbedder::new(kx, lambda)?.coeff_matrix()?;
    let norms = a
        .column_iter()
        .map(|col| Ok(quadratic_form(&col.into_owned(), ky.values())?.max(0.0).sqrt()))
        .collect::<Result<Vec<f64>>>()?;
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    Ok(norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
}

/// KCDC score of `direction` on standardized data.
pub fn kcdc_score(dataset: &PairedDataset, direction: Direction, config: &KiimConfig) -> Result<f64> {
    require(dataset.len(), KCDC_MIN, "kcdc")?;
    let (cause, effect) = dataset.oriented(direction);
    let kx = gram(&config.baselines.kcdc_input_kernel, &standardize(cause)?)?;
    let ky = gram(&config.baselines.kcdc_output_kernel, &standardize(effect)?)?;
    kcdc_from_grams(&kx, &ky, config.lambda)
}

/// `ψ(n) − ψ(1)`, which for integer `n` is the harmonic number `H_{n−1}`.
fn digamma_gap(n: usize) -> f64 {
    (1..n).map(|k| 1.0 / k as f64).sum()
}

/// 1-spacing differential entropy estimate. Zero spacings are skipped.
pub fn spacing_entropy(values: &[f64]) -> Result<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n < 2 || v[0] == v[n - 1] {
        return Err(Error::argument("entropy needs at least two distinct values"));
    }
    let log_sum: f64 = v
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .map(f64::ln)
        .sum();
    Ok(digamma_gap(n) + log_sum / (n - 1) as f64)
}

fn normalize(values: &[f64], reference: IgciReference) -> Result<Vec<f64>> {
    match reference {
        IgciReference::Gaussian => standardize(values),
        IgciReference::Uniform => {
            let (lo, hi) = values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if !(hi > lo) {
                return Err(Error::argument("entropy needs at least two distinct values"));
            }
            Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
        }
    }
}

/// `Ĥ(effect) − Ĥ(cause)` after normalizing both to `reference`.
pub fn igci_score(dataset: &PairedDataset, direction: Direction, reference: IgciReference) -> Result<f64> {
    require(dataset.len(), IGCI_MIN, "igci")?;
    let (cause, effect) = dataset.oriented(direction);
    let hc = spacing_entropy(&normalize(cause, reference)?)?;
    let he = spacing_entropy(&normalize(effect, reference)?)?;
    Ok(he - hc)
}

/// Biased HSIC estimate `(1/n²) tr(K_u H K_v H)`, clamped at zero.
pub fn hsic(u: &[f64], v: &[f64], kernel: &KernelSpec) -> Result<f64> {
    hsic_with(u, v, kernel, kernel)
}

/// HSIC with separate kernels for the two arguments.
pub fn hsic_with(u: &[f64], v: &[f64], kernel_u: &KernelSpec, kernel_v: &KernelSpec) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::argument(format!("hsic length mismatch ({} vs {})", u.len(), v.len())));
    }
    require(u.len(), HSIC_MIN, "hsic")?;
    let n = u.len();
    let mut ku = gram(kernel_u, u)?.into_values();
    let mut kv = gram(kernel_v, v)?.into_values();
    center_columns(&mut ku);
    center_columns(&mut kv);
    // tr(A B) = Σ_ij A_ij B_ji
    let tr = ku.component_mul(&kv.transpose()).sum();
    Ok((tr / (n * n) as f64).max(0.0))
}

/// Fitted values of kernel ridge regression of `target` on `inputs`.
pub fn kernel_ridge_fit(inputs: &[f64], target: &[f64], kernel: &KernelSpec, ridge: f64) -> Result<Vec<f64>> {
    if inputs.len() != target.len() {
        return Err(Error::argument("regression inputs and targets differ in length"));
    }
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::argument(format!("ridge must be positive, got {ridge}")));
    }
    let k = gram(kernel, inputs)?.into_values();
    let n = inputs.len();
    let system = Factorization::new(add_diagonal(k.clone(), ridge))?;
    let y = DMatrix::from_column_slice(n, 1, target);
    let alpha = system.solve(&y)?;
    let fitted: DVector<f64> = (k * alpha).column(0).into_owned();
    Ok(fitted.iter().copied().collect())
}

/// HSIC between the cause and the regression residual of effect on cause.
///
/// The residual kernel's bandwidth is resolved on the standardized effect, so residuals that are
/// small relative to the effect drive the score towards zero.
pub fn anm_score(dataset: &PairedDataset, direction: Direction, config: &KiimConfig) -> Result<f64> {
    require(dataset.len(), ANM_MIN, "anm")?;
    let (cause, effect) = dataset.oriented(direction);
    let cause = standardize(cause)?;
    let effect = standardize(effect)?;
    let kernel = &config.baselines.anm_kernel;
    let fitted = kernel_ridge_fit(&cause, &effect, kernel, config.baselines.anm_ridge)?;
    let residual: Vec<f64> = effect.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let residual_kernel = kernel.resolve(&effect)?;
    hsic_with(&cause, &residual, kernel, &residual_kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn kcdc_hand_example() {
        let kx = GramMatrix::from_matrix(DMatrix::identity(2, 2), KernelSpec::Log).unwrap();
        let ky = GramMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]), KernelSpec::Log)
            .unwrap();
        let s = kcdc_from_grams(&kx, &ky, 1e-12).unwrap();
        assert!((s - 0.25).abs() < 1e-9);
    }

    #[test]
    fn kcdc_constant_norms_give_zero() {
        let k = GramMatrix::from_matrix(DMatrix::from_element(6, 6, 1.0), KernelSpec::Log).unwrap();
        assert!(kcdc_from_grams(&k, &k, 1e-3).unwrap().abs() < 1e-20);
    }

    #[test]
    fn kcdc_is_nonnegative_on_data() {
        let xs = normals(40, 1);
        let ys: Vec<f64> = xs.iter().map(|x| x * x * x + x).collect();
        let d = PairedDataset::new(xs, ys).unwrap();
        let cfg = KiimConfig::default();
        for dir in [Direction::XtoY, Direction::YtoX] {
            assert!(kcdc_score(&d, dir, &cfg).unwrap() >= 0.0);
        }
    }

    #[test]
    fn harmonic_matches_digamma_difference() {
        // ψ(5) − ψ(1) = 1 + 1/2 + 1/3 + 1/4
        assert!((digamma_gap(5) - 25.0 / 12.0).abs() < 1e-15);
        assert_eq!(digamma_gap(1), 0.0);
    }

    #[test]
    fn spacing_entropy_hand_value() {
        // Spacings 1, 1, 2 (a zero spacing is skipped): H_4 + (ln 1 + ln 1 + ln 2)/4.
        let h = spacing_entropy(&[0.0, 1.0, 1.0, 2.0, 4.0]).unwrap();
        assert!((h - (25.0 / 12.0 + 2f64.ln() / 4.0)).abs() < 1e-14);
        assert!(spacing_entropy(&[3.0; 12]).is_err());
    }

    #[test]
    fn igci_identity_ties() {
        let xs = normals(30, 2);
        let d = PairedDataset::new(xs.clone(), xs).unwrap();
        for r in [IgciReference::Gaussian, IgciReference::Uniform] {
            assert_eq!(igci_score(&d, Direction::XtoY, r).unwrap(), 0.0);
            assert_eq!(igci_score(&d, Direction::YtoX, r).unwrap(), 0.0);
        }
    }

    #[test]
    fn igci_constant_column_is_argument_error() {
        let d = PairedDataset::new(normals(12, 3), vec![1.0; 12]).unwrap();
        assert!(matches!(
            igci_score(&d, Direction::XtoY, IgciReference::Uniform),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn hsic_basics() {
        let k = KernelSpec::rbf_median();
        let u: Vec<f64> = (1..=20).map(f64::from).collect();
        assert!(hsic(&u, &[2.5; 20], &k).unwrap() < 1e-12);
        assert!(hsic(&u, &u, &k).unwrap() > 0.0);
        assert!(hsic(&u, &u[..19], &k).is_err());
    }

    #[test]
    fn anm_noiseless_cubic_prefers_true_direction() {
        let xs: Vec<f64> = (0..50).map(|i| -2.0 + 4.0 * i as f64 / 49.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x * x + x).collect();
        let d = PairedDataset::new(xs, ys).unwrap();
        let cfg = KiimConfig::default();
        let fwd = anm_score(&d, Direction::XtoY, &cfg).unwrap();
        let bwd = anm_score(&d, Direction::YtoX, &cfg).unwrap();
        assert!(fwd < 1e-4, "{fwd}");
        assert!(fwd < bwd);
    }

    #[test]
    fn anm_score_shrinks_with_noise() {
        let cfg = KiimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..80).map(|_| StandardNormal.sample(&mut rng)).collect();
        let eps: Vec<f64> = (0..80).map(|_| rng.random_range(0.0..1.0)).collect();
        let scores: Vec<f64> = [1.0, 0.1, 0.001]
            .iter()
            .map(|s| {
                let ys = xs.iter().zip(&eps).map(|(x, e)| x * x * x + x + s * e).collect();
                anm_score(&PairedDataset::new(xs.clone(), ys).unwrap(), Direction::XtoY, &cfg).unwrap()
            })
            .collect();
        assert!(scores[0] > scores[1] && scores[1] > scores[2], "{scores:?}");
    }

    #[test]
    fn kernel_ridge_matches_dense_inverse() {
        let xs = normals(12, 5);
        let ys = normals(12, 6);
        let k = KernelSpec::rbf(0.8);
        let fitted = kernel_ridge_fit(&xs, &ys, &k, 1e-2).unwrap();
        let kg = gram(&k, &xs).unwrap().into_values();
        let inv = (kg.clone() + DMatrix::identity(12, 12) * 1e-2).try_inverse().unwrap();
        let oracle = kg * inv * DVector::from_vec(ys);
        for (a, b) in fitted.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn hsic_is_symmetric(seed in any::<u64>(), n in 5usize..25) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let k = KernelSpec::rbf_median();
            let a = hsic(&u, &v, &k).unwrap();
            let b = hsic(&v, &u, &k).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn hsic_is_permutation_invariant(seed in any::<u64>(), n in 5usize..25) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let v: Vec<f64> = u.iter().map(|x| x.sin() + rng.random_range(-0.1..0.1)).collect();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let pu: Vec<f64> = idx.iter().map(|&i| u[i]).collect();
            let pv: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
            let k = KernelSpec::rbf_median();
            prop_assert!((hsic(&u, &v, &k).unwrap() - hsic(&pu, &pv, &k).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn igci_uniform_is_affine_invariant(seed in any::<u64>(), a in 0.1f64..10.0, b in -5.0f64..5.0,
                                             c in -10.0f64..-0.1, e in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + rng.random_range(0.0..0.5)).collect();
            let d = PairedDataset::new(xs.clone(), ys.clone()).unwrap();
            let t = PairedDataset::new(
                xs.iter().map(|x| a * x + b).collect(),
                ys.iter().map(|y| c * y + e).collect(),
            ).unwrap();
            let r = IgciReference::Uniform;
            let diff = |d: &PairedDataset| {
                igci_score(d, Direction::XtoY, r).unwrap() - igci_score(d, Direction::YtoX, r).unwrap()
            };
            prop_assert!((diff(&d) - diff(&t)).abs() <= 1e-9);
        }
    }
}
