//! Numerical witnesses for two facts about embedding norms.
//!
//! 1. Under a stationary kernel the empirical mean embedding of a sample set and of its negation
//!    have the same norm.
//! 2. For a density written in a finite eigenbasis, `p ∝ φᵀα`, a second coefficient vector `β`
//!    with the same normalization and the same embedding norm can be constructed by moving the
//!    first two coefficients along a line–ellipse intersection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSpec};

/// Squared embedding norms of `S` and `−S` and their absolute difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegationGap {
    pub norm_sq_p: f64,
    pub norm_sq_q: f64,
    pub gap: f64,
}

fn mean_gram_sum(spec: &KernelSpec, samples: &[f64]) -> Result<f64> {
    let n = samples.len() as f64;
    Ok(gram(spec, samples)?.values().sum() / (n * n))
}

/// Compares `(1/n²) Σ_ij k(s_i, s_j)` on `samples` and on their negation.
pub fn verify_lemma1(samples: &[f64], spec: &KernelSpec) -> Result<NegationGap> {
    if samples.is_empty() {
        return Err(Error::argument("need at least one sample"));
    }
    let negated: Vec<f64> = samples.iter().map(|s| -s).collect();
    let p = mean_gram_sum(spec, samples)?;
    let q = mean_gram_sum(spec, &negated)?;
    Ok(NegationGap {
        norm_sq_p: p,
        norm_sq_q: q,
        gap: (p - q).abs(),
    })
}

/// Same comparison for an arbitrary kernel function.
pub fn verify_lemma1_with(samples: &[f64], kernel: impl Fn(f64, f64) -> f64) -> NegationGap {
    let n = samples.len().max(1) as f64;
    let sum = |s: &[f64]| s.iter().map(|&a| s.iter().map(|&b| kernel(a, b)).sum::<f64>()).sum::<f64>() / (n * n);
    let negated: Vec<f64> = samples.iter().map(|s| -s).collect();
    let p = sum(samples);
    let q = sum(&negated);
    NegationGap {
        norm_sq_p: p,
        norm_sq_q: q,
        gap: (p - q).abs(),
    }
}

/// A density `p(x) = φ(x)ᵀα / αᵀθ` over an eigenbasis with eigenvalues `λ` and integrals `θ`.
///
/// Pointwise nonnegativity is not enforced; only the coefficient algebra is modeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteBasisDensity {
    alpha: Vec<f64>,
    lambda: Vec<f64>,
    theta: Vec<f64>,
}

impl FiniteBasisDensity {
    pub fn new(alpha: Vec<f64>, lambda: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        let m = alpha.len();
        if lambda.len() != m || theta.len() != m {
            return Err(Error::argument("alpha, lambda and theta must have equal length"));
        }
        if alpha.iter().chain(&theta).any(|v| !v.is_finite()) {
            return Err(Error::argument("coefficients must be finite"));
        }
        if lambda.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::argument("basis eigenvalues must be positive"));
        }
        let d = FiniteBasisDensity { alpha, lambda, theta };
        if d.normalization() == 0.0 {
            return Err(Error::argument("normalization αᵀθ must be nonzero"));
        }
        Ok(d)
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// `αᵀθ`.
    pub fn normalization(&self) -> f64 {
        self.alpha.iter().zip(&self.theta).map(|(a, t)| a * t).sum()
    }

    /// `Σ λ_i² α_i² / (αᵀθ)²`.
    pub fn embedding_sq_norm(&self) -> f64 {
        let z = self.normalization();
        self.alpha
            .iter()
            .zip(&self.lambda)
            .map(|(a, l)| (l * a).powi(2))
            .sum::<f64>()
            / (z * z)
    }
}

/// Second intersection of `θ₁β₁ + θ₂β₂ = C₁` with `λ₁²β₁² + λ₂²β₂² = C₂²`; the other
/// coefficients are copied.
///
/// Parametrizing `β₁ = (C₂/λ₁) sin φ`, `β₂ = (C₂/λ₂) cos φ` turns the line into
/// `sin(φ + ω) = C₁ / (C₂ s)` with `s = sqrt(θ₁²/λ₁² + θ₂²/λ₂²)`. Of the two roots, the one farther
/// from `α` is returned. A ratio of magnitude `≥ 1 − 1e-12` means the line is tangent and the
/// roots coincide.
pub fn construct_equal_norm_density(p: &FiniteBasisDensity) -> Result<FiniteBasisDensity> {
    if p.alpha.len() < 2 {
        return Err(Error::argument("need at least two basis functions"));
    }
    let (a1, a2) = (p.alpha[0], p.alpha[1]);
    let (l1, l2) = (p.lambda[0], p.lambda[1]);
    let (t1, t2) = (p.theta[0], p.theta[1]);
    let c1 = t1 * a1 + t2 * a2;
    let c2 = ((l1 * a1).powi(2) + (l2 * a2).powi(2)).sqrt();
    let s = ((t1 / l1).powi(2) + (t2 / l2).powi(2)).sqrt();
    if c2 == 0.0 || s == 0.0 {
        return Err(Error::Tangency { ratio: 1.0 });
    }
    let ratio = c1 / (c2 * s);
    if ratio.abs() >= 1.0 - 1e-12 {
        return Err(Error::Tangency { ratio });
    }
    let omega = (t2 / (l2 * s)).atan2(t1 / (l1 * s));
    let base = ratio.asin();
    let candidate = |phi: f64| (c2 / l1 * phi.sin(), c2 / l2 * phi.cos());
    let b_first = candidate(base - omega);
    let b_second = candidate(std::f64::consts::PI - base - omega);
    let dist = |(b1, b2): (f64, f64)| (b1 - a1).hypot(b2 - a2);
    let (b1, b2) = if dist(b_first) >= dist(b_second) {
        b_first
    } else {
        b_second
    };
    let mut beta = p.alpha.clone();
    beta[0] = b1;
    beta[1] = b2;
    FiniteBasisDensity::new(beta, p.lambda.clone(), p.theta.clone())
}

/// Aggregate of a seeded sweep over random densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub draws: usize,
    /// Constructions whose output differs from the input by more than `1e-8`.
    pub distinct: usize,
    pub tangencies: usize,
    pub max_line_error: f64,
    pub max_ellipse_error: f64,
    pub max_norm_gap: f64,
    pub max_normalization_gap: f64,
}

/// Draws `draws` random densities with 2–6 basis functions and applies the construction to each.
pub fn equal_norm_sweep(seed: u64, draws: usize) -> SweepSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SweepSummary {
        draws,
        distinct: 0,
        tangencies: 0,
        max_line_error: 0.0,
        max_ellipse_error: 0.0,
        max_norm_gap: 0.0,
        max_normalization_gap: 0.0,
    };
    for _ in 0..draws {
        let p = random_density(&mut rng);
        match construct_equal_norm_density(&p) {
            Ok(q) => {
                let (a, b) = (p.alpha(), q.alpha());
                let (l, t) = (p.lambda(), p.theta());
                let line = (t[0] * b[0] + t[1] * b[1] - (t[0] * a[0] + t[1] * a[1])).abs();
                let ellipse = ((l[0] * b[0]).powi(2) + (l[1] * b[1]).powi(2)
                    - (l[0] * a[0]).powi(2)
                    - (l[1] * a[1]).powi(2))
                .abs();
                out.max_line_error = out.max_line_error.max(line);
                out.max_ellipse_error = out.max_ellipse_error.max(ellipse);
                out.max_norm_gap = out.max_norm_gap.max((p.embedding_sq_norm() - q.embedding_sq_norm()).abs());
                out.max_normalization_gap =
                    out.max_normalization_gap.max((p.normalization() - q.normalization()).abs());
                let moved = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                if moved > 1e-8 {
                    out.distinct += 1;
                }
            }
            Err(_) => out.tangencies += 1,
        }
    }
    out
}

fn random_density(rng: &mut ChaCha8Rng) -> FiniteBasisDensity {
    loop {
        let m = rng.random_range(2..=6);
        let alpha: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lambda: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..2.0)).collect();
        let theta: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: f64 = alpha.iter().zip(&theta).map(|(a, t)| a * t).sum();
        // Keep the normalization away from zero so the norm comparison is well scaled.
        if z.abs() >= 0.1 {
            return FiniteBasisDensity::new(alpha, lambda, theta).expect("valid draw");
        }
    }
}

/// Seeded, deliberately skewed sample sets for the negation check.
pub fn skewed_samples(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(0.0..1.0);
            u * u * u * 3.0 - 0.2
        })
        .collect()
}
