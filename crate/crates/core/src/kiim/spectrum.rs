//! Symmetric eigenvalues and the energy-based rank rule.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative magnitude below which negative eigenvalues are treated as roundoff and clamped to 0.
pub const CLAMP_RELATIVE: f64 = 1e-10;

/// Symmetry tolerance accepted by [`sym_eig`], relative to the largest entry.
pub const SYMMETRY_RELATIVE: f64 = 1e-8;

/// Eigenvalues of a symmetric matrix, sorted descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    clamped_count: usize,
    negative_count: usize,
    min_raw: f64,
}

impl Spectrum {
    /// Sorts and clamps raw eigenvalues.
    ///
    /// Negative values no larger in magnitude than `1e-10·max|λ|` become 0 and are counted in
    /// `clamped_count`. Larger negatives are genuine and are kept as-is; they are counted in
    /// `negative_count`.
    pub fn from_raw(mut raw: Vec<f64>) -> Self {
        raw.sort_by(|a, b| b.total_cmp(a));
        let min_raw = raw.last().copied().unwrap_or(0.0);
        let scale = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = -CLAMP_RELATIVE * scale;
        let mut clamped_count = 0;
        let mut negative_count = 0;
        for v in raw.iter_mut() {
            if *v < 0.0 {
                if *v >= floor {
                    *v = 0.0;
                    clamped_count += 1;
                } else {
                    negative_count += 1;
                }
            }
        }
        Spectrum {
            eigenvalues: raw,
            clamped_count,
            negative_count,
            min_raw,
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn clamped_count(&self) -> usize {
        self.clamped_count
    }

    /// Number of negative eigenvalues too large to be roundoff.
    pub fn negative_count(&self) -> usize {
        self.negative_count
    }

    /// Smallest eigenvalue before clamping.
    pub fn min_raw(&self) -> f64 {
        self.min_raw
    }

    pub fn source_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

/// Full spectrum of a symmetric matrix by Householder tridiagonalization and implicit QL.
///
/// Only eigenvalues are computed. The iteration budget is `30·n` QL steps in total.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<Spectrum> {
    let n = m.nrows();
    if !m.is_square() {
        return Err(Error::argument("eigendecomposition needs a square matrix"));
    }
    if n == 0 {
        return Ok(Spectrum::from_raw(Vec::new()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("matrix has non-finite entries", None));
    }
    let scale = m.amax();
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_RELATIVE * scale {
        return Err(Error::argument(format!(
            "matrix is not symmetric (max asymmetry {asym:.3e}, scale {scale:.3e})"
        )));
    }

    // Row-major copy of the lower triangle, symmetrized.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    let (mut d, mut e) = tridiagonalize(&mut a, n);
    tridiagonal_ql(&mut d, &mut e)?;
    Ok(Spectrum::from_raw(d))
}

/// Householder reduction of a symmetric matrix (row-major, lower triangle used) to tridiagonal
/// form. Returns the diagonal and the subdiagonal, with `e[i]` coupling rows `i-1` and `i`.
fn tridiagonalize(a: &mut [f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a[i * n + k].abs()).sum();
            if scale == 0.0 {
                e[i] = a[i * n + l];
            } else {
                for k in 0..=l {
                    a[i * n + k] /= scale;
                    h += a[i * n + k] * a[i * n + k];
                }
                let mut f = a[i * n + l];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[i * n + l] = f - g;
                f = 0.0;
                for j in 0..=l {
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a[j * n + k] * a[i * n + k];
                    }
                    for k in (j + 1)..=l {
                        g += a[k * n + j] * a[i * n + k];
                    }
                    e[j] = g / h;
                    f += e[j] * a[i * n + j];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[i * n + j];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        a[j * n + k] -= f * e[k] + g * a[i * n + k];
                    }
                }
            }
        } else {
            e[i] = a[i * n + l];
        }
        d[i] = h;
    }
    for i in 0..n {
        d[i] = a[i * n + i];
    }
    (d, e)
}

/// Implicit-shift QL on a symmetric tridiagonal matrix; eigenvalues overwrite `d`.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    if n == 1 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let norm = d
        .iter()
        .zip(e.iter())
        .fold(0.0f64, |m, (a, b)| m.max(a.abs() + b.abs()));
    let floor = f64::EPSILON * norm;
    let cap = 30 * n;
    let mut iterations = 0;

    for l in 0..n {
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd || e[m].abs() <= floor {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > cap {
                return Err(Error::NonConvergence { iterations: cap, n });
            }

            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated_early = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated_early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated_early {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Scoring summary for one hypothesised direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionScore {
    /// `(1/n)·Σ` of the retained (smallest) eigenvalues.
    pub score: f64,
    /// Number of retained eigenvalues, `n - discarded_top`.
    pub retained_count: usize,
    /// Fraction of the total spectral energy kept by the retained eigenvalues.
    pub retained_energy_ratio: f64,
    /// Number of leading eigenvalues dropped.
    pub discarded_top: usize,
    /// Sum of the clamped spectrum.
    pub trace: f64,
    /// Smallest eigenvalue before clamping.
    pub min_eigenvalue: f64,
}

impl DirectionScore {
    /// 1-based index of the first retained eigenvalue.
    pub fn start_index(&self) -> usize {
        self.discarded_top + 1
    }
}

/// Keeps the smallest eigenvalues carrying at least `threshold` of the total energy, dropping as
/// many of the largest as possible.
///
/// With `π_1 ≥ … ≥ π_n`, the start index `k₁` is the largest index with
/// `Σ_{i≥k₁} π_i ≥ threshold·Σ_i π_i`. A spectrum with zero total keeps everything and scores 0.
/// Residual negative eigenvalues contribute as 0.
pub fn energy_rank_score(spectrum: &Spectrum, threshold: f64) -> DirectionScore {
    let values: Vec<f64> = spectrum.eigenvalues().iter().map(|v| v.max(0.0)).collect();
    let n = values.len();
    let total: f64 = values.iter().sum();
    let base = DirectionScore {
        score: 0.0,
        retained_count: n,
        retained_energy_ratio: 1.0,
        discarded_top: 0,
        trace: spectrum.trace(),
        min_eigenvalue: spectrum.min_raw(),
    };
    if n == 0 || total <= 0.0 {
        return base;
    }
    let target = threshold * total;
    // Tail sums from the smallest eigenvalue upward.
    let mut tail = 0.0;
    let mut tails = vec![0.0; n];
    for i in (0..n).rev() {
        tail += values[i];
        tails[i] = tail;
    }
    let start = (0..n).rev().find(|&k| tails[k] >= target).unwrap_or(0);
    DirectionScore {
        score: tails[start] / n as f64,
        retained_count: n - start,
        retained_energy_ratio: tails[start] / total,
        discarded_top: start,
        ..base
    }
}

/// Drops exactly `discard` leading eigenvalues, bypassing the energy rule.
pub fn fixed_discard_score(spectrum: &Spectrum, discard: usize) -> Result<DirectionScore> {
    let values: Vec<f64> = spectrum.eigenvalues().iter().map(|v| v.max(0.0)).collect();
    let n = values.len();
    if discard >= n {
        return Err(Error::argument(format!(
            "cannot discard {discard} of {n} eigenvalues"
        )));
    }
    let total: f64 = values.iter().sum();
    let kept: f64 = values[discard..].iter().rev().sum();
    Ok(DirectionScore {
        score: kept / n as f64,
        retained_count: n - discard,
        retained_energy_ratio: if total > 0.0 { kept / total } else { 1.0 },
        discarded_top: discard,
        trace: spectrum.trace(),
        min_eigenvalue: spectrum.min_raw(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spectrum(values: &[f64]) -> Spectrum {
        Spectrum::from_raw(values.to_vec())
    }

    #[test]
    fn diagonal_matrix() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 2.0]));
        assert_eq!(sym_eig(&m).unwrap().eigenvalues(), &[3.0, 2.0, 1.0]);
    }

    #[test]
    fn genuine_negative_is_kept_and_flagged() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let s = sym_eig(&m).unwrap();
        assert!((s.eigenvalues()[0] - 1.0).abs() < 1e-15);
        assert!((s.eigenvalues()[1] + 1.0).abs() < 1e-15);
        assert_eq!(s.clamped_count(), 0);
        assert_eq!(s.negative_count(), 1);
    }

    #[test]
    fn roundoff_negative_is_clamped() {
        let s = spectrum(&[2.0, -1e-12, 0.5]);
        assert_eq!(s.eigenvalues(), &[2.0, 0.5, 0.0]);
        assert_eq!(s.clamped_count(), 1);
        assert_eq!(s.min_raw(), -1e-12);
    }

    #[test]
    fn zero_and_empty() {
        let s = sym_eig(&DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(s.eigenvalues(), &[0.0; 4]);
        assert_eq!(sym_eig(&DMatrix::zeros(0, 0)).unwrap().source_dim(), 0);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(sym_eig(&m), Err(Error::Argument(_))));
    }

    #[test]
    fn tridiagonal_toeplitz_closed_form() {
        // Eigenvalues of tridiag(-1, 2, -1) are 2 - 2cos(kπ/(n+1)).
        let n = 12;
        let m = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => 2.0,
            1 => -1.0,
            _ => 0.0,
        });
        let s = sym_eig(&m).unwrap();
        let mut expected: Vec<f64> = (1..=n)
            .map(|k| 2.0 - 2.0 * (k as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos())
            .collect();
        expected.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in s.eigenvalues().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn energy_rule_examples() {
        let r = energy_rank_score(&spectrum(&[5.0, 3.0, 1.0, 1.0]), 0.9);
        assert_eq!(r.start_index(), 1);
        assert_eq!(r.score, 2.5);

        let r = energy_rank_score(&spectrum(&[0.5; 20]), 0.9);
        assert_eq!(r.discarded_top, 2);
        assert_eq!(r.retained_count, 18);
        assert_eq!(r.score, 0.45);
        assert!(r.retained_energy_ratio >= 0.9);

        let r = energy_rank_score(&spectrum(&[7.0]), 0.9);
        assert_eq!((r.start_index(), r.score), (1, 7.0));

        let r = energy_rank_score(&spectrum(&[0.0, 0.0, 0.0]), 0.9);
        assert_eq!((r.start_index(), r.score), (1, 0.0));
    }

    #[test]
    fn fixed_discard_examples() {
        let s = spectrum(&[5.0, 3.0, 1.0, 1.0]);
        assert_eq!(fixed_discard_score(&s, 0).unwrap().score, 10.0 / 4.0);
        assert_eq!(fixed_discard_score(&s, 1).unwrap().score, 1.25);
        assert_eq!(fixed_discard_score(&s, 3).unwrap().score, 0.25);
        assert!(fixed_discard_score(&s, 4).is_err());
    }

    proptest! {
        #[test]
        fn energy_score_bounded_by_trace(values in prop::collection::vec(0.0f64..10.0, 1..40), thr in 0.05f64..1.0) {
            let s = spectrum(&values);
            let r = energy_rank_score(&s, thr);
            let n = values.len() as f64;
            prop_assert!(r.score <= s.trace() / n * (1.0 + 1e-12));
            if r.discarded_top > 0 {
                prop_assert!(r.retained_energy_ratio >= thr * (1.0 - 1e-12));
            }
        }

        #[test]
        fn fixed_discard_is_monotone(values in prop::collection::vec(0.0f64..10.0, 2..40)) {
            let s = spectrum(&values);
            let scores: Vec<f64> = (0..values.len()).map(|d| fixed_discard_score(&s, d).unwrap().score).collect();
            for w in scores.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
    }
}
