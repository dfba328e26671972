//! Scalar kernels, the median bandwidth heuristic, Gram matrices and the centering matrix.
//!
//! Kernels are described declaratively by [`KernelSpec`] and have a compact text form used in
//! configuration files:
//!
//! ```text
//! rbf(median)   rbf(0.7)   log   rq   poly(3)
//! product(rbf(median), log, rq)     sum(rbf(median), log, rq)
//! ```
//!
//! The stationary families depend on the squared distance `d² = (x - x')²` only:
//!
//! | family | value |
//! |--------|-------|
//! | `rbf(σ)` | `exp(-d² / σ²)` |
//! | `log` | `-ln(d² + 1)` |
//! | `rq` | `1 - d² / (d² + 1)` |
//! | `poly(d)` | `(x·x' + 1)^d` (not stationary) |
//!
//! The default composite `product(rbf(median), log, rq)` has a zero diagonal and is not positive
//! semi-definite; `sum(...)` is available as an alternative composition.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RBF bandwidth: either fixed or resolved from the samples by the median heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    Fixed(f64),
    Median,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    Rbf { bandwidth: Bandwidth },
    Log,
    RationalQuadratic,
    Polynomial { degree: u32 },
    Product(Vec<KernelSpec>),
    Sum(Vec<KernelSpec>),
}

/// How the parts of a composite kernel are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompositeMode {
    Product,
    Sum,
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Self {
        KernelSpec::Rbf {
            bandwidth: Bandwidth::Fixed(sigma),
        }
    }

    pub fn rbf_median() -> Self {
        KernelSpec::Rbf {
            bandwidth: Bandwidth::Median,
        }
    }

    /// `rbf(median) ∘ log ∘ rq`, combined according to `mode`.
    pub fn composite(mode: CompositeMode) -> Self {
        let parts = vec![KernelSpec::rbf_median(), KernelSpec::Log, KernelSpec::RationalQuadratic];
        match mode {
            CompositeMode::Product => KernelSpec::Product(parts),
            CompositeMode::Sum => KernelSpec::Sum(parts),
        }
    }

    /// Re-combines a top-level composite with `mode`; other kernels are returned unchanged.
    pub fn with_composite_mode(self, mode: CompositeMode) -> Self {
        match (self, mode) {
            (KernelSpec::Product(p) | KernelSpec::Sum(p), CompositeMode::Product) => {
                KernelSpec::Product(p)
            }
            (KernelSpec::Product(p) | KernelSpec::Sum(p), CompositeMode::Sum) => KernelSpec::Sum(p),
            (other, _) => other,
        }
    }

    /// Checks parameter ranges; the median marker is allowed.
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Rbf {
                bandwidth: Bandwidth::Fixed(s),
            } if !(*s > 0.0 && s.is_finite()) => {
                Err(Error::config(format!("rbf bandwidth must be positive, got {s}")))
            }
            KernelSpec::Polynomial { degree: 0 } => {
                Err(Error::config("polynomial degree must be at least 1"))
            }
            KernelSpec::Product(parts) | KernelSpec::Sum(parts) => {
                if parts.len() < 2 {
                    return Err(Error::config("a composite kernel needs at least two parts"));
                }
                parts.iter().try_for_each(KernelSpec::validate)
            }
            _ => Ok(()),
        }
    }

    pub fn is_resolved(&self) -> bool {
        match self {
            KernelSpec::Rbf {
                bandwidth: Bandwidth::Median,
            } => false,
            KernelSpec::Product(parts) | KernelSpec::Sum(parts) => {
                parts.iter().all(KernelSpec::is_resolved)
            }
            _ => true,
        }
    }

    /// True when the kernel depends on `x - x'` only.
    pub fn is_stationary(&self) -> bool {
        match self {
            KernelSpec::Polynomial { .. } => false,
            KernelSpec::Product(parts) | KernelSpec::Sum(parts) => {
                parts.iter().all(KernelSpec::is_stationary)
            }
            _ => true,
        }
    }

    /// Replaces every median marker with the median heuristic of `samples`.
    pub fn resolve(&self, samples: &[f64]) -> Result<KernelSpec> {
        self.validate()?;
        if self.is_resolved() {
            return Ok(self.clone());
        }
        let sigma = median_heuristic(samples)?;
        Ok(self.resolve_with(sigma))
    }

    fn resolve_with(&self, sigma: f64) -> KernelSpec {
        match self {
            KernelSpec::Rbf {
                bandwidth: Bandwidth::Median,
            } => KernelSpec::rbf(sigma),
            KernelSpec::Product(parts) => {
                KernelSpec::Product(parts.iter().map(|p| p.resolve_with(sigma)).collect())
            }
            KernelSpec::Sum(parts) => {
                KernelSpec::Sum(parts.iter().map(|p| p.resolve_with(sigma)).collect())
            }
            other => other.clone(),
        }
    }

    fn eval_unchecked(&self, x: f64, y: f64) -> f64 {
        let d2 = (x - y) * (x - y);
        match self {
            KernelSpec::Rbf {
                bandwidth: Bandwidth::Fixed(s),
            } => (-d2 / (s * s)).exp(),
            KernelSpec::Rbf {
                bandwidth: Bandwidth::Median,
            } => unreachable!("checked by eval_kernel"),
            KernelSpec::Log => -(d2 + 1.0).ln(),
            KernelSpec::RationalQuadratic => 1.0 - d2 / (d2 + 1.0),
            KernelSpec::Polynomial { degree } => (x * y + 1.0).powi(*degree as i32),
            KernelSpec::Product(parts) => parts.iter().map(|p| p.eval_unchecked(x, y)).product(),
            KernelSpec::Sum(parts) => parts.iter().map(|p| p.eval_unchecked(x, y)).sum(),
        }
    }
}

/// Evaluates `spec` at `(x, x')`. The spec must not carry a median marker.
pub fn eval_kernel(spec: &KernelSpec, x: f64, y: f64) -> Result<f64> {
    if !spec.is_resolved() {
        return Err(Error::config(format!(
            "kernel {spec} has an unresolved median bandwidth"
        )));
    }
    spec.validate()?;
    Ok(spec.eval_unchecked(x, y))
}

/// Median of the pairwise distances `|s_i - s_j|`, `i < j`; falls back to 1.0 when that median is 0.
pub fn median_heuristic(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::argument("median heuristic needs at least two samples"));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            dists.push((a - b).abs());
        }
    }
    let m = dists.len();
    let mid = m / 2;
    let (_, &mut upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if m % 2 == 1 {
        upper
    } else {
        // Every entry left of `mid` is <= upper; the largest of them is the lower middle.
        let lower = dists[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    Ok(if median > 0.0 { median } else { 1.0 })
}

/// A symmetric matrix of kernel evaluations together with the resolved kernel that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    spec: KernelSpec,
}

impl GramMatrix {
    /// Wraps a precomputed matrix, e.g. for tests. The matrix must be square and symmetric.
    pub fn from_matrix(values: DMatrix<f64>, spec: KernelSpec) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::argument("Gram matrix must be square"));
        }
        if values != values.transpose() {
            return Err(Error::argument("Gram matrix must be symmetric"));
        }
        Ok(GramMatrix { values, spec })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }
}

/// Builds the Gram matrix of `samples`, resolving a median bandwidth against them first.
pub fn gram(spec: &KernelSpec, samples: &[f64]) -> Result<GramMatrix> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::argument("cannot build a Gram matrix from no samples"));
    }
    let spec = if spec.is_resolved() {
        spec.validate()?;
        spec.clone()
    } else if n == 1 {
        // A single sample has no pairwise distances; any bandwidth gives the same 1x1 matrix.
        spec.resolve_with(1.0)
    } else {
        spec.resolve(samples)?
    };

    // Upper triangle rows in parallel, mirrored afterwards.
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| spec.eval_unchecked(samples[i], samples[j])).collect())
        .collect();
    let mut values = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            let j = i + off;
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(GramMatrix { values, spec })
}

/// `H = I - (1/n) 1 1ᵀ`.
pub fn centering_matrix(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::argument("centering matrix needs n >= 1"));
    }
    let off = 1.0 / n as f64;
    Ok(DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - off } else { -off }))
}

/// Applies `H` from the left without forming it: subtracts each column's mean.
pub fn center_columns(m: &mut DMatrix<f64>) {
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
}

/// Applies `H` from the right without forming it: subtracts each row's mean.
pub fn center_rows(m: &mut DMatrix<f64>) {
    let n = m.ncols() as f64;
    for mut row in m.row_iter_mut() {
        let mean = row.sum() / n;
        row.add_scalar_mut(-mean);
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |f: &mut fmt::Formatter<'_>, name: &str, parts: &[KernelSpec]| {
            write!(f, "{name}(")?;
            for (i, p) in parts.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{p}")?;
            }
            f.write_str(")")
        };
        match self {
            KernelSpec::Rbf {
                bandwidth: Bandwidth::Median,
            } => f.write_str("rbf(median)"),
            KernelSpec::Rbf {
                bandwidth: Bandwidth::Fixed(s),
            } => write!(f, "rbf({s})"),
            KernelSpec::Log => f.write_str("log"),
            KernelSpec::RationalQuadratic => f.write_str("rq"),
            KernelSpec::Polynomial { degree } => write!(f, "poly({degree})"),
            KernelSpec::Product(parts) => list(f, "product", parts),
            KernelSpec::Sum(parts) => list(f, "sum", parts),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parser = SpecParser { src: s, pos: 0 };
        let spec = parser.kernel()?;
        parser.skip_ws();
        if parser.pos != s.len() {
            return Err(parser.error("trailing input"));
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl FromStr for CompositeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "product" => Ok(CompositeMode::Product),
            "sum" => Ok(CompositeMode::Sum),
            other => Err(Error::config(format!("unknown composite mode {other:?}"))),
        }
    }
}

impl fmt::Display for CompositeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompositeMode::Product => "product",
            CompositeMode::Sum => "sum",
        })
    }
}

struct SpecParser<'a> {
    src: &'a str,
    pos: usize,
}

impl SpecParser<'_> {
    fn error(&self, what: &str) -> Error {
        Error::config(format!("kernel spec {:?}: {what} at offset {}", self.src, self.pos))
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected {c:?}")))
        }
    }

    fn token(&mut self) -> &str {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let len = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-' | '+')))
            .unwrap_or(rest.len());
        self.pos += len;
        &rest[..len]
    }

    fn kernel(&mut self) -> Result<KernelSpec> {
        let name = self.token().to_ascii_lowercase();
        match name.as_str() {
            "rbf" => {
                self.expect('(')?;
                let arg = self.token().to_string();
                self.expect(')')?;
                let bandwidth = if arg == "median" {
                    Bandwidth::Median
                } else {
                    Bandwidth::Fixed(
                        arg.parse()
                            .map_err(|_| self.error(&format!("bad bandwidth {arg:?}")))?,
                    )
                };
                Ok(KernelSpec::Rbf { bandwidth })
            }
            "log" => Ok(KernelSpec::Log),
            "rq" => Ok(KernelSpec::RationalQuadratic),
            "poly" => {
                self.expect('(')?;
                let arg = self.token().to_string();
                self.expect(')')?;
                let degree = arg
                    .parse()
                    .map_err(|_| self.error(&format!("bad degree {arg:?}")))?;
                Ok(KernelSpec::Polynomial { degree })
            }
            "product" | "sum" => {
                self.expect('(')?;
                let mut parts = vec![self.kernel()?];
                while self.eat(',') {
                    parts.push(self.kernel()?);
                }
                self.expect(')')?;
                Ok(if name == "product" {
                    KernelSpec::Product(parts)
                } else {
                    KernelSpec::Sum(parts)
                })
            }
            "" => Err(self.error("expected a kernel name")),
            other => Err(self.error(&format!("unknown kernel {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn eval_examples() {
        assert_eq!(eval_kernel(&KernelSpec::rbf(1.0), 0.7, 0.7).unwrap(), 1.0);
        assert!(close(eval_kernel(&KernelSpec::Log, 0.0, 1.0).unwrap(), -(2f64).ln(), 1e-15));
        assert!(close(eval_kernel(&KernelSpec::RationalQuadratic, 0.0, 1.0).unwrap(), 0.5, 1e-15));
        let prod = KernelSpec::Product(vec![
            KernelSpec::rbf(1.0),
            KernelSpec::Log,
            KernelSpec::RationalQuadratic,
        ]);
        assert_eq!(eval_kernel(&prod, 0.3, 0.3).unwrap(), 0.0);
        let sum = KernelSpec::Sum(vec![KernelSpec::rbf(1.0), KernelSpec::RationalQuadratic]);
        assert_eq!(eval_kernel(&sum, 0.3, 0.3).unwrap(), 2.0);
        assert_eq!(eval_kernel(&KernelSpec::Polynomial { degree: 2 }, 1.0, 2.0).unwrap(), 9.0);
    }

    #[test]
    fn unresolved_bandwidth_is_config_error() {
        let err = eval_kernel(&KernelSpec::rbf_median(), 0.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn median_heuristic_examples() {
        assert_eq!(median_heuristic(&[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(median_heuristic(&[5.0, 5.0, 5.0]).unwrap(), 1.0);
        assert_eq!(median_heuristic(&[0.0, 1.0, 3.0]).unwrap(), 2.0);
        // distances {1, 3, 6, 2, 5, 3}: sorted 1 2 3 3 5 6, median 3
        assert_eq!(median_heuristic(&[0.0, 1.0, 3.0, 6.0]).unwrap(), 3.0);
        assert!(matches!(median_heuristic(&[1.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn gram_examples() {
        let g = gram(&KernelSpec::rbf(1.0), &[0.0]).unwrap();
        assert_eq!(g.values(), &DMatrix::from_element(1, 1, 1.0));

        let g = gram(&KernelSpec::rbf(1.0), &[0.0, 1.0]).unwrap();
        let e = (-1.0f64).exp();
        assert_eq!(g.values(), &DMatrix::from_row_slice(2, 2, &[1.0, e, e, 1.0]));

        let g = gram(&KernelSpec::Log, &[0.0, 1.0]).unwrap();
        let l = -(2f64).ln();
        assert_eq!(g.values(), &DMatrix::from_row_slice(2, 2, &[-0.0, l, l, -0.0]));

        assert!(matches!(gram(&KernelSpec::Log, &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn gram_resolves_median_against_samples() {
        let g = gram(&KernelSpec::rbf_median(), &[0.0, 1.0, 3.0]).unwrap();
        assert_eq!(g.spec(), &KernelSpec::rbf(2.0));
        assert!(close(g.values()[(0, 2)], (-9.0f64 / 4.0).exp(), 1e-15));
    }

    #[test]
    fn diagonals() {
        let xs = [0.3, -1.2, 4.0, 0.0];
        for (spec, diag) in [
            (KernelSpec::rbf(0.8), 1.0),
            (KernelSpec::Log, 0.0),
            (KernelSpec::RationalQuadratic, 1.0),
        ] {
            let g = gram(&spec, &xs).unwrap();
            assert!(g.values().diagonal().iter().all(|&v| v == diag), "{spec}");
        }
    }

    #[test]
    fn centering_examples() {
        assert_eq!(centering_matrix(1).unwrap(), DMatrix::from_element(1, 1, 0.0));
        assert_eq!(
            centering_matrix(2).unwrap(),
            DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5])
        );
        let h = centering_matrix(5).unwrap();
        let ones = nalgebra::DVector::from_element(5, 1.0);
        assert!((&h * ones).amax() < 1e-15);
        assert!((&h * &h - &h).amax() < 1e-12);
        assert!(matches!(centering_matrix(0), Err(Error::Argument(_))));
    }

    #[test]
    fn centering_rank_is_n_minus_one() {
        let spectrum = crate::kiim::sym_eig(&centering_matrix(7).unwrap()).unwrap();
        let ev = spectrum.eigenvalues();
        assert!(ev[..6].iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(ev[6].abs() < 1e-12);
    }

    #[test]
    fn center_helpers_match_explicit_h() {
        let m = DMatrix::from_fn(4, 4, |i, j| (i * 7 + j * 3) as f64 * 0.37 - 1.0);
        let h = centering_matrix(4).unwrap();
        let mut left = m.clone();
        center_columns(&mut left);
        assert!((left - &h * &m).amax() < 1e-14);
        let mut right = m.clone();
        center_rows(&mut right);
        assert!((right - &m * &h).amax() < 1e-14);
    }

    #[test]
    fn kernel_text_roundtrip_and_errors() {
        let text = "product(rbf(median), log, rq)";
        let spec: KernelSpec = text.parse().unwrap();
        assert_eq!(spec, KernelSpec::composite(CompositeMode::Product));
        assert_eq!(spec.to_string(), text);
        let nested: KernelSpec = "sum( rbf(0.25) , product(log, poly(3)) )".parse().unwrap();
        assert_eq!(nested.to_string().parse::<KernelSpec>().unwrap(), nested);
        for bad in ["rbf(-1)", "poly(0)", "product(log)", "gauss", "log extra", "rbf(median"] {
            assert!(bad.parse::<KernelSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn composite_mode_switch() {
        let spec = KernelSpec::composite(CompositeMode::Product).with_composite_mode(CompositeMode::Sum);
        assert_eq!(spec, KernelSpec::composite(CompositeMode::Sum));
        assert_eq!(KernelSpec::Log.with_composite_mode(CompositeMode::Sum), KernelSpec::Log);
    }

    fn any_spec() -> impl Strategy<Value = KernelSpec> {
        prop_oneof![
            Just(KernelSpec::rbf_median()),
            (0.1f64..3.0).prop_map(KernelSpec::rbf),
            Just(KernelSpec::Log),
            Just(KernelSpec::RationalQuadratic),
            (1u32..4).prop_map(|degree| KernelSpec::Polynomial { degree }),
            Just(KernelSpec::composite(CompositeMode::Product)),
            Just(KernelSpec::composite(CompositeMode::Sum)),
        ]
    }

    proptest! {
        #[test]
        fn gram_is_exactly_symmetric(spec in any_spec(), xs in prop::collection::vec(-5.0f64..5.0, 1..40)) {
            let g = gram(&spec, &xs).unwrap();
            prop_assert_eq!(g.values(), &g.values().transpose());
        }

        #[test]
        fn rbf_gram_is_psd(xs in prop::collection::vec(-3.0f64..3.0, 2..50)) {
            let g = gram(&KernelSpec::rbf_median(), &xs).unwrap();
            let trace = g.values().trace();
            let spectrum = crate::kiim::sym_eig(g.values()).unwrap();
            prop_assert!(spectrum.min_raw() >= -1e-10 * trace);
        }

        #[test]
        fn median_is_permutation_invariant(xs in prop::collection::vec(-10.0f64..10.0, 2..30), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = xs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(median_heuristic(&xs).unwrap(), median_heuristic(&shuffled).unwrap());
        }
    }
}
