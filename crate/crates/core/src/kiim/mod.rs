//! Kernel Intrinsic Invariance Measure.
//!
//! For a hypothesised direction `x → y` the conditional embeddings `μ_{Y|x_i}` are compared after
//! projecting onto an orthonormal subspace `W̃` of coefficient space. The minimum of
//! `(1/n)·tr(W̃ᵀ M W̃)` over `p`-column orthonormal `W̃` is `(1/n)` times the sum of the `p`
//! smallest eigenvalues of
//!
//! ```text
//! M = K_y (K_x + λI)⁻¹ K_x H K_x (K_x + λI)⁻¹ K_y
//! ```
//!
//! and `p` is chosen by the energy rule in [`energy_rank_score`]. The direction with the smaller
//! score is preferred.

mod spectrum;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use spectrum::{
    energy_rank_score, fixed_discard_score, sym_eig, DirectionScore, Spectrum, CLAMP_RELATIVE,
    SYMMETRY_RELATIVE,
};

use crate::baselines;
use crate::config::{IgciReference, KiimConfig};
use crate::dataset::{standardize, Direction, PairedDataset};
use crate::embeddings::{
    eq5_coeff_matrix, reweighted_coeff_matrix, reweighting_vector, ConditionalEmbedder,
    EmbeddingForm, ReferenceKind, ReweightingVector,
};
use crate::error::{Error, Result};
use crate::kernels::{center_columns, center_rows, gram, GramMatrix};

/// Minimum number of paired samples accepted by the spectral scores.
pub const MIN_SAMPLES: usize = 5;

/// `M = Bᵀ B` with `B = H K_x (K_x + λI)⁻¹ K_y`, symmetrized.
///
/// Since `H = HᵀH` and `K_x` commutes with `(K_x + λI)⁻¹`, this equals the invariance matrix
/// while being symmetric positive semi-definite by construction.
pub fn kiim_matrix(kx: &GramMatrix, ky: &GramMatrix, lambda: f64) -> Result<DMatrix<f64>> {
    if kx.n() != ky.n() {
        return Err(Error::argument(format!(
            "Gram dimensions differ ({} vs {})",
            kx.n(),
            ky.n()
        )));
    }
    let embedder = ConditionalEmbedder::new(kx, lambda)?;
    let z = embedder.solve(ky.values())?;
    let mut b = kx.values() * z;
    center_columns(&mut b);
    Ok(symmetrize(b.transpose() * b))
}

/// `M = C H Cᵀ` where column `i` of `C = K_y A` is `K_y a_i` for the coefficient matrix `A`.
pub fn matrix_from_coeffs(ky: &GramMatrix, coeffs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if coeffs.nrows() != ky.n() {
        return Err(Error::argument("coefficient matrix does not match the Gram dimension"));
    }
    let mut ch = ky.values() * coeffs;
    center_rows(&mut ch);
    Ok(symmetrize(&ch * ch.transpose()))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Which estimator produces the conditional embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectralVariant {
    Kiim,
    Reweighted,
}

/// Standardized columns and their Gram matrices, shared by both directions.
pub struct PreparedPair {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub kx: GramMatrix,
    pub ky: GramMatrix,
}

impl PreparedPair {
    pub fn new(dataset: &PairedDataset, config: &KiimConfig) -> Result<Self> {
        if dataset.len() < MIN_SAMPLES {
            return Err(Error::argument(format!(
                "need at least {MIN_SAMPLES} paired samples, got {}",
                dataset.len()
            )));
        }
        let xs = standardize(dataset.xs())?;
        let ys = standardize(dataset.ys())?;
        let kx = gram(&config.effective_kernel_x(), &xs)?;
        let ky = gram(&config.effective_kernel_y(), &ys)?;
        Ok(PreparedPair { xs, ys, kx, ky })
    }

    /// (cause samples, cause Gram, effect Gram) under `direction`.
    pub fn oriented(&self, direction: Direction) -> (&[f64], &GramMatrix, &GramMatrix) {
        match direction {
            Direction::XtoY => (&self.xs, &self.kx, &self.ky),
            Direction::YtoX => (&self.ys, &self.ky, &self.kx),
        }
    }

    /// Invariance matrix for `direction`.
    pub fn matrix(
        &self,
        direction: Direction,
        variant: SpectralVariant,
        config: &KiimConfig,
    ) -> Result<DMatrix<f64>> {
        let (cause, kc, ke) = self.oriented(direction);
        match variant {
            SpectralVariant::Kiim => match config.embedding_form {
                EmbeddingForm::Alg1 => kiim_matrix(kc, ke, config.lambda),
                EmbeddingForm::Eq5 => matrix_from_coeffs(ke, &eq5_coeff_matrix(kc, config.lambda)?),
            },
            SpectralVariant::Reweighted => {
                let r = reweighting_vector(cause, ReferenceKind::UniformOnRange, config.clip_quantile)?;
                reweighted_matrix(kc, ke, &r, config.lambda)
            }
        }
    }

    pub fn spectrum(
        &self,
        direction: Direction,
        variant: SpectralVariant,
        config: &KiimConfig,
    ) -> Result<Spectrum> {
        sym_eig(&self.matrix(direction, variant, config)?)
    }
}

/// Invariance matrix assembled from importance-reweighted conditional embeddings.
pub fn reweighted_matrix(
    kx: &GramMatrix,
    ky: &GramMatrix,
    r: &ReweightingVector,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    if kx.n() != ky.n() {
        return Err(Error::argument("Gram dimensions differ"));
    }
    matrix_from_coeffs(ky, &reweighted_coeff_matrix(kx, r, lambda)?)
}

/// Energy-rule KIIM score for one direction.
pub fn kiim_score(dataset: &PairedDataset, direction: Direction, config: &KiimConfig) -> Result<DirectionScore> {
    spectral_score(dataset, direction, SpectralVariant::Kiim, config)
}

/// Energy-rule Rw-KIIM score for one direction.
pub fn rw_kiim_score(
    dataset: &PairedDataset,
    direction: Direction,
    config: &KiimConfig,
) -> Result<DirectionScore> {
    spectral_score(dataset, direction, SpectralVariant::Reweighted, config)
}

fn spectral_score(
    dataset: &PairedDataset,
    direction: Direction,
    variant: SpectralVariant,
    config: &KiimConfig,
) -> Result<DirectionScore> {
    let prepared = PreparedPair::new(dataset, config)?;
    let spectrum = prepared.spectrum(direction, variant, config)?;
    Ok(energy_rank_score(&spectrum, config.energy_threshold))
}

/// Scoring methods sharing the decision contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Kiim,
    RwKiim,
    Kcdc,
    IgciGauss,
    IgciUniform,
    Anm,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Kcdc,
        Method::Kiim,
        Method::RwKiim,
        Method::IgciGauss,
        Method::IgciUniform,
        Method::Anm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Kiim => "kiim",
            Method::RwKiim => "rw-kiim",
            Method::Kcdc => "kcdc",
            Method::IgciGauss => "igci-gauss",
            Method::IgciUniform => "igci-uniform",
            Method::Anm => "anm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

/// Outcome of comparing the two direction scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "x->y")]
    XtoY,
    #[serde(rename = "y->x")]
    YtoX,
    #[serde(rename = "undecided")]
    Undecided,
}

impl Decision {
    pub fn direction(self) -> Option<Direction> {
        match self {
            Decision::XtoY => Some(Direction::XtoY),
            Decision::YtoX => Some(Direction::YtoX),
            Decision::Undecided => None,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::XtoY => "x->y",
            Decision::YtoX => "y->x",
            Decision::Undecided => "undecided",
        })
    }
}

/// Smaller score wins; scores within `tolerance·max(|s_xy|, |s_yx|, 1)` are a tie.
pub fn decide(score_xy: f64, score_yx: f64, tolerance: f64) -> Decision {
    let scale = score_xy.abs().max(score_yx.abs()).max(1.0);
    if (score_xy - score_yx).abs() <= tolerance * scale {
        Decision::Undecided
    } else if score_xy < score_yx {
        Decision::XtoY
    } else {
        Decision::YtoX
    }
}

/// Inferred direction with both scores and, for the spectral methods, rank diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalDecision {
    pub direction: Decision,
    pub method: Method,
    pub score_xy: f64,
    pub score_yx: f64,
    pub diagnostics_xy: Option<DirectionScore>,
    pub diagnostics_yx: Option<DirectionScore>,
    pub config_digest: String,
}

/// Scores both directions with `method` and compares them.
pub fn infer_direction(dataset: &PairedDataset, method: Method, config: &KiimConfig) -> Result<CausalDecision> {
    let spectral = |variant| -> Result<(DirectionScore, DirectionScore)> {
        let prepared = PreparedPair::new(dataset, config)?;
        let score = |direction| -> Result<DirectionScore> {
            let s = prepared.spectrum(direction, variant, config)?;
            Ok(energy_rank_score(&s, config.energy_threshold))
        };
        let (xy, yx) = rayon::join(|| score(Direction::XtoY), || score(Direction::YtoX));
        Ok((xy?, yx?))
    };
    let plain = |f: &dyn Fn(Direction) -> Result<f64>| -> Result<(f64, f64)> {
        Ok((f(Direction::XtoY)?, f(Direction::YtoX)?))
    };

    let (score_xy, score_yx, diag) = match method {
        Method::Kiim | Method::RwKiim => {
            let variant = if method == Method::Kiim {
                SpectralVariant::Kiim
            } else {
                SpectralVariant::Reweighted
            };
            let (xy, yx) = spectral(variant)?;
            (xy.score, yx.score, Some((xy, yx)))
        }
        Method::Kcdc => {
            let (a, b) = plain(&|d| baselines::kcdc_score(dataset, d, config))?;
            (a, b, None)
        }
        Method::IgciGauss | Method::IgciUniform => {
            let reference = if method == Method::IgciGauss {
                IgciReference::Gaussian
            } else {
                IgciReference::Uniform
            };
            let (a, b) = plain(&|d| baselines::igci_score(dataset, d, reference))?;
            (a, b, None)
        }
        Method::Anm => {
            let (a, b) = plain(&|d| baselines::anm_score(dataset, d, config))?;
            (a, b, None)
        }
    };
    Ok(CausalDecision {
        direction: decide(score_xy, score_yx, config.tie_tolerance),
        method,
        score_xy,
        score_yx,
        diagnostics_xy: diag.map(|d| d.0),
        diagnostics_yx: diag.map(|d| d.1),
        config_digest: config.digest(),
    })
}

/// One row of the fixed-rank sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub discard: usize,
    pub score_xy: f64,
    pub score_yx: f64,
    pub decision: Decision,
}

/// KIIM scores with exactly `d = 0..=d_max` leading eigenvalues discarded in both directions.
pub fn rank_ablation(dataset: &PairedDataset, d_max: usize, config: &KiimConfig) -> Result<Vec<AblationPoint>> {
    if d_max >= dataset.len() {
        return Err(Error::argument(format!(
            "d_max = {d_max} must be smaller than n = {}",
            dataset.len()
        )));
    }
    let prepared = PreparedPair::new(dataset, config)?;
    let sxy = prepared.spectrum(Direction::XtoY, SpectralVariant::Kiim, config)?;
    let syx = prepared.spectrum(Direction::YtoX, SpectralVariant::Kiim, config)?;
    (0..=d_max)
        .map(|d| {
            let a = fixed_discard_score(&sxy, d)?.score;
            let b = fixed_discard_score(&syx, d)?.score;
            Ok(AblationPoint {
                discard: d,
                score_xy: a,
                score_yx: b,
                decision: decide(a, b, config.tie_tolerance),
            })
        })
        .collect()
}
