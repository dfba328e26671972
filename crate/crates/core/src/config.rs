//! Scoring configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embeddings::EmbeddingForm;
use crate::error::{Error, Result};
use crate::kernels::{CompositeMode, KernelSpec};

/// Reference measure for the entropy-based baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IgciReference {
    Gaussian,
    Uniform,
}

impl FromStr for IgciReference {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "gauss" => Ok(IgciReference::Gaussian),
            "uniform" => Ok(IgciReference::Uniform),
            other => Err(Error::config(format!("unknown igci reference {other:?}"))),
        }
    }
}

impl std::fmt::Display for IgciReference {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IgciReference::Gaussian => "gaussian",
            IgciReference::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kcdc_input_kernel: KernelSpec,
    pub kcdc_output_kernel: KernelSpec,
    pub igci_reference: IgciReference,
    pub anm_ridge: f64,
    pub anm_kernel: KernelSpec,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            kcdc_input_kernel: KernelSpec::Log,
            kcdc_output_kernel: KernelSpec::RationalQuadratic,
            igci_reference: IgciReference::Uniform,
            anm_ridge: 1e-3,
            anm_kernel: KernelSpec::rbf_median(),
        }
    }
}

/// Everything that influences a score. Two equal configs yield bit-identical results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KiimConfig {
    pub lambda: f64,
    pub energy_threshold: f64,
    pub kernel_x: KernelSpec,
    pub kernel_y: KernelSpec,
    pub composite_mode: CompositeMode,
    pub embedding_form: EmbeddingForm,
    pub tie_tolerance: f64,
    /// Upper quantile at which importance weights are clipped (Rw-KIIM).
    pub clip_quantile: f64,
    pub baselines: BaselineConfig,
}

impl Default for KiimConfig {
    fn default() -> Self {
        KiimConfig {
            lambda: 1e-3,
            energy_threshold: 0.9,
            kernel_x: KernelSpec::composite(CompositeMode::Product),
            kernel_y: KernelSpec::composite(CompositeMode::Product),
            composite_mode: CompositeMode::Product,
            embedding_form: EmbeddingForm::Alg1,
            tie_tolerance: 1e-12,
            clip_quantile: 0.95,
            baselines: BaselineConfig::default(),
        }
    }
}

/// Config keys in canonical order.
pub const KEYS: &[&str] = &[
    "lambda",
    "energy_threshold",
    "kernel.x",
    "kernel.y",
    "composite_mode",
    "embedding_form",
    "tie_tolerance",
    "rw.clip_quantile",
    "kcdc.kernel_in",
    "kcdc.kernel_out",
    "igci.reference",
    "anm.ridge",
    "anm.kernel",
];

fn positive(key: &str, value: &str) -> Result<f64> {
    let v: f64 = value
        .parse()
        .map_err(|_| Error::config(format!("{key}: not a number: {value:?}")))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(format!("{key}: must be positive, got {v}")))
    }
}

impl KiimConfig {
    /// Kernel actually applied to the x column, after the composite mode is taken into account.
    pub fn effective_kernel_x(&self) -> KernelSpec {
        self.kernel_x.clone().with_composite_mode(self.composite_mode)
    }

    pub fn effective_kernel_y(&self) -> KernelSpec {
        self.kernel_y.clone().with_composite_mode(self.composite_mode)
    }

    /// Sets one key. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "lambda" => self.lambda = positive(key, value)?,
            "energy_threshold" => {
                let v = positive(key, value)?;
                if v > 1.0 {
                    return Err(Error::config(format!("energy_threshold must be <= 1, got {v}")));
                }
                self.energy_threshold = v;
            }
            "kernel.x" => self.kernel_x = value.parse()?,
            "kernel.y" => self.kernel_y = value.parse()?,
            "composite_mode" => self.composite_mode = value.parse()?,
            "embedding_form" => {
                self.embedding_form = match value {
                    "alg1" => EmbeddingForm::Alg1,
                    "eq5" => EmbeddingForm::Eq5,
                    other => return Err(Error::config(format!("unknown embedding_form {other:?}"))),
                }
            }
            "tie_tolerance" => {
                let v: f64 = value
                    .parse()
                    .map_err(|_| Error::config(format!("tie_tolerance: not a number: {value:?}")))?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::config("tie_tolerance must be >= 0"));
                }
                self.tie_tolerance = v;
            }
            "rw.clip_quantile" => {
                let v = positive(key, value)?;
                if !(v > 0.5 && v <= 1.0) {
                    return Err(Error::config("rw.clip_quantile must lie in (0.5, 1]"));
                }
                self.clip_quantile = v;
            }
            "kcdc.kernel_in" => self.baselines.kcdc_input_kernel = value.parse()?,
            "kcdc.kernel_out" => self.baselines.kcdc_output_kernel = value.parse()?,
            "igci.reference" => self.baselines.igci_reference = value.parse()?,
            "anm.ridge" => self.baselines.anm_ridge = positive(key, value)?,
            "anm.kernel" => self.baselines.anm_kernel = value.parse()?,
            other => return Err(Error::config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "lambda" => self.lambda.to_string(),
            "energy_threshold" => self.energy_threshold.to_string(),
            "kernel.x" => self.kernel_x.to_string(),
            "kernel.y" => self.kernel_y.to_string(),
            "composite_mode" => self.composite_mode.to_string(),
            "embedding_form" => match self.embedding_form {
                EmbeddingForm::Alg1 => "alg1".into(),
                EmbeddingForm::Eq5 => "eq5".into(),
            },
            "tie_tolerance" => self.tie_tolerance.to_string(),
            "rw.clip_quantile" => self.clip_quantile.to_string(),
            "kcdc.kernel_in" => self.baselines.kcdc_input_kernel.to_string(),
            "kcdc.kernel_out" => self.baselines.kcdc_output_kernel.to_string(),
            "igci.reference" => self.baselines.igci_reference.to_string(),
            "anm.ridge" => self.baselines.anm_ridge.to_string(),
            "anm.kernel" => self.baselines.anm_kernel.to_string(),
            _ => return None,
        })
    }

    /// Canonical `key = value` rendering; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
            })?;
            self.set(key, value)
                .map_err(|e| Error::config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = KiimConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Stable short hash of the canonical rendering.
    pub fn digest(&self) -> String {
        digest_text(&self.to_text())
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn digest_text(text: &str) -> String {
    let hash = Sha256::digest(text.as_bytes());
    hex::encode(&hash[..8])
}
