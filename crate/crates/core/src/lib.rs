//! Cause-effect direction inference for pairs of scalar variables.
//!
//! The central score is the kernel intrinsic invariance measure ([`kiim`]): conditional mean
//! embeddings of the effect given each cause sample are compared after projecting out their
//! dominant directions, and the direction whose embeddings vary less is preferred. KCDC, IGCI and
//! ANM baselines ([`baselines`]) share the same decision contract. [`synthdata`] and [`tcep`]
//! provide benchmark data and [`theory`] checks two facts about embedding norms numerically.

pub mod baselines;
pub mod config;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod kernels;
pub mod kiim;
pub mod linalg;
pub mod synthdata;
pub mod tcep;
pub mod theory;

pub use config::KiimConfig;
pub use dataset::{Direction, PairedDataset};
pub use error::{Error, Result};
pub use kernels::{CompositeMode, KernelSpec};
pub use kiim::{infer_direction, CausalDecision, Decision, Method};
