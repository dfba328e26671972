//! Seeded generators for the five benchmark mechanisms.
//!
//! | mechanism | structural equation |
//! |-----------|---------------------|
//! | ANM-1 | `y = x³ + x + ε` |
//! | ANM-2 | `y = x + ε` |
//! | MNM-1 | `y = (x³ + x)·exp(ε)` |
//! | MNM-2 | `y = (sin(10x) + exp(3x))·exp(ε)` |
//! | CNM | `y = (ln(x + 10) + x²)^ε` |
//!
//! The cause is drawn from `N(0, 1)` by default. Uniform noise is `U(0, 1)` by default.
//! Both are configurable through [`SynthOptions`].

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Direction, PairedDataset, Provenance};
use crate::error::{Error, Result};

/// Redraws allowed per point when the CNM base is not positive.
pub const CNM_MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Anm1,
    Anm2,
    Mnm1,
    Mnm2,
    Cnm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    Gaussian,
    Uniform,
    #[serde(rename = "sqgaussian")]
    SquaredGaussian,
}

impl Mechanism {
    pub const ALL: [Mechanism; 5] = [
        Mechanism::Anm1,
        Mechanism::Anm2,
        Mechanism::Mnm1,
        Mechanism::Mnm2,
        Mechanism::Cnm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Anm1 => "anm1",
            Mechanism::Anm2 => "anm2",
            Mechanism::Mnm1 => "mnm1",
            Mechanism::Mnm2 => "mnm2",
            Mechanism::Cnm => "cnm",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Mechanism::Anm1 => "ANM-1",
            Mechanism::Anm2 => "ANM-2",
            Mechanism::Mnm1 => "MNM-1",
            Mechanism::Mnm2 => "MNM-2",
            Mechanism::Cnm => "CNM",
        }
    }

    /// Applies the structural equation. `None` when the CNM base is not positive.
    pub fn apply(self, x: f64, eps: f64) -> Option<f64> {
        Some(match self {
            Mechanism::Anm1 => x * x * x + x + eps,
            Mechanism::Anm2 => x + eps,
            Mechanism::Mnm1 => (x * x * x + x) * eps.exp(),
            Mechanism::Mnm2 => ((10.0 * x).sin() + (3.0 * x).exp()) * eps.exp(),
            Mechanism::Cnm => {
                let base = (x + 10.0).ln() + x * x;
                if !(base > 0.0) {
                    return None;
                }
                base.powf(eps)
            }
        })
    }
}

impl Noise {
    pub const ALL: [Noise; 3] = [Noise::Gaussian, Noise::Uniform, Noise::SquaredGaussian];

    pub fn name(self) -> &'static str {
        match self {
            Noise::Gaussian => "gaussian",
            Noise::Uniform => "uniform",
            Noise::SquaredGaussian => "sqgaussian",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Noise::Gaussian => "Gaussian",
            Noise::Uniform => "Uniform",
            Noise::SquaredGaussian => "squared-Gaussian",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Noise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn normalize_token(s: &str) -> String {
    s.trim().to_ascii_lowercase().replace(['-', '_'], "")
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = normalize_token(s);
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::config(format!("unknown mechanism {s:?}")))
    }
}

impl FromStr for Noise {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize_token(s).as_str() {
            "gaussian" | "g" => Ok(Noise::Gaussian),
            "uniform" | "u" => Ok(Noise::Uniform),
            "sqgaussian" | "squaredgaussian" | "sg" => Ok(Noise::SquaredGaussian),
            _ => Err(Error::config(format!("unknown noise family {s:?}"))),
        }
    }
}

/// A fully specified draw: mechanism, noise family, sample count, seed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub mechanism: Mechanism,
    pub noise: Noise,
    pub n: usize,
    pub seed: u64,
    /// Allows (mechanism, noise) combinations outside the benchmark grid.
    pub experimental: bool,
}

impl MechanismSpec {
    pub fn new(mechanism: Mechanism, noise: Noise, n: usize, seed: u64) -> Self {
        MechanismSpec {
            mechanism,
            noise,
            n,
            seed,
            experimental: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::argument(format!("n must be at least 2, got {}", self.n)));
        }
        if !self.experimental && !table1_grid().contains(&(self.mechanism, self.noise)) {
            return Err(Error::argument(format!(
                "{}/{} is not a benchmark cell; mark it experimental to generate it",
                self.mechanism, self.noise
            )));
        }
        Ok(())
    }
}

/// Distribution of the cause variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CauseDistribution {
    /// `N(0, 1)`.
    Gaussian,
    /// `U(lo, hi)`.
    Uniform { lo: f64, hi: f64 },
}

/// Generator settings that are not part of a benchmark cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub cause: CauseDistribution,
    /// Support of the Uniform noise family.
    pub uniform_noise: (f64, f64),
    /// Multiplies every noise draw. `0` makes the mechanisms deterministic.
    pub noise_scale: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            cause: CauseDistribution::Gaussian,
            uniform_noise: (0.0, 1.0),
            noise_scale: 1.0,
        }
    }
}

impl SynthOptions {
    pub fn validate(&self) -> Result<()> {
        if let CauseDistribution::Uniform { lo, hi } = self.cause {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::argument("cause range must satisfy lo < hi"));
            }
        }
        let (lo, hi) = self.uniform_noise;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::argument("uniform noise range must satisfy lo < hi"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::argument("noise scale must be finite and nonnegative"));
        }
        Ok(())
    }

    fn draw_cause(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self.cause {
            CauseDistribution::Gaussian => StandardNormal.sample(rng),
            CauseDistribution::Uniform { lo, hi } => rng.random_range(lo..hi),
        }
    }

    fn draw_noise(&self, noise: Noise, rng: &mut ChaCha8Rng) -> f64 {
        let e: f64 = match noise {
            Noise::Gaussian => StandardNormal.sample(rng),
            Noise::Uniform => rng.random_range(self.uniform_noise.0..self.uniform_noise.1),
            Noise::SquaredGaussian => {
                let z: f64 = StandardNormal.sample(rng);
                z * z
            }
        };
        e * self.noise_scale
    }
}

/// Generates with the default options.
pub fn generate(spec: &MechanismSpec) -> Result<PairedDataset> {
    generate_with(spec, &SynthOptions::default())
}

/// Draws `spec.n` points. Each point draws its cause and then its noise, so the stream is fixed by
/// the seed. A CNM point whose base is not positive redraws its cause.
pub fn generate_with(spec: &MechanismSpec, options: &SynthOptions) -> Result<PairedDataset> {
    spec.validate()?;
    options.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut xs = Vec::with_capacity(spec.n);
    let mut ys = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let mut point = None;
        for _ in 0..=CNM_MAX_RETRIES {
            let x = options.draw_cause(&mut rng);
            let eps = options.draw_noise(spec.noise, &mut rng);
            if let Some(y) = spec.mechanism.apply(x, eps).filter(|y| y.is_finite()) {
                point = Some((x, y));
                break;
            }
        }
        let (x, y) = point.ok_or_else(|| {
            Error::argument(format!(
                "{} produced no valid point in {CNM_MAX_RETRIES} retries",
                spec.mechanism.label()
            ))
        })?;
        xs.push(x);
        ys.push(y);
    }
    PairedDataset::with_provenance(xs, ys, Provenance::Synthetic(spec.clone()), Some(Direction::XtoY))
}

/// The ten (mechanism, noise) cells of the benchmark table, in table order.
pub fn table1_grid() -> Vec<(Mechanism, Noise)> {
    use Mechanism::*;
    use Noise::*;
    vec![
        (Anm1, Gaussian),
        (Anm1, Uniform),
        (Anm2, SquaredGaussian),
        (Anm2, Uniform),
        (Mnm1, Gaussian),
        (Mnm1, Uniform),
        (Mnm2, Gaussian),
        (Mnm2, Uniform),
        (Cnm, Gaussian),
        (Cnm, Uniform),
    ]
}

/// Seed of trial `trial` in grid cell `cell`.
///
/// The base seed is scrambled first so that nearby base seeds do not reuse each other's trials.
pub fn trial_seed(base: u64, cell: usize, trial: usize) -> u64 {
    splitmix64(base) ^ ((cell as u64) << 32) ^ trial as u64
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Binomial standard error of an accuracy estimate.
pub fn binomial_std(accuracy: f64, trials: usize) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    (accuracy * (1.0 - accuracy) / trials as f64).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::mean_std;

    #[test]
    fn grid_has_ten_cells() {
        let grid = table1_grid();
        assert_eq!(grid.len(), 10);
        assert!(grid.contains(&(Mechanism::Anm2, Noise::SquaredGaussian)));
        assert!(grid.contains(&(Mechanism::Cnm, Noise::Gaussian)));
        assert!(grid.contains(&(Mechanism::Cnm, Noise::Uniform)));
    }

    #[test]
    fn same_seed_same_data_and_distinct_seeds_differ() {
        let a = generate(&MechanismSpec::new(Mechanism::Mnm2, Noise::Gaussian, 50, 7)).unwrap();
        let b = generate(&MechanismSpec::new(Mechanism::Mnm2, Noise::Gaussian, 50, 7)).unwrap();
        let c = generate(&MechanismSpec::new(Mechanism::Mnm2, Noise::Gaussian, 50, 8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.xs(), c.xs());
        assert_eq!(a.ground_truth, Some(Direction::XtoY));
    }

    #[test]
    fn zero_noise_anm2_is_identity() {
        let spec = MechanismSpec::new(Mechanism::Anm2, Noise::Uniform, 30, 3);
        let opts = SynthOptions {
            noise_scale: 0.0,
            ..SynthOptions::default()
        };
        let d = generate_with(&spec, &opts).unwrap();
        assert_eq!(d.xs(), d.ys());
    }

    #[test]
    fn off_grid_needs_experimental_flag() {
        let mut spec = MechanismSpec::new(Mechanism::Anm1, Noise::SquaredGaussian, 20, 1);
        assert!(generate(&spec).is_err());
        spec.experimental = true;
        assert!(generate(&spec).is_ok());
        assert!(generate(&MechanismSpec::new(Mechanism::Anm1, Noise::Gaussian, 1, 1)).is_err());
    }

    #[test]
    fn cubic_amplifies_variance() {
        let d = generate(&MechanismSpec::new(Mechanism::Anm1, Noise::Gaussian, 100, 5)).unwrap();
        assert!(mean_std(d.ys()).1 > mean_std(d.xs()).1);
    }

    #[test]
    fn all_cells_finite_over_many_seeds() {
        for (cell, (m, noise)) in table1_grid().into_iter().enumerate() {
            for seed in 0..1000u64 {
                let spec = MechanismSpec::new(m, noise, 100, trial_seed(99, cell, seed as usize));
                let d = generate(&spec).unwrap();
                assert!(d.ys().iter().chain(d.xs()).all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn noise_moments_match_family() {
        // ANM-2 residuals y - x are exactly the noise draws.
        let n = 20_000;
        let check = |noise, mean: f64, var: f64| {
            let d = generate(&MechanismSpec::new(Mechanism::Anm2, noise, n, 17)).unwrap();
            let eps: Vec<f64> = d.ys().iter().zip(d.xs()).map(|(y, x)| y - x).collect();
            let (m, _) = mean_std(&eps);
            let stderr = (var / n as f64).sqrt();
            assert!((m - mean).abs() < 3.0 * stderr, "{noise}: mean {m}");
        };
        check(Noise::SquaredGaussian, 1.0, 2.0);
        check(Noise::Uniform, 0.5, 1.0 / 12.0);
        let spec = MechanismSpec {
            experimental: true,
            ..MechanismSpec::new(Mechanism::Anm2, Noise::Gaussian, n, 17)
        };
        let d = generate(&spec).unwrap();
        let eps: Vec<f64> = d.ys().iter().zip(d.xs()).map(|(y, x)| y - x).collect();
        let (m, s) = mean_std(&eps);
        assert!(m.abs() < 3.0 / (n as f64).sqrt());
        assert!((s - 1.0).abs() < 0.03);
    }

    #[test]
    fn uniform_cause_option() {
        let spec = MechanismSpec::new(Mechanism::Mnm2, Noise::Uniform, 200, 2);
        let opts = SynthOptions {
            cause: CauseDistribution::Uniform { lo: -1.0, hi: 1.0 },
            uniform_noise: (-1.0, 1.0),
            noise_scale: 1.0,
        };
        let d = generate_with(&spec, &opts).unwrap();
        assert!(d.xs().iter().all(|x| (-1.0..1.0).contains(x)));
    }

    #[test]
    fn names_roundtrip() {
        for m in Mechanism::ALL {
            assert_eq!(m.name().parse::<Mechanism>().unwrap(), m);
        }
        for n in Noise::ALL {
            assert_eq!(n.name().parse::<Noise>().unwrap(), n);
        }
        assert_eq!("ANM-1".parse::<Mechanism>().unwrap(), Mechanism::Anm1);
        assert!((binomial_std(0.5, 100) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn nearby_base_seeds_do_not_share_trials() {
        let a: std::collections::HashSet<u64> = (0..100).map(|t| trial_seed(0, 0, t)).collect();
        assert!((0..100).all(|t| !a.contains(&trial_seed(1, 0, t))));
        assert_ne!(trial_seed(0, 0, 1), trial_seed(0, 1, 1));
    }
}
