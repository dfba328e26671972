//! Experiment runners. Each returns a plain report value; writing files is left to `report`.

use std::collections::BTreeMap;
use std::time::Instant;

use kiim_core::config::KEYS;
use kiim_core::kernels::KernelSpec;
use kiim_core::kiim::{rank_ablation, DirectionScore};
use kiim_core::synthdata::{
    binomial_std, generate_with, table1_grid, trial_seed, Mechanism, MechanismSpec, Noise, SynthOptions,
};
use kiim_core::tcep::{evaluate_tcep, load_tcep, EvalOptions, TcepReport};
use kiim_core::theory::{equal_norm_sweep, skewed_samples, verify_lemma1, verify_lemma1_with, SweepSummary};
use kiim_core::{infer_direction, Decision, KiimConfig, Method};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CliResult;

pub const SCHEMA: u32 = 1;

/// The resolved configuration as it appears in every report.
#[derive(Debug, Clone, Serialize)]
pub struct EmbeddedConfig {
    pub digest: String,
    pub values: BTreeMap<String, String>,
}

impl EmbeddedConfig {
    pub fn new(config: &KiimConfig) -> Self {
        EmbeddedConfig {
            digest: config.digest(),
            values: KEYS
                .iter()
                .map(|k| (k.to_string(), config.get(k).expect("known key")))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSettings {
    pub cells: Vec<(Mechanism, Noise)>,
    pub trials: usize,
    pub n: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub options: SynthOptions,
}

impl SyntheticSettings {
    pub fn new(cells: Vec<(Mechanism, Noise)>, methods: Vec<Method>) -> Self {
        SyntheticSettings {
            cells,
            trials: 100,
            n: 100,
            seed: 0,
            methods,
            options: SynthOptions::default(),
        }
    }
}

/// Index of a cell within the full benchmark grid, used to derive trial seeds, so a cell's data do
/// not depend on which other cells were selected.
fn grid_index(cell: (Mechanism, Noise)) -> usize {
    let grid = table1_grid();
    grid.iter().position(|c| *c == cell).unwrap_or_else(|| {
        grid.len() + Mechanism::ALL.iter().position(|m| *m == cell.0).unwrap() * 3
            + Noise::ALL.iter().position(|n| *n == cell.1).unwrap()
    })
}

fn cell_spec(cell: (Mechanism, Noise), n: usize, seed: u64, trial: usize) -> MechanismSpec {
    let mut spec = MechanismSpec::new(cell.0, cell.1, n, trial_seed(seed, grid_index(cell), trial));
    spec.experimental = !table1_grid().contains(&cell);
    spec
}

#[derive(Debug, Clone, Serialize)]
pub struct CellAccuracy {
    pub mechanism: Mechanism,
    pub noise: Noise,
    pub method: Method,
    pub trials: usize,
    pub correct: usize,
    pub errors: usize,
    pub accuracy: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SyntheticReport {
    pub schema: u32,
    pub command: &'static str,
    pub config: EmbeddedConfig,
    pub options: SynthOptions,
    pub trials: usize,
    pub n: usize,
    pub seed: u64,
    pub cells: Vec<CellAccuracy>,
    /// Smallest `min eigenvalue / trace` seen over every spectral score in the run.
    pub worst_min_eigen_ratio: f64,
    pub elapsed_seconds: f64,
}

impl SyntheticReport {
    pub fn accuracy(&self, mechanism: Mechanism, noise: Noise, method: Method) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.mechanism == mechanism && c.noise == noise && c.method == method)
            .map(|c| c.accuracy)
    }
}

struct TrialOutcome {
    correct: bool,
    error: Option<String>,
    min_ratio: f64,
}

fn eigen_ratio(d: &Option<DirectionScore>) -> f64 {
    match d {
        Some(s) if s.trace > 0.0 => s.min_eigenvalue / s.trace,
        _ => 0.0,
    }
}

/// Accuracy of every method on every selected cell. Trials run in parallel; output order is fixed.
pub fn run_synthetic(settings: &SyntheticSettings, config: &KiimConfig) -> CliResult<SyntheticReport> {
    let start = Instant::now();
    let jobs: Vec<(usize, usize)> = (0..settings.cells.len())
        .flat_map(|c| (0..settings.trials).map(move |t| (c, t)))
        .collect();
    let outcomes: Vec<CliResult<Vec<TrialOutcome>>> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let spec = cell_spec(settings.cells[c], settings.n, settings.seed, t);
            let data = generate_with(&spec, &settings.options)?;
            Ok(settings
                .methods
                .iter()
                .map(|&m| match infer_direction(&data, m, config) {
                    Ok(d) => TrialOutcome {
                        correct: d.direction == Decision::XtoY,
                        error: None,
                        min_ratio: eigen_ratio(&d.diagnostics_xy).min(eigen_ratio(&d.diagnostics_yx)),
                    },
                    Err(e) => TrialOutcome {
                        correct: false,
                        error: Some(e.to_string()),
                        min_ratio: 0.0,
                    },
                })
                .collect())
        })
        .collect();

    let mut tallies = vec![(0usize, 0usize); settings.cells.len() * settings.methods.len()];
    let mut worst = 0.0f64;
    for (&(c, t), outcome) in jobs.iter().zip(outcomes) {
        for (k, o) in outcome?.into_iter().enumerate() {
            let slot = &mut tallies[c * settings.methods.len() + k];
            if o.correct {
                slot.0 += 1;
            }
            if let Some(e) = o.error {
                slot.1 += 1;
                let (m, nz) = settings.cells[c];
                eprintln!("trial {t} of {m}/{nz} with {}: {e}", settings.methods[k]);
            }
            worst = worst.min(o.min_ratio);
        }
    }
    let cells = settings
        .cells
        .iter()
        .enumerate()
        .flat_map(|(c, &(mechanism, noise))| {
            settings.methods.iter().enumerate().map(move |(k, &method)| (c, k, mechanism, noise, method))
        })
        .map(|(c, k, mechanism, noise, method)| {
            let (correct, errors) = tallies[c * settings.methods.len() + k];
            let accuracy = correct as f64 / settings.trials as f64;
            CellAccuracy {
                mechanism,
                noise,
                method,
                trials: settings.trials,
                correct,
                errors,
                accuracy,
                std: binomial_std(accuracy, settings.trials),
            }
        })
        .collect();
    Ok(SyntheticReport {
        schema: SCHEMA,
        command: "synthetic",
        config: EmbeddedConfig::new(config),
        options: settings.options,
        trials: settings.trials,
        n: settings.n,
        seed: settings.seed,
        cells,
        worst_min_eigen_ratio: worst,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub mechanism: Mechanism,
    pub noise: Noise,
    pub discard: usize,
    pub trials: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub schema: u32,
    pub command: &'static str,
    pub config: EmbeddedConfig,
    pub options: SynthOptions,
    pub trials: usize,
    pub n: usize,
    pub seed: u64,
    pub d_max: usize,
    pub rows: Vec<AblationRow>,
    pub elapsed_seconds: f64,
}

impl AblationReport {
    pub fn accuracy(&self, mechanism: Mechanism, noise: Noise, discard: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.mechanism == mechanism && r.noise == noise && r.discard == discard)
            .map(|r| r.accuracy)
    }
}

/// KIIM accuracy with exactly `d` leading eigenvalues discarded, for `d = 0..=d_max`.
pub fn run_ablation(settings: &SyntheticSettings, d_max: usize, config: &KiimConfig) -> CliResult<AblationReport> {
    let start = Instant::now();
    let jobs: Vec<(usize, usize)> = (0..settings.cells.len())
        .flat_map(|c| (0..settings.trials).map(move |t| (c, t)))
        .collect();
    let outcomes: Vec<CliResult<Vec<bool>>> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let spec = cell_spec(settings.cells[c], settings.n, settings.seed, t);
            let data = generate_with(&spec, &settings.options)?;
            Ok(match rank_ablation(&data, d_max, config) {
                Ok(points) => points.iter().map(|p| p.decision == Decision::XtoY).collect(),
                Err(e) => {
                    eprintln!("ablation trial {t}: {e}");
                    vec![false; d_max + 1]
                }
            })
        })
        .collect();
    let mut counts = vec![0usize; settings.cells.len() * (d_max + 1)];
    for (&(c, _), outcome) in jobs.iter().zip(outcomes) {
        for (d, ok) in outcome?.into_iter().enumerate() {
            if ok {
                counts[c * (d_max + 1) + d] += 1;
            }
        }
    }
    let mut rows = Vec::new();
    for (c, &(mechanism, noise)) in settings.cells.iter().enumerate() {
        for d in 0..=d_max {
            let correct = counts[c * (d_max + 1) + d];
            let accuracy = correct as f64 / settings.trials as f64;
            rows.push(AblationRow {
                mechanism,
                noise,
                discard: d,
                trials: settings.trials,
                correct,
                accuracy,
                std: binomial_std(accuracy, settings.trials),
            });
        }
    }
    Ok(AblationReport {
        schema: SCHEMA,
        command: "ablation",
        config: EmbeddedConfig::new(config),
        options: settings.options,
        trials: settings.trials,
        n: settings.n,
        seed: settings.seed,
        d_max,
        rows,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TcepRun {
    pub schema: u32,
    pub command: &'static str,
    pub config: EmbeddedConfig,
    pub options: EvalOptions,
    pub report: TcepReport,
    pub elapsed_seconds: f64,
}

pub fn run_tcep(
    dir: &std::path::Path,
    methods: &[Method],
    config: &KiimConfig,
    options: &EvalOptions,
) -> CliResult<TcepRun> {
    let start = Instant::now();
    let pairs = load_tcep(dir)?;
    let report = evaluate_tcep(&pairs, methods, config, options)?;
    Ok(TcepRun {
        schema: SCHEMA,
        command: "tcep",
        config: EmbeddedConfig::new(config),
        options: *options,
        report,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelGap {
    pub kernel: String,
    pub stationary: bool,
    pub max_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub schema: u32,
    pub command: &'static str,
    pub seed: u64,
    pub sample_sets: usize,
    pub negation_gaps: Vec<KernelGap>,
    pub equal_norm: SweepSummary,
    pub tangency_rate: f64,
}

/// Negation gaps on `sets` skewed sample sets for each kernel, and the equal-norm sweep.
pub fn run_theory(seed: u64, sets: usize, draws: usize) -> CliResult<TheoryReport> {
    let kernels = [
        KernelSpec::rbf_median(),
        KernelSpec::Log,
        KernelSpec::RationalQuadratic,
        KernelSpec::Polynomial { degree: 3 },
    ];
    let samples: Vec<Vec<f64>> = (0..sets)
        .map(|i| skewed_samples(seed ^ i as u64, 20 + i % 30))
        .collect();
    let mut negation_gaps = Vec::new();
    for spec in &kernels {
        let mut max_gap = 0.0f64;
        for s in &samples {
            max_gap = max_gap.max(verify_lemma1(s, spec)?.gap);
        }
        negation_gaps.push(KernelGap {
            kernel: spec.to_string(),
            stationary: spec.is_stationary(),
            max_gap,
        });
    }
    let shifted = samples
        .iter()
        .map(|s| verify_lemma1_with(s, |a, b| ((a + 1.0) * (b + 1.0) + 1.0).powi(3)).gap)
        .fold(0.0f64, f64::max);
    negation_gaps.push(KernelGap {
        kernel: "((x+1)(x'+1)+1)^3".into(),
        stationary: false,
        max_gap: shifted,
    });
    let equal_norm = equal_norm_sweep(seed, draws);
    Ok(TheoryReport {
        schema: SCHEMA,
        command: "theory-check",
        seed,
        sample_sets: sets,
        negation_gaps,
        tangency_rate: if draws > 0 {
            equal_norm.tangencies as f64 / draws as f64
        } else {
            0.0
        },
        equal_norm,
    })
}
