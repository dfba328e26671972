//! Command-line harness: single-pair inference, synthetic benchmarks, the cause-effect pairs
//! benchmark, the rank ablation, and the embedding-norm checks.

pub mod error;
pub mod experiments;
pub mod report;
pub mod svg;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use kiim_core::dataset::PairedDataset;
use kiim_core::synthdata::{generate_with, CauseDistribution, Mechanism, MechanismSpec, Noise, SynthOptions};
use kiim_core::tcep::EvalOptions;
use kiim_core::{infer_direction, Decision, KiimConfig, Method};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::experiments::{EmbeddedConfig, SyntheticSettings, SCHEMA};

#[derive(Debug, Parser)]
#[command(name = "kiim", version, about = "Cause-effect direction inference with kernel invariance scores")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Infer the direction of one two-column pair file and print the decision as JSON.
    Infer(InferArgs),
    /// Accuracy of each method on the synthetic benchmark grid.
    Synthetic(SyntheticArgs),
    /// Accuracy of each method on a cause-effect pairs directory.
    Tcep(TcepArgs),
    /// KIIM accuracy as a function of the number of discarded leading eigenvalues.
    Ablation(AblationArgs),
    /// Numerical checks of the embedding-norm properties.
    TheoryCheck(TheoryArgs),
    /// Write one synthetic dataset as a two-column text file.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub kernel_x: Option<String>,
    #[arg(long)]
    pub kernel_y: Option<String>,
    /// `product` or `sum`.
    #[arg(long)]
    pub composite_mode: Option<String>,
    #[arg(long)]
    pub energy_threshold: Option<String>,
    /// `alg1` or `eq5`.
    #[arg(long)]
    pub embedding_form: Option<String>,
    /// Any config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> CliResult<KiimConfig> {
        let mut config = KiimConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(CliError::io(path))?;
            config.apply_text(&text)?;
        }
        let flags = [
            ("lambda", &self.lambda),
            ("kernel.x", &self.kernel_x),
            ("kernel.y", &self.kernel_y),
            ("composite_mode", &self.composite_mode),
            ("energy_threshold", &self.energy_threshold),
            ("embedding_form", &self.embedding_form),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            config.set(k.trim(), v.trim())?;
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Cells as `mechanism/noise`, comma separated, or `all`.
    #[arg(long, default_value = "all")]
    pub cells: String,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cause distribution: `gaussian` (N(0,1)) or `uniform` (U(-1,1)).
    #[arg(long, default_value = "gaussian")]
    pub cause: String,
    /// Support of the Uniform noise family, `lo,hi`.
    #[arg(long, default_value = "0,1")]
    pub uniform_noise: String,
}

impl SynthArgs {
    fn options(&self) -> CliResult<SynthOptions> {
        let cause = match self.cause.as_str() {
            "gaussian" => CauseDistribution::Gaussian,
            "uniform" => CauseDistribution::Uniform { lo: -1.0, hi: 1.0 },
            other => return Err(CliError::Usage(format!("unknown cause distribution {other:?}"))),
        };
        let (lo, hi) = parse_range(&self.uniform_noise)?;
        let options = SynthOptions {
            cause,
            uniform_noise: (lo, hi),
            noise_scale: 1.0,
        };
        options.validate()?;
        Ok(options)
    }

    fn settings(&self, default_cells: &[(Mechanism, Noise)], methods: Vec<Method>) -> CliResult<SyntheticSettings> {
        if self.trials == 0 {
            return Err(CliError::Usage("--trials must be at least 1".into()));
        }
        let cells = if self.cells == "all" {
            default_cells.to_vec()
        } else {
            parse_cells(&self.cells)?
        };
        Ok(SyntheticSettings {
            cells,
            trials: self.trials,
            n: self.n,
            seed: self.seed,
            methods,
            options: self.options()?,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    pub file: PathBuf,
    #[arg(long, default_value = "kiim")]
    pub method: String,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    /// Comma separated method names, or `all`.
    #[arg(long, default_value = "all")]
    pub methods: String,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TcepArgs {
    pub dir: PathBuf,
    #[arg(long, default_value = "all")]
    pub methods: String,
    #[arg(long, default_value_t = 1000)]
    pub max_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[command(flatten)]
    pub synth: SynthArgs,
    #[arg(long, default_value_t = 10)]
    pub d_max: usize,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random densities for the equal-norm construction.
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    /// Random sample sets for the negation check.
    #[arg(long, default_value_t = 100)]
    pub sets: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub mechanism: String,
    #[arg(long)]
    pub noise: String,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "gaussian")]
    pub cause: String,
    #[arg(long, default_value = "0,1")]
    pub uniform_noise: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_range(s: &str) -> CliResult<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [lo, hi] => match (lo.parse(), hi.parse()) {
            (Ok(lo), Ok(hi)) => Ok((lo, hi)),
            _ => Err(CliError::Usage(format!("expected lo,hi numbers, got {s:?}"))),
        },
        _ => Err(CliError::Usage(format!("expected lo,hi, got {s:?}"))),
    }
}

pub fn parse_methods(s: &str) -> CliResult<Vec<Method>> {
    if s.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    let methods = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.parse::<Method>().map_err(CliError::from))
        .collect::<CliResult<Vec<_>>>()?;
    if methods.is_empty() {
        return Err(CliError::Usage("no methods selected".into()));
    }
    Ok(methods)
}

pub fn parse_cells(s: &str) -> CliResult<Vec<(Mechanism, Noise)>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let (m, n) = t
                .split_once('/')
                .ok_or_else(|| CliError::Usage(format!("cell must be mechanism/noise, got {t:?}")))?;
            Ok((m.parse()?, n.parse()?))
        })
        .collect()
}

fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Serialize)]
struct InferOutput {
    schema: u32,
    file: PathBuf,
    #[serde(flatten)]
    decision: kiim_core::CausalDecision,
    config: EmbeddedConfig,
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn print_written(files: &[PathBuf]) {
    for f in files {
        eprintln!("wrote {}", f.display());
    }
}

pub fn execute(command: Command) -> CliResult<i32> {
    match command {
        Command::Infer(a) => cmd_infer(&a),
        Command::Synthetic(a) => {
            let config = a.config.resolve()?;
            let methods = parse_methods(&a.methods)?;
            let settings = a.synth.settings(&kiim_core::synthdata::table1_grid(), methods)?;
            let report = with_jobs(a.run.jobs, || experiments::run_synthetic(&settings, &config))??;
            for c in &report.cells {
                println!(
                    "{:<6} {:<16} {:<13} {:.3} ± {:.3}",
                    c.mechanism.label(),
                    c.noise.label(),
                    c.method,
                    c.accuracy,
                    c.std
                );
            }
            print_written(&report::write_synthetic(&report, &a.run.out_dir)?.files);
            Ok(0)
        }
        Command::Tcep(a) => {
            let config = a.config.resolve()?;
            let methods = parse_methods(&a.methods)?;
            let options = EvalOptions {
                max_samples: a.max_samples,
                seed: a.seed,
            };
            let run = with_jobs(a.run.jobs, || experiments::run_tcep(&a.dir, &methods, &config, &options))??;
            println!(
                "loaded {}  excluded {}  flagged {}  evaluated {}",
                run.report.loaded,
                run.report.excluded.len(),
                run.report.flagged.len(),
                run.report.evaluated
            );
            for acc in &run.report.accuracies {
                println!(
                    "{:<13} accuracy {:.3}  weighted {:.3}",
                    acc.method, acc.accuracy, acc.weighted_accuracy
                );
            }
            print_written(&report::write_tcep(&run, &a.run.out_dir)?.files);
            Ok(0)
        }
        Command::Ablation(a) => {
            let config = a.config.resolve()?;
            let defaults = [(Mechanism::Anm1, Noise::Gaussian), (Mechanism::Mnm2, Noise::Gaussian)];
            let settings = a.synth.settings(&defaults, vec![Method::Kiim])?;
            let report = with_jobs(a.run.jobs, || experiments::run_ablation(&settings, a.d_max, &config))??;
            for r in &report.rows {
                println!(
                    "{:<6} {:<16} d={:<3} {:.3} ± {:.3}",
                    r.mechanism.label(),
                    r.noise.label(),
                    r.discard,
                    r.accuracy,
                    r.std
                );
            }
            print_written(&report::write_ablation(&report, &a.run.out_dir)?.files);
            Ok(0)
        }
        Command::TheoryCheck(a) => {
            let report = experiments::run_theory(a.seed, a.sets, a.draws)?;
            print!("{}", report::to_json(&report)?);
            Ok(0)
        }
        Command::Export(a) => {
            let synth = SynthArgs {
                cells: String::new(),
                trials: 1,
                n: a.n,
                seed: a.seed,
                cause: a.cause.clone(),
                uniform_noise: a.uniform_noise.clone(),
            };
            let mut spec = MechanismSpec::new(a.mechanism.parse()?, a.noise.parse()?, a.n, a.seed);
            spec.experimental = true;
            let data = generate_with(&spec, &synth.options()?)?;
            data.save(&a.out)?;
            print_written(&[a.out]);
            Ok(0)
        }
    }
}

fn cmd_infer(a: &InferArgs) -> CliResult<i32> {
    let config = a.config.resolve()?;
    let method: Method = a.method.parse()?;
    let data = PairedDataset::load(Path::new(&a.file))?;
    let decision = infer_direction(&data, method, &config)?;
    let code = if decision.direction == Decision::Undecided { 2 } else { 0 };
    let out = InferOutput {
        schema: SCHEMA,
        file: a.file.clone(),
        decision,
        config: EmbeddedConfig::new(&config),
    };
    print!("{}", report::to_json(&out)?);
    Ok(code)
}
