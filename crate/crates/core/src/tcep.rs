//! Loader and evaluation protocol for the Tuebingen cause-effect pairs directory layout.
//!
//! The directory holds `pairNNNN.txt` data files (whitespace-separated numeric columns) and a
//! `pairmeta.txt` whose rows read `id cause_start cause_end effect_start effect_end weight`, with
//! 1-based inclusive column ranges.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::KiimConfig;
use crate::dataset::{Direction, PairedDataset, Provenance};
use crate::error::{Error, Result};
use crate::kiim::{infer_direction, Decision, Method};
use crate::synthdata::{generate, Mechanism, MechanismSpec, Noise};

/// Pairs whose variables are multivariate.
pub const MULTIVARIATE_IDS: [u32; 6] = [52, 53, 54, 55, 71, 105];
/// Pairs with missing values.
pub const MISSING_VALUE_IDS: [u32; 3] = [81, 82, 83];
/// Pair without an annotated direction.
pub const NO_GROUND_TRUTH_IDS: [u32; 1] = [86];

/// Reason a pair is left out of the evaluation.
pub fn exclusion_reason(id: u32) -> Option<&'static str> {
    if MULTIVARIATE_IDS.contains(&id) {
        Some("multivariate")
    } else if MISSING_VALUE_IDS.contains(&id) {
        Some("missing values")
    } else if NO_GROUND_TRUTH_IDS.contains(&id) {
        Some("no ground truth")
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcepPair {
    pub id: u32,
    /// Oriented so that `xs` is the annotated cause. `None` when the file could not be used.
    pub dataset: Option<PairedDataset>,
    pub ground_truth: Direction,
    pub weight: f64,
    pub exclusion: Option<String>,
    /// Data problem found while loading a pair that is not excluded by id.
    pub flag: Option<String>,
}

impl TcepPair {
    pub fn is_usable(&self) -> bool {
        self.exclusion.is_none() && self.flag.is_none() && self.dataset.is_some()
    }
}

#[derive(Debug, Clone, Copy)]
struct MetaRow {
    id: u32,
    cause: (usize, usize),
    effect: (usize, usize),
    weight: f64,
}

fn ingestion(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Ingestion {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_meta(path: &Path) -> Result<Vec<MetaRow>> {
    let text = read(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 6 {
            return Err(ingestion(path, i + 1, format!("expected 6 fields, found {}", tokens.len())));
        }
        let int = |t: &str| -> Result<usize> {
            t.parse::<usize>()
                .map_err(|_| ingestion(path, i + 1, format!("not an integer: {t:?}")))
        };
        let weight: f64 = tokens[5]
            .parse()
            .map_err(|_| ingestion(path, i + 1, format!("not a number: {:?}", tokens[5])))?;
        let row = MetaRow {
            id: int(tokens[0])? as u32,
            cause: (int(tokens[1])?, int(tokens[2])?),
            effect: (int(tokens[3])?, int(tokens[4])?),
            weight,
        };
        if row.cause.0 == 0 || row.effect.0 == 0 || row.cause.0 > row.cause.1 || row.effect.0 > row.effect.1 {
            return Err(ingestion(path, i + 1, "invalid column range"));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn is_missing_token(t: &str) -> bool {
    matches!(t.to_ascii_lowercase().as_str(), "nan" | "na" | "?" | "-nan" | "inf" | "-inf")
}

enum PairData {
    Columns(Vec<Vec<f64>>),
    NonFinite(usize),
}

/// Parses a data file into rows of values. Missing-value tokens are reported, not fatal.
fn parse_pair_file(path: &Path) -> Result<PairData> {
    let text = read(path)?;
    let mut rows = Vec::new();
    let mut width = None;
    let mut first_bad = None;
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        match width {
            None => width = Some(tokens.len()),
            Some(w) if w != tokens.len() => {
                return Err(ingestion(path, i + 1, format!("expected {w} columns, found {}", tokens.len())))
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(tokens.len());
        for t in tokens {
            match t.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                Ok(_) => {
                    first_bad.get_or_insert(i + 1);
                    row.push(f64::NAN);
                }
                Err(_) if is_missing_token(t) => {
                    first_bad.get_or_insert(i + 1);
                    row.push(f64::NAN);
                }
                Err(_) => return Err(ingestion(path, i + 1, format!("non-numeric cell {t:?}"))),
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ingestion(path, 0, "no data rows"));
    }
    Ok(match first_bad {
        Some(line) => PairData::NonFinite(line),
        None => PairData::Columns(rows),
    })
}

pub fn pair_file_name(id: u32) -> String {
    format!("pair{id:04}.txt")
}

/// Loads every pair listed in `pairmeta.txt`, sorted by id.
pub fn load_tcep(dir: &Path) -> Result<Vec<TcepPair>> {
    let meta_path = dir.join("pairmeta.txt");
    if !meta_path.is_file() {
        return Err(ingestion(&meta_path, 0, "pairmeta.txt not found"));
    }
    let mut meta = parse_meta(&meta_path)?;
    meta.sort_by_key(|m| m.id);
    meta.par_iter().map(|m| load_pair(dir, m)).collect()
}

fn load_pair(dir: &Path, m: &MetaRow) -> Result<TcepPair> {
    let path: PathBuf = dir.join(pair_file_name(m.id));
    let exclusion = exclusion_reason(m.id).map(str::to_owned);
    let mut pair = TcepPair {
        id: m.id,
        dataset: None,
        ground_truth: Direction::XtoY,
        weight: m.weight,
        exclusion,
        flag: None,
    };
    let parsed = match parse_pair_file(&path) {
        Ok(p) => p,
        // Excluded pairs are recorded even when their files are unusable.
        Err(e) if pair.exclusion.is_some() && !matches!(e, Error::Io { .. }) => {
            pair.flag = Some(e.to_string());
            return Ok(pair);
        }
        Err(e) => return Err(e),
    };
    let rows = match parsed {
        PairData::Columns(rows) => rows,
        PairData::NonFinite(line) => {
            pair.flag = Some(format!("non-finite value at line {line}"));
            return Ok(pair);
        }
    };
    let univariate = m.cause.0 == m.cause.1 && m.effect.0 == m.effect.1;
    if !univariate {
        pair.flag.get_or_insert_with(|| "multivariate columns".into());
        return Ok(pair);
    }
    let width = rows[0].len();
    if m.cause.0 > width || m.effect.0 > width {
        return Err(ingestion(&path, 1, format!("metadata refers to a column beyond {width}")));
    }
    let xs = rows.iter().map(|r| r[m.cause.0 - 1]).collect();
    let ys = rows.iter().map(|r| r[m.effect.0 - 1]).collect();
    pair.dataset = Some(PairedDataset::with_provenance(
        xs,
        ys,
        Provenance::Tcep { id: m.id },
        Some(Direction::XtoY),
    )?);
    Ok(pair)
}

/// Seeded uniform subsample to at most `max` points, keeping the original order.
pub fn subsample(dataset: &PairedDataset, max: usize, seed: u64) -> PairedDataset {
    if dataset.len() <= max {
        return dataset.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, dataset.len(), max).into_vec();
    idx.sort_unstable();
    dataset.select(&idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub max_samples: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_samples: 1000,
            seed: 0,
        }
    }
}

/// Outcome for one (pair, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: u32,
    pub method: Method,
    pub score_xy: f64,
    pub score_yx: f64,
    pub decision: Decision,
    pub correct: bool,
    pub weight: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAccuracy {
    pub method: Method,
    pub evaluated: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub weighted_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcepReport {
    pub loaded: usize,
    pub excluded: Vec<u32>,
    pub flagged: Vec<u32>,
    pub evaluated: usize,
    pub records: Vec<PairRecord>,
    pub accuracies: Vec<MethodAccuracy>,
}

/// Scores every usable pair with every method. Undecided and errored outcomes count as incorrect.
pub fn evaluate_tcep(
    pairs: &[TcepPair],
    methods: &[Method],
    config: &KiimConfig,
    options: &EvalOptions,
) -> Result<TcepReport> {
    if methods.is_empty() {
        return Err(Error::argument("no methods selected"));
    }
    let usable: Vec<(&TcepPair, PairedDataset)> = pairs
        .iter()
        .filter(|p| p.is_usable())
        .map(|p| {
            let d = p.dataset.as_ref().expect("usable pair has data");
            (p, subsample(d, options.max_samples, options.seed ^ u64::from(p.id)))
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::argument("no usable pairs"));
    }
    let jobs: Vec<(usize, Method)> = (0..usable.len())
        .flat_map(|i| methods.iter().map(move |&m| (i, m)))
        .collect();
    let mut records: Vec<PairRecord> = jobs
        .par_iter()
        .map(|&(i, method)| {
            let (pair, data) = &usable[i];
            let truth = Some(pair.ground_truth);
            match infer_direction(data, method, config) {
                Ok(d) => PairRecord {
                    pair_id: pair.id,
                    method,
                    score_xy: d.score_xy,
                    score_yx: d.score_yx,
                    decision: d.direction,
                    correct: d.direction.direction() == truth,
                    weight: pair.weight,
                    error: None,
                },
                Err(e) => PairRecord {
                    pair_id: pair.id,
                    method,
                    score_xy: f64::NAN,
                    score_yx: f64::NAN,
                    decision: Decision::Undecided,
                    correct: false,
                    weight: pair.weight,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    records.sort_by_key(|r| (r.pair_id, methods.iter().position(|m| *m == r.method)));

    let mut per_method: BTreeMap<usize, (usize, usize, f64, f64)> = BTreeMap::new();
    for r in &records {
        let slot = methods.iter().position(|m| *m == r.method).expect("known method");
        let e = per_method.entry(slot).or_default();
        e.0 += 1;
        e.2 += r.weight;
        if r.correct {
            e.1 += 1;
            e.3 += r.weight;
        }
    }
    let accuracies = per_method
        .into_iter()
        .map(|(slot, (total, correct, w_total, w_correct))| MethodAccuracy {
            method: methods[slot],
            evaluated: total,
            correct,
            accuracy: correct as f64 / total as f64,
            weighted_accuracy: if w_total > 0.0 { w_correct / w_total } else { 0.0 },
        })
        .collect();

    Ok(TcepReport {
        loaded: pairs.len(),
        excluded: pairs.iter().filter(|p| p.exclusion.is_some()).map(|p| p.id).collect(),
        flagged: pairs
            .iter()
            .filter(|p| p.exclusion.is_none() && p.flag.is_some())
            .map(|p| p.id)
            .collect(),
        evaluated: usable.len(),
        records,
        accuracies,
    })
}

/// Writes a 108-pair directory in the published layout, filled with synthetic data.
///
/// Multivariate pairs get four columns, pairs with missing values contain `NaN` cells, and the
/// cause column is placed second for every third pair so that orientation handling is exercised.
pub fn write_fixture_directory(dir: &Path, n: usize, seed: u64) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let cells = [
        (Mechanism::Anm1, Noise::Gaussian),
        (Mechanism::Mnm1, Noise::Uniform),
        (Mechanism::Mnm2, Noise::Gaussian),
        (Mechanism::Cnm, Noise::Uniform),
        (Mechanism::Anm1, Noise::Uniform),
    ];
    let mut meta = String::new();
    for id in 1..=108u32 {
        let (m, noise) = cells[id as usize % cells.len()];
        let d = generate(&MechanismSpec::new(m, noise, n, seed ^ u64::from(id)))?;
        let swap = id % 3 == 0;
        let mut body = String::new();
        if MULTIVARIATE_IDS.contains(&id) {
            for (x, y) in d.xs().iter().zip(d.ys()) {
                body.push_str(&format!("{x} {} {y} {}\n", x * 0.5, y * 2.0));
            }
            meta.push_str(&format!("{id:04} 1 2 3 4 1\n"));
        } else {
            for (k, (x, y)) in d.xs().iter().zip(d.ys()).enumerate() {
                let y = if MISSING_VALUE_IDS.contains(&id) && k == 3 {
                    "NaN".to_string()
                } else {
                    y.to_string()
                };
                if swap {
                    body.push_str(&format!("{y}\t{x}\n"));
                } else {
                    body.push_str(&format!("{x}\t{y}\n"));
                }
            }
            let weight = if id % 2 == 0 { 0.5 } else { 1.0 };
            if swap {
                meta.push_str(&format!("{id:04} 2 2 1 1 {weight}\n"));
            } else {
                meta.push_str(&format!("{id:04} 1 1 2 2 {weight}\n"));
            }
        }
        let path = dir.join(pair_file_name(id));
        fs::write(&path, body).map_err(io(&path))?;
    }
    let path = dir.join("pairmeta.txt");
    fs::write(&path, meta).map_err(io(&path))?;
    Ok(())
}
