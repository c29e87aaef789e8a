//! Batch orchestration of the full pipeline with cached artifacts.
//!
//! An experiment is a hyperparameter grid over one benchmark function. Every
//! row trains (or reloads) a network, then runs the enabled stages in order
//! train -> scale -> bounds -> obbt -> regions -> solve, persisting each
//! artifact under `<out>/<config-hash>/`. Rows already on disk are reused, so
//! a rerun with an unchanged spec recomputes nothing and reproduces the
//! report byte for byte.

use crate::benchfn::{generate, BenchmarkFunction, BenchmarkId};
use crate::bounds::{classify, ia_bounds, BoundsSet};
use crate::milp::{obbt, solve_min, BnbOptions, BnbResult, ObbtOptions};
use crate::network::{ActivationKind, Network};
use crate::regions::{enumerate, EnumerateOptions};
use crate::scaling::scale_network;
use crate::trainer::{train, TrainConfig, TrainReport};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Activation vocabulary of the training grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationSpec {
    Relu,
    /// Clipped ReLU with threshold 2.
    Relu2,
    /// Clipped ReLU with threshold 5.
    Relu5,
}

impl ActivationSpec {
    pub fn kind(&self) -> ActivationKind {
        match self {
            ActivationSpec::Relu => ActivationKind::Relu,
            ActivationSpec::Relu2 => ActivationKind::ClippedRelu { clip: 2.0 },
            ActivationSpec::Relu5 => ActivationKind::ClippedRelu { clip: 5.0 },
        }
    }
}

impl std::str::FromStr for ActivationSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(ActivationSpec::Relu),
            "relu2" => Ok(ActivationSpec::Relu2),
            "relu5" => Ok(ActivationSpec::Relu5),
            other => Err(format!("unknown activation {other:?} (expected relu, relu2 or relu5)")),
        }
    }
}

impl std::fmt::Display for ActivationSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ActivationSpec::Relu => write!(f, "relu"),
            ActivationSpec::Relu2 => write!(f, "relu2"),
            ActivationSpec::Relu5 => write!(f, "relu5"),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StageToggles {
    pub scale: bool,
    pub obbt: bool,
    pub regions: bool,
    pub solve: bool,
    /// Solve twice (IA and tightened bounds) to enable time-ratio aggregates.
    pub solve_both_arms: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles { scale: true, obbt: true, regions: true, solve: false, solve_both_arms: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub benchmark: BenchmarkId,
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub activations: Vec<ActivationSpec>,
    pub lambdas: Vec<f64>,
    pub dropouts: Vec<f64>,
    pub seeds: Vec<u64>,
    pub samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub stages: StageToggles,
    pub time_limit_secs: f64,
    pub max_regions: usize,
    /// Allow grid values outside the documented vocabulary.
    pub unsafe_grid: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            benchmark: BenchmarkId::Peaks,
            depths: (1..=5).collect(),
            widths: vec![25],
            activations: vec![ActivationSpec::Relu],
            lambdas: vec![0.0, 1e-5, 1e-4],
            dropouts: vec![0.0, 0.2],
            seeds: vec![0, 1],
            samples: 20_000,
            epochs: 300,
            batch_size: 256,
            learning_rate: 1e-3,
            stages: StageToggles::default(),
            time_limit_secs: 300.0,
            max_regions: 100_000,
            unsafe_grid: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("grid value outside the documented vocabulary: {0} (pass --unsafe-grid to override)")]
    GridVocabulary(String),
    #[error("io error at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Other(String),
}

const LAMBDA_VOCAB: [f64; 6] = [0.0, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3];
const DROPOUT_VOCAB: [f64; 3] = [0.0, 0.1, 0.2];

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.unsafe_grid {
            return Ok(());
        }
        for &d in &self.depths {
            if !(1..=10).contains(&d) {
                return Err(ExperimentError::GridVocabulary(format!("depth {d}")));
            }
        }
        for &w in &self.widths {
            if w != 25 && w != 50 {
                return Err(ExperimentError::GridVocabulary(format!("width {w}")));
            }
        }
        for &l in &self.lambdas {
            if !LAMBDA_VOCAB.contains(&l) {
                return Err(ExperimentError::GridVocabulary(format!("lambda {l}")));
            }
        }
        for &d in &self.dropouts {
            if !DROPOUT_VOCAB.contains(&d) {
                return Err(ExperimentError::GridVocabulary(format!("dropout {d}")));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> Vec<RowConfig> {
        let mut rows = Vec::new();
        for &depth in &self.depths {
            for &width in &self.widths {
                for &activation in &self.activations {
                    for &lambda in &self.lambdas {
                        for &dropout in &self.dropouts {
                            for &seed in &self.seeds {
                                rows.push(RowConfig {
                                    benchmark: self.benchmark,
                                    depth,
                                    width,
                                    activation,
                                    lambda,
                                    dropout,
                                    seed,
                                    samples: self.samples,
                                    epochs: self.epochs,
                                    batch_size: self.batch_size,
                                    learning_rate: self.learning_rate,
                                });
                            }
                        }
                    }
                }
            }
        }
        rows
    }
}

/// One grid point; hashing its canonical JSON names the artifact directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowConfig {
    pub benchmark: BenchmarkId,
    pub depth: usize,
    pub width: usize,
    pub activation: ActivationSpec,
    pub lambda: f64,
    pub dropout: f64,
    pub seed: u64,
    pub samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl RowConfig {
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("row config serializes");
        format!("{:016x}", fnv1a(canon.as_bytes()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden_layers: self.depth,
            width: self.width,
            activation: self.activation.kind(),
            l1_lambda: self.lambda,
            dropout_rate: self.dropout,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowResult {
    pub config: RowConfig,
    pub hash: String,
    pub test_mape: Option<f64>,
    pub width_ia: Option<f64>,
    pub width_obbt: Option<f64>,
    pub width_scaled_ia: Option<f64>,
    pub width_scaled_obbt: Option<f64>,
    pub stable_ia: Option<f64>,
    pub stable_obbt: Option<f64>,
    pub stable_scaled_ia: Option<f64>,
    pub stable_scaled_obbt: Option<f64>,
    pub regions: Option<usize>,
    pub solve: Option<BnbResult>,
    pub solve_ia: Option<BnbResult>,
    pub errors: Vec<String>,
}

/// Table-2-shaped aggregate: adapted arm compared against its baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateBlock {
    pub label: String,
    pub n_pairs: usize,
    pub solved_adapted: Option<usize>,
    pub solved_baseline: Option<usize>,
    pub geo_mean_width_ratio: Option<f64>,
    pub mean_stable_delta: Option<f64>,
    pub geo_mean_region_ratio: Option<f64>,
    pub geo_mean_time_ratio: Option<f64>,
    /// Pairs solved to optimality in both arms (time ratios use only these).
    pub n_time_pairs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub rows: Vec<RowResult>,
    pub aggregates: Vec<AggregateBlock>,
}

/// Geometric mean over strictly positive ratios; `None` when nothing survives.
pub fn geometric_mean<I: IntoIterator<Item = f64>>(ratios: I) -> Option<f64> {
    let mut log_sum = 0.0;
    let mut n = 0usize;
    for r in ratios {
        if r > 0.0 && r.is_finite() {
            log_sum += r.ln();
            n += 1;
        }
    }
    if n == 0 {
        None
    } else {
        Some((log_sum / n as f64).exp())
    }
}

fn mean<I: IntoIterator<Item = f64>>(vals: I) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in vals {
        sum += v;
        n += 1;
    }
    if n == 0 {
        None
    } else {
        Some(sum / n as f64)
    }
}

/// A (baseline, adapted) pair of rows for aggregation.
pub struct RowPair<'a> {
    pub baseline: &'a RowResult,
    pub adapted: &'a RowResult,
}

/// Builds the Table-2-shaped block from explicit pairs.
pub fn aggregate(label: &str, pairs: &[RowPair<'_>]) -> AggregateBlock {
    let width_ratios = pairs.iter().filter_map(|p| match (p.adapted.width_ia, p.baseline.width_ia) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    });
    let stable_deltas = pairs.iter().filter_map(|p| match (p.adapted.stable_ia, p.baseline.stable_ia) {
        (Some(a), Some(b)) => Some(a - b),
        _ => None,
    });
    let region_ratios = pairs.iter().filter_map(|p| match (p.adapted.regions, p.baseline.regions) {
        (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
        _ => None,
    });
    let solved = |r: &RowResult| {
        r.solve.as_ref().map(|s| matches!(s.status, crate::milp::BnbStatus::Optimal)).unwrap_or(false)
    };
    let time_pairs: Vec<(f64, f64)> = pairs
        .iter()
        .filter(|p| solved(p.adapted) && solved(p.baseline))
        .filter_map(|p| {
            let a = p.adapted.solve.as_ref()?.wall_secs;
            let b = p.baseline.solve.as_ref()?.wall_secs;
            Some((a, b))
        })
        .collect();
    let any_solve = pairs.iter().any(|p| p.adapted.solve.is_some() || p.baseline.solve.is_some());
    AggregateBlock {
        label: label.to_string(),
        n_pairs: pairs.len(),
        solved_adapted: any_solve.then(|| pairs.iter().filter(|p| solved(p.adapted)).count()),
        solved_baseline: any_solve.then(|| pairs.iter().filter(|p| solved(p.baseline)).count()),
        geo_mean_width_ratio: geometric_mean(width_ratios),
        mean_stable_delta: mean(stable_deltas),
        geo_mean_region_ratio: geometric_mean(region_ratios),
        geo_mean_time_ratio: geometric_mean(time_pairs.iter().map(|(a, b)| if *b > 0.0 { a / b } else { -1.0 })),
        n_time_pairs: time_pairs.len(),
    }
}

/// Within-row comparison of bound provenances (OBBT vs IA, scaled vs plain).
fn aggregate_within(label: &str, rows: &[RowResult], pick: fn(&RowResult) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>)) -> AggregateBlock {
    let mut width_ratios = Vec::new();
    let mut stable_deltas = Vec::new();
    let mut time_ratios = Vec::new();
    let mut n_pairs = 0usize;
    for r in rows {
        let (w_base, w_new, s_base, s_new) = pick(r);
        if let (Some(wb), Some(wn)) = (w_base, w_new) {
            n_pairs += 1;
            if wb > 0.0 {
                width_ratios.push(wn / wb);
            }
            if let (Some(sb), Some(sn)) = (s_base, s_new) {
                stable_deltas.push(sn - sb);
            }
        }
        if let (Some(a), Some(b)) = (&r.solve, &r.solve_ia) {
            use crate::milp::BnbStatus::Optimal;
            if matches!(a.status, Optimal) && matches!(b.status, Optimal) && b.wall_secs > 0.0 {
                time_ratios.push(a.wall_secs / b.wall_secs);
            }
        }
    }
    let n_time_pairs = time_ratios.len();
    AggregateBlock {
        label: label.to_string(),
        n_pairs,
        solved_adapted: None,
        solved_baseline: None,
        geo_mean_width_ratio: geometric_mean(width_ratios),
        mean_stable_delta: mean(stable_deltas),
        geo_mean_region_ratio: None,
        geo_mean_time_ratio: geometric_mean(time_ratios),
        n_time_pairs,
    }
}

fn key_without_lambda(c: &RowConfig) -> String {
    format!("{}|{}|{}|{}|{}|{}", c.benchmark, c.depth, c.width, c.activation, c.dropout, c.seed)
}

fn key_without_dropout(c: &RowConfig) -> String {
    format!("{}|{}|{}|{}|{}|{}", c.benchmark, c.depth, c.width, c.activation, c.lambda, c.seed)
}

pub fn build_aggregates(rows: &[RowResult]) -> Vec<AggregateBlock> {
    let mut blocks = Vec::new();

    // Regularization levels vs lambda = 0 twins.
    let mut lambdas: Vec<f64> = rows.iter().map(|r| r.config.lambda).filter(|&l| l > 0.0).collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    for lam in lambdas {
        let baselines: BTreeMap<String, &RowResult> = rows
            .iter()
            .filter(|r| r.config.lambda == 0.0)
            .map(|r| (key_without_lambda(&r.config), r))
            .collect();
        let pairs: Vec<RowPair> = rows
            .iter()
            .filter(|r| r.config.lambda == lam)
            .filter_map(|adapted| {
                baselines
                    .get(&key_without_lambda(&adapted.config))
                    .map(|baseline| RowPair { baseline, adapted })
            })
            .collect();
        if !pairs.is_empty() {
            blocks.push(aggregate(&format!("lambda={lam:e}"), &pairs));
        }
    }

    // Dropout levels vs dropout = 0 twins.
    let mut drops: Vec<f64> = rows.iter().map(|r| r.config.dropout).filter(|&d| d > 0.0).collect();
    drops.sort_by(f64::total_cmp);
    drops.dedup();
    for d in drops {
        let baselines: BTreeMap<String, &RowResult> = rows
            .iter()
            .filter(|r| r.config.dropout == 0.0)
            .map(|r| (key_without_dropout(&r.config), r))
            .collect();
        let pairs: Vec<RowPair> = rows
            .iter()
            .filter(|r| r.config.dropout == d)
            .filter_map(|adapted| {
                baselines
                    .get(&key_without_dropout(&adapted.config))
                    .map(|baseline| RowPair { baseline, adapted })
            })
            .collect();
        if !pairs.is_empty() {
            blocks.push(aggregate(&format!("dropout={d}"), &pairs));
        }
    }

    // Within-row provenance comparisons.
    blocks.push(aggregate_within("obbt_vs_ia", rows, |r| (r.width_ia, r.width_obbt, r.stable_ia, r.stable_obbt)));
    blocks.push(aggregate_within("scaled_ia_vs_ia", rows, |r| {
        (r.width_ia, r.width_scaled_ia, r.stable_ia, r.stable_scaled_ia)
    }));
    blocks.push(aggregate_within("scaled_obbt_vs_ia", rows, |r| {
        (r.width_ia, r.width_scaled_obbt, r.stable_ia, r.stable_scaled_obbt)
    }));
    blocks
}

fn write_file(path: &Path, text: &str) -> Result<(), ExperimentError> {
    std::fs::write(path, text).map_err(|source| ExperimentError::Io { path: path.display().to_string(), source })
}

fn read_file(path: &Path) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.display().to_string(), source })
}

/// Runs one row with artifact caching; never panics on stage failure, the
/// error lands in `RowResult::errors` instead.
pub fn run_row(spec: &ExperimentSpec, config: &RowConfig, out: &Path) -> Result<RowResult, ExperimentError> {
    let hash = config.hash();
    let dir = out.join(&hash);
    std::fs::create_dir_all(&dir).map_err(|source| ExperimentError::Io { path: dir.display().to_string(), source })?;

    let mut result = RowResult {
        config: config.clone(),
        hash: hash.clone(),
        test_mape: None,
        width_ia: None,
        width_obbt: None,
        width_scaled_ia: None,
        width_scaled_obbt: None,
        stable_ia: None,
        stable_obbt: None,
        stable_scaled_ia: None,
        stable_scaled_obbt: None,
        regions: None,
        solve: None,
        solve_ia: None,
        errors: Vec::new(),
    };

    let row_json = dir.join("row.json");
    if !row_json.exists() {
        write_file(&row_json, &serde_json::to_string_pretty(config).unwrap())?;
    }

    // Train or reload.
    let net_path = dir.join("network.json");
    let report_path = dir.join("train-report.json");
    let net = if net_path.exists() && report_path.exists() {
        match (Network::load(&net_path), serde_json::from_str::<TrainReport>(&read_file(&report_path)?)) {
            (Ok(net), Ok(report)) => {
                result.test_mape = Some(report.test_mape);
                Some(net)
            }
            _ => None,
        }
    } else {
        None
    };
    let net = match net {
        Some(n) => n,
        None => {
            let f = BenchmarkFunction::new(config.benchmark);
            let data = match generate(&f, config.samples, config.seed) {
                Ok(d) => d,
                Err(e) => {
                    result.errors.push(format!("dataset: {e}"));
                    return Ok(result);
                }
            };
            match train(&data, &config.train_config()) {
                Ok((net, report)) => {
                    net.save(&net_path).map_err(|e| ExperimentError::Other(e.to_string()))?;
                    write_file(&report_path, &serde_json::to_string_pretty(&report).unwrap())?;
                    result.test_mape = Some(report.test_mape);
                    net
                }
                Err(e) => {
                    result.errors.push(format!("train: {e}"));
                    return Ok(result);
                }
            }
        }
    };

    // IA bounds.
    let ia_path = dir.join("bounds-ia.json");
    let ia = load_or(&ia_path, || ia_bounds(&net), &mut result.errors);
    if let Some(ia) = &ia {
        result.width_ia = Some(ia.mean_hidden_width());
        result.stable_ia = classify(&net, ia).ok().map(|r| r.stable_fraction);
    }

    // Scaling (ReLU only).
    let mut scaled: Option<Network> = None;
    if spec.stages.scale && net.is_pure_relu() {
        let scaled_path = dir.join("scaled-network.json");
        let scaling_path = dir.join("scaling.json");
        if scaled_path.exists() {
            scaled = Network::load(&scaled_path).ok();
        }
        if scaled.is_none() {
            match scale_network(&net) {
                Ok((s, sol)) => {
                    s.save(&scaled_path).map_err(|e| ExperimentError::Other(e.to_string()))?;
                    write_file(&scaling_path, &serde_json::to_string_pretty(&sol.report).unwrap())?;
                    scaled = Some(s);
                }
                Err(e) => result.errors.push(format!("scale: {e}")),
            }
        }
        if let Some(s) = &scaled {
            let sb_path = dir.join("bounds-scaled-ia.json");
            let sb = load_or(
                &sb_path,
                || {
                    let mut b = ia_bounds(s);
                    b.provenance = crate::bounds::Provenance::ScaledIa;
                    b
                },
                &mut result.errors,
            );
            if let Some(sb) = &sb {
                result.width_scaled_ia = Some(sb.mean_hidden_width());
                result.stable_scaled_ia = classify(s, sb).ok().map(|r| r.stable_fraction);
            }
            if spec.stages.obbt {
                if let Some(sb) = sb {
                    let sob_path = dir.join("bounds-scaled-obbt.json");
                    let sob = load_or_fallible(
                        &sob_path,
                        || obbt(s, &sb, &ObbtOptions::default()).map(|r| r.bounds).map_err(|e| e.to_string()),
                        &mut result.errors,
                    );
                    if let Some(sob) = &sob {
                        result.width_scaled_obbt = Some(sob.mean_hidden_width());
                        result.stable_scaled_obbt = classify(s, sob).ok().map(|r| r.stable_fraction);
                    }
                }
            }
        }
    }

    // OBBT on the original network.
    let mut best_bounds = ia.clone();
    if spec.stages.obbt {
        if let Some(ia) = &ia {
            let ob_path = dir.join("bounds-obbt.json");
            let ob = load_or_fallible(
                &ob_path,
                || obbt(&net, ia, &ObbtOptions::default()).map(|r| r.bounds).map_err(|e| e.to_string()),
                &mut result.errors,
            );
            if let Some(ob) = &ob {
                result.width_obbt = Some(ob.mean_hidden_width());
                result.stable_obbt = classify(&net, ob).ok().map(|r| r.stable_fraction);
                best_bounds = Some(ob.clone());
            }
        }
    }

    // Region atlas (ReLU only).
    if spec.stages.regions && net.is_pure_relu() {
        let atlas_path = dir.join("atlas.json");
        if atlas_path.exists() {
            if let Ok(file) = serde_json::from_str::<crate::regions::AtlasFile>(&read_file(&atlas_path)?) {
                result.regions = Some(file.region_count);
            }
        }
        if result.regions.is_none() {
            match enumerate(&net, &EnumerateOptions { max_regions: spec.max_regions, ..Default::default() }) {
                Ok(atlas) => {
                    write_file(&atlas_path, &atlas.to_json())?;
                    result.regions = Some(atlas.regions.len());
                    if atlas.incomplete {
                        result.errors.push("regions: atlas incomplete (budget)".into());
                    }
                }
                Err(e) => result.errors.push(format!("regions: {e}")),
            }
        }
    }

    // Global minimization.
    if spec.stages.solve {
        if let Some(bounds) = &best_bounds {
            let solve_path = dir.join("solve.json");
            result.solve = load_or_fallible(
                &solve_path,
                || {
                    solve_min(&net, bounds, &BnbOptions { time_limit_secs: spec.time_limit_secs, ..Default::default() })
                        .map_err(|e| e.to_string())
                },
                &mut result.errors,
            );
            if spec.stages.solve_both_arms && spec.stages.obbt {
                if let Some(ia) = &ia {
                    let path = dir.join("solve-ia.json");
                    result.solve_ia = load_or_fallible(
                        &path,
                        || {
                            solve_min(&net, ia, &BnbOptions { time_limit_secs: spec.time_limit_secs, ..Default::default() })
                                .map_err(|e| e.to_string())
                        },
                        &mut result.errors,
                    );
                }
            }
        }
    }

    Ok(result)
}

fn load_or(path: &Path, compute: impl FnOnce() -> BoundsSet, errors: &mut Vec<String>) -> Option<BoundsSet> {
    load_or_fallible(path, || Ok(compute()), errors)
}

fn load_or_fallible<T: Serialize + for<'de> Deserialize<'de>>(
    path: &Path,
    compute: impl FnOnce() -> Result<T, String>,
    errors: &mut Vec<String>,
) -> Option<T> {
    if path.exists() {
        if let Ok(text) = std::fs::read_to_string(path) {
            if let Ok(v) = serde_json::from_str::<T>(&text) {
                return Some(v);
            }
        }
    }
    match compute() {
        Ok(v) => {
            match serde_json::to_string_pretty(&v) {
                Ok(text) => {
                    if let Err(e) = std::fs::write(path, text) {
                        errors.push(format!("write {}: {e}", path.display()));
                    }
                }
                Err(e) => errors.push(format!("serialize {}: {e}", path.display())),
            }
            Some(v)
        }
        Err(e) => {
            errors.push(format!("{}: {e}", path.file_stem().and_then(|s| s.to_str()).unwrap_or("stage"), ));
            None
        }
    }
}

/// Runs every row, optionally over a bounded worker pool, and writes
/// `report.csv` and `report.json` into `out`.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path, threads: usize) -> Result<ExperimentReport, ExperimentError> {
    spec.validate()?;
    std::fs::create_dir_all(out).map_err(|source| ExperimentError::Io { path: out.display().to_string(), source })?;
    let configs = spec.rows();

    let results: Vec<RowResult> = if threads <= 1 {
        let mut rows = Vec::with_capacity(configs.len());
        for c in &configs {
            rows.push(run_row(spec, c, out)?);
        }
        rows
    } else {
        let mut slots: Vec<Option<Result<RowResult, ExperimentError>>> = Vec::new();
        slots.resize_with(configs.len(), || None);
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..threads.min(configs.len().max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= configs.len() {
                        break;
                    }
                    let r = run_row(spec, &configs[i], out);
                    slots.lock().unwrap()[i] = Some(r);
                });
            }
        });
        let collected: Result<Vec<RowResult>, ExperimentError> = slots
            .into_inner()
            .unwrap()
            .iter_mut()
            .map(|s| s.take().expect("worker filled every slot"))
            .collect();
        collected?
    };

    let aggregates = build_aggregates(&results);
    let report = ExperimentReport { spec: spec.clone(), rows: results, aggregates };
    write_file(&out.join("report.csv"), &report.to_csv())?;
    write_file(&out.join("report.json"), &serde_json::to_string_pretty(&report).unwrap())?;
    Ok(report)
}

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "hash,benchmark,depth,width,activation,lambda,dropout,seed,samples,epochs,test_mape,width_ia,width_obbt,width_scaled_ia,width_scaled_obbt,stable_ia,stable_obbt,stable_scaled_ia,stable_scaled_obbt,regions,solve_status,solve_objective,solve_bound,solve_nodes,solve_secs,errors\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let c = &r.config;
            let (status, obj, bound, nodes, secs) = match &r.solve {
                Some(b) => (
                    format!("{:?}", b.status).to_lowercase(),
                    b.objective.to_string(),
                    b.best_bound.to_string(),
                    b.nodes.to_string(),
                    b.wall_secs.to_string(),
                ),
                None => (String::new(), String::new(), String::new(), String::new(), String::new()),
            };
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.hash,
                c.benchmark,
                c.depth,
                c.width,
                c.activation,
                c.lambda,
                c.dropout,
                c.seed,
                c.samples,
                c.epochs,
                opt(r.test_mape),
                opt(r.width_ia),
                opt(r.width_obbt),
                opt(r.width_scaled_ia),
                opt(r.width_scaled_obbt),
                opt(r.stable_ia),
                opt(r.stable_obbt),
                opt(r.stable_scaled_ia),
                opt(r.stable_scaled_obbt),
                r.regions.map(|x| x.to_string()).unwrap_or_default(),
                status,
                obj,
                bound,
                nodes,
                secs,
                r.errors.join("; ").replace(',', ";"),
            ));
        }
        s
    }
}

/// Re-checks stored artifacts against the module invariants: bound soundness
/// by sampling, scaling equivalence on a probe grid, atlas partition of the
/// box. Returns human-readable failure descriptions.
pub fn verify_artifacts(out: &Path) -> Result<Vec<String>, ExperimentError> {
    use rand::{Rng, SeedableRng};
    let mut failures = Vec::new();
    let entries = std::fs::read_dir(out).map_err(|source| ExperimentError::Io { path: out.display().to_string(), source })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("row.json").exists())
        .collect();
    dirs.sort();
    for dir in dirs {
        let name = dir.file_name().and_then(|s| s.to_str()).unwrap_or("?").to_string();
        let net_path = dir.join("network.json");
        if !net_path.exists() {
            continue;
        }
        let net = match Network::load(&net_path) {
            Ok(n) => n,
            Err(e) => {
                failures.push(format!("{name}: network.json invalid: {e}"));
                continue;
            }
        };
        let scaled = Network::load(&dir.join("scaled-network.json")).ok();

        // Bound soundness by sampling against the network each set belongs to.
        for (file, which) in [
            ("bounds-ia.json", "original"),
            ("bounds-obbt.json", "original"),
            ("bounds-scaled-ia.json", "scaled"),
            ("bounds-scaled-obbt.json", "scaled"),
        ] {
            let path = dir.join(file);
            if !path.exists() {
                continue;
            }
            let target = if which == "scaled" { scaled.as_ref() } else { Some(&net) };
            let Some(target) = target else {
                failures.push(format!("{name}: {file} present but scaled network missing"));
                continue;
            };
            match std::fs::read_to_string(&path).ok().and_then(|t| BoundsSet::from_json(&t).ok()) {
                Some(bounds) => {
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xbeef);
                    let mut worst: f64 = 0.0;
                    'outer: for _ in 0..10_000 {
                        let x: Vec<f64> =
                            target.input_bounds().iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
                        let trace = match target.forward_trace(&x) {
                            Ok(t) => t,
                            Err(_) => break 'outer,
                        };
                        for (k, pre) in trace.pre_activations.iter().enumerate() {
                            for i in 0..pre.len() {
                                worst = worst.max(bounds.lower[k][i] - pre[i]).max(pre[i] - bounds.upper[k][i]);
                            }
                        }
                    }
                    if worst > 1e-7 {
                        failures.push(format!("{name}: {file} violates soundness by {worst}"));
                    }
                }
                None => failures.push(format!("{name}: {file} unreadable")),
            }
        }

        // Scaling equivalence probe.
        if let Some(s) = &scaled {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xcafe);
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let x: Vec<f64> = net.input_bounds().iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
                if let (Ok(a), Ok(b)) = (net.forward(&x), s.forward(&x)) {
                    for i in 0..a.len() {
                        worst = worst.max((a[i] - b[i]).abs());
                    }
                }
            }
            if worst > 1e-6 {
                failures.push(format!("{name}: scaled network deviates by {worst}"));
            }
        }

        // Atlas partition check.
        let atlas_path = dir.join("atlas.json");
        if atlas_path.exists() {
            match std::fs::read_to_string(&atlas_path)
                .ok()
                .and_then(|t| serde_json::from_str::<crate::regions::AtlasFile>(&t).ok())
            {
                Some(file) => {
                    if !file.incomplete {
                        let sum: f64 = file.regions.iter().map(|r| r.area).sum();
                        if (sum - file.box_area).abs() > 1e-6 * file.box_area {
                            failures.push(format!("{name}: atlas areas sum to {sum}, box is {}", file.box_area));
                        }
                        let mut patterns: Vec<&String> = file.regions.iter().map(|r| &r.pattern).collect();
                        patterns.sort();
                        let before = patterns.len();
                        patterns.dedup();
                        if patterns.len() != before {
                            failures.push(format!("{name}: atlas contains duplicate patterns"));
                        }
                    }
                }
                None => failures.push(format!("{name}: atlas.json unreadable")),
            }
        }

        // Solve replay.
        let solve_path = dir.join("solve.json");
        if solve_path.exists() {
            if let Some(res) = std::fs::read_to_string(&solve_path)
                .ok()
                .and_then(|t| serde_json::from_str::<BnbResult>(&t).ok())
            {
                if matches!(res.status, crate::milp::BnbStatus::Optimal) {
                    if let Ok(y) = net.forward(&res.x) {
                        if (y[0] - res.objective).abs() > 1e-6 * res.objective.abs().max(1.0) {
                            failures.push(format!(
                                "{name}: solve incumbent replays to {} but reports {}",
                                y[0], res.objective
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_mean_basics() {
        let g = geometric_mean([0.5, 2.0]).unwrap();
        assert!((g - 1.0).abs() <= 1e-12);
        let single = geometric_mean([0.7]).unwrap();
        assert!((single - 0.7).abs() <= 1e-12);
        assert!(geometric_mean(std::iter::empty()).is_none());
        // Non-positive ratios are excluded, never NaN.
        let g = geometric_mean([-1.0, 4.0]).unwrap();
        assert!((g - 4.0).abs() <= 1e-12);
    }

    fn blank_row(config: RowConfig) -> RowResult {
        let hash = config.hash();
        RowResult {
            config,
            hash,
            test_mape: None,
            width_ia: None,
            width_obbt: None,
            width_scaled_ia: None,
            width_scaled_obbt: None,
            stable_ia: None,
            stable_obbt: None,
            stable_scaled_ia: None,
            stable_scaled_obbt: None,
            regions: None,
            solve: None,
            solve_ia: None,
            errors: Vec::new(),
        }
    }

    fn cfg(lambda: f64, seed: u64) -> RowConfig {
        RowConfig {
            benchmark: BenchmarkId::Peaks,
            depth: 2,
            width: 25,
            activation: ActivationSpec::Relu,
            lambda,
            dropout: 0.0,
            seed,
            samples: 100,
            epochs: 1,
            batch_size: 32,
            learning_rate: 1e-3,
        }
    }

    #[test]
    fn table_shaped_fixture_reproduces_published_obbt_row() {
        // Synthetic pairs engineered so the aggregate matches the published
        // OBBT row: width ratio 0.541, stable delta +0.055, time ratio 0.570.
        use crate::milp::{BnbResult, BnbStatus};
        let k = 1.2f64;
        let mk = |seed: u64, w_ratio: f64, s_delta: f64, t_ratio: f64| {
            let mut base = blank_row(cfg(0.0, seed));
            base.width_ia = Some(1.0);
            base.stable_ia = Some(0.5);
            base.solve = Some(BnbResult {
                status: BnbStatus::Optimal,
                x: vec![0.0, 0.0],
                objective: 0.0,
                best_bound: 0.0,
                gap: 0.0,
                nodes: 1,
                wall_secs: 1.0,
                trace: None,
            });
            let mut adapted = blank_row(cfg(1e-4, seed));
            adapted.width_ia = Some(w_ratio);
            adapted.stable_ia = Some(0.5 + s_delta);
            adapted.solve = Some(BnbResult {
                status: BnbStatus::Optimal,
                x: vec![0.0, 0.0],
                objective: 0.0,
                best_bound: 0.0,
                gap: 0.0,
                nodes: 1,
                wall_secs: t_ratio,
                trace: None,
            });
            (base, adapted)
        };
        let (b1, a1) = mk(0, 0.541 * k, 0.050, 0.570 * k);
        let (b2, a2) = mk(1, 0.541 / k, 0.060, 0.570 / k);
        let pairs = vec![RowPair { baseline: &b1, adapted: &a1 }, RowPair { baseline: &b2, adapted: &a2 }];
        let block = aggregate("fixture", &pairs);
        assert!((block.geo_mean_width_ratio.unwrap() - 0.541).abs() <= 1e-12);
        assert!((block.mean_stable_delta.unwrap() - 0.055).abs() <= 1e-12);
        assert!((block.geo_mean_time_ratio.unwrap() - 0.570).abs() <= 1e-12);
        assert_eq!(block.n_time_pairs, 2);
        assert_eq!(block.solved_adapted, Some(2));
    }

    #[test]
    fn empty_intersection_marks_n_zero() {
        let rows: Vec<RowResult> = Vec::new();
        let block = aggregate("empty", &[]);
        assert_eq!(block.n_pairs, 0);
        assert!(block.geo_mean_width_ratio.is_none());
        let _ = rows;
    }

    #[test]
    fn grid_vocabulary_enforced() {
        let mut spec = ExperimentSpec { widths: vec![30], ..Default::default() };
        assert!(spec.validate().is_err());
        spec.unsafe_grid = true;
        assert!(spec.validate().is_ok());
        let spec2 = ExperimentSpec { lambdas: vec![0.5], ..Default::default() };
        assert!(spec2.validate().is_err());
    }

    #[test]
    fn config_hash_is_stable_and_distinct() {
        let a = cfg(0.0, 0);
        let b = cfg(0.0, 0);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(cfg(0.0, 0).hash(), cfg(1e-4, 0).hash());
        assert_ne!(cfg(0.0, 0).hash(), cfg(0.0, 1).hash());
    }

    #[test]
    fn row_grid_order_is_deterministic() {
        let spec = ExperimentSpec {
            depths: vec![2, 3],
            lambdas: vec![0.0, 1e-4],
            dropouts: vec![0.0],
            seeds: vec![0],
            ..Default::default()
        };
        let rows = spec.rows();
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[0].depth, rows[0].lambda), (2, 0.0));
        assert_eq!((rows[1].depth, rows[1].lambda), (2, 1e-4));
        assert_eq!((rows[2].depth, rows[2].lambda), (3, 0.0));
    }
}
