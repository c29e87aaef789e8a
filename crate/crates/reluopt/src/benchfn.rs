//! Benchmark functions and Latin-hypercube training data.
//!
//! Three classic 2-D test functions (Peaks, Ackley, Himmelblau) with their
//! domains and published minima, plus seeded dataset generation with z-score
//! normalization and a fixed 30% test split.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkId {
    Peaks,
    Ackley,
    Himmelblau,
}

impl std::str::FromStr for BenchmarkId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "peaks" => Ok(BenchmarkId::Peaks),
            "ackley" => Ok(BenchmarkId::Ackley),
            "himmelblau" => Ok(BenchmarkId::Himmelblau),
            other => Err(format!("unknown benchmark {other:?} (expected peaks, ackley or himmelblau)")),
        }
    }
}

impl std::fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BenchmarkId::Peaks => write!(f, "peaks"),
            BenchmarkId::Ackley => write!(f, "ackley"),
            BenchmarkId::Himmelblau => write!(f, "himmelblau"),
        }
    }
}

/// A 2-D benchmark function with its domain and known global minima.
#[derive(Debug, Clone)]
pub struct BenchmarkFunction {
    pub id: BenchmarkId,
    pub domain: [(f64, f64); 2],
    /// `(point, value)` pairs, rounded to three decimals as published.
    pub known_minima: Vec<([f64; 2], f64)>,
}

impl BenchmarkFunction {
    pub fn new(id: BenchmarkId) -> Self {
        match id {
            BenchmarkId::Peaks => BenchmarkFunction {
                id,
                domain: [(-2.0, 2.0), (-2.0, 2.0)],
                known_minima: vec![([0.228, -1.626], -6.551)],
            },
            BenchmarkId::Ackley => BenchmarkFunction {
                id,
                domain: [(-3.5, 3.5), (-3.5, 3.5)],
                known_minima: vec![([0.0, 0.0], 0.0)],
            },
            BenchmarkId::Himmelblau => BenchmarkFunction {
                id,
                domain: [(-5.0, 5.0), (-5.0, 5.0)],
                known_minima: vec![
                    ([3.0, 2.0], 0.0),
                    ([-2.805, 3.131], 0.0),
                    ([-3.779, -3.283], 0.0),
                    ([3.584, -1.848], 0.0),
                ],
            },
        }
    }

    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        match self.id {
            BenchmarkId::Peaks => peaks(x, y),
            BenchmarkId::Ackley => ackley(x, y),
            BenchmarkId::Himmelblau => himmelblau(x, y),
        }
    }

    /// Sample count used by the full-scale study: 150k for Ackley (it
    /// oscillates more), 100k for the other two.
    pub fn default_samples(&self) -> usize {
        match self.id {
            BenchmarkId::Ackley => 150_000,
            _ => 100_000,
        }
    }
}

pub fn peaks(x: f64, y: f64) -> f64 {
    3.0 * (1.0 - x).powi(2) * (-x * x - (y + 1.0).powi(2)).exp()
        - 10.0 * (x / 5.0 - x.powi(3) - y.powi(5)) * (-x * x - y * y).exp()
        - (1.0 / 3.0) * (-(x + 1.0).powi(2) - y * y).exp()
}

pub fn ackley(x: f64, y: f64) -> f64 {
    -20.0 * (-0.2 * (0.5 * (x * x + y * y)).sqrt()).exp()
        - (0.5 * ((2.0 * PI * x).cos() + (2.0 * PI * y).cos())).exp()
        + E
        + 20.0
}

pub fn himmelblau(x: f64, y: f64) -> f64 {
    (x * x + y - 11.0).powi(2) + (x + y * y - 7.0).powi(2)
}

/// Per-dimension z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    fn from_columns(data: &Array2<f64>) -> Self {
        let n = data.nrows() as f64;
        let mut mean = Vec::with_capacity(data.ncols());
        let mut std = Vec::with_capacity(data.ncols());
        for col in data.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            let s = var.sqrt();
            std.push(if s > 1e-12 { s } else { 1.0 });
        }
        Normalization { mean, std }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| v * s + m).collect()
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least 10 samples, got {0}")]
    TooFewSamples(usize),
    #[error("failed to write {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Sampled benchmark data with normalization statistics and a train/test split.
///
/// Normalization statistics are computed on the full sample before splitting;
/// the sidecar records that choice.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Array1<f64>,
    pub input_norm: Normalization,
    pub target_norm: Normalization,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub domain: Vec<(f64, f64)>,
    pub seed: u64,
}

/// Latin-hypercube sample of `f` over its domain: each of `n_samples` equal
/// strata per dimension contains exactly one point.
pub fn generate(f: &BenchmarkFunction, n_samples: usize, seed: u64) -> Result<Dataset, DatasetError> {
    if n_samples < 10 {
        return Err(DatasetError::TooFewSamples(n_samples));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = 2usize;
    let mut coords = Array2::zeros((n_samples, dims));
    for d in 0..dims {
        let (lo, hi) = f.domain[d];
        let width = (hi - lo) / n_samples as f64;
        let mut strata: Vec<usize> = (0..n_samples).collect();
        strata.shuffle(&mut rng);
        for (i, &s) in strata.iter().enumerate() {
            let u: f64 = rng.gen();
            coords[[i, d]] = lo + (s as f64 + u) * width;
        }
    }
    let targets = Array1::from_shape_fn(n_samples, |i| f.evaluate(coords[[i, 0]], coords[[i, 1]]));

    let input_norm = Normalization::from_columns(&coords);
    let target_2d = targets.clone().into_shape_with_order((n_samples, 1)).unwrap();
    let target_norm = Normalization::from_columns(&target_2d);

    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut rng);
    let n_test = ((n_samples as f64) * 0.3).round() as usize;
    let test_idx = order[..n_test].to_vec();
    let train_idx = order[n_test..].to_vec();

    Ok(Dataset {
        inputs: coords,
        targets,
        input_norm,
        target_norm,
        train_idx,
        test_idx,
        domain: f.domain.to_vec(),
        seed,
    })
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    seed: u64,
    normalization_scope: String,
    input_norm: Normalization,
    target_norm: Normalization,
    domain: Vec<(f64, f64)>,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `<path>` as CSV (`x1,x2,target`) and `<path>.meta.json` with
    /// normalization statistics, the seed and the split indices.
    pub fn export_csv(&self, path: &Path) -> Result<(), DatasetError> {
        let mut text = String::from("x1,x2,target\n");
        for i in 0..self.len() {
            text.push_str(&format!(
                "{},{},{}\n",
                self.inputs[[i, 0]],
                self.inputs[[i, 1]],
                self.targets[i]
            ));
        }
        std::fs::write(path, text)
            .map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
        let sidecar = Sidecar {
            seed: self.seed,
            normalization_scope: "all_data".into(),
            input_norm: self.input_norm.clone(),
            target_norm: self.target_norm.clone(),
            domain: self.domain.clone(),
            train_idx: self.train_idx.clone(),
            test_idx: self.test_idx.clone(),
        };
        let meta_path = path.with_extension("meta.json");
        std::fs::write(&meta_path, serde_json::to_string_pretty(&sidecar).unwrap())
            .map_err(|source| DatasetError::Io { path: meta_path.display().to_string(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn himmelblau_minimum_is_exact() {
        assert_eq!(himmelblau(3.0, 2.0), 0.0);
    }

    #[test]
    fn ackley_minimum_is_exact() {
        assert_eq!(ackley(0.0, 0.0), 0.0);
    }

    #[test]
    fn peaks_minimum_matches_published_value() {
        let v = peaks(0.228, -1.626);
        assert!((v - (-6.551)).abs() <= 1e-2, "peaks minimum {v}");
    }

    #[test]
    fn known_minima_reproduce_stated_values() {
        for id in [BenchmarkId::Peaks, BenchmarkId::Ackley, BenchmarkId::Himmelblau] {
            let f = BenchmarkFunction::new(id);
            for (p, v) in &f.known_minima {
                let got = f.evaluate(p[0], p[1]);
                assert!((got - v).abs() <= 1e-2, "{id}: f({p:?}) = {got}, expected {v}");
            }
        }
    }

    #[test]
    fn default_sample_sizes() {
        assert_eq!(BenchmarkFunction::new(BenchmarkId::Peaks).default_samples(), 100_000);
        assert_eq!(BenchmarkFunction::new(BenchmarkId::Himmelblau).default_samples(), 100_000);
        assert_eq!(BenchmarkFunction::new(BenchmarkId::Ackley).default_samples(), 150_000);
    }

    #[test]
    fn lhs_fills_every_stratum_once() {
        let f = BenchmarkFunction::new(BenchmarkId::Peaks);
        let n = 100;
        let ds = generate(&f, n, 42).unwrap();
        for d in 0..2 {
            let (lo, hi) = f.domain[d];
            let width = (hi - lo) / n as f64;
            let mut counts = vec![0usize; n];
            for i in 0..n {
                let s = (((ds.inputs[[i, d]] - lo) / width).floor() as usize).min(n - 1);
                counts[s] += 1;
            }
            assert!(counts.iter().all(|&c| c == 1), "dim {d}: {counts:?}");
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let f = BenchmarkFunction::new(BenchmarkId::Ackley);
        let a = generate(&f, 64, 9).unwrap();
        let b = generate(&f, 64, 9).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.targets, b.targets);
        assert_eq!(a.train_idx, b.train_idx);
        assert_eq!(a.test_idx, b.test_idx);
    }

    #[test]
    fn split_is_thirty_percent() {
        let f = BenchmarkFunction::new(BenchmarkId::Peaks);
        let ds = generate(&f, 200, 1).unwrap();
        assert_eq!(ds.test_idx.len(), 60);
        assert_eq!(ds.train_idx.len(), 140);
    }

    #[test]
    fn normalized_full_set_is_standardized() {
        let f = BenchmarkFunction::new(BenchmarkId::Peaks);
        let ds = generate(&f, 500, 5).unwrap();
        for d in 0..2 {
            let col: Vec<f64> =
                (0..ds.len()).map(|i| (ds.inputs[[i, d]] - ds.input_norm.mean[d]) / ds.input_norm.std[d]).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let s = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64).sqrt();
            assert!(m.abs() <= 1e-8, "dim {d} mean {m}");
            assert!((s - 1.0).abs() <= 1e-6, "dim {d} std {s}");
        }
    }

    proptest! {
        #[test]
        fn denormalize_inverts_normalize(x in -10.0f64..10.0, y in -10.0f64..10.0) {
            let norm = Normalization { mean: vec![1.5, -0.3], std: vec![2.0, 0.7] };
            let z = norm.normalize(&[x, y]);
            let back = norm.denormalize(&z);
            prop_assert!((back[0] - x).abs() <= 1e-12);
            prop_assert!((back[1] - y).abs() <= 1e-12);
        }
    }
}
