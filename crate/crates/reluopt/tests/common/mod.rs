//! Shared helpers and independent oracles for integration tests.
//!
//! Everything here is deliberately naive: the point is to check the library's
//! optimized paths against a second, independent route.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reluopt::network::{ActivationKind, Layer, Network};

/// Plain full-tableau two-phase simplex for `min c.x, A x <= b, x >= 0`.
///
/// Requires `b >= 0` so the slack basis is feasible and no phase 1 is needed.
/// Returns `None` when unbounded.
pub fn naive_simplex_standard(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<f64> {
    let m = a.len();
    let n = c.len();
    assert!(b.iter().all(|&v| v >= 0.0), "naive oracle needs b >= 0");
    // Tableau: m rows x (n + m + 1) columns, last column rhs; objective row below.
    let cols = n + m + 1;
    let mut t = vec![0.0; (m + 1) * cols];
    for i in 0..m {
        for j in 0..n {
            t[i * cols + j] = a[i][j];
        }
        t[i * cols + n + i] = 1.0;
        t[i * cols + n + m] = b[i];
    }
    for j in 0..n {
        t[m * cols + j] = c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    for _ in 0..20_000 {
        // Entering: most negative reduced cost in the objective row (min problem
        // keeps c row as-is and pivots on negative entries).
        let mut enter = None;
        let mut best = -1e-9;
        for j in 0..n + m {
            let v = t[m * cols + j];
            if v < best {
                best = v;
                enter = Some(j);
            }
        }
        let Some(je) = enter else {
            let obj = -t[m * cols + n + m];
            return Some(obj);
        };
        // Leaving: minimum ratio.
        let mut leave = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let g = t[i * cols + je];
            if g > 1e-9 {
                let ratio = t[i * cols + n + m] / g;
                if ratio < best_ratio - 1e-12 {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(ir) = leave else {
            return None; // unbounded
        };
        let piv = t[ir * cols + je];
        for k in 0..cols {
            t[ir * cols + k] /= piv;
        }
        for i in 0..=m {
            if i != ir {
                let f = t[i * cols + je];
                if f != 0.0 {
                    for k in 0..cols {
                        t[i * cols + k] -= f * t[ir * cols + k];
                    }
                }
            }
        }
        basis[ir] = je;
    }
    panic!("naive simplex did not terminate");
}

/// Random ReLU network with the final layer forced to the identity.
pub fn random_relu_net(seed: u64, sizes: &[usize], input_bounds: Vec<(f64, f64)>) -> Network {
    random_net(seed, sizes, input_bounds, ActivationKind::Relu, 1.0)
}

pub fn random_net(
    seed: u64,
    sizes: &[usize],
    input_bounds: Vec<(f64, f64)>,
    hidden: ActivationKind,
    weight_scale: f64,
) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for (k, pair) in sizes.windows(2).enumerate() {
        let (n_in, n_out) = (pair[0], pair[1]);
        let scale = weight_scale * (2.0 / n_in as f64).sqrt();
        let weights = Array2::from_shape_fn((n_out, n_in), |_| rng.gen_range(-scale..scale));
        let bias = Array1::from_shape_fn(n_out, |_| rng.gen_range(-0.4..0.4));
        let activation = if k + 2 == sizes.len() { ActivationKind::Identity } else { hidden };
        layers.push(Layer::new(weights, bias, activation));
    }
    Network::new(layers, input_bounds).unwrap()
}

/// Uniform grid over a 2-D box, `steps` points per axis.
pub fn grid_points(bounds: &[(f64, f64)], steps: usize) -> Vec<[f64; 2]> {
    let mut pts = Vec::with_capacity(steps * steps);
    let (x0, x1) = bounds[0];
    let (y0, y1) = bounds[1];
    for i in 0..steps {
        for j in 0..steps {
            pts.push([
                x0 + (x1 - x0) * i as f64 / (steps - 1) as f64,
                y0 + (y1 - y0) * j as f64 / (steps - 1) as f64,
            ]);
        }
    }
    pts
}

/// Uniform random points inside an arbitrary-dimension box.
pub fn sample_box(bounds: &[(f64, f64)], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect())
        .collect()
}
