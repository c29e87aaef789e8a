//! Optimal equivalent rescaling of ReLU networks.
//!
//! Positive homogeneity lets every hidden neuron be rescaled by `c > 0` if the
//! next layer compensates with `1/c`. Choosing the factors to minimize the l1
//! norm of all scaled weights and biases is non-convex as written, but
//! substituting `c = exp(c~)` turns every objective term into an exponential
//! of an affine expression: a smooth convex problem solved here by projected
//! gradient descent with Armijo backtracking.

use crate::network::{Network, NetworkError, ScalingFactors};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Log-domain variables are confined to `[-CLAMP, CLAMP]`; directions that are
/// unbounded in theory (for example neurons with constant zero input) stop
/// there and get reported instead of running away.
pub const CLAMP: f64 = 20.0;

/// One objective summand `exp(log_mag + c~[plus] - c~[minus])`.
#[derive(Debug, Clone)]
struct Term {
    log_mag: f64,
    plus: Option<usize>,
    minus: Option<usize>,
}

/// The transformed convex problem for one network.
#[derive(Debug, Clone)]
pub struct ScalingProblem {
    n_vars: usize,
    /// Flat variable index of neuron (hidden layer k, neuron i); `None` marks
    /// dead neurons pinned at c~ = 0.
    var_index: Vec<Vec<Option<usize>>>,
    terms: Vec<Term>,
    hidden_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// The gradient criterion was met with at least one variable at the clamp.
    Clamped,
    IterationLimit,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingSolutionReport {
    pub status: SolveStatus,
    pub objective_before: f64,
    pub objective_after: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub clamped: Vec<(usize, usize)>,
}

/// Optimal factors plus solve diagnostics.
#[derive(Debug, Clone)]
pub struct ScalingSolution {
    pub factors: ScalingFactors,
    pub report: ScalingSolutionReport,
}

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("line search failed to find a finite descent step at iteration {0}")]
    LineSearch(usize),
    #[error("scaled network deviates by {dev} at probe point {point:?}; refusing to return it")]
    ProbeDeviation { dev: f64, point: Vec<f64> },
}

/// Transcribes the network into the log-domain objective. Zero-magnitude
/// weights and biases contribute no term; dead neurons get no variable.
pub fn build_problem(net: &Network) -> Result<ScalingProblem, ScalingError> {
    if !net.is_pure_relu() {
        return Err(ScalingError::Network(NetworkError::UnsupportedActivation {
            found: net.layers()[0].activation.to_string(),
        }));
    }
    let hidden_sizes = net.hidden_sizes();
    let dead: std::collections::BTreeSet<(usize, usize)> = net.dead_neurons().into_iter().collect();

    let mut var_index: Vec<Vec<Option<usize>>> = Vec::with_capacity(hidden_sizes.len());
    let mut n_vars = 0usize;
    for (k, &size) in hidden_sizes.iter().enumerate() {
        let mut layer = Vec::with_capacity(size);
        for i in 0..size {
            if dead.contains(&(k + 1, i)) {
                layer.push(None);
            } else {
                layer.push(Some(n_vars));
                n_vars += 1;
            }
        }
        var_index.push(layer);
    }

    let mut terms = Vec::new();
    let n_layers = net.depth();
    for (k, layer) in net.layers().iter().enumerate() {
        let is_last = k + 1 == n_layers;
        for i in 0..layer.output_dim() {
            let plus = if is_last { None } else { var_index[k][i] };
            for (j, &w) in layer.weights.row(i).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let minus = if k == 0 { None } else { var_index[k - 1][j] };
                terms.push(Term { log_mag: w.abs().ln(), plus, minus });
            }
            if !is_last && layer.bias[i] != 0.0 {
                terms.push(Term { log_mag: layer.bias[i].abs().ln(), plus, minus: None });
            }
        }
    }
    Ok(ScalingProblem { n_vars, var_index, terms, hidden_sizes })
}

impl ScalingProblem {
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut f = 0.0;
        for t in &self.terms {
            let mut e = t.log_mag;
            if let Some(p) = t.plus {
                e += x[p];
            }
            if let Some(m) = t.minus {
                e -= x[m];
            }
            f += e.exp();
        }
        f
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_vars];
        for t in &self.terms {
            let mut e = t.log_mag;
            if let Some(p) = t.plus {
                e += x[p];
            }
            if let Some(m) = t.minus {
                e -= x[m];
            }
            let v = e.exp();
            if let Some(p) = t.plus {
                g[p] += v;
            }
            if let Some(m) = t.minus {
                g[m] -= v;
            }
        }
        g
    }

    fn factors_from(&self, x: &[f64]) -> ScalingFactors {
        let per_layer = self
            .var_index
            .iter()
            .zip(&self.hidden_sizes)
            .map(|(layer, &size)| {
                Array1::from_shape_fn(size, |i| match layer[i] {
                    Some(v) => x[v].exp(),
                    None => 1.0,
                })
            })
            .collect();
        ScalingFactors::new(per_layer).expect("exp of finite clamp is positive and finite")
    }

    fn clamped_neurons(&self, x: &[f64]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (k, layer) in self.var_index.iter().enumerate() {
            for (i, slot) in layer.iter().enumerate() {
                if let Some(v) = *slot {
                    if x[v].abs() >= CLAMP - 1e-12 {
                        out.push((k + 1, i));
                    }
                }
            }
        }
        out
    }
}

/// Sum of `|W|` and `|b|` over the whole network.
pub fn l1_norm(net: &Network) -> f64 {
    net.layers()
        .iter()
        .map(|l| l.weights.iter().map(|w| w.abs()).sum::<f64>() + l.bias.iter().map(|b| b.abs()).sum::<f64>())
        .sum()
}

/// Minimizes the convex objective from `c~ = 0` until the projected gradient
/// drops below `tol` (default 1e-8) or a variable pins at the clamp.
pub fn solve_scaling(prob: &ScalingProblem, net: &Network, tol: f64) -> Result<ScalingSolution, ScalingError> {
    let objective_before = l1_norm(net);
    let n = prob.n_vars;
    let mut x = vec![0.0; n];
    let mut f = prob.objective(&x);
    let mut step = 1.0;
    let max_iters = 200_000;
    let mut iterations = 0;
    let mut status = SolveStatus::IterationLimit;
    let mut grad_norm = f64::INFINITY;

    while iterations < max_iters {
        iterations += 1;
        let g = prob.gradient(&x);
        grad_norm = projected_grad_norm(&x, &g);
        if grad_norm <= tol {
            status = if prob.clamped_neurons(&x).is_empty() { SolveStatus::Converged } else { SolveStatus::Clamped };
            break;
        }
        // Backtracking Armijo line search on the projected step.
        let mut t = step;
        let mut accepted = false;
        for _ in 0..80 {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| (xi - t * gi).clamp(-CLAMP, CLAMP)).collect();
            let fc = prob.objective(&cand);
            if fc.is_finite() {
                let decrease: f64 = g.iter().zip(x.iter().zip(&cand)).map(|(gi, (xi, ci))| gi * (xi - ci)).sum();
                if fc <= f - 1e-4 * decrease {
                    x = cand;
                    f = fc;
                    step = (t * 2.0).min(1e3);
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // The gradient may simply be at numerical resolution.
            if grad_norm <= 1e-6 * f.max(1.0) {
                status = if prob.clamped_neurons(&x).is_empty() { SolveStatus::Converged } else { SolveStatus::Clamped };
                break;
            }
            return Err(ScalingError::LineSearch(iterations));
        }
    }

    let factors = prob.factors_from(&x);
    let scaled = net.apply_scaling(&factors)?;
    let objective_after = l1_norm(&scaled);
    Ok(ScalingSolution {
        factors,
        report: ScalingSolutionReport {
            status,
            objective_before,
            objective_after,
            grad_norm,
            iterations,
            clamped: prob.clamped_neurons(&x),
        },
    })
}

fn projected_grad_norm(x: &[f64], g: &[f64]) -> f64 {
    let mut norm: f64 = 0.0;
    for (xi, gi) in x.iter().zip(g) {
        let blocked = (*xi >= CLAMP && *gi < 0.0) || (*xi <= -CLAMP && *gi > 0.0);
        if !blocked {
            norm = norm.max(gi.abs());
        }
    }
    norm
}

/// End-to-end rescaling: build, solve, apply, then verify function equality on
/// a 32-point probe grid before handing the network back.
pub fn scale_network(net: &Network) -> Result<(Network, ScalingSolution), ScalingError> {
    if net.depth() == 1 {
        let norm = l1_norm(net);
        let solution = ScalingSolution {
            factors: ScalingFactors::identity(&[]),
            report: ScalingSolutionReport {
                status: SolveStatus::Converged,
                objective_before: norm,
                objective_after: norm,
                grad_norm: 0.0,
                iterations: 0,
                clamped: Vec::new(),
            },
        };
        return Ok((net.clone(), solution));
    }
    let prob = build_problem(net)?;
    let solution = solve_scaling(&prob, net, 1e-8)?;
    let scaled = net.apply_scaling(&solution.factors)?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1e);
    let mut worst = 0.0f64;
    let mut worst_point = Vec::new();
    for _ in 0..32 {
        let x: Vec<f64> = net.input_bounds().iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect();
        let a = net.forward(&x)?;
        let b = scaled.forward(&x)?;
        for i in 0..a.len() {
            let d = (a[i] - b[i]).abs();
            if d > worst {
                worst = d;
                worst_point = x.clone();
            }
        }
    }
    if worst > 1e-6 {
        return Err(ScalingError::ProbeDeviation { dev: worst, point: worst_point });
    }
    Ok((scaled, solution))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::testutil::random_relu_net;
    use crate::network::{ActivationKind, Layer};
    use ndarray::{arr1, arr2};
    use rand::Rng;

    fn one_neuron_net() -> Network {
        Network::new(
            vec![
                Layer::new(arr2(&[[2.0]]), arr1(&[1.0]), ActivationKind::Relu),
                Layer::new(arr2(&[[4.0]]), arr1(&[0.0]), ActivationKind::Identity),
            ],
            vec![(0.0, 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn transcription_of_one_neuron_net() {
        let prob = build_problem(&one_neuron_net()).unwrap();
        assert_eq!(prob.n_vars(), 1);
        assert_eq!(prob.n_terms(), 3);
        // Objective at c~ = 0 is |2| + |1| + |4| = 7.
        assert!((prob.objective(&[0.0]) - 7.0).abs() <= 1e-12);
    }

    #[test]
    fn zero_weight_contributes_no_term() {
        let net = Network::new(
            vec![
                Layer::new(arr2(&[[2.0, 0.0]]), arr1(&[1.0]), ActivationKind::Relu),
                Layer::new(arr2(&[[4.0]]), arr1(&[0.0]), ActivationKind::Identity),
            ],
            vec![(0.0, 1.0), (0.0, 1.0)],
        )
        .unwrap();
        let prob = build_problem(&net).unwrap();
        assert_eq!(prob.n_terms(), 3);
    }

    #[test]
    fn term_count_is_nnz() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let net = random_relu_net(&mut rng, &[2, 5, 4, 1], vec![(-1.0, 1.0), (-1.0, 1.0)]);
        let prob = build_problem(&net).unwrap();
        let nnz_w: usize = net.layers().iter().map(|l| l.weights.iter().filter(|w| **w != 0.0).count()).sum();
        let nnz_b: usize = net.layers()[..net.depth() - 1]
            .iter()
            .map(|l| l.bias.iter().filter(|b| **b != 0.0).count())
            .sum();
        assert_eq!(prob.n_terms(), nnz_w + nnz_b);
    }

    #[test]
    fn symmetric_problem_stays_at_zero() {
        // exp(a + c) + exp(a - c) is minimized at c = 0.
        let net = Network::new(
            vec![
                Layer::new(arr2(&[[3.0]]), arr1(&[0.0]), ActivationKind::Relu),
                Layer::new(arr2(&[[3.0]]), arr1(&[0.0]), ActivationKind::Identity),
            ],
            vec![(0.0, 1.0)],
        )
        .unwrap();
        let prob = build_problem(&net).unwrap();
        let sol = solve_scaling(&prob, &net, 1e-10).unwrap();
        assert!((sol.factors.layers()[0][0] - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn balance_condition_closed_form() {
        // exp(log 2 + c) + exp(log 8 - c): stationary at c = ln 2, factor 2.
        let net = Network::new(
            vec![
                Layer::new(arr2(&[[2.0]]), arr1(&[0.0]), ActivationKind::Relu),
                Layer::new(arr2(&[[8.0]]), arr1(&[0.0]), ActivationKind::Identity),
            ],
            vec![(0.0, 1.0)],
        )
        .unwrap();
        let prob = build_problem(&net).unwrap();
        let sol = solve_scaling(&prob, &net, 1e-10).unwrap();
        assert!((sol.factors.layers()[0][0] - 2.0).abs() <= 1e-6, "factor {}", sol.factors.layers()[0][0]);
        assert!(sol.report.objective_after <= sol.report.objective_before);
    }

    #[test]
    fn one_neuron_oracle_norm() {
        // min over c of 2c + c + 4/c has c* = 2/sqrt(3) and value 4 sqrt(3).
        let (scaled, sol) = scale_network(&one_neuron_net()).unwrap();
        let expected = 4.0 * 3.0_f64.sqrt();
        assert!((sol.report.objective_after - expected).abs() <= 1e-6, "norm {}", sol.report.objective_after);
        assert!((l1_norm(&scaled) - expected).abs() <= 1e-6);
        assert!(sol.report.objective_after < 7.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let net = random_relu_net(&mut rng, &[2, 4, 3, 1], vec![(-1.0, 1.0), (-1.0, 1.0)]);
        let prob = build_problem(&net).unwrap();
        let x: Vec<f64> = (0..prob.n_vars()).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let g = prob.gradient(&x);
        let h = 1e-6;
        for i in 0..prob.n_vars() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (prob.objective(&xp) - prob.objective(&xm)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / g[i].abs().max(1.0);
            assert!(rel <= 1e-6, "var {i}: analytic {} vs fd {fd}", g[i]);
        }
    }

    #[test]
    fn objective_is_midpoint_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let net = random_relu_net(&mut rng, &[2, 5, 4, 1], vec![(-1.0, 1.0), (-1.0, 1.0)]);
        let prob = build_problem(&net).unwrap();
        for _ in 0..100 {
            let a: Vec<f64> = (0..prob.n_vars()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..prob.n_vars()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let lhs = prob.objective(&mid);
            let rhs = 0.5 * (prob.objective(&a) + prob.objective(&b));
            assert!(lhs <= rhs + 1e-9, "midpoint convexity violated: {lhs} > {rhs}");
        }
    }

    #[test]
    fn dead_neuron_is_pinned() {
        let net = Network::new(
            vec![
                Layer::new(arr2(&[[1.0], [2.0]]), arr1(&[0.5, 0.5]), ActivationKind::Relu),
                Layer::new(arr2(&[[0.0, 3.0]]), arr1(&[0.0]), ActivationKind::Identity),
            ],
            vec![(0.0, 1.0)],
        )
        .unwrap();
        let prob = build_problem(&net).unwrap();
        assert_eq!(prob.n_vars(), 1);
        let (_, sol) = scale_network(&net).unwrap();
        // Dead neuron keeps factor 1.
        assert_eq!(sol.factors.layers()[0][0], 1.0);
    }

    #[test]
    fn single_layer_network_returns_identity() {
        let net = Network::new(
            vec![Layer::new(arr2(&[[1.0, 1.0]]), arr1(&[0.0]), ActivationKind::Identity)],
            vec![(0.0, 1.0), (0.0, 1.0)],
        )
        .unwrap();
        let (scaled, sol) = scale_network(&net).unwrap();
        assert_eq!(net, scaled);
        assert_eq!(sol.report.iterations, 0);
    }

    #[test]
    fn already_optimal_net_round_trips() {
        let net = Network::new(
            vec![
                Layer::new(arr2(&[[3.0]]), arr1(&[0.0]), ActivationKind::Relu),
                Layer::new(arr2(&[[3.0]]), arr1(&[0.0]), ActivationKind::Identity),
            ],
            vec![(0.0, 1.0)],
        )
        .unwrap();
        let (scaled, _) = scale_network(&net).unwrap();
        for (a, b) in net.layers().iter().zip(scaled.layers()) {
            for (x, y) in a.weights.iter().zip(b.weights.iter()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn monotone_improvement_and_reduction_on_random_nets() {
        for seed in 0..6 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let net = random_relu_net(&mut rng, &[2, 8, 8, 8, 1], vec![(-1.0, 1.0), (-1.0, 1.0)]);
            let (scaled, sol) = scale_network(&net).unwrap();
            assert!(sol.report.objective_after <= sol.report.objective_before + 1e-9);
            // Random nets are essentially never at the optimum already.
            assert!(l1_norm(&scaled) < l1_norm(&net));
        }
    }
}
