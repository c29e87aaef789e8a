//! Big-M encodings of networks and the solvers that run on them.
//!
//! [`encode`] turns a network plus valid pre-activation bounds into a linear
//! model whose binary variables switch the ReLU arms. Stable neurons need no
//! binary: stably inactive ones collapse to zero, stably active ones to their
//! affine expression. Clipped ReLU neurons carry two binaries with the
//! ordering constraint `z1 >= z2`; a clipped neuron that is stably active but
//! can still saturate keeps its saturation binary, since the affine equality
//! alone would misrepresent the clip.

mod bnb;
mod obbt;

pub use bnb::{solve_adversarial, solve_min, BnbOptions, BnbResult, BnbStatus, NodeTraceEntry};
pub use obbt::{obbt, ObbtOptions, ObbtReport};

use crate::bounds::{BoundsError, BoundsSet, NeuronStatus};
use crate::lp::{LpError, LpModel, Relation};
use crate::network::{ActivationKind, Network, NetworkError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("adversarial labels must differ and index network outputs (got k={k}, i={i}, outputs={outputs})")]
    BadLabels { k: usize, i: usize, outputs: usize },
    #[error("perturbation box around x0 does not intersect the input bounds")]
    EmptyBox,
    #[error("LP solver failed numerically while {context}")]
    Numerical { context: String },
}

/// Which decision a binary variable switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryRole {
    /// ReLU on/off, or `z1` of a clipped neuron.
    Active,
    /// `z2` of a clipped neuron: output pinned at the clip value.
    Saturated,
}

#[derive(Debug, Clone, Copy)]
pub struct BinaryVar {
    pub var: usize,
    /// 1-based hidden layer.
    pub layer: usize,
    pub neuron: usize,
    pub role: BinaryRole,
}

/// Where each quantity lives in the LP variable vector.
#[derive(Debug, Clone)]
pub struct VarMap {
    pub n_inputs: usize,
    /// Post-activation variable per hidden neuron, `post[layer-1][neuron]`.
    pub post: Vec<Vec<usize>>,
    pub outputs: Vec<usize>,
}

impl VarMap {
    /// LP variable carrying the post-activation of layer `k` (1-based hidden
    /// layer), or the raw input for `k = 0`.
    fn prev_var(&self, k: usize, j: usize) -> usize {
        if k == 0 {
            j
        } else {
            self.post[k - 1][j]
        }
    }
}

/// A big-M model: LP relaxation plus the binary markers.
#[derive(Debug, Clone)]
pub struct MilpModel {
    pub lp: LpModel,
    pub vars: VarMap,
    pub binaries: Vec<BinaryVar>,
    pub bounds: BoundsSet,
}

/// Linear expression of the pre-activation of neuron (`layer`, `neuron`)
/// over the model's variables, plus its constant offset.
pub fn pre_expr(net: &Network, vars: &VarMap, layer: usize, neuron: usize) -> (Vec<(usize, f64)>, f64) {
    let l = &net.layers()[layer - 1];
    let coeffs = l
        .weights
        .row(neuron)
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(j, &w)| (vars.prev_var(layer - 1, j), w))
        .collect();
    (coeffs, l.bias[neuron])
}

/// Builds the big-M model for `net` with `bounds` as the big-M source. The
/// binary variables are continuous in `[0, 1]` here; branch-and-bound pins
/// them integral.
pub fn encode(net: &Network, bounds: &BoundsSet) -> Result<MilpModel, MilpError> {
    bounds.validate_shape(net)?;
    let report = crate::bounds::classify(net, bounds)?;
    let n_inputs = net.input_dim();
    let hidden_sizes = net.hidden_sizes();
    let n_outputs = net.output_dim();

    // Variable layout: inputs, hidden post-activations, outputs, binaries.
    let mut next = n_inputs;
    let mut post = Vec::with_capacity(hidden_sizes.len());
    for &size in &hidden_sizes {
        post.push((next..next + size).collect::<Vec<_>>());
        next += size;
    }
    let outputs: Vec<usize> = (next..next + n_outputs).collect();
    next += n_outputs;

    let mut binaries = Vec::new();
    let mut binary_plan: Vec<Vec<(Option<usize>, Option<usize>)>> = Vec::new();
    for (k, &size) in hidden_sizes.iter().enumerate() {
        let mut layer_plan = Vec::with_capacity(size);
        for i in 0..size {
            let (lo, hi) = (bounds.lower[k][i], bounds.upper[k][i]);
            let status = report.statuses[k][i];
            let plan = match (net.layers()[k].activation, status) {
                (_, NeuronStatus::StablyInactive) => (None, None),
                (ActivationKind::Relu, NeuronStatus::StablyActive) => (None, None),
                (ActivationKind::Relu, NeuronStatus::Unstable) => {
                    let z = next;
                    next += 1;
                    binaries.push(BinaryVar { var: z, layer: k + 1, neuron: i, role: BinaryRole::Active });
                    (Some(z), None)
                }
                (ActivationKind::ClippedRelu { clip }, NeuronStatus::StablyActive) => {
                    if hi <= clip || lo >= clip {
                        (None, None)
                    } else {
                        let z2 = next;
                        next += 1;
                        binaries.push(BinaryVar { var: z2, layer: k + 1, neuron: i, role: BinaryRole::Saturated });
                        (None, Some(z2))
                    }
                }
                (ActivationKind::ClippedRelu { .. }, NeuronStatus::Unstable) => {
                    let z1 = next;
                    let z2 = next + 1;
                    next += 2;
                    binaries.push(BinaryVar { var: z1, layer: k + 1, neuron: i, role: BinaryRole::Active });
                    binaries.push(BinaryVar { var: z2, layer: k + 1, neuron: i, role: BinaryRole::Saturated });
                    (Some(z1), Some(z2))
                }
                (ActivationKind::Identity, _) => unreachable!("hidden layers are never identity"),
            };
            layer_plan.push(plan);
        }
        binary_plan.push(layer_plan);
    }

    let mut lp = LpModel::new(next);
    let vars = VarMap { n_inputs, post, outputs };

    for (j, &(lo, hi)) in net.input_bounds().iter().enumerate() {
        lp.set_bounds(j, lo, hi)?;
    }
    for b in &binaries {
        lp.set_bounds(b.var, 0.0, 1.0)?;
    }

    for (k, &size) in hidden_sizes.iter().enumerate() {
        let layer = k + 1;
        let activation = net.layers()[k].activation;
        for i in 0..size {
            let x = vars.post[k][i];
            let (lo, hi) = (bounds.lower[k][i], bounds.upper[k][i]);
            let status = report.statuses[k][i];
            let (expr, bias) = pre_expr(net, &vars, layer, i);
            let with_x = |extra: &[(usize, f64)]| -> Vec<(usize, f64)> {
                let mut row = vec![(x, 1.0)];
                row.extend(expr.iter().map(|&(v, w)| (v, -w)));
                row.extend_from_slice(extra);
                row
            };
            match (activation, status) {
                (_, NeuronStatus::StablyInactive) => {
                    lp.set_bounds(x, 0.0, 0.0)?;
                }
                (ActivationKind::Relu, NeuronStatus::StablyActive) => {
                    lp.set_bounds(x, lo, hi)?;
                    lp.add_row(with_x(&[]), Relation::Eq, bias)?;
                }
                (ActivationKind::Relu, NeuronStatus::Unstable) => {
                    let z = binary_plan[k][i].0.expect("unstable relu owns a binary");
                    lp.set_bounds(x, 0.0, hi.max(0.0))?;
                    lp.add_row(with_x(&[]), Relation::Ge, bias)?;
                    lp.add_row(with_x(&[(z, -lo)]), Relation::Le, bias - lo)?;
                    lp.add_row(vec![(x, 1.0), (z, -hi)], Relation::Le, 0.0)?;
                }
                (ActivationKind::ClippedRelu { clip }, NeuronStatus::StablyActive) => {
                    match binary_plan[k][i] {
                        (None, None) if lo >= clip => {
                            // Saturated on the whole box.
                            lp.set_bounds(x, clip, clip)?;
                        }
                        (None, None) => {
                            // Linear arm on the whole box (hi <= clip).
                            lp.set_bounds(x, lo, hi)?;
                            lp.add_row(with_x(&[]), Relation::Eq, bias)?;
                        }
                        (None, Some(z2)) => {
                            // Positive everywhere but the clip can engage.
                            lp.set_bounds(x, lo.min(clip), clip)?;
                            lp.add_row(with_x(&[]), Relation::Le, bias)?;
                            lp.add_row(vec![(x, 1.0), (z2, -clip)], Relation::Ge, 0.0)?;
                            lp.add_row(with_x(&[(z2, hi - clip)]), Relation::Ge, bias)?;
                        }
                        _ => unreachable!(),
                    }
                }
                (ActivationKind::ClippedRelu { clip }, NeuronStatus::Unstable) => {
                    let (z1, z2) = (
                        binary_plan[k][i].0.expect("unstable clipped owns z1"),
                        binary_plan[k][i].1.expect("unstable clipped owns z2"),
                    );
                    lp.set_bounds(x, 0.0, clip.min(hi.max(0.0)))?;
                    lp.add_row(vec![(x, 1.0), (z1, -clip)], Relation::Le, 0.0)?;
                    lp.add_row(vec![(x, 1.0), (z1, -hi)], Relation::Le, 0.0)?;
                    lp.add_row(with_x(&[(z1, -lo)]), Relation::Le, bias - lo)?;
                    lp.add_row(vec![(x, 1.0), (z2, -clip)], Relation::Ge, 0.0)?;
                    lp.add_row(with_x(&[(z2, hi - clip)]), Relation::Ge, bias)?;
                    lp.add_row(vec![(z1, 1.0), (z2, -1.0)], Relation::Ge, 0.0)?;
                }
                (ActivationKind::Identity, _) => unreachable!(),
            }
        }
    }

    // Output layer: affine equalities with IA bounds on the variables.
    let last = net.depth() - 1;
    for i in 0..n_outputs {
        let y = vars.outputs[i];
        lp.set_bounds(y, bounds.lower[last][i], bounds.upper[last][i])?;
        let (expr, bias) = pre_expr(net, &vars, last + 1, i);
        let mut row = vec![(y, 1.0)];
        row.extend(expr.iter().map(|&(v, w)| (v, -w)));
        lp.add_row(row, Relation::Eq, bias)?;
    }

    Ok(MilpModel { lp, vars, binaries, bounds: bounds.clone() })
}

/// Assignment of every model variable consistent with evaluating `net` at `x`.
pub fn assignment_at(model: &MilpModel, net: &Network, x: &[f64]) -> Result<Vec<f64>, MilpError> {
    let trace = net.forward_trace(x)?;
    let mut values = vec![0.0; model.lp.n_vars()];
    values[..x.len()].copy_from_slice(x);
    for (k, layer_vars) in model.vars.post.iter().enumerate() {
        let act = net.layers()[k].activation;
        for (i, &v) in layer_vars.iter().enumerate() {
            values[v] = act.apply(trace.pre_activations[k][i]);
        }
    }
    for (i, &v) in model.vars.outputs.iter().enumerate() {
        values[v] = trace.output[i];
    }
    for b in &model.binaries {
        let pre = trace.pre_activations[b.layer - 1][b.neuron];
        values[b.var] = match (b.role, net.layers()[b.layer - 1].activation) {
            (BinaryRole::Active, _) => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            (BinaryRole::Saturated, ActivationKind::ClippedRelu { clip }) => {
                if pre >= clip {
                    1.0
                } else {
                    0.0
                }
            }
            (BinaryRole::Saturated, _) => 0.0,
        };
    }
    Ok(values)
}

/// Largest violation of any row or variable bound when the network's own
/// evaluation at `x` is substituted into the model. Exact encodings keep this
/// at numerical noise for every `x` in the box.
pub fn exactness_violation(model: &MilpModel, net: &Network, x: &[f64]) -> Result<f64, MilpError> {
    let values = assignment_at(model, net, x)?;
    let mut worst: f64 = 0.0;
    let (lower, upper) = model.lp.bounds();
    for j in 0..model.lp.n_vars() {
        if lower[j].is_finite() {
            worst = worst.max(lower[j] - values[j]);
        }
        if upper[j].is_finite() {
            worst = worst.max(values[j] - upper[j]);
        }
    }
    for row in model.lp.rows() {
        let lhs: f64 = row.coeffs.iter().map(|&(j, c)| c * values[j]).sum();
        let viol = match row.relation {
            Relation::Le => lhs - row.rhs,
            Relation::Ge => row.rhs - lhs,
            Relation::Eq => (lhs - row.rhs).abs(),
        };
        worst = worst.max(viol);
    }
    Ok(worst)
}

/// Valid output-layer bounds recomputed by interval arithmetic from the
/// (possibly tightened) final hidden layer.
pub(crate) fn refresh_output_bounds(net: &Network, bounds: &mut BoundsSet) {
    let last = net.depth() - 1;
    if last == 0 {
        return;
    }
    let act = net.layers()[last - 1].activation;
    let post_lo: Vec<f64> = bounds.lower[last - 1].iter().map(|&v| act.apply(v)).collect();
    let post_hi: Vec<f64> = bounds.upper[last - 1].iter().map(|&v| act.apply(v)).collect();
    let layer = &net.layers()[last];
    for i in 0..layer.output_dim() {
        let mut lo = layer.bias[i];
        let mut hi = layer.bias[i];
        for (j, &w) in layer.weights.row(i).iter().enumerate() {
            let a = w * post_lo[j];
            let b = w * post_hi[j];
            lo += a.min(b);
            hi += a.max(b);
        }
        bounds.lower[last][i] = bounds.lower[last][i].max(lo);
        bounds.upper[last][i] = bounds.upper[last][i].min(hi);
    }
}



#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{ia_bounds, Provenance};
    use crate::network::testutil::random_relu_net;
    use crate::network::Layer;
    use ndarray::{arr1, arr2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unstable_one_neuron() -> (Network, BoundsSet) {
        let net = Network::new(
            vec![
                Layer::new(arr2(&[[1.0]]), arr1(&[0.0]), ActivationKind::Relu),
                Layer::new(arr2(&[[1.0]]), arr1(&[0.0]), ActivationKind::Identity),
            ],
            vec![(-1.0, 1.0)],
        )
        .unwrap();
        let bounds = ia_bounds(&net);
        (net, bounds)
    }

    #[test]
    fn unstable_relu_sandwiches_the_activation() {
        let (net, bounds) = unstable_one_neuron();
        let model = encode(&net, &bounds).unwrap();
        assert_eq!(model.binaries.len(), 1);
        // Fix the input to 0.5 and minimize the post-activation variable: the
        // big-M rows force x >= pre = 0.5.
        let x_post = model.vars.post[0][0];
        let mut lp = model.lp.clone();
        lp.set_objective(&[(x_post, 1.0)], crate::lp::Sense::Min).unwrap();
        let sol = lp.solve_with_bounds(&[(0, 0.5, 0.5)]);
        assert!((sol.x[x_post] - 0.5).abs() <= 1e-8);
        // Maximizing over the relaxation reaches U z with z free in [0, 1].
        lp.set_objective(&[(x_post, 1.0)], crate::lp::Sense::Max).unwrap();
        let sol = lp.solve_with_bounds(&[(0, 0.5, 0.5)]);
        assert!(sol.objective <= 1.0 + 1e-8);
        assert!(sol.objective >= 0.5 - 1e-8);
    }

    #[test]
    fn stably_active_neuron_needs_no_binary() {
        let net = Network::new(
            vec![
                Layer::new(arr2(&[[1.0]]), arr1(&[5.0]), ActivationKind::Relu),
                Layer::new(arr2(&[[1.0]]), arr1(&[0.0]), ActivationKind::Identity),
            ],
            vec![(-1.0, 1.0)],
        )
        .unwrap();
        let model = encode(&net, &ia_bounds(&net)).unwrap();
        assert!(model.binaries.is_empty());
    }

    #[test]
    fn clipped_saturation_forces_both_binaries() {
        // Pre-activation can reach 7 with M = 2: at x = 7 only z1 = z2 = 1 and
        // post = M is feasible.
        let net = Network::new(
            vec![
                Layer::new(arr2(&[[1.0]]), arr1(&[0.0]), ActivationKind::ClippedRelu { clip: 2.0 }),
                Layer::new(arr2(&[[1.0]]), arr1(&[0.0]), ActivationKind::Identity),
            ],
            vec![(-10.0, 10.0)],
        )
        .unwrap();
        let model = encode(&net, &ia_bounds(&net)).unwrap();
        assert_eq!(model.binaries.len(), 2);
        let viol = exactness_violation(&model, &net, &[7.0]).unwrap();
        assert!(viol <= 1e-9, "violation {viol}");
        let values = assignment_at(&model, &net, &[7.0]).unwrap();
        assert_eq!(values[model.binaries[0].var], 1.0);
        assert_eq!(values[model.binaries[1].var], 1.0);
        assert_eq!(values[model.vars.post[0][0]], 2.0);
    }

    #[test]
    fn exactness_on_random_relu_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for seed in 0..5 {
            let net = random_relu_net(
                &mut ChaCha8Rng::seed_from_u64(seed),
                &[2, 6, 5, 1],
                vec![(-1.0, 1.0), (-1.0, 1.0)],
            );
            let model = encode(&net, &ia_bounds(&net)).unwrap();
            for _ in 0..200 {
                let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let viol = exactness_violation(&model, &net, &x).unwrap();
                assert!(viol <= 1e-9, "seed {seed}: violation {viol} at {x:?}");
            }
        }
    }

    #[test]
    fn exactness_on_random_clipped_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        for (seed, clip) in [(0u64, 2.0), (1, 5.0), (2, 2.0)] {
            let net = clipped_net(seed, clip);
            let model = encode(&net, &ia_bounds(&net)).unwrap();
            for _ in 0..200 {
                let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                let viol = exactness_violation(&model, &net, &x).unwrap();
                assert!(viol <= 1e-9, "violation {viol} at {x:?}");
            }
        }
    }

    fn clipped_net(seed: u64, clip: f64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [2usize, 6, 5, 1];
        let mut layers = Vec::new();
        for (k, pair) in sizes.windows(2).enumerate() {
            let scale = 1.6;
            let weights = ndarray::Array2::from_shape_fn((pair[1], pair[0]), |_| rng.gen_range(-scale..scale));
            let bias = ndarray::Array1::from_shape_fn(pair[1], |_| rng.gen_range(-0.5..0.5));
            let act = if k + 2 == sizes.len() {
                ActivationKind::Identity
            } else {
                ActivationKind::ClippedRelu { clip }
            };
            layers.push(Layer::new(weights, bias, act));
        }
        Network::new(layers, vec![(-2.0, 2.0), (-2.0, 2.0)]).unwrap()
    }

    #[test]
    fn contradictory_bounds_rejected() {
        let (net, mut bounds) = unstable_one_neuron();
        bounds.lower[0][0] = 1.0;
        bounds.upper[0][0] = -1.0;
        assert!(matches!(
            encode(&net, &bounds),
            Err(MilpError::Bounds(crate::bounds::BoundsError::Crossed { .. }))
        ));
    }

    #[test]
    fn relaxation_is_sound_for_minimization() {
        // LP relaxation bound must never exceed the true minimum.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = random_relu_net(&mut rng, &[2, 5, 4, 1], vec![(-1.0, 1.0), (-1.0, 1.0)]);
        let model = encode(&net, &ia_bounds(&net)).unwrap();
        let mut lp = model.lp.clone();
        lp.set_objective(&[(model.vars.outputs[0], 1.0)], crate::lp::Sense::Min).unwrap();
        let relax = lp.solve();
        assert_eq!(relax.status, crate::lp::LpStatus::Optimal);
        let mut best = f64::INFINITY;
        for i in 0..50 {
            for j in 0..50 {
                let x = [-1.0 + 2.0 * i as f64 / 49.0, -1.0 + 2.0 * j as f64 / 49.0];
                best = best.min(net.forward(&x).unwrap()[0]);
            }
        }
        assert!(relax.objective <= best + 1e-9, "relaxation {} vs sampled min {best}", relax.objective);
    }

    #[test]
    fn provenance_is_carried() {
        let (net, bounds) = unstable_one_neuron();
        let model = encode(&net, &bounds).unwrap();
        assert_eq!(model.bounds.provenance, Provenance::Ia);
    }
}
