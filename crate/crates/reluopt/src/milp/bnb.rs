//! Branch-and-bound over the big-M encoding.
//!
//! Best-bound node selection, branching on the most fractional binary (ties
//! to the lowest layer, then lowest index), node relaxations solved by the
//! dense simplex. Every node's LP input point is a feasible network input, so
//! evaluating the network there yields an incumbent for free; a node whose
//! relaxation comes back integral is exact and closes immediately.

use super::{encode, MilpError, MilpModel};
use crate::bounds::{ia_bounds, BoundsSet};
use crate::lp::{LpStatus, Sense};
use crate::network::Network;
use crate::timing::Stopwatch;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone)]
pub struct BnbOptions {
    pub time_limit_secs: f64,
    pub gap_tol: f64,
    pub collect_trace: bool,
}

impl Default for BnbOptions {
    fn default() -> Self {
        BnbOptions { time_limit_secs: 300.0, gap_tol: 1e-6, collect_trace: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnbStatus {
    Optimal,
    TimeLimit,
    Infeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeTraceEntry {
    pub node: u64,
    pub depth: usize,
    pub bound: f64,
    pub incumbent: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BnbResult {
    pub status: BnbStatus,
    /// Incumbent network input.
    pub x: Vec<f64>,
    pub objective: f64,
    pub best_bound: f64,
    pub gap: f64,
    pub nodes: u64,
    pub wall_secs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<NodeTraceEntry>>,
}

/// Globally minimizes the network output over its input box.
pub fn solve_min(net: &Network, bounds: &BoundsSet, opts: &BnbOptions) -> Result<BnbResult, MilpError> {
    let model = encode(net, bounds)?;
    let mut lp = model.lp.clone();
    lp.set_objective(&[(model.vars.outputs[0], 1.0)], Sense::Min)?;
    let model = MilpModel { lp, ..model };
    let evaluate = |x: &[f64]| net.forward(x).map(|y| y[0]);
    branch_and_bound(&model, &evaluate, opts, 1.0)
}

/// Maximizes `h(x0 + eps)_k - h(x0 + eps)_i` over the infinity-ball of radius
/// `delta` intersected with the input box. A positive optimum certifies an
/// adversarial example, a negative one certifies robustness at `x0`.
pub fn solve_adversarial(
    net: &Network,
    x0: &[f64],
    delta: f64,
    labels: (usize, usize),
    opts: &BnbOptions,
) -> Result<BnbResult, MilpError> {
    let (k, i) = labels;
    if k == i || k >= net.output_dim() || i >= net.output_dim() {
        return Err(MilpError::BadLabels { k, i, outputs: net.output_dim() });
    }
    let mut box_bounds = Vec::with_capacity(net.input_dim());
    for (j, &(lo, hi)) in net.input_bounds().iter().enumerate() {
        let l = lo.max(x0[j] - delta);
        let h = hi.min(x0[j] + delta);
        if l > h {
            return Err(MilpError::EmptyBox);
        }
        box_bounds.push((l, h));
    }
    // Degenerate intervals crash Network validation (lo < hi required), so a
    // zero-width ball is padded infinitesimally and fixed via the encoding.
    let mut shifted_bounds = box_bounds.clone();
    for b in shifted_bounds.iter_mut() {
        if b.0 >= b.1 {
            let pad = 1e-12_f64.max(b.0.abs() * 1e-15);
            *b = (b.0 - pad, b.1 + pad);
        }
    }
    let shifted = Network::new(net.layers().to_vec(), shifted_bounds)?;
    let bounds = ia_bounds(&shifted);
    let model = encode(&shifted, &bounds)?;
    let mut lp = model.lp.clone();
    // Minimize h_i - h_k; results are negated back into the max sense.
    lp.set_objective(&[(model.vars.outputs[i], 1.0), (model.vars.outputs[k], -1.0)], Sense::Min)?;
    for (j, &(lo, hi)) in box_bounds.iter().enumerate() {
        lp.set_bounds(j, lo, hi)?;
    }
    let model = MilpModel { lp, ..model };
    let evaluate = |x: &[f64]| net.forward(x).map(|y| y[i] - y[k]);
    let mut res = branch_and_bound(&model, &evaluate, opts, -1.0)?;
    res.objective = -res.objective;
    res.best_bound = -res.best_bound;
    Ok(res)
}

struct Node {
    fixings: Vec<(usize, u8)>,
    bound: f64,
    depth: usize,
    id: u64,
}

struct NodeKey {
    bound: f64,
    id: u64,
}

impl PartialEq for NodeKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for NodeKey {}
impl PartialOrd for NodeKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for NodeKey {
    // BinaryHeap is a max-heap; reverse so the smallest bound pops first,
    // oldest node on ties.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.id.cmp(&self.id))
    }
}

/// Core loop in minimization space. `sign` only flags how the caller will
/// report (it does not change the math here).
fn branch_and_bound(
    model: &MilpModel,
    evaluate: &dyn Fn(&[f64]) -> Result<f64, crate::network::NetworkError>,
    opts: &BnbOptions,
    _sign: f64,
) -> Result<BnbResult, MilpError> {
    let watch = Stopwatch::start();
    let n_inputs = model.vars.n_inputs;
    let gap_scale = |inc: f64| inc.abs().max(1.0);

    let mut incumbent = f64::INFINITY;
    let mut best_x: Vec<f64> = Vec::new();
    let mut nodes: u64 = 0;
    let mut next_id: u64 = 0;
    let mut trace = if opts.collect_trace { Some(Vec::new()) } else { None };

    // BinaryHeap needs Ord on the element; only the key participates.
    struct HeapItem(NodeKey, Node);
    impl PartialEq for HeapItem {
        fn eq(&self, other: &Self) -> bool {
            self.0 == other.0
        }
    }
    impl Eq for HeapItem {}
    impl PartialOrd for HeapItem {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.0.cmp(&other.0))
        }
    }
    impl Ord for HeapItem {
        fn cmp(&self, other: &Self) -> Ordering {
            self.0.cmp(&other.0)
        }
    }
    let mut queue: BinaryHeap<HeapItem> = BinaryHeap::new();

    queue.push(HeapItem(
        NodeKey { bound: f64::NEG_INFINITY, id: 0 },
        Node { fixings: Vec::new(), bound: f64::NEG_INFINITY, depth: 0, id: 0 },
    ));
    next_id += 1;

    let finish = |status: BnbStatus, incumbent: f64, best_x: Vec<f64>, best_bound: f64, nodes: u64, watch: &Stopwatch, trace: Option<Vec<NodeTraceEntry>>| {
        let bb = best_bound.min(incumbent);
        let gap = if incumbent.is_finite() { ((incumbent - bb) / gap_scale(incumbent)).max(0.0) } else { f64::INFINITY };
        Ok(BnbResult {
            status,
            x: best_x,
            objective: incumbent,
            best_bound: bb,
            gap,
            nodes,
            wall_secs: watch.elapsed_secs(),
            trace,
        })
    };

    while let Some(HeapItem(_, node)) = queue.pop() {
        // Global lower bound is the smallest key in the queue, which is the
        // node just popped (children inherit fresh, larger bounds).
        let global_bound = node.bound;
        if incumbent.is_finite() && global_bound >= incumbent - opts.gap_tol * gap_scale(incumbent) {
            return finish(BnbStatus::Optimal, incumbent, best_x, global_bound, nodes, &watch, trace);
        }
        if watch.elapsed_secs() > opts.time_limit_secs {
            return finish(BnbStatus::TimeLimit, incumbent, best_x, global_bound, nodes, &watch, trace);
        }

        let overrides: Vec<(usize, f64, f64)> =
            node.fixings.iter().map(|&(v, val)| (v, val as f64, val as f64)).collect();
        let sol = model.lp.solve_with_bounds(&overrides);
        nodes += 1;
        match sol.status {
            LpStatus::Infeasible => continue,
            LpStatus::Optimal => {}
            LpStatus::Unbounded | LpStatus::NumericalFailure => {
                return Err(MilpError::Numerical {
                    context: format!("solving node {} relaxation (status {:?})", node.id, sol.status),
                });
            }
        }
        let node_bound = sol.objective;
        if let Some(t) = trace.as_mut() {
            t.push(NodeTraceEntry { node: node.id, depth: node.depth, bound: node_bound, incumbent });
        }

        // The LP input point is always feasible: evaluate the network there.
        let x_in = &sol.x[..n_inputs];
        let value = evaluate(x_in)?;
        if value < incumbent {
            incumbent = value;
            best_x = x_in.to_vec();
        }

        if incumbent.is_finite() && node_bound >= incumbent - opts.gap_tol * gap_scale(incumbent) {
            continue;
        }

        // Branch on the most fractional binary.
        let mut pick: Option<(usize, f64)> = None;
        for (idx, b) in model.binaries.iter().enumerate() {
            if node.fixings.iter().any(|&(v, _)| v == b.var) {
                continue;
            }
            let z = sol.x[b.var];
            let frac = z.min(1.0 - z);
            if frac > pick.map_or(1e-6, |(_, f)| f) {
                pick = Some((idx, frac));
            }
        }
        let Some((branch_idx, _)) = pick else {
            // Integral relaxation: the node is solved exactly; the incumbent
            // update above already captured its value.
            continue;
        };
        let bvar = model.binaries[branch_idx].var;
        for val in [0u8, 1u8] {
            let mut fixings = node.fixings.clone();
            fixings.push((bvar, val));
            queue.push(HeapItem(
                NodeKey { bound: node_bound, id: next_id },
                Node { fixings, bound: node_bound, depth: node.depth + 1, id: next_id },
            ));
            next_id += 1;
        }
    }

    if incumbent.is_finite() {
        finish(BnbStatus::Optimal, incumbent, best_x, incumbent, nodes, &watch, trace)
    } else {
        Ok(BnbResult {
            status: BnbStatus::Infeasible,
            x: Vec::new(),
            objective: f64::INFINITY,
            best_bound: f64::INFINITY,
            gap: f64::INFINITY,
            nodes,
            wall_secs: watch.elapsed_secs(),
            trace,
        })
    }
}
