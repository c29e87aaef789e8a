//! LP-based optimization-based bound tightening.
//!
//! Two LPs per hidden neuron, minimizing and maximizing its pre-activation
//! expression over the current relaxed encoding. The sweep runs in the fixed
//! order layer 1 to J-1, neuron index ascending, and installs each tightened
//! pair immediately so every later neuron's relaxation already benefits.

use super::{encode, pre_expr, MilpError};
use crate::bounds::{classify, BoundsSet, Provenance};
use crate::lp::{LpStatus, Sense};
use crate::network::Network;
use crate::timing::Stopwatch;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct ObbtOptions {
    pub time_budget_secs: f64,
    /// Sweeps over all neurons; the paper tightens once.
    pub passes: usize,
}

impl Default for ObbtOptions {
    fn default() -> Self {
        ObbtOptions { time_budget_secs: f64::INFINITY, passes: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObbtStats {
    pub lp_count: usize,
    pub newly_stable: usize,
    pub lp_secs: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ObbtReport {
    pub bounds: BoundsSet,
    pub stats: ObbtStats,
}

pub fn obbt(net: &Network, start: &BoundsSet, opts: &ObbtOptions) -> Result<ObbtReport, MilpError> {
    start.validate_shape(net)?;
    let watch = Stopwatch::start();
    let mut bounds = start.clone();
    bounds.provenance = match start.provenance {
        Provenance::ScaledIa | Provenance::ScaledObbt => Provenance::ScaledObbt,
        _ => Provenance::Obbt,
    };
    let stable_before = stable_count(net, &bounds)?;
    let mut lp_count = 0usize;
    let mut warnings = Vec::new();
    let hidden_layers = net.depth() - 1;

    'sweep: for pass in 0..opts.passes.max(1) {
        for k in 1..=hidden_layers {
            for i in 0..net.hidden_sizes()[k - 1] {
                if watch.elapsed_secs() > opts.time_budget_secs {
                    warnings.push(format!("time budget hit in pass {pass} at layer {k}, neuron {i}"));
                    break 'sweep;
                }
                // Re-encode so this neuron's LP sees every bound installed so far.
                let model = encode(net, &bounds)?;
                let (expr, bias) = pre_expr(net, &model.vars, k, i);
                let mut lp = model.lp;

                lp.set_objective(&expr, Sense::Min)?;
                let lo_sol = lp.solve();
                lp.set_objective(&expr, Sense::Max)?;
                let hi_sol = lp.solve();
                lp_count += 2;

                if lo_sol.status != LpStatus::Optimal || hi_sol.status != LpStatus::Optimal {
                    warnings.push(format!(
                        "layer {k}, neuron {i}: LP returned {:?}/{:?}; keeping previous bounds",
                        lo_sol.status, hi_sol.status
                    ));
                    continue;
                }
                let cand_lo = lo_sol.objective + bias;
                let cand_hi = hi_sol.objective + bias;
                let new_lo = bounds.lower[k - 1][i].max(cand_lo);
                let new_hi = bounds.upper[k - 1][i].min(cand_hi);
                if new_lo > new_hi {
                    warnings.push(format!(
                        "layer {k}, neuron {i}: tightened interval crossed ([{new_lo}, {new_hi}]); keeping previous bounds"
                    ));
                    continue;
                }
                bounds.lower[k - 1][i] = new_lo;
                bounds.upper[k - 1][i] = new_hi;
            }
        }
    }

    super::refresh_output_bounds(net, &mut bounds);
    let stable_after = stable_count(net, &bounds)?;
    Ok(ObbtReport {
        bounds,
        stats: ObbtStats {
            lp_count,
            newly_stable: stable_after.saturating_sub(stable_before),
            lp_secs: watch.elapsed_secs(),
            warnings,
        },
    })
}

fn stable_count(net: &Network, bounds: &BoundsSet) -> Result<usize, MilpError> {
    let report = classify(net, bounds)?;
    Ok(report
        .statuses
        .iter()
        .flatten()
        .filter(|s| !matches!(s, crate::bounds::NeuronStatus::Unstable))
        .count())
}
