//! Pre-activation bounds and stable-neuron classification.
//!
//! Interval arithmetic propagates the input box layer by layer: sound but
//! loose, with the characteristic exponential growth over depth. The bounds
//! feed the big-M coefficients of the MILP encoding and classify each hidden
//! neuron as stably active, stably inactive or unstable.

use crate::network::{Network, NetworkError, ScalingFactors};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Where a bounds set came from; reports key their width statistics by this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Ia,
    Obbt,
    ScaledIa,
    ScaledObbt,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Ia => write!(f, "ia"),
            Provenance::Obbt => write!(f, "obbt"),
            Provenance::ScaledIa => write!(f, "scaled_ia"),
            Provenance::ScaledObbt => write!(f, "scaled_obbt"),
        }
    }
}

/// Valid lower/upper bounds on every layer's pre-activation values.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsSet {
    pub lower: Vec<Array1<f64>>,
    pub upper: Vec<Array1<f64>>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeuronStatus {
    StablyActive,
    StablyInactive,
    Unstable,
}

/// Per-hidden-neuron statuses plus the stable share in [0, 1].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub statuses: Vec<Vec<NeuronStatus>>,
    pub stable_fraction: f64,
}

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("bounds cover {got} layers but the network has {expected}")]
    LayerMismatch { expected: usize, got: usize },
    #[error("layer {layer}, neuron {neuron}: lower {lo} exceeds upper {hi}")]
    Crossed { layer: usize, neuron: usize, lo: f64, hi: f64 },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("scaled bounds deviate at layer {layer}, neuron {neuron}: relative error {rel}")]
    ScaledDeviation { layer: usize, neuron: usize, rel: f64 },
}

impl BoundsSet {
    pub fn validate_shape(&self, net: &Network) -> Result<(), BoundsError> {
        if self.lower.len() != net.depth() || self.upper.len() != net.depth() {
            return Err(BoundsError::LayerMismatch { expected: net.depth(), got: self.lower.len() });
        }
        for (k, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            for i in 0..lo.len() {
                if lo[i] > hi[i] {
                    return Err(BoundsError::Crossed { layer: k + 1, neuron: i, lo: lo[i], hi: hi[i] });
                }
            }
        }
        Ok(())
    }

    /// Mean of `U - L` over all hidden neurons; the width statistic behind the
    /// geometric-mean ratios in reports.
    pub fn mean_hidden_width(&self) -> f64 {
        let hidden = self.lower.len().saturating_sub(1);
        if hidden == 0 {
            return 0.0;
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for k in 0..hidden {
            for i in 0..self.lower[k].len() {
                total += self.upper[k][i] - self.lower[k][i];
                count += 1;
            }
        }
        total / count as f64
    }

    /// Per-layer mean widths, hidden and output alike.
    pub fn layer_mean_widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo).sum() / lo.len().max(1) as f64)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap()
    }

    pub fn from_json(text: &str) -> Result<BoundsSet, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Serialize, Deserialize)]
struct BoundsFile {
    provenance: Provenance,
    lower: Vec<Vec<f64>>,
    upper: Vec<Vec<f64>>,
}

impl Serialize for BoundsSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        BoundsFile {
            provenance: self.provenance,
            lower: self.lower.iter().map(|v| v.to_vec()).collect(),
            upper: self.upper.iter().map(|v| v.to_vec()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundsSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let file = BoundsFile::deserialize(d)?;
        Ok(BoundsSet {
            provenance: file.provenance,
            lower: file.lower.into_iter().map(Array1::from_vec).collect(),
            upper: file.upper.into_iter().map(Array1::from_vec).collect(),
        })
    }
}

/// Interval-arithmetic bounds: for each neuron the min/max of `W x + b` over
/// the previous layer's post-activation box.
pub fn ia_bounds(net: &Network) -> BoundsSet {
    let mut post_lo: Array1<f64> = net.input_bounds().iter().map(|b| b.0).collect();
    let mut post_hi: Array1<f64> = net.input_bounds().iter().map(|b| b.1).collect();
    let mut lower = Vec::with_capacity(net.depth());
    let mut upper = Vec::with_capacity(net.depth());
    for layer in net.layers() {
        let n_out = layer.output_dim();
        let mut lo = Array1::zeros(n_out);
        let mut hi = Array1::zeros(n_out);
        for i in 0..n_out {
            let mut l = layer.bias[i];
            let mut u = layer.bias[i];
            for (j, &w) in layer.weights.row(i).iter().enumerate() {
                let a = w * post_lo[j];
                let b = w * post_hi[j];
                l += a.min(b);
                u += a.max(b);
            }
            lo[i] = l;
            hi[i] = u;
        }
        post_lo = lo.mapv(|t| layer.activation.apply(t));
        post_hi = hi.mapv(|t| layer.activation.apply(t));
        lower.push(lo);
        upper.push(hi);
    }
    BoundsSet { lower, upper, provenance: Provenance::Ia }
}

/// Sign-based stability of every hidden neuron. Ties at zero count as
/// unstable, the conservative side.
pub fn classify(net: &Network, bounds: &BoundsSet) -> Result<StabilityReport, BoundsError> {
    bounds.validate_shape(net)?;
    let hidden_layers = net.depth() - 1;
    let mut statuses = Vec::with_capacity(hidden_layers);
    let mut stable = 0usize;
    let mut total = 0usize;
    for k in 0..hidden_layers {
        let mut layer_statuses = Vec::with_capacity(bounds.lower[k].len());
        for i in 0..bounds.lower[k].len() {
            let status = if bounds.lower[k][i] > 0.0 {
                NeuronStatus::StablyActive
            } else if bounds.upper[k][i] < 0.0 {
                NeuronStatus::StablyInactive
            } else {
                NeuronStatus::Unstable
            };
            if status != NeuronStatus::Unstable {
                stable += 1;
            }
            total += 1;
            layer_statuses.push(status);
        }
        statuses.push(layer_statuses);
    }
    let stable_fraction = if total == 0 { 0.0 } else { stable as f64 / total as f64 };
    Ok(StabilityReport { statuses, stable_fraction })
}

/// Verification record returned by [`scaled_bounds_relation`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaledBoundsCheck {
    pub max_hidden_rel_dev: f64,
    pub max_output_rel_dev: f64,
    pub worst_hidden: Option<(usize, usize)>,
}

/// Checks the interval-arithmetic consequence of rescaling: hidden bounds of
/// the scaled network equal `c` times the originals, output bounds are
/// untouched. Fails loudly naming the worst neuron when the relation breaks.
pub fn scaled_bounds_relation(net: &Network, c: &ScalingFactors) -> Result<ScaledBoundsCheck, BoundsError> {
    let scaled = net.apply_scaling(c)?;
    let orig = ia_bounds(net);
    let scaled_bounds = ia_bounds(&scaled);
    let hidden_layers = net.depth() - 1;
    let mut max_hidden: f64 = 0.0;
    let mut worst = None;
    for k in 0..hidden_layers {
        let factors = &c.layers()[k];
        for i in 0..orig.lower[k].len() {
            for (a, b) in [
                (orig.lower[k][i] * factors[i], scaled_bounds.lower[k][i]),
                (orig.upper[k][i] * factors[i], scaled_bounds.upper[k][i]),
            ] {
                let rel = (a - b).abs() / a.abs().max(1.0);
                if rel > max_hidden {
                    max_hidden = rel;
                    worst = Some((k + 1, i));
                }
            }
        }
    }
    let last = net.depth() - 1;
    let mut max_output: f64 = 0.0;
    for i in 0..orig.lower[last].len() {
        for (a, b) in [
            (orig.lower[last][i], scaled_bounds.lower[last][i]),
            (orig.upper[last][i], scaled_bounds.upper[last][i]),
        ] {
            let rel = (a - b).abs() / a.abs().max(1.0);
            max_output = max_output.max(rel);
        }
    }
    if max_hidden > 1e-8 || max_output > 1e-8 {
        let (layer, neuron) = worst.unwrap_or((net.depth(), 0));
        return Err(BoundsError::ScaledDeviation { layer, neuron, rel: max_hidden.max(max_output) });
    }
    Ok(ScaledBoundsCheck { max_hidden_rel_dev: max_hidden, max_output_rel_dev: max_output, worst_hidden: worst })
}
