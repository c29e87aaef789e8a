//! Dense feed-forward networks with ReLU-family activations.
//!
//! A [`Network`] is an ordered list of layers `x -> s(Wx + b)` together with a
//! box of valid inputs. Hidden layers use one activation kind (ReLU or clipped
//! ReLU), the final layer is always the identity, so the network is a
//! piecewise affine function of its input.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Activation applied element-wise after a layer's affine map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    /// `max{0, min{clip, t}}` with a positive saturation threshold.
    ClippedRelu { clip: f64 },
    Identity,
}

impl ActivationKind {
    pub fn apply(&self, t: f64) -> f64 {
        match *self {
            ActivationKind::Relu => t.max(0.0),
            ActivationKind::ClippedRelu { clip } => t.min(clip).max(0.0),
            ActivationKind::Identity => t,
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, ActivationKind::Identity)
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Relu => write!(f, "relu"),
            ActivationKind::ClippedRelu { clip } => write!(f, "clipped_relu(M={clip})"),
            ActivationKind::Identity => write!(f, "identity"),
        }
    }
}

/// One dense layer: weight matrix (rows = output neurons), bias, activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: ActivationKind,
}

impl Layer {
    pub fn new(weights: Array2<f64>, bias: Array1<f64>, activation: ActivationKind) -> Self {
        Layer { weights, bias, activation }
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// Positive per-neuron factors for the hidden layers of a ReLU network.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingFactors {
    per_layer: Vec<Array1<f64>>,
}

impl ScalingFactors {
    pub fn new(per_layer: Vec<Array1<f64>>) -> Result<Self, NetworkError> {
        for (k, c) in per_layer.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                if !(v.is_finite() && v > 0.0) {
                    return Err(NetworkError::InvalidScalingFactor { layer: k + 1, neuron: i, value: v });
                }
            }
        }
        Ok(ScalingFactors { per_layer })
    }

    /// All factors one; scaling with this is the identity transformation.
    pub fn identity(hidden_sizes: &[usize]) -> Self {
        ScalingFactors { per_layer: hidden_sizes.iter().map(|&n| Array1::ones(n)).collect() }
    }

    pub fn layers(&self) -> &[Array1<f64>] {
        &self.per_layer
    }
}

/// Pre-activation values of every layer for one input, plus the output.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `pre_activations[k]` holds `W^(k+1) x^(k) + b^(k+1)` for layer k+1.
    pub pre_activations: Vec<Array1<f64>>,
    pub output: Array1<f64>,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("network must contain at least one layer")]
    Empty,
    #[error("layer {layer}: expected input dimension {expected}, got {got}")]
    DimensionMismatch { layer: usize, expected: usize, got: usize },
    #[error("layer {layer}: bias length {got} does not match {expected} output neurons")]
    BiasMismatch { layer: usize, expected: usize, got: usize },
    #[error("layer {layer}: non-finite entry in {field}")]
    NonFinite { layer: usize, field: &'static str },
    #[error("layer {layer}: clip threshold must be positive, got {value}")]
    InvalidClip { layer: usize, value: f64 },
    #[error("final layer must use the identity activation")]
    FinalNotIdentity,
    #[error("layer {layer}: hidden layers must not use the identity activation")]
    HiddenIdentity { layer: usize },
    #[error("hidden layers must share one activation kind (layer {layer} differs)")]
    MixedHiddenActivations { layer: usize },
    #[error("input bound {index}: lower {lo} must be finite and below upper {hi}")]
    InvalidInputBound { index: usize, lo: f64, hi: f64 },
    #[error("input bounds length {got} does not match first layer input dimension {expected}")]
    InputBoundsMismatch { expected: usize, got: usize },
    #[error("input length {got} does not match network input dimension {expected}")]
    BadInput { expected: usize, got: usize },
    #[error("scaling factors for layer {layer}: expected {expected} entries, got {got}")]
    ScalingShape { layer: usize, expected: usize, got: usize },
    #[error("scaling factor at layer {layer}, neuron {neuron} is {value}; factors must be positive and finite")]
    InvalidScalingFactor { layer: usize, neuron: usize, value: f64 },
    #[error("scaling is defined only for ReLU hidden activations, found {found}")]
    UnsupportedActivation { found: String },
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },
}

/// An immutable trained network together with its input box.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_bounds: Vec<(f64, f64)>,
}

impl Network {
    pub fn new(layers: Vec<Layer>, input_bounds: Vec<(f64, f64)>) -> Result<Self, NetworkError> {
        if layers.is_empty() {
            return Err(NetworkError::Empty);
        }
        let n_layers = layers.len();
        let mut prev_dim = layers[0].input_dim();
        let mut hidden_kind: Option<ActivationKind> = None;
        for (k, layer) in layers.iter().enumerate() {
            let layer_no = k + 1;
            if layer.input_dim() != prev_dim {
                return Err(NetworkError::DimensionMismatch {
                    layer: layer_no,
                    expected: prev_dim,
                    got: layer.input_dim(),
                });
            }
            if layer.bias.len() != layer.output_dim() {
                return Err(NetworkError::BiasMismatch {
                    layer: layer_no,
                    expected: layer.output_dim(),
                    got: layer.bias.len(),
                });
            }
            if layer.weights.iter().any(|v| !v.is_finite()) {
                return Err(NetworkError::NonFinite { layer: layer_no, field: "weights" });
            }
            if layer.bias.iter().any(|v| !v.is_finite()) {
                return Err(NetworkError::NonFinite { layer: layer_no, field: "bias" });
            }
            let is_last = k == n_layers - 1;
            match layer.activation {
                ActivationKind::Identity if !is_last => {
                    return Err(NetworkError::HiddenIdentity { layer: layer_no });
                }
                ActivationKind::ClippedRelu { clip } if !(clip.is_finite() && clip > 0.0) => {
                    return Err(NetworkError::InvalidClip { layer: layer_no, value: clip });
                }
                _ => {}
            }
            if is_last {
                if !layer.activation.is_identity() {
                    return Err(NetworkError::FinalNotIdentity);
                }
            } else {
                match hidden_kind {
                    None => hidden_kind = Some(layer.activation),
                    Some(kind) if kind != layer.activation => {
                        return Err(NetworkError::MixedHiddenActivations { layer: layer_no });
                    }
                    _ => {}
                }
            }
            prev_dim = layer.output_dim();
        }
        let n_x = layers[0].input_dim();
        if input_bounds.len() != n_x {
            return Err(NetworkError::InputBoundsMismatch { expected: n_x, got: input_bounds.len() });
        }
        for (i, &(lo, hi)) in input_bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(NetworkError::InvalidInputBound { index: i, lo, hi });
            }
        }
        Ok(Network { layers, input_bounds })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_bounds(&self) -> &[(f64, f64)] {
        &self.input_bounds
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    /// Number of layers J (hidden layers plus the identity output layer).
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.output_dim()).collect()
    }

    pub fn total_hidden(&self) -> usize {
        self.hidden_sizes().iter().sum()
    }

    /// Activation kind shared by all hidden layers, if any hidden layer exists.
    pub fn hidden_activation(&self) -> Option<ActivationKind> {
        if self.layers.len() > 1 { Some(self.layers[0].activation) } else { None }
    }

    pub fn is_pure_relu(&self) -> bool {
        self.layers[..self.layers.len() - 1]
            .iter()
            .all(|l| matches!(l.activation, ActivationKind::Relu))
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NetworkError> {
        if x.len() != self.input_dim() {
            return Err(NetworkError::BadInput { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    /// Evaluates the network. Defined on all of R^n, not just the input box.
    pub fn forward(&self, x: &[f64]) -> Result<Array1<f64>, NetworkError> {
        self.check_input(x)?;
        let mut cur = Array1::from_vec(x.to_vec());
        for layer in &self.layers {
            let mut pre = layer.weights.dot(&cur);
            pre += &layer.bias;
            pre.mapv_inplace(|t| layer.activation.apply(t));
            cur = pre;
        }
        Ok(cur)
    }

    /// Evaluates the network and records every layer's pre-activation values.
    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace, NetworkError> {
        self.check_input(x)?;
        let mut cur = Array1::from_vec(x.to_vec());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut pre = layer.weights.dot(&cur);
            pre += &layer.bias;
            pre_activations.push(pre.clone());
            pre.mapv_inplace(|t| layer.activation.apply(t));
            cur = pre;
        }
        Ok(ForwardTrace { pre_activations, output: cur })
    }

    /// Hidden neurons whose outgoing weight column is all zero. Those neurons
    /// cannot influence the output, which the scaling optimizer must know.
    pub fn dead_neurons(&self) -> Vec<(usize, usize)> {
        let mut dead = Vec::new();
        for k in 0..self.layers.len() - 1 {
            let next = &self.layers[k + 1];
            for i in 0..self.layers[k].output_dim() {
                if next.weights.column(i).iter().all(|&w| w == 0.0) {
                    dead.push((k + 1, i));
                }
            }
        }
        dead
    }

    /// Rescales every hidden neuron by its positive factor, compensating in
    /// the next layer so the encoded function is unchanged.
    ///
    /// Rejects clipped networks: positive homogeneity fails once outputs
    /// saturate, so a rescaled clip threshold would change the function.
    pub fn apply_scaling(&self, c: &ScalingFactors) -> Result<Network, NetworkError> {
        if !self.is_pure_relu() {
            return Err(NetworkError::UnsupportedActivation {
                found: self.layers[0].activation.to_string(),
            });
        }
        let n_hidden_layers = self.layers.len() - 1;
        if c.per_layer.len() != n_hidden_layers {
            return Err(NetworkError::ScalingShape {
                layer: 0,
                expected: n_hidden_layers,
                got: c.per_layer.len(),
            });
        }
        for (k, f) in c.per_layer.iter().enumerate() {
            if f.len() != self.layers[k].output_dim() {
                return Err(NetworkError::ScalingShape {
                    layer: k + 1,
                    expected: self.layers[k].output_dim(),
                    got: f.len(),
                });
            }
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let mut weights = layer.weights.clone();
            let mut bias = layer.bias.clone();
            if k < n_hidden_layers {
                // Scale this layer's rows and bias by c^(k).
                let ck = &c.per_layer[k];
                for (i, mut row) in weights.rows_mut().into_iter().enumerate() {
                    row.mapv_inplace(|w| w * ck[i]);
                }
                for (i, b) in bias.iter_mut().enumerate() {
                    *b *= ck[i];
                }
            }
            if k > 0 {
                // Compensate the previous layer's scaling column-wise.
                let prev = &c.per_layer[k - 1];
                for (j, mut col) in weights.columns_mut().into_iter().enumerate() {
                    col.mapv_inplace(|w| w / prev[j]);
                }
            }
            layers.push(Layer::new(weights, bias, layer.activation));
        }
        Network::new(layers, self.input_bounds.clone())
    }

    pub fn save(&self, path: &Path) -> Result<(), NetworkError> {
        let text = io::to_json(self);
        std::fs::write(path, text)
            .map_err(|source| NetworkError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Network, NetworkError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| NetworkError::Io { path: path.display().to_string(), source })?;
        io::from_json(&text)
            .map_err(|message| NetworkError::Parse { path: path.display().to_string(), message })
    }

    pub fn to_json(&self) -> String {
        io::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Network, NetworkError> {
        io::from_json(text).map_err(|message| NetworkError::Parse { path: "<string>".into(), message })
    }
}

/// JSON serialization of networks.
///
/// Floats are written with 17 significant digits so that save followed by
/// load reproduces every f64 exactly.
pub mod io {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct NetworkFile {
        input_bounds: Vec<[f64; 2]>,
        layers: Vec<LayerFile>,
    }

    #[derive(Serialize, Deserialize)]
    struct LayerFile {
        weights: Vec<Vec<f64>>,
        bias: Vec<f64>,
        activation: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clip: Option<f64>,
    }

    fn fmt_f64(v: f64, out: &mut String) {
        use std::fmt::Write;
        // 16 fractional digits in scientific notation = 17 significant digits.
        write!(out, "{v:.16e}").unwrap();
    }

    pub fn to_json(net: &Network) -> String {
        let mut s = String::new();
        s.push_str("{\"input_bounds\":[");
        for (i, &(lo, hi)) in net.input_bounds().iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            s.push('[');
            fmt_f64(lo, &mut s);
            s.push(',');
            fmt_f64(hi, &mut s);
            s.push(']');
        }
        s.push_str("],\"layers\":[");
        for (k, layer) in net.layers().iter().enumerate() {
            if k > 0 {
                s.push(',');
            }
            s.push_str("{\"weights\":[");
            for (i, row) in layer.weights.rows().into_iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                s.push('[');
                for (j, &w) in row.iter().enumerate() {
                    if j > 0 {
                        s.push(',');
                    }
                    fmt_f64(w, &mut s);
                }
                s.push(']');
            }
            s.push_str("],\"bias\":[");
            for (j, &b) in layer.bias.iter().enumerate() {
                if j > 0 {
                    s.push(',');
                }
                fmt_f64(b, &mut s);
            }
            s.push_str("],\"activation\":");
            match layer.activation {
                ActivationKind::Relu => s.push_str("\"relu\""),
                ActivationKind::Identity => s.push_str("\"identity\""),
                ActivationKind::ClippedRelu { clip } => {
                    s.push_str("\"clipped_relu\",\"clip\":");
                    fmt_f64(clip, &mut s);
                }
            }
            s.push('}');
        }
        s.push_str("]}");
        s
    }

    pub fn from_json(text: &str) -> Result<Network, String> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mut layers = Vec::with_capacity(file.layers.len());
        for (k, lf) in file.layers.iter().enumerate() {
            let layer_no = k + 1;
            let rows = lf.weights.len();
            let cols = lf.weights.first().map_or(0, |r| r.len());
            if rows == 0 || cols == 0 {
                return Err(format!("layer {layer_no}: empty weight matrix"));
            }
            if let Some(bad) = lf.weights.iter().position(|r| r.len() != cols) {
                return Err(format!(
                    "layer {layer_no}: weight row {bad} has {} entries, expected {cols}",
                    lf.weights[bad].len()
                ));
            }
            if lf.bias.len() != rows {
                return Err(format!(
                    "layer {layer_no}: bias length {} does not match {rows} rows",
                    lf.bias.len()
                ));
            }
            let activation = match lf.activation.as_str() {
                "relu" => {
                    if lf.clip.is_some() {
                        return Err(format!("layer {layer_no}: clip given for relu activation"));
                    }
                    ActivationKind::Relu
                }
                "identity" => ActivationKind::Identity,
                "clipped_relu" => match lf.clip {
                    Some(m) if m.is_finite() && m > 0.0 => ActivationKind::ClippedRelu { clip: m },
                    Some(m) => {
                        return Err(format!("layer {layer_no}: clip must be positive, got {m}"));
                    }
                    None => return Err(format!("layer {layer_no}: clipped_relu requires a clip value")),
                },
                other => return Err(format!("layer {layer_no}: unknown activation {other:?}")),
            };
            let flat: Vec<f64> = lf.weights.iter().flatten().copied().collect();
            let weights = Array2::from_shape_vec((rows, cols), flat).expect("shape checked above");
            layers.push(Layer::new(weights, Array1::from_vec(lf.bias.clone()), activation));
        }
        let input_bounds: Vec<(f64, f64)> = file.input_bounds.iter().map(|b| (b[0], b[1])).collect();
        Network::new(layers, input_bounds).map_err(|e| e.to_string())
    }
}
