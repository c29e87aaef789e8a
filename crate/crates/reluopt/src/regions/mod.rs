//! Exact linear-region enumeration over 2-D input boxes.
//!
//! Within one activation pattern every neuron's pre-activation is affine in
//! the network input, so the region is the intersection of one halfplane per
//! neuron with the input box. Regions are convex polygons obtained by direct
//! clipping; the enumerator starts at the box center and jumps across facets
//! by flipping the facet neuron's bit, a breadth-first walk over patterns.
//!
//! Neurons that a pattern renders insensitive (zero input-space gradient)
//! contribute no halfplane; their bits are normalized to the sign of their
//! constant offset so patterns stay canonical and hashable.

mod geometry;
mod svg;

pub use geometry::{EdgeLabel, Polygon};
pub use svg::render_svg;

use crate::network::{Network, NetworkError};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use thiserror::Error;

/// Bitset over all hidden neurons, layer-major; 1 means the active arm.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pattern {
    len: usize,
    bits: Vec<u64>,
}

impl Pattern {
    pub fn zeros(len: usize) -> Pattern {
        Pattern { len, bits: vec![0; len.div_ceil(64)] }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        (self.bits[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, v: bool) {
        let mask = 1u64 << (i % 64);
        if v {
            self.bits[i / 64] |= mask;
        } else {
            self.bits[i / 64] &= !mask;
        }
    }

    pub fn flipped(&self, i: usize) -> Pattern {
        let mut p = self.clone();
        p.set(i, !p.get(i));
        p
    }

    pub fn diff_count(&self, other: &Pattern) -> usize {
        self.bits.iter().zip(&other.bits).map(|(a, b)| (a ^ b).count_ones() as usize).sum()
    }

    /// Hex string, least significant nibble first.
    pub fn to_hex(&self) -> String {
        let nibbles = self.len.div_ceil(4);
        let mut s = String::with_capacity(nibbles);
        for n in 0..nibbles {
            let mut v = 0u8;
            for b in 0..4 {
                let i = 4 * n + b;
                if i < self.len && self.get(i) {
                    v |= 1 << b;
                }
            }
            s.push(char::from_digit(v as u32, 16).unwrap());
        }
        s
    }

    pub fn from_hex(s: &str, len: usize) -> Option<Pattern> {
        if s.len() != len.div_ceil(4) {
            return None;
        }
        let mut p = Pattern::zeros(len);
        for (n, ch) in s.chars().enumerate() {
            let v = ch.to_digit(16)? as u8;
            for b in 0..4 {
                let i = 4 * n + b;
                if i < len {
                    p.set(i, (v >> b) & 1 == 1);
                }
            }
        }
        Some(p)
    }
}

/// Affine functional `x -> a.x + b` on the 2-D input space.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AffineMap {
    pub gradient: [f64; 2],
    pub offset: f64,
}

impl AffineMap {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.gradient[0] * x[0] + self.gradient[1] * x[1] + self.offset
    }
}

/// Result of propagating a pattern through the network.
#[derive(Debug, Clone)]
pub struct Linearization {
    /// Canonical pattern: insensitive neurons normalized to their offset sign.
    pub pattern: Pattern,
    /// Per hidden neuron (flat index): its pre-activation functional.
    pub neurons: Vec<AffineMap>,
    /// True where the neuron's functional actually varies over the input.
    pub sensitive: Vec<bool>,
    /// Output functionals, one per network output.
    pub outputs: Vec<AffineMap>,
}

#[derive(Debug, Clone)]
pub struct Facet {
    pub neuron: usize,
    pub neighbor: Pattern,
    /// Whether the neighbor showed up in the finished atlas.
    pub materialized: bool,
}

#[derive(Debug, Clone)]
pub struct LinearRegion {
    pub pattern: Pattern,
    pub polygon: Polygon,
    pub map: AffineMap,
    pub facets: Vec<Facet>,
    pub area: f64,
}

#[derive(Debug, Clone)]
pub struct RegionAtlas {
    pub regions: Vec<LinearRegion>,
    pub total_area: f64,
    pub box_area: f64,
    pub incomplete: bool,
    pub warnings: Vec<String>,
    pub hidden_neurons: usize,
}

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("region enumeration requires 2-D inputs, network has {0}")]
    NotTwoDimensional(usize),
    #[error("region enumeration supports ReLU hidden activations only")]
    UnsupportedActivation,
    #[error("network has {got} hidden neurons, above the configured cap {cap}")]
    TooManyNeurons { got: usize, cap: usize },
    #[error("pattern length {got} does not match {expected} hidden neurons")]
    PatternLength { expected: usize, got: usize },
    #[error("seed point produced a region with empty interior")]
    DegenerateRegion,
    #[error("atlas is incomplete; refusing to act as an oracle")]
    IncompleteAtlas,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn check_net(net: &Network) -> Result<(), RegionError> {
    if net.input_dim() != 2 {
        return Err(RegionError::NotTwoDimensional(net.input_dim()));
    }
    if !net.is_pure_relu() && net.depth() > 1 {
        return Err(RegionError::UnsupportedActivation);
    }
    Ok(())
}

const GRAD_EPS: f64 = 1e-11;

/// Propagates 2-column Jacobians and offsets through the network under the
/// given pattern, zeroing inactive rows. Insensitive neurons get their bit
/// normalized and contribute no halfplane.
pub fn linearize_at(net: &Network, pattern: &Pattern) -> Result<Linearization, RegionError> {
    check_net(net)?;
    let total = net.total_hidden();
    if pattern.len() != total {
        return Err(RegionError::PatternLength { expected: total, got: pattern.len() });
    }
    let mut canonical = pattern.clone();
    let mut neurons = Vec::with_capacity(total);
    let mut sensitive = Vec::with_capacity(total);

    // Current affine map of the previous layer's post-activations: rows of
    // (gradient, offset), starting with the identity on the input.
    let mut grads: Vec<[f64; 2]> = vec![[1.0, 0.0], [0.0, 1.0]];
    let mut offs: Vec<f64> = vec![0.0, 0.0];

    let mut flat = 0usize;
    for (k, layer) in net.layers().iter().enumerate() {
        let is_last = k + 1 == net.depth();
        let n_out = layer.output_dim();
        let mut new_grads = Vec::with_capacity(n_out);
        let mut new_offs = Vec::with_capacity(n_out);
        for i in 0..n_out {
            let row = layer.weights.row(i);
            let mut g = [0.0, 0.0];
            let mut o = layer.bias[i];
            for (j, &w) in row.iter().enumerate() {
                g[0] += w * grads[j][0];
                g[1] += w * grads[j][1];
                o += w * offs[j];
            }
            if !is_last {
                let idx = flat + i;
                let insensitive = g[0].abs() <= GRAD_EPS && g[1].abs() <= GRAD_EPS;
                if insensitive {
                    canonical.set(idx, o > 0.0);
                }
                neurons.push(AffineMap { gradient: g, offset: o });
                sensitive.push(!insensitive);
                let active = canonical.get(idx);
                if active {
                    new_grads.push(g);
                    new_offs.push(o);
                } else {
                    new_grads.push([0.0, 0.0]);
                    new_offs.push(0.0);
                }
            } else {
                new_grads.push(g);
                new_offs.push(o);
            }
        }
        if !is_last {
            flat += n_out;
        }
        grads = new_grads;
        offs = new_offs;
    }
    let outputs = grads
        .into_iter()
        .zip(offs)
        .map(|(gradient, offset)| AffineMap { gradient, offset })
        .collect();
    Ok(Linearization { pattern: canonical, neurons, sensitive, outputs })
}

fn box_of(net: &Network) -> (f64, f64, f64, f64) {
    let b = net.input_bounds();
    (b[0].0, b[1].0, b[0].1, b[1].1)
}

fn box_diameter(net: &Network) -> f64 {
    let (x0, y0, x1, y1) = box_of(net);
    ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
}

/// Polygon of the canonical pattern: the box clipped by every sensitive
/// neuron's halfplane. Empty polygon means the pattern is infeasible.
pub fn region_from_pattern(net: &Network, pattern: &Pattern) -> Result<(Linearization, Polygon), RegionError> {
    let lin = linearize_at(net, pattern)?;
    let (x0, y0, x1, y1) = box_of(net);
    let eps = 1e-12 * (1.0 + box_diameter(net));
    let mut poly = Polygon::rect(x0, y0, x1, y1);
    for (idx, map) in lin.neurons.iter().enumerate() {
        if !lin.sensitive[idx] {
            continue;
        }
        let (a, b) = if lin.pattern.get(idx) {
            (map.gradient, map.offset)
        } else {
            ([-map.gradient[0], -map.gradient[1]], -map.offset)
        };
        // Normalize so the clip tolerance is a geometric distance.
        let norm = (a[0] * a[0] + a[1] * a[1]).sqrt();
        poly = poly.clip([a[0] / norm, a[1] / norm], b / norm, EdgeLabel::Neuron(idx), eps);
        if poly.is_empty() {
            break;
        }
    }
    Ok((lin, poly))
}

/// Raw activation bits from the trace signs at a point.
fn pattern_at(net: &Network, x: [f64; 2]) -> Result<Pattern, RegionError> {
    let trace = net.forward_trace(&[x[0], x[1]])?;
    let total = net.total_hidden();
    let mut p = Pattern::zeros(total);
    let mut flat = 0usize;
    for pre in trace.pre_activations.iter().take(net.depth() - 1) {
        for i in 0..pre.len() {
            p.set(flat + i, pre[i] > 0.0);
        }
        flat += pre.len();
    }
    Ok(p)
}

const AREA_EPS_REL: f64 = 1e-12;

/// The linear region containing `seed`. The seed is jittered away from
/// switching lines when necessary (up to 10 attempts).
pub fn region_of(net: &Network, seed: [f64; 2]) -> Result<LinearRegion, RegionError> {
    check_net(net)?;
    let diam = box_diameter(net);
    let (x0, y0, x1, y1) = box_of(net);
    let box_area = (x1 - x0) * (y1 - y0);
    for attempt in 0..10 {
        let jitter = attempt as f64 * 1e-9 * diam;
        let p = [seed[0] + jitter, seed[1] + 1.37 * jitter];
        let raw = pattern_at(net, p)?;
        let (lin, poly) = region_from_pattern(net, &raw)?;
        if poly.is_empty() || poly.area() < AREA_EPS_REL * box_area {
            continue;
        }
        return Ok(build_region(lin, poly));
    }
    Err(RegionError::DegenerateRegion)
}

fn build_region(lin: Linearization, poly: Polygon) -> LinearRegion {
    let area = poly.area();
    let facets = poly
        .neuron_labels()
        .into_iter()
        .map(|n| Facet { neuron: n, neighbor: lin.pattern.flipped(n), materialized: false })
        .collect();
    LinearRegion { pattern: lin.pattern, map: lin.outputs[0], polygon: poly, facets, area }
}

#[derive(Debug, Clone)]
pub struct EnumerateOptions {
    pub max_regions: usize,
    pub neuron_cap: usize,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        EnumerateOptions { max_regions: 100_000, neuron_cap: 250 }
    }
}

/// Breadth-first enumeration of all linear regions intersecting the box.
pub fn enumerate(net: &Network, opts: &EnumerateOptions) -> Result<RegionAtlas, RegionError> {
    check_net(net)?;
    let total = net.total_hidden();
    if total > opts.neuron_cap {
        return Err(RegionError::TooManyNeurons { got: total, cap: opts.neuron_cap });
    }
    let (x0, y0, x1, y1) = box_of(net);
    let box_area = (x1 - x0) * (y1 - y0);
    let diam = box_diameter(net);
    let area_eps = AREA_EPS_REL * box_area;
    let seed_step = 1e-6 * diam;

    let mut warnings = Vec::new();
    let mut incomplete = false;
    let start = region_of(net, [0.5 * (x0 + x1), 0.5 * (y0 + y1)])?;

    let mut visited: HashMap<Pattern, usize> = HashMap::new();
    let mut regions: Vec<LinearRegion> = Vec::new();
    let mut queue: VecDeque<usize> = VecDeque::new();
    visited.insert(start.pattern.clone(), 0);
    regions.push(start);
    queue.push_back(0);

    while let Some(idx) = queue.pop_front() {
        if regions.len() >= opts.max_regions {
            incomplete = true;
            warnings.push(format!("region budget {} exhausted", opts.max_regions));
            break;
        }
        let (pattern, facet_list): (Pattern, Vec<(usize, Vec<([f64; 2], [f64; 2])>)>) = {
            let r = &regions[idx];
            let facets = r
                .facets
                .iter()
                .map(|f| (f.neuron, r.polygon.edges_with_label(EdgeLabel::Neuron(f.neuron))))
                .collect();
            (r.pattern.clone(), facets)
        };
        for (neuron, edges) in facet_list {
            let predicted_raw = pattern.flipped(neuron);
            let (pred_lin, pred_poly) = region_from_pattern(net, &predicted_raw)?;
            let predicted = pred_lin.pattern.clone();

            // Probe across the facet midpoint; shrink the step when the landed
            // pattern is not the single-bit flip (simultaneous switches).
            let mut landed: Option<Pattern> = None;
            if let Some(&(mid, normal)) = edges.first() {
                let mut step = seed_step;
                for _ in 0..6 {
                    let p = [mid[0] + step * normal[0], mid[1] + step * normal[1]];
                    let raw = pattern_at(net, p)?;
                    let canon = linearize_at(net, &raw)?.pattern;
                    landed = Some(canon.clone());
                    if canon == predicted {
                        break;
                    }
                    step *= 0.5;
                }
            }
            if let Some(l) = &landed {
                if *l != predicted && l.diff_count(&pattern) > 1 {
                    warnings.push(format!(
                        "facet of neuron {neuron} on region {}: seed landed {} bits away (possible simultaneous switch)",
                        pattern.to_hex(),
                        l.diff_count(&pattern)
                    ));
                }
            }

            let enqueue = |pat: Pattern, lin: Linearization, poly: Polygon,
                               regions: &mut Vec<LinearRegion>,
                               queue: &mut VecDeque<usize>,
                               visited: &mut HashMap<Pattern, usize>| {
                if poly.is_empty() || poly.area() < area_eps {
                    return;
                }
                if !visited.contains_key(&pat) {
                    let next = regions.len();
                    visited.insert(pat, next);
                    regions.push(build_region(lin, poly));
                    queue.push_back(next);
                }
            };

            if !pred_poly.is_empty() && pred_poly.area() >= area_eps {
                enqueue(predicted.clone(), pred_lin, pred_poly, &mut regions, &mut queue, &mut visited);
            }
            if let Some(l) = landed {
                if l != predicted && !visited.contains_key(&l) {
                    let (lin2, poly2) = region_from_pattern(net, &l)?;
                    enqueue(lin2.pattern.clone(), lin2, poly2, &mut regions, &mut queue, &mut visited);
                }
            }
        }
    }

    // Canonical order and facet materialization.
    regions.sort_by(|a, b| a.pattern.cmp(&b.pattern));
    let index: HashMap<Pattern, ()> = regions.iter().map(|r| (r.pattern.clone(), ())).collect();
    for r in regions.iter_mut() {
        for f in r.facets.iter_mut() {
            // The canonical neighbor may differ from the naive flip in its
            // insensitive bits; look that up through the linearization.
            f.materialized = index.contains_key(&f.neighbor)
                || linearize_at(net, &f.neighbor).map(|l| index.contains_key(&l.pattern)).unwrap_or(false);
        }
    }
    let total_area = regions.iter().map(|r| r.area).sum();
    Ok(RegionAtlas { regions, total_area, box_area, incomplete, warnings, hidden_neurons: total })
}

/// Global minimum of the network over the box by scanning every region: an
/// affine function on a polygon attains its minimum at a vertex.
pub fn region_oracle_min(net: &Network, atlas: &RegionAtlas) -> Result<([f64; 2], f64), RegionError> {
    if atlas.incomplete {
        return Err(RegionError::IncompleteAtlas);
    }
    let _ = net;
    let mut best = ([0.0, 0.0], f64::INFINITY);
    for r in &atlas.regions {
        for &v in &r.polygon.vertices {
            let val = r.map.eval(v);
            if val < best.1 {
                best = (v, val);
            }
        }
    }
    Ok(best)
}

/// Atlas serialization: patterns as hex strings, vertices, areas, affine maps.
#[derive(Serialize, Deserialize)]
pub struct AtlasFile {
    pub hidden_neurons: usize,
    pub region_count: usize,
    pub total_area: f64,
    pub box_area: f64,
    pub incomplete: bool,
    pub warnings: Vec<String>,
    pub regions: Vec<AtlasRegion>,
}

#[derive(Serialize, Deserialize)]
pub struct AtlasRegion {
    pub pattern: String,
    pub vertices: Vec<[f64; 2]>,
    pub area: f64,
    pub gradient: [f64; 2],
    pub offset: f64,
}

impl RegionAtlas {
    pub fn to_json(&self) -> String {
        let file = AtlasFile {
            hidden_neurons: self.hidden_neurons,
            region_count: self.regions.len(),
            total_area: self.total_area,
            box_area: self.box_area,
            incomplete: self.incomplete,
            warnings: self.warnings.clone(),
            regions: self
                .regions
                .iter()
                .map(|r| AtlasRegion {
                    pattern: r.pattern.to_hex(),
                    vertices: r.polygon.vertices.clone(),
                    area: r.area,
                    gradient: r.map.gradient,
                    offset: r.map.offset,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).unwrap()
    }
}
