//! Tools for global optimization over trained ReLU networks.
//!
//! The crate covers the full pipeline from a trained feed-forward network to a
//! certified global minimum of its output:
//!
//! * [`network`] — immutable dense networks (ReLU, clipped ReLU, identity),
//!   forward evaluation, equivalent rescaling and a JSON file format.
//! * [`benchfn`] — the Peaks / Ackley / Himmelblau benchmark functions and
//!   Latin-hypercube dataset generation.
//! * [`trainer`] — a small deterministic Adam trainer with l1 regularization
//!   and dropout.
//! * [`bounds`] — interval-arithmetic pre-activation bounds and stable-neuron
//!   classification.
//! * [`lp`] — a dense primal simplex for linear programs with bounded
//!   variables.
//! * [`milp`] — big-M encodings of networks, LP-based bound tightening and a
//!   branch-and-bound solver for minimization and adversarial queries.
//! * [`regions`] — exact enumeration of the linear regions a network induces
//!   on a 2-D input box, plus an SVG renderer.
//! * [`scaling`] — the convex log-domain rescaling problem that minimizes the
//!   l1 norm of weights and biases without changing the network's function.
//! * [`experiment`] — batch orchestration of the pipeline with cached
//!   artifacts and aggregate reporting.

pub mod benchfn;
pub mod bounds;
pub mod experiment;
pub mod lp;
pub mod milp;
pub mod network;
pub mod regions;
pub mod scaling;
pub(crate) mod timing;
pub mod trainer;

pub use network::{ActivationKind, Layer, Network, ScalingFactors};
