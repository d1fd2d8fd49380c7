//! Score estimation from pairwise and m-wise comparisons over a chosen
//! comparison topology, with spectral design diagnostics and minimax bounds.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod estimate;
pub mod exec;
pub mod experiment;
pub mod graph;
pub mod models;
pub mod seeds;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{build_topology, spectrum, ComparisonDesign, HyperDesign, SpectralSummary, TopologyKind};
pub use models::{LinkFunction, ModelParams, ModelSpec, PlackettLuce};
pub use synth::{ObservationBatch, QualityVector};
