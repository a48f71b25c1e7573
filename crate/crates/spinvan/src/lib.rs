//! Autoregressive neural samplers for two-dimensional spin systems with
//! analytic prior logits, plus the estimators, exact oracles and Monte Carlo
//! baselines used to judge them.

pub mod arnet;
pub mod checkpoint;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod lattice;
pub mod mcbaseline;
pub mod priors;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use lattice::{CouplingKind, Couplings, Geometry, SpinConfig};
pub use priors::{prior_only_f_q, PriorKind, PriorSpec};
pub use scalar::Real;

/// Double precision prior.
pub type Prior = PriorSpec<f64>;
/// Double precision network.
pub type Model = arnet::ModelParameters<f64>;
/// Double precision sample batch.
pub type Samples = sampler::SampleBatch<f64>;
/// Double precision checkpoint.
pub type SavedModel = checkpoint::Checkpoint<f64>;
