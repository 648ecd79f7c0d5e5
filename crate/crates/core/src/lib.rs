//! Two-branch neural network for lithium-ion battery state-of-charge
//! estimation and multi-horizon prediction, trained with a Coulomb-counting
//! physics term.
//!
//! - [`nn`]: dense MLP engine with backprop, Adam/SGD and gradient checking.
//! - [`model`]: the cascaded Branch 1 / Branch 2 network and its checkpoints.
//! - [`physics`]: Coulomb counting and the label-free physics loss.
//! - [`data`]: CSV ingestion, smoothing, windowing, splits and synthetic cells.
//! - [`train`]: split training with teacher forcing and stop-gradient.
//! - [`eval`]: per-horizon MAE reports, baselines and autoregressive rollout.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod physics;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use model::{FeatureRange, NormStats, TwoBranchModel};
pub use physics::{coulomb_count, HorizonSet, PhysicsCondition, PhysicsMode};
