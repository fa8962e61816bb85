//! Federated-learning simulation core.
//!
//! The crate is `no_std` (with `alloc`) and purely computational: every
//! operation is a function of its inputs and an explicit seed. IO, config
//! files and the command line live in the `fedshift` companion crate.
//!
//! Layout:
//!
//! - [`nn`]: dense networks, shifted/weighted softmax cross-entropy, exact
//!   gradients and SGD with momentum.
//! - [`data`]: synthetic label-shift data, Dirichlet partitioning, smoothed
//!   label distributions, masked aggregation and classifier shifts.
//! - [`strategy`]: local updates for FedAvg, FedProx, SCAFFOLD, FedShift and
//!   class reweighting.
//! - [`server`]: client sampling, aggregation, the round loop and
//!   rounds-to-accuracy.
//! - [`theory`]: numerical checks of the optimality and convergence results
//!   on logistic and quadratic testbeds.
//!
//! All float math goes through `libm`, so `std` and `no_std` builds produce
//! bit-identical results.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod linalg;
pub(crate) mod math;
pub mod nn;
pub mod rng;
pub mod server;
pub mod strategy;
pub mod theory;

pub use data::{ClientShard, Dataset, LabelDist, PartitionConfig, ShiftVector};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use nn::{Architecture, Batch, LossConfig, OptState, ParamVector, SgdHyper};
pub use server::{RoundRecord, RunConfig, TrainingRun};
pub use strategy::{ControlState, LocalHyper, StrategySpec};
