//! Semantic feature division multiple access (SFDMA) over a digital
//! broadcast channel.
//!
//! The crate is organised bottom-up:
//!
//! - [`signal`]: binarization, straight-through gradients, BPSK mapping.
//! - [`channel`]: superposition broadcast with Rayleigh fading and AWGN.
//! - [`nn`]: a small dense network with manual backprop and Adam.
//! - [`rib`]: the robust information bottleneck loss and its
//!   Gaussian-mixture entropy terms.
//! - [`trainer`]: the joint multi-user training loop and evaluation metrics.
//! - [`abg`]: the performance-vs-SINR curve, its fit and its inverse.
//! - [`power`]: minimum-power allocation (simplex plus oracles).
//! - [`harness`]: SNR sweeps, the end-to-end workflow and CDF experiments.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod abg;
pub mod channel;
pub mod dataset;
mod error;
pub mod harness;
pub mod nn;
pub mod power;
pub mod rib;
pub mod signal;
pub mod trainer;

pub use abg::{AbgFit, AbgParams, FitSample};
pub use channel::ChannelRealization;
pub use dataset::{Dataset, DatasetSpec};
pub use error::{Error, Result};
pub use nn::{Activation, AdamState, Mlp};
pub use power::{PowerProblem, PowerSolution, SolveStatus};
pub use rib::{RibWeights, SymbolDistribution};
pub use signal::{BipolarCode, FeatureVector, Quantizer};
pub use trainer::{TrainConfig, TrainedSystem, UserModel};
