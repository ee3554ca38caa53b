//! Policy-gradient training with input-dependent baselines for input-driven MDPs.
//!
//! The crate is organised bottom-up:
//!
//! * [`imdp`]: the input-driven environment contract, trajectories and returns.
//! * [`nn`]: a small dense network stack (MLP, softmax head, Adam/SGD, checkpoints).
//! * [`envs`]: grid walker, heterogeneous-server load balancer and bitrate adaptation.
//! * [`baselines`]: state-value, multi-value, meta-learned and enumerated-optimal baselines.
//! * [`trainer`]: the synchronous advantage actor-critic loop and gradient statistics.
//! * [`analysis`]: exact and Monte Carlo checks of the bias/variance results.
//! * [`config`]: layered experiment configuration.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod analysis;
pub mod baselines;
pub mod config;
pub mod envs;
mod error;
pub mod imdp;
pub mod nn;
pub mod rng;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
