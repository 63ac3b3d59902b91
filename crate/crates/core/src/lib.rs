//! Monte-Carlo simulation of site-selective cavity readout of an atom
//! array: photon statistics with adaptive termination, hidden sequential
//! readout, bright-atom search strategies and a classical repetition code
//! under bit flips and atom loss.
//!
//! Every stochastic routine takes a [`StreamKey`] or an explicit RNG, so
//! results depend only on the configuration and the master seed.

// `!(x > 0.0)` deliberately rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod code;
pub mod config;
pub mod error;
pub mod harness;
pub mod photon;
pub mod readout;
pub mod register;
pub mod search;
pub mod stream;

pub use config::SimConfig;
pub use error::{Error, Result};
pub use harness::estimate::Estimate;
pub use harness::experiments::{run, Experiment, ExperimentOutput, ExperimentSpec};
pub use register::{HyperfineState, Register, SiteState};
pub use stream::StreamKey;
