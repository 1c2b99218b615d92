//! Federated learning simulator for recommending an oral contraceptive
//! from a seven-metric hormone blood panel.
//!
//! Synthetic clinics ([`data_synth`]) train a small MLP ([`nn`]) locally;
//! a server combines their updates with one of four aggregation rules
//! ([`strategies`]). [`orchestrator`] runs everything in one process and
//! [`transport`] splits server and clients across processes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data_synth;
pub mod error;
pub mod nn;
pub mod orchestrator;
pub mod params;
pub mod seed;
pub mod strategies;
pub mod transport;

pub use error::{Error, Result};

/// Blood-panel metrics per patient.
pub const NUM_FEATURES: usize = 7;
/// Candidate OCPs.
pub const NUM_CLASSES: usize = 5;
