// NaN-rejecting `!(x >= 0.0)` checks and index loops over parallel arrays
// are used on purpose throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod capital;
pub mod corpus;
pub mod error;
pub mod hmc;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod regression;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod trajectory;
pub mod transport;

pub use error::{Error, Result};
