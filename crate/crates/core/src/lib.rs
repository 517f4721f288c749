//! Loss-landscape analysis for one-hidden-layer networks with a
//! piecewise-linear activation: one-sided directional derivatives,
//! directional stationarity, escape neurons, embeddings and gradient-descent
//! dynamics from small initialization.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod embedding;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod net;
pub mod odd;
pub mod stationarity;

pub use error::{Error, Result};
pub use net::{Activation, ActivationPattern, Dataset, Network};
pub use odd::{Direction, Landscape};
pub use stationarity::{Classification, StationarityVerdict, Tolerances};
