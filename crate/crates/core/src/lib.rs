//! Probabilistic wind-speed forecasts from NWP output and station history
//! with a hierarchical space-time Gaussian model.
//!
//! The joint law of observations and NWP output over one day block is
//! specified through the NWP marginal and the conditional law of
//! observations given NWP. Parameters are fitted by maximum likelihood,
//! predictions come from Gaussian conditioning (kriging) and are sampled
//! into scenarios, and the [`verify`] module scores them.

pub mod error;
pub mod estimate;
pub mod geo;
pub mod ingest;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod panel;
pub mod panel_io;
pub mod pipeline;
pub mod predict;
pub mod synth;
pub mod theta;
pub mod transform;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::CovarianceMatrix;
pub use model::{Geometry, TransitionOperator};
pub use panel::{devectorize, vectorize, BlockData, DayBlock, Panel, Source, StationMeta};
pub use theta::{Theta, Variant};
pub use transform::BoxCoxSpec;
