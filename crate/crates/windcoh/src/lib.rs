//! Slow-coherency analysis of multi-machine power systems with DFIG wind farms.
//!
//! [`pipeline::run_pipeline`] runs every stage on a [`pipeline::Scenario`]; the
//! [`guide`] walks through the model one stage at a time.

pub mod coherency;
pub mod dynsim;
pub mod error;
pub mod export;
pub mod fdiff;
pub mod linalg;
pub mod linearize;
pub mod netmodel;
pub mod pca;
pub mod perturbation;
pub mod pipeline;
pub mod windfarm;

pub use error::{Error, Result};

/// The guide in `book/`, compiled here so its examples run as doctests.
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/network.md")]
    pub mod network {}
    #[doc = include_str!("../../../book/src/coherency.md")]
    pub mod coherency {}
    #[doc = include_str!("../../../book/src/wind.md")]
    pub mod wind {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    pub mod dynamics {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    pub mod pipeline {}
    #[doc = include_str!("../../../book/src/limits.md")]
    pub mod limits {}
}
