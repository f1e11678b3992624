//! Continual soft-prompt tuning for rumor detection on a stream of domains.

pub mod autodiff;
pub mod container;
pub mod data;
pub mod error;
pub mod harness;
pub mod model;
pub mod prompt_store;
pub mod seed;
pub mod tphnet;

pub use error::{Error, Result};
pub use model::*;
