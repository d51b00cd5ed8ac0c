//! Phantoms, image metrics, configuration and experiment orchestration on
//! top of the `cddm` reconstruction library.

pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod phantom;

pub use config::{Config, Method};
pub use error::{HarnessError, Result};
