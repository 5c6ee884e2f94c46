pub mod bisect;
pub mod closed_forms;
pub mod economics;
pub mod effective_demand;
pub mod error;
pub mod simulator;
pub mod sizing;
pub mod source_model;
pub mod spectral;

pub use error::{Error, Result};
pub use sizing::Engine;
pub use source_model::{ConsumerClass, Population};
