pub mod cli;
pub mod config;
pub mod coref;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod inference;
pub mod model;
pub mod nn;
pub mod training;
pub mod vocab;

pub use config::{ModelConfig, Variant};
pub use error::{Error, Result};
pub use model::Model;
