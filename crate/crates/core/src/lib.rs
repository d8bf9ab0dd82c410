pub mod augmentation;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod nn;
pub mod plot;
pub mod provenance;
pub mod seed;
pub mod synthetic;
pub mod training;
pub mod zoo;

pub use error::{Error, Result};
