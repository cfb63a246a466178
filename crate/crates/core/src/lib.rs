pub mod autodiff;
pub mod calendar;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod geo;
pub mod ingest;
pub mod model;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
