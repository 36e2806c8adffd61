pub mod dynamics;
pub mod ensembles;
pub mod error;
pub mod experiment;
pub mod export;
pub mod linalg;
pub mod rng;
pub mod typicality;

pub use error::{Error, Result};
