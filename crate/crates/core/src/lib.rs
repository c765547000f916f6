pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod model;
pub mod numeric;
pub mod train;

pub use error::{Error, Result};
