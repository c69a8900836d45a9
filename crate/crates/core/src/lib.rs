pub mod audio;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod room;
pub mod train;

pub use error::{Error, Result};
