pub mod analysis;
pub mod cli;
pub mod error;
pub mod generator;
pub mod geometry;
pub mod grid;
pub mod problems;
pub mod training;

pub use error::{PicnError, Result};
