pub mod checkpoint;
pub mod data;
pub mod error;
pub mod graph;
pub mod layers;
pub mod losses;
pub mod params;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
