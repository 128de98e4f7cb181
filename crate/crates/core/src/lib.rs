pub mod anneal;
pub mod bench;
pub mod decomposition;
pub mod device;
pub mod error;
pub mod ising;
pub mod tsp;
pub mod tsplib;

pub use error::{Error, Result};
