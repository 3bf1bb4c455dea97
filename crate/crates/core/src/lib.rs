//! Hierarchical graph attention for multi-hop question answering.

pub mod ablate;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod gath;
pub mod gradcheck;
pub mod graph;
pub mod heads;
pub mod model;
mod error;
pub mod optim;
pub mod params;
pub mod score;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
