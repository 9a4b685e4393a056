pub mod cli;
pub mod data;
pub mod error;
pub mod fixtures;
pub mod linalg;
pub mod nn;
pub mod polytope;
pub mod reach;
pub mod poly;
pub mod sdp;
pub mod sectors;
pub mod sos;
pub mod stability;

pub use error::{Error, Result};
