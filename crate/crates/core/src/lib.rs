pub mod entropy;
pub mod error;
pub mod geometry;
pub mod io;
pub mod predictor;
pub mod predtree;
pub mod container;
pub mod highrate;
pub mod lowrate;

pub use error::{Error, ErrorKind, Result};
pub mod codec;
pub mod synthetic;
pub mod qpselect;
