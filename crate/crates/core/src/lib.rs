pub mod carleman;
pub mod cli;
pub mod error;
pub mod fd;
pub mod geometry;
pub mod identity_lab;
pub mod inverse;
pub mod spde;
pub mod tensor;

pub use error::{Error, Result};
