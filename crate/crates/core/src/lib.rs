pub mod annotool;
pub mod audiofeat;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod lgf;
pub mod numcore;
pub mod objective;

pub use error::{Error, Result};
