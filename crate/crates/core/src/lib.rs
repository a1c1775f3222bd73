pub mod data;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod run;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
