pub mod adapt;
pub mod backbone;
pub mod datakit;
pub mod error;
pub mod evalkit;
pub mod io;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
