pub mod data;
pub mod error;
pub mod harness;
pub mod inference;
pub mod network;
pub mod optim;
pub mod oracle;
pub mod scaleopt;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
