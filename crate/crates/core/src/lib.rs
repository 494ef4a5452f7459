pub mod aggregation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod recurrent;
pub mod tensor;
pub mod training;

pub use config::{Config, PoolingMode, Variant};
pub use error::{Error, Result};
pub use model::{Architecture, ModelParams};
pub use tensor::{Tape, Tensor, Var};
