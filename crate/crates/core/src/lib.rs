pub mod data;
pub mod error;
pub mod gradsuite;
pub mod eval;
pub mod model;
pub mod peft;
pub mod rng;
pub mod tensor;
pub mod training;

pub use data::{Dataset, Example, Label};
pub use error::{Error, Result};
pub use model::{ClassifierModel, ModelConfig};
pub use peft::{Method, Peft};
pub use tensor::{Tape, Tensor, Var};
pub use training::{train, TrainConfig, TrainReport};
pub use eval::{evaluate, Metrics};
