pub mod data;
pub mod em;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod model;
pub mod spectral;
pub mod structure;
pub mod tensor;

pub use data::Dataset;
pub use error::{Error, Result};
pub use model::LatentJTModel;
pub use tensor::{LabeledTensor, Var};
