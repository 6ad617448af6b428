pub mod attention;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod heatmap;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor, TensorData};
