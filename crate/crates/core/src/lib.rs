pub mod autodiff;
pub mod data;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod train;

pub use autodiff::{Activation, Tape, Var};
pub use error::{Error, Result};
pub use models::{Architecture, ImageSpec, ModelGraph, VitConfig};
pub use tensor::{Element, Tensor};
