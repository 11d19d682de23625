//! Multi-agent trajectory forecasting with multiplex attentional latent graphs.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod scalar;
pub mod seed;
pub mod sim;
pub mod tensor;
pub mod train;

pub use autodiff::{Activation, Gradients, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Tape = autodiff::Tape<f64>;
pub type ParamStore = params::ParamStore<f64>;
pub type Model = model::Model<f64>;
pub type Model32 = model::Model<f32>;
pub type Batch = model::Batch<f64>;
pub type TrainOutcome = train::TrainOutcome<f64>;
