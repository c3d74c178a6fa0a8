//! Minimal neural-network toolkit: autodiff tape, parameters, layers and
//! the optimiser.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;

pub use graph::{Grads, Graph, Mat, Var};
pub use optim::{run_epoch, Adam, OptimizerConfig, TrainOptions};
pub use params::{Init, ParamGroup, ParamId, ParamStore};
