//! Temporal variational implicit neural representations (TV-INRs).
//!
//! A sample is encoded by two masked transformer encoders into diagonal
//! Gaussians over a latent `z`: a conditional prior that sees only the observed
//! cells and an approximate posterior that sees every available cell. A
//! hypernetwork maps `[z; c̄]` (latent plus encoded static covariates) to the
//! full weight vector of a small coordinate MLP, which is then evaluated at any
//! time stamp. One trained model serves imputation at every observation ratio
//! and forecasting at every horizon.

pub mod autodiff;
pub mod cli;
pub mod dataset;
pub mod embedding;
pub mod encoder;
pub mod error;
pub mod hypergenerator;
pub mod inr;
pub mod model;
pub mod nn;
pub mod tasks;
pub mod training;

pub use dataset::{CellState, ChannelStats, SplitPlan, TimeSeriesSample};
pub use encoder::GaussianLatent;
pub use error::{Error, Result};
pub use hypergenerator::{InrArchitecture, InrParameters};
pub use model::TvInr;
pub use tasks::{EvalReport, WelchResult};
pub use training::{Checkpoint, Task, TrainConfig};
