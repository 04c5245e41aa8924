//! Gated message passing, local predictors, switch rounding, recovery and
//! losses.
//!
//! A forward pass runs on one [`Tape`](crate::autodiff::Tape) for a batch of
//! scenarios on one grid:
//!
//! 1. [`forward::embed`]: node inputs and learned switch seeds through `L`
//!    message-passing layers, plus the global embedding.
//! 2. [`forward::predict`]: line and switch predictors with sigmoid outputs.
//! 3. [`forward::decode`]: voltage aggregation and box scaling, switch
//!    selection, then the recovery chain for reactive flows and generation.

pub mod config;
pub mod context;
pub mod forward;
pub mod loss;
pub mod params;
pub mod phyr;

pub use config::{ModelConfig, Rounding, Supervision};
pub use context::GridContext;
pub use forward::{committee_forward, forward, insi_activation, ForwardOutput, Predictions, PredictorStats};
pub use loss::{loss_semi_supervised, loss_supervised, loss_unsupervised, Target};
pub use params::ModelParams;
pub use phyr::{phyr_select, SelectMode, Selection};
