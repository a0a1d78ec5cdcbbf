//! Temporal domain generalization by recurrent parameter generation.
//!
//! A recurrent generator (initial encoder, parameter encoder, stacked LSTM,
//! decoder and a sliding-window skip connection) emits the full parameter
//! vector of a small target network for each time-indexed domain. The
//! generator is trained domain by domain and then rolled one step further to
//! produce parameters for an unseen future domain.

pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod generator;
pub mod io;
pub mod netgraph;
pub mod optim;
pub mod rng;
pub mod trainer;

pub use autodiff::{Gradients, Tape, Tensor, Var};
pub use baselines::{BaselineConfig, BaselineKind, FittedNet};
pub use data::{DataSource, DatasetSpec, DomainDataset, DomainSplit, Task};
pub use error::{Error, Result};
pub use eval::{evaluate, render_boundary, BoundaryRaster};
pub use generator::{GeneratorConfig, GeneratorParams, GeneratorState, Memory};
pub use netgraph::{Activation, LayerParams, LayerSpec, NetSchema, ParamVector};
pub use optim::{Adam, AdamConfig};
pub use trainer::{TrainConfig, TrainEvent, TrainedModel};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
