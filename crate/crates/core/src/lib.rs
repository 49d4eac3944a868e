//! Hybrid quantum-classical PINNs for 2D TE Maxwell fields.

pub mod ansatz;
pub mod autodiff;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod network;
pub mod physics;
pub mod quantum;
pub mod reference;
pub mod trainer;
pub mod verify;

pub use ansatz::{build_circuit, AnsatzKind, CircuitSpec, ScaleKind};
pub use autodiff::{ParameterStore, Tape, Tensor, Var};
pub use config::ExperimentFile;
pub use error::{Error, Result};
pub use network::{build_model, Model, ModelConfig, ParamCounts, Variant};
pub use physics::{Case, CollocationGrid, LossBreakdown, LossConfig, PhysMode, PinnLoss};
pub use reference::{run_reference, FdtdConfig, FieldHistory};
pub use trainer::{train, InitStrategy, RunLog, RunSummary, TrainConfig};
