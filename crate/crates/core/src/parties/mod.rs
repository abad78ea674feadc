//! Guest, host and coordinator roles and the job runner.

pub mod config;
pub mod ctx;
pub mod dataset;
pub mod he;
pub mod hooks;
pub mod job;
pub mod lr;
pub mod psi;
pub mod secureboost;

pub use config::{Component, ComponentKind, ConfigError, DatasetSpec, IntersectionKind, JobConfig, TrainKind};
pub use ctx::{PartyCtx, PartyKeys};
pub use dataset::{load_dataset, Dataset, DatasetError};
pub use hooks::{ExtraSend, Hooks, NoHooks};
pub use job::{execute, run_in_memory, run_job, ExecResult, ExecSetup, JobError, JobOutcome, JobStatus, MemoryRun, MonitorFn, RunOptions};

use crate::crypto::CryptoError;
use crate::gateway::{GatewayError, RecvError};
use crate::kms::KmsError;
use crate::messages::PayloadError;

#[derive(Debug, thiserror::Error)]
pub enum PartyError {
    #[error("stopped by coordinator ({0})")]
    Stopped(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("receive failed: {0}")]
    Recv(#[from] RecvError),
    #[error("bad payload: {0}")]
    Payload(#[from] PayloadError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Kms(#[from] KmsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("protocol error: {0}")]
    Protocol(String),
}
