use super::dataset::Dataset;
use crate::gateway::TamperFn;
use crate::kms::Kms;
use crate::messages::{Envelope, FlowLevel, PartyId, TransferMode};

/// An out-of-protocol message a party is made to send.
#[derive(Debug, Clone)]
pub struct ExtraSend {
    pub dst: PartyId,
    pub variable: String,
    pub flow: FlowLevel,
    pub transfer_mode: TransferMode,
    /// Already encoded body bytes.
    pub payload: Vec<u8>,
}

/// Injection points for misbehaviour. Every method defaults to doing nothing.
pub trait Hooks: Send + Sync {
    fn label(&self) -> String {
        "none".into()
    }

    /// Runs before data hashes are recorded.
    fn before_metadata(&self, _guest: &mut Dataset, _host: &mut Dataset) {}

    /// Runs after data hashes are recorded, before training.
    fn after_metadata(&self, _guest: &mut Dataset, _host: &mut Dataset) {}

    /// Host gradient just before the weight update.
    fn host_gradient(&self, _iter: u32, _grad: &mut [f64]) {}

    /// The mask the host adds to its encrypted gradient. Unmasking still
    /// uses the original values.
    fn host_mask(&self, _iter: u32, _mask: &mut [f64]) {}

    /// Called at the top of every training iteration. `labels` is set for the guest.
    fn extra_sends(&self, _me: &PartyId, _task: &str, _iter: u32, _labels: Option<&[f64]>) -> Vec<ExtraSend> {
        Vec::new()
    }

    fn on_train_start(&self, _me: &PartyId, _kms: &Kms, _job_id: &str, _credential: &[u8]) {}

    /// Envelopes pushed into the gateway right after a component starts.
    fn coordinator_inject(&self, _task: &str) -> Vec<Envelope> {
        Vec::new()
    }

    fn tamper(&self) -> Option<TamperFn> {
        None
    }
}

pub struct NoHooks;

impl Hooks for NoHooks {}
