use super::hooks::{ExtraSend, Hooks};
use super::PartyError;
use crate::crypto::{Evaluator, PublicKey, RsaKeyPair, RsaPublicKey, SecretKey, Shadow};
use crate::gateway::Endpoint;
use crate::messages::{
    Command, ControlCommand, Envelope, FlowLevel, Partition, PartyId, Payload, PayloadKind, TransferMode, VarName,
};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Key material a party holds for one job.
#[derive(Clone)]
pub struct PartyKeys {
    pub paillier: PublicKey,
    /// Guest always; host only when replaying.
    pub paillier_secret: Option<SecretKey>,
    pub rsa: Option<RsaPublicKey>,
    pub rsa_key_id: String,
    /// Host only.
    pub rsa_secret: Option<RsaKeyPair>,
    /// Replay only, shared by both parties.
    pub shadow: Option<Arc<Shadow>>,
}

impl PartyKeys {
    pub fn evaluator(&self) -> Evaluator<'_> {
        match (&self.paillier_secret, &self.shadow) {
            (Some(sk), Some(sh)) => Evaluator::Shadowed(sk, sh),
            (Some(sk), None) => Evaluator::Crt(sk),
            (None, _) => Evaluator::Public(&self.paillier),
        }
    }

    /// Without exponent tracking, for long product chains where the shadow
    /// would only cost memory.
    pub fn evaluator_untracked(&self) -> Evaluator<'_> {
        match &self.paillier_secret {
            Some(sk) => Evaluator::Crt(sk),
            None => Evaluator::Public(&self.paillier),
        }
    }
}

pub struct PartyCtx {
    pub me: PartyId,
    pub ep: Endpoint,
    pub job_id: String,
    pub partitions: u32,
    pub hooks: Arc<dyn Hooks>,
}

fn is_stop(env: &Envelope) -> bool {
    env.transfer_mode == TransferMode::Unary
        && env.src == PartyId::Coordinator
        && matches!(Command::from_variable(&env.variable), Some(Command::Stop | Command::Abort))
}

fn flow_of(p: &Payload) -> FlowLevel {
    match p.kind() {
        PayloadKind::PlainScalar | PayloadKind::BoolFlag => FlowLevel::Algorithm,
        _ => FlowLevel::Data,
    }
}

/// Splits `bytes` into at most `k` contiguous chunks of near-equal size.
pub fn split_chunks(bytes: &[u8], k: usize) -> Vec<&[u8]> {
    let k = k.clamp(1, bytes.len().max(1));
    let base = bytes.len() / k;
    let extra = bytes.len() % k;
    let mut out = Vec::with_capacity(k);
    let mut pos = 0;
    for i in 0..k {
        let len = base + (i < extra) as usize;
        out.push(&bytes[pos..pos + len]);
        pos += len;
    }
    out
}

impl PartyCtx {
    pub fn new(me: PartyId, ep: Endpoint, job_id: &str, partitions: u32, hooks: Arc<dyn Hooks>) -> PartyCtx {
        PartyCtx { me, ep, job_id: job_id.to_string(), partitions, hooks }
    }

    fn envelope(&self, task: &str, variable: String, dst: PartyId, flow: FlowLevel, mode: TransferMode) -> Envelope {
        Envelope {
            job_id: self.job_id.clone(),
            task_id: task.to_string(),
            seq: 0,
            flow,
            variable,
            src: self.me.clone(),
            dst,
            transfer_mode: mode,
            partition: Partition::SINGLE,
            credential: Vec::new(),
            payload: Vec::new(),
            sent_at: 0,
            recv_at: 0,
        }
    }

    /// Sends a stream variable `task.name.iter`. Vectors are split across
    /// the configured number of partitions.
    pub fn send_var(
        &mut self,
        task: &str,
        name: &str,
        iter: u32,
        dst: PartyId,
        payload: &Payload,
    ) -> Result<(), PartyError> {
        let var = VarName::new(task, name, iter).to_string();
        let bytes = payload.encode();
        let k = match payload {
            Payload::CiphertextVector { .. } | Payload::PlainFloatVector(_) | Payload::IdHashList(_)
                if payload.len() > 1 =>
            {
                self.partitions as usize
            }
            _ => 1,
        };
        let chunks = split_chunks(&bytes, k);
        let total = chunks.len() as u32;
        for (i, c) in chunks.into_iter().enumerate() {
            let mut env = self.envelope(task, var.clone(), dst.clone(), flow_of(payload), TransferMode::Stream);
            env.partition = Partition::new(i as u32, total);
            env.payload = c.to_vec();
            self.ep.send(env)?;
        }
        Ok(())
    }

    /// Waits for every partition of `task.name.iter` from `src`. A stop or
    /// abort from the coordinator ends the wait.
    pub fn recv_var(&mut self, task: &str, name: &str, iter: u32, src: PartyId) -> Result<Payload, PartyError> {
        let var = VarName::new(task, name, iter).to_string();
        let me = self.me.clone();
        let mut parts: BTreeMap<u32, Vec<u8>> = BTreeMap::new();
        let mut total = None;
        loop {
            let pred = |e: &Envelope| {
                is_stop(e)
                    || (e.dst == me && e.src == src && e.variable == var && e.transfer_mode == TransferMode::Stream)
            };
            let env = self.ep.recv(&pred, false)?;
            if is_stop(&env) {
                return Err(PartyError::Stopped(env.variable));
            }
            let t = *total.get_or_insert(env.partition.total);
            if env.partition.total != t {
                return Err(PartyError::Protocol(format!("{var}: inconsistent partition total")));
            }
            parts.entry(env.partition.index).or_insert(env.payload);
            if parts.len() as u32 >= t {
                break;
            }
        }
        let bytes: Vec<u8> = parts.into_values().flatten().collect();
        Ok(Payload::decode(&bytes)?)
    }

    pub fn send_control(&mut self, dst: PartyId, task: &str, cmd: ControlCommand) -> Result<(), PartyError> {
        let mut env = self.envelope(task, cmd.command.variable().to_string(), dst, FlowLevel::Control, TransferMode::Unary);
        env.payload = Payload::Control(cmd).encode();
        self.ep.send(env)?;
        Ok(())
    }

    /// Next control message from the coordinator.
    pub fn recv_control(&mut self) -> Result<ControlCommand, PartyError> {
        let env = self.ep.recv(&|e: &Envelope| e.src == PartyId::Coordinator && e.transfer_mode == TransferMode::Unary, false)?;
        match Payload::decode(&env.payload)? {
            Payload::Control(c) => Ok(c),
            other => Err(PartyError::Protocol(format!("expected control body, got {}", other.kind()))),
        }
    }

    pub fn send_extra(&mut self, task: &str, x: ExtraSend) -> Result<(), PartyError> {
        let mut env = self.envelope(task, x.variable, x.dst, x.flow, x.transfer_mode);
        env.payload = x.payload;
        self.ep.send(env)?;
        Ok(())
    }

    /// Runs the `extra_sends` hook for this iteration.
    pub fn run_extra_sends(&mut self, task: &str, iter: u32, labels: Option<&[f64]>) -> Result<(), PartyError> {
        let extras = self.hooks.extra_sends(&self.me, task, iter, labels);
        for x in extras {
            self.send_extra(task, x)?;
        }
        Ok(())
    }

    pub fn progress(&mut self, task: &str, iter: u32) -> Result<(), PartyError> {
        self.send_control(PartyId::Coordinator, task, ControlCommand::new(Command::Progress, task).at(iter))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_input() {
        let data: Vec<u8> = (0..10).collect();
        let c = split_chunks(&data, 4);
        assert_eq!(c.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![3, 3, 2, 2]);
        assert_eq!(c.concat(), data);
        assert_eq!(split_chunks(&data[..2], 4).len(), 2);
        assert_eq!(split_chunks(&[], 4).len(), 1);
    }
}
