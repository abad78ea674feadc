//! A party's attachment to the gateway, with its virtual clock.
//!
//! The clock advances by the thread's own CPU time between communication
//! events, and jumps to the delivery time when a receive has to block. Time
//! spent inside the gateway (collection, verification) is not charged to the
//! sender.

use super::{Delivery, Gateway, GatewayError, RecvError};
use crate::collector::PartyTiming;
use crate::messages::{Envelope, PartyId};
use std::sync::Arc;

pub fn thread_cpu_ns() -> u64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid out-pointer; CLOCK_THREAD_CPUTIME_ID is always supported on Linux.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    assert_eq!(rc, 0, "clock_gettime failed");
    ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
}

pub struct Endpoint {
    pub party: PartyId,
    gateway: Arc<Gateway>,
    clock: u64,
    cpu_mark: u64,
    cpu_total: u64,
    wait_ns: u64,
    comm_ns: u64,
    seq: u64,
    credential: Vec<u8>,
}

impl Endpoint {
    /// Must be called on the thread that will use the endpoint.
    pub fn attach(party: PartyId, gateway: Arc<Gateway>, credential: Vec<u8>) -> Endpoint {
        gateway.register(&party);
        Endpoint {
            party,
            gateway,
            clock: 0,
            cpu_mark: thread_cpu_ns(),
            cpu_total: 0,
            wait_ns: 0,
            comm_ns: 0,
            seq: 0,
            credential,
        }
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn credential(&self) -> &[u8] {
        &self.credential
    }

    fn sync(&mut self) {
        let now = thread_cpu_ns();
        let d = now.saturating_sub(self.cpu_mark);
        self.clock += d;
        self.cpu_total += d;
        self.cpu_mark = now;
    }

    fn rebase(&mut self) {
        self.cpu_mark = thread_cpu_ns();
    }

    /// Current virtual time in ns.
    pub fn now(&mut self) -> u64 {
        self.sync();
        self.clock
    }

    pub fn next_seq(&mut self) -> u64 {
        let s = self.seq;
        self.seq += 1;
        s
    }

    /// Stamps seq, credential and `sent_at`, then forwards.
    pub fn send(&mut self, mut env: Envelope) -> Result<u64, GatewayError> {
        self.sync();
        env.seq = self.next_seq();
        env.src = self.party.clone();
        env.credential = self.credential.clone();
        env.sent_at = self.clock;
        let r = self.gateway.forward(env);
        self.rebase();
        r
    }

    /// Forwards an envelope as given (header fields untouched).
    pub fn send_raw(&mut self, mut env: Envelope) -> Result<u64, GatewayError> {
        self.sync();
        env.sent_at = self.clock;
        let r = self.gateway.forward(env);
        self.rebase();
        r
    }

    pub fn recv(&mut self, pred: &dyn Fn(&Envelope) -> bool, detect_deadlock: bool) -> Result<Envelope, RecvError> {
        self.sync();
        let start = self.clock;
        let r = self.gateway.recv(&self.party, pred, detect_deadlock);
        let out = match r {
            Ok(Delivery { env, deliver_at }) => {
                if deliver_at > start {
                    let blocked = deliver_at - start;
                    let wait = env.sent_at.saturating_sub(start).min(blocked);
                    self.wait_ns += wait;
                    self.comm_ns += blocked - wait;
                    self.clock = deliver_at;
                }
                Ok(env)
            }
            Err(e) => Err(e),
        };
        self.rebase();
        out
    }

    pub fn timing(&mut self) -> PartyTiming {
        self.sync();
        PartyTiming {
            party: self.party.to_string(),
            clock_ns: self.clock,
            cpu_ns: self.cpu_total,
            wait_ns: self.wait_ns,
            comm_ns: self.comm_ns,
        }
    }

    /// Stops counting this party for deadlock detection.
    pub fn retire(mut self) -> PartyTiming {
        let t = self.timing();
        self.gateway.retire(&self.party);
        t
    }
}
