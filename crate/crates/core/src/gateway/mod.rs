//! Star-topology exchange. Every envelope goes through [`Gateway::forward`],
//! which stamps the simulated delivery time, hands the envelope to the
//! collector and then queues it for the destination.

mod endpoint;

pub use endpoint::{thread_cpu_ns, Endpoint};

use crate::collector::{Collector, LedgerBody};
use crate::messages::{serialize, Envelope, PartyId};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

pub const DEFAULT_RECV_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    pub latency_ms: f64,
    pub bandwidth_bps: f64,
}

impl Default for LinkProfile {
    fn default() -> Self {
        LinkProfile { latency_ms: 50.0, bandwidth_bps: 1e9 }
    }
}

impl LinkProfile {
    pub fn zero() -> Self {
        LinkProfile { latency_ms: 0.0, bandwidth_bps: f64::INFINITY }
    }

    /// `latency + bytes·8 / bandwidth`, in ns.
    pub fn delay_ns(&self, bytes: usize) -> u64 {
        let transfer = if self.bandwidth_bps.is_finite() { bytes as f64 * 8.0 / self.bandwidth_bps } else { 0.0 };
        ((self.latency_ms * 1e-3 + transfer) * 1e9).round() as u64
    }
}

/// In-flight mutation applied before collection. Returning `false` leaves
/// the envelope untouched.
pub type TamperFn = Arc<dyn Fn(&mut Envelope) -> bool + Send + Sync>;

#[derive(Debug, Clone)]
pub struct Delivery {
    pub env: Envelope,
    pub deliver_at: u64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("no route to {0}")]
    UnknownDestination(PartyId),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RecvError {
    #[error("receive timed out")]
    Timeout,
    #[error("every live party is blocked")]
    Deadlock,
}

#[derive(Default)]
struct State {
    inbox: HashMap<PartyId, VecDeque<Delivery>>,
    route_last: HashMap<(PartyId, PartyId), u64>,
    live: BTreeSet<PartyId>,
    blocked: BTreeSet<PartyId>,
    /// Parties with deliveries they have not looked at yet.
    dirty: BTreeSet<PartyId>,
    delivered: u64,
    dropped: u64,
    tampered: u64,
    capture: Option<Vec<Envelope>>,
}

pub struct Gateway {
    profile: LinkProfile,
    collector: Option<Arc<Collector>>,
    tamper: Option<TamperFn>,
    forward_lock: Mutex<()>,
    state: Mutex<State>,
    cv: Condvar,
    timeout: Duration,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GatewayStats {
    pub delivered: u64,
    pub dropped: u64,
    pub tampered: u64,
}

impl Gateway {
    pub fn new(profile: LinkProfile, collector: Option<Arc<Collector>>) -> Gateway {
        Gateway {
            profile,
            collector,
            tamper: None,
            forward_lock: Mutex::new(()),
            state: Mutex::new(State::default()),
            cv: Condvar::new(),
            timeout: DEFAULT_RECV_TIMEOUT,
        }
    }

    pub fn with_tamper(mut self, tamper: TamperFn) -> Gateway {
        self.tamper = Some(tamper);
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Gateway {
        self.timeout = timeout;
        self
    }

    /// Keeps a copy of every delivered envelope.
    pub fn with_capture(self) -> Gateway {
        self.state.lock().unwrap().capture = Some(Vec::new());
        self
    }

    pub fn profile(&self) -> LinkProfile {
        self.profile
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn register(&self, party: &PartyId) {
        let mut st = self.state.lock().unwrap();
        st.inbox.entry(party.clone()).or_default();
        st.live.insert(party.clone());
    }

    /// The party no longer receives; it stays routable.
    pub fn retire(&self, party: &PartyId) {
        let mut st = self.state.lock().unwrap();
        st.live.remove(party);
        st.blocked.remove(party);
        self.cv.notify_all();
    }

    pub fn stats(&self) -> GatewayStats {
        let st = self.state.lock().unwrap();
        GatewayStats { delivered: st.delivered, dropped: st.dropped, tampered: st.tampered }
    }

    pub fn take_capture(&self) -> Vec<Envelope> {
        self.state.lock().unwrap().capture.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Collects then delivers. `env.sent_at` must already be stamped.
    pub fn forward(&self, mut env: Envelope) -> Result<u64, GatewayError> {
        let _order = self.forward_lock.lock().unwrap();
        let tampered = self.tamper.as_ref().is_some_and(|t| t(&mut env));
        let known = self.state.lock().unwrap().inbox.contains_key(&env.dst);
        if !known {
            let mut st = self.state.lock().unwrap();
            st.dropped += 1;
            drop(st);
            if let Some(c) = &self.collector {
                let alarm = json!({
                    "kind": "unknown_destination",
                    "variable": env.variable,
                    "src": env.src.to_string(),
                    "dst": env.dst.to_string(),
                });
                c.append(LedgerBody::GatewayAlarm(alarm), json!({}));
            }
            return Err(GatewayError::UnknownDestination(env.dst));
        }
        let bytes = serialize(&env).len();
        let route = (env.src.clone(), env.dst.clone());
        let mut st = self.state.lock().unwrap();
        let earliest = env.sent_at + self.profile.delay_ns(bytes);
        let deliver_at = earliest.max(st.route_last.get(&route).copied().unwrap_or(0));
        st.route_last.insert(route, deliver_at);
        env.recv_at = deliver_at;
        drop(st);
        if let Some(c) = &self.collector {
            c.collect(&env);
        }
        let mut st = self.state.lock().unwrap();
        if tampered {
            st.tampered += 1;
        }
        if let Some(cap) = st.capture.as_mut() {
            cap.push(env.clone());
        }
        st.delivered += 1;
        st.dirty.insert(env.dst.clone());
        st.inbox.get_mut(&env.dst).expect("checked above").push_back(Delivery { env, deliver_at });
        self.cv.notify_all();
        Ok(deliver_at)
    }

    /// Removes the first queued delivery for `me` accepted by `pred`.
    /// With `detect_deadlock`, returns [`RecvError::Deadlock`] once every
    /// live party is blocked with nothing new to look at.
    pub fn recv(
        &self,
        me: &PartyId,
        pred: &dyn Fn(&Envelope) -> bool,
        detect_deadlock: bool,
    ) -> Result<Delivery, RecvError> {
        let deadline = Instant::now() + self.timeout;
        let mut st = self.state.lock().unwrap();
        let mut announced = false;
        let out = loop {
            st.dirty.remove(me);
            let inbox = st.inbox.entry(me.clone()).or_default();
            if let Some(pos) = inbox.iter().position(|d| pred(&d.env)) {
                break Ok(inbox.remove(pos).unwrap());
            }
            if detect_deadlock
                && st.live.iter().all(|p| p == me || st.blocked.contains(p))
                && st.dirty.iter().all(|p| !st.live.contains(p))
            {
                break Err(RecvError::Deadlock);
            }
            let now = Instant::now();
            if now >= deadline {
                break Err(RecvError::Timeout);
            }
            // Wake the others once so they can re-run deadlock detection;
            // notifying on every wakeup makes idle receivers ping-pong.
            if !announced {
                st.blocked.insert(me.clone());
                self.cv.notify_all();
                announced = true;
            }
            let (guard, _) = self.cv.wait_timeout(st, (deadline - now).min(Duration::from_millis(200))).unwrap();
            st = guard;
        };
        st.blocked.remove(me);
        out
    }
}
