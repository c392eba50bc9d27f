use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use tokio::sync::Notify;

use pieeg_core::protocol::{Payload, SessionStatus};
use pieeg_core::session::{Observer, Outbound};

/// Samples and spectra a client may have queued before the oldest is dropped.
pub const LOSSY_CAPACITY: usize = 64;
/// Lossless backlog beyond which a client is considered dead and cut off.
pub const LOSSLESS_LIMIT: usize = 100_000;

/// Per-connection outbound queue. Lossless messages are never dropped;
/// lossy ones are thinned oldest-first once `LOSSY_CAPACITY` is reached.
/// Relative order of the survivors is preserved.
#[derive(Debug, Default)]
struct ClientQueue {
    items: VecDeque<Payload>,
    lossy: usize,
    dropped: u64,
    overflowed: bool,
}

impl ClientQueue {
    fn push(&mut self, p: Payload) {
        if p.is_lossy() {
            if self.lossy == LOSSY_CAPACITY {
                let oldest = self.items.iter().position(Payload::is_lossy).expect("lossy count is accurate");
                self.items.remove(oldest);
                self.lossy -= 1;
                self.dropped += 1;
            }
            self.lossy += 1;
        } else if self.items.len() - self.lossy >= LOSSLESS_LIMIT {
            self.overflowed = true;
            return;
        }
        self.items.push_back(p);
    }
}

struct Client {
    queue: ClientQueue,
    notify: Arc<Notify>,
}

#[derive(Default)]
struct Inner {
    next_id: u64,
    clients: HashMap<u64, Client>,
    last_status: Option<SessionStatus>,
}

/// Fans pipeline output out to every connected client.
#[derive(Clone, Default)]
pub struct Hub {
    inner: Arc<Mutex<Inner>>,
}

/// What a connection's writer gets on each wake-up.
#[derive(Debug, Default)]
pub struct Batch {
    pub payloads: Vec<Payload>,
    /// Set once the lossless backlog overflowed; the connection should close.
    pub overflowed: bool,
}

impl Hub {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a client. Its queue starts with the latest status snapshot.
    pub fn connect(&self) -> (u64, Arc<Notify>) {
        let mut inner = self.inner.lock().expect("hub lock");
        inner.next_id += 1;
        let id = inner.next_id;
        let notify = Arc::new(Notify::new());
        let mut queue = ClientQueue::default();
        if let Some(s) = &inner.last_status {
            queue.push(Payload::Status(s.clone()));
            notify.notify_one();
        }
        inner.clients.insert(id, Client { queue, notify: notify.clone() });
        (id, notify)
    }

    pub fn disconnect(&self, id: u64) {
        self.inner.lock().expect("hub lock").clients.remove(&id);
    }

    pub fn client_count(&self) -> usize {
        self.inner.lock().expect("hub lock").clients.len()
    }

    /// Takes everything queued for `id`.
    pub fn drain(&self, id: u64) -> Batch {
        let mut inner = self.inner.lock().expect("hub lock");
        match inner.clients.get_mut(&id) {
            Some(c) => {
                c.queue.lossy = 0;
                Batch {
                    payloads: c.queue.items.drain(..).collect(),
                    overflowed: c.queue.overflowed,
                }
            }
            None => Batch { payloads: Vec::new(), overflowed: true },
        }
    }

    /// Lossy messages dropped so far for `id`.
    pub fn dropped(&self, id: u64) -> u64 {
        self.inner
            .lock()
            .expect("hub lock")
            .clients
            .get(&id)
            .map_or(0, |c| c.queue.dropped)
    }

    pub fn broadcast(&self, payload: Payload) {
        let mut inner = self.inner.lock().expect("hub lock");
        if let Payload::Status(s) = &payload {
            inner.last_status = Some(s.clone());
        }
        for c in inner.clients.values_mut() {
            c.queue.push(payload.clone());
            c.notify.notify_one();
        }
    }

    pub fn send_to(&self, id: u64, payload: Payload) {
        let mut inner = self.inner.lock().expect("hub lock");
        if let Some(c) = inner.clients.get_mut(&id) {
            c.queue.push(payload);
            c.notify.notify_one();
        }
    }
}

impl Observer for Hub {
    fn publish(&mut self, msg: Outbound) {
        let payload = match msg {
            Outbound::Samples { t0_ns, dt_ns, values_uv } => Payload::Samples { t0_ns, dt_ns, values_uv },
            Outbound::Spectrum(s) => Payload::Spectrum(s),
            Outbound::Event(e) => Payload::Event(e),
            Outbound::Pin { command, asserted } => Payload::PinState {
                pin: command.pin,
                level: command.level,
                asserted,
                t_ns: command.t_ns,
                cause: command.cause,
            },
            Outbound::Status(s) => Payload::Status(s),
            Outbound::Ack { client: Some(id), ack } => {
                self.send_to(id, Payload::Ack(ack));
                return;
            }
            Outbound::Ack { client: None, ack } => Payload::Ack(ack),
            Outbound::Gap(g) => {
                log::warn!("gap after {} ns: {} frames, {}", g.after_t_ns, g.frames_lost, g.reason);
                return;
            }
        };
        self.broadcast(payload);
    }
}
