//! Simulated anonymizing channels.
//!
//! [`ProxyChannel`] carries request/reply traffic and strips the sender:
//! the server sees only bytes and a timestamp, and replies find their way
//! back through tickets the server never observes. [`MixChannel`] carries
//! one-way uploads, delaying each message independently and interleaving
//! messages from different uploaders.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::config::ChannelConfig;

/// What the server receives: no source field by construction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServerDelivery {
    pub time: u64,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ticket(u64);

#[derive(Debug)]
pub struct ProxyChannel {
    drop_rate: f64,
    rng: ChaCha20Rng,
    queue: Vec<(Ticket, Vec<u8>)>,
    replies: HashMap<Ticket, Vec<u8>>,
    next: u64,
    server_view: Vec<ServerDelivery>,
    record: bool,
}

impl ProxyChannel {
    pub fn new(config: &ChannelConfig, seed: [u8; 32]) -> Self {
        ProxyChannel {
            drop_rate: config.proxy_drop_rate,
            rng: ChaCha20Rng::from_seed(seed),
            queue: Vec::new(),
            replies: HashMap::new(),
            next: 0,
            server_view: Vec::new(),
            record: false,
        }
    }

    /// Keep a copy of every delivery as the server saw it.
    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn submit(&mut self, bytes: Vec<u8>) -> Ticket {
        let t = Ticket(self.next);
        self.next += 1;
        self.queue.push((t, bytes));
        t
    }

    /// Delivers queued requests in submission order. Dropped requests get
    /// no reply.
    pub fn flush<F>(&mut self, now: u64, mut server: F)
    where
        F: FnMut(&ServerDelivery) -> Vec<u8>,
    {
        for (ticket, bytes) in std::mem::take(&mut self.queue) {
            if self.drop_rate > 0.0 && self.rng.gen_bool(self.drop_rate) {
                continue;
            }
            let delivery = ServerDelivery { time: now, bytes };
            let reply = server(&delivery);
            if self.record {
                self.server_view.push(delivery);
            }
            self.replies.insert(ticket, reply);
        }
    }

    pub fn collect(&mut self, ticket: Ticket) -> Option<Vec<u8>> {
        self.replies.remove(&ticket)
    }

    pub fn server_view(&self) -> &[ServerDelivery] {
        &self.server_view
    }
}

/// Submits one request and waits for its reply.
pub fn proxy_send<F>(channel: &mut ProxyChannel, now: u64, bytes: Vec<u8>, server: F) -> Option<Vec<u8>>
where
    F: FnMut(&ServerDelivery) -> Vec<u8>,
{
    let ticket = channel.submit(bytes);
    channel.flush(now, server);
    channel.collect(ticket)
}

#[derive(Debug)]
pub struct MixChannel {
    enabled: bool,
    delay_max: u64,
    rng: ChaCha20Rng,
    pending: BTreeMap<(u64, u64, u64), Vec<u8>>,
    seq: u64,
}

impl MixChannel {
    pub fn new(config: &ChannelConfig, seed: [u8; 32]) -> Self {
        MixChannel {
            enabled: config.mix_enabled,
            delay_max: config.mix_delay_max_sec,
            rng: ChaCha20Rng::from_seed(seed),
            pending: BTreeMap::new(),
            seq: 0,
        }
    }

    /// Schedules each message at `now + U[0, delay_max]`, ordering equal
    /// delivery times by a random key. With mixing disabled, messages go
    /// out immediately in submission order.
    pub fn mix_send(&mut self, now: u64, msgs: Vec<Vec<u8>>) {
        for msg in msgs {
            self.seq += 1;
            let key = if self.enabled {
                (now + self.rng.gen_range(0..=self.delay_max), self.rng.gen(), self.seq)
            } else {
                (now, 0, self.seq)
            };
            self.pending.insert(key, msg);
        }
    }

    pub fn next_delivery(&self) -> Option<u64> {
        self.pending.keys().next().map(|k| k.0)
    }

    /// Removes and returns every message due at or before `now`.
    pub fn due(&mut self, now: u64) -> Vec<ServerDelivery> {
        let later = self.pending.split_off(&(now + 1, 0, 0));
        let ready = std::mem::replace(&mut self.pending, later);
        ready
            .into_iter()
            .map(|((time, _, _), bytes)| ServerDelivery { time, bytes })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}
