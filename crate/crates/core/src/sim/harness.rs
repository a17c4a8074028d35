//! The scenario driver: a population of devices, one server and the two
//! channels between them, advanced on a one-second virtual clock.
//!
//! Only instants where something can happen are visited: epoch
//! boundaries, trace events, beacon slots while a contact is open, peer-loss
//! deadlines and mix deliveries. At each visited instant the steps run in a
//! fixed order (rotation, daily tasks, trace events, captures, beacons,
//! peer-loss ticks, mix deliveries, status requests), so a run is a pure
//! function of its inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::authority::{Credential, IssueError, Issuer, KeyRing, TokenClass};
use crate::ble::{DeviceAddress, ADV_LEN, SCAN_RSP_LEN};
use crate::config::{ConfigError, HarnessConfig};
use crate::crypto::{AuthToken, BlindRequest, CryptoError, Ebid, GroupParams, PetToken};
use crate::device::{DeviceError, DeviceState, FinalizeOutcome, FinalizedEncounter};
use crate::risk::RiskEngine;
use crate::server::Server;
use crate::time::{day_of, SECONDS_PER_DAY};
use crate::transport::{proxy_send, MixChannel, ProxyChannel};
use crate::wire::{self, AckStatus, EsrStatus, Message, StatelessRequest};

use super::audit::{self, AuditResults, LinkabilityView};
use super::report::{Counters, DeviceOutcome, ScenarioReport};
use super::trace::{ContactTrace, TraceError, TraceEventKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("crypto: {0}")]
    Crypto(#[from] CryptoError),
    #[error("token issuance: {0}")]
    Issue(#[from] IssueError),
    #[error("device: {0}")]
    Device(#[from] DeviceError),
    #[error("protocol: {0}")]
    Protocol(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Mode {
    Stateful,
    Stateless,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Stateful => "stateful",
            Mode::Stateless => "stateless",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "stateful" => Ok(Mode::Stateful),
            "stateless" => Ok(Mode::Stateless),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Where an injected beacon comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BeaconSource {
    /// Relayed live: whatever `device` broadcasts right now.
    Live(usize),
    /// Recorded from `device` at time `at` and played back later.
    Captured { device: usize, at: u64 },
}

/// Adversarial beacon delivery to `target` at every beacon slot in
/// `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Injection {
    pub label: String,
    pub source: BeaconSource,
    pub target: usize,
    pub start: u64,
    pub end: u64,
}

/// Deliberate protocol breakage, for negative controls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Faults {
    /// Diagnosed devices upload their request tokens instead of their
    /// exposure tokens.
    pub upload_rtl_instead: bool,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub trace: ContactTrace,
    pub config: HarnessConfig,
    pub seed: u64,
    pub mode: Mode,
    pub injections: Vec<Injection>,
    pub faults: Faults,
}

impl Scenario {
    pub fn new(trace: ContactTrace, config: HarnessConfig, seed: u64, mode: Mode) -> Self {
        Scenario {
            trace,
            config,
            seed,
            mode,
            injections: Vec::new(),
            faults: Faults::default(),
        }
    }
}

/// One finalized encounter, as seen by the harness.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncounterLog {
    pub device: usize,
    pub peer: Ebid,
    pub time: u64,
    pub day: u32,
    pub duration_sec: u64,
    pub outcome: FinalizeOutcome,
}

/// Ground truth the server never sees.
#[derive(Clone, Debug, Default)]
pub struct GroundTruth {
    pub encounters: Vec<EncounterLog>,
    /// Every upload sent, with its sender.
    pub uploads: Vec<(usize, PetToken)>,
    /// Every status query sent: sender, time and the tokens it carried.
    pub requests: Vec<(usize, u64, Vec<PetToken>)>,
    /// First-notification events: device and time.
    pub notifications: Vec<(usize, u64)>,
    /// Peer EBIDs each target received through an injection, by label.
    pub injected: BTreeMap<String, BTreeSet<(usize, Ebid)>>,
}

impl GroundTruth {
    /// PETs derived from encounters whose peer was injected under `label`.
    pub fn injected_pets(&self, label: &str) -> BTreeSet<PetToken> {
        let Some(tagged) = self.injected.get(label) else {
            return BTreeSet::new();
        };
        self.encounters
            .iter()
            .filter(|e| tagged.contains(&(e.device, e.peer)))
            .filter_map(|e| match e.outcome {
                FinalizeOutcome::Stored { rtl_pet, etl_pet } => Some([rtl_pet, etl_pet]),
                _ => None,
            })
            .flatten()
            .collect()
    }
}

type Beacon = (DeviceAddress, [u8; ADV_LEN], [u8; SCAN_RSP_LEN]);

/// Derives an independent 32-byte seed for one component of a run.
pub fn derive_seed(seed: u64, label: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(label.as_bytes());
    h.update(index.to_be_bytes());
    h.finalize().into()
}

pub struct Simulation {
    cfg: HarnessConfig,
    mode: Mode,
    seed: u64,
    trace: ContactTrace,
    next_event: usize,
    devices: Vec<DeviceState>,
    phones: Vec<String>,
    server: Server,
    proxy: ProxyChannel,
    mix: MixChannel,
    contacts: BTreeSet<(usize, usize)>,
    injections: Vec<Injection>,
    captures: BTreeMap<(usize, u64), Beacon>,
    faults: Faults,
    esr_phase: Vec<u64>,
    retries: BTreeMap<u64, BTreeSet<usize>>,
    log: GroundTruth,
    counters: Counters,
    per_device: Vec<DeviceCounters>,
    key_violations: usize,
    now: u64,
}

#[derive(Clone, Copy, Debug, Default)]
struct DeviceCounters {
    requests: u64,
    rate_limited: u64,
    at_risk_replies: u64,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        let Scenario {
            trace,
            config: cfg,
            seed,
            mode,
            injections,
            faults,
        } = scenario;
        cfg.validate()?;
        for inj in &injections {
            let src = match inj.source {
                BeaconSource::Live(d) | BeaconSource::Captured { device: d, .. } => d,
            };
            if src >= trace.population || inj.target >= trace.population || src == inj.target {
                return Err(SimError::Protocol(format!(
                    "injection `{}` names bad devices",
                    inj.label
                )));
            }
        }
        let p = &cfg.protocol;
        let keys = KeyRing::new(derive_seed(seed, "authority-keys", 0), cfg.sim.rsa_bits)?;
        let issuer = Issuer::new(keys, p.ct_days, derive_seed(seed, "issuer", 0));
        let risk = RiskEngine::from_config(&cfg.scorer, p.ct_days, p.risk_threshold_sec, p.notify_p);
        let server = Server::new(p.clone(), risk, issuer, derive_seed(seed, "server", 0));

        let devices: Vec<DeviceState> = (0..trace.population)
            .map(|d| DeviceState::new(GroupParams::Curve25519, derive_seed(seed, "device", d as u64), 0))
            .collect();
        let phones = (0..trace.population).map(|d| format!("+1555{d:07}")).collect();
        let mut rng = ChaCha20Rng::from_seed(derive_seed(seed, "schedule", 0));
        let period = match mode {
            Mode::Stateful => p.esr_min_epochs(),
            Mode::Stateless => p.epochs_per_day(),
        };
        let esr_phase = (0..trace.population).map(|_| rng.gen_range(0..period)).collect();

        let mut sim = Simulation {
            proxy: ProxyChannel::new(&cfg.channel, derive_seed(seed, "proxy", 0)),
            mix: MixChannel::new(&cfg.channel, derive_seed(seed, "mix", 0)),
            per_device: vec![DeviceCounters::default(); trace.population],
            cfg,
            mode,
            seed,
            trace,
            next_event: 0,
            devices,
            phones,
            server,
            contacts: BTreeSet::new(),
            injections,
            captures: BTreeMap::new(),
            faults,
            esr_phase,
            retries: BTreeMap::new(),
            log: GroundTruth::default(),
            counters: Counters::default(),
            key_violations: 0,
            now: 0,
        };
        if mode == Mode::Stateful {
            for d in 0..sim.devices.len() {
                sim.register(d)?;
            }
        }
        Ok(sim)
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.devices
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.log
    }

    pub fn config(&self) -> &HarnessConfig {
        &self.cfg
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    fn send_to_server(&mut self, bytes: Vec<u8>) -> Option<Message> {
        let now = self.now;
        let server = &mut self.server;
        let audit = &mut self.key_violations;
        let reply = proxy_send(&mut self.proxy, now, bytes, |delivery| {
            let r = server.handle_message(&delivery.bytes, delivery.time);
            if server.key_audit().live() != 0 {
                *audit += 1;
            }
            r
        })?;
        wire::decode(&reply).ok()
    }

    fn obtain(&mut self, d: usize, class: TokenClass, credential: &Credential) -> Result<AuthToken, SimError> {
        let issuer = self.server.issuer();
        let pk = issuer.public(class);
        let (req, blinded) = BlindRequest::new(self.devices[d].rng(), &pk);
        let rep = issuer.issue(class, credential, &blinded)?;
        Ok(req.finish(&rep)?)
    }

    fn register(&mut self, d: usize) -> Result<(), SimError> {
        let phone = Credential::Phone(self.phones[d].clone());
        let token = self.obtain(d, TokenClass::Registration, &phone)?;
        match self.send_to_server(wire::encode(&Message::Register { token })) {
            Some(Message::RegisterOk { id, ek }) => {
                self.devices[d].set_registration(id, ek);
                self.counters.registrations += 1;
                Ok(())
            }
            other => Err(SimError::Protocol(format!(
                "registration of device {d} failed: {other:?}"
            ))),
        }
    }

    /// Runs to the end of the trace horizon and builds the report.
    pub fn run(mut self) -> Result<SimOutcome, SimError> {
        let end = self.trace.horizon_sec();
        let mut t = 0;
        while t < end {
            self.step(t)?;
            t = self.next_time(t);
        }
        self.now = end;
        let report = self.report();
        Ok(SimOutcome { report, sim: self })
    }

    fn next_time(&self, t: u64) -> u64 {
        let dur = self.cfg.protocol.epoch_duration_sec;
        let bi = self.cfg.sim.beacon_interval_sec;
        let mut next = (t / dur + 1) * dur;
        if let Some(e) = self.trace.events.get(self.next_event) {
            next = next.min(e.time.max(t + 1));
        }
        let slot = (t / bi + 1) * bi;
        if !self.contacts.is_empty() {
            next = next.min(slot);
        }
        for inj in &self.injections {
            let first = inj.start.div_ceil(bi) * bi;
            let candidate = first.max(slot);
            if candidate < inj.end {
                next = next.min(candidate);
            }
        }
        for &(_, at) in self.capture_points().iter() {
            if at > t {
                next = next.min(at);
            }
        }
        let p = &self.cfg.protocol;
        if let Some(dl) = self.devices.iter().filter_map(|d| d.next_deadline(p)).min() {
            next = next.min(dl.max(t + 1));
        }
        if let Some(m) = self.mix.next_delivery() {
            next = next.min(m.max(t + 1));
        }
        next
    }

    fn capture_points(&self) -> Vec<(usize, u64)> {
        self.injections
            .iter()
            .filter_map(|i| match i.source {
                BeaconSource::Captured { device, at } => Some((device, at)),
                BeaconSource::Live(_) => None,
            })
            .collect()
    }

    fn step(&mut self, t: u64) -> Result<(), SimError> {
        self.now = t;
        let dur = self.cfg.protocol.epoch_duration_sec;
        let epoch = t / dur;
        let epoch_start = t.is_multiple_of(dur);
        if epoch_start && epoch > 0 {
            self.rotate(epoch, t)?;
        }
        if t.is_multiple_of(SECONDS_PER_DAY) && t > 0 {
            self.daily(day_of(t))?;
        }
        self.trace_events(t)?;
        for (device, at) in self.capture_points() {
            if at == t {
                let beacon = self.devices[device].beacon();
                self.captures.insert((device, at), beacon);
            }
        }
        if t.is_multiple_of(self.cfg.sim.beacon_interval_sec) {
            self.beacons(t);
        }
        self.ticks(t);
        for delivery in self.mix.due(t) {
            let reply = self.server.handle_message(&delivery.bytes, delivery.time);
            if self.server.key_audit().live() != 0 {
                self.key_violations += 1;
            }
            match wire::decode(&reply) {
                Ok(Message::UploadAck { status: AckStatus::Ok }) => self.counters.uploads_accepted += 1,
                _ => self.counters.uploads_rejected += 1,
            }
        }
        if epoch_start {
            self.status_requests(epoch)?;
        }
        Ok(())
    }

    fn record_finalized(&mut self, device: usize, t: u64, done: Vec<FinalizedEncounter>) {
        for f in done {
            match f.outcome {
                FinalizeOutcome::Stored { .. } => self.counters.encounters_stored += 1,
                FinalizeOutcome::TooShort => self.counters.encounters_too_short += 1,
                FinalizeOutcome::Rejected(_) => self.counters.encounters_rejected += 1,
            }
            self.log.encounters.push(EncounterLog {
                device,
                peer: f.peer,
                time: t,
                day: f.day,
                duration_sec: f.duration_sec,
                outcome: f.outcome,
            });
        }
    }

    fn rotate(&mut self, epoch: u64, t: u64) -> Result<(), SimError> {
        let p = &self.cfg.protocol;
        let results: Vec<Result<Vec<FinalizedEncounter>, DeviceError>> = if self.parallel() {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                self.devices
                    .par_iter_mut()
                    .map(|d| d.on_epoch_start(epoch, t, p))
                    .collect()
            }
            #[cfg(not(feature = "parallel"))]
            unreachable!()
        } else {
            self.devices.iter_mut().map(|d| d.on_epoch_start(epoch, t, p)).collect()
        };
        for (d, r) in results.into_iter().enumerate() {
            self.record_finalized(d, t, r?);
        }
        Ok(())
    }

    fn parallel(&self) -> bool {
        cfg!(feature = "parallel") && self.cfg.sim.parallel
    }

    fn ticks(&mut self, t: u64) {
        let p = &self.cfg.protocol;
        let due: Vec<usize> = (0..self.devices.len())
            .filter(|&d| self.devices[d].next_deadline(p).is_some_and(|dl| dl <= t))
            .collect();
        for d in due {
            let done = self.devices[d].tick(t, &self.cfg.protocol);
            self.record_finalized(d, t, done);
        }
    }

    fn daily(&mut self, today: u32) -> Result<(), SimError> {
        self.server.collect_garbage(today);
        for d in 0..self.devices.len() {
            if self.devices[d].is_contagious(today) {
                self.upload_pending(d)?;
            }
        }
        Ok(())
    }

    fn trace_events(&mut self, t: u64) -> Result<(), SimError> {
        while let Some(e) = self.trace.events.get(self.next_event).copied() {
            if e.time > t {
                break;
            }
            self.next_event += 1;
            match e.kind {
                TraceEventKind::ContactStart { a, b } => {
                    self.contacts.insert((a.min(b), a.max(b)));
                }
                TraceEventKind::ContactEnd { a, b } => {
                    self.contacts.remove(&(a.min(b), a.max(b)));
                }
                TraceEventKind::Diagnose { device } => self.diagnose(device, t)?,
                TraceEventKind::TestResult { device, positive } => {
                    self.test_result(device, positive)?;
                    if positive {
                        self.diagnose(device, t)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn deliver(&mut self, target: usize, beacon: &Beacon, t: u64) -> Option<Ebid> {
        let (addr, adv, scan) = beacon;
        let dev = &mut self.devices[target];
        let a = dev.receive_payload(*addr, adv, t).ok().flatten();
        let b = dev.receive_payload(*addr, scan, t).ok().flatten();
        self.counters.beacons_delivered += 1;
        a.or(b)
    }

    fn beacons(&mut self, t: u64) {
        let pairs: Vec<(usize, usize)> = self.contacts.iter().copied().collect();
        for (a, b) in pairs {
            let ba = self.devices[a].beacon();
            let bb = self.devices[b].beacon();
            self.deliver(b, &ba, t);
            self.deliver(a, &bb, t);
        }
        for i in 0..self.injections.len() {
            let inj = self.injections[i].clone();
            if t < inj.start || t >= inj.end {
                continue;
            }
            let beacon = match inj.source {
                BeaconSource::Live(d) => Some(self.devices[d].beacon()),
                BeaconSource::Captured { device, at } => self.captures.get(&(device, at)).copied(),
            };
            if let Some(beacon) = beacon {
                if let Some(ebid) = self.deliver(inj.target, &beacon, t) {
                    self.log
                        .injected
                        .entry(inj.label.clone())
                        .or_default()
                        .insert((inj.target, ebid));
                }
            }
        }
    }

    fn diagnose(&mut self, d: usize, t: u64) -> Result<(), SimError> {
        self.devices[d].diagnose(day_of(t), &self.cfg.protocol);
        self.counters.diagnoses += 1;
        self.upload_pending(d)
    }

    fn upload_pending(&mut self, d: usize) -> Result<(), SimError> {
        let n = self.devices[d].pending_uploads();
        if n == 0 {
            return Ok(());
        }
        let code = self.server.issuer().authorize(TokenClass::Diagnosis, n as u32);
        let mut tokens = Vec::with_capacity(n);
        for _ in 0..n {
            tokens.push(self.obtain(d, TokenClass::Diagnosis, &Credential::Code(code))?);
        }
        let mut batch = self.devices[d].build_upload_batch(tokens)?;
        if self.faults.upload_rtl_instead {
            let rtl: Vec<PetToken> = self.devices[d].rtl().iter().rev().map(|e| e.pet).collect();
            for (msg, pet) in batch.iter_mut().zip(rtl) {
                msg.pet = pet;
            }
        }
        let mut encoded = Vec::with_capacity(batch.len());
        for msg in batch {
            self.log.uploads.push((d, msg.pet));
            encoded.push(wire::encode(&Message::Upload(msg)));
        }
        self.counters.uploads_sent += encoded.len() as u64;
        self.mix.mix_send(self.now, encoded);
        Ok(())
    }

    fn test_result(&mut self, d: usize, positive: bool) -> Result<(), SimError> {
        self.counters.test_results += 1;
        let (Some(id), Some(ek)) = (self.devices[d].id(), self.devices[d].entry_key().cloned()) else {
            return Ok(());
        };
        let code = self.server.issuer().authorize(TokenClass::TestResult, 1);
        let token = self.obtain(d, TokenClass::TestResult, &Credential::Code(code))?;
        self.send_to_server(wire::encode(&Message::TestResult {
            id,
            ek,
            positive,
            token,
        }));
        Ok(())
    }

    fn status_requests(&mut self, epoch: u64) -> Result<(), SimError> {
        let p = &self.cfg.protocol;
        let (period, stateful) = match self.mode {
            Mode::Stateful => (p.esr_min_epochs(), true),
            Mode::Stateless => (p.epochs_per_day(), false),
        };
        let retry = self.retries.remove(&epoch).unwrap_or_default();
        for d in 0..self.devices.len() {
            if epoch % period != self.esr_phase[d] && !retry.contains(&d) {
                continue;
            }
            if stateful {
                self.stateful_request(d, epoch)?;
            } else {
                self.stateless_round(d)?;
            }
        }
        Ok(())
    }

    fn stateful_request(&mut self, d: usize, epoch: u64) -> Result<(), SimError> {
        let req = match self.devices[d].build_esr_request(epoch, &self.cfg.protocol) {
            Ok(req) => req,
            Err(DeviceError::NoRequestDue { .. }) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        self.log.requests.push((d, self.now, req.tokens.clone()));
        self.counters.requests += 1;
        self.per_device[d].requests += 1;
        let status = match self.send_to_server(wire::encode(&Message::EsrReq(req))) {
            Some(Message::EsrRep { status }) => status,
            _ => {
                self.retries.entry(epoch + 1).or_default().insert(d);
                return Ok(());
            }
        };
        match status {
            EsrStatus::RateLimited => {
                self.counters.rate_limited += 1;
                self.per_device[d].rate_limited += 1;
            }
            EsrStatus::AtRisk => {
                self.counters.at_risk_replies += 1;
                self.per_device[d].at_risk_replies += 1;
            }
            _ => {}
        }
        let outcome = self.devices[d].handle_esr_reply(status, epoch);
        if outcome.notify_user {
            self.log.notifications.push((d, self.now));
        }
        if outcome.retry {
            self.retries.entry(epoch + 1).or_default().insert(d);
        }
        Ok(())
    }

    fn stateless_round(&mut self, d: usize) -> Result<(), SimError> {
        let today = day_of(self.now);
        let queries = self.devices[d].build_stateless_queries(today, &self.cfg.protocol);
        let phone = Credential::Phone(self.phones[d].clone());
        for (day, tokens) in queries {
            let token = self.obtain(d, TokenClass::Day(today), &phone)?;
            self.log.requests.push((d, self.now, tokens.clone()));
            self.counters.requests += 1;
            self.per_device[d].requests += 1;
            let msg = Message::StatelessEsr(StatelessRequest {
                day: today,
                token,
                tokens,
            });
            if let Some(Message::StatelessRep {
                status: AckStatus::Ok,
                score,
            }) = self.send_to_server(wire::encode(&msg))
            {
                self.devices[d].record_daily_score(day, score);
            }
        }
        let (_, at_risk) = self.devices[d].stateless_assessment(today, self.cfg.protocol.ct_days, self.server.risk());
        if at_risk {
            self.counters.at_risk_replies += 1;
            self.per_device[d].at_risk_replies += 1;
        }
        if self.devices[d].apply_local_decision(at_risk) {
            self.log.notifications.push((d, self.now));
        }
        Ok(())
    }

    /// The score each device would compute for itself at the end of the
    /// run: from its decrypted entry when stateful, from its stored daily
    /// scores when stateless.
    pub fn global_score(&self, d: usize) -> f64 {
        let today = day_of(self.trace.horizon_sec().saturating_sub(1));
        let dev = &self.devices[d];
        match self.mode {
            Mode::Stateless => {
                dev.stateless_assessment(today, self.cfg.protocol.ct_days, self.server.risk())
                    .0
                     .0
            }
            Mode::Stateful => {
                let (Some(id), Some(ek)) = (dev.id(), dev.entry_key()) else {
                    return 0.0;
                };
                audit::open_entry(&self.server, id, ek)
                    .map(|f| self.server.risk().score(&f.exposures(), today).0)
                    .unwrap_or(f64::NAN)
            }
        }
    }

    fn linkability_view(&self) -> LinkabilityView {
        LinkabilityView {
            requests: self
                .log
                .requests
                .iter()
                .map(|(d, _, tokens)| (*d, tokens.clone()))
                .collect(),
            uploads: self.log.uploads.clone(),
        }
    }

    pub fn audits(&self) -> AuditResults {
        let keys: Vec<_> = match self.mode {
            Mode::Stateful => self
                .devices
                .iter()
                .filter_map(|d| Some((d.id()?, d.entry_key()?.clone())))
                .collect(),
            Mode::Stateless => Vec::new(),
        };
        AuditResults {
            unlinkability: audit::audit_linkability(&self.linkability_view()),
            key_amnesia: audit::audit_key_amnesia(self.server.key_audit(), self.key_violations),
            match_once: audit::audit_match_once(self.server.transcript()),
            breach: audit::audit_breach(&self.server, &keys, self.seed),
        }
    }

    fn report(&self) -> ScenarioReport {
        let mut first: BTreeMap<usize, u64> = BTreeMap::new();
        for &(d, t) in &self.log.notifications {
            first.entry(d).or_insert(t);
        }
        let devices = (0..self.devices.len())
            .map(|d| {
                let dev = &self.devices[d];
                let c = self.per_device[d];
                DeviceOutcome {
                    device: d,
                    notified: first.contains_key(&d),
                    first_notified_at: first.get(&d).copied(),
                    notification_events: dev.notification_events(),
                    global_score: self.global_score(d),
                    requests: c.requests,
                    rate_limited: c.rate_limited,
                    at_risk_replies: c.at_risk_replies,
                    rtl_len: dev.rtl().len(),
                    etl_len: dev.etl().count(),
                    diagnosed: dev.contagious_until().is_some(),
                }
            })
            .collect();
        let mut counters = self.counters;
        counters.matches = self.server.transcript().matches.len() as u64;
        ScenarioReport {
            mode: self.mode,
            seed: self.seed,
            population: self.devices.len(),
            horizon_days: self.trace.horizon_days,
            devices,
            counters,
            audits: self.audits(),
            attacks: Vec::new(),
        }
    }
}

/// A finished run: the report plus the final world for inspection.
pub struct SimOutcome {
    pub report: ScenarioReport,
    pub sim: Simulation,
}

/// Runs one honest scenario.
pub fn run(trace: &ContactTrace, config: &HarnessConfig, seed: u64, mode: Mode) -> Result<ScenarioReport, SimError> {
    Ok(
        Simulation::new(Scenario::new(trace.clone(), config.clone(), seed, mode))?
            .run()?
            .report,
    )
}
