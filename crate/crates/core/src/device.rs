//! Per-device protocol state machine.
//!
//! A device rotates its EBID every epoch, turns sufficiently long
//! encounters into a pair of PETs (one kept for status requests, one for a
//! possible upload), expires old entries, builds fixed-size status requests
//! and, once diagnosed, uploads its exposure records one by one.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;
use x25519_dalek::StaticSecret;

use crate::ble::{self, BleError, DeviceAddress, ReassemblyCache, ADV_LEN, SCAN_RSP_LEN};
use crate::config::ProtocolConfig;
use crate::crypto::group::identity_from_secret;
use crate::crypto::{
    assign_roles, derive_pet_pair, dh_shared, gen_identity, AuthToken, CryptoError, Ebid, EntryKey, EphemeralIdentity,
    GroupParams, PetToken, Secret,
};
use crate::risk::{RiskEngine, RiskScore};
use crate::time::day_of;
use crate::wire::{EsrRequest, EsrStatus, Reader, UploadMessage, UserId, WireError, Writer};

pub const PROTOCOL_VERSION: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeviceError {
    #[error("epoch {requested} does not advance past {current}")]
    StaleEpoch { current: u64, requested: u64 },
    #[error("no status request due before epoch {next}")]
    NoRequestDue { next: u64 },
    #[error("device is not registered")]
    NotRegistered,
    #[error("{have} authorization tokens for {need} records")]
    NotEnoughTokens { have: usize, need: usize },
    #[error("snapshot: {0}")]
    Snapshot(#[from] WireError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RtlEntry {
    pub pet: PetToken,
    pub day: u32,
}

/// An exposure record kept for upload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncounterRecord {
    pub pet: PetToken,
    pub duration_sec: u32,
    pub day: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct EtlEntry {
    record: EncounterRecord,
    uploaded: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActiveEncounter {
    pub start: u64,
    pub last_seen: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FinalizeReason {
    EbidRotated,
    PeerLost,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FinalizeOutcome {
    Stored { rtl_pet: PetToken, etl_pet: PetToken },
    TooShort,
    Rejected(CryptoError),
}

/// Result of closing one encounter, reported for harness bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FinalizedEncounter {
    pub peer: Ebid,
    pub reason: FinalizeReason,
    pub duration_sec: u64,
    pub day: u32,
    pub outcome: FinalizeOutcome,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReplyOutcome {
    /// Show the at-risk notification to the user now.
    pub notify_user: bool,
    /// The request was not served; try again next epoch.
    pub retry: bool,
}

#[derive(Debug)]
pub struct DeviceState {
    params: GroupParams,
    id: Option<UserId>,
    ek: Option<EntryKey>,
    current: EphemeralIdentity,
    address: DeviceAddress,
    rtl: Vec<RtlEntry>,
    etl: Vec<EtlEntry>,
    active: BTreeMap<Ebid, ActiveEncounter>,
    notified: bool,
    notification_events: u32,
    sre_local: u64,
    contagious_until: Option<u32>,
    daily_scores: BTreeMap<u32, f64>,
    ble: ReassemblyCache,
    rng: ChaCha20Rng,
}

impl DeviceState {
    pub fn new(params: GroupParams, seed: [u8; 32], epoch: u64) -> Self {
        let mut rng = ChaCha20Rng::from_seed(seed);
        let current = gen_identity(params, &mut rng, epoch);
        let mut address = [0u8; 6];
        rng.fill_bytes(&mut address);
        DeviceState {
            params,
            id: None,
            ek: None,
            current,
            address,
            rtl: Vec::new(),
            etl: Vec::new(),
            active: BTreeMap::new(),
            notified: false,
            notification_events: 0,
            sre_local: 0,
            contagious_until: None,
            daily_scores: BTreeMap::new(),
            ble: ReassemblyCache::new(),
            rng,
        }
    }

    /// Installs a specific identity, replacing the current one.
    pub fn with_identity(mut self, identity: EphemeralIdentity) -> Self {
        self.current = identity;
        self
    }

    pub fn set_registration(&mut self, id: UserId, ek: EntryKey) {
        self.id = Some(id);
        self.ek = Some(ek);
    }

    pub fn id(&self) -> Option<UserId> {
        self.id
    }

    pub fn entry_key(&self) -> Option<&EntryKey> {
        self.ek.as_ref()
    }

    pub fn ebid(&self) -> Ebid {
        self.current.ebid
    }

    pub fn epoch(&self) -> u64 {
        self.current.epoch
    }

    pub fn address(&self) -> DeviceAddress {
        self.address
    }

    pub fn rtl(&self) -> &[RtlEntry] {
        &self.rtl
    }

    pub fn etl(&self) -> impl Iterator<Item = &EncounterRecord> {
        self.etl.iter().map(|e| &e.record)
    }

    pub fn active_encounters(&self) -> &BTreeMap<Ebid, ActiveEncounter> {
        &self.active
    }

    pub fn notified(&self) -> bool {
        self.notified
    }

    pub fn notification_events(&self) -> u32 {
        self.notification_events
    }

    pub fn sre_local(&self) -> u64 {
        self.sre_local
    }

    pub fn contagious_until(&self) -> Option<u32> {
        self.contagious_until
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn identity(&self) -> &EphemeralIdentity {
        &self.current
    }

    /// Rotates to `epoch`: closes every open encounter with the outgoing
    /// secret, erases it, draws a fresh identity and address, and purges
    /// entries older than the contagious window.
    pub fn on_epoch_start(
        &mut self,
        epoch: u64,
        now: u64,
        config: &ProtocolConfig,
    ) -> Result<Vec<FinalizedEncounter>, DeviceError> {
        if epoch <= self.current.epoch {
            return Err(DeviceError::StaleEpoch {
                current: self.current.epoch,
                requested: epoch,
            });
        }
        let peers: Vec<Ebid> = self.active.keys().copied().collect();
        let mut done = Vec::with_capacity(peers.len());
        for peer in peers {
            let enc = self.active[&peer];
            done.push(self.finalize_encounter(
                peer,
                enc.last_seen - enc.start,
                day_of(enc.start),
                FinalizeReason::EbidRotated,
                config,
            ));
        }
        self.current = gen_identity(self.params, &mut self.rng, epoch);
        self.rng.fill_bytes(&mut self.address);
        self.ble.expire(epoch);
        self.purge(day_of(now), config.ct_days);
        Ok(done)
    }

    fn purge(&mut self, today: u32, ct_days: u32) {
        let fresh = |day: u32| today.saturating_sub(day) <= ct_days;
        self.rtl.retain(|e| fresh(e.day));
        self.etl.retain(|e| fresh(e.record.day));
        self.daily_scores.retain(|d, _| fresh(*d));
    }

    /// A beacon from `peer` at `now`. Returns true if it opened a new
    /// encounter.
    pub fn on_observation(&mut self, peer: Ebid, now: u64) -> bool {
        if peer == self.current.ebid {
            return false;
        }
        match self.active.get_mut(&peer) {
            Some(enc) => {
                enc.last_seen = enc.last_seen.max(now);
                false
            }
            None => {
                self.active.insert(
                    peer,
                    ActiveEncounter {
                        start: now,
                        last_seen: now,
                    },
                );
                true
            }
        }
    }

    /// Feeds a raw advertising or scan-response payload.
    pub fn receive_payload(&mut self, from: DeviceAddress, payload: &[u8], now: u64) -> Result<Option<Ebid>, BleError> {
        let fragment = ble::parse_payload(payload)?;
        let ebid = self.ble.observe(from, fragment, self.current.epoch);
        if let Some(peer) = ebid {
            self.on_observation(peer, now);
        }
        Ok(ebid)
    }

    /// This epoch's advertising and scan-response payloads.
    pub fn beacon(&self) -> (DeviceAddress, [u8; ADV_LEN], [u8; SCAN_RSP_LEN]) {
        let (id_l, id_h) = ble::segment_ebid(self.current.ebid.as_bytes()).unwrap();
        (
            self.address,
            ble::build_adv(&id_l, PROTOCOL_VERSION, 0),
            ble::build_scan_rsp(&id_h),
        )
    }

    /// Closes encounters whose peer has been silent longer than the timeout.
    pub fn tick(&mut self, now: u64, config: &ProtocolConfig) -> Vec<FinalizedEncounter> {
        let lost: Vec<(Ebid, ActiveEncounter)> = self
            .active
            .iter()
            .filter(|(_, e)| now.saturating_sub(e.last_seen) > config.peer_loss_timeout_sec)
            .map(|(k, v)| (*k, *v))
            .collect();
        lost.into_iter()
            .map(|(peer, enc)| {
                self.finalize_encounter(
                    peer,
                    enc.last_seen - enc.start,
                    day_of(enc.start),
                    FinalizeReason::PeerLost,
                    config,
                )
            })
            .collect()
    }

    /// Earliest time at which [`tick`](Self::tick) would close something.
    pub fn next_deadline(&self, config: &ProtocolConfig) -> Option<u64> {
        self.active
            .values()
            .map(|e| e.last_seen + config.peer_loss_timeout_sec + 1)
            .min()
    }

    /// Turns one encounter into RTL/ETL entries and forgets the peer EBID.
    pub fn finalize_encounter(
        &mut self,
        peer: Ebid,
        duration_sec: u64,
        day: u32,
        reason: FinalizeReason,
        config: &ProtocolConfig,
    ) -> FinalizedEncounter {
        self.active.remove(&peer);
        let outcome = if duration_sec < config.min_encounter_sec {
            FinalizeOutcome::TooShort
        } else {
            match self.derive_roles(&peer) {
                Ok((rtl_pet, etl_pet)) => {
                    self.rtl.push(RtlEntry { pet: rtl_pet, day });
                    self.etl.push(EtlEntry {
                        record: EncounterRecord {
                            pet: etl_pet,
                            duration_sec: duration_sec.min(u32::MAX as u64) as u32,
                            day,
                        },
                        uploaded: false,
                    });
                    FinalizeOutcome::Stored { rtl_pet, etl_pet }
                }
                Err(e) => FinalizeOutcome::Rejected(e),
            }
        };
        FinalizedEncounter {
            peer,
            reason,
            duration_sec,
            day,
            outcome,
        }
    }

    fn derive_roles(&self, peer: &Ebid) -> Result<(PetToken, PetToken), CryptoError> {
        let shared = dh_shared(self.params, &self.current.secret, peer)?;
        let (p1, p2) = derive_pet_pair(&shared);
        assign_roles(&self.current.ebid, peer, p1, p2)
    }

    pub fn next_request_epoch(&self, config: &ProtocolConfig) -> u64 {
        self.sre_local + config.esr_min_epochs()
    }

    /// Exactly `padding_t` tokens: the most recent real ones, topped up with
    /// random bogus tokens, in shuffled order.
    pub fn build_esr_request(&mut self, epoch: u64, config: &ProtocolConfig) -> Result<EsrRequest, DeviceError> {
        let (id, ek) = match (&self.id, &self.ek) {
            (Some(id), Some(ek)) => (*id, ek.clone()),
            _ => return Err(DeviceError::NotRegistered),
        };
        let next = self.next_request_epoch(config);
        if epoch < next {
            return Err(DeviceError::NoRequestDue { next });
        }
        let real: Vec<PetToken> = self.rtl.iter().rev().take(config.padding_t).map(|e| e.pet).collect();
        Ok(EsrRequest {
            id,
            ek,
            tokens: self.pad_and_shuffle(real, config.padding_t),
        })
    }

    fn pad_and_shuffle(&mut self, mut tokens: Vec<PetToken>, size: usize) -> Vec<PetToken> {
        while tokens.len() < size {
            let mut bogus = [0u8; 32];
            self.rng.fill_bytes(&mut bogus);
            tokens.push(PetToken(bogus));
        }
        tokens.shuffle(&mut self.rng);
        tokens
    }

    /// Applies a status reply to a request sent in `request_epoch`.
    pub fn handle_esr_reply(&mut self, status: EsrStatus, request_epoch: u64) -> ReplyOutcome {
        match status {
            EsrStatus::AtRisk => {
                self.sre_local = request_epoch;
                let first = !self.notified;
                self.notified = true;
                if first {
                    self.notification_events += 1;
                }
                ReplyOutcome {
                    notify_user: first,
                    retry: false,
                }
            }
            EsrStatus::NotAtRisk => {
                self.sre_local = request_epoch;
                self.notified = false;
                ReplyOutcome::default()
            }
            EsrStatus::RateLimited | EsrStatus::AuthFailure => ReplyOutcome {
                notify_user: false,
                retry: true,
            },
        }
    }

    /// Stateless mode: one padded query per day of the window ending today.
    pub fn build_stateless_queries(&mut self, today: u32, config: &ProtocolConfig) -> Vec<(u32, Vec<PetToken>)> {
        let first = today.saturating_sub(config.ct_days - 1);
        (first..=today)
            .map(|day| {
                let real: Vec<PetToken> = self
                    .rtl
                    .iter()
                    .rev()
                    .filter(|e| e.day == day)
                    .take(config.padding_t)
                    .map(|e| e.pet)
                    .collect();
                (day, self.pad_and_shuffle(real, config.padding_t))
            })
            .collect()
    }

    pub fn record_daily_score(&mut self, day: u32, score: RiskScore) {
        *self.daily_scores.entry(day).or_default() += score.0;
    }

    pub fn daily_scores(&self) -> Vec<(u32, RiskScore)> {
        self.daily_scores.iter().map(|(d, s)| (*d, RiskScore(*s))).collect()
    }

    /// Global score from the stored daily scores in the window, and the
    /// local decision on it.
    pub fn stateless_assessment(&self, today: u32, ct_days: u32, engine: &RiskEngine) -> (RiskScore, bool) {
        let scores: Vec<RiskScore> = self
            .daily_scores
            .iter()
            .filter(|(d, _)| **d <= today && today - **d <= ct_days)
            .map(|(_, s)| RiskScore(*s))
            .collect();
        let global = engine.aggregate(&scores);
        (global, crate::risk::decide(global, engine.threshold))
    }

    /// Applies a locally computed stateless decision; true on the first
    /// transition to at-risk.
    pub fn apply_local_decision(&mut self, at_risk: bool) -> bool {
        let first = at_risk && !self.notified;
        if first {
            self.notification_events += 1;
        }
        self.notified = at_risk;
        first
    }

    pub fn diagnose(&mut self, today: u32, config: &ProtocolConfig) {
        self.contagious_until = Some(today + config.ct_days);
    }

    pub fn is_contagious(&self, today: u32) -> bool {
        self.contagious_until.is_some_and(|until| today <= until)
    }

    pub fn pending_uploads(&self) -> usize {
        self.etl.iter().filter(|e| !e.uploaded).count()
    }

    /// One message per not-yet-uploaded record, in random order, each with
    /// its own authorization token. No message names the device.
    pub fn build_upload_batch(&mut self, tokens: Vec<AuthToken>) -> Result<Vec<UploadMessage>, DeviceError> {
        let need = self.pending_uploads();
        if tokens.len() < need {
            return Err(DeviceError::NotEnoughTokens {
                have: tokens.len(),
                need,
            });
        }
        let mut batch: Vec<UploadMessage> = self
            .etl
            .iter_mut()
            .filter(|e| !e.uploaded)
            .zip(tokens)
            .map(|(e, token)| {
                e.uploaded = true;
                UploadMessage {
                    pet: e.record.pet,
                    day: e.record.day,
                    duration_sec: e.record.duration_sec,
                    token,
                }
            })
            .collect();
        batch.shuffle(&mut self.rng);
        Ok(batch)
    }

    /// Versioned binary checkpoint. Reassembly-cache contents are transient
    /// and not included.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.raw(DEVICE_MAGIC);
        w.u8(DEVICE_SNAPSHOT_VERSION);
        match self.params {
            GroupParams::Curve25519 => w.u8(0),
            GroupParams::ToyModP { p, g } => {
                w.u8(1);
                w.u32(p);
                w.u32(g);
            }
        }
        w.bool(self.id.is_some());
        w.u64(self.id.map_or(0, |i| i.0));
        w.bool(self.ek.is_some());
        w.raw(self.ek.as_ref().map_or(&[0u8; 32], |k| k.as_bytes()));
        w.u64(self.current.epoch);
        w.bytes(&self.current.secret.to_bytes());
        w.raw(&self.address);
        w.len(self.rtl.len());
        for e in &self.rtl {
            w.raw(e.pet.as_bytes());
            w.u32(e.day);
        }
        w.len(self.etl.len());
        for e in &self.etl {
            w.raw(e.record.pet.as_bytes());
            w.u32(e.record.duration_sec);
            w.u32(e.record.day);
            w.bool(e.uploaded);
        }
        w.len(self.active.len());
        for (peer, enc) in &self.active {
            w.raw(peer.as_bytes());
            w.u64(enc.start);
            w.u64(enc.last_seen);
        }
        w.bool(self.notified);
        w.u32(self.notification_events);
        w.u64(self.sre_local);
        w.bool(self.contagious_until.is_some());
        w.u32(self.contagious_until.unwrap_or(0));
        w.len(self.daily_scores.len());
        for (d, s) in &self.daily_scores {
            w.u32(*d);
            w.f64(*s);
        }
        w.raw(&self.rng.get_seed());
        w.u64(self.rng.get_stream());
        w.raw(&self.rng.get_word_pos().to_be_bytes());
        w.buf
    }

    pub fn restore(bytes: &[u8]) -> Result<Self, DeviceError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != DEVICE_MAGIC {
            return Err(WireError::BadField("device snapshot magic").into());
        }
        let version = r.u8()?;
        if version != DEVICE_SNAPSHOT_VERSION {
            return Err(WireError::BadVersion(version).into());
        }
        let params = match r.u8()? {
            0 => GroupParams::Curve25519,
            1 => GroupParams::ToyModP {
                p: r.u32()?,
                g: r.u32()?,
            },
            _ => return Err(WireError::BadField("group mode").into()),
        };
        let has_id = r.bool()?;
        let id = UserId(r.u64()?);
        let has_ek = r.bool()?;
        let ek = EntryKey::try_from_slice(r.take(32)?).unwrap();
        let epoch = r.u64()?;
        let secret_bytes = r.bytes()?;
        let secret = match params {
            GroupParams::Curve25519 => {
                let b: [u8; 32] = secret_bytes.try_into().map_err(|_| WireError::BadField("secret"))?;
                Secret::X25519(StaticSecret::from(b))
            }
            GroupParams::ToyModP { .. } => {
                let b: [u8; 4] = secret_bytes.try_into().map_err(|_| WireError::BadField("secret"))?;
                Secret::Toy(u32::from_be_bytes(b))
            }
        };
        let current = identity_from_secret(params, secret, epoch).map_err(|_| WireError::BadField("secret"))?;
        let address: DeviceAddress = r.take(6)?.try_into().unwrap();
        let pet = |r: &mut Reader| -> Result<PetToken, WireError> { Ok(PetToken(r.take(32)?.try_into().unwrap())) };
        let mut rtl = Vec::new();
        for _ in 0..r.len()? {
            rtl.push(RtlEntry {
                pet: pet(&mut r)?,
                day: r.u32()?,
            });
        }
        let mut etl = Vec::new();
        for _ in 0..r.len()? {
            let record = EncounterRecord {
                pet: pet(&mut r)?,
                duration_sec: r.u32()?,
                day: r.u32()?,
            };
            etl.push(EtlEntry {
                record,
                uploaded: r.bool()?,
            });
        }
        let mut active = BTreeMap::new();
        for _ in 0..r.len()? {
            let peer = Ebid(r.take(32)?.try_into().unwrap());
            active.insert(
                peer,
                ActiveEncounter {
                    start: r.u64()?,
                    last_seen: r.u64()?,
                },
            );
        }
        let notified = r.bool()?;
        let notification_events = r.u32()?;
        let sre_local = r.u64()?;
        let has_until = r.bool()?;
        let until = r.u32()?;
        let mut daily_scores = BTreeMap::new();
        for _ in 0..r.len()? {
            let d = r.u32()?;
            daily_scores.insert(d, r.f64()?);
        }
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_be_bytes(r.take(16)?.try_into().unwrap());
        r.finish()?;
        let mut rng = ChaCha20Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(DeviceState {
            params,
            id: has_id.then_some(id),
            ek: has_ek.then_some(ek),
            current,
            address,
            rtl,
            etl,
            active,
            notified,
            notification_events,
            sre_local,
            contagious_until: has_until.then_some(until),
            daily_scores,
            ble: ReassemblyCache::new(),
            rng,
        })
    }
}

const DEVICE_MAGIC: &[u8; 4] = b"EXDV";
const DEVICE_SNAPSHOT_VERSION: u8 = 1;

#[cfg(test)]
mod tests {
    use super::*;

    fn peer(seed: u8) -> Ebid {
        DeviceState::new(GroupParams::Curve25519, [seed; 32], 0).ebid()
    }

    #[test]
    fn observation_opens_then_extends() {
        let mut d = DeviceState::new(GroupParams::Curve25519, [1; 32], 0);
        let p = peer(2);
        assert!(d.on_observation(p, 100));
        assert!(!d.on_observation(p, 130));
        assert_eq!(
            d.active_encounters()[&p],
            ActiveEncounter {
                start: 100,
                last_seen: 130
            }
        );
        assert!(!d.on_observation(p, 120), "late beacons do not move last_seen back");
        assert_eq!(d.active_encounters()[&p].last_seen, 130);
    }

    #[test]
    fn stateless_queries_cover_the_window() {
        let mut d = DeviceState::new(GroupParams::Curve25519, [3; 32], 0);
        let cfg = ProtocolConfig {
            padding_t: 4,
            ..Default::default()
        };
        d.finalize_encounter(peer(4), 300, 20, FinalizeReason::PeerLost, &cfg);
        let q = d.build_stateless_queries(20, &cfg);
        assert_eq!(q.len(), 14);
        assert_eq!(q.first().unwrap().0, 7);
        assert_eq!(q.last().unwrap().0, 20);
        assert!(q.iter().all(|(_, t)| t.len() == 4));
        assert!(q.last().unwrap().1.contains(&d.rtl()[0].pet));
    }

    #[test]
    fn local_decision_counts_transitions() {
        let mut d = DeviceState::new(GroupParams::Curve25519, [5; 32], 0);
        assert!(d.apply_local_decision(true));
        assert!(!d.apply_local_decision(true));
        assert!(!d.apply_local_decision(false));
        assert!(d.apply_local_decision(true));
        assert_eq!(d.notification_events(), 2);
    }

    #[test]
    fn contagious_window() {
        let mut d = DeviceState::new(GroupParams::Curve25519, [6; 32], 0);
        assert!(!d.is_contagious(0));
        d.diagnose(5, &ProtocolConfig::default());
        assert!(d.is_contagious(19));
        assert!(!d.is_contagious(20));
    }
}
