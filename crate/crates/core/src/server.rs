//! Back-end server: registration, the exposed-token list, exposure-status
//! requests, notified-user management and the stateless matching mode.
//!
//! IDTable entries are stored as ciphertext under the user's entry key. The
//! key arrives with each request and is dropped before the call returns; a
//! [`KeyAudit`] counts every copy the server holds so tests can check that
//! none survives.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::authority::{Issuer, TokenClass};
use crate::config::ProtocolConfig;
use crate::crypto::blind::{verify_token, Seed};
use crate::crypto::{decrypt_entry, encrypt_entry, AuthToken, EntryKey, PetToken};
use crate::risk::{Exposure, RiskEngine, RiskScore};
use crate::time::SECONDS_PER_DAY;
use crate::wire::{
    self, AckStatus, EsrRequest, EsrStatus, Message, Reader, StatelessRequest, UploadMessage, UserId, WireError, Writer,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServerError {
    #[error("authorization token does not verify")]
    InvalidToken,
    #[error("authorization token already spent")]
    TokenReused,
    #[error("unknown identifier")]
    UnknownId,
    #[error("entry key does not open the entry")]
    AuthFailure,
    #[error("request arrives before the minimum interval")]
    RateLimited,
    #[error("malformed message: {0}")]
    Malformed(#[from] WireError),
}

impl ServerError {
    pub fn ack(&self) -> AckStatus {
        match self {
            ServerError::InvalidToken => AckStatus::InvalidToken,
            ServerError::TokenReused => AckStatus::TokenReused,
            ServerError::UnknownId => AckStatus::UnknownId,
            ServerError::AuthFailure | ServerError::RateLimited => AckStatus::AuthFailure,
            ServerError::Malformed(_) => AckStatus::Malformed,
        }
    }
}

/// One matched exposure kept in the user's entry. `acknowledged` entries
/// were present at the last reset and no longer drive the decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LepmEntry {
    pub exposure: Exposure,
    pub acknowledged: bool,
}

/// Plaintext view of an IDTable entry. Only ever materialized while the
/// matching entry key is leased.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EntryFields {
    pub un: bool,
    pub sre: u64,
    pub lepm: Vec<LepmEntry>,
    pub ers: f64,
    /// Epoch at which `un` was last set.
    pub notified_at: u64,
}

impl EntryFields {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bool(self.un);
        w.u64(self.sre);
        w.len(self.lepm.len());
        for e in &self.lepm {
            w.u32(e.exposure.day);
            w.u32(e.exposure.duration_sec);
            w.bool(e.acknowledged);
        }
        w.f64(self.ers);
        w.u64(self.notified_at);
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader::new(bytes);
        let un = r.bool()?;
        let sre = r.u64()?;
        let n = r.len()?;
        let mut lepm = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            lepm.push(LepmEntry {
                exposure: Exposure {
                    day: r.u32()?,
                    duration_sec: r.u32()?,
                },
                acknowledged: r.bool()?,
            });
        }
        let fields = EntryFields {
            un,
            sre,
            lepm,
            ers: r.f64()?,
            notified_at: r.u64()?,
        };
        r.finish()?;
        Ok(fields)
    }

    fn acknowledge(&mut self) {
        self.un = false;
        for e in &mut self.lepm {
            e.acknowledged = true;
        }
    }

    pub fn exposures(&self) -> Vec<Exposure> {
        self.lepm.iter().map(|e| e.exposure).collect()
    }
}

pub fn entry_aad(id: UserId) -> [u8; 8] {
    id.0.to_be_bytes()
}

/// Counts entry-key copies currently held by the server.
#[derive(Clone, Debug, Default)]
pub struct KeyAudit {
    live: Arc<AtomicUsize>,
    leased: Arc<AtomicUsize>,
}

impl KeyAudit {
    fn lease(&self, key: EntryKey) -> KeyLease {
        self.live.fetch_add(1, Ordering::SeqCst);
        self.leased.fetch_add(1, Ordering::SeqCst);
        KeyLease {
            key,
            live: self.live.clone(),
        }
    }

    pub fn live(&self) -> usize {
        self.live.load(Ordering::SeqCst)
    }

    pub fn total_leased(&self) -> usize {
        self.leased.load(Ordering::SeqCst)
    }
}

struct KeyLease {
    key: EntryKey,
    live: Arc<AtomicUsize>,
}

impl Drop for KeyLease {
    fn drop(&mut self) {
        self.live.fetch_sub(1, Ordering::SeqCst);
    }
}

/// Spent token seeds, partitioned by token class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpentTokenLedger {
    spent: BTreeMap<TokenClass, BTreeSet<Seed>>,
}

impl SpentTokenLedger {
    pub fn contains(&self, seed: &Seed) -> bool {
        self.spent.values().any(|s| s.contains(seed))
    }

    /// Inserts unless present anywhere; returns whether it was inserted.
    pub fn insert(&mut self, class: TokenClass, seed: Seed) -> bool {
        if self.contains(&seed) {
            return false;
        }
        self.spent.entry(class).or_default().insert(seed)
    }

    pub fn len(&self) -> usize {
        self.spent.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops day partitions before `day`; those keys no longer verify.
    pub fn prune_days(&mut self, day: u32) {
        self.spent.retain(|c, _| !matches!(c, TokenClass::Day(d) if *d < day));
    }
}

/// What the server itself observed. No entry carries a network source.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ServerTranscript {
    pub requests: Vec<ObservedRequest>,
    pub uploads: Vec<PetToken>,
    pub matches: Vec<PetToken>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservedRequest {
    /// `None` for stateless queries.
    pub id: Option<UserId>,
    pub epoch: u64,
    pub tokens: Vec<PetToken>,
    pub matched: usize,
}

#[derive(Debug)]
pub struct Server {
    config: ProtocolConfig,
    risk: RiskEngine,
    issuer: Issuer,
    id_table: BTreeMap<UserId, Vec<u8>>,
    elist: BTreeMap<PetToken, Vec<Exposure>>,
    ledger: SpentTokenLedger,
    rng: ChaCha20Rng,
    audit: KeyAudit,
    transcript: ServerTranscript,
}

impl Server {
    pub fn new(config: ProtocolConfig, risk: RiskEngine, issuer: Issuer, seed: [u8; 32]) -> Self {
        Server {
            config,
            risk,
            issuer,
            id_table: BTreeMap::new(),
            elist: BTreeMap::new(),
            ledger: SpentTokenLedger::default(),
            rng: ChaCha20Rng::from_seed(seed),
            audit: KeyAudit::default(),
            transcript: ServerTranscript::default(),
        }
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn risk(&self) -> &RiskEngine {
        &self.risk
    }

    pub fn risk_mut(&mut self) -> &mut RiskEngine {
        &mut self.risk
    }

    pub fn issuer(&mut self) -> &mut Issuer {
        &mut self.issuer
    }

    pub fn key_audit(&self) -> &KeyAudit {
        &self.audit
    }

    pub fn transcript(&self) -> &ServerTranscript {
        &self.transcript
    }

    pub fn ledger(&self) -> &SpentTokenLedger {
        &self.ledger
    }

    pub fn elist_len(&self) -> usize {
        self.elist.values().map(Vec::len).sum()
    }

    pub fn contains_exposed(&self, pet: &PetToken) -> bool {
        self.elist.contains_key(pet)
    }

    pub fn user_count(&self) -> usize {
        self.id_table.len()
    }

    pub fn entry_ciphertext(&self, id: UserId) -> Option<&[u8]> {
        self.id_table.get(&id).map(Vec::as_slice)
    }

    fn day_of_epoch(&self, epoch: u64) -> u32 {
        (epoch * self.config.epoch_duration_sec / SECONDS_PER_DAY) as u32
    }

    fn accept_token(&mut self, class: TokenClass, token: &AuthToken) -> Result<(), ServerError> {
        if !verify_token(token, &self.issuer.public(class)) {
            return Err(ServerError::InvalidToken);
        }
        if !self.ledger.insert(class, token.seed) {
            return Err(ServerError::TokenReused);
        }
        Ok(())
    }

    fn open(&self, id: UserId, lease: &KeyLease) -> Result<EntryFields, ServerError> {
        let blob = self.id_table.get(&id).ok_or(ServerError::UnknownId)?;
        let plain = decrypt_entry(&lease.key, &entry_aad(id), blob).map_err(|_| ServerError::AuthFailure)?;
        EntryFields::decode(&plain).map_err(|_| ServerError::AuthFailure)
    }

    fn seal(&mut self, id: UserId, lease: &KeyLease, fields: &EntryFields) {
        let blob = encrypt_entry(&lease.key, &entry_aad(id), &fields.encode(), &mut self.rng);
        self.id_table.insert(id, blob);
    }

    /// Creates an entry and hands back its identifier and entry key. The
    /// server keeps only the ciphertext.
    pub fn register(&mut self, token: &AuthToken) -> Result<(UserId, EntryKey), ServerError> {
        self.accept_token(TokenClass::Registration, token)?;
        let id = loop {
            let candidate = UserId(self.rng.gen());
            if !self.id_table.contains_key(&candidate) {
                break candidate;
            }
        };
        let lease = self.audit.lease(EntryKey::generate(&mut self.rng));
        self.seal(id, &lease, &EntryFields::default());
        Ok((id, lease.key.clone()))
    }

    pub fn handle_upload(&mut self, msg: &UploadMessage) -> Result<(), ServerError> {
        self.accept_token(TokenClass::Diagnosis, &msg.token)?;
        self.elist.entry(msg.pet).or_default().push(Exposure {
            day: msg.day,
            duration_sec: msg.duration_sec,
        });
        self.transcript.uploads.push(msg.pet);
        Ok(())
    }

    fn match_and_remove(&mut self, tokens: &[PetToken]) -> Vec<Exposure> {
        let mut out = Vec::new();
        for t in tokens {
            if let Some(found) = self.elist.remove(t) {
                self.transcript.matches.extend(std::iter::repeat_n(*t, found.len()));
                out.extend(found);
            }
        }
        out
    }

    /// The exposure-status pipeline. `Err` covers unknown ids and keys that
    /// fail to open the entry; rate limiting is a normal reply.
    pub fn handle_esr(&mut self, req: EsrRequest, epoch_now: u64) -> Result<EsrStatus, ServerError> {
        let EsrRequest { id, ek, tokens } = req;
        let lease = self.audit.lease(ek);
        let mut fields = self.open(id, &lease)?;
        self.transcript.requests.push(ObservedRequest {
            id: Some(id),
            epoch: epoch_now,
            tokens: tokens.clone(),
            matched: 0,
        });

        if epoch_now.saturating_sub(fields.sre) < self.config.esr_min_epochs() {
            self.seal(id, &lease, &fields);
            return Ok(EsrStatus::RateLimited);
        }

        let reset_after = self.config.reset_days as u64 * self.config.epochs_per_day();
        if fields.un && epoch_now.saturating_sub(fields.notified_at) >= reset_after {
            fields.acknowledge();
        }
        if fields.un {
            self.seal(id, &lease, &fields);
            return Ok(EsrStatus::AtRisk);
        }

        let matched = self.match_and_remove(&tokens);
        if let Some(last) = self.transcript.requests.last_mut() {
            last.matched = matched.len();
        }
        fields.lepm.extend(matched.into_iter().map(|exposure| LepmEntry {
            exposure,
            acknowledged: false,
        }));

        let today = self.day_of_epoch(epoch_now);
        fields.ers = self.risk.score(&fields.exposures(), today).0;
        fields.sre = epoch_now;
        let fresh: Vec<Exposure> = fields
            .lepm
            .iter()
            .filter(|e| !e.acknowledged)
            .map(|e| e.exposure)
            .collect();
        let decision = self.risk.decide(self.risk.score(&fresh, today), fresh.len());
        let notify = self.risk.notify(decision, &mut self.rng);
        if notify {
            fields.un = true;
            fields.notified_at = epoch_now;
        }
        self.seal(id, &lease, &fields);
        Ok(if notify {
            EsrStatus::AtRisk
        } else {
            EsrStatus::NotAtRisk
        })
    }

    /// A test report. Negative clears the notified flag; positive changes
    /// nothing here, since uploads travel separately and unlinked.
    pub fn mark_tested(
        &mut self,
        id: UserId,
        ek: EntryKey,
        positive: bool,
        token: &AuthToken,
    ) -> Result<(), ServerError> {
        self.accept_token(TokenClass::TestResult, token)?;
        let lease = self.audit.lease(ek);
        let mut fields = self.open(id, &lease)?;
        if !positive {
            fields.acknowledge();
        }
        self.seal(id, &lease, &fields);
        Ok(())
    }

    /// Stateless matching: a day-scoped token buys one query, answered with
    /// that query's own score.
    pub fn handle_esr_stateless(&mut self, req: &StatelessRequest, epoch_now: u64) -> Result<RiskScore, ServerError> {
        let today = self.day_of_epoch(epoch_now);
        if req.day != today {
            return Err(ServerError::InvalidToken);
        }
        self.accept_token(TokenClass::Day(req.day), &req.token)?;
        let matched = self.match_and_remove(&req.tokens);
        self.transcript.requests.push(ObservedRequest {
            id: None,
            epoch: epoch_now,
            tokens: req.tokens.clone(),
            matched: matched.len(),
        });
        Ok(self.risk.score(&matched, today))
    }

    /// Nightly sweep: drops tuples more than `ct_days + 1` days old and
    /// spent day tokens that can no longer verify.
    pub fn collect_garbage(&mut self, today: u32) {
        let horizon = self.config.ct_days + 1;
        self.elist.retain(|_, tuples| {
            tuples.retain(|e| today.saturating_sub(e.day) <= horizon);
            !tuples.is_empty()
        });
        self.ledger.prune_days(today);
    }

    /// Decodes a request, runs it and encodes the reply.
    pub fn handle_message(&mut self, bytes: &[u8], now_sec: u64) -> Vec<u8> {
        let epoch = now_sec / self.config.epoch_duration_sec;
        let reply = match wire::decode(bytes) {
            Err(_) => Message::Error {
                status: AckStatus::Malformed,
            },
            Ok(Message::Register { token }) => match self.register(&token) {
                Ok((id, ek)) => Message::RegisterOk { id, ek },
                Err(e) => Message::Error { status: e.ack() },
            },
            Ok(Message::Upload(up)) => Message::UploadAck {
                status: self.handle_upload(&up).err().map_or(AckStatus::Ok, |e| e.ack()),
            },
            Ok(Message::EsrReq(req)) => Message::EsrRep {
                status: self.handle_esr(req, epoch).unwrap_or(EsrStatus::AuthFailure),
            },
            Ok(Message::TestResult {
                id,
                ek,
                positive,
                token,
            }) => Message::UploadAck {
                status: self
                    .mark_tested(id, ek, positive, &token)
                    .err()
                    .map_or(AckStatus::Ok, |e| e.ack()),
            },
            Ok(Message::StatelessEsr(req)) => match self.handle_esr_stateless(&req, epoch) {
                Ok(score) => Message::StatelessRep {
                    status: AckStatus::Ok,
                    score,
                },
                Err(e) => Message::StatelessRep {
                    status: e.ack(),
                    score: RiskScore(0.0),
                },
            },
            Ok(_) => Message::Error {
                status: AckStatus::Malformed,
            },
        };
        wire::encode(&reply)
    }

    /// IDTable dump as stored: identifiers and ciphertext only.
    pub fn id_table_snapshot(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.raw(ID_TABLE_MAGIC);
        w.u8(SNAPSHOT_VERSION);
        w.len(self.id_table.len());
        for (id, blob) in &self.id_table {
            w.u64(id.0);
            w.bytes(blob);
        }
        w.buf
    }

    /// Full persistent state: IDTable, EList and the spent-token ledger.
    /// Signing keys are not part of the snapshot.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.raw(SERVER_MAGIC);
        w.u8(SNAPSHOT_VERSION);
        let table = self.id_table_snapshot();
        w.bytes(&table);
        w.len(self.elist.len());
        for (pet, tuples) in &self.elist {
            w.raw(pet.as_bytes());
            w.len(tuples.len());
            for t in tuples {
                w.u32(t.day);
                w.u32(t.duration_sec);
            }
        }
        w.len(self.ledger.spent.len());
        for (class, seeds) in &self.ledger.spent {
            match class {
                TokenClass::Registration => w.u8(0),
                TokenClass::Diagnosis => w.u8(1),
                TokenClass::TestResult => w.u8(2),
                TokenClass::Day(d) => {
                    w.u8(3);
                    w.u32(*d);
                }
            }
            w.len(seeds.len());
            for s in seeds {
                w.raw(s);
            }
        }
        w.buf
    }

    /// Replaces the persistent state with a snapshot.
    pub fn restore(&mut self, bytes: &[u8]) -> Result<(), WireError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != SERVER_MAGIC {
            return Err(WireError::BadField("server snapshot magic"));
        }
        let v = r.u8()?;
        if v != SNAPSHOT_VERSION {
            return Err(WireError::BadVersion(v));
        }
        let id_table = parse_id_table(r.bytes()?)?;
        let mut elist = BTreeMap::new();
        for _ in 0..r.len()? {
            let pet = PetToken(r.take(32)?.try_into().unwrap());
            let n = r.len()?;
            let tuples = (0..n)
                .map(|_| {
                    Ok(Exposure {
                        day: r.u32()?,
                        duration_sec: r.u32()?,
                    })
                })
                .collect::<Result<Vec<_>, WireError>>()?;
            elist.insert(pet, tuples);
        }
        let mut ledger = SpentTokenLedger::default();
        for _ in 0..r.len()? {
            let class = match r.u8()? {
                0 => TokenClass::Registration,
                1 => TokenClass::Diagnosis,
                2 => TokenClass::TestResult,
                3 => TokenClass::Day(r.u32()?),
                _ => return Err(WireError::BadField("token class")),
            };
            let set = ledger.spent.entry(class).or_default();
            for _ in 0..r.len()? {
                set.insert(r.take(32)?.try_into().unwrap());
            }
        }
        r.finish()?;
        self.id_table = id_table;
        self.elist = elist;
        self.ledger = ledger;
        Ok(())
    }
}

const SERVER_MAGIC: &[u8; 4] = b"EXSV";
const ID_TABLE_MAGIC: &[u8; 4] = b"EXIT";
const SNAPSHOT_VERSION: u8 = 1;

/// Parses an [`Server::id_table_snapshot`] dump.
pub fn parse_id_table(bytes: &[u8]) -> Result<BTreeMap<UserId, Vec<u8>>, WireError> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != ID_TABLE_MAGIC {
        return Err(WireError::BadField("IDTable snapshot magic"));
    }
    let v = r.u8()?;
    if v != SNAPSHOT_VERSION {
        return Err(WireError::BadVersion(v));
    }
    let mut out = BTreeMap::new();
    for _ in 0..r.len()? {
        let id = UserId(r.u64()?);
        out.insert(id, r.bytes()?.to_vec());
    }
    r.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::authority::KeyRing;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn entry_fields_round_trip() {
        let f = EntryFields {
            un: true,
            sre: 77,
            lepm: vec![
                LepmEntry {
                    exposure: Exposure {
                        day: 3,
                        duration_sec: 600,
                    },
                    acknowledged: true,
                },
                LepmEntry {
                    exposure: Exposure {
                        day: 4,
                        duration_sec: 120,
                    },
                    acknowledged: false,
                },
            ],
            ers: 720.0,
            notified_at: 70,
        };
        assert_eq!(EntryFields::decode(&f.encode()).unwrap(), f);
        assert!(EntryFields::decode(&f.encode()[1..]).is_err());
    }

    #[test]
    fn acknowledge_clears_flag_and_marks_entries() {
        let mut f = EntryFields {
            un: true,
            lepm: vec![LepmEntry {
                exposure: Exposure {
                    day: 1,
                    duration_sec: 300,
                },
                acknowledged: false,
            }],
            ..Default::default()
        };
        f.acknowledge();
        assert!(!f.un);
        assert!(f.lepm[0].acknowledged);
        assert_eq!(f.exposures().len(), 1);
    }

    #[test]
    fn key_leases_are_counted() {
        let audit = KeyAudit::default();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        {
            let _a = audit.lease(EntryKey::generate(&mut rng));
            let _b = audit.lease(EntryKey::generate(&mut rng));
            assert_eq!(audit.live(), 2);
        }
        assert_eq!(audit.live(), 0);
        assert_eq!(audit.total_leased(), 2);
    }

    #[test]
    fn ledger_rejects_repeats_and_prunes_days() {
        let mut l = SpentTokenLedger::default();
        assert!(l.insert(TokenClass::Day(3), [1; 32]));
        assert!(!l.insert(TokenClass::Day(3), [1; 32]));
        assert!(
            !l.insert(TokenClass::Diagnosis, [1; 32]),
            "seeds are global across classes"
        );
        assert!(l.insert(TokenClass::Diagnosis, [2; 32]));
        l.prune_days(4);
        assert!(!l.contains(&[1; 32]));
        assert!(l.contains(&[2; 32]));
    }

    #[test]
    fn empty_request_list_scores_zero() {
        let cfg = ProtocolConfig::default();
        let issuer = Issuer::new(KeyRing::new([1; 32], 1024).unwrap(), 14, [2; 32]);
        let risk = RiskEngine::from_config(&Default::default(), 14, 900.0, 0.0);
        let mut s = Server::new(cfg, risk, issuer, [3; 32]);
        assert!(s.match_and_remove(&[]).is_empty());
        assert_eq!(s.elist_len(), 0);
    }
}
