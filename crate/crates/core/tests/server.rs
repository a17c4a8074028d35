use exposure_core::authority::{Credential, Issuer, KeyRing, TokenClass};
use exposure_core::crypto::{AuthToken, BlindRequest, EntryKey, PetToken};
use exposure_core::risk::RiskEngine;
use exposure_core::server::{parse_id_table, Server, ServerError};
use exposure_core::sim::audit::open_entry;
use exposure_core::wire::{self, AckStatus, EsrRequest, EsrStatus, Message, StatelessRequest, UploadMessage, UserId};
use exposure_core::ProtocolConfig;
use num_bigint::BigUint;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

struct Fixture {
    server: Server,
    rng: ChaCha20Rng,
    phones: u32,
}

/// Day 10, second epoch: far enough from zero that the first request is
/// never rate limited.
const DAY10: u64 = 10 * 96 + 1;

impl Fixture {
    fn new(threshold: f64) -> Self {
        Self::with(ProtocolConfig {
            risk_threshold_sec: threshold,
            ..Default::default()
        })
    }

    fn with(cfg: ProtocolConfig) -> Self {
        let issuer = Issuer::new(KeyRing::new([1; 32], 1024).unwrap(), cfg.ct_days, [2; 32]);
        let risk = RiskEngine::from_config(&Default::default(), cfg.ct_days, cfg.risk_threshold_sec, cfg.notify_p);
        Fixture {
            server: Server::new(cfg, risk, issuer, [3; 32]),
            rng: ChaCha20Rng::seed_from_u64(4),
            phones: 0,
        }
    }

    fn token(&mut self, class: TokenClass, cred: &Credential) -> AuthToken {
        let pk = self.server.issuer().public(class);
        let (req, blinded) = BlindRequest::new(&mut self.rng, &pk);
        let rep = self.server.issuer().issue(class, cred, &blinded).unwrap();
        req.finish(&rep).unwrap()
    }

    fn coded(&mut self, class: TokenClass) -> AuthToken {
        let code = self.server.issuer().authorize(class, 1);
        self.token(class, &Credential::Code(code))
    }

    fn registration(&mut self) -> AuthToken {
        self.phones += 1;
        self.token(
            TokenClass::Registration,
            &Credential::Phone(format!("+33{}", self.phones)),
        )
    }

    fn register(&mut self) -> (UserId, EntryKey) {
        let t = self.registration();
        self.server.register(&t).unwrap()
    }

    fn pet(&mut self) -> PetToken {
        let mut b = [0u8; 32];
        self.rng.fill_bytes(&mut b);
        PetToken(b)
    }

    fn upload(&mut self, pet: PetToken, day: u32, duration_sec: u32) {
        let token = self.coded(TokenClass::Diagnosis);
        self.server
            .handle_upload(&UploadMessage {
                pet,
                day,
                duration_sec,
                token,
            })
            .unwrap();
    }

    fn esr(&mut self, id: UserId, ek: &EntryKey, epoch: u64, tokens: Vec<PetToken>) -> EsrStatus {
        self.server
            .handle_esr(
                EsrRequest {
                    id,
                    ek: ek.clone(),
                    tokens,
                },
                epoch,
            )
            .unwrap()
    }
}

#[test]
fn registration_creates_sealed_entry() {
    let mut f = Fixture::new(900.0);
    let (id, ek) = f.register();
    let fields = open_entry(&f.server, id, &ek).unwrap();
    assert!(!fields.un);
    assert_eq!(fields.sre, 0);
    assert!(fields.lepm.is_empty());
    assert_eq!(fields.ers, 0.0);
    let other = EntryKey::generate(&mut f.rng);
    assert!(open_entry(&f.server, id, &other).is_none());
    assert_eq!(f.server.key_audit().live(), 0);
}

#[test]
fn registration_tokens_are_single_use_and_verified() {
    let mut f = Fixture::new(900.0);
    let t = f.registration();
    f.server.register(&t).unwrap();
    assert_eq!(f.server.register(&t), Err(ServerError::TokenReused));

    let mut forged = f.registration();
    forged.sigma += BigUint::from(1u8);
    assert_eq!(f.server.register(&forged), Err(ServerError::InvalidToken));

    // A token of another class does not verify under the registration key.
    let diag = f.coded(TokenClass::Diagnosis);
    assert_eq!(f.server.register(&diag), Err(ServerError::InvalidToken));
}

#[test]
fn ids_are_distinct() {
    let mut f = Fixture::new(900.0);
    let ids: std::collections::BTreeSet<_> = (0..50).map(|_| f.register().0).collect();
    assert_eq!(ids.len(), 50);
}

#[test]
fn uploads_are_independent_tuples() {
    let mut f = Fixture::new(900.0);
    for _ in 0..3 {
        let p = f.pet();
        f.upload(p, 3, 300);
    }
    assert_eq!(f.server.elist_len(), 3);
    let token = f.coded(TokenClass::Diagnosis);
    let msg = UploadMessage {
        pet: f.pet(),
        day: 3,
        duration_sec: 300,
        token,
    };
    f.server.handle_upload(&msg).unwrap();
    assert_eq!(f.server.handle_upload(&msg), Err(ServerError::TokenReused));
}

#[test]
fn garbage_collection_drops_old_tuples() {
    let mut f = Fixture::new(900.0);
    let old = f.pet();
    f.upload(old, 0, 300);
    f.server.collect_garbage(15);
    assert!(f.server.contains_exposed(&old));
    f.server.collect_garbage(16);
    assert!(!f.server.contains_exposed(&old));
}

#[test]
fn esr_pipeline_accumulates_and_notifies() {
    let mut f = Fixture::new(900.0);
    let (id, ek) = f.register();
    let x = f.pet();
    f.upload(x, 10, 600);
    let pad = f.pet();

    assert_eq!(f.esr(id, &ek, DAY10, vec![pad, x]), EsrStatus::NotAtRisk);
    assert!(!f.server.contains_exposed(&x));
    let fields = open_entry(&f.server, id, &ek).unwrap();
    assert_eq!(fields.exposures().len(), 1);
    assert_eq!(
        (fields.lepm[0].exposure.day, fields.lepm[0].exposure.duration_sec),
        (10, 600)
    );
    assert_eq!(fields.ers, 600.0);
    assert_eq!(fields.sre, DAY10);

    let y = f.pet();
    f.upload(y, 10, 400);
    assert_eq!(f.esr(id, &ek, DAY10 + 1, vec![y]), EsrStatus::RateLimited);
    assert!(f.server.contains_exposed(&y), "rate-limited request must not match");

    assert_eq!(f.esr(id, &ek, DAY10 + 24, vec![y]), EsrStatus::AtRisk);
    let fields = open_entry(&f.server, id, &ek).unwrap();
    assert!(fields.un);
    assert_eq!(fields.ers, 1000.0);
    assert_eq!(f.server.key_audit().live(), 0);
}

#[test]
fn notification_is_sticky_until_negative_test() {
    let mut f = Fixture::new(100.0);
    let (id, ek) = f.register();
    let x = f.pet();
    f.upload(x, 10, 600);
    assert_eq!(f.esr(id, &ek, DAY10, vec![x]), EsrStatus::AtRisk);

    let z = f.pet();
    f.upload(z, 10, 50);
    assert_eq!(f.esr(id, &ek, DAY10 + 24, vec![z]), EsrStatus::AtRisk);
    assert!(f.server.contains_exposed(&z), "sticky reply skips matching");

    let token = f.coded(TokenClass::TestResult);
    f.server.mark_tested(id, ek.clone(), false, &token).unwrap();
    assert_eq!(f.esr(id, &ek, DAY10 + 48, vec![z]), EsrStatus::NotAtRisk);
    assert!(!f.server.contains_exposed(&z));
}

#[test]
fn notification_resets_after_reset_days() {
    let mut f = Fixture::new(100.0);
    let (id, ek) = f.register();
    let x = f.pet();
    f.upload(x, 10, 600);
    assert_eq!(f.esr(id, &ek, DAY10, vec![x]), EsrStatus::AtRisk);
    let three_days = 3 * 96;
    assert_eq!(f.esr(id, &ek, DAY10 + three_days - 24, vec![]), EsrStatus::AtRisk);
    assert_eq!(f.esr(id, &ek, DAY10 + three_days, vec![]), EsrStatus::NotAtRisk);
}

#[test]
fn esr_errors() {
    let mut f = Fixture::new(900.0);
    let (id, ek) = f.register();
    let wrong = EntryKey::generate(&mut f.rng);
    let req = |id, ek: &EntryKey| EsrRequest {
        id,
        ek: ek.clone(),
        tokens: vec![],
    };
    assert_eq!(
        f.server.handle_esr(req(id, &wrong), DAY10),
        Err(ServerError::AuthFailure)
    );
    assert_eq!(
        f.server.handle_esr(req(UserId(id.0 ^ 1), &ek), DAY10),
        Err(ServerError::UnknownId)
    );
    assert_eq!(f.server.key_audit().live(), 0);
    assert!(f.server.key_audit().total_leased() >= 3);
}

#[test]
fn test_result_requires_its_own_token_class() {
    let mut f = Fixture::new(900.0);
    let (id, ek) = f.register();
    let diag = f.coded(TokenClass::Diagnosis);
    assert_eq!(
        f.server.mark_tested(id, ek.clone(), false, &diag),
        Err(ServerError::InvalidToken)
    );
    let t = f.coded(TokenClass::TestResult);
    assert_eq!(
        f.server.mark_tested(UserId(id.0 ^ 1), ek, true, &t),
        Err(ServerError::UnknownId)
    );
}

#[test]
fn stateless_queries() {
    let mut f = Fixture::new(900.0);
    let today = 10;
    let epoch = today as u64 * 96 + 5;
    let phone = Credential::Phone("+331".into());
    let x = f.pet();
    f.upload(x, 9, 500);

    let token = f.token(TokenClass::Day(today), &phone);
    let empty = StatelessRequest {
        day: today,
        token,
        tokens: vec![],
    };
    assert_eq!(f.server.handle_esr_stateless(&empty, epoch).unwrap().0, 0.0);
    assert_eq!(
        f.server.handle_esr_stateless(&empty, epoch),
        Err(ServerError::TokenReused)
    );

    let token = f.token(TokenClass::Day(today), &phone);
    let req = StatelessRequest {
        day: today,
        token,
        tokens: vec![x],
    };
    assert_eq!(f.server.handle_esr_stateless(&req, epoch).unwrap().0, 500.0);
    assert!(!f.server.contains_exposed(&x));
    assert_eq!(f.server.user_count(), 0);

    let token = f.token(TokenClass::Day(today), &phone);
    let stale = StatelessRequest {
        day: today,
        token,
        tokens: vec![],
    };
    assert_eq!(
        f.server.handle_esr_stateless(&stale, epoch + 96),
        Err(ServerError::InvalidToken)
    );
}

#[test]
fn id_table_dump_is_ciphertext_only() {
    let mut f = Fixture::new(100.0);
    let (id, ek) = f.register();
    let x = f.pet();
    f.upload(x, 10, 777);
    f.esr(id, &ek, DAY10, vec![x]);
    let dump = f.server.id_table_snapshot();
    let table = parse_id_table(&dump).unwrap();
    assert_eq!(table.len(), 1);
    let plain = open_entry(&f.server, id, &ek).unwrap().encode();
    assert!(!dump.windows(plain.len()).any(|w| w == plain.as_slice()));
    let marker = [10u32.to_be_bytes(), 777u32.to_be_bytes()].concat();
    assert!(!dump.windows(8).any(|w| w == marker.as_slice()));
}

#[test]
fn snapshot_restores_state() {
    let mut f = Fixture::new(900.0);
    let (id, ek) = f.register();
    let x = f.pet();
    let y = f.pet();
    f.upload(x, 10, 600);
    f.upload(y, 10, 60);
    f.esr(id, &ek, DAY10, vec![x]);
    let snap = f.server.snapshot();

    let mut g = Fixture::new(900.0);
    g.server.restore(&snap).unwrap();
    assert_eq!(g.server.snapshot(), snap);
    assert_eq!(g.server.elist_len(), 1);
    assert!(g.server.contains_exposed(&y));
    assert_eq!(open_entry(&g.server, id, &ek).unwrap().ers, 600.0);
    // The spent-token ledger survives too.
    assert_eq!(g.server.ledger().len(), f.server.ledger().len());
    assert!(g.server.restore(&snap[..snap.len() - 1]).is_err());
}

#[test]
fn wire_dispatch() {
    let mut f = Fixture::new(900.0);
    let token = f.registration();
    let reply = wire::decode(&f.server.handle_message(&wire::encode(&Message::Register { token }), 0)).unwrap();
    let Message::RegisterOk { id, ek } = reply else {
        panic!("{reply:?}")
    };
    let esr = Message::EsrReq(EsrRequest { id, ek, tokens: vec![] });
    let reply = wire::decode(&f.server.handle_message(&wire::encode(&esr), DAY10 * 900)).unwrap();
    assert_eq!(
        reply,
        Message::EsrRep {
            status: EsrStatus::NotAtRisk
        }
    );
    let reply = wire::decode(&f.server.handle_message(&[0xff, 0x01], 0)).unwrap();
    assert_eq!(
        reply,
        Message::Error {
            status: AckStatus::Malformed
        }
    );
}
