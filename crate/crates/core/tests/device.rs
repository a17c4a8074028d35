use std::collections::{BTreeMap, BTreeSet};

use exposure_core::crypto::group::identity_from_secret;
use exposure_core::crypto::{gen_identity, AuthToken, Ebid, EntryKey, GroupParams, PetToken, Secret};
use exposure_core::device::{DeviceError, DeviceState, FinalizeOutcome, FinalizeReason};
use exposure_core::wire::{EsrStatus, UserId};
use exposure_core::ProtocolConfig;
use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn cfg() -> ProtocolConfig {
    ProtocolConfig::default()
}

fn device(seed: u8) -> DeviceState {
    DeviceState::new(GroupParams::Curve25519, [seed; 32], 0)
}

fn registered(seed: u8, padding: usize) -> (DeviceState, ProtocolConfig) {
    let mut d = device(seed);
    d.set_registration(UserId(seed as u64), EntryKey::from_bytes([seed; 32]));
    (
        d,
        ProtocolConfig {
            padding_t: padding,
            ..cfg()
        },
    )
}

fn random_peer(rng: &mut ChaCha20Rng) -> Ebid {
    gen_identity(GroupParams::Curve25519, rng, 0).ebid
}

fn dummy_tokens(n: usize) -> Vec<AuthToken> {
    (0..n)
        .map(|i| AuthToken {
            seed: [i as u8; 32],
            sigma: BigUint::from(1u8),
        })
        .collect()
}

/// Adds `n` stored encounters with random peers, on `day`.
fn add_encounters(d: &mut DeviceState, n: usize, day: u32, rng: &mut ChaCha20Rng) {
    for i in 0..n {
        let peer = random_peer(rng);
        let f = d.finalize_encounter(peer, 200 + i as u64, day, FinalizeReason::PeerLost, &cfg());
        assert!(matches!(f.outcome, FinalizeOutcome::Stored { .. }));
    }
}

#[test]
fn toy_group_encounter_gives_complementary_lists() {
    let g = GroupParams::TOY;
    let mut a = DeviceState::new(g, [1; 32], 0).with_identity(identity_from_secret(g, Secret::Toy(4), 0).unwrap());
    let mut b = DeviceState::new(g, [2; 32], 0).with_identity(identity_from_secret(g, Secret::Toy(3), 0).unwrap());
    let (ea, eb) = (a.ebid(), b.ebid());
    a.on_observation(eb, 100);
    b.on_observation(ea, 100);
    a.on_observation(eb, 400);
    b.on_observation(ea, 400);
    let fa = a.tick(461, &cfg());
    let fb = b.tick(461, &cfg());
    assert_eq!(fa.len(), 1);
    assert_eq!(fb.len(), 1);
    assert_eq!(fa[0].duration_sec, 300);

    // SHA-256 over 0x31 / 0x32 || 00000012, computed outside this crate.
    let pet1 = "d55ea248fba177c5373be8b66831040fc9316c29b936b68cff731ad0d33f2701";
    let pet2 = "e9163ad9690b5fe155620570605bb0301bfec24b0f8c70403659edf6f94287a3";
    // A's EBID (4) sorts below B's (10), so B keeps PET^1 for requests.
    assert_eq!(hex::encode(b.rtl()[0].pet.0), pet1);
    assert_eq!(hex::encode(a.rtl()[0].pet.0), pet2);
    assert_eq!(a.rtl()[0].pet, b.etl().next().unwrap().pet);
    assert_eq!(b.rtl()[0].pet, a.etl().next().unwrap().pet);
}

#[test]
fn random_encounters_are_complementary() {
    for i in 0..100u8 {
        let mut a = DeviceState::new(GroupParams::Curve25519, [i; 32], 0);
        let mut b = DeviceState::new(GroupParams::Curve25519, [i.wrapping_add(101); 32], 0);
        let (ea, eb) = (a.ebid(), b.ebid());
        a.finalize_encounter(eb, 300, 0, FinalizeReason::PeerLost, &cfg());
        b.finalize_encounter(ea, 300, 0, FinalizeReason::PeerLost, &cfg());
        assert_eq!(a.rtl()[0].pet, b.etl().next().unwrap().pet);
        assert_eq!(b.rtl()[0].pet, a.etl().next().unwrap().pet);
        assert_ne!(a.rtl()[0].pet, b.rtl()[0].pet);
    }
}

#[test]
fn contact_across_rotation_yields_two_records() {
    let mut a = device(1);
    let mut b = device(2);
    let c = cfg();
    for t in (600..1500).step_by(3) {
        if t == 900 {
            a.on_epoch_start(1, t, &c).unwrap();
            b.on_epoch_start(1, t, &c).unwrap();
        }
        let (addr_a, adv_a, scan_a) = a.beacon();
        let (addr_b, adv_b, scan_b) = b.beacon();
        b.receive_payload(addr_a, &adv_a, t).unwrap();
        b.receive_payload(addr_a, &scan_a, t).unwrap();
        a.receive_payload(addr_b, &adv_b, t).unwrap();
        a.receive_payload(addr_b, &scan_b, t).unwrap();
    }
    a.tick(1600, &c);
    b.tick(1600, &c);
    assert_eq!(a.rtl().len(), 2);
    let durations: Vec<u32> = a.etl().map(|e| e.duration_sec).collect();
    assert_eq!(durations, vec![297, 597]);
    let a_rtl: BTreeSet<PetToken> = a.rtl().iter().map(|e| e.pet).collect();
    let b_etl: BTreeSet<PetToken> = b.etl().map(|e| e.pet).collect();
    assert_eq!(a_rtl, b_etl);
}

#[test]
fn peer_loss_timing() {
    let mut d = device(3);
    let peer = d.ebid();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let other = random_peer(&mut rng);
    assert!(!d.on_observation(peer, 50), "own EBID is ignored");
    assert!(d.active_encounters().is_empty());
    assert!(d.on_observation(other, 100));
    assert!(!d.on_observation(other, 1000));
    assert!(d.tick(1059, &cfg()).is_empty());
    assert_eq!(d.next_deadline(&cfg()), Some(1061));
    let done = d.tick(1061, &cfg());
    assert_eq!(done.len(), 1);
    assert_eq!(done[0].duration_sec, 900);
    assert_eq!(done[0].reason, FinalizeReason::PeerLost);
    assert_eq!(d.rtl().len(), 1);
}

#[test]
fn short_encounters_leave_no_trace() {
    let mut d = device(4);
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let peer = random_peer(&mut rng);
    d.on_observation(peer, 100);
    d.on_observation(peer, 160);
    let done = d.tick(300, &cfg());
    assert_eq!(done[0].outcome, FinalizeOutcome::TooShort);
    assert!(d.rtl().is_empty());
    assert_eq!(d.etl().count(), 0);
}

#[test]
fn request_padding() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for (real, expect_real) in [(5usize, 5usize), (0, 0), (10, 8)] {
        let (mut d, c) = registered(6, 8);
        add_encounters(&mut d, real, 0, &mut rng);
        let req = d.build_esr_request(c.esr_min_epochs(), &c).unwrap();
        assert_eq!(req.tokens.len(), 8);
        let sent: BTreeSet<PetToken> = req.tokens.iter().copied().collect();
        let rtl: Vec<PetToken> = d.rtl().iter().map(|e| e.pet).collect();
        let included: Vec<&PetToken> = rtl.iter().filter(|p| sent.contains(p)).collect();
        assert_eq!(included.len(), expect_real);
        if real > 8 {
            let recent: BTreeSet<PetToken> = rtl[real - 8..].iter().copied().collect();
            assert!(recent.is_subset(&sent), "the most recent tokens are sent");
        }
    }
}

#[test]
fn local_throttle() {
    let (mut d, c) = registered(7, 8);
    assert_eq!(
        d.build_esr_request(23, &c).unwrap_err(),
        DeviceError::NoRequestDue { next: 24 }
    );
    d.build_esr_request(24, &c).unwrap();
    d.handle_esr_reply(EsrStatus::NotAtRisk, 24);
    assert_eq!(
        d.build_esr_request(47, &c).unwrap_err(),
        DeviceError::NoRequestDue { next: 48 }
    );
    let mut unregistered = device(8);
    assert_eq!(
        unregistered.build_esr_request(100, &c).unwrap_err(),
        DeviceError::NotRegistered
    );
}

#[test]
fn replies() {
    let (mut d, _) = registered(9, 8);
    assert!(d.handle_esr_reply(EsrStatus::AtRisk, 24).notify_user);
    assert!(!d.handle_esr_reply(EsrStatus::AtRisk, 48).notify_user);
    assert!(d.notified());
    assert_eq!(d.notification_events(), 1);

    let before = d.sre_local();
    let out = d.handle_esr_reply(EsrStatus::RateLimited, 49);
    assert!(out.retry);
    assert_eq!(d.sre_local(), before);
}

#[test]
fn upload_batch() {
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let mut d = device(10);
    assert!(d.build_upload_batch(vec![]).unwrap().is_empty());
    add_encounters(&mut d, 3, 2, &mut rng);
    assert_eq!(
        d.build_upload_batch(dummy_tokens(2)).unwrap_err(),
        DeviceError::NotEnoughTokens { have: 2, need: 3 }
    );
    let batch = d.build_upload_batch(dummy_tokens(3)).unwrap();
    let sent: BTreeSet<PetToken> = batch.iter().map(|m| m.pet).collect();
    let etl: BTreeSet<PetToken> = d.etl().map(|e| e.pet).collect();
    assert_eq!(sent, etl);
    assert_eq!(d.pending_uploads(), 0);
}

#[test]
fn upload_order_is_uniform() {
    let peers: Vec<Ebid> = {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        (0..3).map(|_| random_peer(&mut rng)).collect()
    };
    let mut counts: BTreeMap<Vec<u32>, u32> = BTreeMap::new();
    let n = 10_000u32;
    for i in 0..n {
        let mut seed = [0u8; 32];
        seed[..4].copy_from_slice(&i.to_be_bytes());
        let mut d = DeviceState::new(GroupParams::Curve25519, seed, 0);
        for (k, p) in peers.iter().enumerate() {
            d.finalize_encounter(*p, 200 + k as u64, 0, FinalizeReason::PeerLost, &cfg());
        }
        let order: Vec<u32> = d
            .build_upload_batch(dummy_tokens(3))
            .unwrap()
            .iter()
            .map(|m| m.duration_sec)
            .collect();
        *counts.entry(order).or_default() += 1;
    }
    assert_eq!(counts.len(), 6);
    let expected = n as f64 / 6.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 5 degrees of freedom, 0.999 quantile.
    assert!(chi2 < 20.52, "chi-square {chi2}");
}

#[test]
fn expiry_boundary() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let mut d = device(12);
    add_encounters(&mut d, 1, 1, &mut rng);
    add_encounters(&mut d, 1, 2, &mut rng);
    let today = 16u64;
    let c = cfg();
    let epoch = today * c.epochs_per_day();
    d.on_epoch_start(epoch, epoch * c.epoch_duration_sec, &c).unwrap();
    let days: Vec<u32> = d.rtl().iter().map(|e| e.day).collect();
    assert_eq!(days, vec![2], "day 1 is 15 days old, day 2 is 14");
    assert_eq!(d.etl().map(|e| e.day).collect::<Vec<_>>(), vec![2]);
}

#[test]
fn rotation_erases_previous_secret() {
    let mut d = device(13);
    let c = cfg();
    let old_secret = d.identity().secret.to_bytes();
    let old_ebid = d.ebid();
    d.on_epoch_start(1, 900, &c).unwrap();
    assert_eq!(d.identity().epoch, 1);
    assert_ne!(d.ebid(), old_ebid);
    let snap = d.snapshot();
    assert!(!snap.windows(32).any(|w| w == &old_secret[..]));
    assert!(d.on_epoch_start(1, 900, &c).is_err());
}

#[test]
fn rotation_finalizes_open_encounters() {
    let mut rng = ChaCha20Rng::seed_from_u64(14);
    let mut d = device(14);
    let peer = random_peer(&mut rng);
    d.on_observation(peer, 200);
    d.on_observation(peer, 800);
    let done = d.on_epoch_start(1, 900, &cfg()).unwrap();
    assert_eq!(done.len(), 1);
    assert_eq!(done[0].reason, FinalizeReason::EbidRotated);
    assert_eq!(done[0].duration_sec, 600);
    assert_eq!(d.rtl().len(), 1);
    assert!(d.active_encounters().is_empty());
}

#[test]
fn snapshot_round_trip() {
    let mut rng = ChaCha20Rng::seed_from_u64(15);
    let (mut d, c) = registered(15, 8);
    add_encounters(&mut d, 4, 0, &mut rng);
    d.on_observation(random_peer(&mut rng), 300);
    d.diagnose(0, &c);
    d.record_daily_score(0, exposure_core::risk::RiskScore(12.5));
    let snap = d.snapshot();
    let mut r = DeviceState::restore(&snap).unwrap();
    assert_eq!(r.snapshot(), snap);
    assert_eq!(r.beacon(), d.beacon());
    let a = d.build_esr_request(24, &c).unwrap();
    let b = r.build_esr_request(24, &c).unwrap();
    assert_eq!(a, b);
    assert!(DeviceState::restore(&snap[1..]).is_err());
}

#[test]
fn toy_snapshot_round_trip() {
    let g = GroupParams::TOY;
    let d = DeviceState::new(g, [1; 32], 3).with_identity(identity_from_secret(g, Secret::Toy(7), 3).unwrap());
    let r = DeviceState::restore(&d.snapshot()).unwrap();
    assert_eq!(r.ebid(), d.ebid());
    assert_eq!(r.epoch(), 3);
}
