//! BLE framing for 32-byte EBIDs.
//!
//! A legacy advertising payload holds at most 31 bytes, so the EBID travels
//! in two 16-byte halves. Two variants are supported:
//!
//! * scan response: `ID_L` in the `ADV_IND` payload, `ID_H` in `SCAN_RSP`;
//! * fragmentation: alternating `ADV_IND` payloads, both under 0xFD01, with
//!   the fragment index in bit 0 of the first reserved byte.
//!
//! Byte layout (offsets in brackets):
//!
//! ```text
//! ADV_IND, 29 bytes
//!   [0..3)   flags AD          02 01 06
//!   [3..7)   16-bit UUID list  03 03 01 FD
//!   [7..29)  service data      01 FD | ID (16) | version | tx_gain | rsv0 | rsv1
//!
//! SCAN_RSP, 24 bytes
//!   [0..4)   16-bit UUID list  03 03 02 FD
//!   [4..24)  service data      02 FD | ID_H (16) | rsv0 | rsv1
//! ```
//!
//! UUIDs are little-endian on the air. `ID_H` is the first (most significant)
//! 16 bytes of the EBID encoding, `ID_L` the last 16.

use std::collections::HashMap;

use thiserror::Error;

use crate::crypto::Ebid;

pub const ADV_LEN: usize = 29;
pub const SCAN_RSP_LEN: usize = 24;
pub const UUID_PNS1: u16 = 0xFD01;
pub const UUID_PNS2: u16 = 0xFD02;

const FLAGS_AD: [u8; 3] = [0x02, 0x01, 0x06];
const UUID_LIST_HEADER: [u8; 2] = [0x03, 0x03];

pub type DeviceAddress = [u8; 6];
pub type Half = [u8; 16];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BleError {
    #[error("payload advertises service {0:#06x}")]
    NotOurService(u16),
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
}

pub fn segment_ebid(ebid: &[u8]) -> Result<(Half, Half), BleError> {
    if ebid.len() != 32 {
        return Err(BleError::Malformed("EBID must be 32 bytes"));
    }
    let id_h: Half = ebid[..16].try_into().unwrap();
    let id_l: Half = ebid[16..].try_into().unwrap();
    Ok((id_l, id_h))
}

pub fn reassemble(id_l: &Half, id_h: &Half) -> Ebid {
    let mut out = [0u8; 32];
    out[..16].copy_from_slice(id_h);
    out[16..].copy_from_slice(id_l);
    Ebid(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdvFields {
    pub id: Half,
    pub version: u8,
    pub tx_gain: u8,
    /// 0 for `ID_L`, 1 for `ID_H` (fragmentation variant only).
    pub fragment: u8,
}

fn build_adv_raw(id: &Half, version: u8, tx_gain: u8, fragment: u8) -> [u8; ADV_LEN] {
    let mut out = [0u8; ADV_LEN];
    out[..3].copy_from_slice(&FLAGS_AD);
    out[3..5].copy_from_slice(&UUID_LIST_HEADER);
    out[5..7].copy_from_slice(&UUID_PNS1.to_le_bytes());
    out[7..9].copy_from_slice(&UUID_PNS1.to_le_bytes());
    out[9..25].copy_from_slice(id);
    out[25] = version;
    out[26] = tx_gain;
    out[27] = fragment;
    out
}

pub fn build_adv(id_l: &Half, version: u8, tx_gain: u8) -> [u8; ADV_LEN] {
    build_adv_raw(id_l, version, tx_gain, 0)
}

pub fn build_scan_rsp(id_h: &Half) -> [u8; SCAN_RSP_LEN] {
    let mut out = [0u8; SCAN_RSP_LEN];
    out[..2].copy_from_slice(&UUID_LIST_HEADER);
    out[2..4].copy_from_slice(&UUID_PNS2.to_le_bytes());
    out[4..6].copy_from_slice(&UUID_PNS2.to_le_bytes());
    out[6..22].copy_from_slice(id_h);
    out
}

fn read_uuid(bytes: &[u8]) -> u16 {
    u16::from_le_bytes([bytes[0], bytes[1]])
}

pub fn parse_adv(bytes: &[u8]) -> Result<AdvFields, BleError> {
    if bytes.len() != ADV_LEN {
        return Err(BleError::Malformed("advertising payload must be 29 bytes"));
    }
    if bytes[..3] != FLAGS_AD || bytes[3..5] != UUID_LIST_HEADER {
        return Err(BleError::Malformed("unexpected AD structure header"));
    }
    let uuid = read_uuid(&bytes[5..7]);
    if uuid != UUID_PNS1 {
        return Err(BleError::NotOurService(uuid));
    }
    if read_uuid(&bytes[7..9]) != uuid {
        return Err(BleError::Malformed("service data UUID differs from UUID list"));
    }
    let fragment = bytes[27];
    if fragment > 1 {
        return Err(BleError::Malformed("fragment index out of range"));
    }
    Ok(AdvFields {
        id: bytes[9..25].try_into().unwrap(),
        version: bytes[25],
        tx_gain: bytes[26],
        fragment,
    })
}

pub fn parse_scan_rsp(bytes: &[u8]) -> Result<Half, BleError> {
    if bytes.len() != SCAN_RSP_LEN {
        return Err(BleError::Malformed("scan response payload must be 24 bytes"));
    }
    if bytes[..2] != UUID_LIST_HEADER {
        return Err(BleError::Malformed("unexpected AD structure header"));
    }
    let uuid = read_uuid(&bytes[2..4]);
    if uuid != UUID_PNS2 {
        return Err(BleError::NotOurService(uuid));
    }
    if read_uuid(&bytes[4..6]) != uuid {
        return Err(BleError::Malformed("service data UUID differs from UUID list"));
    }
    Ok(bytes[6..22].try_into().unwrap())
}

/// Alternating advertising payloads for the fragmentation variant:
/// `[ID_L fragment, ID_H fragment]`.
pub fn build_fragment_sequence(ebid: &Ebid, version: u8, tx_gain: u8) -> [[u8; ADV_LEN]; 2] {
    let (id_l, id_h) = segment_ebid(ebid.as_bytes()).expect("EBID is 32 bytes");
    [
        build_adv_raw(&id_l, version, tx_gain, 0),
        build_adv_raw(&id_h, version, tx_gain, 1),
    ]
}

/// Which half of an EBID a received payload carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fragment {
    Low(Half),
    High(Half),
}

/// Classifies a received payload of either variant.
pub fn parse_payload(bytes: &[u8]) -> Result<Fragment, BleError> {
    match bytes.len() {
        SCAN_RSP_LEN => parse_scan_rsp(bytes).map(Fragment::High),
        _ => {
            let adv = parse_adv(bytes)?;
            Ok(if adv.fragment == 0 {
                Fragment::Low(adv.id)
            } else {
                Fragment::High(adv.id)
            })
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Partial {
    epoch: u64,
    low: Option<Half>,
    high: Option<Half>,
}

/// Links halves by advertiser address within one epoch.
#[derive(Clone, Debug, Default)]
pub struct ReassemblyCache {
    entries: HashMap<DeviceAddress, Partial>,
    conflicts: u64,
}

impl ReassemblyCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one half. Returns the EBID whenever both halves for `addr` are
    /// known in `epoch`.
    pub fn observe(&mut self, addr: DeviceAddress, fragment: Fragment, epoch: u64) -> Option<Ebid> {
        let entry = self.entries.entry(addr).or_insert_with(|| Partial {
            epoch,
            ..Default::default()
        });
        if entry.epoch != epoch {
            *entry = Partial {
                epoch,
                ..Default::default()
            };
        }
        let (slot, value) = match fragment {
            Fragment::Low(v) => (&mut entry.low, v),
            Fragment::High(v) => (&mut entry.high, v),
        };
        match slot {
            Some(existing) if *existing != value => {
                self.entries.remove(&addr);
                self.conflicts += 1;
                return None;
            }
            _ => *slot = Some(value),
        }
        match (entry.low, entry.high) {
            (Some(l), Some(h)) => Some(reassemble(&l, &h)),
            _ => None,
        }
    }

    /// Drops every half received before `epoch`.
    pub fn expire(&mut self, epoch: u64) {
        self.entries.retain(|_, p| p.epoch >= epoch);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn conflicts(&self) -> u64 {
        self.conflicts
    }
}
