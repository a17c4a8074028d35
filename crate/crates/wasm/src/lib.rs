//! wasm-bindgen exports behind `www/index.html`.
//!
//! Three operations: derive the tokens two phones get from one encounter,
//! build and decode BLE payloads, and run a small trace end to end. All
//! randomness comes from the seeds passed in, so the page is reproducible.

use exposure_core::ble::{build_adv, build_scan_rsp, parse_adv, parse_payload, segment_ebid, Fragment, ADV_LEN};
use exposure_core::crypto::{assign_roles, derive_pet_pair, dh_shared, gen_identity, EphemeralIdentity, GroupParams};
use exposure_core::sim::{run, ContactTrace, Mode};
use exposure_core::HarnessConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use wasm_bindgen::prelude::*;

fn identity(seed: u32) -> EphemeralIdentity {
    let mut rng = ChaCha20Rng::seed_from_u64(seed as u64);
    gen_identity(GroupParams::Curve25519, &mut rng, 0)
}

/// Both views of one encounter between phones A and B.
#[wasm_bindgen]
pub struct Encounter {
    ebid_a: String,
    ebid_b: String,
    rtl_a: String,
    etl_a: String,
    rtl_b: String,
    etl_b: String,
}

#[wasm_bindgen]
impl Encounter {
    #[wasm_bindgen(getter)]
    pub fn ebid_a(&self) -> String {
        self.ebid_a.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn ebid_b(&self) -> String {
        self.ebid_b.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn rtl_a(&self) -> String {
        self.rtl_a.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn etl_a(&self) -> String {
        self.etl_a.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn rtl_b(&self) -> String {
        self.rtl_b.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn etl_b(&self) -> String {
        self.etl_b.clone()
    }
    /// A's request token is B's upload token and vice versa.
    #[wasm_bindgen(getter)]
    pub fn complementary(&self) -> bool {
        self.rtl_a == self.etl_b && self.rtl_b == self.etl_a
    }
}

#[wasm_bindgen]
pub fn encounter(seed_a: u32, seed_b: u32) -> Result<Encounter, JsError> {
    let (a, b) = (identity(seed_a), identity(seed_b));
    let side = |me: &EphemeralIdentity, peer: &EphemeralIdentity| -> Result<(String, String), JsError> {
        let shared = dh_shared(GroupParams::Curve25519, &me.secret, &peer.ebid)?;
        let (p1, p2) = derive_pet_pair(&shared);
        let (rtl, etl) = assign_roles(&me.ebid, &peer.ebid, p1, p2)?;
        Ok((hex::encode(rtl.0), hex::encode(etl.0)))
    };
    let (rtl_a, etl_a) = side(&a, &b)?;
    let (rtl_b, etl_b) = side(&b, &a)?;
    Ok(Encounter {
        ebid_a: hex::encode(a.ebid.0),
        ebid_b: hex::encode(b.ebid.0),
        rtl_a,
        etl_a,
        rtl_b,
        etl_b,
    })
}

/// Advertising and scan-response payloads, hex, separated by a newline.
#[wasm_bindgen]
pub fn ble_payloads(seed: u32, version: u8, tx_gain: u8) -> Result<String, JsError> {
    let id = identity(seed);
    let (id_l, id_h) = segment_ebid(&id.ebid.0)?;
    Ok(format!(
        "{}\n{}",
        hex::encode(build_adv(&id_l, version, tx_gain)),
        hex::encode(build_scan_rsp(&id_h))
    ))
}

/// Human-readable decode of one hex payload.
#[wasm_bindgen]
pub fn decode_payload(hex_bytes: &str) -> Result<String, JsError> {
    let clean: String = hex_bytes.chars().filter(|c| !c.is_whitespace()).collect();
    let bytes = hex::decode(clean)?;
    let half = match parse_payload(&bytes)? {
        Fragment::Low(id) => format!("ID_L      {}", hex::encode(id)),
        Fragment::High(id) => format!("ID_H      {}", hex::encode(id)),
    };
    if bytes.len() != ADV_LEN {
        return Ok(format!("scan response ({} bytes)\n{half}", bytes.len()));
    }
    let f = parse_adv(&bytes)?;
    Ok(format!(
        "advertising payload ({} bytes)\n{half}\nversion   {}\ntx gain   {}\nfragment  {}",
        bytes.len(),
        f.version,
        f.tx_gain,
        f.fragment
    ))
}

/// Runs `trace` with default settings and returns the report summary.
#[wasm_bindgen]
pub fn run_trace(trace: &str, seed: u32, stateless: bool) -> Result<String, JsError> {
    let trace = ContactTrace::parse(trace)?;
    let mode = if stateless { Mode::Stateless } else { Mode::Stateful };
    let report = run(&trace, &HarnessConfig::default(), seed as u64, mode)?;
    Ok(report.summary())
}
