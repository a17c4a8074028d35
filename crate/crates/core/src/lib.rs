//! Privacy-preserving exposure notification built on Diffie-Hellman
//! encounter tokens.
//!
//! Devices broadcast a rotating public value (EBID) over BLE. Two devices
//! that stay close derive a shared secret and from it two private encounter
//! tokens (PETs): one goes into the request list (RTL) used to ask the
//! server about exposure, the other into the exposure list (ETL) uploaded
//! if the user is diagnosed. Since each side keeps the complementary token,
//! the server can match exposures without linking uploads to queries.
//!
//! Modules:
//! * [`crypto`]: group operations, PETs, blind tokens, entry encryption
//! * [`ble`]: advertising and scan-response payloads
//! * [`device`]: the per-device state machine
//! * [`server`]: registration, matching and notification
//! * [`risk`]: scoring and the notification decision
//! * [`wire`] and [`transport`]: message codec and simulated channels
//! * [`sim`]: contact traces, the scenario driver, attacks and audits

pub mod authority;
pub mod ble;
pub mod config;
pub mod crypto;
pub mod device;
pub mod risk;
pub mod server;
pub mod sim;
pub mod time;
pub mod transport;
pub mod wire;

pub use config::{ChannelConfig, HarnessConfig, ProtocolConfig, ScorerConfig, SimConfig};
