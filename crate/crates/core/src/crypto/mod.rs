//! Cryptographic building blocks.

pub mod aead;
pub mod blind;
pub mod group;
pub mod pet;
pub mod vectors;

pub use aead::{decrypt_entry, encrypt_entry, EntryKey};
pub use blind::{AuthToken, BlindRequest, PublicKey, SigningKey};
pub use group::{dh_shared, gen_identity, Ebid, EphemeralIdentity, GroupParams, Secret};
pub use pet::{assign_roles, derive_pet_pair, PetToken};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid or low-order group element")]
    InvalidPoint,
    #[error("secret and group parameters disagree")]
    GroupMismatch,
    #[error("own EBID observed as peer")]
    SelfEncounter,
    #[error("value not invertible modulo n")]
    NotInvertible,
    #[error("signature does not verify")]
    BadSignature,
    #[error("RSA modulus of {0} bits is below the protocol minimum")]
    WeakKey(usize),
    #[error("RSA key generation failed")]
    KeyGeneration,
    #[error("malformed RSA key components")]
    MalformedKey,
    #[error("entry key must be 32 bytes, got {0}")]
    KeyLength(usize),
    #[error("authenticated decryption failed")]
    Authentication,
}
