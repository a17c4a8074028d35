//! Per-entry authenticated encryption under a user-held key.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand::{CryptoRng, RngCore};
use zeroize::{Zeroize, ZeroizeOnDrop};

use super::CryptoError;

pub const NONCE_LEN: usize = 12;

/// 32-byte symmetric key protecting one IDTable entry.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct EntryKey([u8; 32]);

impl EntryKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut k = [0u8; 32];
        rng.fill_bytes(&mut k);
        EntryKey(k)
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        EntryKey(bytes)
    }

    pub fn try_from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; 32] = bytes.try_into().map_err(|_| CryptoError::KeyLength(bytes.len()))?;
        Ok(EntryKey(arr))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl std::fmt::Debug for EntryKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("EntryKey(..)")
    }
}

/// Encrypts `plaintext`, binding `aad`. Output is `nonce || ciphertext || tag`.
pub fn encrypt_entry<R: RngCore + CryptoRng>(key: &EntryKey, aad: &[u8], plaintext: &[u8], rng: &mut R) -> Vec<u8> {
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.0));
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let ct = cipher
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad })
        .expect("in-memory encryption cannot fail");
    let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    out
}

pub fn decrypt_entry(key: &EntryKey, aad: &[u8], blob: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if blob.len() < NONCE_LEN {
        return Err(CryptoError::Authentication);
    }
    let (nonce, ct) = blob.split_at(NONCE_LEN);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(&key.0));
    cipher
        .decrypt(Nonce::from_slice(nonce), Payload { msg: ct, aad })
        .map_err(|_| CryptoError::Authentication)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn round_trip_and_tamper() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let key = EntryKey::generate(&mut rng);
        let blob = encrypt_entry(&key, b"id", b"fields", &mut rng);
        assert_eq!(decrypt_entry(&key, b"id", &blob).unwrap(), b"fields");

        for bit in 0..blob.len() * 8 {
            let mut bad = blob.clone();
            bad[bit / 8] ^= 1 << (bit % 8);
            assert_eq!(decrypt_entry(&key, b"id", &bad), Err(CryptoError::Authentication));
        }
        let other = EntryKey::generate(&mut rng);
        assert_eq!(decrypt_entry(&other, b"id", &blob), Err(CryptoError::Authentication));
        assert_eq!(
            decrypt_entry(&key, b"other-id", &blob),
            Err(CryptoError::Authentication)
        );
        assert_eq!(decrypt_entry(&key, b"id", &blob[..4]), Err(CryptoError::Authentication));
    }
}
