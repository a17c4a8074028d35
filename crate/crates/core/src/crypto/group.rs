//! Group operations behind ephemeral identifiers.
//!
//! Protocol runs use X25519. A tiny multiplicative group modulo a small prime
//! is kept for oracle tests where every value can be checked by hand.

use std::fmt;

use rand::{CryptoRng, RngCore};
use x25519_dalek::{PublicKey, StaticSecret};
use zeroize::Zeroizing;

use super::CryptoError;

/// Which group EBIDs live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupParams {
    Curve25519,
    /// Multiplicative group mod `p` generated by `g`. Test oracle only.
    ToyModP {
        p: u32,
        g: u32,
    },
}

impl GroupParams {
    pub const TOY: GroupParams = GroupParams::ToyModP { p: 23, g: 5 };
}

/// 32-byte encoding of a public group element.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ebid(pub [u8; 32]);

impl Ebid {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    fn from_toy(value: u32) -> Self {
        let mut bytes = [0u8; 32];
        bytes[28..].copy_from_slice(&value.to_be_bytes());
        Ebid(bytes)
    }

    fn toy_value(&self) -> Option<u32> {
        if self.0[..28].iter().any(|b| *b != 0) {
            return None;
        }
        Some(u32::from_be_bytes(self.0[28..].try_into().unwrap()))
    }
}

impl fmt::Debug for Ebid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ebid({})", hex::encode(&self.0[..8]))
    }
}

/// Secret exponent for one epoch. Zeroized on drop.
#[derive(Clone)]
pub enum Secret {
    X25519(StaticSecret),
    Toy(u32),
}

impl Secret {
    pub fn to_bytes(&self) -> Zeroizing<Vec<u8>> {
        match self {
            Secret::X25519(s) => Zeroizing::new(s.to_bytes().to_vec()),
            Secret::Toy(v) => Zeroizing::new(v.to_be_bytes().to_vec()),
        }
    }
}

impl Drop for Secret {
    fn drop(&mut self) {
        if let Secret::Toy(v) = self {
            *v = 0;
        }
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(..)")
    }
}

/// Canonical shared-secret encoding fed to the PET hash: 32 bytes for X25519,
/// 4 bytes big-endian in the toy group.
pub type SharedSecret = Zeroizing<Vec<u8>>;

/// The pair (secret, g^secret) used for one epoch.
#[derive(Clone, Debug)]
pub struct EphemeralIdentity {
    pub secret: Secret,
    pub ebid: Ebid,
    pub epoch: u64,
}

pub fn gen_identity<R: RngCore + CryptoRng>(params: GroupParams, rng: &mut R, epoch: u64) -> EphemeralIdentity {
    let secret = match params {
        GroupParams::Curve25519 => {
            let mut bytes = Zeroizing::new([0u8; 32]);
            rng.fill_bytes(bytes.as_mut());
            Secret::X25519(StaticSecret::from(*bytes))
        }
        GroupParams::ToyModP { p, .. } => Secret::Toy(1 + rng.next_u32() % (p - 2)),
    };
    identity_from_secret(params, secret, epoch).expect("secret matches group")
}

pub fn identity_from_secret(params: GroupParams, secret: Secret, epoch: u64) -> Result<EphemeralIdentity, CryptoError> {
    let ebid = match (&params, &secret) {
        (GroupParams::Curve25519, Secret::X25519(s)) => Ebid(PublicKey::from(s).to_bytes()),
        (GroupParams::ToyModP { p, g }, Secret::Toy(x)) => Ebid::from_toy(mod_pow(*g, *x, *p)),
        _ => return Err(CryptoError::GroupMismatch),
    };
    Ok(EphemeralIdentity { secret, ebid, epoch })
}

pub fn dh_shared(params: GroupParams, secret: &Secret, peer: &Ebid) -> Result<SharedSecret, CryptoError> {
    match (params, secret) {
        (GroupParams::Curve25519, Secret::X25519(s)) => {
            let shared = s.diffie_hellman(&PublicKey::from(peer.0));
            // Low-order points collapse the output to a fixed value.
            if !shared.was_contributory() {
                return Err(CryptoError::InvalidPoint);
            }
            Ok(Zeroizing::new(shared.as_bytes().to_vec()))
        }
        (GroupParams::ToyModP { p, .. }, Secret::Toy(x)) => {
            let y = peer.toy_value().ok_or(CryptoError::InvalidPoint)?;
            if y <= 1 || y >= p {
                return Err(CryptoError::InvalidPoint);
            }
            Ok(Zeroizing::new(mod_pow(y, *x, p).to_be_bytes().to_vec()))
        }
        _ => Err(CryptoError::GroupMismatch),
    }
}

fn mod_pow(base: u32, exp: u32, modulus: u32) -> u32 {
    let m = modulus as u64;
    let mut result = 1u64 % m;
    let mut b = base as u64 % m;
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            result = result * b % m;
        }
        b = b * b % m;
        e >>= 1;
    }
    result as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy(x: u32) -> EphemeralIdentity {
        identity_from_secret(GroupParams::TOY, Secret::Toy(x), 0).unwrap()
    }

    #[test]
    fn toy_identity_vectors() {
        // 5^4 = 625 = 27*23 + 4
        assert_eq!(toy(4).ebid, Ebid::from_toy(4));
        assert_eq!(toy(0).ebid, Ebid::from_toy(1));
    }

    #[test]
    fn toy_shared_secret() {
        let a = toy(4);
        let b = toy(3);
        let ab = dh_shared(GroupParams::TOY, &a.secret, &b.ebid).unwrap();
        let ba = dh_shared(GroupParams::TOY, &b.secret, &a.ebid).unwrap();
        assert_eq!(*ab, vec![0, 0, 0, 18]);
        assert_eq!(ab, ba);
    }

    #[test]
    fn toy_rejects_degenerate_elements() {
        let a = toy(4);
        for bad in [0u32, 1, 23, 99] {
            assert_eq!(
                dh_shared(GroupParams::TOY, &a.secret, &Ebid::from_toy(bad)),
                Err(CryptoError::InvalidPoint)
            );
        }
    }

    #[test]
    fn x25519_symmetry() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = gen_identity(GroupParams::Curve25519, &mut rng, 1);
            let b = gen_identity(GroupParams::Curve25519, &mut rng, 1);
            let ab = dh_shared(GroupParams::Curve25519, &a.secret, &b.ebid).unwrap();
            let ba = dh_shared(GroupParams::Curve25519, &b.secret, &a.ebid).unwrap();
            assert_eq!(ab, ba);
            assert_eq!(ab.len(), 32);
        }
    }

    #[test]
    fn x25519_rejects_zero_point() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let a = gen_identity(GroupParams::Curve25519, &mut rng, 0);
        assert_eq!(
            dh_shared(GroupParams::Curve25519, &a.secret, &Ebid([0; 32])),
            Err(CryptoError::InvalidPoint)
        );
    }

    #[test]
    fn distinct_rng_states_give_distinct_secrets() {
        let mut r1 = ChaCha20Rng::seed_from_u64(1);
        let mut r2 = ChaCha20Rng::seed_from_u64(2);
        let a = gen_identity(GroupParams::Curve25519, &mut r1, 0);
        let b = gen_identity(GroupParams::Curve25519, &mut r2, 0);
        assert_ne!(a.ebid, b.ebid);
        assert_ne!(*a.secret.to_bytes(), *b.secret.to_bytes());
    }

    #[test]
    fn mixing_groups_is_an_error() {
        assert_eq!(
            identity_from_secret(GroupParams::Curve25519, Secret::Toy(3), 0).unwrap_err(),
            CryptoError::GroupMismatch
        );
    }
}
