//! Chaum-style RSA blind signatures used as anonymous authorization tokens.
//!
//! The client picks a seed `R` and a blinding factor `c`, sends
//! `c^e * H(R) mod n`, receives `c * H(R)^d mod n` and divides `c` out. The
//! resulting `(R, sigma)` verifies as `sigma^e == H(R)` and carries nothing
//! the signer saw.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};
use rsa::traits::{PrivateKeyParts, PublicKeyParts};
use sha2::{Digest, Sha256};

use super::CryptoError;

/// Smallest modulus accepted for protocol keys; smaller keys only come from
/// explicit components in tests.
pub const MIN_PROTOCOL_BITS: usize = 1024;

pub type Seed = [u8; 32];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    pub n: BigUint,
    pub e: BigUint,
}

#[derive(Clone)]
struct CrtParams {
    p: BigUint,
    q: BigUint,
    dp: BigUint,
    dq: BigUint,
    qinv: BigUint,
}

#[derive(Clone)]
pub struct SigningKey {
    public: PublicKey,
    d: BigUint,
    crt: Option<CrtParams>,
}

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SigningKey")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

fn to_num(x: &rsa::BigUint) -> BigUint {
    BigUint::from_bytes_be(&x.to_bytes_be())
}

impl SigningKey {
    /// Generates a fresh key with `e = 65537`.
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R, bits: usize) -> Result<Self, CryptoError> {
        if bits < MIN_PROTOCOL_BITS {
            return Err(CryptoError::WeakKey(bits));
        }
        let key = rsa::RsaPrivateKey::new(rng, bits).map_err(|_| CryptoError::KeyGeneration)?;
        let primes: Vec<BigUint> = key.primes().iter().map(to_num).collect();
        let mut out = SigningKey::from_components(to_num(key.n()), to_num(key.e()), to_num(key.d()))?;
        if let [p, q] = primes.as_slice() {
            let one = BigUint::one();
            out.crt = Some(CrtParams {
                dp: &out.d % (p - &one),
                dq: &out.d % (q - &one),
                qinv: q.modinv(p).ok_or(CryptoError::KeyGeneration)?,
                p: p.clone(),
                q: q.clone(),
            });
        }
        Ok(out)
    }

    /// Builds a key from raw components without size checks.
    pub fn from_components(n: BigUint, e: BigUint, d: BigUint) -> Result<Self, CryptoError> {
        if n <= BigUint::one() || e.is_zero() || d.is_zero() {
            return Err(CryptoError::MalformedKey);
        }
        Ok(SigningKey {
            public: PublicKey { n, e },
            d,
            crt: None,
        })
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn bits(&self) -> u64 {
        self.public.n.bits()
    }
}

/// Full-domain hash of a token seed: SHA-256 in counter mode expanded to the
/// byte length of `n`, reduced mod `n`.
pub fn hash_to_modulus(seed: &[u8], n: &BigUint) -> BigUint {
    let len = n.to_bytes_be().len();
    let mut out = Vec::with_capacity(len + 32);
    let mut counter = 0u32;
    while out.len() < len {
        let mut h = Sha256::new();
        h.update(seed);
        h.update(counter.to_be_bytes());
        out.extend_from_slice(&h.finalize());
        counter += 1;
    }
    out.truncate(len);
    BigUint::from_bytes_be(&out) % n
}

/// `c^e * h mod n`.
pub fn blind_digest(h: &BigUint, c: &BigUint, key: &PublicKey) -> Result<BigUint, CryptoError> {
    if !c.gcd(&key.n).is_one() {
        return Err(CryptoError::NotInvertible);
    }
    Ok(c.modpow(&key.e, &key.n) * h % &key.n)
}

pub fn blind(seed: &Seed, c: &BigUint, key: &PublicKey) -> Result<BigUint, CryptoError> {
    blind_digest(&hash_to_modulus(seed, &key.n), c, key)
}

/// `blinded^d mod n`, via CRT when the primes are known.
pub fn sign_blinded(blinded: &BigUint, key: &SigningKey) -> BigUint {
    let n = &key.public.n;
    let m = blinded % n;
    match &key.crt {
        Some(crt) => {
            let sp = m.modpow(&crt.dp, &crt.p);
            let sq = m.modpow(&crt.dq, &crt.q);
            let diff = (&sp + &crt.p - (&sq % &crt.p)) % &crt.p;
            let h = (&crt.qinv * diff) % &crt.p;
            sq + &crt.q * h
        }
        None => m.modpow(&key.d, n),
    }
}

/// `rep * c^-1 mod n`.
pub fn unblind(rep: &BigUint, c: &BigUint, n: &BigUint) -> Result<BigUint, CryptoError> {
    let inv = c.modinv(n).ok_or(CryptoError::NotInvertible)?;
    Ok(rep * inv % n)
}

/// Checks `sigma^e == h mod n` for an already-hashed message.
pub fn verify_digest(h: &BigUint, sigma: &BigUint, key: &PublicKey) -> bool {
    sigma < &key.n && sigma.modpow(&key.e, &key.n) == h % &key.n
}

/// An anonymous authorization token `(R, sigma)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthToken {
    pub seed: Seed,
    pub sigma: BigUint,
}

pub fn verify_token(token: &AuthToken, key: &PublicKey) -> bool {
    verify_digest(&hash_to_modulus(&token.seed, &key.n), &token.sigma, key)
}

/// Client side of one issuance: holds `R` and `c` until the reply comes back.
pub struct BlindRequest {
    seed: Seed,
    c: BigUint,
    key: PublicKey,
}

impl BlindRequest {
    /// Draws `R` and an invertible `c`, returning the request state and the
    /// blinded value to send.
    pub fn new<R: RngCore + CryptoRng>(rng: &mut R, key: &PublicKey) -> (Self, BigUint) {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        let two = BigUint::from(2u8);
        loop {
            let c = rng.gen_biguint_range(&two, &key.n);
            if let Ok(blinded) = blind(&seed, &c, key) {
                return (
                    BlindRequest {
                        seed,
                        c,
                        key: key.clone(),
                    },
                    blinded,
                );
            }
        }
    }

    pub fn finish(self, rep: &BigUint) -> Result<AuthToken, CryptoError> {
        let sigma = unblind(rep, &self.c, &self.key.n)?;
        let token = AuthToken { seed: self.seed, sigma };
        if !verify_token(&token, &self.key) {
            return Err(CryptoError::BadSignature);
        }
        Ok(token)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy_key() -> SigningKey {
        SigningKey::from_components(33u32.into(), 3u32.into(), 7u32.into()).unwrap()
    }

    #[test]
    fn toy_vector() {
        let key = toy_key();
        let h = BigUint::from(4u32);
        let c = BigUint::from(2u32);
        let blinded = blind_digest(&h, &c, key.public()).unwrap();
        assert_eq!(blinded, BigUint::from(32u32));
        let rep = sign_blinded(&blinded, &key);
        assert_eq!(rep, BigUint::from(32u32));
        let sigma = unblind(&rep, &c, &key.public().n).unwrap();
        assert_eq!(sigma, BigUint::from(16u32));
        assert!(verify_digest(&h, &sigma, key.public()));
        assert!(!verify_digest(&h, &(sigma + 1u32), key.public()));
    }

    #[test]
    fn identity_blinding() {
        let key = toy_key();
        let h = BigUint::from(4u32);
        let one = BigUint::one();
        let blinded = blind_digest(&h, &one, key.public()).unwrap();
        assert_eq!(blinded, h);
        let sigma = unblind(&sign_blinded(&blinded, &key), &one, &key.public().n).unwrap();
        assert_eq!(sigma, h.modpow(&BigUint::from(7u32), &BigUint::from(33u32)));
    }

    #[test]
    fn non_invertible_blinding_factor() {
        let key = toy_key();
        let c = BigUint::from(3u32);
        assert_eq!(
            blind_digest(&BigUint::from(4u32), &c, key.public()),
            Err(CryptoError::NotInvertible)
        );
        assert_eq!(
            unblind(&BigUint::from(5u32), &c, &key.public().n),
            Err(CryptoError::NotInvertible)
        );
    }

    #[test]
    fn generated_key_round_trip_with_crt() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let key = SigningKey::generate(&mut rng, 1024).unwrap();
        assert!(key.crt.is_some());
        let plain = SigningKey::from_components(key.public.n.clone(), key.public.e.clone(), key.d.clone()).unwrap();
        let (req, blinded) = BlindRequest::new(&mut rng, key.public());
        let rep = sign_blinded(&blinded, &key);
        assert_eq!(rep, sign_blinded(&blinded, &plain));
        let token = req.finish(&rep).unwrap();
        assert!(verify_token(&token, key.public()));
    }

    #[test]
    fn rejects_small_generated_keys() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        assert_eq!(
            SigningKey::generate(&mut rng, 512).unwrap_err(),
            CryptoError::WeakKey(512)
        );
    }
}
