//! Issuance of anonymous authorization tokens.
//!
//! Each token class has its own RSA key. A client proves eligibility with a
//! credential (a phone number, or an authorization code handed out by a
//! simulated health authority), then gets a blinded value signed. The issuer
//! never sees the seed, so a token cannot be linked back to the credential.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};

use num_bigint::BigUint;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::blind::{sign_blinded, PublicKey, SigningKey};
use crate::crypto::CryptoError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenClass {
    Registration,
    Diagnosis,
    TestResult,
    /// Stateless-mode query token valid on one day.
    Day(u32),
}

impl TokenClass {
    fn label(&self) -> Vec<u8> {
        match self {
            TokenClass::Registration => b"registration".to_vec(),
            TokenClass::Diagnosis => b"diagnosis".to_vec(),
            TokenClass::TestResult => b"test-result".to_vec(),
            TokenClass::Day(d) => [b"day".as_slice(), &d.to_be_bytes()].concat(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IssueError {
    #[error("phone number already used for registration")]
    AlreadyRegistered,
    #[error("unknown or exhausted authorization code")]
    BadCode,
    #[error("authorization code is for another token class")]
    WrongClass,
    #[error("daily token quota exhausted")]
    QuotaExhausted,
    #[error("credential cannot request this token class")]
    NotEligible,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// What the client shows to get a blinded value signed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Credential {
    /// Verified out of band (SMS PIN); only its hash is kept.
    Phone(String),
    Code(AuthorizationCode),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AuthorizationCode(pub [u8; 16]);

/// Signing keys per token class, each derived from its own seed so the
/// order of first use does not change any key.
#[derive(Debug)]
pub struct KeyRing {
    master: [u8; 32],
    bits: usize,
    keys: BTreeMap<TokenClass, SigningKey>,
}

impl KeyRing {
    pub fn new(master: [u8; 32], bits: usize) -> Result<Self, CryptoError> {
        if bits < crate::crypto::blind::MIN_PROTOCOL_BITS {
            return Err(CryptoError::WeakKey(bits));
        }
        Ok(KeyRing {
            master,
            bits,
            keys: BTreeMap::new(),
        })
    }

    pub fn signing_key(&mut self, class: TokenClass) -> &SigningKey {
        let (master, bits) = (self.master, self.bits);
        self.keys.entry(class).or_insert_with(|| {
            let mut h = Sha256::new();
            h.update(master);
            h.update(class.label());
            let mut rng = ChaCha20Rng::from_seed(h.finalize().into());
            SigningKey::generate(&mut rng, bits).expect("bits checked at construction")
        })
    }

    pub fn public(&mut self, class: TokenClass) -> PublicKey {
        self.signing_key(class).public().clone()
    }
}

#[derive(Debug)]
pub struct Issuer {
    keys: KeyRing,
    phones: HashMap<[u8; 32], u32>,
    codes: HashMap<AuthorizationCode, (TokenClass, u32)>,
    day_quota: HashMap<([u8; 32], u32), u32>,
    max_registrations: u32,
    tokens_per_day: u32,
    rng: ChaCha20Rng,
}

fn phone_hash(phone: &str) -> [u8; 32] {
    Sha256::digest(phone.as_bytes()).into()
}

impl Issuer {
    pub fn new(keys: KeyRing, tokens_per_day: u32, seed: [u8; 32]) -> Self {
        Issuer {
            keys,
            phones: HashMap::new(),
            codes: HashMap::new(),
            day_quota: HashMap::new(),
            max_registrations: 1,
            tokens_per_day,
            rng: ChaCha20Rng::from_seed(seed),
        }
    }

    pub fn public(&mut self, class: TokenClass) -> PublicKey {
        self.keys.public(class)
    }

    /// Health-authority side: an authorization code good for `count` tokens
    /// of `class`.
    pub fn authorize(&mut self, class: TokenClass, count: u32) -> AuthorizationCode {
        loop {
            let mut code = [0u8; 16];
            self.rng.fill_bytes(&mut code);
            let code = AuthorizationCode(code);
            if let Entry::Vacant(e) = self.codes.entry(code) {
                e.insert((class, count));
                return code;
            }
        }
    }

    pub fn issue(
        &mut self,
        class: TokenClass,
        credential: &Credential,
        blinded: &BigUint,
    ) -> Result<BigUint, IssueError> {
        match (class, credential) {
            (TokenClass::Registration, Credential::Phone(phone)) => {
                let used = self.phones.entry(phone_hash(phone)).or_default();
                if *used >= self.max_registrations {
                    return Err(IssueError::AlreadyRegistered);
                }
                *used += 1;
            }
            (TokenClass::Day(day), Credential::Phone(phone)) => {
                let used = self.day_quota.entry((phone_hash(phone), day)).or_default();
                if *used >= self.tokens_per_day {
                    return Err(IssueError::QuotaExhausted);
                }
                *used += 1;
            }
            (_, Credential::Code(code)) => {
                let (code_class, remaining) = self.codes.get_mut(code).ok_or(IssueError::BadCode)?;
                if *code_class != class {
                    return Err(IssueError::WrongClass);
                }
                *remaining -= 1;
                if *remaining == 0 {
                    self.codes.remove(code);
                }
            }
            _ => return Err(IssueError::NotEligible),
        }
        Ok(sign_blinded(blinded, self.keys.signing_key(class)))
    }
}
