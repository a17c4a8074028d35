//! Line-oriented conformance vectors.
//!
//! Each non-comment line is `<mode> name=hex name=hex ...`. Supported modes:
//! `toymodp`, `x25519` (DH + PET derivation + role split) and `rsa` (blind
//! signature arithmetic on a raw digest).

use std::collections::BTreeMap;

use num_bigint::BigUint;
use thiserror::Error;
use x25519_dalek::StaticSecret;

use super::blind::{blind_digest, sign_blinded, unblind, verify_digest, SigningKey};
use super::group::{dh_shared, identity_from_secret, Ebid, GroupParams, Secret};
use super::pet::{assign_roles, derive_pet_pair};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VectorError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: field `{field}` mismatch: expected {expected}, got {actual}")]
    Mismatch {
        line: usize,
        field: String,
        expected: String,
        actual: String,
    },
}

#[derive(Debug, Clone)]
pub struct TestVector {
    pub line: usize,
    pub mode: String,
    pub fields: BTreeMap<String, Vec<u8>>,
}

impl TestVector {
    fn get(&self, name: &str) -> Result<&[u8], VectorError> {
        self.fields
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| VectorError::Parse {
                line: self.line,
                msg: format!("missing field `{name}`"),
            })
    }

    fn int(&self, name: &str) -> Result<BigUint, VectorError> {
        Ok(BigUint::from_bytes_be(self.get(name)?))
    }

    fn small(&self, name: &str) -> Result<u32, VectorError> {
        let v = self.int(name)?;
        u32::try_from(&v).map_err(|_| VectorError::Parse {
            line: self.line,
            msg: format!("`{name}` does not fit in 32 bits"),
        })
    }

    fn expect(&self, name: &str, actual: &[u8]) -> Result<(), VectorError> {
        let expected = self.get(name)?;
        if expected != actual {
            return Err(VectorError::Mismatch {
                line: self.line,
                field: name.to_string(),
                expected: hex::encode(expected),
                actual: hex::encode(actual),
            });
        }
        Ok(())
    }

    fn expect_int(&self, name: &str, actual: &BigUint) -> Result<(), VectorError> {
        let expected = self.int(name)?;
        if &expected != actual {
            return Err(VectorError::Mismatch {
                line: self.line,
                field: name.to_string(),
                expected: expected.to_str_radix(16),
                actual: actual.to_str_radix(16),
            });
        }
        Ok(())
    }
}

pub fn parse_vectors(text: &str) -> Result<Vec<TestVector>, VectorError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut parts = raw.split_whitespace();
        let mode = parts.next().unwrap().to_string();
        let mut fields = BTreeMap::new();
        for part in parts {
            let (name, value) = part.split_once('=').ok_or_else(|| VectorError::Parse {
                line,
                msg: format!("expected name=hex, got `{part}`"),
            })?;
            let bytes = hex::decode(value).map_err(|e| VectorError::Parse {
                line,
                msg: format!("field `{name}`: {e}"),
            })?;
            fields.insert(name.to_string(), bytes);
        }
        out.push(TestVector { line, mode, fields });
    }
    Ok(out)
}

/// Runs one vector through the implementation.
pub fn check_vector(v: &TestVector) -> Result<(), VectorError> {
    match v.mode.as_str() {
        "toymodp" => {
            let params = GroupParams::ToyModP {
                p: v.small("p")?,
                g: v.small("g")?,
            };
            let a = identity_from_secret(params, Secret::Toy(v.small("a")?), 0).unwrap();
            let b = identity_from_secret(params, Secret::Toy(v.small("b")?), 0).unwrap();
            check_exchange(v, params, a.secret, a.ebid, b.secret, b.ebid)
        }
        "x25519" => {
            let key = |name| -> Result<Secret, VectorError> {
                let bytes: [u8; 32] = v.get(name)?.try_into().map_err(|_| VectorError::Parse {
                    line: v.line,
                    msg: format!("`{name}` must be 32 bytes"),
                })?;
                Ok(Secret::X25519(StaticSecret::from(bytes)))
            };
            let params = GroupParams::Curve25519;
            let a = identity_from_secret(params, key("a")?, 0).unwrap();
            let b = identity_from_secret(params, key("b")?, 0).unwrap();
            check_exchange(v, params, a.secret, a.ebid, b.secret, b.ebid)
        }
        "rsa" => {
            let key =
                SigningKey::from_components(v.int("n")?, v.int("e")?, v.int("d")?).map_err(|e| VectorError::Parse {
                    line: v.line,
                    msg: e.to_string(),
                })?;
            let h = v.int("h")?;
            let c = v.int("c")?;
            let parse = |e: super::CryptoError| VectorError::Parse {
                line: v.line,
                msg: e.to_string(),
            };
            let blinded = blind_digest(&h, &c, key.public()).map_err(parse)?;
            v.expect_int("blinded", &blinded)?;
            let rep = sign_blinded(&blinded, &key);
            v.expect_int("rep", &rep)?;
            let sigma = unblind(&rep, &c, &key.public().n).map_err(parse)?;
            v.expect_int("sigma", &sigma)?;
            if !verify_digest(&h, &sigma, key.public()) {
                return Err(VectorError::Mismatch {
                    line: v.line,
                    field: "verify".into(),
                    expected: "true".into(),
                    actual: "false".into(),
                });
            }
            Ok(())
        }
        other => Err(VectorError::Parse {
            line: v.line,
            msg: format!("unknown mode `{other}`"),
        }),
    }
}

fn check_exchange(
    v: &TestVector,
    params: GroupParams,
    a: Secret,
    ebid_a: Ebid,
    b: Secret,
    ebid_b: Ebid,
) -> Result<(), VectorError> {
    v.expect("ebid_a", ebid_a.as_bytes())?;
    v.expect("ebid_b", ebid_b.as_bytes())?;
    let err = |e: super::CryptoError| VectorError::Parse {
        line: v.line,
        msg: e.to_string(),
    };
    let ab = dh_shared(params, &a, &ebid_b).map_err(err)?;
    let ba = dh_shared(params, &b, &ebid_a).map_err(err)?;
    v.expect("shared", &ab)?;
    v.expect("shared", &ba)?;
    let (p1, p2) = derive_pet_pair(&ab);
    v.expect("pet1", p1.as_bytes())?;
    v.expect("pet2", p2.as_bytes())?;
    let (rtl_a, etl_a) = assign_roles(&ebid_a, &ebid_b, p1, p2).map_err(err)?;
    let (rtl_b, etl_b) = assign_roles(&ebid_b, &ebid_a, p1, p2).map_err(err)?;
    if rtl_a != etl_b || rtl_b != etl_a {
        return Err(VectorError::Mismatch {
            line: v.line,
            field: "roles".into(),
            expected: "complementary".into(),
            actual: "overlapping".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            parse_vectors("rsa n=zz"),
            Err(VectorError::Parse { line: 1, .. })
        ));
        assert!(matches!(parse_vectors("rsa n"), Err(VectorError::Parse { .. })));
        let v = parse_vectors("bogus a=00").unwrap();
        assert!(check_vector(&v[0]).is_err());
    }

    #[test]
    fn detects_wrong_expectation() {
        let v = parse_vectors("rsa n=21 e=03 d=07 h=04 c=02 blinded=20 rep=20 sigma=11").unwrap();
        assert!(matches!(check_vector(&v[0]), Err(VectorError::Mismatch { field, .. }) if field == "sigma"));
    }
}
