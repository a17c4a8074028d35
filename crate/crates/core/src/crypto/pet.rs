//! Private encounter tokens and the role rule that splits them between the
//! request list and the exposure list.

use std::fmt;

use sha2::{Digest, Sha256};

use super::group::Ebid;
use super::CryptoError;

/// SHA-256 output identifying one encounter in one role.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PetToken(pub [u8; 32]);

impl PetToken {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for PetToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pet({})", hex::encode(&self.0[..8]))
    }
}

const ROLE_ONE: u8 = b'1';
const ROLE_TWO: u8 = b'2';

fn tagged_hash(tag: u8, shared: &[u8]) -> PetToken {
    let mut h = Sha256::new();
    h.update([tag]);
    h.update(shared);
    PetToken(h.finalize().into())
}

/// `(H(0x31 || shared), H(0x32 || shared))`.
pub fn derive_pet_pair(shared: &[u8]) -> (PetToken, PetToken) {
    (tagged_hash(ROLE_ONE, shared), tagged_hash(ROLE_TWO, shared))
}

/// Returns `(rtl_pet, etl_pet)`. The party with the lexicographically greater
/// EBID keeps PET^1 for requests; its peer ends up with the mirror image.
pub fn assign_roles(
    mine: &Ebid,
    peer: &Ebid,
    pet1: PetToken,
    pet2: PetToken,
) -> Result<(PetToken, PetToken), CryptoError> {
    match mine.cmp(peer) {
        std::cmp::Ordering::Greater => Ok((pet1, pet2)),
        std::cmp::Ordering::Less => Ok((pet2, pet1)),
        std::cmp::Ordering::Equal => Err(CryptoError::SelfEncounter),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ebid(first: u8) -> Ebid {
        let mut b = [0u8; 32];
        b[0] = first;
        Ebid(b)
    }

    #[test]
    fn greater_ebid_keeps_pet1_for_requests() {
        let (p1, p2) = derive_pet_pair(b"shared");
        assert_eq!(assign_roles(&ebid(2), &ebid(1), p1, p2).unwrap(), (p1, p2));
        assert_eq!(assign_roles(&ebid(1), &ebid(2), p1, p2).unwrap(), (p2, p1));
        assert_eq!(
            assign_roles(&ebid(1), &ebid(1), p1, p2),
            Err(CryptoError::SelfEncounter)
        );
    }

    #[test]
    fn pet_pair_is_deterministic_and_distinct() {
        let a = derive_pet_pair(&[0, 0, 0, 18]);
        let b = derive_pet_pair(&[0, 0, 0, 18]);
        assert_eq!(a, b);
        assert_ne!(a.0, a.1);
    }
}
