//! Post-run audits over what the server saw and what it stores.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::crypto::{decrypt_entry, EntryKey, PetToken};
use crate::server::{entry_aad, parse_id_table, EntryFields, KeyAudit, Server, ServerTranscript};
use crate::wire::UserId;

use super::harness::derive_seed;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }

    pub fn label(&self) -> &'static str {
        if self.pass {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditResults {
    pub unlinkability: Verdict,
    pub key_amnesia: Verdict,
    pub match_once: Verdict,
    pub breach: Verdict,
}

impl AuditResults {
    pub fn all_pass(&self) -> bool {
        self.iter().all(|(_, v)| v.pass)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Verdict)> {
        [
            ("unlinkability", &self.unlinkability),
            ("key_amnesia", &self.key_amnesia),
            ("match_once", &self.match_once),
            ("breach", &self.breach),
        ]
        .into_iter()
    }
}

/// Requests and uploads attributed to their true senders. The server never
/// holds this; the harness does.
#[derive(Clone, Debug, Default)]
pub struct LinkabilityView {
    pub requests: Vec<(usize, Vec<PetToken>)>,
    pub uploads: Vec<(usize, PetToken)>,
}

/// PASS iff no device queries with a token it also uploaded, and no token
/// shows up in queries from two different devices.
pub fn audit_linkability(view: &LinkabilityView) -> Verdict {
    let mut uploaded: BTreeMap<usize, BTreeSet<PetToken>> = BTreeMap::new();
    for (d, pet) in &view.uploads {
        uploaded.entry(*d).or_default().insert(*pet);
    }
    let mut askers: BTreeMap<PetToken, usize> = BTreeMap::new();
    let mut self_overlap = 0usize;
    let mut shared = BTreeSet::new();
    for (d, tokens) in &view.requests {
        let own = uploaded.get(d);
        for t in tokens {
            if own.is_some_and(|s| s.contains(t)) {
                self_overlap += 1;
            }
            match askers.insert(*t, *d) {
                Some(other) if other != *d => {
                    shared.insert(*t);
                }
                _ => {}
            }
        }
    }
    Verdict::new(
        self_overlap == 0 && shared.is_empty(),
        format!(
            "{} requests, {} uploads, {self_overlap} request tokens uploaded by the same device, {} tokens queried by several devices",
            view.requests.len(),
            view.uploads.len(),
            shared.len()
        ),
    )
}

/// PASS iff the server holds no entry key now and never held one past the
/// end of a message.
pub fn audit_key_amnesia(audit: &KeyAudit, violations: usize) -> Verdict {
    let live = audit.live();
    Verdict::new(
        live == 0 && violations == 0,
        format!(
            "{live} keys retained, {violations} messages left a key behind, {} leases total",
            audit.total_leased()
        ),
    )
}

/// PASS iff no exposure token was matched more often than it was uploaded.
pub fn audit_match_once(transcript: &ServerTranscript) -> Verdict {
    let mut uploads: BTreeMap<PetToken, usize> = BTreeMap::new();
    for p in &transcript.uploads {
        *uploads.entry(*p).or_default() += 1;
    }
    let mut matches: BTreeMap<PetToken, usize> = BTreeMap::new();
    for p in &transcript.matches {
        *matches.entry(*p).or_default() += 1;
    }
    let over = matches
        .iter()
        .filter(|(p, n)| **n > uploads.get(*p).copied().unwrap_or(0))
        .count();
    Verdict::new(
        over == 0,
        format!(
            "{} matches, {over} tokens matched more often than uploaded",
            transcript.matches.len()
        ),
    )
}

/// Decrypts one stored entry with its key.
pub fn open_entry(server: &Server, id: UserId, ek: &EntryKey) -> Option<EntryFields> {
    let blob = server.entry_ciphertext(id)?;
    let plain = decrypt_entry(ek, &entry_aad(id), blob).ok()?;
    EntryFields::decode(&plain).ok()
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

/// Checks an IDTable dump: no entry opens without its key, and no plaintext
/// field of any known entry appears in the dump. `keys` are the entry keys
/// the devices hold.
pub fn audit_breach(server: &Server, keys: &[(UserId, EntryKey)], seed: u64) -> Verdict {
    let dump = server.id_table_snapshot();
    let table = match parse_id_table(&dump) {
        Ok(t) => t,
        Err(e) => return Verdict::new(false, format!("unreadable snapshot: {e}")),
    };
    let mut rng = ChaCha20Rng::from_seed(derive_seed(seed, "breach-audit", 0));
    let guess = EntryKey::generate(&mut rng);
    let opened = table
        .iter()
        .filter(|(id, blob)| decrypt_entry(&guess, &entry_aad(**id), blob).is_ok())
        .count();

    let mut markers: Vec<Vec<u8>> = Vec::new();
    for (id, ek) in keys {
        let Some(fields) = open_entry(server, *id, ek) else {
            continue;
        };
        let plain = fields.encode();
        markers.push(plain.clone());
        markers.push(plain[..9].to_vec());
        if fields.ers != 0.0 {
            markers.push(fields.ers.to_be_bytes().to_vec());
        }
        for e in fields.lepm.iter().filter(|e| e.exposure.duration_sec != 0) {
            let mut m = e.exposure.day.to_be_bytes().to_vec();
            m.extend_from_slice(&e.exposure.duration_sec.to_be_bytes());
            markers.push(m);
        }
    }
    let leaked = markers.iter().filter(|m| contains(&dump, m)).count();
    Verdict::new(
        opened == 0 && leaked == 0,
        format!(
            "{} entries, {opened} opened without their key, {leaked} of {} plaintext markers found",
            table.len(),
            markers.len()
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pet(b: u8) -> PetToken {
        PetToken([b; 32])
    }

    #[test]
    fn empty_run_passes_vacuously() {
        assert!(audit_linkability(&LinkabilityView::default()).pass);
    }

    #[test]
    fn flags_own_uploads_and_shared_tokens() {
        let honest = LinkabilityView {
            requests: vec![(0, vec![pet(1)]), (1, vec![pet(2)])],
            uploads: vec![(1, pet(1))],
        };
        assert!(audit_linkability(&honest).pass);

        let own = LinkabilityView {
            requests: vec![(0, vec![pet(1)])],
            uploads: vec![(0, pet(1))],
        };
        assert!(!audit_linkability(&own).pass);

        let shared = LinkabilityView {
            requests: vec![(0, vec![pet(3)]), (1, vec![pet(3)])],
            uploads: vec![],
        };
        assert!(!audit_linkability(&shared).pass);

        let repeat = LinkabilityView {
            requests: vec![(0, vec![pet(3)]), (0, vec![pet(3)])],
            uploads: vec![],
        };
        assert!(audit_linkability(&repeat).pass);
    }

    #[test]
    fn match_once_counts_against_uploads() {
        let mut t = ServerTranscript {
            uploads: vec![pet(1)],
            matches: vec![pet(1)],
            ..Default::default()
        };
        assert!(audit_match_once(&t).pass);
        t.matches.push(pet(1));
        assert!(!audit_match_once(&t).pass);
    }
}
