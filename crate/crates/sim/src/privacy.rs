//! Transcript scan for the marker scheme: checks which recipient each
//! sensitive value is sealed to wherever it appears on the wire.

use std::collections::BTreeSet;

use incognito_core::codec::to_field_bytes;
use incognito_core::envelope::{marker, PublicKey};
use incognito_core::server::ResourceKind;
use serde::Serialize;

use crate::harness::{Harness, Note, RequestRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub seq: u64,
    pub what: String,
    /// Who could read it: a recipient fingerprint in hex, or "plaintext".
    pub readable_by: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PrivacyReport {
    pub needles: usize,
    pub occurrences: usize,
    pub violations: Vec<Violation>,
}

impl PrivacyReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

fn find_all(hay: &[u8], needle: &[u8]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return Vec::new();
    }
    hay.windows(needle.len())
        .enumerate()
        .filter(|(_, w)| *w == needle)
        .map(|(i, _)| i)
        .collect()
}

/// Recipient of the smallest sealed region holding `[start, start+len)`.
fn innermost(regions: &[marker::Region], start: usize, len: usize) -> Option<[u8; 8]> {
    regions
        .iter()
        .filter(|r| r.contains(start, len))
        .min_by_key(|r| r.end - r.start)
        .map(|r| r.recipient)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Clearance,
    Server,
    UserKey,
}

struct Needle {
    what: String,
    bytes: Vec<u8>,
    allowed: Vec<[u8; 8]>,
    roles: Vec<Role>,
}

fn needles(h: &Harness, rec: &RequestRecord) -> Vec<Needle> {
    let Some(sent) = &rec.sent else {
        return Vec::new();
    };
    let c = rec.clearance_key.fingerprint();
    let s = rec.server_key.fingerprint();
    let u = sent.subject.key().fingerprint();
    let mut out = vec![
        Needle {
            what: format!("org of {}", rec.user),
            bytes: to_field_bytes(&sent.org),
            allowed: vec![c],
            roles: vec![Role::Clearance],
        },
        Needle {
            what: format!("certificate of {}", rec.user),
            bytes: to_field_bytes(&sent.certificate),
            allowed: vec![c],
            roles: vec![Role::Clearance],
        },
        Needle {
            what: format!("tau of {}", rec.user),
            bytes: to_field_bytes(&sent.tau),
            allowed: vec![s],
            roles: vec![Role::Server],
        },
        Needle {
            what: format!("resource requested by {}", rec.user),
            bytes: to_field_bytes(&sent.resource),
            allowed: vec![s],
            roles: vec![Role::Server],
        },
    ];
    for e in &sent.enrollments {
        out.push(Needle {
            what: format!("enrollment {e} of {}", rec.user),
            bytes: to_field_bytes(e),
            allowed: vec![c],
            roles: vec![Role::Clearance],
        });
    }
    if !sent.params.is_empty() {
        out.push(Needle {
            what: format!("parameters of {}", rec.user),
            bytes: to_field_bytes(&sent.params),
            // Echo sends them back to the user.
            allowed: vec![s, u],
            roles: vec![Role::Server, Role::UserKey],
        });
    }
    let kind = h
        .server(&rec.server)
        .ok()
        .and_then(|sv| sv.resource(&sent.resource))
        .map(|r| r.kind.clone());
    if let Ok(answer) = &rec.result {
        // Counter values are short integers that collide with unrelated
        // fields, and echo answers are the parameters already searched.
        let searched = matches!(kind, Some(ResourceKind::Document(_)));
        if answer.len() >= 8 && searched {
            out.push(Needle {
                what: format!("answer to {}", rec.user),
                bytes: answer.clone(),
                allowed: vec![u],
                roles: vec![Role::UserKey],
            });
        }
    }
    out
}

/// Check every honest request's sensitive values against the transcript.
/// Inside the request's own messages a value must be sealed to exactly the
/// party it is meant for. Elsewhere the same value may legitimately travel
/// in another request (the same org at another center, the same document
/// to another user), so only the kind of party is checked there.
pub fn scan(h: &Harness) -> PrivacyReport {
    let t = h.transcript();
    let centers: BTreeSet<[u8; 8]> = h.centers().map(|(_, c)| c.public_key().fingerprint()).collect();
    let servers: BTreeSet<[u8; 8]> = h.servers().map(|(_, s)| s.public_key().fingerprint()).collect();
    let role = |fp: &[u8; 8]| {
        if centers.contains(fp) {
            Role::Clearance
        } else if servers.contains(fp) {
            Role::Server
        } else {
            Role::UserKey
        }
    };
    let mut report = PrivacyReport::default();
    let blobs: Vec<(u64, Vec<u8>, Vec<marker::Region>)> = t
        .entries
        .iter()
        .flat_map(|e| {
            let mut v = vec![(e.seq, e.bytes.clone())];
            if let Some(r) = &e.reply {
                v.push((e.seq, r.clone()));
            }
            v
        })
        .map(|(seq, b)| {
            let regions = marker::regions(&b);
            (seq, b, regions)
        })
        .collect();
    for rec in h.requests() {
        for n in needles(h, &rec) {
            report.needles += 1;
            for (seq, bytes, regions) in &blobs {
                for at in find_all(bytes, &n.bytes) {
                    report.occurrences += 1;
                    let who = innermost(regions, at, n.bytes.len());
                    let own = (rec.first_seq..rec.end_seq).contains(seq);
                    let ok = who.is_some_and(|w| {
                        if own {
                            n.allowed.contains(&w)
                        } else {
                            n.roles.contains(&role(&w))
                        }
                    });
                    if !ok {
                        report.violations.push(Violation {
                            seq: *seq,
                            what: n.what.clone(),
                            readable_by: who.map_or_else(|| "plaintext".to_string(), hex::encode),
                        });
                    }
                }
            }
        }
    }
    report
}

/// Ephemeral keys reused across requests: each element is a key seen in
/// more than one request's messages.
pub fn linked_keys(h: &Harness) -> Vec<PublicKey> {
    let t = h.transcript();
    let recs: Vec<RequestRecord> = h.requests().into_iter().filter(|r| r.sent.is_some()).collect();
    let mut linked = BTreeSet::new();
    for rec in &recs {
        let Some(key) = &rec.user_key else { continue };
        let needle = key.as_bytes();
        let fp = key.fingerprint();
        let seen_in: BTreeSet<usize> = recs
            .iter()
            .enumerate()
            .filter(|(_, other)| {
                t.entries[other.first_seq as usize..other.end_seq as usize]
                    .iter()
                    .filter(|e| e.note == Note::Honest)
                    .any(|e| {
                        let hit = |b: &[u8]| {
                            !find_all(b, needle).is_empty() || marker::regions(b).iter().any(|r| r.recipient == fp)
                        };
                        hit(&e.bytes) || e.reply.as_deref().is_some_and(hit)
                    })
            })
            .map(|(i, _)| i)
            .collect();
        if seen_in.len() > 1 {
            linked.insert(key.clone());
        }
    }
    linked.into_iter().collect()
}
