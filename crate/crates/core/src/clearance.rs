//! The clearance center: registries, the clearance decision and the debit
//! ledger.

use std::collections::{BTreeMap, BTreeSet};

use parking_lot::{Mutex, RwLock};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::codec::{canonical_decode, canonical_encode, Canonical, Decode, DecodeError, Encode, Reader, Writer};
use crate::envelope::{open_value, verify_value, KeyPair, PublicKey};
use crate::messages::{
    build_ticket_response, parse_clearance_request, ClearanceInner, ClearanceQuery, ClearanceRequest,
    ClearanceResponse, ClearanceVerdict, DebitCommit, DebitOutcome, DebitResult, DebitResultBody, Failure,
    FailureCode, OrgClaim, TicketGrant,
};
use crate::modifier::{eval_at_clearance, Debit, Layer, Modifier, Outcome, Quantity};
use crate::tags;
use crate::token::{
    agreement_lookup, enrollment_closure, AgreementError, Enrollment, ImplicationMap, NodeId, OrgId, ServiceAgreement,
    Token,
};

pub const DEFAULT_TRANSACTION_TIMEOUT: u64 = 120;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistrationError {
    #[error(transparent)]
    Agreement(#[from] AgreementError),
    #[error("agreement is for {found}, not {expected}")]
    OrgMismatch { expected: OrgId, found: OrgId },
    #[error("implication {from} -> {to} leaves organization {org}")]
    ForeignImplication { from: Enrollment, to: Enrollment, org: OrgId },
}

/// One debit modifier's budget. `index` is the position in the
/// enrollment's modifier list, or in [`crate::token::Grant::layer_modifiers`]
/// for the agreement layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DebitSlot {
    pub layer: Layer,
    pub enrollment: Enrollment,
    pub ticket: Token,
    pub index: u32,
}

impl Encode for DebitSlot {
    fn encode(&self, w: &mut Writer) {
        w.u8(match self.layer {
            Layer::Enrollment => 0,
            Layer::Agreement => 1,
            Layer::Server => 2,
        });
        w.put(&self.enrollment);
        w.put(&self.ticket);
        w.u32(self.index);
    }
}

impl Decode for DebitSlot {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let layer = match r.u8()? {
            0 => Layer::Enrollment,
            1 => Layer::Agreement,
            value => return Err(DecodeError::BadDiscriminant { value, name: "DebitSlot" }),
        };
        Ok(Self {
            layer,
            enrollment: r.get()?,
            ticket: r.get()?,
            index: r.u32()?,
        })
    }
}

/// A transaction awaiting its debit commit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PendingDebit {
    pub server: NodeId,
    pub ticket: Token,
    /// Each slot with the balance to start from if the ledger has none.
    pub slots: Vec<(DebitSlot, Quantity)>,
    pub created: u64,
}

impl Encode for PendingDebit {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.server);
        w.put(&self.ticket);
        w.u32(self.slots.len() as u32);
        for s in &self.slots {
            w.put(s);
        }
        w.u64(self.created);
    }
}

impl Decode for PendingDebit {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let server = r.get()?;
        let ticket = r.get()?;
        let n = r.u32()? as usize;
        let mut slots = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            slots.push(r.get()?);
        }
        Ok(Self {
            server,
            ticket,
            slots,
            created: r.u64()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrgRecord {
    pub key: PublicKey,
    pub implications: ImplicationMap,
    pub agreement: ServiceAgreement,
}

impl Encode for OrgRecord {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.key);
        w.put(&self.implications);
        w.put(&self.agreement);
    }
}

impl Decode for OrgRecord {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            key: r.get()?,
            implications: r.get()?,
            agreement: r.get()?,
        })
    }
}

#[derive(Debug, Default)]
struct Ledger {
    balances: BTreeMap<DebitSlot, Quantity>,
    pending: BTreeMap<Token, PendingDebit>,
}

impl Ledger {
    fn gc(&mut self, now: u64, timeout: u64) {
        self.pending.retain(|_, p| p.created.saturating_add(timeout) >= now);
    }

    fn balance(&self, slot: &DebitSlot, initial: Quantity) -> Quantity {
        self.balances.get(slot).copied().unwrap_or(initial)
    }
}

/// Everything the clearance center persists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClearanceSnapshot {
    pub id: NodeId,
    pub keys: KeyPair,
    pub timeout: u64,
    pub orgs: BTreeMap<OrgId, OrgRecord>,
    pub servers: BTreeMap<NodeId, PublicKey>,
    pub balances: BTreeMap<DebitSlot, Quantity>,
    pub pending: BTreeMap<Token, PendingDebit>,
}

impl Encode for ClearanceSnapshot {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::CLEARANCE_SNAPSHOT);
        w.put(&self.id);
        w.put(&self.keys);
        w.u64(self.timeout);
        w.map(&self.orgs);
        w.map(&self.servers);
        w.map(&self.balances);
        w.map(&self.pending);
    }
}

impl Decode for ClearanceSnapshot {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::CLEARANCE_SNAPSHOT, "ClearanceSnapshot")?;
        Ok(Self {
            id: r.get()?,
            keys: r.get()?,
            timeout: r.u64()?,
            orgs: r.map()?,
            servers: r.map()?,
            balances: r.map()?,
            pending: r.map()?,
        })
    }
}

impl Canonical for ClearanceSnapshot {
    const TAG: u8 = tags::CLEARANCE_SNAPSHOT;
    const NAME: &'static str = "ClearanceSnapshot";
}

fn effective_remaining(m: &Modifier, remaining: Quantity) -> Modifier {
    match m {
        Modifier::Debit(d) => Modifier::Debit(Debit { remaining, ..d.clone() }),
        other => other.clone(),
    }
}

pub struct ClearanceCenter {
    id: NodeId,
    keys: KeyPair,
    timeout: u64,
    orgs: RwLock<BTreeMap<OrgId, OrgRecord>>,
    servers: RwLock<BTreeMap<NodeId, PublicKey>>,
    ledger: Mutex<Ledger>,
    rng: Mutex<ChaCha20Rng>,
}

impl std::fmt::Debug for ClearanceCenter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClearanceCenter").field("id", &self.id).finish_non_exhaustive()
    }
}

impl ClearanceCenter {
    pub fn new(id: NodeId, keys: KeyPair, seed: u64) -> Self {
        Self {
            id,
            keys,
            timeout: DEFAULT_TRANSACTION_TIMEOUT,
            orgs: RwLock::new(BTreeMap::new()),
            servers: RwLock::new(BTreeMap::new()),
            ledger: Mutex::new(Ledger::default()),
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
        }
    }

    pub fn with_timeout(mut self, timeout: u64) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn id(&self) -> &NodeId {
        &self.id
    }

    pub fn public_key(&self) -> PublicKey {
        self.keys.public_key()
    }

    /// A ticket token minted by this center.
    pub fn mint_ticket(&self, name: &str) -> Token {
        Token::named(self.id.creator(), name).expect("ticket name within token limits")
    }

    /// Install or replace an organization's key, implications and agreement.
    /// Debit balances for the organization restart from the registered
    /// modifiers.
    pub fn register_agreement(
        &self,
        org: OrgId,
        org_key: PublicKey,
        implications: ImplicationMap,
        agreement: ServiceAgreement,
    ) -> Result<(), RegistrationError> {
        if agreement.consumer_org != org {
            return Err(RegistrationError::OrgMismatch {
                expected: org,
                found: agreement.consumer_org,
            });
        }
        agreement.validate(self.id.creator())?;
        if let Some((a, b)) = implications.edges().find(|(a, b)| a.org() != &org || b.org() != &org) {
            return Err(RegistrationError::ForeignImplication {
                from: a.clone(),
                to: b.clone(),
                org,
            });
        }
        let mut orgs = self.orgs.write();
        let mut ledger = self.ledger.lock();
        ledger.balances.retain(|slot, _| slot.enrollment.org() != &org);
        orgs.insert(
            org,
            OrgRecord {
                key: org_key,
                implications,
                agreement,
            },
        );
        Ok(())
    }

    pub fn register_server(&self, server: NodeId, key: PublicKey) {
        self.servers.write().insert(server, key);
    }

    pub fn org(&self, org: &OrgId) -> Option<OrgRecord> {
        self.orgs.read().get(org).cloned()
    }

    pub fn balance(&self, slot: &DebitSlot) -> Option<Quantity> {
        self.ledger.lock().balances.get(slot).copied()
    }

    pub fn balances(&self) -> BTreeMap<DebitSlot, Quantity> {
        self.ledger.lock().balances.clone()
    }

    pub fn pending_count(&self) -> usize {
        self.ledger.lock().pending.len()
    }

    pub fn correlator_gc(&self, now: u64) {
        self.ledger.lock().gc(now, self.timeout);
    }

    /// Handle a message from a server: a clearance request or a debit
    /// commit. Undecodable input gets a plain `Malformed`.
    pub fn receive(&self, bytes: &[u8], now: u64) -> Vec<u8> {
        match crate::codec::peek_tag(bytes) {
            Ok(tags::DEBIT_COMMIT) => match canonical_decode::<DebitCommit>(bytes) {
                Ok(msg) => canonical_encode(&self.debit_commit(&msg, now)),
                Err(e) => canonical_encode(&DebitResult::Plain(e.into())),
            },
            _ => match canonical_decode::<ClearanceRequest>(bytes) {
                Ok(msg) => canonical_encode(&self.clear(&msg, now)),
                Err(e) => canonical_encode(&ClearanceResponse::Plain(e.into())),
            },
        }
    }

    pub fn clear(&self, msg: &ClearanceRequest, now: u64) -> ClearanceResponse {
        let servers = self.servers.read();
        let (query, server_key) = match parse_clearance_request(&self.keys, &servers, msg) {
            Ok(v) => v,
            Err(f) => return ClearanceResponse::Plain(f),
        };
        drop(servers);
        let verdict = self.decide(&query, now);
        build_ticket_response(
            &self.keys,
            &self.id,
            &query.server,
            &server_key,
            &verdict,
            &mut *self.rng.lock(),
        )
    }

    /// The clearance decision for an authenticated query. Allocates a
    /// correlator when the grant carries debits.
    pub fn decide(&self, query: &ClearanceQuery, now: u64) -> ClearanceVerdict {
        let request_digest = query.clearance.digest();
        let deny = |code: FailureCode, detail: &str, subject| ClearanceVerdict::Denied {
            failure: Failure::new(code, detail),
            subject,
            request_digest,
        };

        let inner: ClearanceInner = match open_value(&self.keys, &query.clearance.0) {
            Ok(i) => i,
            Err(e) => return deny(FailureCode::Malformed, &e.to_string(), None),
        };
        let subject = Some(inner.subject.clone());
        let claim: OrgClaim = match verify_value(inner.subject.key(), &inner.claim) {
            Ok(c) => c,
            Err(e) => {
                let f = Failure::from(e);
                return deny(f.code, "claim not signed by the presented key", subject);
            }
        };
        let orgs = self.orgs.read();
        let Some(record) = orgs.get(&claim.org) else {
            return deny(FailureCode::UnknownOrg, "organization not registered", subject);
        };
        let body = match claim.certificate.verify(&record.key) {
            Ok(b) => b,
            Err(e) => {
                let f = Failure::from(e);
                return deny(f.code, "certificate not signed by the organization", subject);
            }
        };
        if body.issuer != claim.org {
            return deny(FailureCode::BadSignature, "certificate issued by another organization", subject);
        }
        if body.subject != inner.subject {
            return deny(FailureCode::BadSignature, "certificate bound to another key", subject);
        }
        if now > body.expiry {
            return deny(FailureCode::Expired, "certificate expired", subject);
        }

        let certified: BTreeSet<Enrollment> = body
            .enrollments
            .iter()
            .filter(|e| e.org() == &claim.org)
            .cloned()
            .collect();
        let closed = enrollment_closure(&certified, &record.implications);
        let Some(found) = agreement_lookup(&record.agreement, &closed, &query.candidates) else {
            return deny(FailureCode::NotAuthorized, "enrollments do not authorize any candidate", subject);
        };
        let ticket = found.grant.ticket.token.clone();

        let mut enrollment_layer: Vec<(DebitSlot, Modifier)> = Vec::new();
        for (source, reached) in record.implications.reach_by_root(&certified) {
            if !reached.contains(&found.enrollment) {
                continue;
            }
            for (i, m) in body.modifiers_of(&source).iter().enumerate() {
                let slot = DebitSlot {
                    layer: Layer::Enrollment,
                    enrollment: source.clone(),
                    ticket: ticket.clone(),
                    index: i as u32,
                };
                enrollment_layer.push((slot, m.clone()));
            }
        }
        let agreement_layer: Vec<(DebitSlot, Modifier)> = found
            .grant
            .layer_modifiers()
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                let slot = DebitSlot {
                    layer: Layer::Agreement,
                    enrollment: found.enrollment.clone(),
                    ticket: ticket.clone(),
                    index: i as u32,
                };
                (slot, m)
            })
            .collect();
        drop(orgs);

        let mut ledger = self.ledger.lock();
        ledger.gc(now, self.timeout);
        let mut debit_slots = Vec::new();
        let mut other_failed = false;
        let mut debit_failed = false;
        let mut effective = |layer: &[(DebitSlot, Modifier)]| -> Vec<Modifier> {
            layer
                .iter()
                .map(|(slot, m)| {
                    let m = match m.as_debit() {
                        Some(d) => {
                            let bal = ledger.balance(slot, d.remaining);
                            debit_slots.push((slot.clone(), d.remaining));
                            effective_remaining(m, bal)
                        }
                        None => m.clone(),
                    };
                    if eval_at_clearance(&m, now) == Outcome::Fail {
                        if m.is_debit() {
                            debit_failed = true;
                        } else {
                            other_failed = true;
                        }
                    }
                    m
                })
                .collect()
        };
        let enrollment_modifiers = effective(&enrollment_layer);
        let agreement_modifiers = effective(&agreement_layer);
        if other_failed {
            return deny(FailureCode::ModifierDenied, "modifier not satisfied at clearance", subject);
        }
        if debit_failed {
            return deny(FailureCode::DebitExhausted, "budget exhausted", subject);
        }
        let correlator = if debit_slots.is_empty() {
            None
        } else {
            let mut value = [0u8; 16];
            self.rng.lock().fill_bytes(&mut value);
            let c = Token::new(self.id.creator(), value.to_vec(), "").expect("16-byte token");
            ledger.pending.insert(
                c.clone(),
                PendingDebit {
                    server: query.server.clone(),
                    ticket: ticket.clone(),
                    slots: debit_slots,
                    created: now,
                },
            );
            Some(c)
        };

        ClearanceVerdict::Granted(TicketGrant {
            ticket: found.grant.ticket,
            enrollment_modifiers,
            agreement_modifiers,
            subject: inner.subject,
            correlator,
            request_digest,
        })
    }

    pub fn debit_commit(&self, msg: &DebitCommit, now: u64) -> DebitResult {
        let servers = self.servers.read();
        let (body, server_key) = match msg.open(&self.keys, &servers) {
            Ok(v) => v,
            Err(f) => return DebitResult::Plain(f),
        };
        drop(servers);
        let outcome = match self.commit_correlator(&body.server, &body.correlator, &body.ticket, body.amount, now) {
            Ok(()) => DebitOutcome::Proceed,
            Err(f) => DebitOutcome::Denied(f),
        };
        let result = DebitResultBody {
            correlator: body.correlator,
            outcome,
        };
        DebitResult::build(
            &self.keys,
            &self.id,
            &result,
            &body.server,
            &server_key,
            &mut *self.rng.lock(),
        )
    }

    /// Apply `amount` to every budget of a pending transaction, all or
    /// nothing. The correlator is consumed only on success.
    pub fn commit_correlator(
        &self,
        server: &NodeId,
        correlator: &Token,
        ticket: &Token,
        amount: Quantity,
        now: u64,
    ) -> Result<(), Failure> {
        if !amount.is_positive() {
            return Err(Failure::malformed("debit amount must be positive"));
        }
        let mut ledger = self.ledger.lock();
        ledger.gc(now, self.timeout);
        let pending = ledger
            .pending
            .get(correlator)
            .ok_or_else(|| Failure::malformed("unknown, expired or used correlator"))?;
        if &pending.server != server || &pending.ticket != ticket {
            return Err(Failure::malformed("correlator belongs to another transaction"));
        }
        let mut updates = Vec::with_capacity(pending.slots.len());
        for (slot, initial) in &pending.slots {
            let next = ledger
                .balance(slot, *initial)
                .checked_sub(amount)
                .ok_or_else(|| Failure::new(FailureCode::DebitExhausted, "budget cannot cover the debit"))?;
            updates.push((slot.clone(), next));
        }
        ledger.balances.extend(updates);
        ledger.pending.remove(correlator);
        Ok(())
    }

    pub fn snapshot(&self) -> ClearanceSnapshot {
        let orgs = self.orgs.read();
        let servers = self.servers.read();
        let ledger = self.ledger.lock();
        ClearanceSnapshot {
            id: self.id.clone(),
            keys: self.keys.clone(),
            timeout: self.timeout,
            orgs: orgs.clone(),
            servers: servers.clone(),
            balances: ledger.balances.clone(),
            pending: ledger.pending.clone(),
        }
    }

    pub fn restore(snapshot: ClearanceSnapshot, seed: u64) -> Self {
        Self {
            id: snapshot.id,
            keys: snapshot.keys,
            timeout: snapshot.timeout,
            orgs: RwLock::new(snapshot.orgs),
            servers: RwLock::new(snapshot.servers),
            ledger: Mutex::new(Ledger {
                balances: snapshot.balances,
                pending: snapshot.pending,
            }),
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
        }
    }
}
