//! The resource server: ACL, replay cache, delegation to the clearance
//! center, final modifier evaluation and resource dispatch.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::{Mutex, RwLock};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::codec::{canonical_decode, canonical_encode, to_field_bytes, Canonical, Decode, DecodeError, Encode, Reader, Writer};
use crate::envelope::{seal_value, EphemeralPublicKey, KeyPair, PublicKey};
use crate::messages::{
    build_answer, build_clearance_request, parse_request, verify_tau, verify_ticket_response, ClearanceQuery,
    ClearanceResponse, ClearanceVerdict, ConfirmReply, ConfirmRequest, DebitCommit, DebitCommitBody, DebitNotice,
    DebitOutcome, DebitResult, Failure, FailureCode, Params, ParsedRequest, RequestEnvelope, ServerReply, Tau,
    TicketGrant,
};
use crate::modifier::{compose_modifiers, EvalContext, Evaluation, Modifier, Outcome, Quantity};
use crate::tags;
use crate::token::{NodeId, Token};

pub const DEFAULT_REPLAY_WINDOW: u64 = 300;

/// Ticket `ticket` confers resource `resource`, subject to server-layer
/// modifiers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AclEntry {
    pub ticket: Token,
    pub resource: Token,
    pub modifiers: Vec<Modifier>,
}

impl AclEntry {
    pub fn new(ticket: Token, resource: Token) -> Self {
        Self {
            ticket,
            resource,
            modifiers: Vec::new(),
        }
    }

    pub fn with_modifiers(ticket: Token, resource: Token, modifiers: Vec<Modifier>) -> Self {
        Self {
            ticket,
            resource,
            modifiers,
        }
    }
}

impl Encode for AclEntry {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::ACL_ENTRY);
        w.put(&self.ticket);
        w.put(&self.resource);
        w.list(&self.modifiers);
    }
}

impl Decode for AclEntry {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::ACL_ENTRY, "AclEntry")?;
        Ok(Self {
            ticket: r.get()?,
            resource: r.get()?,
            modifiers: r.list()?,
        })
    }
}

impl Canonical for AclEntry {
    const TAG: u8 = tags::ACL_ENTRY;
    const NAME: &'static str = "AclEntry";
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Acl {
    pub entries: BTreeSet<AclEntry>,
}

impl Acl {
    pub fn new(entries: impl IntoIterator<Item = AclEntry>) -> Self {
        Self {
            entries: entries.into_iter().collect(),
        }
    }

    /// Tickets that would be sufficient for `resource`.
    pub fn candidate_tickets(&self, resource: &Token) -> BTreeSet<Token> {
        self.entries
            .iter()
            .filter(|e| &e.resource == resource)
            .map(|e| e.ticket.clone())
            .collect()
    }

    pub fn entries_for<'a>(&'a self, ticket: &'a Token, resource: &'a Token) -> impl Iterator<Item = &'a AclEntry> {
        self.entries
            .iter()
            .filter(move |e| &e.ticket == ticket && &e.resource == resource)
    }
}

impl Encode for Acl {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::ACL);
        w.set(&self.entries);
    }
}

impl Decode for Acl {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::ACL, "Acl")?;
        Ok(Self { entries: r.set()? })
    }
}

impl Canonical for Acl {
    const TAG: u8 = tags::ACL;
    const NAME: &'static str = "Acl";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayVerdict {
    Accept,
    Reject,
}

/// Nonces seen within the window, keyed to their timestamps.
#[derive(Debug, Clone)]
pub struct ReplayCache {
    window: u64,
    entries: HashMap<[u8; 16], u64>,
    by_time: BTreeSet<(u64, [u8; 16])>,
}

impl ReplayCache {
    pub fn new(window: u64) -> Self {
        Self {
            window,
            entries: HashMap::new(),
            by_time: BTreeSet::new(),
        }
    }

    pub fn window(&self) -> u64 {
        self.window
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, nonce: &[u8; 16]) -> bool {
        self.entries.contains_key(nonce)
    }

    /// Drop entries whose timestamp fell out of the window.
    pub fn evict(&mut self, now: u64) {
        let Some(cutoff) = now.checked_sub(self.window) else {
            return;
        };
        while let Some(&(ts, nonce)) = self.by_time.first() {
            if ts >= cutoff {
                break;
            }
            self.by_time.pop_first();
            self.entries.remove(&nonce);
        }
    }

    pub fn check(&mut self, tau: &Tau, now: u64) -> ReplayVerdict {
        self.evict(now);
        if tau.timestamp.abs_diff(now) > self.window || self.entries.contains_key(&tau.nonce) {
            return ReplayVerdict::Reject;
        }
        self.entries.insert(tau.nonce, tau.timestamp);
        self.by_time.insert((tau.timestamp, tau.nonce));
        ReplayVerdict::Accept
    }

    /// Oldest cached timestamp, if any.
    pub fn oldest(&self) -> Option<u64> {
        self.by_time.first().map(|(ts, _)| *ts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResourceKind {
    /// Answers with the canonical encoding of the request parameters.
    Echo,
    /// Increments a counter and answers with the new value.
    Counter,
    /// Answers with fixed bytes.
    Document(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resource {
    pub kind: ResourceKind,
    /// Amount charged against debit modifiers per use.
    pub debit_amount: Quantity,
}

impl Resource {
    pub fn new(kind: ResourceKind) -> Self {
        Self {
            kind,
            debit_amount: Quantity::ONE,
        }
    }

    pub fn with_debit(kind: ResourceKind, debit_amount: Quantity) -> Self {
        Self { kind, debit_amount }
    }
}

struct Hosted {
    resource: Resource,
    counter: AtomicU64,
}

/// How the server reaches its clearance center. `None` means no reply.
pub trait ClearanceLink {
    fn clear(&self, request: Vec<u8>) -> Option<Vec<u8>>;
    /// Debit commit; the C→S proceed travels back as the reply.
    fn commit(&self, commit: Vec<u8>) -> Option<Vec<u8>>;
}

/// Sends a confirmation ask to the user and returns the reply.
pub type ConfirmChannel<'a> = dyn FnMut(Vec<u8>) -> Option<Vec<u8>> + 'a;

/// Pipeline stages that can be forced to fail in mutation tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Parse,
    Replay,
    Candidates,
    ClearanceSignature,
    RequestBinding,
    TicketCandidate,
    TauSignature,
    Modifiers,
    Confirmation,
    DebitCommit,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::Parse,
        Stage::Replay,
        Stage::Candidates,
        Stage::ClearanceSignature,
        Stage::RequestBinding,
        Stage::TicketCandidate,
        Stage::TauSignature,
        Stage::Modifiers,
        Stage::Confirmation,
        Stage::DebitCommit,
    ];
}

/// What the server did with one incoming message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Disposition {
    Served { resource: Token, ticket: Token },
    Denied(Failure),
    /// Not a request; dropped without reply.
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Handled {
    pub reply: Option<Vec<u8>>,
    pub disposition: Disposition,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClearanceRef {
    pub id: NodeId,
    pub key: PublicKey,
}

pub struct ResourceServer {
    id: NodeId,
    keys: KeyPair,
    clearance: ClearanceRef,
    acl: RwLock<Acl>,
    replay: Mutex<ReplayCache>,
    resources: BTreeMap<Token, Hosted>,
    rng: Mutex<ChaCha20Rng>,
    served: AtomicU64,
    #[cfg(feature = "fault-injection")]
    faults: RwLock<BTreeSet<Stage>>,
}

impl std::fmt::Debug for ResourceServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResourceServer")
            .field("id", &self.id)
            .field("clearance", &self.clearance.id)
            .finish_non_exhaustive()
    }
}

/// Failure before the server knows whom to seal it to.
fn plain(failure: Failure) -> Handled {
    Handled {
        reply: Some(canonical_encode(&ServerReply::Failure(failure.clone()))),
        disposition: Disposition::Denied(failure),
    }
}

impl ResourceServer {
    pub fn new(id: NodeId, keys: KeyPair, clearance: ClearanceRef, replay_window: u64, seed: u64) -> Self {
        Self {
            id,
            keys,
            clearance,
            acl: RwLock::new(Acl::default()),
            replay: Mutex::new(ReplayCache::new(replay_window)),
            resources: BTreeMap::new(),
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
            served: AtomicU64::new(0),
            #[cfg(feature = "fault-injection")]
            faults: RwLock::new(BTreeSet::new()),
        }
    }

    pub fn id(&self) -> &NodeId {
        &self.id
    }

    pub fn public_key(&self) -> PublicKey {
        self.keys.public_key()
    }

    pub fn clearance(&self) -> &ClearanceRef {
        &self.clearance
    }

    pub fn add_resource(&mut self, id: Token, resource: Resource) {
        self.resources.insert(
            id,
            Hosted {
                resource,
                counter: AtomicU64::new(0),
            },
        );
    }

    pub fn resource_ids(&self) -> impl Iterator<Item = &Token> {
        self.resources.keys()
    }

    pub fn resource(&self, id: &Token) -> Option<&Resource> {
        self.resources.get(id).map(|h| &h.resource)
    }

    /// Replace the whole ACL.
    pub fn load_acl(&self, entries: impl IntoIterator<Item = AclEntry>) {
        *self.acl.write() = Acl::new(entries);
    }

    pub fn acl(&self) -> Acl {
        self.acl.read().clone()
    }

    pub fn candidate_tickets(&self, resource: &Token) -> BTreeSet<Token> {
        self.acl.read().candidate_tickets(resource)
    }

    pub fn replay_check(&self, tau: &Tau, now: u64) -> ReplayVerdict {
        self.replay.lock().check(tau, now)
    }

    pub fn replay_cache_len(&self) -> usize {
        self.replay.lock().len()
    }

    pub fn replay_cache_oldest(&self) -> Option<u64> {
        self.replay.lock().oldest()
    }

    pub fn counter(&self, resource: &Token) -> Option<u64> {
        self.resources
            .get(resource)
            .filter(|h| h.resource.kind == ResourceKind::Counter)
            .map(|h| h.counter.load(Ordering::SeqCst))
    }

    /// Number of answers delivered so far.
    pub fn served(&self) -> u64 {
        self.served.load(Ordering::SeqCst)
    }

    #[cfg(feature = "fault-injection")]
    pub fn inject_fault(&self, stage: Option<Stage>) {
        let mut f = self.faults.write();
        f.clear();
        f.extend(stage);
    }

    #[cfg(feature = "fault-injection")]
    fn passes(&self, stage: Stage, ok: bool) -> bool {
        ok && !self.faults.read().contains(&stage)
    }

    #[cfg(not(feature = "fault-injection"))]
    fn passes(&self, _stage: Stage, ok: bool) -> bool {
        ok
    }

    pub fn dispatch(&self, resource: &Token, params: &Params) -> Result<Vec<u8>, Failure> {
        let hosted = self
            .resources
            .get(resource)
            .ok_or_else(|| Failure::new(FailureCode::NotAuthorized, "no such resource"))?;
        Ok(match &hosted.resource.kind {
            ResourceKind::Echo => to_field_bytes(params),
            ResourceKind::Counter => {
                let v = hosted.counter.fetch_add(1, Ordering::SeqCst) + 1;
                v.to_be_bytes().to_vec()
            }
            ResourceKind::Document(bytes) => bytes.clone(),
        })
    }

    fn sealed_failure(&self, subject: &EphemeralPublicKey, failure: Failure) -> Handled {
        let sealed = seal_value(subject.key(), &failure, None, &mut *self.rng.lock());
        Handled {
            reply: Some(canonical_encode(&ServerReply::SealedFailure(sealed))),
            disposition: Disposition::Denied(failure),
        }
    }

    fn fresh_token(&self) -> Token {
        let mut value = [0u8; 16];
        rand::RngCore::fill_bytes(&mut *self.rng.lock(), &mut value);
        Token::new(self.id.creator(), value.to_vec(), "").expect("16-byte token")
    }

    /// Handle one message addressed to this server. Anything that is not a
    /// request envelope is ignored.
    pub fn receive(
        &self,
        bytes: &[u8],
        now: u64,
        link: &dyn ClearanceLink,
        confirm: &mut ConfirmChannel<'_>,
    ) -> Handled {
        match crate::codec::peek_tag(bytes) {
            Ok(tags::REQUEST_ENVELOPE) | Err(_) => self.handle_request(bytes, now, link, confirm),
            Ok(t) if crate::messages::tag_name(t).is_some() => Handled {
                reply: None,
                disposition: Disposition::Ignored,
            },
            Ok(_) => self.handle_request(bytes, now, link, confirm),
        }
    }

    pub fn handle_request(
        &self,
        bytes: &[u8],
        now: u64,
        link: &dyn ClearanceLink,
        confirm: &mut ConfirmChannel<'_>,
    ) -> Handled {
        let parsed = canonical_decode::<RequestEnvelope>(bytes)
            .map_err(Failure::from)
            .and_then(|env| parse_request(&self.keys, &env));
        let req = match parsed {
            Ok(r) if self.passes(Stage::Parse, true) => r,
            Ok(_) => return plain(Failure::malformed("request rejected at parse")),
            Err(f) => return plain(f),
        };

        let fresh = self.replay_check(&req.tau, now) == ReplayVerdict::Accept;
        if !self.passes(Stage::Replay, fresh) {
            return plain(Failure::new(FailureCode::Replay, "nonce seen or timestamp outside window"));
        }

        let candidates = self.candidate_tickets(&req.resource);
        let known = self.resources.contains_key(&req.resource) && !candidates.is_empty();
        if !self.passes(Stage::Candidates, known) {
            return plain(Failure::new(FailureCode::NotAuthorized, "no ticket covers the resource"));
        }

        let query = ClearanceQuery {
            server: self.id.clone(),
            clearance: req.clearance.clone(),
            candidates: candidates.clone(),
        };
        let msg = build_clearance_request(
            &self.keys,
            &query,
            &self.clearance.id,
            &self.clearance.key,
            &mut *self.rng.lock(),
        );
        let Some(resp) = link.clear(canonical_encode(&msg)) else {
            return plain(Failure::malformed("no reply from clearance center"));
        };
        let verdict = canonical_decode::<ClearanceResponse>(&resp)
            .map_err(Failure::from)
            .and_then(|r| verify_ticket_response(&self.keys, &self.clearance.key, &r));
        let verdict = match verdict {
            Ok(v) if self.passes(Stage::ClearanceSignature, true) => v,
            Ok(_) => return plain(Failure::new(FailureCode::BadSignature, "clearance response rejected")),
            Err(f) => return plain(f),
        };
        let bound = verdict.request_digest() == &req.clearance.digest();
        if !self.passes(Stage::RequestBinding, bound) {
            return plain(Failure::new(FailureCode::BadSignature, "verdict answers a different request"));
        }

        let grant = match verdict {
            ClearanceVerdict::Granted(g) => g,
            ClearanceVerdict::Denied { failure, subject, .. } => {
                return match subject {
                    Some(s) => self.sealed_failure(&s, failure),
                    None => plain(failure),
                }
            }
        };
        if !self.passes(Stage::TicketCandidate, candidates.contains(&grant.ticket.token)) {
            return self.sealed_failure(
                &grant.subject,
                Failure::new(FailureCode::NotAuthorized, "granted ticket was not a candidate"),
            );
        }
        let tau_ok = matches!(verify_tau(&req.signed_tau, &grant.subject), Ok(t) if t == req.tau);
        if !self.passes(Stage::TauSignature, tau_ok) {
            return plain(Failure::new(FailureCode::BadSignature, "tau not signed by the cleared key"));
        }

        self.serve(&req, &grant, now, link, confirm)
    }

    fn evaluate(&self, req: &ParsedRequest, grant: &TicketGrant, ctx: &EvalContext) -> Evaluation {
        let acl = self.acl.read();
        let mut best: Option<Evaluation> = None;
        for entry in acl.entries_for(&grant.ticket.token, &req.resource) {
            let set = compose_modifiers(&grant.enrollment_modifiers, &grant.agreement_modifiers, &entry.modifiers);
            let eval = set.evaluate(ctx);
            if best.as_ref().is_none_or(|b| eval.outcome < b.outcome) {
                best = Some(eval);
            }
        }
        // The ACL may have changed since the candidates were chosen.
        best.unwrap_or(Evaluation {
            outcome: Outcome::Fail,
            debit_failed: false,
            other_failed: true,
            confirmations: Vec::new(),
        })
    }

    fn modifier_failure(eval: &Evaluation) -> Failure {
        if eval.other_failed {
            Failure::new(FailureCode::ModifierDenied, "modifier not satisfied")
        } else {
            Failure::new(FailureCode::DebitExhausted, "budget cannot cover the debit")
        }
    }

    fn serve(
        &self,
        req: &ParsedRequest,
        grant: &TicketGrant,
        now: u64,
        link: &dyn ClearanceLink,
        confirm: &mut ConfirmChannel<'_>,
    ) -> Handled {
        let amount = self
            .resources
            .get(&req.resource)
            .map_or(Quantity::ONE, |h| h.resource.debit_amount);
        let mut ctx = EvalContext {
            now,
            params: req.params.clone(),
            confirm_granted: false,
            debit_amount: amount,
        };
        let eval = self.evaluate(req, grant, &ctx);
        if !self.passes(Stage::Modifiers, eval.outcome != Outcome::Fail) {
            return self.sealed_failure(&grant.subject, Self::modifier_failure(&eval));
        }

        if eval.outcome == Outcome::NeedsConfirmation {
            let transaction = grant.correlator.clone().unwrap_or_else(|| self.fresh_token());
            let ask = ConfirmRequest {
                transaction: transaction.clone(),
                items: eval
                    .confirmations
                    .iter()
                    .map(|d| DebitNotice {
                        unit: d.unit.clone(),
                        amount,
                        description: d.description.clone(),
                    })
                    .collect(),
            };
            let sealed = seal_value(grant.subject.key(), &ask, None, &mut *self.rng.lock());
            let approved = confirm(canonical_encode(&ServerReply::ConfirmAsk(sealed)))
                .and_then(|b| canonical_decode::<ConfirmReply>(&b).ok())
                .and_then(|r| r.open(&self.keys, &grant.subject).ok())
                .is_some_and(|d| d.transaction == transaction && d.approve);
            if !self.passes(Stage::Confirmation, approved) {
                return self.sealed_failure(
                    &grant.subject,
                    Failure::new(FailureCode::ConfirmRequired, "debit not confirmed"),
                );
            }
            ctx.confirm_granted = true;
            let eval = self.evaluate(req, grant, &ctx);
            if eval.outcome != Outcome::Pass {
                return self.sealed_failure(&grant.subject, Self::modifier_failure(&eval));
            }
        }

        if let Some(correlator) = &grant.correlator {
            if let Err(f) = self.commit(correlator, &grant.ticket.token, amount, link) {
                return self.sealed_failure(&grant.subject, f);
            }
        }

        match self.dispatch(&req.resource, &req.params) {
            Ok(answer) => {
                self.served.fetch_add(1, Ordering::SeqCst);
                let sealed = build_answer(&grant.subject, &answer, &mut *self.rng.lock());
                Handled {
                    reply: Some(canonical_encode(&ServerReply::Answer(sealed))),
                    disposition: Disposition::Served {
                        resource: req.resource.clone(),
                        ticket: grant.ticket.token.clone(),
                    },
                }
            }
            Err(f) => self.sealed_failure(&grant.subject, f),
        }
    }

    fn commit(
        &self,
        correlator: &Token,
        ticket: &Token,
        amount: Quantity,
        link: &dyn ClearanceLink,
    ) -> Result<(), Failure> {
        let body = DebitCommitBody {
            server: self.id.clone(),
            correlator: correlator.clone(),
            ticket: ticket.clone(),
            amount,
        };
        let msg = DebitCommit::build(
            &self.keys,
            &body,
            &self.clearance.id,
            &self.clearance.key,
            &mut *self.rng.lock(),
        );
        let reply = link
            .commit(canonical_encode(&msg))
            .ok_or_else(|| Failure::malformed("no reply to debit commit"))?;
        let result = canonical_decode::<DebitResult>(&reply)?.verify(&self.keys, &self.clearance.key)?;
        if result.correlator != *correlator {
            return Err(Failure::malformed("debit result for another transaction"));
        }
        let proceed = matches!(result.outcome, DebitOutcome::Proceed);
        match result.outcome {
            DebitOutcome::Denied(f) => Err(f),
            DebitOutcome::Proceed if self.passes(Stage::DebitCommit, proceed) => Ok(()),
            DebitOutcome::Proceed => Err(Failure::new(FailureCode::DebitExhausted, "debit commit rejected")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use uuid::Uuid;

    fn tok(n: &str) -> Token {
        Token::named(Uuid::from_u128(7), n).unwrap()
    }

    fn tau(ts: u64, n: u8) -> Tau {
        Tau {
            timestamp: ts,
            nonce: [n; 16],
        }
    }

    #[test]
    fn replay_rules() {
        let mut c = ReplayCache::new(300);
        assert_eq!(c.check(&tau(1000, 1), 1000), ReplayVerdict::Accept);
        assert_eq!(c.check(&tau(1000, 1), 1000), ReplayVerdict::Reject);
        assert_eq!(c.check(&tau(1000 - 301, 2), 1000), ReplayVerdict::Reject);
        assert_eq!(c.check(&tau(1000 - 300, 3), 1000), ReplayVerdict::Accept);
        assert_eq!(c.check(&tau(1000 + 301, 4), 1000), ReplayVerdict::Reject);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn replay_eviction_keeps_window() {
        let mut c = ReplayCache::new(10);
        for i in 0..50u8 {
            assert_eq!(c.check(&tau(i as u64, i), i as u64), ReplayVerdict::Accept);
            let now = i as u64;
            assert!(c.oldest().unwrap() + 10 >= now);
            assert!(c.len() <= 11);
        }
        c.evict(1000);
        assert!(c.is_empty());
    }

    #[test]
    fn candidates_match_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..200 {
            let entries: Vec<AclEntry> = (0..rng.gen_range(0..8))
                .map(|_| {
                    AclEntry::new(
                        tok(&format!("t{}", rng.gen_range(0..4))),
                        tok(&format!("r{}", rng.gen_range(0..3))),
                    )
                })
                .collect();
            let acl = Acl::new(entries.clone());
            for r in 0..4 {
                let r = tok(&format!("r{r}"));
                let mut scan = BTreeSet::new();
                for e in &entries {
                    if e.resource == r {
                        scan.insert(e.ticket.clone());
                    }
                }
                assert_eq!(acl.candidate_tickets(&r), scan);
            }
        }
    }

    #[test]
    fn acl_roundtrip_and_load_idempotent() {
        let acl = Acl::new([AclEntry::new(tok("t"), tok("r")), AclEntry::new(tok("t"), tok("r"))]);
        assert_eq!(acl.entries.len(), 1);
        let bytes = canonical_encode(&acl);
        assert_eq!(canonical_decode::<Acl>(&bytes).unwrap(), acl);
    }
}
