//! Tokens, enrollments, tickets and service agreements.
//!
//! A [`Token`] is scoped by the UUID of the node that minted it. Its label is
//! a print string only: equality, ordering and hashing look at
//! `(creator, value)` alone.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;
use uuid::Uuid;

use crate::codec::{Canonical, Decode, DecodeError, Encode, List, Reader, Writer};
use crate::modifier::Modifier;
use crate::tags;

pub const MAX_TOKEN_VALUE: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("token value must be 1..={MAX_TOKEN_VALUE} bytes, got {0}")]
    ValueLength(usize),
}

#[derive(Clone)]
pub struct Token {
    creator: Uuid,
    value: Vec<u8>,
    label: String,
}

/// Organizations are named by a token of their own minting.
pub type OrgId = Token;
/// Servers and clearance centers are named the same way.
pub type NodeId = Token;

impl Token {
    pub fn new(
        creator: Uuid,
        value: impl Into<Vec<u8>>,
        label: impl Into<String>,
    ) -> Result<Self, TokenError> {
        let value = value.into();
        if value.is_empty() || value.len() > MAX_TOKEN_VALUE {
            return Err(TokenError::ValueLength(value.len()));
        }
        Ok(Self {
            creator,
            value,
            label: label.into(),
        })
    }

    /// Token whose value and label are both `name`.
    pub fn named(creator: Uuid, name: &str) -> Result<Self, TokenError> {
        Self::new(creator, name.as_bytes(), name)
    }

    pub fn creator(&self) -> Uuid {
        self.creator
    }

    pub fn value(&self) -> &[u8] {
        &self.value
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

impl PartialEq for Token {
    fn eq(&self, other: &Self) -> bool {
        self.creator == other.creator && self.value == other.value
    }
}

impl Eq for Token {}

impl Hash for Token {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.creator.hash(state);
        self.value.hash(state);
    }
}

impl PartialOrd for Token {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Byte order: creator UUID bytes, then value bytes.
impl Ord for Token {
    fn cmp(&self, other: &Self) -> Ordering {
        self.creator
            .as_bytes()
            .cmp(other.creator.as_bytes())
            .then_with(|| self.value.cmp(&other.value))
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Token({}:{:?})", self.creator, self.label)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.label.is_empty() {
            write!(f, "{}/{}", self.creator, hex(&self.value))
        } else {
            f.write_str(&self.label)
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Encode for Token {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::TOKEN);
        w.put(&self.creator);
        w.bytes(&self.value);
        w.str(&self.label);
    }
}

impl Decode for Token {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::TOKEN, "Token")?;
        let creator = r.get()?;
        let value = r.bytes()?;
        let label = r.str()?;
        Token::new(creator, value, label).map_err(|_| DecodeError::Invalid("token value length"))
    }
}

impl Canonical for Token {
    const TAG: u8 = tags::TOKEN;
    const NAME: &'static str = "Token";
}

/// Membership of a user in a group of an organization.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Enrollment {
    token: Token,
    org: OrgId,
    group: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnrollmentError {
    #[error("enrollment token creator {token} does not match organization {org}")]
    CreatorMismatch { token: Uuid, org: Uuid },
}

impl Enrollment {
    pub fn new(token: Token, org: OrgId, group: impl Into<Vec<u8>>) -> Result<Self, EnrollmentError> {
        if token.creator() != org.creator() {
            return Err(EnrollmentError::CreatorMismatch {
                token: token.creator(),
                org: org.creator(),
            });
        }
        Ok(Self {
            token,
            org,
            group: group.into(),
        })
    }

    /// Enrollment for `group` of `org`, with the group name as token value.
    pub fn for_group(org: &OrgId, group: &str) -> Result<Self, TokenError> {
        let token = Token::named(org.creator(), group)?;
        Ok(Self {
            token,
            org: org.clone(),
            group: group.as_bytes().to_vec(),
        })
    }

    pub fn token(&self) -> &Token {
        &self.token
    }

    pub fn org(&self) -> &OrgId {
        &self.org
    }

    pub fn group(&self) -> &[u8] {
        &self.group
    }
}

impl fmt::Display for Enrollment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.token, self.org)
    }
}

impl Encode for Enrollment {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::ENROLLMENT);
        w.put(&self.token);
        w.put(&self.org);
        w.bytes(&self.group);
    }
}

impl Decode for Enrollment {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::ENROLLMENT, "Enrollment")?;
        let token = r.get()?;
        let org = r.get()?;
        let group = r.bytes()?;
        Enrollment::new(token, org, group).map_err(|_| DecodeError::Invalid("enrollment creator"))
    }
}

impl Canonical for Enrollment {
    const TAG: u8 = tags::ENROLLMENT;
    const NAME: &'static str = "Enrollment";
}

/// Permission to use any member of a set of resources.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ticket {
    pub token: Token,
    pub modifiers: Vec<Modifier>,
}

impl Ticket {
    pub fn new(token: Token) -> Self {
        Self {
            token,
            modifiers: Vec::new(),
        }
    }

    pub fn with_modifiers(token: Token, modifiers: Vec<Modifier>) -> Self {
        Self { token, modifiers }
    }
}

impl Encode for Ticket {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::TICKET);
        w.put(&self.token);
        w.list(&self.modifiers);
    }
}

impl Decode for Ticket {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::TICKET, "Ticket")?;
        Ok(Self {
            token: r.get()?,
            modifiers: r.list()?,
        })
    }
}

impl Canonical for Ticket {
    const TAG: u8 = tags::TICKET;
    const NAME: &'static str = "Ticket";
}

/// Implications between enrollments: an edge `(a, b)` means holding `a`
/// also confers `b`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ImplicationMap {
    edges: BTreeSet<(Enrollment, Enrollment)>,
}

impl ImplicationMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_edges(edges: impl IntoIterator<Item = (Enrollment, Enrollment)>) -> Self {
        Self {
            edges: edges.into_iter().collect(),
        }
    }

    pub fn insert(&mut self, from: Enrollment, to: Enrollment) {
        self.edges.insert((from, to));
    }

    pub fn edges(&self) -> impl Iterator<Item = (&Enrollment, &Enrollment)> {
        self.edges.iter().map(|(a, b)| (a, b))
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    fn adjacency(&self) -> BTreeMap<&Enrollment, Vec<&Enrollment>> {
        let mut adj: BTreeMap<&Enrollment, Vec<&Enrollment>> = BTreeMap::new();
        for (a, b) in &self.edges {
            adj.entry(a).or_default().push(b);
        }
        adj
    }

    /// Enrollments reachable from each member of `roots`, keyed by root.
    pub fn reach_by_root(
        &self,
        roots: &BTreeSet<Enrollment>,
    ) -> BTreeMap<Enrollment, BTreeSet<Enrollment>> {
        let adj = self.adjacency();
        roots
            .iter()
            .map(|root| (root.clone(), bfs(&adj, std::iter::once(root))))
            .collect()
    }
}

fn bfs<'a>(
    adj: &BTreeMap<&'a Enrollment, Vec<&'a Enrollment>>,
    start: impl IntoIterator<Item = &'a Enrollment>,
) -> BTreeSet<Enrollment> {
    let mut seen: BTreeSet<&Enrollment> = BTreeSet::new();
    let mut queue: VecDeque<&Enrollment> = VecDeque::new();
    for e in start {
        if seen.insert(e) {
            queue.push_back(e);
        }
    }
    while let Some(e) = queue.pop_front() {
        for next in adj.get(e).into_iter().flatten() {
            if seen.insert(next) {
                queue.push_back(next);
            }
        }
    }
    seen.into_iter().cloned().collect()
}

/// Least superset of `enrollments` closed under the implication edges.
/// Terminates on cyclic maps.
pub fn enrollment_closure(
    enrollments: &BTreeSet<Enrollment>,
    map: &ImplicationMap,
) -> BTreeSet<Enrollment> {
    let adj = map.adjacency();
    bfs(&adj, enrollments.iter())
}

impl Encode for ImplicationMap {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::IMPLICATION_MAP);
        w.set(&self.edges);
    }
}

impl Decode for ImplicationMap {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::IMPLICATION_MAP, "ImplicationMap")?;
        Ok(Self { edges: r.set()? })
    }
}

impl Canonical for ImplicationMap {
    const TAG: u8 = tags::IMPLICATION_MAP;
    const NAME: &'static str = "ImplicationMap";
}

/// One entry of a service agreement: a ticket plus the modifiers the
/// agreement attaches to it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Grant {
    pub ticket: Ticket,
    pub modifiers: Vec<Modifier>,
}

impl Grant {
    pub fn new(ticket: Ticket) -> Self {
        Self {
            ticket,
            modifiers: Vec::new(),
        }
    }

    pub fn with_modifiers(ticket: Ticket, modifiers: Vec<Modifier>) -> Self {
        Self { ticket, modifiers }
    }

    /// Ticket modifiers followed by agreement modifiers. Debit ledger
    /// indices for the agreement layer refer to positions in this list.
    pub fn layer_modifiers(&self) -> Vec<Modifier> {
        self.ticket
            .modifiers
            .iter()
            .chain(&self.modifiers)
            .cloned()
            .collect()
    }
}

impl Encode for Grant {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::GRANT);
        w.put(&self.ticket);
        w.list(&self.modifiers);
    }
}

impl Decode for Grant {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::GRANT, "Grant")?;
        Ok(Self {
            ticket: r.get()?,
            modifiers: r.list()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgreementError {
    #[error("ticket {ticket} was not minted by clearance center {center}")]
    ForeignTicket { ticket: Token, center: Uuid },
    #[error("enrollment {enrollment} does not belong to consumer organization {org}")]
    ForeignEnrollment { enrollment: Enrollment, org: OrgId },
}

/// Mapping from a consumer organization's enrollments to tickets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceAgreement {
    pub consumer_org: OrgId,
    pub grants: BTreeMap<Enrollment, BTreeSet<Grant>>,
}

impl ServiceAgreement {
    pub fn new(consumer_org: OrgId) -> Self {
        Self {
            consumer_org,
            grants: BTreeMap::new(),
        }
    }

    pub fn grant(&mut self, enrollment: Enrollment, grant: Grant) -> &mut Self {
        self.grants.entry(enrollment).or_default().insert(grant);
        self
    }

    pub fn revoke_enrollment(&mut self, enrollment: &Enrollment) {
        self.grants.remove(enrollment);
    }

    /// Check that every ticket was minted by `center` and every enrollment
    /// belongs to the consumer organization.
    pub fn validate(&self, center: Uuid) -> Result<(), AgreementError> {
        for (enrollment, grants) in &self.grants {
            if enrollment.org() != &self.consumer_org {
                return Err(AgreementError::ForeignEnrollment {
                    enrollment: enrollment.clone(),
                    org: self.consumer_org.clone(),
                });
            }
            if let Some(g) = grants.iter().find(|g| g.ticket.token.creator() != center) {
                return Err(AgreementError::ForeignTicket {
                    ticket: g.ticket.token.clone(),
                    center,
                });
            }
        }
        Ok(())
    }
}

impl Encode for ServiceAgreement {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::SERVICE_AGREEMENT);
        w.put(&self.consumer_org);
        w.map(&self.grants);
    }
}

impl Decode for ServiceAgreement {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::SERVICE_AGREEMENT, "ServiceAgreement")?;
        Ok(Self {
            consumer_org: r.get()?,
            grants: r.map()?,
        })
    }
}

impl Canonical for ServiceAgreement {
    const TAG: u8 = tags::SERVICE_AGREEMENT;
    const NAME: &'static str = "ServiceAgreement";
}

/// A grant selected by [`agreement_lookup`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrantMatch {
    pub enrollment: Enrollment,
    pub grant: Grant,
}

/// Find a grant whose ticket is a candidate and whose enrollment is held.
///
/// Ties resolve to the lowest candidate ticket token, then the lowest
/// enrollment, then the first grant in canonical order.
pub fn agreement_lookup(
    agreement: &ServiceAgreement,
    closed: &BTreeSet<Enrollment>,
    candidates: &BTreeSet<Token>,
) -> Option<GrantMatch> {
    for ticket in candidates {
        for enrollment in closed {
            let hit = agreement
                .grants
                .get(enrollment)
                .and_then(|gs| gs.iter().find(|g| &g.ticket.token == ticket));
            if let Some(grant) = hit {
                return Some(GrantMatch {
                    enrollment: enrollment.clone(),
                    grant: grant.clone(),
                });
            }
        }
    }
    None
}

/// Certified enrollment modifiers as they travel inside certificates.
pub type EnrollmentModifiers = BTreeMap<Enrollment, List<Modifier>>;
