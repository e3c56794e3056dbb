//! Every message exchanged in a service transaction, with builders and
//! parsers.
//!
//! The user's request nests as follows (`[x]^O` signed by O, `{x}^U`
//! signed with the user's ephemeral key, `(x)^X` sealed to X):
//!
//! ```text
//! certificate = [k_U, E, expiry]^O
//! claim       = {O, certificate}^U
//! blob        = (k_U, claim)^C                 ClearanceBlob
//! envelope    = ({tau}^U, R, z, blob)^S        RequestEnvelope
//! ```
//!
//! The server forwards `blob` with its candidate tickets to the clearance
//! center, which answers with a signed ticket sealed to the server. The
//! answer goes back to the user sealed to `k_U`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use crate::codec::{
    canonical_decode, canonical_encode, peek_tag, to_field_bytes, Canonical, Decode, DecodeError,
    Encode, Reader, Writer,
};
use crate::envelope::{
    open_value, peek_value, seal_value, sign_value, verify_value, CryptoError, EphemeralKeyPair,
    EphemeralPublicKey, KeyPair, PublicKey, SealedBlob, SignedBlob,
};
use crate::modifier::{Modifier, Quantity};
use crate::server::AclEntry;
use crate::tags;
use crate::token::{Enrollment, EnrollmentModifiers, ImplicationMap, NodeId, OrgId, ServiceAgreement, Ticket, Token};

/// Request parameters `z`.
pub type Params = BTreeMap<Vec<u8>, Vec<u8>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FailureCode {
    NotAuthorized,
    UnknownOrg,
    BadSignature,
    Expired,
    Replay,
    ModifierDenied,
    DebitExhausted,
    ConfirmRequired,
    Malformed,
}

impl FailureCode {
    pub const ALL: [FailureCode; 9] = [
        FailureCode::NotAuthorized,
        FailureCode::UnknownOrg,
        FailureCode::BadSignature,
        FailureCode::Expired,
        FailureCode::Replay,
        FailureCode::ModifierDenied,
        FailureCode::DebitExhausted,
        FailureCode::ConfirmRequired,
        FailureCode::Malformed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FailureCode::NotAuthorized => "NotAuthorized",
            FailureCode::UnknownOrg => "UnknownOrg",
            FailureCode::BadSignature => "BadSignature",
            FailureCode::Expired => "Expired",
            FailureCode::Replay => "Replay",
            FailureCode::ModifierDenied => "ModifierDenied",
            FailureCode::DebitExhausted => "DebitExhausted",
            FailureCode::ConfirmRequired => "ConfirmRequired",
            FailureCode::Malformed => "Malformed",
        }
    }

    fn id(self) -> u8 {
        Self::ALL.iter().position(|c| *c == self).expect("listed") as u8
    }
}

impl fmt::Display for FailureCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FailureCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown failure code {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, thiserror::Error)]
#[error("{code}: {detail}")]
pub struct Failure {
    pub code: FailureCode,
    pub detail: String,
}

impl Failure {
    pub fn new(code: FailureCode, detail: impl Into<String>) -> Self {
        Self {
            code,
            detail: detail.into(),
        }
    }

    pub fn malformed(detail: impl fmt::Display) -> Self {
        Self::new(FailureCode::Malformed, detail.to_string())
    }
}

impl From<DecodeError> for Failure {
    fn from(e: DecodeError) -> Self {
        Failure::malformed(e)
    }
}

impl From<CryptoError> for Failure {
    fn from(e: CryptoError) -> Self {
        match e {
            CryptoError::BadSignature => Failure::new(FailureCode::BadSignature, e.to_string()),
            other => Failure::malformed(other),
        }
    }
}

impl Encode for Failure {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::FAILURE);
        w.u8(self.code.id());
        w.str(&self.detail);
    }
}

impl Decode for Failure {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::FAILURE, "Failure")?;
        let id = r.u8()?;
        let code = *FailureCode::ALL
            .get(id as usize)
            .ok_or(DecodeError::BadDiscriminant {
                value: id,
                name: "FailureCode",
            })?;
        Ok(Self {
            code,
            detail: r.str()?,
        })
    }
}

impl Canonical for Failure {
    const TAG: u8 = tags::FAILURE;
    const NAME: &'static str = "Failure";
}

/// Implements the codec for a newtype wrapping one tagged value.
macro_rules! wrapper {
    ($name:ident, $inner:ty, $tag:expr) => {
        impl Encode for $name {
            fn encode(&self, w: &mut Writer) {
                w.u8($tag);
                w.put(&self.0);
            }
        }

        impl Decode for $name {
            fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
                r.expect_tag($tag, stringify!($name))?;
                Ok(Self(r.get::<$inner>()?))
            }
        }

        impl Canonical for $name {
            const TAG: u8 = $tag;
            const NAME: &'static str = stringify!($name);
        }
    };
}

/// Timestamp and nonce that let the server reject replays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tau {
    pub timestamp: u64,
    pub nonce: [u8; 16],
}

impl Tau {
    pub fn fresh<R: RngCore>(now: u64, rng: &mut R) -> Self {
        let mut nonce = [0u8; 16];
        rng.fill_bytes(&mut nonce);
        Self {
            timestamp: now,
            nonce,
        }
    }
}

impl Encode for Tau {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::TAU);
        w.u64(self.timestamp);
        w.raw(&self.nonce);
    }
}

impl Decode for Tau {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::TAU, "Tau")?;
        Ok(Self {
            timestamp: r.u64()?,
            nonce: r.array()?,
        })
    }
}

impl Canonical for Tau {
    const TAG: u8 = tags::TAU;
    const NAME: &'static str = "Tau";
}

/// What the organization certifies: the ephemeral key, the enrollments
/// bound to it, per-enrollment modifiers and an expiry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertificateBody {
    pub subject: EphemeralPublicKey,
    pub issuer: OrgId,
    pub enrollments: BTreeSet<Enrollment>,
    pub enrollment_modifiers: EnrollmentModifiers,
    pub expiry: u64,
}

impl CertificateBody {
    pub fn modifiers_of(&self, e: &Enrollment) -> &[Modifier] {
        self.enrollment_modifiers
            .get(e)
            .map(|l| l.0.as_slice())
            .unwrap_or(&[])
    }
}

impl Encode for CertificateBody {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::CERTIFICATE_BODY);
        w.put(&self.subject);
        w.put(&self.issuer);
        w.set(&self.enrollments);
        w.map(&self.enrollment_modifiers);
        w.u64(self.expiry);
    }
}

impl Decode for CertificateBody {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::CERTIFICATE_BODY, "CertificateBody")?;
        Ok(Self {
            subject: r.get()?,
            issuer: r.get()?,
            enrollments: r.set()?,
            enrollment_modifiers: r.map()?,
            expiry: r.u64()?,
        })
    }
}

impl Canonical for CertificateBody {
    const TAG: u8 = tags::CERTIFICATE_BODY;
    const NAME: &'static str = "CertificateBody";
}

/// `[k_U E]^O`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnrollmentCertificate(pub SignedBlob);

wrapper!(EnrollmentCertificate, SignedBlob, tags::ENROLLMENT_CERTIFICATE);

impl EnrollmentCertificate {
    pub fn issue(org_keys: &KeyPair, body: &CertificateBody) -> Self {
        Self(sign_value(org_keys, body, Some(body.issuer.clone())))
    }

    pub fn verify(&self, org_key: &PublicKey) -> Result<CertificateBody, CryptoError> {
        verify_value(org_key, &self.0)
    }

    /// Body without checking the organization's signature.
    pub fn body_unverified(&self) -> Result<CertificateBody, DecodeError> {
        peek_value(&self.0)
    }
}

/// A certificate together with the cleartext copy of its expiry the
/// organization hands to the user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssuedCertificate {
    pub certificate: EnrollmentCertificate,
    pub expiry: u64,
}

impl Encode for IssuedCertificate {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::ISSUED_CERTIFICATE);
        w.put(&self.certificate);
        w.u64(self.expiry);
    }
}

impl Decode for IssuedCertificate {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::ISSUED_CERTIFICATE, "IssuedCertificate")?;
        Ok(Self {
            certificate: r.get()?,
            expiry: r.u64()?,
        })
    }
}

impl Canonical for IssuedCertificate {
    const TAG: u8 = tags::ISSUED_CERTIFICATE;
    const NAME: &'static str = "IssuedCertificate";
}

/// `O, [k_U E]^O`, signed with the user's ephemeral key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrgClaim {
    pub org: OrgId,
    pub certificate: EnrollmentCertificate,
}

impl Encode for OrgClaim {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::ORG_CLAIM);
        w.put(&self.org);
        w.put(&self.certificate);
    }
}

impl Decode for OrgClaim {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::ORG_CLAIM, "OrgClaim")?;
        Ok(Self {
            org: r.get()?,
            certificate: r.get()?,
        })
    }
}

impl Canonical for OrgClaim {
    const TAG: u8 = tags::ORG_CLAIM;
    const NAME: &'static str = "OrgClaim";
}

/// Plaintext of a [`ClearanceBlob`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClearanceInner {
    pub subject: EphemeralPublicKey,
    pub claim: SignedBlob,
}

impl Encode for ClearanceInner {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::CLEARANCE_INNER);
        w.put(&self.subject);
        w.put(&self.claim);
    }
}

impl Decode for ClearanceInner {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::CLEARANCE_INNER, "ClearanceInner")?;
        Ok(Self {
            subject: r.get()?,
            claim: r.get()?,
        })
    }
}

impl Canonical for ClearanceInner {
    const TAG: u8 = tags::CLEARANCE_INNER;
    const NAME: &'static str = "ClearanceInner";
}

/// `(k_U {O [k_U E]^O}^U)^C`: readable only by the clearance center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClearanceBlob(pub SealedBlob);

wrapper!(ClearanceBlob, SealedBlob, tags::CLEARANCE_BLOB);

impl ClearanceBlob {
    pub fn build<R: RngCore + CryptoRng>(
        ephemeral: &EphemeralKeyPair,
        org: &OrgId,
        certificate: &EnrollmentCertificate,
        clearance: &NodeId,
        clearance_key: &PublicKey,
        rng: &mut R,
    ) -> Self {
        let claim = OrgClaim {
            org: org.clone(),
            certificate: certificate.clone(),
        };
        let inner = ClearanceInner {
            subject: ephemeral.public_key(),
            claim: sign_value(ephemeral.key_pair(), &claim, None),
        };
        Self(seal_value(clearance_key, &inner, Some(clearance.clone()), rng))
    }

    /// Binds a clearance verdict to the request it answers.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(to_field_bytes(self)).into()
    }
}

/// Plaintext of a [`RequestEnvelope`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestBody {
    pub tau: SignedBlob,
    pub resource: Token,
    pub params: Params,
    pub clearance: ClearanceBlob,
}

impl Encode for RequestBody {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::REQUEST_BODY);
        w.put(&self.tau);
        w.put(&self.resource);
        w.map(&self.params);
        w.put(&self.clearance);
    }
}

impl Decode for RequestBody {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::REQUEST_BODY, "RequestBody")?;
        Ok(Self {
            tau: r.get()?,
            resource: r.get()?,
            params: r.map()?,
            clearance: r.get()?,
        })
    }
}

impl Canonical for RequestBody {
    const TAG: u8 = tags::REQUEST_BODY;
    const NAME: &'static str = "RequestBody";
}

/// The user's request, sealed to the server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestEnvelope(pub SealedBlob);

wrapper!(RequestEnvelope, SealedBlob, tags::REQUEST_ENVELOPE);

/// Everything a user needs to address one request.
#[derive(Debug, Clone, Copy)]
pub struct RequestParts<'a> {
    pub ephemeral: &'a EphemeralKeyPair,
    pub org: &'a OrgId,
    pub certificate: &'a EnrollmentCertificate,
    pub server: &'a NodeId,
    pub server_key: &'a PublicKey,
    pub clearance: &'a NodeId,
    pub clearance_key: &'a PublicKey,
}

pub fn build_request<R: RngCore + CryptoRng>(
    parts: RequestParts<'_>,
    resource: &Token,
    params: &Params,
    now: u64,
    rng: &mut R,
) -> (RequestEnvelope, Tau) {
    let tau = Tau::fresh(now, rng);
    let clearance = ClearanceBlob::build(
        parts.ephemeral,
        parts.org,
        parts.certificate,
        parts.clearance,
        parts.clearance_key,
        rng,
    );
    let body = RequestBody {
        tau: sign_value(parts.ephemeral.key_pair(), &tau, None),
        resource: resource.clone(),
        params: params.clone(),
        clearance,
    };
    let sealed = seal_value(parts.server_key, &body, Some(parts.server.clone()), rng);
    (RequestEnvelope(sealed), tau)
}

/// A request as the server sees it. The tau signature is not checked yet:
/// the server learns `k_U` only from the clearance center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRequest {
    pub tau: Tau,
    pub signed_tau: SignedBlob,
    pub resource: Token,
    pub params: Params,
    pub clearance: ClearanceBlob,
}

pub fn parse_request(server_keys: &KeyPair, envelope: &RequestEnvelope) -> Result<ParsedRequest, Failure> {
    let body: RequestBody = open_value(server_keys, &envelope.0).map_err(Failure::malformed)?;
    let tau = peek_value(&body.tau)?;
    Ok(ParsedRequest {
        tau,
        signed_tau: body.tau,
        resource: body.resource,
        params: body.params,
        clearance: body.clearance,
    })
}

pub fn verify_tau(signed_tau: &SignedBlob, subject: &EphemeralPublicKey) -> Result<Tau, Failure> {
    verify_value(subject.key(), signed_tau).map_err(|e| match e {
        CryptoError::Malformed(d) => Failure::malformed(d),
        other => Failure::new(FailureCode::BadSignature, format!("tau: {other}")),
    })
}

/// Signed by the server, sealed to the clearance center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClearanceQuery {
    pub server: NodeId,
    pub clearance: ClearanceBlob,
    pub candidates: BTreeSet<Token>,
}

impl Encode for ClearanceQuery {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::CLEARANCE_QUERY);
        w.put(&self.server);
        w.put(&self.clearance);
        w.set(&self.candidates);
    }
}

impl Decode for ClearanceQuery {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::CLEARANCE_QUERY, "ClearanceQuery")?;
        Ok(Self {
            server: r.get()?,
            clearance: r.get()?,
            candidates: r.set()?,
        })
    }
}

impl Canonical for ClearanceQuery {
    const TAG: u8 = tags::CLEARANCE_QUERY;
    const NAME: &'static str = "ClearanceQuery";
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClearanceRequest(pub SealedBlob);

wrapper!(ClearanceRequest, SealedBlob, tags::CLEARANCE_REQUEST);

pub fn build_clearance_request<R: RngCore + CryptoRng>(
    server_keys: &KeyPair,
    query: &ClearanceQuery,
    clearance: &NodeId,
    clearance_key: &PublicKey,
    rng: &mut R,
) -> ClearanceRequest {
    let signed = sign_value(server_keys, query, Some(query.server.clone()));
    ClearanceRequest(seal_value(clearance_key, &signed, Some(clearance.clone()), rng))
}

/// Open and authenticate a clearance request. Also returns the sender's
/// registered key so failures can be sealed back to it.
pub fn parse_clearance_request(
    clearance_keys: &KeyPair,
    servers: &BTreeMap<NodeId, PublicKey>,
    msg: &ClearanceRequest,
) -> Result<(ClearanceQuery, PublicKey), Failure> {
    let signed: SignedBlob = open_value(clearance_keys, &msg.0).map_err(Failure::malformed)?;
    let query: ClearanceQuery = peek_value(&signed)?;
    let key = servers.get(&query.server).ok_or_else(|| {
        Failure::new(
            FailureCode::BadSignature,
            format!("server {} is not registered", query.server),
        )
    })?;
    verify_value::<ClearanceQuery>(key, &signed)?;
    Ok((query, key.clone()))
}

/// A ticket granted for one request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TicketGrant {
    pub ticket: Ticket,
    /// Debits carry the ledger balance at clearance time.
    pub enrollment_modifiers: Vec<Modifier>,
    pub agreement_modifiers: Vec<Modifier>,
    pub subject: EphemeralPublicKey,
    pub correlator: Option<Token>,
    pub request_digest: [u8; 32],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClearanceVerdict {
    Granted(TicketGrant),
    Denied {
        failure: Failure,
        subject: Option<EphemeralPublicKey>,
        request_digest: [u8; 32],
    },
}

impl ClearanceVerdict {
    pub fn request_digest(&self) -> &[u8; 32] {
        match self {
            ClearanceVerdict::Granted(g) => &g.request_digest,
            ClearanceVerdict::Denied { request_digest, .. } => request_digest,
        }
    }
}

impl Encode for ClearanceVerdict {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::CLEARANCE_VERDICT);
        match self {
            ClearanceVerdict::Granted(g) => {
                w.u8(0);
                w.put(&g.ticket);
                w.list(&g.enrollment_modifiers);
                w.list(&g.agreement_modifiers);
                w.put(&g.subject);
                w.put(&g.correlator);
                w.raw(&g.request_digest);
            }
            ClearanceVerdict::Denied {
                failure,
                subject,
                request_digest,
            } => {
                w.u8(1);
                w.put(failure);
                w.put(subject);
                w.raw(request_digest);
            }
        }
    }
}

impl Decode for ClearanceVerdict {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::CLEARANCE_VERDICT, "ClearanceVerdict")?;
        match r.u8()? {
            0 => Ok(ClearanceVerdict::Granted(TicketGrant {
                ticket: r.get()?,
                enrollment_modifiers: r.list()?,
                agreement_modifiers: r.list()?,
                subject: r.get()?,
                correlator: r.get()?,
                request_digest: r.array()?,
            })),
            1 => Ok(ClearanceVerdict::Denied {
                failure: r.get()?,
                subject: r.get()?,
                request_digest: r.array()?,
            }),
            value => Err(DecodeError::BadDiscriminant {
                value,
                name: "ClearanceVerdict",
            }),
        }
    }
}

impl Canonical for ClearanceVerdict {
    const TAG: u8 = tags::CLEARANCE_VERDICT;
    const NAME: &'static str = "ClearanceVerdict";
}

/// A signed verdict sealed to the server, or a bare failure when the
/// clearance center could not authenticate the server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClearanceResponse {
    Sealed(SealedBlob),
    Plain(Failure),
}

impl Encode for ClearanceResponse {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::CLEARANCE_RESPONSE);
        match self {
            ClearanceResponse::Sealed(s) => {
                w.u8(0);
                w.put(s);
            }
            ClearanceResponse::Plain(f) => {
                w.u8(1);
                w.put(f);
            }
        }
    }
}

impl Decode for ClearanceResponse {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::CLEARANCE_RESPONSE, "ClearanceResponse")?;
        match r.u8()? {
            0 => Ok(ClearanceResponse::Sealed(r.get()?)),
            1 => Ok(ClearanceResponse::Plain(r.get()?)),
            value => Err(DecodeError::BadDiscriminant {
                value,
                name: "ClearanceResponse",
            }),
        }
    }
}

impl Canonical for ClearanceResponse {
    const TAG: u8 = tags::CLEARANCE_RESPONSE;
    const NAME: &'static str = "ClearanceResponse";
}

pub fn build_ticket_response<R: RngCore + CryptoRng>(
    clearance_keys: &KeyPair,
    clearance: &NodeId,
    server: &NodeId,
    server_key: &PublicKey,
    verdict: &ClearanceVerdict,
    rng: &mut R,
) -> ClearanceResponse {
    let signed = sign_value(clearance_keys, verdict, Some(clearance.clone()));
    ClearanceResponse::Sealed(seal_value(server_key, &signed, Some(server.clone()), rng))
}

/// Open a clearance response at the server and check the clearance
/// center's signature. A plain failure is passed through as the error.
pub fn verify_ticket_response(
    server_keys: &KeyPair,
    clearance_key: &PublicKey,
    response: &ClearanceResponse,
) -> Result<ClearanceVerdict, Failure> {
    match response {
        ClearanceResponse::Plain(f) => Err(f.clone()),
        ClearanceResponse::Sealed(sealed) => {
            let signed: SignedBlob = open_value(server_keys, sealed).map_err(Failure::malformed)?;
            verify_value(clearance_key, &signed).map_err(|e| match e {
                CryptoError::Malformed(d) => Failure::malformed(d),
                other => Failure::new(FailureCode::BadSignature, format!("clearance response: {other}")),
            })
        }
    }
}

/// One debit the user is asked to approve.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DebitNotice {
    pub unit: String,
    pub amount: Quantity,
    pub description: String,
}

impl Encode for DebitNotice {
    fn encode(&self, w: &mut Writer) {
        w.str(&self.unit);
        w.put(&self.amount);
        w.str(&self.description);
    }
}

impl Decode for DebitNotice {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            unit: r.str()?,
            amount: r.get()?,
            description: r.str()?,
        })
    }
}

/// Sealed to `k_U`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfirmRequest {
    pub transaction: Token,
    pub items: Vec<DebitNotice>,
}

impl Encode for ConfirmRequest {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::CONFIRM_REQUEST);
        w.put(&self.transaction);
        w.list(&self.items);
    }
}

impl Decode for ConfirmRequest {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::CONFIRM_REQUEST, "ConfirmRequest")?;
        Ok(Self {
            transaction: r.get()?,
            items: r.list()?,
        })
    }
}

impl Canonical for ConfirmRequest {
    const TAG: u8 = tags::CONFIRM_REQUEST;
    const NAME: &'static str = "ConfirmRequest";
}

/// Signed with the user's ephemeral key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfirmDecision {
    pub transaction: Token,
    pub approve: bool,
}

impl Encode for ConfirmDecision {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::CONFIRM_DECISION);
        w.put(&self.transaction);
        w.bool(self.approve);
    }
}

impl Decode for ConfirmDecision {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::CONFIRM_DECISION, "ConfirmDecision")?;
        Ok(Self {
            transaction: r.get()?,
            approve: r.bool()?,
        })
    }
}

impl Canonical for ConfirmDecision {
    const TAG: u8 = tags::CONFIRM_DECISION;
    const NAME: &'static str = "ConfirmDecision";
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfirmReply(pub SealedBlob);

wrapper!(ConfirmReply, SealedBlob, tags::CONFIRM_REPLY);

impl ConfirmReply {
    pub fn build<R: RngCore + CryptoRng>(
        ephemeral: &EphemeralKeyPair,
        decision: &ConfirmDecision,
        server: &NodeId,
        server_key: &PublicKey,
        rng: &mut R,
    ) -> Self {
        let signed = sign_value(ephemeral.key_pair(), decision, None);
        Self(seal_value(server_key, &signed, Some(server.clone()), rng))
    }

    pub fn open(
        &self,
        server_keys: &KeyPair,
        subject: &EphemeralPublicKey,
    ) -> Result<ConfirmDecision, Failure> {
        let signed: SignedBlob = open_value(server_keys, &self.0).map_err(Failure::malformed)?;
        Ok(verify_value(subject.key(), &signed)?)
    }
}

/// Plaintext of an answer sealed to `k_U`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerBody(pub Vec<u8>);

wrapper!(AnswerBody, Vec<u8>, tags::ANSWER_BODY);

/// Server to user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerReply {
    Answer(SealedBlob),
    /// A failure sealed to `k_U`, once the server has authenticated it.
    SealedFailure(SealedBlob),
    /// A failure detected before `k_U` was known.
    Failure(Failure),
    ConfirmAsk(SealedBlob),
}

impl Encode for ServerReply {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::SERVER_REPLY);
        match self {
            ServerReply::Answer(s) => {
                w.u8(0);
                w.put(s);
            }
            ServerReply::SealedFailure(s) => {
                w.u8(1);
                w.put(s);
            }
            ServerReply::Failure(f) => {
                w.u8(2);
                w.put(f);
            }
            ServerReply::ConfirmAsk(s) => {
                w.u8(3);
                w.put(s);
            }
        }
    }
}

impl Decode for ServerReply {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::SERVER_REPLY, "ServerReply")?;
        match r.u8()? {
            0 => Ok(ServerReply::Answer(r.get()?)),
            1 => Ok(ServerReply::SealedFailure(r.get()?)),
            2 => Ok(ServerReply::Failure(r.get()?)),
            3 => Ok(ServerReply::ConfirmAsk(r.get()?)),
            value => Err(DecodeError::BadDiscriminant {
                value,
                name: "ServerReply",
            }),
        }
    }
}

impl Canonical for ServerReply {
    const TAG: u8 = tags::SERVER_REPLY;
    const NAME: &'static str = "ServerReply";
}

pub fn build_answer<R: RngCore + CryptoRng>(
    subject: &EphemeralPublicKey,
    answer: &[u8],
    rng: &mut R,
) -> SealedBlob {
    seal_value(subject.key(), &AnswerBody(answer.to_vec()), None, rng)
}

pub fn open_answer(ephemeral: &EphemeralKeyPair, sealed: &SealedBlob) -> Result<Vec<u8>, CryptoError> {
    open_value::<AnswerBody>(ephemeral.key_pair(), sealed).map(|a| a.0)
}

/// Server asks the clearance center to apply a confirmed debit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DebitCommitBody {
    pub server: NodeId,
    pub correlator: Token,
    pub ticket: Token,
    pub amount: Quantity,
}

impl Encode for DebitCommitBody {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::DEBIT_COMMIT_BODY);
        w.put(&self.server);
        w.put(&self.correlator);
        w.put(&self.ticket);
        w.put(&self.amount);
    }
}

impl Decode for DebitCommitBody {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::DEBIT_COMMIT_BODY, "DebitCommitBody")?;
        Ok(Self {
            server: r.get()?,
            correlator: r.get()?,
            ticket: r.get()?,
            amount: r.get()?,
        })
    }
}

impl Canonical for DebitCommitBody {
    const TAG: u8 = tags::DEBIT_COMMIT_BODY;
    const NAME: &'static str = "DebitCommitBody";
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DebitCommit(pub SealedBlob);

wrapper!(DebitCommit, SealedBlob, tags::DEBIT_COMMIT);

impl DebitCommit {
    pub fn build<R: RngCore + CryptoRng>(
        server_keys: &KeyPair,
        body: &DebitCommitBody,
        clearance: &NodeId,
        clearance_key: &PublicKey,
        rng: &mut R,
    ) -> Self {
        let signed = sign_value(server_keys, body, Some(body.server.clone()));
        Self(seal_value(clearance_key, &signed, Some(clearance.clone()), rng))
    }

    pub fn open(
        &self,
        clearance_keys: &KeyPair,
        servers: &BTreeMap<NodeId, PublicKey>,
    ) -> Result<(DebitCommitBody, PublicKey), Failure> {
        let signed: SignedBlob = open_value(clearance_keys, &self.0).map_err(Failure::malformed)?;
        let body: DebitCommitBody = peek_value(&signed)?;
        let key = servers.get(&body.server).ok_or_else(|| {
            Failure::new(FailureCode::BadSignature, "debit commit from unregistered server")
        })?;
        verify_value::<DebitCommitBody>(key, &signed)?;
        Ok((body, key.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DebitOutcome {
    Proceed,
    Denied(Failure),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DebitResultBody {
    pub correlator: Token,
    pub outcome: DebitOutcome,
}

impl Encode for DebitResultBody {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::DEBIT_RESULT_BODY);
        w.put(&self.correlator);
        match &self.outcome {
            DebitOutcome::Proceed => w.u8(0),
            DebitOutcome::Denied(f) => {
                w.u8(1);
                w.put(f);
            }
        }
    }
}

impl Decode for DebitResultBody {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::DEBIT_RESULT_BODY, "DebitResultBody")?;
        let correlator = r.get()?;
        let outcome = match r.u8()? {
            0 => DebitOutcome::Proceed,
            1 => DebitOutcome::Denied(r.get()?),
            value => {
                return Err(DecodeError::BadDiscriminant {
                    value,
                    name: "DebitOutcome",
                })
            }
        };
        Ok(Self { correlator, outcome })
    }
}

impl Canonical for DebitResultBody {
    const TAG: u8 = tags::DEBIT_RESULT_BODY;
    const NAME: &'static str = "DebitResultBody";
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DebitResult {
    Sealed(SealedBlob),
    Plain(Failure),
}

impl Encode for DebitResult {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::DEBIT_RESULT);
        match self {
            DebitResult::Sealed(s) => {
                w.u8(0);
                w.put(s);
            }
            DebitResult::Plain(f) => {
                w.u8(1);
                w.put(f);
            }
        }
    }
}

impl Decode for DebitResult {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::DEBIT_RESULT, "DebitResult")?;
        match r.u8()? {
            0 => Ok(DebitResult::Sealed(r.get()?)),
            1 => Ok(DebitResult::Plain(r.get()?)),
            value => Err(DecodeError::BadDiscriminant {
                value,
                name: "DebitResult",
            }),
        }
    }
}

impl Canonical for DebitResult {
    const TAG: u8 = tags::DEBIT_RESULT;
    const NAME: &'static str = "DebitResult";
}

impl DebitResult {
    pub fn build<R: RngCore + CryptoRng>(
        clearance_keys: &KeyPair,
        clearance: &NodeId,
        body: &DebitResultBody,
        server: &NodeId,
        server_key: &PublicKey,
        rng: &mut R,
    ) -> Self {
        let signed = sign_value(clearance_keys, body, Some(clearance.clone()));
        DebitResult::Sealed(seal_value(server_key, &signed, Some(server.clone()), rng))
    }

    pub fn verify(&self, server_keys: &KeyPair, clearance_key: &PublicKey) -> Result<DebitResultBody, Failure> {
        match self {
            DebitResult::Plain(f) => Err(f.clone()),
            DebitResult::Sealed(sealed) => {
                let signed: SignedBlob = open_value(server_keys, sealed).map_err(Failure::malformed)?;
                Ok(verify_value(clearance_key, &signed)?)
            }
        }
    }
}

/// Administrative initialization messages. These travel over trusted
/// local channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdminMessage {
    LoadAcl(BTreeSet<AclEntry>),
    RegisterAgreement {
        org: OrgId,
        org_key: PublicKey,
        implications: ImplicationMap,
        agreement: ServiceAgreement,
    },
    RegisterServer {
        server: NodeId,
        key: PublicKey,
    },
    IssueEnrollment(IssuedCertificate),
}

impl Encode for AdminMessage {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::ADMIN_MESSAGE);
        match self {
            AdminMessage::LoadAcl(entries) => {
                w.u8(0);
                w.set(entries);
            }
            AdminMessage::RegisterAgreement {
                org,
                org_key,
                implications,
                agreement,
            } => {
                w.u8(1);
                w.put(org);
                w.put(org_key);
                w.put(implications);
                w.put(agreement);
            }
            AdminMessage::RegisterServer { server, key } => {
                w.u8(2);
                w.put(server);
                w.put(key);
            }
            AdminMessage::IssueEnrollment(issued) => {
                w.u8(3);
                w.put(issued);
            }
        }
    }
}

impl Decode for AdminMessage {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::ADMIN_MESSAGE, "AdminMessage")?;
        match r.u8()? {
            0 => Ok(AdminMessage::LoadAcl(r.set()?)),
            1 => Ok(AdminMessage::RegisterAgreement {
                org: r.get()?,
                org_key: r.get()?,
                implications: r.get()?,
                agreement: r.get()?,
            }),
            2 => Ok(AdminMessage::RegisterServer {
                server: r.get()?,
                key: r.get()?,
            }),
            3 => Ok(AdminMessage::IssueEnrollment(r.get()?)),
            value => Err(DecodeError::BadDiscriminant {
                value,
                name: "AdminMessage",
            }),
        }
    }
}

impl Canonical for AdminMessage {
    const TAG: u8 = tags::ADMIN_MESSAGE;
    const NAME: &'static str = "AdminMessage";
}

/// Any message that crosses the network in a service transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Request(RequestEnvelope),
    ClearanceRequest(ClearanceRequest),
    ClearanceResponse(ClearanceResponse),
    ServerReply(ServerReply),
    ConfirmReply(ConfirmReply),
    DebitCommit(DebitCommit),
    DebitResult(DebitResult),
}

impl WireMessage {
    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        Ok(match peek_tag(bytes)? {
            tags::REQUEST_ENVELOPE => WireMessage::Request(canonical_decode(bytes)?),
            tags::CLEARANCE_REQUEST => WireMessage::ClearanceRequest(canonical_decode(bytes)?),
            tags::CLEARANCE_RESPONSE => WireMessage::ClearanceResponse(canonical_decode(bytes)?),
            tags::SERVER_REPLY => WireMessage::ServerReply(canonical_decode(bytes)?),
            tags::CONFIRM_REPLY => WireMessage::ConfirmReply(canonical_decode(bytes)?),
            tags::DEBIT_COMMIT => WireMessage::DebitCommit(canonical_decode(bytes)?),
            tags::DEBIT_RESULT => WireMessage::DebitResult(canonical_decode(bytes)?),
            value => {
                return Err(DecodeError::BadDiscriminant {
                    value,
                    name: "WireMessage",
                })
            }
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        match self {
            WireMessage::Request(m) => canonical_encode(m),
            WireMessage::ClearanceRequest(m) => canonical_encode(m),
            WireMessage::ClearanceResponse(m) => canonical_encode(m),
            WireMessage::ServerReply(m) => canonical_encode(m),
            WireMessage::ConfirmReply(m) => canonical_encode(m),
            WireMessage::DebitCommit(m) => canonical_encode(m),
            WireMessage::DebitResult(m) => canonical_encode(m),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::Request(_) => "RequestEnvelope",
            WireMessage::ClearanceRequest(_) => "ClearanceRequest",
            WireMessage::ClearanceResponse(_) => "ClearanceResponse",
            WireMessage::ServerReply(ServerReply::Answer(_)) => "Answer",
            WireMessage::ServerReply(ServerReply::SealedFailure(_)) => "SealedFailure",
            WireMessage::ServerReply(ServerReply::Failure(_)) => "Failure",
            WireMessage::ServerReply(ServerReply::ConfirmAsk(_)) => "ConfirmAsk",
            WireMessage::ConfirmReply(_) => "ConfirmReply",
            WireMessage::DebitCommit(_) => "DebitCommit",
            WireMessage::DebitResult(_) => "DebitResult",
        }
    }
}

/// Name of the top-level type for a tag, for transcript display.
pub fn tag_name(tag: u8) -> Option<&'static str> {
    Some(match tag {
        tags::REQUEST_ENVELOPE => RequestEnvelope::NAME,
        tags::REQUEST_BODY => RequestBody::NAME,
        tags::CLEARANCE_BLOB => ClearanceBlob::NAME,
        tags::CLEARANCE_INNER => ClearanceInner::NAME,
        tags::CLEARANCE_REQUEST => ClearanceRequest::NAME,
        tags::CLEARANCE_RESPONSE => ClearanceResponse::NAME,
        tags::CLEARANCE_VERDICT => ClearanceVerdict::NAME,
        tags::SERVER_REPLY => ServerReply::NAME,
        tags::ANSWER_BODY => AnswerBody::NAME,
        tags::CONFIRM_REQUEST => ConfirmRequest::NAME,
        tags::CONFIRM_REPLY => ConfirmReply::NAME,
        tags::DEBIT_COMMIT => DebitCommit::NAME,
        tags::DEBIT_RESULT => DebitResult::NAME,
        tags::SIGNED_BLOB => SignedBlob::NAME,
        tags::SEALED_BLOB => SealedBlob::NAME,
        tags::FAILURE => Failure::NAME,
        tags::ORG_CLAIM => OrgClaim::NAME,
        tags::CLEARANCE_QUERY => ClearanceQuery::NAME,
        tags::DEBIT_COMMIT_BODY => DebitCommitBody::NAME,
        tags::DEBIT_RESULT_BODY => DebitResultBody::NAME,
        tags::CONFIRM_DECISION => ConfirmDecision::NAME,
        _ => return None,
    })
}
