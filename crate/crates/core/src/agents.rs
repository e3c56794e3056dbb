//! User agents and the organization and producer administrators.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::clearance::{ClearanceCenter, RegistrationError};
use crate::codec::{canonical_decode, canonical_encode, List};
use crate::envelope::{open_value, EphemeralKeyPair, EphemeralPublicKey, KeyPair, PublicKey, Scheme};
use crate::messages::{
    build_request, open_answer, CertificateBody, ConfirmDecision, ConfirmReply, ConfirmRequest, DebitNotice,
    EnrollmentCertificate, Failure, FailureCode, IssuedCertificate, Params, RequestParts, ServerReply, Tau,
};
use crate::modifier::Modifier;
use crate::server::ClearanceRef;
use crate::token::{Enrollment, EnrollmentModifiers, ImplicationMap, NodeId, OrgId, ServiceAgreement, Token};

pub const DEFAULT_CERTIFICATE_LIFETIME: u64 = 86_400;

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("{0} is not a member")]
    UnknownMember(String),
    #[error("no certificate from {0}")]
    NoCertificate(OrgId),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Member {
    pub enrollments: BTreeSet<Enrollment>,
    pub modifiers: EnrollmentModifiers,
}

/// Administrator of a consumer organization.
#[derive(Debug, Clone)]
pub struct OrgAdmin {
    id: OrgId,
    keys: KeyPair,
    members: BTreeMap<String, Member>,
    implications: ImplicationMap,
    lifetime: u64,
    clearances: BTreeMap<NodeId, PublicKey>,
}

impl OrgAdmin {
    pub fn new(id: OrgId, keys: KeyPair) -> Self {
        Self {
            id,
            keys,
            members: BTreeMap::new(),
            implications: ImplicationMap::new(),
            lifetime: DEFAULT_CERTIFICATE_LIFETIME,
            clearances: BTreeMap::new(),
        }
    }

    pub fn with_lifetime(mut self, lifetime: u64) -> Self {
        self.lifetime = lifetime;
        self
    }

    pub fn id(&self) -> &OrgId {
        &self.id
    }

    pub fn public_key(&self) -> PublicKey {
        self.keys.public_key()
    }

    pub fn enrollment(&self, group: &str) -> Enrollment {
        Enrollment::for_group(&self.id, group).expect("group name within token limits")
    }

    pub fn implications(&self) -> &ImplicationMap {
        &self.implications
    }

    pub fn set_implications(&mut self, map: ImplicationMap) {
        self.implications = map;
    }

    pub fn add_member(&mut self, user: &str, groups: &[&str]) -> &mut Member {
        let enrollments = groups.iter().map(|g| self.enrollment(g)).collect();
        self.members.insert(
            user.to_string(),
            Member {
                enrollments,
                modifiers: BTreeMap::new(),
            },
        );
        self.members.get_mut(user).expect("just inserted")
    }

    pub fn set_enrollment_modifiers(&mut self, user: &str, enrollment: &Enrollment, modifiers: Vec<Modifier>) {
        if let Some(m) = self.members.get_mut(user) {
            m.modifiers.insert(enrollment.clone(), List(modifiers));
        }
    }

    pub fn remove_member(&mut self, user: &str) -> bool {
        self.members.remove(user).is_some()
    }

    pub fn member(&self, user: &str) -> Option<&Member> {
        self.members.get(user)
    }

    pub fn clearances(&self) -> &BTreeMap<NodeId, PublicKey> {
        &self.clearances
    }

    /// Record a clearance center this organization has an agreement with.
    pub fn learn_clearance(&mut self, clearance: ClearanceRef) {
        self.clearances.insert(clearance.id, clearance.key);
    }

    /// Certify `subject` for the member's enrollments until now + lifetime.
    pub fn issue_enrollment(
        &self,
        user: &str,
        subject: &EphemeralPublicKey,
        now: u64,
    ) -> Result<IssuedCertificate, AgentError> {
        let member = self
            .members
            .get(user)
            .ok_or_else(|| AgentError::UnknownMember(user.to_string()))?;
        let expiry = now.saturating_add(self.lifetime);
        let body = CertificateBody {
            subject: subject.clone(),
            issuer: self.id.clone(),
            enrollments: member.enrollments.clone(),
            enrollment_modifiers: member
                .modifiers
                .iter()
                .filter(|(e, _)| member.enrollments.contains(*e))
                .map(|(e, m)| (e.clone(), m.clone()))
                .collect(),
            expiry,
        };
        Ok(IssuedCertificate {
            certificate: EnrollmentCertificate::issue(&self.keys, &body),
            expiry,
        })
    }
}

/// Administrator on the producer side, in front of one clearance center.
#[derive(Debug, Clone, Default)]
pub struct ProducerAdmin {
    pending: BTreeMap<OrgId, ServiceAgreement>,
}

impl ProducerAdmin {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn draft(&mut self, agreement: ServiceAgreement) {
        self.pending.insert(agreement.consumer_org.clone(), agreement);
    }

    pub fn pending(&self, org: &OrgId) -> Option<&ServiceAgreement> {
        self.pending.get(org)
    }

    /// Register the drafted agreement for `org` at `center` and tell the
    /// organization where to clear.
    pub fn negotiate_agreement(
        &mut self,
        org: &mut OrgAdmin,
        center: &ClearanceCenter,
    ) -> Result<ClearanceRef, AgentError> {
        let agreement = self
            .pending
            .get(org.id())
            .cloned()
            .unwrap_or_else(|| ServiceAgreement::new(org.id().clone()));
        center.register_agreement(org.id().clone(), org.public_key(), org.implications().clone(), agreement)?;
        self.pending.remove(org.id());
        let r = ClearanceRef {
            id: center.id().clone(),
            key: center.public_key(),
        };
        org.learn_clearance(r.clone());
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RotationPolicy {
    Never,
    #[default]
    OnRefresh,
    EveryRequest,
}

/// How a user reaches a server: the server's key and its clearance center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerDirectory {
    pub key: PublicKey,
    pub clearance: ClearanceRef,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeldCertificate {
    pub issued: IssuedCertificate,
    pub subject: EphemeralPublicKey,
    pub clearances: BTreeSet<NodeId>,
}

/// Request-time values a test may look for in the transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentRequest {
    pub org: OrgId,
    pub certificate: EnrollmentCertificate,
    pub enrollments: BTreeSet<Enrollment>,
    pub subject: EphemeralPublicKey,
    pub tau: Tau,
    pub resource: Token,
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RequestError {
    #[error(transparent)]
    Failure(#[from] Failure),
    #[error("no reply")]
    NoReply,
}

impl RequestError {
    pub fn code(&self) -> Option<FailureCode> {
        match self {
            RequestError::Failure(f) => Some(f.code),
            RequestError::NoReply => None,
        }
    }
}

/// Delivers a request to a server. `on_confirm` handles a confirmation
/// ask and returns the reply to send back.
pub trait Transport {
    fn exchange(
        &self,
        server: &NodeId,
        request: Vec<u8>,
        on_confirm: &mut dyn FnMut(Vec<u8>) -> Option<Vec<u8>>,
    ) -> Option<Vec<u8>>;
}

/// The user's decision on a debit confirmation.
pub type ConfirmDecider<'a> = dyn FnMut(&[DebitNotice]) -> bool + 'a;

#[derive(Debug, Clone)]
pub struct UserAgent {
    name: String,
    scheme: Scheme,
    ephemeral: EphemeralKeyPair,
    certificates: BTreeMap<OrgId, HeldCertificate>,
    servers: BTreeMap<NodeId, ServerDirectory>,
    rotation: RotationPolicy,
    rng: ChaCha20Rng,
    last_sent: Option<SentRequest>,
}

impl UserAgent {
    pub fn new(name: impl Into<String>, scheme: Scheme, rotation: RotationPolicy, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ephemeral = EphemeralKeyPair::generate(scheme, &mut rng);
        Self {
            name: name.into(),
            scheme,
            ephemeral,
            certificates: BTreeMap::new(),
            servers: BTreeMap::new(),
            rotation,
            rng,
            last_sent: None,
        }
    }

    /// Start from an existing key, e.g. one loaded from disk.
    pub fn with_ephemeral(
        name: impl Into<String>,
        ephemeral: EphemeralKeyPair,
        rotation: RotationPolicy,
        seed: u64,
    ) -> Self {
        let mut agent = Self::new(name, ephemeral.key_pair().scheme(), rotation, seed);
        agent.ephemeral = ephemeral;
        agent
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ephemeral(&self) -> &EphemeralKeyPair {
        &self.ephemeral
    }

    pub fn rotation(&self) -> RotationPolicy {
        self.rotation
    }

    pub fn certificate(&self, org: &OrgId) -> Option<&HeldCertificate> {
        self.certificates.get(org)
    }

    pub fn certificates(&self) -> impl Iterator<Item = (&OrgId, &HeldCertificate)> {
        self.certificates.iter()
    }

    pub fn last_sent(&self) -> Option<&SentRequest> {
        self.last_sent.as_ref()
    }

    pub fn learn_server(&mut self, server: NodeId, directory: ServerDirectory) {
        self.servers.insert(server, directory);
    }

    pub fn rotate(&mut self) {
        self.ephemeral = EphemeralKeyPair::generate(self.scheme, &mut self.rng);
    }

    /// Store a certificate obtained out of band for the current key.
    pub fn install_certificate(&mut self, org: OrgId, issued: IssuedCertificate, clearances: BTreeSet<NodeId>) {
        self.certificates.insert(
            org,
            HeldCertificate {
                issued,
                subject: self.ephemeral.public_key(),
                clearances,
            },
        );
    }

    /// Fetch a fresh certificate from `admin`, rotating first unless the
    /// policy is `Never`. On refusal the old certificate is kept.
    pub fn refresh_enrollments(&mut self, admin: &OrgAdmin, now: u64) -> Result<(), AgentError> {
        if admin.member(&self.name).is_none() {
            return Err(AgentError::UnknownMember(self.name.clone()));
        }
        if self.rotation != RotationPolicy::Never {
            self.rotate();
        }
        let issued = admin.issue_enrollment(&self.name, &self.ephemeral.public_key(), now)?;
        let clearances = admin.clearances().keys().cloned().collect();
        self.install_certificate(admin.id().clone(), issued, clearances);
        Ok(())
    }

    /// Certificate usable with the current key at `clearance`.
    fn pick_certificate(&self, clearance: &NodeId) -> Option<(&OrgId, &HeldCertificate)> {
        let current = self.ephemeral.public_key();
        self.certificates
            .iter()
            .find(|(_, h)| h.subject == current && h.clearances.contains(clearance))
    }

    /// Drive one service request to completion.
    #[allow(clippy::too_many_arguments)]
    pub fn request_service(
        &mut self,
        transport: &dyn Transport,
        server: &NodeId,
        resource: &Token,
        params: &Params,
        now: u64,
        issuers: &[&OrgAdmin],
        decide: &mut ConfirmDecider<'_>,
    ) -> Result<Vec<u8>, RequestError> {
        if self.rotation == RotationPolicy::EveryRequest {
            self.rotate();
            for admin in issuers {
                // A refused refresh leaves a certificate bound to the old
                // key, which is then unusable.
                let _ = self.refresh_enrollments_keeping_key(admin, now);
            }
        }
        let dir = self
            .servers
            .get(server)
            .ok_or_else(|| Failure::new(FailureCode::NotAuthorized, "unknown server"))?
            .clone();
        let (org, held) = self
            .pick_certificate(&dir.clearance.id)
            .map(|(o, h)| (o.clone(), h.clone()))
            .ok_or_else(|| Failure::new(FailureCode::NotAuthorized, "no certificate for this clearance center"))?;
        let parts = RequestParts {
            ephemeral: &self.ephemeral,
            org: &org,
            certificate: &held.issued.certificate,
            server,
            server_key: &dir.key,
            clearance: &dir.clearance.id,
            clearance_key: &dir.clearance.key,
        };
        let (envelope, tau) = build_request(parts, resource, params, now, &mut self.rng);
        self.last_sent = Some(SentRequest {
            org: org.clone(),
            certificate: held.issued.certificate.clone(),
            enrollments: held
                .issued
                .certificate
                .body_unverified()
                .map(|b| b.enrollments)
                .unwrap_or_default(),
            subject: self.ephemeral.public_key(),
            tau,
            resource: resource.clone(),
            params: params.clone(),
        });

        let ephemeral = &self.ephemeral;
        let rng = &mut self.rng;
        let server_key = &dir.key;
        let mut on_confirm = |bytes: Vec<u8>| -> Option<Vec<u8>> {
            let ServerReply::ConfirmAsk(sealed) = canonical_decode::<ServerReply>(&bytes).ok()? else {
                return None;
            };
            let ask: ConfirmRequest = open_value(ephemeral.key_pair(), &sealed).ok()?;
            let decision = ConfirmDecision {
                transaction: ask.transaction.clone(),
                approve: decide(&ask.items),
            };
            let reply = ConfirmReply::build(ephemeral, &decision, server, server_key, rng);
            Some(canonical_encode(&reply))
        };
        let reply = transport
            .exchange(server, canonical_encode(&envelope), &mut on_confirm)
            .ok_or(RequestError::NoReply)?;
        self.read_reply(&reply)
    }

    fn refresh_enrollments_keeping_key(&mut self, admin: &OrgAdmin, now: u64) -> Result<(), AgentError> {
        let issued = admin.issue_enrollment(&self.name, &self.ephemeral.public_key(), now)?;
        let clearances = admin.clearances().keys().cloned().collect();
        self.install_certificate(admin.id().clone(), issued, clearances);
        Ok(())
    }

    /// Interpret the server's reply to a request.
    pub fn read_reply(&self, reply: &[u8]) -> Result<Vec<u8>, RequestError> {
        let reply = canonical_decode::<ServerReply>(reply).map_err(Failure::from)?;
        match reply {
            ServerReply::Answer(sealed) => Ok(open_answer(&self.ephemeral, &sealed).map_err(Failure::malformed)?),
            ServerReply::SealedFailure(sealed) => {
                let f: Failure = open_value(self.ephemeral.key_pair(), &sealed).map_err(Failure::malformed)?;
                Err(f.into())
            }
            ServerReply::Failure(f) => Err(f.into()),
            ServerReply::ConfirmAsk(_) => Err(Failure::malformed("unexpected confirmation ask").into()),
        }
    }
}
