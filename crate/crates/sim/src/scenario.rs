//! JSON scenario scripts: who exists, what they agreed, and a list of
//! steps to drive through the harness.

use std::collections::BTreeMap;

use incognito_core::agents::{OrgAdmin, RequestError, RotationPolicy, ServerDirectory, UserAgent};
use incognito_core::clearance::ClearanceCenter;
use incognito_core::envelope::{KeyPair, Scheme};
use incognito_core::messages::Params;
use incognito_core::modifier::{Modifier, Quantity};
use incognito_core::server::{AclEntry, ClearanceRef, Disposition, Resource, ResourceKind, ResourceServer};
use incognito_core::token::{Grant, ImplicationMap, OrgId, ServiceAgreement, Ticket, Token};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use uuid::Uuid;

use crate::attacks::{self, StealVariant};
use crate::harness::{AdversaryAction, Delivery, Harness, HarnessError, RequestRecord};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crypto {
    #[default]
    Real,
    Marker,
}

impl From<Crypto> for Scheme {
    fn from(c: Crypto) -> Self {
        match c {
            Crypto::Real => Scheme::Real,
            Crypto::Marker => Scheme::Marker,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    Never,
    #[default]
    OnRefresh,
    EveryRequest,
}

impl From<Rotation> for RotationPolicy {
    fn from(r: Rotation) -> Self {
        match r {
            Rotation::Never => RotationPolicy::Never,
            Rotation::OnRefresh => RotationPolicy::OnRefresh,
            Rotation::EveryRequest => RotationPolicy::EveryRequest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModifierSpec {
    TimeWindow {
        start: u64,
        end: u64,
    },
    TimeOfDay {
        start_minute: u16,
        end_minute: u16,
    },
    Debit {
        remaining: String,
        #[serde(default)]
        unit: String,
        #[serde(default)]
        confirm: bool,
        #[serde(default)]
        description: String,
    },
    Param {
        key: String,
        allowed: Vec<String>,
    },
}

impl ModifierSpec {
    pub fn build(&self) -> Result<Modifier, ScenarioError> {
        let m = match self {
            ModifierSpec::TimeWindow { start, end } => Modifier::time_window(*start, *end),
            ModifierSpec::TimeOfDay {
                start_minute,
                end_minute,
            } => Modifier::time_of_day(*start_minute, *end_minute),
            ModifierSpec::Debit {
                remaining,
                unit,
                confirm,
                description,
            } => {
                let q: Quantity = remaining
                    .parse()
                    .map_err(|e| invalid(format!("debit amount {remaining:?}: {e}")))?;
                Modifier::debit(q, unit.clone(), *confirm, description.clone())
            }
            ModifierSpec::Param { key, allowed } => Ok(Modifier::param(
                key.clone(),
                allowed.iter().map(|a| a.as_bytes().to_vec()).collect(),
            )),
        };
        m.map_err(|e| invalid(e.to_string()))
    }
}

pub fn build_all(specs: &[ModifierSpec]) -> Result<Vec<Modifier>, ScenarioError> {
    specs.iter().map(ModifierSpec::build).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CenterSpec {
    pub name: String,
    #[serde(default)]
    pub transaction_timeout: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrgSpec {
    pub name: String,
    /// Pairs of group names: holding the first implies the second.
    #[serde(default)]
    pub implications: Vec<(String, String)>,
    #[serde(default)]
    pub certificate_lifetime: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub name: String,
    pub org: String,
    #[serde(default)]
    pub groups: Vec<String>,
    #[serde(default)]
    pub rotation: Rotation,
    #[serde(default)]
    pub enrollment_modifiers: BTreeMap<String, Vec<ModifierSpec>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindSpec {
    Echo,
    Counter,
    Document(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceSpec {
    pub name: String,
    pub kind: KindSpec,
    /// Amount charged against debit modifiers per request.
    #[serde(default)]
    pub debit: Option<String>,
}

impl ResourceSpec {
    pub fn build(&self) -> Result<Resource, ScenarioError> {
        let kind = match &self.kind {
            KindSpec::Echo => ResourceKind::Echo,
            KindSpec::Counter => ResourceKind::Counter,
            KindSpec::Document(text) => ResourceKind::Document(text.as_bytes().to_vec()),
        };
        Ok(match &self.debit {
            None => Resource::new(kind),
            Some(q) => Resource::with_debit(
                kind,
                q.parse().map_err(|e| invalid(format!("resource debit {q:?}: {e}")))?,
            ),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AclSpec {
    pub ticket: String,
    pub resource: String,
    #[serde(default)]
    pub modifiers: Vec<ModifierSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSpec {
    pub name: String,
    pub clearance: String,
    #[serde(default)]
    pub replay_window: Option<u64>,
    pub resources: Vec<ResourceSpec>,
    #[serde(default)]
    pub acl: Vec<AclSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TicketSpec {
    pub name: String,
    pub clearance: String,
    #[serde(default)]
    pub modifiers: Vec<ModifierSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrantSpec {
    pub group: String,
    pub ticket: String,
    #[serde(default)]
    pub modifiers: Vec<ModifierSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgreementSpec {
    pub org: String,
    pub clearance: String,
    #[serde(default)]
    pub grants: Vec<GrantSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    Request {
        user: String,
        server: String,
        resource: String,
        #[serde(default)]
        params: BTreeMap<String, String>,
        #[serde(default = "yes")]
        confirm: bool,
        #[serde(default)]
        expect: Option<String>,
    },
    Advance {
        seconds: u64,
    },
    AdvanceTo {
        time: u64,
    },
    Refresh {
        user: String,
        #[serde(default)]
        expect: Option<String>,
    },
    /// Re-send the message with this sequence number.
    Replay {
        seq: u64,
        #[serde(default)]
        expect: Option<String>,
    },
    /// Re-send the first message of the `request`-th request step.
    ReplayRequest {
        request: usize,
        #[serde(default)]
        expect: Option<String>,
    },
    LoadAcl {
        server: String,
        acl: Vec<AclSpec>,
    },
    RevokeAcl {
        server: String,
        ticket: String,
        resource: String,
    },
    SetGrants {
        org: String,
        clearance: String,
        grants: Vec<GrantSpec>,
    },
    RemoveGrants {
        org: String,
        clearance: String,
        groups: Vec<String>,
    },
    RemoveMember {
        org: String,
        user: String,
    },
    StealCertificate {
        thief: String,
        victim: String,
        server: String,
        resource: String,
        variant: StealVariant,
        #[serde(default)]
        expect: Option<String>,
    },
    AssertCounter {
        server: String,
        resource: String,
        value: u64,
    },
}

fn yes() -> bool {
    true
}

impl Step {
    pub fn op(&self) -> &'static str {
        match self {
            Step::Request { .. } => "request",
            Step::Advance { .. } => "advance",
            Step::AdvanceTo { .. } => "advance_to",
            Step::Refresh { .. } => "refresh",
            Step::Replay { .. } => "replay",
            Step::ReplayRequest { .. } => "replay_request",
            Step::LoadAcl { .. } => "load_acl",
            Step::RevokeAcl { .. } => "revoke_acl",
            Step::SetGrants { .. } => "set_grants",
            Step::RemoveGrants { .. } => "remove_grants",
            Step::RemoveMember { .. } => "remove_member",
            Step::StealCertificate { .. } => "steal_certificate",
            Step::AssertCounter { .. } => "assert_counter",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub start_time: u64,
    #[serde(default)]
    pub crypto: Crypto,
    pub clearance_centers: Vec<CenterSpec>,
    #[serde(default)]
    pub orgs: Vec<OrgSpec>,
    #[serde(default)]
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub servers: Vec<ServerSpec>,
    #[serde(default)]
    pub tickets: Vec<TicketSpec>,
    #[serde(default)]
    pub agreements: Vec<AgreementSpec>,
    #[serde(default)]
    pub adversary: Vec<AdversaryAction>,
    #[serde(default)]
    pub steps: Vec<Step>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse(format!("{} at {}", e.inner(), e.path())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Stable identifier derived from a kind and a name.
pub fn uuid_for(kind: &str, name: &str) -> Uuid {
    let d = Sha256::digest(format!("{kind}:{name}").as_bytes());
    let mut b = [0u8; 16];
    b.copy_from_slice(&d[..16]);
    Uuid::from_bytes(b)
}

pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn named(kind: &str, name: &str) -> Result<Token, ScenarioError> {
    Token::named(uuid_for(kind, name), name).map_err(|e| invalid(format!("{kind} {name:?}: {e}")))
}

/// A built scenario: the harness plus the names used to address it.
#[derive(Debug)]
pub struct Deployment {
    pub harness: Harness,
    org_ids: BTreeMap<String, OrgId>,
    tickets: BTreeMap<String, (String, Ticket)>,
    resources: BTreeMap<String, BTreeMap<String, Token>>,
    user_orgs: BTreeMap<String, String>,
    requests: Vec<RequestRecord>,
}

impl Deployment {
    pub fn build(s: &Scenario) -> Result<Self, ScenarioError> {
        let scheme: Scheme = s.crypto.into();
        let mut rng = ChaCha20Rng::seed_from_u64(s.seed);
        let mut h = Harness::new(scheme, s.start_time);

        for c in &s.clearance_centers {
            let mut center = ClearanceCenter::new(
                named("clearance", &c.name)?,
                KeyPair::generate(scheme, &mut rng),
                derive_seed(s.seed, &format!("clearance:{}", c.name)),
            );
            if let Some(t) = c.transaction_timeout {
                center = center.with_timeout(t);
            }
            h.add_center(&c.name, center);
        }

        let mut tickets = BTreeMap::new();
        for t in &s.tickets {
            let token = h.center(&t.clearance)?.mint_ticket(&t.name);
            let ticket = Ticket::with_modifiers(token, build_all(&t.modifiers)?);
            if tickets.insert(t.name.clone(), (t.clearance.clone(), ticket)).is_some() {
                return Err(invalid(format!("duplicate ticket {:?}", t.name)));
            }
        }

        let mut resources = BTreeMap::new();
        let mut directories = Vec::new();
        for sv in &s.servers {
            let id = named("server", &sv.name)?;
            let keys = KeyPair::generate(scheme, &mut rng);
            let center = h.center(&sv.clearance)?;
            let clearance = ClearanceRef {
                id: center.id().clone(),
                key: center.public_key(),
            };
            let mut server = ResourceServer::new(
                id.clone(),
                keys.clone(),
                clearance.clone(),
                sv.replay_window.unwrap_or(incognito_core::server::DEFAULT_REPLAY_WINDOW),
                derive_seed(s.seed, &format!("server:{}", sv.name)),
            );
            let mut ids = BTreeMap::new();
            for r in &sv.resources {
                let rid = Token::named(id.creator(), &r.name).map_err(|e| invalid(e.to_string()))?;
                let resource = r.build()?;
                server.add_resource(rid.clone(), resource);
                ids.insert(r.name.clone(), rid);
            }
            center.register_server(id.clone(), server.public_key());
            directories.push((
                id,
                ServerDirectory {
                    key: server.public_key(),
                    clearance,
                },
            ));
            resources.insert(sv.name.clone(), ids);
            h.add_server(&sv.name, server, keys);
        }

        let mut org_ids = BTreeMap::new();
        for o in &s.orgs {
            let id = named("org", &o.name)?;
            let mut org = OrgAdmin::new(id.clone(), KeyPair::generate(scheme, &mut rng));
            if let Some(l) = o.certificate_lifetime {
                org = org.with_lifetime(l);
            }
            let edges = o
                .implications
                .iter()
                .map(|(a, b)| (org.enrollment(a), org.enrollment(b)))
                .collect::<Vec<_>>();
            org.set_implications(ImplicationMap::from_edges(edges));
            h.add_org(&o.name, org);
            org_ids.insert(o.name.clone(), id);
        }

        let mut dep = Deployment {
            harness: h,
            org_ids,
            tickets,
            resources,
            user_orgs: BTreeMap::new(),
            requests: Vec::new(),
        };

        for a in &s.agreements {
            dep.register_grants(&a.org, &a.clearance, &a.grants)?;
        }

        for sv in &s.servers {
            let acl = dep.acl(&sv.name, &sv.clearance, &sv.acl)?;
            dep.harness.server(&sv.name)?.load_acl(acl);
        }

        let mut users = Vec::new();
        for u in &s.users {
            let mut agent = UserAgent::new(
                u.name.clone(),
                scheme,
                u.rotation.into(),
                derive_seed(s.seed, &format!("user:{}", u.name)),
            );
            for (id, d) in &directories {
                agent.learn_server(id.clone(), d.clone());
            }
            let refreshed = dep.harness.with_org(&u.org, |org| -> Result<(), ScenarioError> {
                let groups: Vec<&str> = u.groups.iter().map(String::as_str).collect();
                org.add_member(&u.name, &groups);
                for (group, mods) in &u.enrollment_modifiers {
                    let e = org.enrollment(group);
                    org.set_enrollment_modifiers(&u.name, &e, build_all(mods)?);
                }
                agent
                    .refresh_enrollments(org, s.start_time)
                    .map_err(|e| invalid(format!("user {:?}: {e}", u.name)))
            })?;
            refreshed?;
            dep.user_orgs.insert(u.name.clone(), u.org.clone());
            users.push(agent);
        }
        for agent in users {
            dep.harness.add_user(agent);
        }

        for a in &s.adversary {
            dep.harness.schedule(*a);
        }
        Ok(dep)
    }

    fn ticket(&self, name: &str, clearance: &str) -> Result<&Ticket, ScenarioError> {
        match self.tickets.get(name) {
            Some((c, t)) if c == clearance => Ok(t),
            Some((c, _)) => Err(invalid(format!("ticket {name:?} belongs to {c:?}, not {clearance:?}"))),
            None => Err(invalid(format!("unknown ticket {name:?}"))),
        }
    }

    pub fn ticket_token(&self, name: &str) -> Option<&Token> {
        self.tickets.get(name).map(|(_, t)| &t.token)
    }

    pub fn resource(&self, server: &str, name: &str) -> Result<&Token, ScenarioError> {
        self.resources
            .get(server)
            .and_then(|m| m.get(name))
            .ok_or_else(|| invalid(format!("unknown resource {name:?} at {server:?}")))
    }

    pub fn org_id(&self, org: &str) -> Result<&OrgId, ScenarioError> {
        self.org_ids.get(org).ok_or_else(|| invalid(format!("unknown org {org:?}")))
    }

    pub fn user_org(&self, user: &str) -> Result<&str, ScenarioError> {
        self.user_orgs
            .get(user)
            .map(String::as_str)
            .ok_or_else(|| invalid(format!("unknown user {user:?}")))
    }

    fn acl(&self, server: &str, clearance: &str, specs: &[AclSpec]) -> Result<Vec<AclEntry>, ScenarioError> {
        specs
            .iter()
            .map(|a| {
                Ok(AclEntry::with_modifiers(
                    self.ticket(&a.ticket, clearance)?.token.clone(),
                    self.resource(server, &a.resource)?.clone(),
                    build_all(&a.modifiers)?,
                ))
            })
            .collect()
    }

    fn register(&self, org: &str, clearance: &str, agreement: ServiceAgreement) -> Result<(), ScenarioError> {
        self.harness
            .with_org_and_producer(org, clearance, |o, p, c| {
                p.draft(agreement);
                p.negotiate_agreement(o, c).map(|_| ())
            })?
            .map_err(|e| invalid(e.to_string()))
    }

    fn register_grants(&self, org: &str, clearance: &str, grants: &[GrantSpec]) -> Result<(), ScenarioError> {
        let id = self.org_id(org)?.clone();
        let mut agreement = ServiceAgreement::new(id.clone());
        for g in grants {
            let e = self.harness.with_org(org, |o| o.enrollment(&g.group))?;
            let ticket = self.ticket(&g.ticket, clearance)?.clone();
            agreement.grant(e, Grant::with_modifiers(ticket, build_all(&g.modifiers)?));
        }
        self.register(org, clearance, agreement)
    }

    pub fn requests(&self) -> &[RequestRecord] {
        &self.requests
    }

    fn server_clearance(&self, server: &str) -> Result<String, ScenarioError> {
        let s = self.harness.server(server)?;
        self.harness
            .center_name(&s.clearance().id)
            .map(str::to_string)
            .ok_or_else(|| invalid(format!("server {server:?} has no known clearance center")))
    }

    /// Execute one step and describe what happened.
    pub fn run_step(&mut self, index: usize, step: &Step) -> Result<StepReport, ScenarioError> {
        let start = self.harness.net.len();
        let mut detail = None;
        let (outcome, expected) = match step {
            Step::Request {
                user,
                server,
                resource,
                params,
                confirm,
                expect,
            } => {
                let rid = self.resource(server, resource)?.clone();
                let params: Params = params
                    .iter()
                    .map(|(k, v)| (k.as_bytes().to_vec(), v.as_bytes().to_vec()))
                    .collect();
                let rec = self.harness.request(user, server, &rid, &params, *confirm)?;
                if let Ok(answer) = &rec.result {
                    detail = Some(String::from_utf8_lossy(answer).into_owned());
                }
                let o = request_outcome(&rec.result);
                self.requests.push(rec);
                (o, expect.clone())
            }
            Step::Advance { seconds } => {
                self.harness.net.clock.advance(*seconds);
                ("ok".to_string(), None)
            }
            Step::AdvanceTo { time } => {
                self.harness.net.clock.set(*time)?;
                ("ok".to_string(), None)
            }
            Step::Refresh { user, expect } => {
                let org = self.user_org(user)?.to_string();
                let now = self.harness.now();
                let cell = self.harness.user(user)?;
                let r = self.harness.with_org(&org, |o| cell.borrow_mut().refresh_enrollments(o, now))?;
                let o = match r {
                    Ok(()) => "ok".to_string(),
                    Err(e) => {
                        detail = Some(e.to_string());
                        "refused".to_string()
                    }
                };
                (o, expect.clone())
            }
            Step::Replay { seq, expect } => {
                let d = self.harness.replay(*seq)?;
                (delivery_outcome(&d), expect.clone())
            }
            Step::ReplayRequest { request, expect } => {
                let rec = self
                    .requests
                    .get(*request)
                    .ok_or_else(|| invalid(format!("no request #{request} to replay")))?;
                if rec.messages() == 0 {
                    return Err(invalid(format!("request #{request} sent nothing")));
                }
                let d = self.harness.replay(rec.first_seq)?;
                (delivery_outcome(&d), expect.clone())
            }
            Step::LoadAcl { server, acl } => {
                let c = self.server_clearance(server)?;
                let entries = self.acl(server, &c, acl)?;
                self.harness.server(server)?.load_acl(entries);
                ("ok".to_string(), None)
            }
            Step::RevokeAcl {
                server,
                ticket,
                resource,
            } => {
                let c = self.server_clearance(server)?;
                let t = self.ticket(ticket, &c)?.token.clone();
                let r = self.resource(server, resource)?.clone();
                let s = self.harness.server(server)?;
                let kept: Vec<AclEntry> = s
                    .acl()
                    .entries
                    .into_iter()
                    .filter(|e| !(e.ticket == t && e.resource == r))
                    .collect();
                s.load_acl(kept);
                ("ok".to_string(), None)
            }
            Step::SetGrants { org, clearance, grants } => {
                self.register_grants(org, clearance, grants)?;
                ("ok".to_string(), None)
            }
            Step::RemoveGrants { org, clearance, groups } => {
                let id = self.org_id(org)?.clone();
                let mut agreement = self
                    .harness
                    .center(clearance)?
                    .org(&id)
                    .ok_or_else(|| invalid(format!("org {org:?} has no agreement at {clearance:?}")))?
                    .agreement;
                for g in groups {
                    let e = self.harness.with_org(org, |o| o.enrollment(g))?;
                    agreement.revoke_enrollment(&e);
                }
                self.register(org, clearance, agreement)?;
                ("ok".to_string(), None)
            }
            Step::RemoveMember { org, user } => {
                let removed = self.harness.with_org(org, |o| o.remove_member(user))?;
                (if removed { "ok" } else { "absent" }.to_string(), None)
            }
            Step::StealCertificate {
                thief,
                victim,
                server,
                resource,
                variant,
                expect,
            } => {
                let rid = self.resource(server, resource)?.clone();
                let o = attacks::steal_certificate(&self.harness, thief, victim, server, &rid, *variant)?;
                (o, expect.clone())
            }
            Step::AssertCounter { server, resource, value } => {
                let rid = self.resource(server, resource)?;
                let got = self.harness.server(server)?.counter(rid).unwrap_or(0);
                (got.to_string(), Some(value.to_string()))
            }
        };
        let messages = self.harness.net.len() - start;
        let replays = self.harness.fire_due()?.iter().map(delivery_outcome).collect();
        let matched = expected.as_deref().is_none_or(|e| outcome_matches(e, &outcome));
        Ok(StepReport {
            index,
            op: step.op().to_string(),
            outcome,
            expected,
            matched,
            messages,
            detail,
            replays,
        })
    }
}

pub fn request_outcome(r: &Result<Vec<u8>, RequestError>) -> String {
    match r {
        Ok(_) => "granted".to_string(),
        Err(RequestError::Failure(f)) => f.code.name().to_string(),
        Err(RequestError::NoReply) => "no_reply".to_string(),
    }
}

pub fn delivery_outcome(d: &Delivery) -> String {
    match &d.disposition {
        Some(Disposition::Served { .. }) => "granted".to_string(),
        Some(Disposition::Denied(f)) => f.code.name().to_string(),
        Some(Disposition::Ignored) => "ignored".to_string(),
        None => "delivered".to_string(),
    }
}

/// "denied" accepts any failure code; everything else must match exactly.
pub fn outcome_matches(expected: &str, outcome: &str) -> bool {
    if expected == "denied" {
        return outcome.parse::<incognito_core::messages::FailureCode>().is_ok();
    }
    expected == outcome
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub index: usize,
    pub op: String,
    pub outcome: String,
    pub expected: Option<String>,
    pub matched: bool,
    /// Messages the step itself produced, not counting fired replays.
    pub messages: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    /// Outcomes of scheduled replays that fired after this step.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub replays: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub steps: Vec<StepReport>,
    pub messages: u64,
    pub transcript_hash: String,
    pub all_matched: bool,
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut out = format!("scenario {}\n", self.scenario);
        for s in &self.steps {
            let mark = if s.matched { "ok " } else { "BAD" };
            out.push_str(&format!("{mark} #{:<3} {:<18} {}", s.index, s.op, s.outcome));
            if let Some(e) = &s.expected {
                out.push_str(&format!(" (expected {e})"));
            }
            out.push_str(&format!(" [{} msgs]", s.messages));
            for r in &s.replays {
                out.push_str(&format!(" replay:{r}"));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "{} messages, transcript {}\n{}\n",
            self.messages,
            self.transcript_hash,
            if self.all_matched { "all steps matched" } else { "MISMATCH" }
        ));
        out
    }
}

/// Build and run a scenario. The deployment is returned for inspection.
pub fn run(s: &Scenario) -> Result<(Report, Deployment), ScenarioError> {
    let mut dep = Deployment::build(s)?;
    let mut steps = Vec::new();
    dep.harness.fire_due()?;
    for (i, step) in s.steps.iter().enumerate() {
        steps.push(dep.run_step(i, step)?);
    }
    let t = dep.harness.transcript();
    let report = Report {
        scenario: s.name.clone(),
        all_matched: steps.iter().all(|r| r.matched),
        steps,
        messages: t.len() as u64,
        transcript_hash: t.hash(),
    };
    Ok((report, dep))
}
