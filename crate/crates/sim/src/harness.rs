//! In-process transport between actors with a recording tap, a shared
//! simulated clock and scripted adversary actions.
//!
//! Delivery is synchronous: a user's request runs to completion (through
//! the server, the clearance center and back) before the next step. The
//! harness never looks inside the bytes it carries.

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use incognito_core::agents::{OrgAdmin, ProducerAdmin, RequestError, SentRequest, Transport, UserAgent};
use incognito_core::clearance::ClearanceCenter;
use incognito_core::codec::{canonical_encode, Canonical, Decode, DecodeError, Encode, Reader, Writer};
use incognito_core::envelope::{KeyPair, PublicKey, Scheme};
use incognito_core::messages::Params;
use incognito_core::server::{ClearanceLink, Disposition, ResourceServer};
use incognito_core::tags;
use incognito_core::token::{NodeId, Token};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HarnessError {
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(Endpoint),
    #[error("no message with seq {0}")]
    UnknownSeq(u64),
    #[error("unknown {kind} {name:?}")]
    Unknown { kind: &'static str, name: String },
    #[error("clock cannot move backwards from {now} to {to}")]
    ClockBackwards { now: u64, to: u64 },
}

/// Simulated time shared by every actor. Never moves backwards.
#[derive(Debug, Default)]
pub struct SimClock {
    now: Cell<u64>,
}

impl SimClock {
    pub fn new(now: u64) -> Self {
        Self { now: Cell::new(now) }
    }

    pub fn now(&self) -> u64 {
        self.now.get()
    }

    pub fn advance(&self, delta: u64) {
        self.now.set(self.now.get().saturating_add(delta));
    }

    pub fn set(&self, to: u64) -> Result<(), HarnessError> {
        let now = self.now.get();
        if to < now {
            return Err(HarnessError::ClockBackwards { now, to });
        }
        self.now.set(to);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    User(String),
    Server(String),
    Clearance(String),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::User(n) => write!(f, "user:{n}"),
            Endpoint::Server(n) => write!(f, "server:{n}"),
            Endpoint::Clearance(n) => write!(f, "clearance:{n}"),
        }
    }
}

impl Encode for Endpoint {
    fn encode(&self, w: &mut Writer) {
        let (kind, name) = match self {
            Endpoint::User(n) => (0, n),
            Endpoint::Server(n) => (1, n),
            Endpoint::Clearance(n) => (2, n),
        };
        w.u8(kind);
        w.str(name);
    }
}

impl Decode for Endpoint {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let kind = r.u8()?;
        let name = r.str()?;
        match kind {
            0 => Ok(Endpoint::User(name)),
            1 => Ok(Endpoint::Server(name)),
            2 => Ok(Endpoint::Clearance(name)),
            value => Err(DecodeError::BadDiscriminant { value, name: "Endpoint" }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Note {
    Honest,
    Tampered,
    /// Recorded but never delivered.
    Dropped,
    /// Adversary copy of an earlier message.
    Replay(u64),
    /// Crafted by an adversary.
    Injected,
}

impl fmt::Display for Note {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Note::Honest => f.write_str("honest"),
            Note::Tampered => f.write_str("tampered"),
            Note::Dropped => f.write_str("dropped"),
            Note::Replay(s) => write!(f, "replay of #{s}"),
            Note::Injected => f.write_str("injected"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub seq: u64,
    pub from: Endpoint,
    pub to: Endpoint,
    pub bytes: Vec<u8>,
    /// Reply carried on the same exchange (debit commit and proceed).
    pub reply: Option<Vec<u8>>,
    pub time: u64,
    pub note: Note,
}

impl Encode for Entry {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::TRANSCRIPT_ENTRY);
        w.u64(self.seq);
        w.put(&self.from);
        w.put(&self.to);
        w.bytes(&self.bytes);
        w.put(&self.reply);
        w.u64(self.time);
        match self.note {
            Note::Honest => w.u8(0),
            Note::Tampered => w.u8(1),
            Note::Dropped => w.u8(2),
            Note::Replay(s) => {
                w.u8(3);
                w.u64(s);
            }
            Note::Injected => w.u8(4),
        }
    }
}

impl Decode for Entry {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::TRANSCRIPT_ENTRY, "TranscriptEntry")?;
        Ok(Self {
            seq: r.u64()?,
            from: r.get()?,
            to: r.get()?,
            bytes: r.bytes()?,
            reply: r.get()?,
            time: r.u64()?,
            note: match r.u8()? {
                0 => Note::Honest,
                1 => Note::Tampered,
                2 => Note::Dropped,
                3 => Note::Replay(r.u64()?),
                4 => Note::Injected,
                value => return Err(DecodeError::BadDiscriminant { value, name: "Note" }),
            },
        })
    }
}

/// Append-only record of every message, byte for byte.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Transcript {
    pub entries: Vec<Entry>,
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, seq: u64) -> Option<&Entry> {
        self.entries.get(seq as usize)
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(canonical_encode(self)))
    }
}

impl Encode for Transcript {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::TRANSCRIPT);
        w.list(&self.entries);
    }
}

impl Decode for Transcript {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::TRANSCRIPT, "Transcript")?;
        Ok(Self { entries: r.list()? })
    }
}

impl Canonical for Transcript {
    const TAG: u8 = tags::TRANSCRIPT;
    const NAME: &'static str = "Transcript";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversaryAction {
    /// Re-send message `seq` to its original recipient `delay` seconds
    /// after it was first sent.
    Replay { seq: u64, delay: u64 },
    /// Overwrite byte `index` (modulo the length) of message `seq`.
    Tamper { seq: u64, index: usize, byte: u8 },
    Drop { seq: u64 },
}

#[derive(Debug, Default)]
struct Adversary {
    tampers: BTreeMap<u64, Vec<(usize, u8)>>,
    drops: BTreeSet<u64>,
    replays: Vec<(u64, u64, bool)>,
}

/// The recording transport.
#[derive(Debug, Default)]
pub struct Network {
    pub clock: SimClock,
    transcript: RefCell<Transcript>,
    adversary: RefCell<Adversary>,
}

impl Network {
    pub fn new(now: u64) -> Self {
        Self {
            clock: SimClock::new(now),
            ..Self::default()
        }
    }

    pub fn schedule(&self, action: AdversaryAction) {
        let mut adv = self.adversary.borrow_mut();
        match action {
            AdversaryAction::Replay { seq, delay } => adv.replays.push((seq, delay, false)),
            AdversaryAction::Tamper { seq, index, byte } => adv.tampers.entry(seq).or_default().push((index, byte)),
            AdversaryAction::Drop { seq } => {
                adv.drops.insert(seq);
            }
        }
    }

    /// Record a message and return what the recipient receives.
    pub fn send(&self, from: &Endpoint, to: &Endpoint, mut bytes: Vec<u8>, note: Note) -> (u64, Option<Vec<u8>>) {
        let mut t = self.transcript.borrow_mut();
        let seq = t.entries.len() as u64;
        let adv = self.adversary.borrow();
        let mut note = note;
        if let Some(edits) = adv.tampers.get(&seq) {
            if !bytes.is_empty() {
                for &(index, byte) in edits {
                    let i = index % bytes.len();
                    bytes[i] = byte;
                }
                note = Note::Tampered;
            }
        }
        let dropped = adv.drops.contains(&seq);
        if dropped {
            note = Note::Dropped;
        }
        t.entries.push(Entry {
            seq,
            from: from.clone(),
            to: to.clone(),
            bytes: bytes.clone(),
            reply: None,
            time: self.clock.now(),
            note,
        });
        (seq, (!dropped).then_some(bytes))
    }

    fn attach_reply(&self, seq: u64, reply: Vec<u8>) {
        if let Some(e) = self.transcript.borrow_mut().entries.get_mut(seq as usize) {
            e.reply = Some(reply);
        }
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.borrow().clone()
    }

    pub fn len(&self) -> u64 {
        self.transcript.borrow().entries.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entry(&self, seq: u64) -> Option<Entry> {
        self.transcript.borrow().get(seq).cloned()
    }

    /// Replays whose time has come, in due order. Each fires once.
    fn take_due(&self) -> Vec<u64> {
        let now = self.clock.now();
        let t = self.transcript.borrow();
        let mut adv = self.adversary.borrow_mut();
        let mut due = Vec::new();
        for (seq, delay, fired) in adv.replays.iter_mut() {
            if *fired {
                continue;
            }
            if let Some(e) = t.get(*seq) {
                let at = e.time.saturating_add(*delay);
                if at <= now {
                    *fired = true;
                    due.push((at, *seq));
                }
            }
        }
        due.sort();
        due.into_iter().map(|(_, s)| s).collect()
    }
}

/// What the recipient did with a delivered message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub seq: u64,
    pub to: Endpoint,
    pub disposition: Option<Disposition>,
}

/// One user request as the harness saw it.
#[derive(Debug, Clone)]
pub struct RequestRecord {
    pub user: String,
    pub server: String,
    pub first_seq: u64,
    pub end_seq: u64,
    pub sent: Option<SentRequest>,
    pub result: Result<Vec<u8>, RequestError>,
    pub user_key: Option<PublicKey>,
    pub server_key: PublicKey,
    pub clearance_key: PublicKey,
}

impl RequestRecord {
    pub fn messages(&self) -> u64 {
        self.end_seq - self.first_seq
    }
}

/// A simulated deployment: actors wired through a recording network.
pub struct Harness {
    pub net: Network,
    pub scheme: Scheme,
    centers: BTreeMap<String, ClearanceCenter>,
    center_names: BTreeMap<NodeId, String>,
    servers: BTreeMap<String, ResourceServer>,
    server_names: BTreeMap<NodeId, String>,
    // Held only so adversary drills can play a compromised server.
    server_keys: BTreeMap<String, KeyPair>,
    orgs: RefCell<BTreeMap<String, OrgAdmin>>,
    producers: RefCell<BTreeMap<String, ProducerAdmin>>,
    users: BTreeMap<String, RefCell<UserAgent>>,
    deliveries: RefCell<Vec<Delivery>>,
    requests: RefCell<Vec<RequestRecord>>,
}

impl fmt::Debug for Harness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Harness")
            .field("now", &self.net.clock.now())
            .field("messages", &self.net.len())
            .finish_non_exhaustive()
    }
}

fn unknown(kind: &'static str, name: &str) -> HarnessError {
    HarnessError::Unknown {
        kind,
        name: name.to_string(),
    }
}

impl Harness {
    pub fn new(scheme: Scheme, now: u64) -> Self {
        Self {
            net: Network::new(now),
            scheme,
            centers: BTreeMap::new(),
            center_names: BTreeMap::new(),
            servers: BTreeMap::new(),
            server_names: BTreeMap::new(),
            server_keys: BTreeMap::new(),
            orgs: RefCell::new(BTreeMap::new()),
            producers: RefCell::new(BTreeMap::new()),
            users: BTreeMap::new(),
            deliveries: RefCell::new(Vec::new()),
            requests: RefCell::new(Vec::new()),
        }
    }

    pub fn now(&self) -> u64 {
        self.net.clock.now()
    }

    pub fn add_center(&mut self, name: &str, center: ClearanceCenter) {
        self.center_names.insert(center.id().clone(), name.to_string());
        self.centers.insert(name.to_string(), center);
        self.producers.get_mut().insert(name.to_string(), ProducerAdmin::new());
    }

    pub fn add_server(&mut self, name: &str, server: ResourceServer, keys: KeyPair) {
        self.server_keys.insert(name.to_string(), keys);
        self.server_names.insert(server.id().clone(), name.to_string());
        self.servers.insert(name.to_string(), server);
    }

    pub fn add_org(&mut self, name: &str, org: OrgAdmin) {
        self.orgs.get_mut().insert(name.to_string(), org);
    }

    pub fn add_user(&mut self, user: UserAgent) {
        self.users.insert(user.name().to_string(), RefCell::new(user));
    }

    pub fn center(&self, name: &str) -> Result<&ClearanceCenter, HarnessError> {
        self.centers.get(name).ok_or_else(|| unknown("clearance center", name))
    }

    pub fn server(&self, name: &str) -> Result<&ResourceServer, HarnessError> {
        self.servers.get(name).ok_or_else(|| unknown("server", name))
    }

    pub fn server_keys(&self, name: &str) -> Result<&KeyPair, HarnessError> {
        self.server_keys.get(name).ok_or_else(|| unknown("server", name))
    }

    pub fn center_name(&self, id: &NodeId) -> Option<&str> {
        self.center_names.get(id).map(String::as_str)
    }

    pub fn server_named(&self, id: &NodeId) -> Option<&str> {
        self.server_names.get(id).map(String::as_str)
    }

    pub fn centers(&self) -> impl Iterator<Item = (&String, &ClearanceCenter)> {
        self.centers.iter()
    }

    pub fn servers(&self) -> impl Iterator<Item = (&String, &ResourceServer)> {
        self.servers.iter()
    }

    pub fn user(&self, name: &str) -> Result<&RefCell<UserAgent>, HarnessError> {
        self.users.get(name).ok_or_else(|| unknown("user", name))
    }

    pub fn users(&self) -> impl Iterator<Item = &String> {
        self.users.keys()
    }

    pub fn with_org<T>(&self, name: &str, f: impl FnOnce(&mut OrgAdmin) -> T) -> Result<T, HarnessError> {
        let mut orgs = self.orgs.borrow_mut();
        let org = orgs.get_mut(name).ok_or_else(|| unknown("org", name))?;
        Ok(f(org))
    }

    pub fn with_org_and_producer<T>(
        &self,
        org: &str,
        center: &str,
        f: impl FnOnce(&mut OrgAdmin, &mut ProducerAdmin, &ClearanceCenter) -> T,
    ) -> Result<T, HarnessError> {
        let c = self.center(center)?;
        let mut orgs = self.orgs.borrow_mut();
        let o = orgs.get_mut(org).ok_or_else(|| unknown("org", org))?;
        let mut producers = self.producers.borrow_mut();
        let p = producers.get_mut(center).ok_or_else(|| unknown("clearance center", center))?;
        Ok(f(o, p, c))
    }

    pub fn org_names(&self) -> Vec<String> {
        self.orgs.borrow().keys().cloned().collect()
    }

    pub fn transcript(&self) -> Transcript {
        self.net.transcript()
    }

    pub fn deliveries(&self) -> Vec<Delivery> {
        self.deliveries.borrow().clone()
    }

    pub fn requests(&self) -> Vec<RequestRecord> {
        self.requests.borrow().clone()
    }

    fn server_link(&self, server: &str) -> Result<ServerPort<'_>, HarnessError> {
        let s = self.server(server)?;
        let center = self
            .center_names
            .get(&s.clearance().id)
            .ok_or_else(|| unknown("clearance center of server", server))?;
        Ok(ServerPort {
            h: self,
            server: Endpoint::Server(server.to_string()),
            center: Endpoint::Clearance(center.clone()),
        })
    }

    /// Drive one request from `user` to `server`.
    pub fn request(
        &self,
        user: &str,
        server: &str,
        resource: &Token,
        params: &Params,
        approve: bool,
    ) -> Result<RequestRecord, HarnessError> {
        let cell = self.user(user)?;
        let mut agent = cell.borrow_mut();
        self.request_as(&mut agent, server, resource, params, approve)
    }

    /// Like [`Harness::request`] for an agent the harness does not own,
    /// such as an attacker's modified copy of a user.
    pub fn request_as(
        &self,
        agent: &mut UserAgent,
        server: &str,
        resource: &Token,
        params: &Params,
        approve: bool,
    ) -> Result<RequestRecord, HarnessError> {
        let s = self.server(server)?;
        let center = self.center(
            self.center_names
                .get(&s.clearance().id)
                .ok_or_else(|| unknown("clearance center of server", server))?,
        )?;
        let orgs = self.orgs.borrow();
        let issuers: Vec<&OrgAdmin> = orgs.values().collect();
        let first_seq = self.net.len();
        let port = UserPort {
            h: self,
            user: Endpoint::User(agent.name().to_string()),
        };
        let now = self.now();
        let result = agent.request_service(&port, s.id(), resource, params, now, &issuers, &mut |_| approve);
        // Nothing on the wire means the agent refused locally.
        let sent = agent.last_sent().cloned().filter(|_| self.net.len() > first_seq);
        let record = RequestRecord {
            user: agent.name().to_string(),
            server: server.to_string(),
            first_seq,
            end_seq: self.net.len(),
            user_key: sent.as_ref().map(|s| s.subject.key().clone()),
            sent,
            result,
            server_key: s.public_key(),
            clearance_key: center.public_key(),
        };
        self.requests.borrow_mut().push(record.clone());
        Ok(record)
    }

    /// Deliver adversary-controlled bytes to an endpoint and let it react.
    pub fn deliver(&self, from: &Endpoint, to: &Endpoint, bytes: Vec<u8>, note: Note) -> Result<Delivery, HarnessError> {
        let now = self.now();
        let disposition = match to {
            Endpoint::Server(name) => {
                let s = self.server(name)?;
                let link = self.server_link(name)?;
                let (seq, got) = self.net.send(from, to, bytes, note);
                let disposition = got.map(|b| {
                    let mut no_answer = |ask: Vec<u8>| -> Option<Vec<u8>> {
                        self.net.send(to, from, ask, Note::Honest);
                        None
                    };
                    let handled = s.receive(&b, now, &link, &mut no_answer);
                    if let Some(reply) = handled.reply {
                        self.net.send(to, from, reply, Note::Honest);
                    }
                    handled.disposition
                });
                let d = Delivery {
                    seq,
                    to: to.clone(),
                    disposition,
                };
                self.deliveries.borrow_mut().push(d.clone());
                return Ok(d);
            }
            Endpoint::Clearance(name) => {
                let c = self.center(name)?;
                let (seq, got) = self.net.send(from, to, bytes, note);
                if let Some(b) = got {
                    let reply = c.receive(&b, now);
                    if incognito_core::codec::peek_tag(&b) == Ok(tags::DEBIT_COMMIT) {
                        self.net.attach_reply(seq, reply);
                    } else {
                        self.net.send(to, from, reply, Note::Honest);
                    }
                }
                return Ok(Delivery {
                    seq,
                    to: to.clone(),
                    disposition: None,
                });
            }
            // Users only act on replies they are waiting for.
            Endpoint::User(name) => {
                self.user(name)?;
                None
            }
        };
        let (seq, _) = self.net.send(from, to, bytes, note);
        Ok(Delivery {
            seq,
            to: to.clone(),
            disposition,
        })
    }

    /// Re-send a recorded message to its original recipient now.
    pub fn replay(&self, seq: u64) -> Result<Delivery, HarnessError> {
        let e = self.net.entry(seq).ok_or(HarnessError::UnknownSeq(seq))?;
        self.deliver(&e.from, &e.to, e.bytes, Note::Replay(seq))
    }

    pub fn schedule(&self, action: AdversaryAction) {
        self.net.schedule(action);
    }

    /// Fire every scheduled replay that is due.
    pub fn fire_due(&self) -> Result<Vec<Delivery>, HarnessError> {
        let mut out = Vec::new();
        loop {
            let due = self.net.take_due();
            if due.is_empty() {
                return Ok(out);
            }
            for seq in due {
                out.push(self.replay(seq)?);
            }
        }
    }

    pub fn advance(&self, delta: u64) -> Result<Vec<Delivery>, HarnessError> {
        self.net.clock.advance(delta);
        self.fire_due()
    }
}

struct UserPort<'a> {
    h: &'a Harness,
    user: Endpoint,
}

impl Transport for UserPort<'_> {
    fn exchange(
        &self,
        server: &NodeId,
        request: Vec<u8>,
        on_confirm: &mut dyn FnMut(Vec<u8>) -> Option<Vec<u8>>,
    ) -> Option<Vec<u8>> {
        let name = self.h.server_named(server)?.to_string();
        let s = self.h.server(&name).ok()?;
        let link = self.h.server_link(&name).ok()?;
        let to = Endpoint::Server(name);
        let net = &self.h.net;
        let (seq, got) = net.send(&self.user, &to, request, Note::Honest);
        let user = &self.user;
        let mut confirm = |ask: Vec<u8>| -> Option<Vec<u8>> {
            let (_, ask) = net.send(&to, user, ask, Note::Honest);
            let reply = on_confirm(ask?)?;
            net.send(user, &to, reply, Note::Honest).1
        };
        let handled = s.receive(&got?, self.h.now(), &link, &mut confirm);
        self.h.deliveries.borrow_mut().push(Delivery {
            seq,
            to: to.clone(),
            disposition: Some(handled.disposition),
        });
        net.send(&to, &self.user, handled.reply?, Note::Honest).1
    }
}

struct ServerPort<'a> {
    h: &'a Harness,
    server: Endpoint,
    center: Endpoint,
}

impl ServerPort<'_> {
    fn center(&self) -> Option<&ClearanceCenter> {
        match &self.center {
            Endpoint::Clearance(n) => self.h.center(n).ok(),
            _ => None,
        }
    }
}

impl ClearanceLink for ServerPort<'_> {
    fn clear(&self, request: Vec<u8>) -> Option<Vec<u8>> {
        let c = self.center()?;
        let (_, got) = self.h.net.send(&self.server, &self.center, request, Note::Honest);
        let resp = c.receive(&got?, self.h.now());
        self.h.net.send(&self.center, &self.server, resp, Note::Honest).1
    }

    fn commit(&self, commit: Vec<u8>) -> Option<Vec<u8>> {
        let c = self.center()?;
        let (seq, got) = self.h.net.send(&self.server, &self.center, commit, Note::Honest);
        let resp = c.receive(&got?, self.h.now());
        self.h.net.attach_reply(seq, resp.clone());
        Some(resp)
    }
}
