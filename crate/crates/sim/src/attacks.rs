//! Adversary drills: replaying, tampering with, and forging messages.

use std::collections::BTreeMap;

use incognito_core::codec::{canonical_decode, canonical_encode};
use incognito_core::envelope::{open_value, seal_value, sign_value};
use incognito_core::messages::{ClearanceBlob, ClearanceInner, OrgClaim, RequestBody, RequestEnvelope, Tau};
use incognito_core::server::Disposition;
use incognito_core::token::Token;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::harness::{AdversaryAction, Endpoint, Harness, HarnessError, Note};
use crate::scenario::{delivery_outcome, request_outcome, run, Deployment, Report, Scenario, ScenarioError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StealVariant {
    /// Present the victim's certificate under the thief's own key.
    OwnKey,
    /// Claim the victim's key without holding its secret half.
    VictimKey,
    /// Replay the victim's signed claim but echo the thief's key in place
    /// of the victim's.
    SwappedEcho,
    /// Lift the victim's clearance blob out of a captured request and
    /// attach a fresh request signed by the thief. Plays a compromised
    /// server that can read request envelopes.
    Reseal,
}

impl StealVariant {
    pub const ALL: [StealVariant; 4] = [
        StealVariant::OwnKey,
        StealVariant::VictimKey,
        StealVariant::SwappedEcho,
        StealVariant::Reseal,
    ];
}

fn missing(kind: &'static str, name: &str) -> HarnessError {
    HarnessError::Unknown {
        kind,
        name: name.to_string(),
    }
}

/// Run one certificate theft attempt and return its outcome string.
pub fn steal_certificate(
    h: &Harness,
    thief: &str,
    victim: &str,
    server: &str,
    resource: &Token,
    variant: StealVariant,
) -> Result<String, HarnessError> {
    let victim_agent = h.user(victim)?.borrow().clone();
    let (org, held) = victim_agent
        .certificates()
        .next()
        .map(|(o, c)| (o.clone(), c.clone()))
        .ok_or_else(|| missing("certificate of", victim))?;
    let mut rng = ChaCha20Rng::seed_from_u64(h.net.len() ^ 0x7e1f);
    let now = h.now();
    let s = h.server(server)?;
    let c = h.center(
        h.center_name(&s.clearance().id)
            .ok_or_else(|| missing("clearance center of server", server))?,
    )?;
    let thief_agent = h.user(thief)?.borrow().clone();
    let forged = match variant {
        StealVariant::OwnKey => {
            let mut t = thief_agent;
            t.install_certificate(org, held.issued, held.clearances);
            let rec = h.request_as(&mut t, server, resource, &Default::default(), true)?;
            return Ok(request_outcome(&rec.result));
        }
        StealVariant::VictimKey => {
            let kp = thief_agent.ephemeral().key_pair();
            let claim = OrgClaim {
                org,
                certificate: held.issued.certificate,
            };
            let inner = ClearanceInner {
                subject: victim_agent.ephemeral().public_key(),
                claim: sign_value(kp, &claim, None),
            };
            let clearance = ClearanceBlob(seal_value(&c.public_key(), &inner, Some(c.id().clone()), &mut rng));
            RequestBody {
                tau: sign_value(kp, &Tau::fresh(now, &mut rng), None),
                resource: resource.clone(),
                params: Default::default(),
                clearance,
            }
        }
        StealVariant::SwappedEcho => {
            let kp = thief_agent.ephemeral().key_pair();
            let claim = OrgClaim {
                org,
                certificate: held.issued.certificate,
            };
            let inner = ClearanceInner {
                subject: thief_agent.ephemeral().public_key(),
                claim: sign_value(victim_agent.ephemeral().key_pair(), &claim, None),
            };
            let clearance = ClearanceBlob(seal_value(&c.public_key(), &inner, Some(c.id().clone()), &mut rng));
            RequestBody {
                tau: sign_value(kp, &Tau::fresh(now, &mut rng), None),
                resource: resource.clone(),
                params: Default::default(),
                clearance,
            }
        }
        StealVariant::Reseal => {
            // The newest captured request that still opens; an adversary
            // who garbled every one of them has nothing to lift.
            let captured = h
                .requests()
                .into_iter()
                .rev()
                .filter(|r| r.user == victim && r.server == server && r.messages() > 0)
                .find_map(|r| {
                    let entry = h.net.entry(r.first_seq)?;
                    let env: RequestEnvelope = canonical_decode(&entry.bytes).ok()?;
                    open_value::<RequestBody>(h.server_keys(server).ok()?, &env.0).ok()
                });
            let Some(mut body) = captured else {
                return Ok("no_capture".to_string());
            };
            body.tau = sign_value(thief_agent.ephemeral().key_pair(), &Tau::fresh(now, &mut rng), None);
            body.resource = resource.clone();
            body
        }
    };
    let env = RequestEnvelope(seal_value(&s.public_key(), &forged, Some(s.id().clone()), &mut rng));
    let d = h.deliver(
        &Endpoint::User(thief.to_string()),
        &Endpoint::Server(server.to_string()),
        canonical_encode(&env),
        Note::Injected,
    )?;
    Ok(delivery_outcome(&d))
}

fn counters(dep: &Deployment) -> BTreeMap<(String, Token), u64> {
    let mut out = BTreeMap::new();
    for (name, s) in dep.harness.servers() {
        for r in s.resource_ids() {
            if let Some(v) = s.counter(r) {
                out.insert((name.clone(), r.clone()), v);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayDrill {
    pub replayed: usize,
    /// Replays the recipient served.
    pub served: usize,
    pub counters_changed: bool,
    pub outcomes: Vec<(u64, String)>,
}

impl ReplayDrill {
    pub fn denied(&self) -> bool {
        self.served == 0 && !self.counters_changed
    }
}

/// Run the scenario, then replay every honest message it produced, first
/// immediately and then again after `later` seconds.
pub fn replay_drill(s: &Scenario, later: u64) -> Result<ReplayDrill, ScenarioError> {
    let (_, dep) = run(s)?;
    let before = counters(&dep);
    let served_before = dep.harness.servers().map(|(_, s)| s.served()).sum::<u64>();
    let honest: Vec<u64> = dep
        .harness
        .transcript()
        .entries
        .iter()
        .filter(|e| e.note == Note::Honest)
        .map(|e| e.seq)
        .collect();
    let mut outcomes = Vec::new();
    let mut served = 0;
    for pass in 0..2 {
        if pass == 1 {
            dep.harness.net.clock.advance(later);
        }
        for &seq in &honest {
            let d = dep.harness.replay(seq)?;
            if matches!(d.disposition, Some(Disposition::Served { .. })) {
                served += 1;
            }
            outcomes.push((seq, delivery_outcome(&d)));
        }
    }
    let served_after = dep.harness.servers().map(|(_, s)| s.served()).sum::<u64>();
    Ok(ReplayDrill {
        replayed: outcomes.len(),
        served,
        counters_changed: counters(&dep) != before || served_after != served_before,
        outcomes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TamperVerdict {
    /// Something the tampered message fed into was refused.
    Denied,
    /// Every step came out as in the honest run.
    Harmless,
    /// A request was served with an answer or side effect the honest run
    /// did not produce.
    Violation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TamperResult {
    pub seq: u64,
    pub index: usize,
    pub verdict: TamperVerdict,
}

fn compare(honest: &Report, honest_dep: &Deployment, run: &Report, dep: &Deployment) -> TamperVerdict {
    let before = counters(honest_dep);
    let after = counters(dep);
    if after.iter().any(|(k, v)| before.get(k).is_none_or(|b| v > b)) {
        return TamperVerdict::Violation;
    }
    // Once one honest step is refused, later answers may differ for honest
    // reasons (a counter lags behind), so only the first divergence counts.
    match honest.steps.iter().zip(&run.steps).find(|(a, b)| a != b) {
        None => TamperVerdict::Harmless,
        Some((a, b)) if b.outcome == "granted" && (a.outcome != "granted" || a.detail != b.detail) => {
            TamperVerdict::Violation
        }
        Some(_) => TamperVerdict::Denied,
    }
}

/// Flip one byte of each message in turn, re-running the whole scenario
/// for each.
pub fn tamper_drill(s: &Scenario, seed: u64) -> Result<Vec<TamperResult>, ScenarioError> {
    let (honest, honest_dep) = run(s)?;
    let t = honest_dep.harness.transcript();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for e in &t.entries {
        if e.bytes.is_empty() {
            continue;
        }
        let index = rng.gen_range(0..e.bytes.len());
        let flip: u8 = rng.gen_range(1..=255);
        let mut script = s.clone();
        script.adversary.push(AdversaryAction::Tamper {
            seq: e.seq,
            index,
            byte: e.bytes[index] ^ flip,
        });
        let (report, dep) = run(&script)?;
        out.push(TamperResult {
            seq: e.seq,
            index,
            verdict: compare(&honest, &honest_dep, &report, &dep),
        });
    }
    Ok(out)
}

/// A random schedule of replays over the first `len` messages.
pub fn random_replays(len: u64, count: usize, max_delay: u64, rng: &mut impl Rng) -> Vec<AdversaryAction> {
    (0..count)
        .map(|_| AdversaryAction::Replay {
            seq: rng.gen_range(0..len.max(1)),
            delay: rng.gen_range(0..=max_delay),
        })
        .collect()
}
