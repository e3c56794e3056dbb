mod common;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use common::*;
use incognito_core::clearance::{ClearanceCenter, DebitSlot};
use incognito_core::codec::canonical_encode;
use incognito_core::envelope::{seal_value, sign_value, EphemeralKeyPair, KeyPair, Scheme};
use incognito_core::messages::*;
use incognito_core::modifier::{Layer, Modifier, Quantity};
use incognito_core::token::{ImplicationMap, OrgId, ServiceAgreement, Token};
use uuid::Uuid;

fn blob(w: &World, eph: &EphemeralKeyPair, org: &OrgId, cert: &EnrollmentCertificate) -> ClearanceBlob {
    ClearanceBlob::build(eph, org, cert, w.center.id(), &w.center.public_key(), &mut rng(3))
}

fn q(w: &World, b: ClearanceBlob) -> ClearanceQuery {
    ClearanceQuery {
        server: w.server.id().clone(),
        clearance: b,
        candidates: [w.ticket.clone()].into(),
    }
}

fn code(v: &ClearanceVerdict) -> Option<FailureCode> {
    match v {
        ClearanceVerdict::Granted(_) => None,
        ClearanceVerdict::Denied { failure, .. } => Some(failure.code),
    }
}

fn honest(w: &World, seed: u64) -> (EphemeralKeyPair, EnrollmentCertificate) {
    let eph = EphemeralKeyPair::generate(w.scheme, &mut rng(seed));
    let cert = w.org.issue_enrollment("alice", &eph.public_key(), T0).unwrap().certificate;
    (eph, cert)
}

#[test]
fn honest_query_is_granted_with_echo() {
    let w = World::new(Scheme::Real);
    let (eph, cert) = honest(&w, 5);
    let query = q(&w, blob(&w, &eph, w.org.id(), &cert));
    match w.center.decide(&query, T0) {
        ClearanceVerdict::Granted(g) => {
            assert_eq!(g.ticket.token, w.ticket);
            assert_eq!(g.subject, eph.public_key());
            assert_eq!(g.correlator, None);
            assert_eq!(g.request_digest, query.clearance.digest());
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn one_mutation_per_failure_code() {
    let w = World::with_grant_modifiers(Scheme::Real, vec![Modifier::time_window(T0 - 10, T0 + 10).unwrap()]);
    let (eph, cert) = honest(&w, 5);

    // Malformed: the sealed plaintext is not a clearance inner.
    let junk = ClearanceBlob(seal_value(&w.center.public_key(), &Tau::fresh(T0, &mut rng(1)), None, &mut rng(2)));
    assert_eq!(code(&w.center.decide(&q(&w, junk), T0)), Some(FailureCode::Malformed));

    // BadSignature: ephemeral signature by a key other than the outer one.
    let thief = EphemeralKeyPair::generate(Scheme::Real, &mut rng(6));
    let claim = OrgClaim { org: w.org.id().clone(), certificate: cert.clone() };
    let inner = ClearanceInner {
        subject: eph.public_key(),
        claim: sign_value(thief.key_pair(), &claim, None),
    };
    let forged = ClearanceBlob(seal_value(&w.center.public_key(), &inner, None, &mut rng(2)));
    assert_eq!(code(&w.center.decide(&q(&w, forged), T0)), Some(FailureCode::BadSignature));

    // BadSignature: certificate for k_U presented under the thief's own key.
    let stolen = blob(&w, &thief, w.org.id(), &cert);
    assert_eq!(code(&w.center.decide(&q(&w, stolen), T0)), Some(FailureCode::BadSignature));

    // UnknownOrg.
    let nobody = Token::named(Uuid::from_u128(0xbad), "nobody").unwrap();
    let unknown = blob(&w, &eph, &nobody, &cert);
    assert_eq!(code(&w.center.decide(&q(&w, unknown), T0)), Some(FailureCode::UnknownOrg));

    // BadSignature: certificate not signed by the claimed org.
    let rogue = incognito_core::agents::OrgAdmin::new(w.org.id().clone(), KeyPair::generate(Scheme::Real, &mut rng(40)));
    let mut rogue = rogue;
    rogue.add_member("alice", &["purchasing"]);
    let fake = rogue.issue_enrollment("alice", &eph.public_key(), T0).unwrap().certificate;
    let b = blob(&w, &eph, w.org.id(), &fake);
    assert_eq!(code(&w.center.decide(&q(&w, b), T0)), Some(FailureCode::BadSignature));

    // Expired.
    let b = blob(&w, &eph, w.org.id(), &cert);
    assert_eq!(code(&w.center.decide(&q(&w, b.clone()), T0 + 86_401)), Some(FailureCode::Expired));
    assert_eq!(code(&w.center.decide(&q(&w, b.clone()), T0 + 86_400)), Some(FailureCode::ModifierDenied));

    // NotAuthorized.
    let mut nq = q(&w, b.clone());
    nq.candidates = [w.center.mint_ticket("unrelated")].into();
    assert_eq!(code(&w.center.decide(&nq, T0)), Some(FailureCode::NotAuthorized));
    nq.candidates = BTreeSet::new();
    assert_eq!(code(&w.center.decide(&nq, T0)), Some(FailureCode::NotAuthorized));

    // ModifierDenied.
    assert_eq!(code(&w.center.decide(&q(&w, b.clone()), T0 + 11)), Some(FailureCode::ModifierDenied));
    assert_eq!(code(&w.center.decide(&q(&w, b), T0)), None);
}

#[test]
fn exhausted_debit_is_denied_at_clearance() {
    let w = World::with_grant_modifiers(
        Scheme::Real,
        vec![Modifier::debit(Quantity::Integer(0), "pages", false, "pages").unwrap()],
    );
    let (eph, cert) = honest(&w, 5);
    let v = w.center.decide(&q(&w, blob(&w, &eph, w.org.id(), &cert)), T0);
    assert_eq!(code(&v), Some(FailureCode::DebitExhausted));
}

fn debit_world(remaining: i64) -> World {
    World::with_grant_modifiers(
        Scheme::Real,
        vec![Modifier::debit(Quantity::Integer(remaining), "pages", false, "printing").unwrap()],
    )
}

fn slot(w: &World) -> DebitSlot {
    DebitSlot {
        layer: Layer::Agreement,
        enrollment: w.org.enrollment("purchasing"),
        ticket: w.ticket.clone(),
        index: 0,
    }
}

fn correlator(w: &World, eph: &EphemeralKeyPair, cert: &EnrollmentCertificate, now: u64) -> Token {
    match w.center.decide(&q(w, blob(w, eph, w.org.id(), cert)), now) {
        ClearanceVerdict::Granted(g) => g.correlator.expect("debit grant has a correlator"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn debit_commit_arithmetic_and_single_use() {
    let w = debit_world(5);
    let (eph, cert) = honest(&w, 5);
    let s = w.server.id().clone();
    let c = correlator(&w, &eph, &cert, T0);
    w.center.commit_correlator(&s, &c, &w.ticket, Quantity::Integer(3), T0).unwrap();
    assert_eq!(w.center.balance(&slot(&w)), Some(Quantity::Integer(2)));
    let again = w.center.commit_correlator(&s, &c, &w.ticket, Quantity::Integer(1), T0).unwrap_err();
    assert_eq!(again.code, FailureCode::Malformed);
    assert_eq!(w.center.balance(&slot(&w)), Some(Quantity::Integer(2)));

    let c = correlator(&w, &eph, &cert, T0);
    let short = w.center.commit_correlator(&s, &c, &w.ticket, Quantity::Integer(3), T0).unwrap_err();
    assert_eq!(short.code, FailureCode::DebitExhausted);
    assert_eq!(w.center.balance(&slot(&w)), Some(Quantity::Integer(2)));
    assert_eq!(
        w.center.commit_correlator(&s, &c, &w.ticket, Quantity::Integer(0), T0).unwrap_err().code,
        FailureCode::Malformed
    );
}

#[test]
fn correlators_time_out() {
    let w = debit_world(5);
    let (eph, cert) = honest(&w, 5);
    let s = w.server.id().clone();
    w.center.correlator_gc(T0);
    assert_eq!(w.center.pending_count(), 0);
    let old = correlator(&w, &eph, &cert, T0);
    let fresh = correlator(&w, &eph, &cert, T0 + 100);
    w.center.correlator_gc(T0 + 121);
    assert_eq!(w.center.pending_count(), 1);
    assert_eq!(
        w.center.commit_correlator(&s, &old, &w.ticket, Quantity::ONE, T0 + 121).unwrap_err().code,
        FailureCode::Malformed
    );
    w.center.commit_correlator(&s, &fresh, &w.ticket, Quantity::ONE, T0 + 121).unwrap();
}

#[test]
fn decimal_budgets_are_exact() {
    let w = World::with_grant_modifiers(
        Scheme::Real,
        vec![Modifier::debit(Quantity::Decimal("1.0000".parse().unwrap()), "USD", false, "fees").unwrap()],
    );
    let (eph, cert) = honest(&w, 5);
    let s = w.server.id().clone();
    let tenth = Quantity::Decimal("0.1000".parse().unwrap());
    for _ in 0..10 {
        let c = correlator(&w, &eph, &cert, T0);
        w.center.commit_correlator(&s, &c, &w.ticket, tenth, T0).unwrap();
    }
    assert_eq!(w.center.balance(&slot(&w)), Some(Quantity::Decimal("0".parse().unwrap())));
    let v = w.center.decide(&q(&w, blob(&w, &eph, w.org.id(), &cert)), T0);
    assert_eq!(code(&v), Some(FailureCode::DebitExhausted));
}

#[test]
fn concurrent_commits_conserve_budget() {
    let w = debit_world(100);
    let (eph, cert) = honest(&w, 5);
    let s = w.server.id().clone();
    let proceeds = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..8 {
            scope.spawn(|| loop {
                let query = q(&w, blob(&w, &eph, w.org.id(), &cert));
                let ClearanceVerdict::Granted(g) = w.center.decide(&query, T0) else { break };
                let c = g.correlator.unwrap();
                if w.center.commit_correlator(&s, &c, &w.ticket, Quantity::ONE, T0).is_ok() {
                    proceeds.fetch_add(1, Ordering::SeqCst);
                }
            });
        }
    });
    assert_eq!(proceeds.load(Ordering::SeqCst), 100);
    assert_eq!(w.center.balance(&slot(&w)), Some(Quantity::Integer(0)));
}

#[test]
fn replacing_grants_revokes_immediately() {
    let w = World::new(Scheme::Real);
    let (eph, cert) = honest(&w, 5);
    let b = blob(&w, &eph, w.org.id(), &cert);
    assert_eq!(code(&w.center.decide(&q(&w, b.clone()), T0)), None);
    w.center
        .register_agreement(w.org.id().clone(), w.org.public_key(), ImplicationMap::new(), ServiceAgreement::new(w.org.id().clone()))
        .unwrap();
    assert_eq!(code(&w.center.decide(&q(&w, b), T0)), Some(FailureCode::NotAuthorized));
}

#[test]
fn organizations_are_isolated() {
    let w = World::new(Scheme::Real);
    let other_id = Token::named(Uuid::from_u128(0xb0), "globex").unwrap();
    let mut other = incognito_core::agents::OrgAdmin::new(other_id.clone(), KeyPair::generate(Scheme::Real, &mut rng(70)));
    other.add_member("carol", &["purchasing"]);
    // Globex registered with no grants; its members get nothing even though
    // an ACME enrollment with the same group name is granted.
    w.center
        .register_agreement(other_id.clone(), other.public_key(), ImplicationMap::new(), ServiceAgreement::new(other_id.clone()))
        .unwrap();
    let eph = EphemeralKeyPair::generate(Scheme::Real, &mut rng(8));
    let cert = other.issue_enrollment("carol", &eph.public_key(), T0).unwrap().certificate;
    let b = blob(&w, &eph, &other_id, &cert);
    assert_eq!(code(&w.center.decide(&q(&w, b), T0)), Some(FailureCode::NotAuthorized));
    // Registering Globex left ACME's maps alone.
    let (eph, cert) = honest(&w, 5);
    assert_eq!(code(&w.center.decide(&q(&w, blob(&w, &eph, w.org.id(), &cert)), T0)), None);

    // Agreements may not reach into another organization.
    let mut bad = ServiceAgreement::new(other_id.clone());
    bad.grant(w.org.enrollment("purchasing"), incognito_core::token::Grant::new(incognito_core::token::Ticket::new(w.ticket.clone())));
    assert!(w.center.register_agreement(other_id, other.public_key(), ImplicationMap::new(), bad).is_err());
}

#[test]
fn registration_is_idempotent() {
    let build = |times: usize| {
        let w = World::new(Scheme::Real);
        let rec = w.center.org(w.org.id()).unwrap();
        for _ in 0..times {
            w.center
                .register_agreement(w.org.id().clone(), rec.key.clone(), rec.implications.clone(), rec.agreement.clone())
                .unwrap();
        }
        canonical_encode(&w.center.snapshot())
    };
    assert_eq!(build(0), build(1));
    assert_eq!(build(1), build(3));
}

#[test]
fn snapshot_restores_state() {
    let w = debit_world(5);
    let (eph, cert) = honest(&w, 5);
    let c = correlator(&w, &eph, &cert, T0);
    w.center.commit_correlator(w.server.id(), &c, &w.ticket, Quantity::ONE, T0).unwrap();
    let snap = w.center.snapshot();
    let bytes = canonical_encode(&snap);
    let restored = ClearanceCenter::restore(incognito_core::codec::canonical_decode(&bytes).unwrap(), 0);
    assert_eq!(restored.snapshot(), snap);
    assert_eq!(restored.balance(&slot(&w)), Some(Quantity::Integer(4)));
}

#[test]
fn implied_enrollments_are_granted() {
    // purchasing -> admin division -> employee; only "employee" is granted.
    let mut w = World::new(Scheme::Real);
    let (p, a, e) = (w.org.enrollment("purchasing"), w.org.enrollment("admin-division"), w.org.enrollment("employee"));
    w.org.set_implications(ImplicationMap::from_edges([(p.clone(), a.clone()), (a, e.clone())]));
    let mut agreement = ServiceAgreement::new(w.org.id().clone());
    agreement.grant(e, incognito_core::token::Grant::new(incognito_core::token::Ticket::new(w.ticket.clone())));
    w.producer.draft(agreement);
    w.producer.negotiate_agreement(&mut w.org, &w.center).unwrap();
    let (eph, cert) = honest(&w, 5);
    assert_eq!(code(&w.center.decide(&q(&w, blob(&w, &eph, w.org.id(), &cert)), T0)), None);
}
