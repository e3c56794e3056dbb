mod common;

use std::collections::BTreeSet;

use common::*;
use incognito_core::codec::{canonical_decode, canonical_encode};
use incognito_core::envelope::{
    open_value, peek_value, sign_value, CryptoError, EphemeralKeyPair, KeyPair, Scheme,
};
use incognito_core::messages::*;
use incognito_core::token::Token;
use uuid::Uuid;

fn parts<'a>(w: &'a World, eph: &'a EphemeralKeyPair, cert: &'a EnrollmentCertificate, server_key: &'a incognito_core::envelope::PublicKey) -> RequestParts<'a> {
    RequestParts {
        ephemeral: eph,
        org: w.org.id(),
        certificate: cert,
        server: w.server.id(),
        server_key,
        clearance: w.center.id(),
        clearance_key: &w.server.clearance().key,
    }
}

fn issued(w: &World, eph: &EphemeralKeyPair) -> EnrollmentCertificate {
    w.org.issue_enrollment("alice", &eph.public_key(), T0).unwrap().certificate
}

fn server_keys_for(scheme: Scheme) -> KeyPair {
    // Same derivation as the fixture: the server key is the second draw.
    let mut r = rng(1);
    let _ = KeyPair::generate(scheme, &mut r);
    KeyPair::generate(scheme, &mut r)
}

fn server_keys() -> KeyPair {
    server_keys_for(Scheme::Real)
}

#[test]
fn request_roundtrip_recovers_resource_and_params() {
    let w = World::new(Scheme::Real);
    let sk = server_keys();
    assert!(sk.matches(&w.server.public_key()));
    let eph = EphemeralKeyPair::generate(Scheme::Real, &mut rng(5));
    let cert = issued(&w, &eph);
    let z = params(&[("issue", "42"), ("fmt", "pdf")]);
    let pk = w.server.public_key();
    let (env, tau) = build_request(parts(&w, &eph, &cert, &pk), &w.echo, &z, T0, &mut rng(6));
    let bytes = canonical_encode(&env);
    let env2: RequestEnvelope = canonical_decode(&bytes).unwrap();
    let parsed = parse_request(&sk, &env2).unwrap();
    assert_eq!(parsed.resource, w.echo);
    assert_eq!(parsed.params, z);
    assert_eq!(parsed.tau, tau);
    assert_eq!(verify_tau(&parsed.signed_tau, &eph.public_key()).unwrap(), tau);
}

#[test]
fn builds_from_same_state_differ_only_in_tau() {
    let w = World::new(Scheme::Marker);
    let eph = EphemeralKeyPair::generate(Scheme::Marker, &mut rng(5));
    let cert = issued(&w, &eph);
    let pk = w.server.public_key();
    let z = params(&[("k", "v")]);
    let build = |now| build_request(parts(&w, &eph, &cert, &pk), &w.echo, &z, now, &mut rng(9)).0;
    assert_eq!(canonical_encode(&build(T0)), canonical_encode(&build(T0)));

    let body = |e: &RequestEnvelope| -> RequestBody { open_value(&server_keys_for(Scheme::Marker), &e.0).unwrap() };
    let (a, b) = (body(&build(T0)), body(&build(T0 + 7)));
    assert_eq!(a.resource, b.resource);
    assert_eq!(a.params, b.params);
    assert_eq!(canonical_encode(&a.clearance), canonical_encode(&b.clearance));
    let (ta, tb): (Tau, Tau) = (peek_value(&a.tau).unwrap(), peek_value(&b.tau).unwrap());
    assert_eq!(ta.nonce, tb.nonce);
    assert_eq!(tb.timestamp - ta.timestamp, 7);
}

#[test]
fn parse_rejects_foreign_and_truncated_envelopes() {
    let w = World::new(Scheme::Real);
    let eph = EphemeralKeyPair::generate(Scheme::Real, &mut rng(5));
    let cert = issued(&w, &eph);
    let other = KeyPair::generate(Scheme::Real, &mut rng(77));
    let pk = other.public_key();
    let (env, _) = build_request(parts(&w, &eph, &cert, &pk), &w.echo, &Params::new(), T0, &mut rng(6));
    let err = parse_request(&server_keys(), &env).unwrap_err();
    assert_eq!(err.code, FailureCode::Malformed);

    let pk = w.server.public_key();
    let (env, _) = build_request(parts(&w, &eph, &cert, &pk), &w.echo, &Params::new(), T0, &mut rng(6));
    let mut bytes = canonical_encode(&env);
    bytes.truncate(bytes.len() - 10);
    assert!(canonical_decode::<RequestEnvelope>(&bytes).is_err());
    let mut cut = env.clone();
    cut.0.ciphertext.truncate(cut.0.ciphertext.len() - 1);
    assert_eq!(parse_request(&server_keys(), &cut).unwrap_err().code, FailureCode::Malformed);
}

fn query(w: &World, eph: &EphemeralKeyPair, candidates: BTreeSet<Token>) -> ClearanceQuery {
    let cert = issued(w, eph);
    ClearanceQuery {
        server: w.server.id().clone(),
        clearance: ClearanceBlob::build(eph, w.org.id(), &cert, w.center.id(), &w.center.public_key(), &mut rng(3)),
        candidates,
    }
}

#[test]
fn clearance_request_roundtrip_and_unregistered_server() {
    let w = World::new(Scheme::Real);
    let eph = EphemeralKeyPair::generate(Scheme::Real, &mut rng(5));
    let t2 = w.center.mint_ticket("other");
    let mut cands: BTreeSet<Token> = [t2.clone(), w.ticket.clone()].into();
    let q = query(&w, &eph, cands.clone());
    let ckeys = {
        let mut r = rng(1);
        KeyPair::generate(Scheme::Real, &mut r)
    };
    let msg = build_clearance_request(&server_keys(), &q, w.center.id(), &w.center.public_key(), &mut rng(4));
    let registry = [(w.server.id().clone(), w.server.public_key())].into_iter().collect();
    let (got, key) = parse_clearance_request(&ckeys, &registry, &msg).unwrap();
    assert_eq!(got, q);
    assert_eq!(key, w.server.public_key());

    // Insertion order does not matter.
    cands.insert(w.ticket.clone());
    let q2 = ClearanceQuery {
        candidates: [w.ticket.clone(), t2].into_iter().collect(),
        ..q.clone()
    };
    assert_eq!(canonical_encode(&q2), canonical_encode(&q));

    let impostor = KeyPair::generate(Scheme::Real, &mut rng(99));
    let forged = build_clearance_request(&impostor, &q, w.center.id(), &w.center.public_key(), &mut rng(4));
    let err = parse_clearance_request(&ckeys, &registry, &forged).unwrap_err();
    assert_eq!(err.code, FailureCode::BadSignature);
    let stranger = ClearanceQuery {
        server: Token::named(Uuid::from_u128(0x99), "nobody").unwrap(),
        ..q
    };
    let msg = build_clearance_request(&impostor, &stranger, w.center.id(), &w.center.public_key(), &mut rng(4));
    assert_eq!(parse_clearance_request(&ckeys, &registry, &msg).unwrap_err().code, FailureCode::BadSignature);
}

fn granted(w: &World, eph: &EphemeralKeyPair) -> (ClearanceQuery, ClearanceVerdict) {
    let q = query(w, eph, [w.ticket.clone()].into());
    let v = w.center.decide(&q, T0);
    assert!(matches!(v, ClearanceVerdict::Granted(_)), "{v:?}");
    (q, v)
}

#[test]
fn ticket_response_signature_and_echo() {
    let w = World::new(Scheme::Real);
    let eph = EphemeralKeyPair::generate(Scheme::Real, &mut rng(5));
    let (q, verdict) = granted(&w, &eph);
    let ckeys = KeyPair::generate(Scheme::Real, &mut rng(1));
    let sk = server_keys();
    let resp = build_ticket_response(&ckeys, w.center.id(), &q.server, &sk.public_key(), &verdict, &mut rng(8));
    assert_eq!(verify_ticket_response(&sk, &w.center.public_key(), &resp).unwrap(), verdict);

    let not_c = KeyPair::generate(Scheme::Real, &mut rng(55));
    let forged = build_ticket_response(&not_c, w.center.id(), &q.server, &sk.public_key(), &verdict, &mut rng(8));
    assert_eq!(
        verify_ticket_response(&sk, &w.center.public_key(), &forged).unwrap_err().code,
        FailureCode::BadSignature
    );

    // A genuinely signed echo of someone else's key does not verify tau.
    let tau = Tau::fresh(T0, &mut rng(2));
    let signed_tau = sign_value(eph.key_pair(), &tau, None);
    let ClearanceVerdict::Granted(g) = verdict else { unreachable!() };
    assert!(verify_tau(&signed_tau, &g.subject).is_ok());
    let bob = EphemeralKeyPair::generate(Scheme::Real, &mut rng(6));
    let (_, ClearanceVerdict::Granted(gb)) = granted(&w, &bob) else { unreachable!() };
    assert_eq!(verify_tau(&signed_tau, &gb.subject).unwrap_err().code, FailureCode::BadSignature);
}

#[test]
fn answers_open_only_for_the_ephemeral_holder() {
    let eph = EphemeralKeyPair::generate(Scheme::Real, &mut rng(5));
    let other = EphemeralKeyPair::generate(Scheme::Real, &mut rng(6));
    let sealed = build_answer(&eph.public_key(), b"page 7", &mut rng(1));
    assert_eq!(open_answer(&eph, &sealed).unwrap(), b"page 7");
    assert_eq!(open_answer(&other, &sealed), Err(CryptoError::DecryptFailure));
    let empty = build_answer(&eph.public_key(), b"", &mut rng(1));
    assert_eq!(open_answer(&eph, &empty).unwrap(), Vec::<u8>::new());
}

#[test]
fn every_wire_message_roundtrips() {
    let w = World::new(Scheme::Real);
    let eph = EphemeralKeyPair::generate(Scheme::Real, &mut rng(5));
    let (q, verdict) = granted(&w, &eph);
    let sk = server_keys();
    let ckeys = KeyPair::generate(Scheme::Real, &mut rng(1));
    let pk = w.server.public_key();
    let cert = issued(&w, &eph);
    let (env, _) = build_request(parts(&w, &eph, &cert, &pk), &w.echo, &params(&[("a", "b")]), T0, &mut rng(6));
    let msgs = vec![
        WireMessage::Request(env),
        WireMessage::ClearanceRequest(build_clearance_request(&sk, &q, w.center.id(), &w.center.public_key(), &mut rng(4))),
        WireMessage::ClearanceResponse(build_ticket_response(&ckeys, w.center.id(), &q.server, &pk, &verdict, &mut rng(8))),
        WireMessage::ClearanceResponse(ClearanceResponse::Plain(Failure::malformed("x"))),
        WireMessage::ServerReply(ServerReply::Answer(build_answer(&eph.public_key(), b"hi", &mut rng(1)))),
        WireMessage::ServerReply(ServerReply::Failure(Failure::new(FailureCode::Replay, "r"))),
        WireMessage::ConfirmReply(ConfirmReply::build(
            &eph,
            &ConfirmDecision { transaction: w.ticket.clone(), approve: true },
            w.server.id(),
            &pk,
            &mut rng(2),
        )),
        WireMessage::DebitResult(DebitResult::Plain(Failure::new(FailureCode::DebitExhausted, ""))),
    ];
    for m in msgs {
        let bytes = m.encode();
        assert_eq!(WireMessage::decode(&bytes).unwrap(), m, "{}", m.kind());
    }
    for code in FailureCode::ALL {
        let f = Failure::new(code, "d");
        assert_eq!(canonical_decode::<Failure>(&canonical_encode(&f)).unwrap(), f);
        assert_eq!(code.name().parse::<FailureCode>().unwrap(), code);
    }
}

#[test]
fn certificate_verifies_only_under_issuer() {
    let w = World::new(Scheme::Real);
    let eph = EphemeralKeyPair::generate(Scheme::Real, &mut rng(5));
    let cert = issued(&w, &eph);
    let body = cert.verify(&w.org.public_key()).unwrap();
    assert_eq!(body.subject, eph.public_key());
    assert_eq!(body.expiry, T0 + 86_400);
    let other = KeyPair::generate(Scheme::Real, &mut rng(3));
    assert!(cert.verify(&other.public_key()).is_err());
    let inner: ClearanceInner = {
        let q = query(&w, &eph, BTreeSet::new());
        open_value(&KeyPair::generate(Scheme::Real, &mut rng(1)), &q.clearance.0).unwrap()
    };
    assert_eq!(inner.subject, eph.public_key());
}
