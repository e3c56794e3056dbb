//! Acceptance checks. Runs as a plain binary and prints one line per
//! criterion.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use incognito_core::agents::{OrgAdmin, ProducerAdmin, RotationPolicy, ServerDirectory, UserAgent};
use incognito_core::clearance::ClearanceCenter;
use incognito_core::codec::{canonical_decode, canonical_encode};
use incognito_core::envelope::{EphemeralKeyPair, KeyPair, Scheme};
use incognito_core::local::{DirectLink, LocalNetwork};
use incognito_core::messages::{ClearanceBlob, ClearanceQuery, ClearanceVerdict, Params, WireMessage};
use incognito_core::modifier::{Modifier, Quantity};
use incognito_core::server::{AclEntry, ClearanceRef, Disposition, Resource, ResourceKind, ResourceServer};
use incognito_core::token::{Enrollment, Grant, ImplicationMap, ServiceAgreement, Ticket, Token};
use incognito_sim::attacks::{random_replays, replay_drill, steal_certificate, tamper_drill, StealVariant, TamperVerdict};
use incognito_sim::harness::{Note, Transcript};
use incognito_sim::privacy;
use incognito_sim::scenario::{run, Crypto, Scenario};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use uuid::Uuid;

type Outcome = Result<String, String>;

fn fixtures() -> Vec<(String, Scenario)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, Scenario::from_json(&fs::read_to_string(&p).unwrap()).unwrap())
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn fixture(name: &str) -> Scenario {
    fixtures().into_iter().find(|(n, _)| n == name).unwrap().1
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn message_counts() -> Outcome {
    let (plain, _) = run(&fixture("honest")).map_err(|e| e.to_string())?;
    check(plain.steps[0].outcome == "granted" && plain.steps[0].messages == 4, || {
        format!("plain request used {} messages", plain.steps[0].messages)
    })?;
    let (debit, _) = run(&fixture("debit")).map_err(|e| e.to_string())?;
    check(debit.steps[0].outcome == "granted" && debit.steps[0].messages == 7, || {
        format!("confirmed debit used {} messages", debit.steps[0].messages)
    })?;
    let (silent, _) = run(&fixture("replay")).map_err(|e| e.to_string())?;
    check(silent.steps[0].messages == 5, || {
        format!("unconfirmed debit used {} messages", silent.steps[0].messages)
    })?;
    Ok("plain 4, confirmed debit 7, unconfirmed debit 5".into())
}

fn counter_scenario() -> Scenario {
    let mut s = fixture("replay");
    s.adversary.clear();
    s.steps = (0..6)
        .flat_map(|i| {
            [
                serde_json::json!({"op": "request", "user": "alice", "server": "library", "resource": "counter", "expect": "granted"}),
                serde_json::json!({"op": "advance", "seconds": 40 + 30 * i}),
            ]
        })
        .map(|v| serde_json::from_value(v).unwrap())
        .collect();
    s
}

fn replay_resistance() -> Outcome {
    let base = counter_scenario();
    let (honest, dep) = run(&base).map_err(|e| e.to_string())?;
    let len = dep.harness.transcript().len() as u64;
    let honest_grants = honest.steps.iter().filter(|s| s.outcome == "granted").count() as u64;
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let schedules = 128;
    let mut fired = 0;
    for i in 0..schedules {
        let mut s = base.clone();
        s.seed = i;
        s.adversary = random_replays(len, rng.gen_range(1..12), 700, &mut rng);
        let (report, dep) = run(&s).map_err(|e| e.to_string())?;
        let counter = dep.resource("library", "counter").unwrap().clone();
        let value = dep.harness.server("library").unwrap().counter(&counter).unwrap_or(0);
        check(value == honest_grants, || format!("schedule {i}: counter {value}, expected {honest_grants}"))?;
        check(report.all_matched, || format!("schedule {i} disturbed honest requests"))?;
        let t = dep.harness.transcript();
        let served_replay = dep.harness.deliveries().iter().any(|d| {
            matches!(t.entries[d.seq as usize].note, Note::Replay(_)) && matches!(d.disposition, Some(Disposition::Served { .. }))
        });
        check(!served_replay, || format!("schedule {i}: a replay was served"))?;
        fired += report.steps.iter().map(|s| s.replays.len()).sum::<usize>();
    }
    for (name, s) in fixtures() {
        let drill = replay_drill(&s, 30).map_err(|e| e.to_string())?;
        check(drill.denied(), || format!("{name}: replay of every message was not fully denied"))?;
    }
    Ok(format!(
        "{schedules} random schedules ({fired} replays fired), counter always {honest_grants}; full replay drill denied on every fixture"
    ))
}

fn theft() -> Outcome {
    let (report, dep) = run(&fixture("theft")).map_err(|e| e.to_string())?;
    check(report.all_matched, || report.to_text())?;
    for (name, s) in fixtures() {
        if s.users.len() < 2 {
            continue;
        }
        let (_, dep) = run(&s).map_err(|e| e.to_string())?;
        let victim = &s.users[0].name;
        let thief = &s.users[1].name;
        let Some(rec) = dep.harness.requests().into_iter().find(|r| &r.user == victim && r.sent.is_some()) else {
            continue;
        };
        let resource = rec.sent.unwrap().resource;
        let served_before: u64 = dep.harness.servers().map(|(_, s)| s.served()).sum();
        for v in StealVariant::ALL {
            let o = steal_certificate(&dep.harness, thief, victim, &rec.server, &resource, v).map_err(|e| e.to_string())?;
            // The victim's own standing (budget, time) may refuse first.
            check(o.parse::<incognito_core::messages::FailureCode>().is_ok(), || format!("{name}: {v:?} gave {o}"))?;
        }
        let served_after: u64 = dep.harness.servers().map(|(_, s)| s.served()).sum();
        check(served_before == served_after, || format!("{name}: theft was served"))?;
    }
    let tamper = tamper_drill(&fixture("theft"), 5).map_err(|e| e.to_string())?;
    check(tamper.iter().all(|t| t.verdict != TamperVerdict::Violation), || "tampering produced a violation".into())?;
    drop(dep);
    Ok(format!("4 theft variants give BadSignature in the theft fixture and are refused on every multi-user fixture; {} tampered runs, none served", tamper.len()))
}

fn revocation() -> Outcome {
    let (report, _) = run(&fixture("revocations")).map_err(|e| e.to_string())?;
    check(report.all_matched, || report.to_text())?;
    let outcomes: Vec<&str> = report.steps.iter().map(|s| s.outcome.as_str()).collect();
    for code in ["NotAuthorized", "Expired"] {
        check(outcomes.contains(&code), || format!("{code} not observed"))?;
    }
    Ok("ACL removal, grant removal and agreement class deletion give NotAuthorized; expiry gives Expired".into())
}

fn calendar() -> Outcome {
    let (report, _) = run(&fixture("calendar")).map_err(|e| e.to_string())?;
    check(report.all_matched, || report.to_text())?;
    let got: Vec<&str> = report
        .steps
        .iter()
        .filter(|s| s.op == "request")
        .map(|s| s.outcome.as_str())
        .collect();
    check(got == ["granted", "ModifierDenied", "ModifierDenied"], || format!("{got:?}"))?;
    Ok("10:00 in May granted, 23:00 refused, October refused".into())
}

fn debit_storm() -> Outcome {
    let scheme = Scheme::Real;
    let mut r = ChaCha20Rng::seed_from_u64(66);
    let center = ClearanceCenter::new(
        Token::named(Uuid::from_u128(0xc1), "clearance").unwrap(),
        KeyPair::generate(scheme, &mut r),
        1,
    );
    let sid = Token::named(Uuid::from_u128(0x51), "printer").unwrap();
    let mut server = ResourceServer::new(
        sid.clone(),
        KeyPair::generate(scheme, &mut r),
        ClearanceRef {
            id: center.id().clone(),
            key: center.public_key(),
        },
        300,
        2,
    );
    let res = Token::named(Uuid::from_u128(0x51), "print").unwrap();
    server.add_resource(res.clone(), Resource::new(ResourceKind::Counter));
    center.register_server(sid.clone(), server.public_key());
    let ticket = center.mint_ticket("prints");
    server.load_acl([AclEntry::new(ticket.clone(), res.clone())]);
    let oid = Token::named(Uuid::from_u128(0xa0), "acme").unwrap();
    let mut org = OrgAdmin::new(oid.clone(), KeyPair::generate(scheme, &mut r));
    let mut agreement = ServiceAgreement::new(oid);
    agreement.grant(
        org.enrollment("staff"),
        Grant::with_modifiers(
            Ticket::new(ticket),
            vec![Modifier::debit(Quantity::Integer(100), "pages", true, "printing").unwrap()],
        ),
    );
    let mut producer = ProducerAdmin::new();
    producer.draft(agreement);
    producer.negotiate_agreement(&mut org, &center).unwrap();
    let now = 925_725_600;
    let users: Vec<UserAgent> = (0..8)
        .map(|i| {
            let name = format!("u{i}");
            org.add_member(&name, &["staff"]);
            let mut u = UserAgent::new(name, scheme, RotationPolicy::OnRefresh, 100 + i);
            u.learn_server(
                sid.clone(),
                ServerDirectory {
                    key: server.public_key(),
                    clearance: server.clearance().clone(),
                },
            );
            u.refresh_enrollments(&org, now).unwrap();
            u
        })
        .collect();
    let served = AtomicU64::new(0);
    let declined = AtomicU64::new(0);
    let exhausted = AtomicU64::new(0);
    std::thread::scope(|scope| {
        for (i, mut u) in users.into_iter().enumerate() {
            let (center, server, sid, res) = (&center, &server, &sid, &res);
            let (served, declined, exhausted) = (&served, &declined, &exhausted);
            scope.spawn(move || {
                let net = LocalNetwork::new(now).server(server).center(center);
                for k in 0..20 {
                    // Every third request of odd threads is declined.
                    let approve = i % 2 == 0 || k % 3 != 0;
                    match u.request_service(&net, sid, res, &Params::new(), now, &[], &mut |_| approve) {
                        Ok(_) => served.fetch_add(1, Ordering::SeqCst),
                        Err(e) if e.code().map(|c| c.name()) == Some("ConfirmRequired") => declined.fetch_add(1, Ordering::SeqCst),
                        Err(e) if e.code().map(|c| c.name()) == Some("DebitExhausted") => exhausted.fetch_add(1, Ordering::SeqCst),
                        Err(e) => panic!("unexpected {e}"),
                    };
                }
            });
        }
    });
    let served = served.into_inner();
    let declined = declined.into_inner();
    let exhausted = exhausted.into_inner();
    let counter = server.counter(&res).unwrap_or(0);
    check(served == 100 && counter == 100, || format!("served {served}, counter {counter}"))?;
    check(served + declined + exhausted == 160, || "requests went missing".into())?;
    check(
        center.balances().values().all(|q| *q == Quantity::Integer(0)),
        || format!("balances left: {:?}", center.balances()),
    )?;
    Ok(format!("8 threads, 160 requests: 100 served, {declined} declined, {exhausted} exhausted"))
}

fn privacy_scan() -> Outcome {
    let mut needles = 0;
    let mut occurrences = 0;
    for (name, mut s) in fixtures() {
        s.crypto = Crypto::Marker;
        let (_, dep) = run(&s).map_err(|e| e.to_string())?;
        let report = privacy::scan(&dep.harness);
        check(report.clean(), || format!("{name}: {:?}", report.violations.first()))?;
        needles += report.needles;
        occurrences += report.occurrences;
        let linked = privacy::linked_keys(&dep.harness);
        for rec in dep.harness.requests() {
            let rotating = s
                .users
                .iter()
                .any(|u| u.name == rec.user && u.rotation == incognito_sim::scenario::Rotation::EveryRequest);
            if let (true, Some(k)) = (rotating, &rec.user_key) {
                check(!linked.contains(k), || format!("{name}: {} reused a key", rec.user))?;
            }
        }
    }
    // The detector itself must see a static key reused.
    let mut honest = fixture("honest");
    honest.crypto = Crypto::Marker;
    let (_, dep) = run(&honest).map_err(|e| e.to_string())?;
    check(!privacy::linked_keys(&dep.harness).is_empty(), || "linkage detector is blind".into())?;
    check(occurrences > needles, || "scan found nothing to check".into())?;
    Ok(format!("{needles} sensitive values, {occurrences} occurrences, all sealed to the right party; rotating users unlinkable"))
}

fn oracle_closure(held: &BTreeSet<usize>, edges: &[(usize, usize)]) -> BTreeSet<usize> {
    let mut c = held.clone();
    loop {
        let before = c.len();
        for (a, b) in edges {
            if c.contains(a) {
                c.insert(*b);
            }
        }
        if c.len() == before {
            return c;
        }
    }
}

fn random_instances() -> Outcome {
    let scheme = Scheme::Real;
    let mut r = ChaCha20Rng::seed_from_u64(8);
    let center = ClearanceCenter::new(Token::named(Uuid::from_u128(0xc8), "c").unwrap(), KeyPair::generate(scheme, &mut r), 3);
    let sid = Token::named(Uuid::from_u128(0x58), "s").unwrap();
    let server_keys = KeyPair::generate(scheme, &mut r);
    center.register_server(sid.clone(), server_keys.public_key());
    let oid = Token::named(Uuid::from_u128(0xa8), "o").unwrap();
    let org_keys = KeyPair::generate(scheme, &mut r);
    let groups: Vec<Enrollment> = (0..7).map(|i| Enrollment::for_group(&oid, &format!("g{i}")).unwrap()).collect();
    let tickets: Vec<Token> = (0..6).map(|i| center.mint_ticket(&format!("t{i}"))).collect();
    let now = 925_725_600;
    let mut granted = 0;
    for n in 0..1000 {
        let held: BTreeSet<usize> = (0..r.gen_range(0..=5)).map(|_| r.gen_range(0..groups.len())).collect();
        let edges: Vec<(usize, usize)> = (0..r.gen_range(0..=6))
            .map(|_| (r.gen_range(0..groups.len()), r.gen_range(0..groups.len())))
            .collect();
        let grants: Vec<(usize, usize)> = (0..r.gen_range(0..=5))
            .map(|_| (r.gen_range(0..groups.len()), r.gen_range(0..tickets.len())))
            .collect();
        let mut pool: Vec<usize> = (0..tickets.len()).collect();
        pool.shuffle(&mut r);
        let candidates: BTreeSet<usize> = pool.into_iter().take(r.gen_range(0..=3)).collect();

        let mut agreement = ServiceAgreement::new(oid.clone());
        for (g, t) in &grants {
            agreement.grant(groups[*g].clone(), Grant::new(Ticket::new(tickets[*t].clone())));
        }
        let map = ImplicationMap::from_edges(edges.iter().map(|(a, b)| (groups[*a].clone(), groups[*b].clone())));
        let mut org = OrgAdmin::new(oid.clone(), org_keys.clone());
        org.set_implications(map.clone());
        let names: Vec<String> = held.iter().map(|g| format!("g{g}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        org.add_member("u", &refs);
        center.register_agreement(oid.clone(), org_keys.public_key(), map, agreement).unwrap();
        let eph = EphemeralKeyPair::generate(scheme, &mut r);
        let cert = org.issue_enrollment("u", &eph.public_key(), now).unwrap().certificate;
        let query = ClearanceQuery {
            server: sid.clone(),
            clearance: ClearanceBlob::build(&eph, &oid, &cert, center.id(), &center.public_key(), &mut r),
            candidates: candidates.iter().map(|t| tickets[*t].clone()).collect(),
        };

        let closed = oracle_closure(&held, &edges);
        let expected: Option<&Token> = candidates
            .iter()
            .filter(|t| grants.iter().any(|(g, gt)| gt == *t && closed.contains(g)))
            .map(|t| &tickets[*t])
            .min();
        let got = match center.decide(&query, now) {
            ClearanceVerdict::Granted(g) => Some(g.ticket.token),
            ClearanceVerdict::Denied { failure, .. } => {
                check(failure.code.name() == "NotAuthorized", || format!("instance {n}: {failure}"))?;
                None
            }
        };
        check(got.as_ref() == expected, || {
            format!("instance {n}: held {held:?} edges {edges:?} grants {grants:?} candidates {candidates:?}: got {got:?}")
        })?;
        granted += got.is_some() as usize;
    }
    check(granted > 100 && granted < 900, || format!("degenerate sample: {granted} granted"))?;
    Ok(format!("1000 random instances agree with the brute-force oracle ({granted} granted)"))
}

fn mutate(base: &[u8], r: &mut ChaCha20Rng) -> Vec<u8> {
    let mut b = base.to_vec();
    match r.gen_range(0..5) {
        0 if !b.is_empty() => {
            for _ in 0..r.gen_range(1..=4) {
                let i = r.gen_range(0..b.len());
                b[i] ^= r.gen_range(1..=255u8);
            }
        }
        1 if !b.is_empty() => b.truncate(r.gen_range(0..b.len())),
        2 => b.extend((0..r.gen_range(1..16)).map(|_| r.gen::<u8>())),
        3 if b.len() > 1 => b[1] = r.gen(),
        _ => {
            let i = r.gen_range(0..=b.len());
            b.insert(i, r.gen());
        }
    }
    b
}

fn fuzz() -> Outcome {
    let s = fixture("debit");
    let (_, dep) = run(&s).map_err(|e| e.to_string())?;
    let corpus: Vec<Vec<u8>> = dep
        .harness
        .transcript()
        .entries
        .iter()
        .flat_map(|e| std::iter::once(e.bytes.clone()).chain(e.reply.clone()))
        .collect();
    let h = &dep.harness;
    let server = h.server("printer").unwrap();
    let center = h.center("clearance").unwrap();
    let user = h.user("alice").unwrap().borrow().clone();
    let served_before = server.served();
    let balances = center.balances();
    let now = h.now();
    let link = DirectLink { center, now };
    let mut r = ChaCha20Rng::seed_from_u64(9);
    let total = 100_000;
    let started = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(|| {
        let mut decoded = 0usize;
        for n in 0..total {
            let input = if n % 2 == 0 {
                (0..r.gen_range(0..300)).map(|_| r.gen::<u8>()).collect::<Vec<u8>>()
            } else {
                mutate(corpus.choose(&mut r).unwrap(), &mut r)
            };
            decoded += WireMessage::decode(&input).is_ok() as usize;
            let _ = canonical_decode::<Transcript>(&input);
            let _ = user.read_reply(&input);
            let _ = center.receive(&input, now);
            let handled = server.receive(&input, now, &link, &mut |_| None);
            if let Disposition::Served { .. } = handled.disposition {
                panic!("fuzz input {n} was served");
            }
            if n % 10 == 0 {
                let _ = Scenario::from_json(&String::from_utf8_lossy(&input));
            }
        }
        decoded
    }));
    let decoded = result.map_err(|_| "a handler panicked or served a fuzz input".to_string())?;
    check(server.served() == served_before, || "fuzzing changed the served count".into())?;
    check(center.balances() == balances, || "fuzzing moved a debit balance".into())?;
    // Sanity: unmodified corpus still parses.
    check(corpus.iter().all(|c| WireMessage::decode(c).is_ok()), || "corpus does not parse".into())?;
    let _ = canonical_encode(&h.transcript());
    Ok(format!(
        "{total} inputs to 5 parsers and handlers, {decoded} well formed, no panic, nothing served ({:.1}s)",
        started.elapsed().as_secs_f64()
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("message counts", message_counts),
        ("replay resistance", replay_resistance),
        ("stolen certificates", theft),
        ("revocation", revocation),
        ("calendar modifiers", calendar),
        ("concurrent debits", debit_storm),
        ("wire privacy", privacy_scan),
        ("clearance vs oracle", random_instances),
        ("fuzzing", fuzz),
    ];
    let quiet = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (title, f)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(f).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} {title}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {title}: FAIL ({why})", i + 1);
            }
        }
    }
    panic::set_hook(quiet);
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
