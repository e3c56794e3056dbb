use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use incognito_core::agents::{OrgAdmin, ProducerAdmin, RotationPolicy, ServerDirectory, UserAgent};
use incognito_core::clearance::ClearanceCenter;
use incognito_core::codec::canonical_decode;
use incognito_core::envelope::{marker, EphemeralKeyPair, KeyPair, Scheme};
use incognito_core::messages::{IssuedCertificate, Params, WireMessage};
use incognito_core::server::{Acl, AclEntry, ClearanceRef, ResourceServer};
use incognito_core::token::{Grant, ImplicationMap, ServiceAgreement, Ticket, Token};
use incognito_sim::attacks::{replay_drill, steal_certificate, tamper_drill, StealVariant, TamperVerdict};
use incognito_sim::harness::{Entry, Harness, Transcript};
use incognito_sim::scenario::{
    build_all, derive_seed, outcome_matches, KindSpec, request_outcome, run, uuid_for, Crypto, Scenario, ScenarioError, Step,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::{json, Value};

use crate::files::{
    read_canonical, read_json, read_text, write, write_canonical, AclFile, GrantsFile, KeyFile, Role, Secret,
    ServerConfig, State,
};
use crate::{Attack, Cli, CliError, Command, CryptoArg, Format};

struct Ctx<'a> {
    cli: &'a Cli,
    state: State,
    out: &'a mut String,
}

impl Ctx<'_> {
    fn seed(&self) -> u64 {
        self.cli.seed.unwrap_or(0)
    }

    fn json(&self) -> bool {
        self.cli.format == Format::Json
    }

    fn emit(&mut self, text: &str, value: Value) {
        if self.json() {
            self.out.push_str(&serde_json::to_string_pretty(&value).expect("json value"));
            self.out.push('\n');
        } else {
            self.out.push_str(text);
        }
    }

    fn allow(&self, scheme: Scheme) -> Result<(), CliError> {
        if scheme == Scheme::Marker && !self.cli.unsafe_marker {
            return Err(CliError::invalid(
                "UnsafeCrypto",
                "the marker scheme is transparent; pass --unsafe-marker to use it",
            ));
        }
        Ok(())
    }
}

pub fn execute(cli: &Cli, out: &mut String) -> Result<(), CliError> {
    let mut ctx = Ctx {
        cli,
        state: State {
            dir: cli.state_dir.clone(),
        },
        out,
    };
    match &cli.command {
        Command::Keygen { role, name } => keygen(&mut ctx, *role, name),
        Command::RegisterServer { clearance, server } => register_server(&mut ctx, clearance, server),
        Command::Agree { clearance, org, grants } => agree(&mut ctx, clearance, org, grants),
        Command::Acl {
            server,
            clearance,
            entries,
            replay_window,
        } => acl(&mut ctx, server, clearance, entries, *replay_window),
        Command::Enroll {
            org,
            user,
            groups,
            now,
            lifetime,
        } => enroll(&mut ctx, org, user, groups, *now, *lifetime),
        Command::Request {
            user,
            org,
            server,
            resource,
            now,
            params,
            decline,
            expect,
            transcript,
        } => {
            let req = Req {
                user,
                org,
                server,
                resource,
                now: *now,
                params,
                approve: !decline,
            };
            request(&mut ctx, &req, expect.as_deref(), transcript.as_deref())
        }
        Command::Run {
            scenario,
            report,
            transcript,
        } => run_scenario(&mut ctx, scenario, report.as_deref(), transcript.as_deref()),
        Command::Attack { scenario, attack } => attack_drill(&mut ctx, scenario, *attack),
        Command::Inspect { transcript } => inspect(&mut ctx, transcript),
    }
}

fn check_name(name: &str) -> Result<(), CliError> {
    let ok = !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        && !name.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(CliError::invalid("Malformed", format!("bad name {name:?}")))
    }
}

fn token(kind: &str, name: &str) -> Result<Token, CliError> {
    Token::named(uuid_for(kind, name), name).map_err(|e| CliError::invalid("Malformed", format!("{name:?}: {e}")))
}

fn keygen(ctx: &mut Ctx<'_>, role: Role, name: &str) -> Result<(), CliError> {
    check_name(name)?;
    let scheme = match ctx.cli.crypto.unwrap_or(CryptoArg::Real) {
        CryptoArg::Real => Scheme::Real,
        CryptoArg::Marker => Scheme::Marker,
    };
    ctx.allow(scheme)?;
    let key_path = ctx.state.key_path(name);
    if key_path.exists() {
        return Err(CliError::invalid("AlreadyExists", format!("{} exists", key_path.display())));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(ctx.seed(), &format!("keygen:{}:{name}", role.name())));
    let secret = match role {
        Role::User => Secret::Ephemeral(EphemeralKeyPair::generate(scheme, &mut rng)),
        _ => Secret::LongTerm(KeyPair::generate(scheme, &mut rng)),
    };
    let key = KeyFile {
        role,
        name: name.to_string(),
        id: token(role.name(), name)?,
        secret,
    };
    write_canonical(&key_path, &key)?;
    write_canonical(&ctx.state.pub_path(name), &key.identity())?;
    if role == Role::Clearance {
        let center = ClearanceCenter::new(key.id.clone(), key.long_term()?.clone(), 0);
        write_canonical(&ctx.state.path(&format!("{name}.state")), &center.snapshot())?;
    }
    let fp = hex::encode(key.public_key().fingerprint());
    ctx.emit(
        &format!("{} {name} key {fp}\n", role.name()),
        json!({"role": role.name(), "name": name, "fingerprint": fp}),
    );
    Ok(())
}

fn load_center(ctx: &Ctx<'_>, name: &str, seed_label: &str) -> Result<ClearanceCenter, CliError> {
    ctx.state.identity(name, Role::Clearance, "UnknownClearance")?;
    let path = ctx.state.path(&format!("{name}.state"));
    if !path.exists() {
        return Err(CliError::invalid("UnknownClearance", format!("no state for clearance center {name:?}")));
    }
    let snapshot = read_canonical(&path)?;
    let c = ClearanceCenter::restore(snapshot, derive_seed(ctx.seed(), seed_label));
    ctx.allow(c.public_key().scheme())?;
    Ok(c)
}

fn save_center(ctx: &Ctx<'_>, name: &str, c: &ClearanceCenter) -> Result<(), CliError> {
    write_canonical(&ctx.state.path(&format!("{name}.state")), &c.snapshot())
}

fn register_server(ctx: &mut Ctx<'_>, clearance: &str, server: &str) -> Result<(), CliError> {
    let c = load_center(ctx, clearance, "register")?;
    let s = ctx.state.identity(server, Role::Server, "UnknownServer")?;
    c.register_server(s.id.clone(), s.key.clone());
    save_center(ctx, clearance, &c)?;
    ctx.emit(
        &format!("registered server {server} at {clearance}\n"),
        json!({"clearance": clearance, "server": server}),
    );
    Ok(())
}

fn agree(ctx: &mut Ctx<'_>, clearance: &str, org: &str, grants: &Path) -> Result<(), CliError> {
    let c = load_center(ctx, clearance, "agree")?;
    let okey = ctx.state.key(org, Role::Org, "UnknownOrg")?;
    let file: GrantsFile = read_json(grants)?;
    let mut admin = OrgAdmin::new(okey.id.clone(), okey.long_term()?.clone());
    let edges: Vec<_> = file
        .implications
        .iter()
        .map(|(a, b)| (admin.enrollment(a), admin.enrollment(b)))
        .collect();
    admin.set_implications(ImplicationMap::from_edges(edges));
    let mut agreement = ServiceAgreement::new(okey.id.clone());
    for g in &file.grants {
        let ticket = Ticket::new(c.mint_ticket(&g.ticket));
        let mods = build_all(&g.modifiers).map_err(|e| CliError::invalid("Malformed", e.to_string()))?;
        agreement.grant(admin.enrollment(&g.group), Grant::with_modifiers(ticket, mods));
    }
    let mut producer = ProducerAdmin::new();
    producer.draft(agreement);
    producer
        .negotiate_agreement(&mut admin, &c)
        .map_err(|e| CliError::invalid("AgreementRejected", e.to_string()))?;
    save_center(ctx, clearance, &c)?;
    ctx.emit(
        &format!("agreement for {org} registered at {clearance}: {} grants\n", file.grants.len()),
        json!({"clearance": clearance, "org": org, "grants": file.grants.len()}),
    );
    Ok(())
}

fn acl(ctx: &mut Ctx<'_>, server: &str, clearance: &str, entries: &Path, replay_window: u64) -> Result<(), CliError> {
    let c = load_center(ctx, clearance, "acl")?;
    let skey = ctx.state.key(server, Role::Server, "UnknownServer")?;
    let file: AclFile = read_json(entries)?;
    let mut names = BTreeSet::new();
    for r in &file.resources {
        r.build().map_err(|e| CliError::invalid("Malformed", e.to_string()))?;
        if !names.insert(r.name.as_str()) {
            return Err(CliError::invalid("Malformed", format!("duplicate resource {:?}", r.name)));
        }
    }
    let mut list = Vec::new();
    for e in &file.entries {
        if !names.contains(e.resource.as_str()) {
            return Err(CliError::invalid("Malformed", format!("entry names unknown resource {:?}", e.resource)));
        }
        let mods = build_all(&e.modifiers).map_err(|e| CliError::invalid("Malformed", e.to_string()))?;
        list.push(AclEntry::with_modifiers(
            c.mint_ticket(&e.ticket),
            resource_id(&skey.id, &e.resource)?,
            mods,
        ));
    }
    write_canonical(&ctx.state.path(&format!("{server}.acl")), &Acl::new(list))?;
    let config = ServerConfig {
        clearance: clearance.to_string(),
        replay_window,
        resources: file.resources.clone(),
    };
    let text = serde_json::to_string_pretty(&config).expect("config serializes");
    write(&ctx.state.path(&format!("{server}.server.json")), text.as_bytes())?;
    ctx.emit(
        &format!(
            "{server}: {} resources, {} acl entries, clearing at {clearance}\n",
            file.resources.len(),
            file.entries.len()
        ),
        json!({"server": server, "clearance": clearance, "resources": file.resources.len(), "entries": file.entries.len()}),
    );
    Ok(())
}

fn resource_id(server: &Token, name: &str) -> Result<Token, CliError> {
    Token::named(server.creator(), name).map_err(|e| CliError::invalid("Malformed", format!("resource {name:?}: {e}")))
}

fn cert_path(user: &str, org: &str) -> String {
    format!("{user}@{org}.cert")
}

fn enroll(
    ctx: &mut Ctx<'_>,
    org: &str,
    user: &str,
    groups: &[String],
    now: u64,
    lifetime: Option<u64>,
) -> Result<(), CliError> {
    let okey = ctx.state.key(org, Role::Org, "UnknownOrg")?;
    ctx.allow(okey.public_key().scheme())?;
    let u = ctx.state.identity(user, Role::User, "UnknownMember")?;
    let mut admin = OrgAdmin::new(okey.id.clone(), okey.long_term()?.clone());
    if let Some(l) = lifetime {
        admin = admin.with_lifetime(l);
    }
    let groups: Vec<&str> = groups.iter().map(String::as_str).filter(|g| !g.is_empty()).collect();
    admin.add_member(user, &groups);
    let issued = admin
        .issue_enrollment(user, &u.key.into(), now)
        .map_err(|e| CliError::invalid("UnknownMember", e.to_string()))?;
    write_canonical(&ctx.state.path(&cert_path(user, org)), &issued)?;
    ctx.emit(
        &format!("{user} enrolled in {org} as {} until {}\n", groups.join(","), issued.expiry),
        json!({"org": org, "user": user, "groups": groups, "expiry": issued.expiry}),
    );
    Ok(())
}

struct Req<'a> {
    user: &'a str,
    org: &'a str,
    server: &'a str,
    resource: &'a str,
    now: u64,
    params: &'a [String],
    approve: bool,
}

fn parse_params(raw: &[String]) -> Result<Params, CliError> {
    raw.iter()
        .map(|p| {
            p.split_once('=')
                .map(|(k, v)| (k.as_bytes().to_vec(), v.as_bytes().to_vec()))
                .ok_or_else(|| CliError::invalid("Malformed", format!("parameter {p:?} is not key=value")))
        })
        .collect()
}

fn request(ctx: &mut Ctx<'_>, req: &Req<'_>, expect: Option<&str>, transcript: Option<&Path>) -> Result<(), CliError> {
    let params = parse_params(req.params)?;
    let ukey = ctx.state.key(req.user, Role::User, "UnknownMember")?;
    let Secret::Ephemeral(ephemeral) = ukey.secret.clone() else {
        return Err(CliError::invalid("Malformed", format!("{} is not a user key", req.user)));
    };
    ctx.allow(ephemeral.key_pair().scheme())?;
    let org = ctx.state.identity(req.org, Role::Org, "UnknownOrg")?;
    let cpath = ctx.state.path(&cert_path(req.user, req.org));
    if !cpath.exists() {
        return Err(CliError::invalid(
            "NotAuthorized",
            format!("{} holds no certificate from {}", req.user, req.org),
        ));
    }
    let issued: IssuedCertificate = read_canonical(&cpath)?;
    let skey = ctx.state.key(req.server, Role::Server, "UnknownServer")?;
    let cfg_path = ctx.state.path(&format!("{}.server.json", req.server));
    if !cfg_path.exists() {
        return Err(CliError::invalid(
            "UnknownServer",
            format!("server {:?} has no resources; run acl first", req.server),
        ));
    }
    let cfg: ServerConfig = read_json(&cfg_path)?;
    let acl: Acl = read_canonical(&ctx.state.path(&format!("{}.acl", req.server)))?;
    let label = format!("{}:{}:{}", req.user, req.server, req.now);
    let center = load_center(ctx, &cfg.clearance, &format!("clearance:{label}"))?;
    let cref = ClearanceRef {
        id: center.id().clone(),
        key: center.public_key(),
    };
    let mut server = ResourceServer::new(
        skey.id.clone(),
        skey.long_term()?.clone(),
        cref.clone(),
        cfg.replay_window,
        derive_seed(ctx.seed(), &format!("server:{label}")),
    );
    let mut rid = None;
    let mut counter = false;
    for r in &cfg.resources {
        let id = resource_id(&skey.id, &r.name)?;
        if r.name == req.resource {
            rid = Some(id.clone());
            counter = r.kind == KindSpec::Counter;
        }
        server.add_resource(id, r.build().map_err(|e| CliError::invalid("Malformed", e.to_string()))?);
    }
    let rid = rid.ok_or_else(|| {
        CliError::invalid("UnknownResource", format!("{:?} has no resource {:?}", req.server, req.resource))
    })?;
    server.load_acl(acl.entries);

    let clearances: BTreeSet<Token> = center.org(&org.id).map(|_| cref.id.clone()).into_iter().collect();
    let mut agent = UserAgent::with_ephemeral(
        req.user,
        ephemeral,
        RotationPolicy::Never,
        derive_seed(ctx.seed(), &format!("user:{label}")),
    );
    agent.learn_server(
        skey.id.clone(),
        ServerDirectory {
            key: server.public_key(),
            clearance: cref,
        },
    );
    agent.install_certificate(org.id.clone(), issued, clearances);

    let mut h = Harness::new(ukey.public_key().scheme(), req.now);
    h.add_center(&cfg.clearance, center);
    let skeys = skey.long_term()?.clone();
    h.add_server(req.server, server, skeys);
    h.add_user(agent);
    let rec = h
        .request(req.user, req.server, &rid, &params, req.approve)
        .map_err(|e| CliError::invalid("Malformed", e.to_string()))?;
    save_center(ctx, &cfg.clearance, h.center(&cfg.clearance).expect("added above"))?;
    let t = h.transcript();
    if let Some(p) = transcript {
        write_canonical(p, &t)?;
    }

    let outcome = request_outcome(&rec.result);
    let answer = rec.result.as_ref().ok();
    let shown = answer.map(|a| match <[u8; 8]>::try_from(a.as_slice()) {
        Ok(b) if counter => u64::from_be_bytes(b).to_string(),
        _ => String::from_utf8_lossy(a).into_owned(),
    });
    let mut text = format!("outcome: {outcome}\n");
    if let Some(a) = &shown {
        let _ = writeln!(text, "answer: {a}");
    }
    if let Err(e) = &rec.result {
        let _ = writeln!(text, "reason: {e}");
    }
    let _ = writeln!(text, "messages: {}", t.len());
    ctx.emit(
        &text,
        json!({
            "outcome": outcome,
            "answer": shown,
            "answer_hex": answer.map(hex::encode),
            "messages": t.len(),
        }),
    );
    match expect {
        Some(e) if outcome_matches(e, &outcome) => Ok(()),
        Some(e) => Err(CliError::mismatch("Mismatch", format!("expected {e}, got {outcome}"))),
        None if outcome == "granted" => Ok(()),
        None => Err(CliError::mismatch(&outcome, "request refused")),
    }
}

fn scenario_error(e: ScenarioError) -> CliError {
    match e {
        ScenarioError::Parse(m) => CliError::invalid("Malformed", m),
        other => CliError::invalid("Invalid", other.to_string()),
    }
}

fn load_scenario(ctx: &Ctx<'_>, path: &Path) -> Result<Scenario, CliError> {
    let text = read_text(path)?;
    let mut s = Scenario::from_json(&text)
        .map_err(scenario_error)
        .map_err(|e| match e {
            CliError::Validation { name, detail } => CliError::Validation {
                name,
                detail: format!("{}: {detail}", path.display()),
            },
            other => other,
        })?;
    if let Some(seed) = ctx.cli.seed {
        s.seed = seed;
    }
    if let Some(c) = ctx.cli.crypto {
        s.crypto = match c {
            CryptoArg::Real => Crypto::Real,
            CryptoArg::Marker => Crypto::Marker,
        };
    }
    ctx.allow(s.crypto.into())?;
    Ok(s)
}

fn run_scenario(ctx: &mut Ctx<'_>, path: &Path, report: Option<&Path>, transcript: Option<&Path>) -> Result<(), CliError> {
    let s = load_scenario(ctx, path)?;
    let (r, dep) = run(&s).map_err(scenario_error)?;
    let json_report = serde_json::to_string_pretty(&r).expect("report serializes");
    if let Some(p) = report {
        write(p, json_report.as_bytes())?;
    }
    if let Some(p) = transcript {
        write_canonical(p, &dep.harness.transcript())?;
    }
    ctx.emit(&r.to_text(), serde_json::from_str(&json_report).expect("report is json"));
    if r.all_matched {
        return Ok(());
    }
    let mut diff = String::new();
    for st in r.steps.iter().filter(|st| !st.matched) {
        let _ = write!(
            diff,
            "\n  step #{} {}: expected {}, got {}",
            st.index,
            st.op,
            st.expected.as_deref().unwrap_or("-"),
            st.outcome
        );
    }
    let n = r.steps.iter().filter(|st| !st.matched).count();
    Err(CliError::mismatch("Mismatch", format!("{n} step(s) differ{diff}")))
}

fn attack_drill(ctx: &mut Ctx<'_>, path: &Path, attack: Attack) -> Result<(), CliError> {
    let s = load_scenario(ctx, path)?;
    let (lines, failures): (Vec<String>, Vec<String>) = match attack {
        Attack::Replay => {
            let d = replay_drill(&s, 400).map_err(scenario_error)?;
            let lines = d.outcomes.iter().map(|(seq, o)| format!("replay #{seq}: {o}")).collect();
            let mut bad = Vec::new();
            if d.served > 0 {
                bad.push(format!("{} replays were served", d.served));
            }
            if d.counters_changed {
                bad.push("a replay changed server state".to_string());
            }
            (lines, bad)
        }
        Attack::Tamper => {
            let results = tamper_drill(&s, derive_seed(s.seed, "tamper")).map_err(scenario_error)?;
            let name = |v: TamperVerdict| match v {
                TamperVerdict::Denied => "denied",
                TamperVerdict::Harmless => "harmless",
                TamperVerdict::Violation => "VIOLATION",
            };
            let lines = results
                .iter()
                .map(|r| format!("tamper #{} byte {}: {}", r.seq, r.index, name(r.verdict)))
                .collect();
            let bad = results
                .iter()
                .filter(|r| r.verdict == TamperVerdict::Violation)
                .map(|r| format!("tampering with #{} byte {} went through", r.seq, r.index))
                .collect();
            (lines, bad)
        }
        Attack::StealCert => steal_all(&s)?,
    };
    let mut text = String::new();
    for l in &lines {
        let _ = writeln!(text, "{l}");
    }
    let _ = writeln!(
        text,
        "{} attempts, {}",
        lines.len(),
        if failures.is_empty() { "all denied" } else { "NOT ALL DENIED" }
    );
    ctx.emit(&text, json!({"attempts": lines, "failures": failures, "all_denied": failures.is_empty()}));
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::mismatch("Mismatch", failures.join("; ")))
    }
}

/// Every other user tries every theft variant on each (victim, server,
/// resource) the script grants.
fn steal_all(s: &Scenario) -> Result<(Vec<String>, Vec<String>), CliError> {
    let (report, dep) = run(s).map_err(scenario_error)?;
    let mut targets = BTreeSet::new();
    for (step, r) in s.steps.iter().zip(&report.steps) {
        if let Step::Request { user, server, resource, .. } = step {
            if r.outcome == "granted" {
                targets.insert((user.clone(), server.clone(), resource.clone()));
            }
        }
    }
    let users: Vec<String> = dep.harness.users().cloned().collect();
    let mut lines = Vec::new();
    let mut bad = Vec::new();
    for (victim, server, resource) in &targets {
        let rid = dep.resource(server, resource).map_err(scenario_error)?.clone();
        for thief in users.iter().filter(|u| *u != victim) {
            for v in StealVariant::ALL {
                let outcome = steal_certificate(&dep.harness, thief, victim, server, &rid, v)
                    .map_err(|e| CliError::invalid("Invalid", e.to_string()))?;
                let variant = serde_json::to_value(v).expect("variant serializes");
                let line = format!(
                    "{thief} as {victim} at {server}/{resource} ({}): {outcome}",
                    variant.as_str().unwrap_or("?")
                );
                if !outcome_matches("denied", &outcome) {
                    bad.push(line.clone());
                }
                lines.push(line);
            }
        }
    }
    Ok((lines, bad))
}

fn message_kind(bytes: &[u8]) -> String {
    WireMessage::decode(bytes).map_or_else(|_| "undecodable".to_string(), |m| m.kind().to_string())
}

fn regions_json(bytes: &[u8], names: &BTreeMap<[u8; 8], String>) -> Vec<Value> {
    marker::regions(bytes)
        .into_iter()
        .map(|r| {
            json!({
                "start": r.start,
                "end": r.end,
                "recipient": hex::encode(r.recipient),
                "name": names.get(&r.recipient),
            })
        })
        .collect()
}

fn entry_json(e: &Entry, names: &BTreeMap<[u8; 8], String>) -> Value {
    json!({
        "seq": e.seq,
        "from": e.from.to_string(),
        "to": e.to.to_string(),
        "kind": message_kind(&e.bytes),
        "size": e.bytes.len(),
        "time": e.time,
        "note": e.note.to_string(),
        "sealed": regions_json(&e.bytes, names),
        "reply": e.reply.as_ref().map(|r| json!({
            "kind": message_kind(r),
            "size": r.len(),
            "sealed": regions_json(r, names),
        })),
    })
}

fn inspect(ctx: &mut Ctx<'_>, path: &Path) -> Result<(), CliError> {
    let bytes = crate::files::read(path)?;
    let t: Transcript =
        canonical_decode(&bytes).map_err(|e| CliError::invalid("Malformed", format!("{}: {e}", path.display())))?;
    let names: BTreeMap<[u8; 8], String> = ctx
        .state
        .identities()
        .into_iter()
        .map(|i| (i.key.fingerprint(), format!("{}:{}", i.role.name(), i.name)))
        .collect();
    let label = |fp: &[u8; 8]| names.get(fp).cloned().unwrap_or_else(|| format!("key:{}", hex::encode(fp)));
    let mut text = format!(
        "{:>4}  {:<22} {:<22} {:<20} {:>6}  {}\n",
        "seq", "from", "to", "type", "size", "note"
    );
    for e in &t.entries {
        let _ = writeln!(
            text,
            "{:>4}  {:<22} {:<22} {:<20} {:>6}  {}",
            e.seq,
            e.from.to_string(),
            e.to.to_string(),
            message_kind(&e.bytes),
            e.bytes.len(),
            e.note
        );
        annotate(&mut text, &e.bytes, &label);
        if let Some(r) = &e.reply {
            let _ = writeln!(text, "      reply {:<20} {:>6}", message_kind(r), r.len());
            annotate(&mut text, r, &label);
        }
    }
    let value = json!({
        "messages": t.entries.iter().map(|e| entry_json(e, &names)).collect::<Vec<_>>(),
    });
    ctx.emit(&text, value);
    Ok(())
}

fn annotate(text: &mut String, bytes: &[u8], label: &dyn Fn(&[u8; 8]) -> String) {
    for r in marker::regions(bytes) {
        let _ = writeln!(text, "        sealed [{}..{}) to {}", r.start, r.end, label(&r.recipient));
    }
}
