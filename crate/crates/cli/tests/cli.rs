use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_incognito")
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../sim/fixtures")
        .join(name)
}

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .arg("--state-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = cli(dir, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const GRANTS: &str = r#"{"implications": [["managers", "staff"]],
  "grants": [{"group": "staff", "ticket": "reader"},
             {"group": "managers", "ticket": "printer",
              "modifiers": [{"debit": {"remaining": "2", "unit": "pages", "confirm": true, "description": "prints"}}]}]}"#;

const ACL: &str = r#"{"resources": [{"name": "doc", "kind": {"document": "quarterly figures, internal"}},
                 {"name": "hits", "kind": "counter"},
                 {"name": "print", "kind": "counter", "debit": "1"}],
  "entries": [{"ticket": "reader", "resource": "doc"},
              {"ticket": "reader", "resource": "hits"},
              {"ticket": "printer", "resource": "print"}]}"#;

/// keygen, register-server, agree, acl, enroll.
fn deploy(dir: &Path, extra: &[&str]) {
    let with = |args: &[&str]| {
        let mut v: Vec<&str> = extra.to_vec();
        v.extend_from_slice(args);
        ok(dir, &v);
    };
    fs::write(dir.join("grants.json"), GRANTS).unwrap();
    fs::write(dir.join("acl.json"), ACL).unwrap();
    with(&["keygen", "--role", "clearance", "--name", "cc"]);
    with(&["keygen", "--role", "server", "--name", "lib"]);
    with(&["keygen", "--role", "org", "--name", "acme"]);
    with(&["keygen", "--role", "user", "--name", "alice"]);
    with(&["keygen", "--role", "user", "--name", "eve"]);
    with(&["register-server", "--clearance", "cc", "--server", "lib"]);
    let grants = dir.join("grants.json");
    with(&["agree", "--clearance", "cc", "--org", "acme", "--grants", grants.to_str().unwrap()]);
    let acl = dir.join("acl.json");
    with(&["acl", "--server", "lib", "--clearance", "cc", "--entries", acl.to_str().unwrap()]);
    with(&["enroll", "--org", "acme", "--user", "alice", "--groups", "managers", "--now", "1000"]);
    with(&["enroll", "--org", "acme", "--user", "eve", "--groups", "", "--now", "1000"]);
}

fn request(dir: &Path, user: &str, resource: &str, now: u64, extra: &[&str]) -> Output {
    let now = now.to_string();
    let mut args = vec![
        "request",
        "--user",
        user,
        "--org",
        "acme",
        "--server",
        "lib",
        "--resource",
        resource,
        "--now",
        &now,
    ];
    args.extend_from_slice(extra);
    cli(dir, &args)
}

#[test]
fn pipeline_grants_a_request_in_four_messages() {
    let d = TempDir::new().unwrap();
    deploy(d.path(), &[]);
    let t = d.path().join("t.bin");
    let o = request(d.path(), "alice", "doc", 1100, &["--transcript", t.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("outcome: granted"));
    assert!(out.contains("quarterly figures, internal"));

    let table = ok(d.path(), &["inspect", t.to_str().unwrap()]);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "{table}");
    assert!(rows[0].contains("user:alice") && rows[0].contains("server:lib"));
    assert!(rows[1].contains("ClearanceRequest"));
    assert!(rows[2].contains("clearance:cc"));
    assert!(rows[3].contains("server:lib") && rows[3].contains("user:alice"));
    // Real crypto: no sealed region is recognisable.
    assert!(!table.contains("sealed"));
}

#[test]
fn membership_decides_on_the_inherited_group() {
    let d = TempDir::new().unwrap();
    deploy(d.path(), &[]);
    // managers implies staff, which holds the reader ticket.
    assert!(request(d.path(), "alice", "hits", 1100, &[]).status.success());
    let o = request(d.path(), "eve", "hits", 1100, &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("NotAuthorized"), "{}", stderr(&o));
    // The same refusal is fine when it is what the caller expects.
    assert!(request(d.path(), "eve", "hits", 1100, &["--expect", "NotAuthorized"]).status.success());
    assert!(request(d.path(), "eve", "hits", 1100, &["--expect", "denied"]).status.success());
    let o = request(d.path(), "alice", "hits", 1100, &["--expect", "NotAuthorized"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("expected NotAuthorized, got granted"));
}

#[test]
fn expired_certificate_is_refused() {
    let d = TempDir::new().unwrap();
    deploy(d.path(), &[]);
    let o = request(d.path(), "alice", "doc", 1000 + 86_400 + 1, &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("Expired"));
}

#[test]
fn debit_balance_persists_between_invocations() {
    let d = TempDir::new().unwrap();
    deploy(d.path(), &[]);
    let o = request(d.path(), "alice", "print", 1100, &["--decline"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("ConfirmRequired"), "{}", stderr(&o));
    for now in [1101, 1102] {
        let o = request(d.path(), "alice", "print", now, &[]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).contains("messages: 7"));
    }
    let o = request(d.path(), "alice", "print", 1103, &[]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("DebitExhausted"), "{}", stderr(&o));
}

#[test]
fn enrolling_an_unknown_user_exits_2() {
    let d = TempDir::new().unwrap();
    deploy(d.path(), &[]);
    let o = cli(d.path(), &["enroll", "--org", "acme", "--user", "bob", "--groups", "staff", "--now", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("UnknownMember"));
    assert!(!d.path().join("bob@acme.cert").exists());
}

#[test]
fn malformed_grants_file_exits_2_with_the_path() {
    let d = TempDir::new().unwrap();
    deploy(d.path(), &[]);
    let bad = d.path().join("bad.json");
    fs::write(&bad, r#"{"grants": [{"group": "staff", "ticket": "reader"}, {"group": "x", "tickt": "y"}]}"#).unwrap();
    let o = cli(d.path(), &["agree", "--clearance", "cc", "--org", "acme", "--grants", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("Malformed") && e.contains("grants[1]"), "{e}");

    fs::write(&bad, r#"{"grants": [{"group": "staff", "ticket": "reader", "modifiers": [{"debit": {"remaining": "lots", "unit": "u", "confirm": false, "description": ""}}]}]}"#).unwrap();
    let o = cli(d.path(), &["agree", "--clearance", "cc", "--org", "acme", "--grants", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_files_exit_3() {
    let d = TempDir::new().unwrap();
    deploy(d.path(), &[]);
    let o = cli(d.path(), &["agree", "--clearance", "cc", "--org", "acme", "--grants", "/nonexistent/g.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("Io"));
    let o = cli(d.path(), &["inspect", "/nonexistent/t.bin"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn unknown_org_and_server_are_validation_errors() {
    let d = TempDir::new().unwrap();
    deploy(d.path(), &[]);
    let o = cli(d.path(), &["enroll", "--org", "globex", "--user", "alice", "--groups", "x", "--now", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("UnknownOrg"));
    let o = cli(d.path(), &["register-server", "--clearance", "cc", "--server", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    let o = request(d.path(), "alice", "nothing", 1100, &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn keygen_refuses_to_overwrite() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["keygen", "--role", "user", "--name", "alice"]);
    let before = fs::read(d.path().join("alice.key")).unwrap();
    let o = cli(d.path(), &["--seed", "9", "keygen", "--role", "user", "--name", "alice"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(fs::read(d.path().join("alice.key")).unwrap(), before);
}

#[test]
fn outputs_are_deterministic_under_seed() {
    let files = |d: &Path| {
        let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
            .collect();
        v.sort();
        v
    };
    let run = |seed: &str| {
        let d = TempDir::new().unwrap();
        deploy(d.path(), &["--seed", seed]);
        let t = d.path().join("t.bin");
        let o = request(d.path(), "alice", "print", 1100, &["--seed", seed, "--transcript", t.to_str().unwrap()]);
        assert!(o.status.success());
        (files(d.path()), o.stdout)
    };
    let a = run("7");
    let b = run("7");
    assert_eq!(a, b);
    let c = run("8");
    assert_ne!(a.0, c.0);
}

#[test]
fn run_of_a_fixture_exits_0() {
    let d = TempDir::new().unwrap();
    let report = d.path().join("report.json");
    let out = ok(d.path(), &["run", fixture("honest.json").to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert!(out.contains("all steps matched"));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["all_matched"], Value::Bool(true));
    assert_eq!(r["steps"].as_array().unwrap().len(), 7);
}

#[test]
fn run_is_deterministic() {
    let d = TempDir::new().unwrap();
    let f = fixture("debit.json");
    let args = ["--seed", "3", "run", f.to_str().unwrap()];
    assert_eq!(ok(d.path(), &args), ok(d.path(), &args));
}

#[test]
fn mismatched_run_exits_4_with_a_diff() {
    let d = TempDir::new().unwrap();
    let mut s: Value = serde_json::from_str(&fs::read_to_string(fixture("honest.json")).unwrap()).unwrap();
    let steps = s["steps"].as_array_mut().unwrap();
    let i = steps.iter().position(|st| st["expect"] == "NotAuthorized").unwrap();
    steps[i]["expect"] = Value::String("granted".into());
    let p = d.path().join("wrong.json");
    fs::write(&p, serde_json::to_string(&s).unwrap()).unwrap();
    let o = cli(d.path(), &["run", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    let e = stderr(&o);
    assert!(e.contains(&format!("step #{i} request: expected granted, got NotAuthorized")), "{e}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("MISMATCH"));
}

#[test]
fn malformed_scenario_exits_2_with_the_path() {
    let d = TempDir::new().unwrap();
    let p = d.path().join("s.json");
    fs::write(&p, r#"{"name": "x", "start_time": 0, "clearance_centers": [], "steps": [{"op": "advance", "secs": 1}]}"#).unwrap();
    let o = cli(d.path(), &["run", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("steps[0]"), "{}", stderr(&o));
}

#[test]
fn marker_crypto_needs_the_unsafe_flag() {
    let d = TempDir::new().unwrap();
    let o = cli(d.path(), &["--crypto", "marker", "keygen", "--role", "user", "--name", "u"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("UnsafeCrypto"));
    assert!(!d.path().join("u.key").exists());
    // multi-org asks for marker on its own.
    let o = cli(d.path(), &["run", fixture("multi-org.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    ok(d.path(), &["--unsafe-marker", "run", fixture("multi-org.json").to_str().unwrap()]);
    ok(d.path(), &["--crypto", "real", "run", fixture("multi-org.json").to_str().unwrap()]);
}

#[test]
fn marker_inspect_names_the_recipients() {
    let d = TempDir::new().unwrap();
    deploy(d.path(), &["--crypto", "marker", "--unsafe-marker"]);
    let t = d.path().join("t.bin");
    let o = request(d.path(), "alice", "doc", 1100, &["--unsafe-marker", "--transcript", t.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    // Key files still need the flag to be used.
    assert_eq!(request(d.path(), "alice", "doc", 1101, &[]).status.code(), Some(2));

    let table = ok(d.path(), &["inspect", t.to_str().unwrap()]);
    assert!(table.contains("to server:lib"), "{table}");
    assert!(table.contains("to clearance:cc"), "{table}");
    // The answer is sealed to alice's key.
    assert!(table.contains("to user:alice"), "{table}");

    let v: Value = serde_json::from_str(&ok(d.path(), &["--format", "json", "inspect", t.to_str().unwrap()])).unwrap();
    let msgs = v["messages"].as_array().unwrap();
    assert_eq!(msgs.len(), 4);
    let first = &msgs[0]["sealed"].as_array().unwrap();
    assert!(first.iter().any(|r| r["name"] == "server:lib"));
    assert!(first.iter().any(|r| r["name"] == "clearance:cc"));
    for r in first.iter() {
        assert!(r["start"].as_u64().unwrap() < r["end"].as_u64().unwrap());
    }
}

#[test]
fn empty_transcript_gives_an_empty_table() {
    let d = TempDir::new().unwrap();
    let s = d.path().join("empty.json");
    fs::write(&s, r#"{"name": "empty", "start_time": 0, "clearance_centers": [{"name": "c"}]}"#).unwrap();
    let t = d.path().join("t.bin");
    ok(d.path(), &["run", s.to_str().unwrap(), "--transcript", t.to_str().unwrap()]);
    let table = ok(d.path(), &["inspect", t.to_str().unwrap()]);
    assert_eq!(table.lines().count(), 1, "{table}");
    assert!(table.contains("seq") && table.contains("size"));
    let v: Value = serde_json::from_str(&ok(d.path(), &["--format", "json", "inspect", t.to_str().unwrap()])).unwrap();
    assert_eq!(v["messages"], Value::Array(vec![]));
}

#[test]
fn inspect_rejects_garbage() {
    let d = TempDir::new().unwrap();
    let p = d.path().join("junk");
    fs::write(&p, b"\x01\x43\xff").unwrap();
    let o = cli(d.path(), &["inspect", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Malformed"));
}

#[test]
fn json_outputs_parse() {
    let d = TempDir::new().unwrap();
    let out = ok(d.path(), &["--format", "json", "run", fixture("debit.json").to_str().unwrap()]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["all_matched"], Value::Bool(true));
    let out = ok(d.path(), &["--format", "json", "attack", fixture("honest.json").to_str().unwrap(), "--attack", "replay"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["all_denied"], Value::Bool(true));
}

#[test]
fn attack_drills_are_all_denied() {
    let d = TempDir::new().unwrap();
    for (name, attack) in [
        ("theft.json", "steal-cert"),
        ("honest.json", "steal-cert"),
        ("replay.json", "replay"),
        ("debit.json", "tamper"),
    ] {
        let out = ok(d.path(), &["attack", fixture(name).to_str().unwrap(), "--attack", attack]);
        assert!(out.trim_end().ends_with("all denied"), "{name} {attack}: {out}");
        let attempts: usize = out.lines().last().unwrap().split(' ').next().unwrap().parse().unwrap();
        assert!(attempts > 0, "{name} {attack}");
    }
}
