use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lightfdg::cli::{RunManifest, MANIFEST_FILE};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lightfdg"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn lightfdg")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_SHUFFLE: &str = r#"{ "kind": "shuffle", "shuffle": { "k": 4, "ef_fraction": 0.25 } }"#;

#[test]
fn provision_writes_lightpath_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("lp.json");
    let scenario = scenarios().join("provision-uniform.json");
    let o = run(&[
        "provision",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["mf_lightpaths"], 56);
    assert_eq!(doc["ef_lightpaths"], 56);
    assert_eq!(doc["lightpaths"].as_array().unwrap().len(), 112);
    assert!(out.with_extension("summary.txt").exists());
}

#[test]
fn too_few_wavelengths_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(
        tmp.path(),
        "s.json",
        r#"{ "wavelengths": 3, "kind": "shuffle" }"#,
    );
    let out = tmp.path().join("lp.json");
    let o = run(&[
        "provision",
        "--scenario",
        &s,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains('4'), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn malformed_scenario_exits_one_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(
        tmp.path(),
        "s.json",
        "{\n  \"flows\": 10,\n  \"kind\": \"shuffle\",,\n}\n",
    );
    let o = run(&[
        "provision",
        "--scenario",
        &s,
        "--out",
        tmp.path().join("x.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let s = write(tmp.path(), "u.json", r#"{ "flowz": 10 }"#);
    let o = run(&[
        "provision",
        "--scenario",
        &s,
        "--out",
        tmp.path().join("x.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("flowz"), "{}", stderr(&o));

    let o = run(&[
        "provision",
        "--scenario",
        "/nonexistent/s.json",
        "--out",
        "x.json",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

fn simulate(scenario: &str, out: &Path) -> Output {
    run(&[
        "simulate",
        "--scenario",
        scenario,
        "--policy",
        "fg-fso",
        "--policy",
        "lightfdg",
        "--seed",
        "1",
        "--seed",
        "2",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn simulate_writes_verified_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(tmp.path(), "s.json", SMALL_SHUFFLE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let o = simulate(&s, dir);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let ma = RunManifest::load(&a).unwrap();
    assert_eq!(ma.files.len(), 7);
    assert!(ma.files.iter().any(|f| f.path == "summary.csv"));
    assert!(ma
        .files
        .iter()
        .any(|f| f.path == "flows-lightfdg-seed3.csv"));
    ma.verify(&a).unwrap();
    let mb = RunManifest::load(&b).unwrap();
    let digests = |m: &RunManifest| {
        m.files
            .iter()
            .map(|f| (f.path.clone(), f.sha256.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(digests(&ma), digests(&mb));

    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    // header + 2 policies x 3 seeds x 2 classes
    assert_eq!(summary.lines().count(), 13);
    assert!(a.join(MANIFEST_FILE).exists());
}

#[test]
fn bad_policy_lists_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(
        tmp.path(),
        "s.json",
        r#"{ "kind": "shuffle", "shuffle": { "k": 2 }, "policies": [] }"#,
    );
    let out = tmp.path().join("o");
    let o = run(&["simulate", "--scenario", &s, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = run(&[
        "simulate",
        "--scenario",
        &s,
        "--policy",
        "ospf",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("ecmp-fso") && e.contains("lightfdg"), "{e}");
}

#[test]
fn help_exits_zero() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&[]).status.code(), Some(1));
}

const HEADER: &str = "ts_ns,src,sport,dst,dport,flags,seq,ack,len\n";

#[test]
fn empty_trace_gives_header_only_output() {
    let tmp = tempfile::tempdir().unwrap();
    let t = write(tmp.path(), "t.csv", HEADER);
    let out = tmp.path().join("o");
    let o = run(&[
        "detect-replay",
        "--trace",
        &t,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let det = fs::read_to_string(out.join("detection.csv")).unwrap();
    assert_eq!(det.lines().count(), 1);
    RunManifest::load(&out).unwrap().verify(&out).unwrap();
}

#[test]
fn bad_trace_row_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{HEADER}1,10.0.0.1,1000,10.0.1.1,5001,SYN,0,0,0\n2,10.0.0.1,1000,10.0.1.1,5001,BOGUS,0,0,0\n");
    let t = write(tmp.path(), "t.csv", &text);
    let o = run(&[
        "detect-replay",
        "--trace",
        &t,
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));

    let t = write(tmp.path(), "h.csv", "time,src\n");
    let o = run(&[
        "detect-replay",
        "--trace",
        &t,
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn generated_trace_replays_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let s = write(
        tmp.path(),
        "s.json",
        r#"{ "kind": "mix", "flows": 1000, "elephant_size": 4000000, "seed": 5 }"#,
    );
    let trace = tmp.path().join("t.csv");
    let o = run(&[
        "gen-trace",
        "--scenario",
        &s,
        "--out",
        trace.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    for mode in ["in-network", "centralized"] {
        let out = tmp.path().join(mode);
        let o = run(&[
            "detect-replay",
            "--trace",
            trace.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--mode",
            mode,
            "--ack-sample-rate",
            "1",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("TN 0, FP 0"), "{mode}: {stdout}");
        let det = fs::read_to_string(out.join("detection.csv")).unwrap();
        assert_eq!(det.lines().count(), 1001);
    }

    let out = tmp.path().join("sampling");
    let o = run(&[
        "detect-replay",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--detector",
        "sampling",
        "--sample-rate",
        "1000",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let acc: f64 = stdout.rsplit("accuracy ").next().unwrap().trim().parse().unwrap();
    assert!(acc < 1.0, "{stdout}");
}
