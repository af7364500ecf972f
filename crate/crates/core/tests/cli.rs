use std::path::Path;
use std::process::{Command, Output};

use vnode_sim::metrics::MetricsReport;
use vnode_sim::workload::analog;

const SMALL: &str = "\
total=16M threshold=1M vnode=t:4M:Trusted,u:12M:Untrusted
seed 5
profile phone Trusted ws=256 anon=0.5 hw warm=1000
profile reader Untrusted ws=16
0 SPAWN phone
0 SPAWN reader
0 LAUNCH 1
1 BACKGROUND 1
2 SEQREAD 2 16M 1
3 LAUNCH 1
";

fn vnodesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vnodesim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_compare_and_buddyinfo() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write(dir.path(), "small.scn", SMALL);
    let part = dir.path().join("part.json");
    let flat = dir.path().join("flat.json");
    let out = vnodesim(&["run", &scn, "-o", part.to_str().unwrap()]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = vnodesim(&[
        "run",
        &scn,
        "--layout",
        "total=16M threshold=1M vnode=all:16M:Trusted+Untrusted",
        "-o",
        flat.to_str().unwrap(),
        "--log",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr)
        .lines()
        .all(|l| l.starts_with("tick=")));

    let report = MetricsReport::from_json(&std::fs::read_to_string(&flat).unwrap()).unwrap();
    assert_eq!(report.nodes.len(), 1);

    let out = vnodesim(&["compare", flat.to_str().unwrap(), part.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("phone"), "{text}");
    assert!(
        text.contains("n/a"),
        "a zero baseline has no improvement: {text}"
    );

    let out = vnodesim(&[
        "compare",
        "--json",
        flat.to_str().unwrap(),
        part.to_str().unwrap(),
    ]);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(json["apps"].is_array());

    let out = vnodesim(&["buddyinfo", part.to_str().unwrap(), "--snapshot", "initial"]);
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "Node 0, Trusted: 0 0 0 0 0 0 0 0 0 0 1\nNode 1, Untrusted: 0 0 0 0 0 0 0 0 0 0 3\n"
    );
    let out = vnodesim(&["buddyinfo", part.to_str().unwrap(), "--snapshot", "missing"]);
    assert_eq!(out.status.code(), Some(2));

    let out = vnodesim(&["breakdown", flat.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("phone"));
}

#[test]
fn run_without_output_prints_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let scn = write(dir.path(), "small.scn", SMALL);
    let out = vnodesim(&["run", &scn]);
    assert_eq!(out.status.code(), Some(0));
    let report = MetricsReport::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(report.seed, 5);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.scn", SMALL);
    assert_eq!(vnodesim(&["validate", &good]).status.code(), Some(0));

    let dangling = write(
        dir.path(),
        "dangling.scn",
        &SMALL.replace("3 LAUNCH 1", "3 LAUNCH 7"),
    );
    let out = vnodesim(&["validate", &dangling]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pid 7"));
    assert_eq!(vnodesim(&["run", &dangling]).status.code(), Some(2));
    assert_eq!(
        vnodesim(&["validate", "/nonexistent/x.scn"]).status.code(),
        Some(2)
    );
    assert_eq!(
        vnodesim(&[
            "validate",
            &good,
            "--layout",
            "total=16M vnode=a:16M:Trusted"
        ])
        .status
        .code(),
        Some(2)
    );

    assert_eq!(vnodesim(&[]).status.code(), Some(1));
    assert_eq!(vnodesim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(vnodesim(&["run"]).status.code(), Some(1));
    assert_eq!(vnodesim(&["--help"]).status.code(), Some(0));

    let panicking = write(
        dir.path(),
        "panic.scn",
        "total=8M threshold=1M vnode=t:4M:Trusted,u:4M:Untrusted:threshold=2M:reserved=3M\nseed 1\n\
         profile hog Untrusted ws=8 anon=1\n0 SPAWN hog\n0 ANONFILL 1 1M 1\n",
    );
    let report = dir.path().join("panic.json");
    let out = vnodesim(&["run", &panicking, "-o", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let partial = MetricsReport::from_json(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(partial.panicked);
    assert_eq!(partial.final_snapshot().label, "final");

    let bad_report = write(dir.path(), "bad.json", "{}");
    assert_eq!(vnodesim(&["buddyinfo", &bad_report]).status.code(), Some(2));
}

#[test]
fn analog_command_matches_the_checked_in_scenario() {
    let out = vnodesim(&["analog"]);
    let on_disk = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/scenarios/phone_analog.scn"
    ))
    .unwrap();
    assert!(out.stdout == on_disk.as_bytes());
    let flat = vnodesim(&["analog", "--flat"]);
    assert!(String::from_utf8(flat.stdout)
        .unwrap()
        .starts_with(analog::FLAT_LAYOUT));
}

#[test]
fn in_process_entry_point_matches_the_binary() {
    let mut out = Vec::new();
    let mut err = Vec::new();
    assert_eq!(
        vnode_sim::cli::main_with(["vnodesim", "bogus"], &mut out, &mut err),
        1
    );
    assert!(!err.is_empty());
}
