//! End-to-end tests of the `mdsrob` binary: exit codes, stdin/stdout
//! behavior, and the simulate/report file outputs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Instant;

const B_GOLDEN: &str = "QlpoOTFBWSZTWQVCdGkAAAAJgCAAAkSABCAAIhhoMAsKcYXckU4UJAFQnRpA";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mdsrob"))
}

fn run_with_stdin(args: &[&str], stdin: &[u8]) -> Output {
    let mut child = bin()
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary spawns");
    child.stdin.take().unwrap().write_all(stdin).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

#[test]
fn encode_produces_the_golden_frame() {
    let out = run_with_stdin(&["encode", "--id", "1", "--type", "0"], b"hello\n");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(stdout_str(&out), format!("MDSR0{B_GOLDEN}\n"));
}

#[test]
fn encode_decode_shell_pipeline_is_identity() {
    let body = "pipes | and \\ backslashes survive";
    let encoded = run_with_stdin(&["encode", "--id", "msg-9", "--type", "0"], body.as_bytes());
    assert!(encoded.status.success());
    let decoded = run_with_stdin(&["decode"], &encoded.stdout);
    assert!(decoded.status.success());
    assert_eq!(stdout_str(&decoded), format!("msg-9\n{body}\n"));
}

#[test]
fn trailing_newline_handling_is_opt_in() {
    let stripped = run_with_stdin(&["encode", "--id", "1", "--type", "0"], b"x\n");
    let kept = run_with_stdin(
        &[
            "encode",
            "--id",
            "1",
            "--type",
            "0",
            "--keep-trailing-newline",
        ],
        b"x\n",
    );
    assert!(stripped.status.success() && kept.status.success());
    assert_ne!(stripped.stdout, kept.stdout);
    let decoded = run_with_stdin(&["decode"], &kept.stdout);
    assert_eq!(stdout_str(&decoded), "1\nx\n\n");
}

#[test]
fn oversized_body_exits_3_with_size_on_stderr() {
    let body: String = (0..4000u32)
        .map(|i| char::from_u32(0x4E00 + (i % 2000)).unwrap())
        .collect();
    let out = run_with_stdin(&["encode", "--id", "1", "--type", "0"], body.as_bytes());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("characters"), "stderr: {err}");
}

#[test]
fn decode_distinguishes_non_frames_from_malformed() {
    let out = run_with_stdin(&["decode"], b"Nexus 7\n");
    assert_eq!(out.status.code(), Some(6));
    let out = run_with_stdin(&["decode"], b"MDSR0!!!\n");
    assert_eq!(out.status.code(), Some(7));
    let out = run_with_stdin(&["decode"], b"MDSR2abcd\n");
    assert_eq!(out.status.code(), Some(7));
}

#[test]
fn usage_errors_exit_2() {
    let out = run_with_stdin(&["encode", "--id", "1", "--no-such-flag"], b"");
    assert_eq!(out.status.code(), Some(2));
    let out = run_with_stdin(&["encode", "--id", "1", "--type", "9"], b"x");
    assert_eq!(out.status.code(), Some(2));
    let out = run_with_stdin(&["encode", "--id", "1", "--type", "1"], b"x");
    assert_eq!(out.status.code(), Some(2), "type 1 without key is usage");
}

#[test]
fn codebook_flag_selects_the_substitution_table() {
    let dir = tempfile::tempdir().unwrap();
    let cb_path = dir.path().join("cb.tsv");
    std::fs::write(&cb_path, "subway\tsw\n").unwrap();
    let cb = cb_path.to_str().unwrap();

    let with_cb = run_with_stdin(
        &["encode", "--id", "1", "--type", "0", "--codebook", cb],
        b"subway",
    );
    let without = run_with_stdin(&["encode", "--id", "1", "--type", "0"], b"subway");
    assert!(with_cb.status.success() && without.status.success());
    assert_ne!(with_cb.stdout, without.stdout);

    // Decoding needs the same table back.
    let decoded = run_with_stdin(&["decode", "--codebook", cb], &with_cb.stdout);
    assert_eq!(stdout_str(&decoded), "1\nsubway\n");
    let mismatched = run_with_stdin(&["decode"], &with_cb.stdout);
    assert_eq!(mismatched.status.code(), Some(7));

    // The built-in table is addressable by name.
    let builtin = run_with_stdin(
        &[
            "encode",
            "--id",
            "1",
            "--type",
            "0",
            "--codebook",
            "default",
        ],
        b"subway",
    );
    let round = run_with_stdin(&["decode", "--codebook", "default"], &builtin.stdout);
    assert_eq!(stdout_str(&round), "1\nsubway\n");
}

#[test]
fn codebook_check_reports_conflicts_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.tsv");
    std::fs::write(&good, "# table\nsubway\tsw\nstation\tst\n").unwrap();
    let out = bin().args(["codebook-check"]).arg(&good).output().unwrap();
    assert!(out.status.success());
    assert_eq!(stdout_str(&out), "ok: 2 entries\n");

    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "subway\tsw\nswan\tswa\n").unwrap();
    let out = bin().args(["codebook-check"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn keyring_round_trip_and_key_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ring = dir.path().join("keys.tsv");
    std::fs::write(&ring, "K\thunter2\nL\tother\n").unwrap();
    let ring = ring.to_str().unwrap();

    let out = run_with_stdin(
        &[
            "encode",
            "--id",
            "5",
            "--type",
            "1",
            "--keyring",
            ring,
            "--key",
            "K",
        ],
        b"classified",
    );
    assert!(out.status.success());
    let frame = stdout_str(&out);
    assert!(frame.starts_with("MDSR1"));

    let decoded = run_with_stdin(&["decode", "--keyring", ring], frame.as_bytes());
    assert_eq!(stdout_str(&decoded), "5\nclassified\n");

    // No keyring, or a keyring without the right key: key error.
    let out = run_with_stdin(&["decode"], frame.as_bytes());
    assert_eq!(out.status.code(), Some(5));
    let wrong = dir.path().join("wrong.tsv");
    std::fs::write(&wrong, "K\tnot-the-secret\n").unwrap();
    let out = run_with_stdin(
        &["decode", "--keyring", wrong.to_str().unwrap()],
        frame.as_bytes(),
    );
    assert_eq!(out.status.code(), Some(5));

    // Unknown key id at encode time.
    let out = run_with_stdin(
        &[
            "encode",
            "--id",
            "5",
            "--type",
            "1",
            "--keyring",
            ring,
            "--key",
            "Z",
        ],
        b"x",
    );
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn simulate_writes_run_files_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let scenario = scenario_path("line_relay_cut.json");

    let started = Instant::now();
    let first = bin()
        .args(["simulate", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out_a)
        .output()
        .unwrap();
    let elapsed = started.elapsed();
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    assert!(
        elapsed.as_secs_f64() < 1.0,
        "bundled scenario took {elapsed:?}"
    );
    let summary = stdout_str(&first);
    assert!(
        summary.starts_with("messages=2 nodes=3 coverage="),
        "{summary}"
    );

    for file in ["report.json", "delivery.csv", "events.log"] {
        assert!(out_a.join(file).is_file(), "{file} missing");
    }
    for node in ["A", "B", "C"] {
        assert!(out_a.join("stores").join(format!("{node}.log")).is_file());
    }

    let second = bin()
        .args(["simulate", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out_b)
        .output()
        .unwrap();
    assert!(second.status.success());
    assert_eq!(
        std::fs::read(out_a.join("events.log")).unwrap(),
        std::fs::read(out_b.join("events.log")).unwrap(),
        "event logs must be byte-identical across reruns"
    );

    // The delivery matrix records the relay cut.
    let csv = std::fs::read_to_string(out_a.join("delivery.csv")).unwrap();
    let a_row = csv.lines().find(|l| l.starts_with("A-1,")).unwrap();
    assert!(
        a_row.ends_with(",never"),
        "C never gets A's message: {a_row}"
    );
}

#[test]
fn simulate_rejects_bad_scenarios_with_exit_8() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["simulate", "--scenario", "/does/not/exist.json", "--out"])
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(8));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema":1,"horizon":10,"nodes":[]}"#).unwrap();
    let out = bin()
        .args(["simulate", "--scenario"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("y"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(8));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least one node"));
}

#[test]
fn report_summarizes_and_exports_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let sim_out = bin()
        .args(["simulate", "--scenario"])
        .arg(scenario_path("two_node_basic.json"))
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(sim_out.status.success());

    let out = bin()
        .args(["report", "--run"])
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.contains("coverage=100.0%"), "{text}");
    assert!(text.contains("message A-1"), "{text}");

    let out = bin()
        .args(["report", "--run"])
        .arg(&run_dir)
        .arg("--csv")
        .output()
        .unwrap();
    assert!(stdout_str(&out).starts_with("message,origin,originated_at,A,B"));

    let out = bin()
        .args(["report", "--run"])
        .arg(dir.path().join("nope"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(8));
}
