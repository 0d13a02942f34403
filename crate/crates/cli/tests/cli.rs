//! Command-line behaviour: exit codes, output shape and idempotence.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn capmatch(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capmatch"))
        .args(args)
        .current_dir(dir)
        .env_remove("CM_ENDPOINT")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = capmatch(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synthetic(dir: &Path) {
    ok(dir, &["gen-synth", "--out", "syn", "--manifest", "m.json"]);
}

#[test]
fn help_and_version_exit_zero() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&capmatch(tmp.path(), &["--help"])), 0);
    assert_eq!(code(&capmatch(tmp.path(), &["--version"])), 0);
    assert_eq!(code(&capmatch(tmp.path(), &["evaluate", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    let out = capmatch(tmp.path(), &["ingest", "--out", "m.json"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--root"));
    assert!(stderr(&out).contains("Usage"));
    assert_eq!(code(&capmatch(tmp.path(), &[])), 1);
    assert_eq!(code(&capmatch(tmp.path(), &["frobnicate"])), 1);
    assert_eq!(
        code(&capmatch(
            tmp.path(),
            &["--provider", "magic", "ingest", "--root", "x", "--out", "y"]
        )),
        1
    );
    assert_eq!(
        code(&capmatch(tmp.path(), &["--dim", "1", "gen-synth", "--out", "s"])),
        1
    );
    assert_eq!(
        code(&capmatch(tmp.path(), &["--jobs", "0", "gen-synth", "--out", "s"])),
        1
    );
    assert_eq!(code(&capmatch(tmp.path(), &["embed", "--out", "x.cme"])), 1);
    assert_eq!(code(&capmatch(tmp.path(), &["embed", "--images", "--out", "x.cme"])), 1);
}

#[test]
fn runtime_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    fs::create_dir(tmp.path().join("empty")).unwrap();
    let out = capmatch(tmp.path(), &["ingest", "--root", "empty", "--out", "m.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("EmptyDataset"), "{}", stderr(&out));
    assert!(!tmp.path().join("m.json").exists());

    let out = capmatch(tmp.path(), &["ingest", "--root", "missing", "--out", "m.json"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("NotFound"));

    synthetic(tmp.path());
    for args in [
        &["evaluate", "--manifest", "m.json", "--pairs", "d0-d9"][..],
        &["evaluate", "--manifest", "m.json", "--metrics", "recall@5"],
        &["evaluate", "--manifest", "m.json", "--min-samples", "4"],
        &["evaluate", "--manifest", "m.json", "--oracle", "--template", "a photo"],
        &["caption", "--manifest", "m.json", "--domain", "d7", "--out", "c.jsonl"],
        &["query", "--image", "syn/d0/c0/i0.txt", "--index", "nope.cme"],
        &["--provider", "remote", "evaluate", "--manifest", "m.json"],
    ] {
        assert_eq!(code(&capmatch(tmp.path(), args)), 2, "{args:?}");
    }
    let out = capmatch(tmp.path(), &["evaluate", "--manifest", "m.json", "--min-samples", "4"]);
    assert!(stderr(&out).contains("EmptyResult"), "{}", stderr(&out));
}

#[test]
fn ingest_prints_summary() {
    let tmp = TempDir::new().unwrap();
    synthetic(tmp.path());
    let out = ok(tmp.path(), &["ingest", "--root", "syn", "--out", "m2.json"]);
    assert_eq!(out.trim(), "3 domains, 5 categories, 60 images");
    assert_eq!(
        fs::read(tmp.path().join("m.json")).unwrap(),
        fs::read(tmp.path().join("m2.json")).unwrap()
    );
}

#[test]
fn query_lists_k_results_in_score_order() {
    let tmp = TempDir::new().unwrap();
    synthetic(tmp.path());
    let dir = tmp.path();
    ok(
        dir,
        &["caption", "--manifest", "m.json", "--domain", "d1", "--out", "d1.jsonl"],
    );
    ok(dir, &["embed", "--captions", "d1.jsonl", "--out", "d1.ref.cme"]);
    let out = ok(
        dir,
        &[
            "query",
            "--image",
            "syn/d0/c3/i2.txt",
            "--index",
            "d1.ref.cme",
            "--k",
            "10",
        ],
    );
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 10);
    let scores: Vec<f64> = lines
        .iter()
        .map(|l| l.split(' ').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    assert!(
        lines[0].starts_with("1 ") && lines[0].ends_with(" d1/c3/i2.txt"),
        "{}",
        lines[0]
    );

    let out = ok(
        dir,
        &[
            "query",
            "--image",
            "syn/d0/c3/i2.txt",
            "--index",
            "d1.ref.cme",
            "--captions",
            "d1.jsonl",
            "--k",
            "2",
        ],
    );
    assert!(out.lines().next().unwrap().contains("d1/c3/i2.txt c3 mod"), "{out}");

    // a query that is itself indexed never returns itself
    ok(
        dir,
        &["caption", "--manifest", "m.json", "--domain", "d0", "--out", "d0.jsonl"],
    );
    ok(dir, &["embed", "--captions", "d0.jsonl", "--out", "d0.ref.cme"]);
    let out = ok(
        dir,
        &[
            "query",
            "--image",
            "syn/d0/c3/i2.txt",
            "--index",
            "d0.ref.cme",
            "--manifest",
            "m.json",
            "--k",
            "30",
        ],
    );
    assert_eq!(out.lines().count(), 19);
    assert!(!out.contains("d0/c3/i2.txt"));
}

#[test]
fn oracle_captions_use_the_template() {
    let tmp = TempDir::new().unwrap();
    synthetic(tmp.path());
    ok(
        tmp.path(),
        &[
            "caption",
            "--manifest",
            "m.json",
            "--domain",
            "d2",
            "--oracle",
            "--template",
            "a photo of a {class}",
            "--out",
            "o.jsonl",
        ],
    );
    let text = fs::read_to_string(tmp.path().join("o.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 20);
    assert!(text.lines().next().unwrap().contains("\"caption\":\"a photo of a c0\""));
    assert!(text.contains("\"provider_id\":\"oracle\""));
}

#[test]
fn partial_caption_failure_writes_successes_and_exits_two() {
    let tmp = TempDir::new().unwrap();
    synthetic(tmp.path());
    fs::write(
        tmp.path().join("syn/d1/c0/broken.png"),
        [0x89, b'P', b'N', b'G', 0xff, 0xfe],
    )
    .unwrap();
    ok(tmp.path(), &["ingest", "--root", "syn", "--out", "m.json"]);
    let out = capmatch(
        tmp.path(),
        &["caption", "--manifest", "m.json", "--domain", "d1", "--out", "c.jsonl"],
    );
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("d1/c0/broken.png"), "{}", stderr(&out));
    let text = fs::read_to_string(tmp.path().join("c.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 20);

    // evaluation leaves the uncaptionable image out and still succeeds
    let csv = ok(
        tmp.path(),
        &[
            "evaluate",
            "--manifest",
            "m.json",
            "--pairs",
            "d0-d1",
            "--metrics",
            "p@1",
        ],
    );
    assert_eq!(csv, "pair,P@1\nd0-d1,1.0000\nAvg,1.0000\n");
}

#[test]
fn evaluate_formats_and_filters() {
    let tmp = TempDir::new().unwrap();
    synthetic(tmp.path());
    let dir = tmp.path();
    let csv = ok(
        dir,
        &[
            "evaluate",
            "--manifest",
            "m.json",
            "--pairs",
            "d2-d0,d0-d1",
            "--metrics",
            "p@1,map",
        ],
    );
    let labels: Vec<&str> = csv.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["pair", "d2-d0", "d0-d1", "Avg"]);

    ok(
        dir,
        &[
            "evaluate",
            "--manifest",
            "m.json",
            "--metrics",
            "p@1",
            "--format",
            "json",
            "--out",
            "r.json",
        ],
    );
    let json = fs::read_to_string(dir.join("r.json")).unwrap();
    assert!(json.starts_with('{') && json.ends_with("}\n"));
    assert!(json.contains("\"mode\": \"caption\""));

    let same = ok(
        dir,
        &[
            "evaluate",
            "--manifest",
            "m.json",
            "--pairs",
            "d0-d0",
            "--allow-same-domain",
            "--metrics",
            "p@1",
        ],
    );
    assert!(same.starts_with("pair,P@1\nd0-d0,"));

    // 4 images per cell: min-samples 3 keeps everything, 4 keeps nothing
    let kept = ok(
        dir,
        &[
            "evaluate",
            "--manifest",
            "m.json",
            "--min-samples",
            "3",
            "--metrics",
            "p@1",
            "--format",
            "json",
        ],
    );
    assert!(kept.contains("\"n_queries\": 20"));
    let scoped = ok(
        dir,
        &[
            "evaluate",
            "--manifest",
            "m.json",
            "--min-samples",
            "3",
            "--filter-scope",
            "dataset",
            "--metrics",
            "p@1",
        ],
    );
    assert_eq!(scoped.lines().count(), 8);
}

#[test]
fn every_command_is_idempotent() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let steps: &[(&[&str], &str)] = &[
        (
            &[
                "gen-synth",
                "--out",
                "syn",
                "--domains",
                "2",
                "--categories",
                "3",
                "--per-cell",
                "2",
                "--manifest",
                "g.json",
            ],
            "g.json",
        ),
        (&["ingest", "--root", "syn", "--out", "m.json"], "m.json"),
        (
            &["caption", "--manifest", "m.json", "--domain", "d0", "--out", "c.jsonl"],
            "c.jsonl",
        ),
        (
            &[
                "caption",
                "--manifest",
                "m.json",
                "--domain",
                "d0",
                "--oracle",
                "--out",
                "o.jsonl",
            ],
            "o.jsonl",
        ),
        (&["embed", "--captions", "c.jsonl", "--out", "c.cme"], "c.cme"),
        (
            &[
                "embed",
                "--images",
                "--manifest",
                "m.json",
                "--domain",
                "d1",
                "--out",
                "q.cme",
            ],
            "q.cme",
        ),
        (&["evaluate", "--manifest", "m.json", "--out", "r.csv"], "r.csv"),
        (
            &[
                "evaluate",
                "--manifest",
                "m.json",
                "--format",
                "json",
                "--out",
                "r.json",
            ],
            "r.json",
        ),
        (
            &["export", "--index", "c.cme", "--manifest", "m.json", "--out", "e.csv"],
            "e.csv",
        ),
    ];
    for (args, output) in steps {
        ok(dir, args);
        let first = fs::read(dir.join(output)).unwrap();
        ok(dir, args);
        assert_eq!(fs::read(dir.join(output)).unwrap(), first, "{args:?}");
    }
    let q1 = ok(dir, &["query", "--image", "syn/d1/c1/i0.txt", "--index", "c.cme"]);
    let q2 = ok(dir, &["query", "--image", "syn/d1/c1/i0.txt", "--index", "c.cme"]);
    assert_eq!(q1, q2);
    assert_eq!(q1.lines().count(), 6);
}

#[test]
fn jobs_flag_does_not_change_results() {
    let tmp = TempDir::new().unwrap();
    synthetic(tmp.path());
    let a = ok(
        tmp.path(),
        &[
            "--jobs",
            "1",
            "evaluate",
            "--manifest",
            "m.json",
            "--metrics",
            "p@1,p@5,map",
        ],
    );
    let b = ok(
        tmp.path(),
        &[
            "--jobs",
            "3",
            "evaluate",
            "--manifest",
            "m.json",
            "--metrics",
            "p@1,p@5,map",
        ],
    );
    assert_eq!(a, b);
}

#[test]
fn remote_provider_reports_unreachable_endpoint() {
    let tmp = TempDir::new().unwrap();
    synthetic(tmp.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let out = Command::new(env!("CARGO_BIN_EXE_capmatch"))
        .args([
            "--provider",
            "remote",
            "--retries",
            "1",
            "caption",
            "--manifest",
            "m.json",
            "--domain",
            "d0",
            "--out",
            "c.jsonl",
        ])
        .env("CM_ENDPOINT", format!("http://127.0.0.1:{port}"))
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("Transport"), "{}", stderr(&out));
}
