use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use ecolink_core::fixtures::{generate_demo_corpus, DEMO_SEED};
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ecolink"))
}

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn checked_in_demo_matches_generator() {
    let dir = tempfile::tempdir().unwrap();
    generate_demo_corpus(DEMO_SEED)
        .write_to(dir.path())
        .unwrap();
    let demo = demo_dir();
    for name in ["bom.csv", "lca.jsonl", "gold.jsonl", "llm_fixtures.jsonl"] {
        assert_eq!(
            std::fs::read(dir.path().join(name)).unwrap(),
            std::fs::read(demo.join(name)).unwrap(),
            "{name}"
        );
    }
    for sheet in generate_demo_corpus(DEMO_SEED).datasheets {
        let on_disk =
            std::fs::read_to_string(demo.join("datasheets").join(&sheet.filename)).unwrap();
        assert_eq!(on_disk, sheet.body);
    }
}

#[test]
fn index_reports_count_and_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let db = demo_dir().join("lca.jsonl");
    let (a, b) = (dir.path().join("a.idx"), dir.path().join("b.idx"));
    let out = run(&["index", "--db", p(&db), "--out", p(&a)]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("indexed 25 activities"));
    assert!(stdout.contains("local-hash-256"));
    assert_eq!(code(&run(&["index", "--db", p(&db), "--out", p(&b)])), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = run(&[
        "index",
        "--db",
        p(&missing),
        "--out",
        p(&dir.path().join("x")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));

    let out = run(&[
        "match", "--bom", "b", "--index", "i", "--mode", "fuzzy", "--report", "r",
    ]);
    assert_eq!(code(&out), 64);
    assert_eq!(code(&run(&["frobnicate"])), 64);
    assert_eq!(code(&run(&["--help"])), 0);

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let report = demo_dir().join("golden/report-llm-datasheet.jsonl");
    assert_eq!(
        code(&run(&["eval", "--report", p(&report), "--gold", p(&empty)])),
        1
    );

    let corrupt = dir.path().join("corrupt.jsonl");
    std::fs::write(
        &corrupt,
        "{\"component_id\":\"c1\",\"activity_id\":\"a05\"}\nnot json\n",
    )
    .unwrap();
    let out = run(&["eval", "--report", p(&report), "--gold", p(&corrupt)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn remote_backend_failure_is_exit_two() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/embeddings", listener.local_addr().unwrap());
    drop(listener);
    let dir = tempfile::tempdir().unwrap();
    let db = demo_dir().join("lca.jsonl");
    let out = bin()
        .args([
            "index",
            "--db",
            p(&db),
            "--out",
            p(&dir.path().join("x")),
            "--backend",
            "remote",
            "--endpoint",
            &url,
        ])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

fn build_index(dir: &Path) -> PathBuf {
    let idx = dir.join("demo.idx");
    let db = demo_dir().join("lca.jsonl");
    assert_eq!(code(&run(&["index", "--db", p(&db), "--out", p(&idx)])), 0);
    idx
}

#[test]
fn semantic_mode_needs_no_llm_flags() {
    let dir = tempfile::tempdir().unwrap();
    let idx = build_index(dir.path());
    let report = dir.path().join("r.jsonl");
    let bom = demo_dir().join("bom.csv");
    let out = run(&[
        "match",
        "--bom",
        p(&bom),
        "--index",
        p(&idx),
        "--mode",
        "semantic",
        "--report",
        p(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&report).unwrap().lines().count(), 8);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 8);
}

#[test]
fn canned_mode_without_fixtures_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let idx = build_index(dir.path());
    let bom = demo_dir().join("bom.csv");
    let out = run(&[
        "match",
        "--bom",
        p(&bom),
        "--index",
        p(&idx),
        "--mode",
        "llm",
        "--llm",
        "canned",
        "--report",
        p(&dir.path().join("r")),
    ]);
    assert_eq!(code(&out), 64);
}

#[test]
fn unreachable_llm_is_recorded_not_fatal() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    drop(listener);
    let dir = tempfile::tempdir().unwrap();
    let idx = build_index(dir.path());
    let report = dir.path().join("r.jsonl");
    let bom = demo_dir().join("bom.csv");
    let out = run(&[
        "match",
        "--bom",
        p(&bom),
        "--index",
        p(&idx),
        "--mode",
        "llm",
        "--llm-endpoint",
        &url,
        "--report",
        p(&report),
    ]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&report).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert!(text
        .lines()
        .all(|l| serde_json::from_str::<Value>(l).unwrap()["error"].is_string()));
}

#[test]
fn eval_single_cutoff_has_one_column_and_writes_records() {
    let dir = tempfile::tempdir().unwrap();
    let report = demo_dir().join("golden/report-llm-datasheet.jsonl");
    let gold = demo_dir().join("gold.jsonl");
    let out_path = dir.path().join("eval.jsonl");
    let out = run(&[
        "eval",
        "--report",
        p(&report),
        "--gold",
        p(&gold),
        "--n",
        "1",
        "--out",
        p(&out_path),
    ]);
    assert_eq!(code(&out), 0);
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(
        table
            .lines()
            .next()
            .unwrap()
            .split_whitespace()
            .collect::<Vec<_>>(),
        vec!["mode", "Hits@1"]
    );
    let rec: Value = serde_json::from_str(
        std::fs::read_to_string(&out_path)
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    assert_eq!(rec["n"], 1);
    assert_eq!(rec["mode"], "llm-datasheet");
}

struct Server {
    child: Child,
    base: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn start_server(data: &Path, with_run: bool) -> Server {
    let demo = demo_dir();
    let mut cmd = bin();
    cmd.args(["serve", "--listen", "127.0.0.1:0", "--data", p(data)]);
    if with_run {
        cmd.args([
            "--report",
            p(&demo.join("golden/report-llm-datasheet.jsonl")),
            "--bom",
            p(&demo.join("bom.csv")),
            "--db",
            p(&demo.join("lca.jsonl")),
        ]);
    }
    let mut child = cmd
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .expect("listening line")
        .to_owned();
    Server { child, base }
}

fn get(server: &Server, path: &str) -> (u16, Value) {
    let resp = reqwest::blocking::get(format!("{}{path}", server.base)).unwrap();
    (resp.status().as_u16(), resp.json().unwrap())
}

#[test]
fn serve_health_components_and_restart() {
    let data = tempfile::tempdir().unwrap();
    {
        let server = start_server(data.path(), true);
        let (status, body) = get(&server, "/health");
        assert_eq!((status, body["status"].as_str()), (200, Some("ok")));
        let (_, list) = get(&server, "/components");
        assert_eq!(list["components"].as_array().unwrap().len(), 8);
        let resp = reqwest::blocking::Client::new()
            .post(format!("{}/components/c2/decision", server.base))
            .json(&json!({"activity_id": "a02", "source": "accepted_rank_1"}))
            .send()
            .unwrap();
        assert_eq!(resp.status().as_u16(), 200);
    }
    let server = start_server(data.path(), true);
    let (_, list) = get(&server, "/components");
    assert_eq!(list["components"][1]["status"], "decided");
    assert_eq!(list["components"][0]["status"], "pending");
}

#[test]
fn serve_without_run_answers_conflict() {
    let data = tempfile::tempdir().unwrap();
    let server = start_server(data.path(), false);
    assert_eq!(get(&server, "/health").0, 200);
    assert_eq!(get(&server, "/components").0, 409);
}

#[test]
fn serve_bind_failure_is_exit_one() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let data = tempfile::tempdir().unwrap();
    let out = run(&["serve", "--listen", &addr, "--data", p(data.path())]);
    assert_eq!(code(&out), 1);
}
