use std::borrow::BorrowMut;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value as Json;
use taskcheck::dsl::{parse_constraint, DataUnitTest};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn taskcheck(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_taskcheck"));
    c.args(args);
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("TASKCHECK_")) {
        c.env_remove(k);
    }
    c
}

fn run(mut c: impl BorrowMut<Command>) -> Output {
    c.borrow_mut().output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn error_json(o: &Output) -> Json {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .unwrap_or_else(|| panic!("no error json in {text}"));
    serde_json::from_str(line).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn save_test(dir: &Path, constraints: &[&str]) -> PathBuf {
    let mut t = DataUnitTest::new("batch_processing-test", "batch_processing");
    for (i, c) in constraints.iter().enumerate() {
        t.push(parse_constraint(c).unwrap().with_id(format!("c{}", i + 1)))
            .unwrap();
    }
    t.save(dir).unwrap()
}

#[test]
fn validate_exit_codes_follow_the_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let sample = fixtures().join("booking/sample.csv");
    let cases = [
        (vec!["isComplete(\"email\").where(status == \"COMPLETED\")"], 0),
        (vec!["hasSize(> 100.0)"], 1),
        (vec!["isComplete(\"phone\")"], 2),
        (vec!["isComplete(\"phone\")", "hasSize(> 100.0)"], 1),
    ];
    for (i, (constraints, want)) in cases.into_iter().enumerate() {
        let dir = tmp.path().join(format!("t{i}"));
        let test = save_test(&dir, &constraints);
        let o = run(taskcheck(&[
            "validate",
            "--test",
            p(&test),
            "--batch",
            p(&sample),
            "--out",
            p(&out),
        ]));
        assert_eq!(
            code(&o),
            want,
            "{constraints:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let report: Json = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(report["batch_id"], "sample");
        assert!(out.join("reports/batch_processing__sample.json").is_file());
    }
}

#[test]
fn inject_is_reproducible_and_seed_overridable() {
    let tmp = tempfile::tempdir().unwrap();
    let sample = fixtures().join("booking/sample.csv");
    let config = fixtures().join("booking/errors/e_null_email.json");
    let read = |out: &Path| fs::read(out.join("batches/e_null_email.csv")).unwrap();
    let mut outs = Vec::new();
    for (name, seed) in [("a", None), ("b", None), ("c", Some("99"))] {
        let out = tmp.path().join(name);
        let mut c = taskcheck(&[
            "inject",
            "--sample",
            p(&sample),
            "--error-config",
            p(&config),
            "--out",
            p(&out),
        ]);
        if let Some(s) = seed {
            c.args(["--seed", s]);
        }
        let o = run(&mut c);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("batches/e_null_email.meta.json").is_file());
        outs.push(read(&out));
    }
    assert_eq!(outs[0], outs[1]);
    assert_ne!(outs[0], outs[2]);
    assert_ne!(outs[0], fs::read(&sample).unwrap());
}

#[test]
fn configuration_errors_exit_64() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = fixtures().join("bench.json");
    let transcripts = fixtures().join("transcripts");

    let both = run(taskcheck(&[
        "bench",
        "--manifest",
        p(&manifest),
        "--mock",
        "--transcripts",
        p(&transcripts),
        "--base-url",
        "http://127.0.0.1:9",
    ]));
    assert_eq!(code(&both), 64);
    assert_eq!(error_json(&both)["error"]["kind"], "config");

    let toml = tmp.path().join("both.toml");
    fs::write(&toml, "mock = true\nbase_url = \"http://127.0.0.1:9\"\n").unwrap();
    let o = run(taskcheck(&["bench", "--manifest", p(&manifest), "--config", p(&toml)]));
    assert_eq!(code(&o), 64);

    let o = run(taskcheck(&["bench", "--manifest", p(&manifest)])
        .env("TASKCHECK_MOCK", "1")
        .env("TASKCHECK_BASE_URL", "http://x"));
    assert_eq!(code(&o), 64);

    let o = run(taskcheck(&[
        "bench",
        "--manifest",
        p(&manifest),
        "--out",
        p(tmp.path()),
    ]));
    assert_eq!(code(&o), 64, "no backend configured");

    let o = run(taskcheck(&[
        "bench",
        "--manifest",
        p(&manifest),
        "--mock",
        "--transcripts",
        p(&transcripts),
        "--scenario",
        "someday",
    ]));
    assert_eq!(code(&o), 64);

    let o = run(taskcheck(&["inject", "--sample"]));
    assert_eq!(code(&o), 64);
    assert_eq!(error_json(&o)["error"]["exit_code"], 64);

    let o =
        run(taskcheck(&["profile", p(&fixtures().join("booking/sample.csv"))]).env("TASKCHECK_PARALLELISM", "lots"));
    assert_eq!(code(&o), 64);
}

#[test]
fn runtime_errors_exit_70() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(taskcheck(&[
        "profile",
        p(&tmp.path().join("missing.csv")),
        "--out",
        p(tmp.path()),
    ]));
    assert_eq!(code(&o), 70);
    assert_eq!(error_json(&o)["error"]["kind"], "io");

    let bad = tmp.path().join("ragged.csv");
    fs::write(&bad, "a,b\n1,2\n3\n").unwrap();
    let o = run(taskcheck(&["profile", p(&bad), "--out", p(tmp.path())]));
    assert_eq!(code(&o), 70, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn help_documents_every_command() {
    let o = run(taskcheck(&["--help"]));
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in [
        "profile", "generate", "validate", "inject", "label", "optimize", "bench",
    ] {
        assert!(text.contains(cmd), "{cmd}");
        assert_eq!(code(&run(taskcheck(&[cmd, "--help"]))), 0, "{cmd}");
    }
}

#[test]
fn profile_generate_label_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let root = fixtures();
    let sample = root.join("booking/sample.csv");
    let script = root.join("booking/tasks/batch_processing.py");

    let o = run(taskcheck(&[
        "profile",
        p(&sample),
        "--name",
        "booking",
        "--out",
        p(out),
    ]));
    assert_eq!(code(&o), 0);
    let profile: Json = serde_json::from_str(&fs::read_to_string(out.join("profiles/booking.json")).unwrap()).unwrap();
    assert_eq!(profile["row_count"], 20);

    let o = run(taskcheck(&[
        "generate",
        "--task",
        p(&script),
        "--sample",
        p(&sample),
        "--mock",
        "--transcripts",
        p(&root.join("transcripts")),
        "--out",
        p(out),
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let printed: Json = serde_json::from_slice(&o.stdout).unwrap();
    let rendered: Vec<&str> = printed["constraints"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect();
    assert!(
        rendered.contains(&"isComplete(\"email\").where(status == \"COMPLETED\")"),
        "{rendered:?}"
    );
    assert!(out.join("graphs/batch_processing.json").is_file());

    let test = out.join("tests/batch_processing.json");
    let ger = root.join("booking/batches/b_ger.csv");
    let o = run(taskcheck(&[
        "validate",
        "--test",
        p(&test),
        "--batch",
        p(&ger),
        "--out",
        p(out),
    ]));
    assert_eq!(code(&o), 0);

    let o = run(taskcheck(&[
        "label",
        "--task",
        p(&script),
        "--batch",
        p(&ger),
        "--batch",
        p(&sample),
        "--out",
        p(out),
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let labels: Json = serde_json::from_str(&fs::read_to_string(out.join("labels.json")).unwrap()).unwrap();
    let values: Vec<&str> = labels
        .as_array()
        .unwrap()
        .iter()
        .map(|l| l["value"].as_str().unwrap())
        .collect();
    assert_eq!(values, ["safe", "safe"]);
}

#[test]
fn config_file_env_and_flags_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let root = fixtures();
    let sample = root.join("booking/sample.csv");
    let toml = tmp.path().join("run.toml");
    fs::write(
        &toml,
        format!(
            "out = {:?}\nhistogram_threshold = 2\n",
            p(&tmp.path().join("from_file"))
        ),
    )
    .unwrap();

    let o = run(taskcheck(&["profile", p(&sample), "--config", p(&toml)]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let written = tmp.path().join("from_file/profiles/sample.json");
    let profile: Json = serde_json::from_str(&fs::read_to_string(&written).unwrap()).unwrap();
    assert_eq!(profile["histogram_threshold"], 2);

    let env_out = tmp.path().join("from_env");
    let o = run(taskcheck(&["profile", p(&sample), "--config", p(&toml)]).env("TASKCHECK_OUT", p(&env_out)));
    assert_eq!(code(&o), 0);
    assert!(env_out.join("profiles/sample.json").is_file());

    let flag_out = tmp.path().join("from_flag");
    let o = run(taskcheck(&[
        "profile",
        p(&sample),
        "--config",
        p(&toml),
        "--out",
        p(&flag_out),
        "--histogram-threshold",
        "9",
    ])
    .env("TASKCHECK_OUT", p(&env_out)));
    assert_eq!(code(&o), 0);
    let profile: Json =
        serde_json::from_str(&fs::read_to_string(flag_out.join("profiles/sample.json")).unwrap()).unwrap();
    assert_eq!(profile["histogram_threshold"], 9);
}

#[test]
fn optimize_writes_prompts_and_log() {
    let tmp = tempfile::tempdir().unwrap();
    let root = fixtures();
    let o = run(taskcheck(&[
        "optimize",
        "--manifest",
        p(&root.join("bench.json")),
        "--mock",
        "--transcripts",
        p(&root.join("transcripts")),
        "--out",
        p(tmp.path()),
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Json = serde_json::from_str(&fs::read_to_string(tmp.path().join("optimize.json")).unwrap()).unwrap();
    let best = summary["best"].as_str().unwrap();
    assert!(tmp.path().join("prompts").join(format!("{best}.json")).is_file());
    assert!(summary["charged"].as_u64().unwrap() <= summary["sifta"]["b_eval"].as_u64().unwrap());
    let log = fs::read_to_string(tmp.path().join("sifta_log.jsonl")).unwrap();
    for line in log.lines() {
        let r: Json = serde_json::from_str(line).unwrap();
        assert!(r["round"].as_u64().unwrap() >= 1);
    }
}

#[test]
fn bench_outputs_stay_under_out() {
    let tmp = tempfile::tempdir().unwrap();
    let root = fixtures();
    let before = fs::read(root.join("bench.json")).unwrap();
    let o = run(taskcheck(&[
        "bench",
        "--manifest",
        p(&root.join("bench.json")),
        "--mock",
        "--transcripts",
        p(&root.join("transcripts")),
        "--out",
        p(tmp.path()),
        "--scenario",
        "new_tasks",
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "metrics.json",
        "decisions.csv",
        "decisions_task_agnostic.csv",
        "labels.json",
    ] {
        assert!(tmp.path().join(f).is_file(), "{f}");
    }
    let metrics: Json = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(metrics["scenario"], "new_tasks");
    assert_eq!(fs::read(root.join("bench.json")).unwrap(), before);
}

#[test]
fn mock_bench_runs_without_network() {
    let bin = env!("CARGO_BIN_EXE_taskcheck");
    let isolated = ["-n", "-rn"].into_iter().find(|flag| {
        Command::new("unshare")
            .args([flag, bin, "--version"])
            .output()
            .is_ok_and(|o| o.status.success())
    });
    let Some(flag) = isolated else {
        eprintln!("skipped: cannot create a network namespace here");
        return;
    };
    let tmp = tempfile::tempdir().unwrap();
    let root = fixtures();
    let o = run(Command::new("unshare").args([flag, bin]).args([
        "bench",
        "--manifest",
        p(&root.join("bench.json")),
        "--mock",
        "--transcripts",
        p(&root.join("transcripts")),
        "--out",
        p(tmp.path()),
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read(tmp.path().join("metrics.json")).unwrap(),
        fs::read(root.join("golden/metrics.json")).unwrap()
    );
}
