use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hopqa(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hopqa"))
        .args(args)
        .current_dir(dir)
        .env_remove("HOPQA_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "\
# tiny synthetic run
dataset = hotpotqa
train_path = data.json
d = 6
word_dim = 8
char_dim = 4
char_filters = 6
char_kernel = 3
epochs = 2
patience = 5
batch_size = 4
lr = 0.001
ema_decay = none
";

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = hopqa(
        &["synth", "-n", "8", "--seed", "3", "--out", "data.json"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

#[test]
fn synth_output_reloads_cleanly() {
    let dir = setup();
    let (examples, stats) = hopqa::data::load_hotpotqa(&dir.path().join("data.json")).unwrap();
    assert_eq!(examples.len(), 8);
    assert_eq!(stats.warning_count(), 0);
}

#[test]
fn synth_zero_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = hopqa(&["synth", "-n", "0", "--out", "x.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("x.json").exists());
}

#[test]
fn unknown_flag_and_subcommand_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = hopqa(&["train", "--frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(hopqa(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn config_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "d = 4\n# fine\nwidth = 9\n").unwrap();
    let o = hopqa(&["train", "-c", "bad.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("bad.cfg") && err.contains("line 3") && err.contains("width"),
        "{err}"
    );

    let o = hopqa(&["train", "--set", "dropout=lots"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_file_exit_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = hopqa(&["train", "-c", "nowhere.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.cfg"));

    let o = hopqa(&["train", "--set", "train_path=absent.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.json"), "{}", stderr(&o));
}

#[test]
fn gradcheck_default_passes_and_guard_rejects_big_dims() {
    let dir = tempfile::tempdir().unwrap();
    let o = hopqa(&["gradcheck"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(
        out.contains("joint_loss") && out.contains("gru_forward") && out.contains("PASS"),
        "{out}"
    );

    let o = hopqa(
        &["gradcheck", "--context", "200", "--question", "30"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("too large"));
}

#[test]
fn pipeline_end_to_end() {
    let dir = setup();
    let p = dir.path();
    let o = hopqa(&["train", "-c", "tiny.cfg", "--out", "run"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(
        out.starts_with("# effective config\n# dataset = hotpotqa\n"),
        "{out}"
    );
    assert!(out.contains("epoch=1 train_loss="));
    for f in ["model.json", "model.bin", "train.log", "config.txt"] {
        assert!(p.join("run").join(f).exists(), "{f}");
    }

    let o = hopqa(
        &[
            "eval",
            "-c",
            "tiny.cfg",
            "--checkpoint",
            "run/model",
            "--limit",
            "5",
        ],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(
        lines[0],
        "Answer EM | Answer F1 | Sup Fact EM | Sup Fact F1 | Joint EM | Joint F1"
    );
    let values: Vec<f64> = lines[1].split(" | ").map(|v| v.parse().unwrap()).collect();
    assert_eq!(values.len(), 6);
    assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));

    let o = hopqa(
        &[
            "predict",
            "-c",
            "tiny.cfg",
            "--checkpoint",
            "run/model",
            "--output",
            "pred.json",
        ],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let dump: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("pred.json")).unwrap()).unwrap();
    assert_eq!(dump["answer"].as_object().unwrap().len(), 8);
    assert!(dump["sp"]["synth-3-0"].is_array());

    let o = hopqa(
        &[
            "heatmap",
            "-c",
            "tiny.cfg",
            "--checkpoint",
            "run/model",
            "--id",
            "synth-3-2",
            "--out",
            "hm",
        ],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let (examples, _) = hopqa::data::load_hotpotqa(&p.join("data.json")).unwrap();
    let ex = examples.iter().find(|e| e.id == "synth-3-2").unwrap();
    let (rows, cols, _) = hopqa::heatmap::read_csv(&p.join("hm/s.csv")).unwrap();
    assert_eq!((rows, cols), (ex.context_len(), ex.question_tokens.len()));
    let (rows, cols, col) = hopqa::heatmap::read_csv(&p.join("hm/column_attention.csv")).unwrap();
    for c in 0..cols {
        let s: f64 = (0..rows).map(|r| col[r * cols + c]).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
    for f in [
        "s.pgm",
        "s.labels.txt",
        "row_attention.csv",
        "query_attention.csv",
    ] {
        assert!(p.join("hm").join(f).exists(), "{f}");
    }

    let o = hopqa(
        &[
            "heatmap",
            "-c",
            "tiny.cfg",
            "--checkpoint",
            "run/model",
            "--id",
            "missing",
            "--out",
            "hm",
        ],
        p,
    );
    assert_eq!(o.status.code(), Some(2));
}

fn strip_times(log: &str) -> String {
    log.lines()
        .map(|l| l.split(" time=").next().unwrap())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn training_logs_are_deterministic() {
    let dir = setup();
    let p = dir.path();
    for out in ["a", "b"] {
        let o = hopqa(
            &[
                "train",
                "-c",
                "tiny.cfg",
                "--set",
                "dropout=0.2",
                "--out",
                out,
            ],
            p,
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read_to_string(p.join("a/train.log")).unwrap();
    let b = fs::read_to_string(p.join("b/train.log")).unwrap();
    assert_eq!(strip_times(&a), strip_times(&b));
    assert_eq!(
        fs::read(p.join("a/model.bin")).unwrap(),
        fs::read(p.join("b/model.bin")).unwrap()
    );
}

#[test]
fn ablation_emits_four_rows() {
    let dir = setup();
    let o = hopqa(
        &[
            "ablation", "-c", "tiny.cfg", "--set", "epochs=1", "--out", "table.md",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("table.md")).unwrap();
    let labels: Vec<&str> = table
        .lines()
        .skip(2)
        .map(|l| l.split('|').nth(1).unwrap().trim())
        .collect();
    assert_eq!(labels, ["Baseline", "Our Model", "CGDe", "FGIn"]);
}

#[test]
fn dataset_cache_is_used_when_configured() {
    let dir = setup();
    let cache = dir.path().join("cache");
    let mut logs = Vec::new();
    for _ in 0..2 {
        let o = Command::new(env!("CARGO_BIN_EXE_hopqa"))
            .args(["train", "-c", "tiny.cfg", "--set", "epochs=1", "--out", "c"])
            .current_dir(dir.path())
            .env("HOPQA_CACHE_DIR", &cache)
            .env("RUST_LOG", "info")
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        logs.push(stderr(&o));
    }
    assert!(!logs[0].contains("dataset cache hit"), "{}", logs[0]);
    assert!(logs[1].contains("dataset cache hit"), "{}", logs[1]);
    assert!(fs::read_dir(&cache).unwrap().count() > 0);
}
