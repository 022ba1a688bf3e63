use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
profile = "synthetic"
seed = 3

[data]
train = 48
test = 16
image_size = 8

[search]
epochs = 1
phase1_batch = 16
subset_fraction = 0.25
phase2_batch = 6

[finetune]
epochs = 1
batch = 16
calibration_samples = 8
"#;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid-imc"))
        .current_dir(dir)
        .args(args)
        .env_remove("HYBRID_IMC_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let o = cli(d.path(), &["--config", "nope.toml", "cost"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("nope.toml"));
}

#[test]
fn malformed_config_exits_4() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.toml"), "seed = [unclosed").unwrap();
    let o = cli(d.path(), &["--config", "bad.toml", "cost"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exits_4() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.toml"), "seeed = 1\n").unwrap();
    let o = cli(d.path(), &["--config", "c.toml", "cost"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn invalid_values_exit_6() {
    let d = tempfile::tempdir().unwrap();
    let o = cli(d.path(), &["--topology", "conv (3,16), conv (8,16), FC", "cost"]);
    assert_eq!(code(&o), 6, "{}", stderr(&o));
    std::fs::write(d.path().join("c.toml"), "[search]\nsubset_fraction = 2.0\n").unwrap();
    let o = cli(d.path(), &["--config", "c.toml", "search"]);
    assert_eq!(code(&o), 6, "{}", stderr(&o));
    let o = cli(d.path(), &["cost", "--device", "RRAM"]);
    assert_eq!(code(&o), 6, "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&cli(d.path(), &["frobnicate"])), 2);
    assert_eq!(code(&cli(d.path(), &["cost", "--hybrid", "a.txt", "--device", "PCM"])), 2);
}

#[test]
fn pipeline_and_checkpoint_version() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(p.join("run.toml"), TINY).unwrap();
    let c = |extra: &[&str]| {
        let mut a = vec!["--config", "run.toml"];
        a.extend_from_slice(extra);
        cli(p, &a)
    };
    let o = c(&["search", "--out", "s"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["hybrid.txt", "trace.jsonl", "parent.ckpt", "run-meta.json"] {
        assert!(p.join("s").join(f).is_file(), "missing {f}");
    }
    let o = c(&["finetune", "--hybrid", "s/hybrid.txt", "--from", "s/parent.ckpt", "--out", "f"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = c(&["eval", "--model", "f/model.ckpt", "--time-grid", "0,1e4", "--out", "e"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(p.join("e/retention.csv")).unwrap();
    assert!(csv.starts_with("# schema: retention v1\n"), "{csv}");
    assert_eq!(csv.lines().count(), 4);

    // Same file with a future format version.
    let mut bytes = std::fs::read(p.join("f/model.ckpt")).unwrap();
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    std::fs::write(p.join("future.ckpt"), bytes).unwrap();
    let o = c(&["eval", "--model", "future.ckpt", "--out", "e2"]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));

    std::fs::write(p.join("junk.ckpt"), b"not a checkpoint").unwrap();
    let o = c(&["eval", "--model", "junk.ckpt", "--out", "e3"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn cost_table_lists_hybrid_and_baselines() {
    let d = tempfile::tempdir().unwrap();
    let mut text = String::from("profile cifar10\nL1 S 4\nL2 P 4\n");
    for i in 3..=12 {
        text.push_str(&format!("L{i} F 3\n"));
    }
    std::fs::write(d.path().join("h.txt"), text).unwrap();
    let o = cli(d.path(), &["--topology", "vgg16", "cost", "--hybrid", "h.txt", "--out", "c"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(d.path().join("c/cost-table.csv")).unwrap();
    for name in ["all-SRAM", "all-PCM", "all-FeFET", "hybrid"] {
        assert!(table.contains(name), "{table}");
    }
    assert!(d.path().join("c/cost.csv").is_file());
}
