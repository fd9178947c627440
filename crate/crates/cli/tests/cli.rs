use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[synthetic]
size = 120
seed = 3
[[synthetic.motifs]]
name = "amide"
smiles = "NC(=O)c1ccccc1"
decoy_rate = 0.5
[[synthetic.motifs]]
name = "no_acid"
smiles = "C(=O)O"
rate = 0.3
negate = true
[predictor.forest]
n_trees = 20
[extract]
max_molecules = 10
[model]
hidden = 16
latent = 4
[train]
k = 4
l = 2
pretrain_epochs = 1
estimate_samples = 2
batch_size = 4
[sample]
n = 20
"#;

fn ratgen(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ratgen"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .arg("--config")
        .arg("run.toml")
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn end_to_end_pipeline() {
    let dir = setup(TINY);
    let table = ok(&ratgen(dir.path(), &["all"]));
    assert!(table.contains("success"), "{table}");
    let run = dir.path().join("run");
    for f in [
        "labels.csv",
        "vocab_multi.json",
        "finetuned.bin",
        "samples.csv",
        "report.csv",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let samples = std::fs::read_to_string(run.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 21);
    let faith = ok(&ratgen(dir.path(), &["faithfulness"]));
    assert!(faith.contains("exact"), "{faith}");
    assert!(run.join("faithfulness.json").exists());
}

#[test]
fn zero_samples_writes_header_only() {
    let dir = setup(TINY);
    ok(&ratgen(dir.path(), &["all"]));
    ok(&ratgen(dir.path(), &["sample", "--n", "0", "--force"]));
    let samples = std::fs::read_to_string(dir.path().join("run/samples.csv")).unwrap();
    assert_eq!(samples.trim(), "smiles,rationale");
}

#[test]
fn missing_artifact_names_the_producing_command() {
    let dir = setup(TINY);
    let out = ratgen(dir.path(), &["finetune"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`gen-synthetic`"));
    ok(&ratgen(dir.path(), &["gen-synthetic"]));
    let out = ratgen(dir.path(), &["finetune"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("`train-predictor`"), "{err}");
}

#[test]
fn config_errors_exit_with_two() {
    let dir = setup("[model]\nwidth = 3\n");
    let out = ratgen(dir.path(), &["pretrain"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = setup("");
    let out = ratgen(dir.path(), &["gen-synthetic"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stale_upstream_is_refused_without_force() {
    let dir = setup(TINY);
    ok(&ratgen(dir.path(), &["gen-synthetic"]));
    ok(&ratgen(dir.path(), &["train-predictor"]));
    let changed = TINY.replace("n_trees = 20", "n_trees = 21");
    std::fs::write(dir.path().join("run.toml"), changed).unwrap();
    let out = ratgen(dir.path(), &["extract"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    ok(&ratgen(dir.path(), &["extract", "--force"]));
}

#[test]
fn reruns_are_byte_identical() {
    let a = setup(TINY);
    let b = setup(TINY);
    ok(&ratgen(a.path(), &["all"]));
    ok(&ratgen(b.path(), &["all"]));
    for f in [
        "samples.csv",
        "report.csv",
        "vocab_multi.json",
        "finetuned.bin",
    ] {
        let x = std::fs::read(a.path().join("run").join(f)).unwrap();
        let y = std::fs::read(b.path().join("run").join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
}
