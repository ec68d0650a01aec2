use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pathrec"));
    c.env_remove("PATHREC_WORKDIR");
    c
}

fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy")
}

fn run(args: &[&str], workdir: &Path) -> Output {
    let conf = toy_dir().join("toy.conf");
    bin()
        .args(args)
        .arg("--config")
        .arg(&conf)
        .arg("--workdir")
        .arg(workdir)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn build_kg_on_bundled_toy() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["build-kg"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("kg/triples.tsv").is_file());
    assert!(dir.path().join("kg/stats.json").is_file());
    assert!(dir.path().join("kg/manifest.json").is_file());
}

#[test]
fn train_without_embeddings_fails_naming_the_file() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["build-kg"], dir.path()).status.success());
    let out = run(&["train"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("embeddings.bin"), "{}", stderr(&out));
}

#[test]
fn override_is_recorded_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["build-kg", "--set", "training.T=3"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let manifest = std::fs::read_to_string(dir.path().join("kg/manifest.json")).unwrap();
    assert!(manifest.contains("training.T = 3"), "{manifest}");
}

#[test]
fn unknown_key_lists_valid_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["build-kg", "--set", "training.tau=3"], dir.path());
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(
        err.contains("training.tau") && err.contains("training.gamma"),
        "{err}"
    );
}

#[test]
fn full_pipeline_then_recommend_and_explain() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    for cmd in ["build-kg", "pretrain", "train", "evaluate"] {
        let out = run(&[cmd, "--set", "training.epochs=2"], w);
        assert!(out.status.success(), "{cmd}: {}", stderr(&out));
    }
    let out = run(&["recommend", "--set", "training.epochs=2"], w);
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let first: serde_json::Value = serde_json::from_str(stdout.lines().next().unwrap()).unwrap();
    assert_eq!(first["recommendations"].as_array().unwrap().len(), 10);
    assert!(w.join("recs/recommendations.jsonl").is_file());

    let input = w.join("prefixes.jsonl");
    std::fs::write(&input, "{\"prefix\": [\"p0000\", \"p0001\"]}\n").unwrap();
    let out = run(&["explain", "--input", input.to_str().unwrap()], w);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("session: p0000 p0001"), "{text}");
    assert!(text.contains("-->") || text.contains("encoder score"));

    let out = run(
        &["explain", "--json", "--input", input.to_str().unwrap()],
        w,
    );
    assert!(out.status.success());
    for line in String::from_utf8(out.stdout).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["hops"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn unknown_prefix_item_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    for cmd in ["build-kg", "pretrain", "train"] {
        assert!(run(&[cmd, "--set", "training.epochs=1"], w)
            .status
            .success());
    }
    let input = w.join("bad.jsonl");
    std::fs::write(&input, "{\"prefix\": [\"nope\"]}\n").unwrap();
    let out = run(&["recommend", "--input", input.to_str().unwrap()], w);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("nope"));
}

#[test]
fn workdir_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let conf = toy_dir().join("toy.conf");
    let out = bin()
        .arg("build-kg")
        .arg("--config")
        .arg(&conf)
        .env("PATHREC_WORKDIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("kg/triples.tsv").is_file());
}
