use std::process::Command;

fn spoofdet(dir: &std::path::Path, args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_spoofdet"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(spoofdet(dir.path(), &[]).0, 1);
    assert_eq!(spoofdet(dir.path(), &["frobnicate"]).0, 1);
    assert_eq!(spoofdet(dir.path(), &["eval", "--scores", "s", "--manifest", "m", "--pooling", "max"]).0, 1);

    let (code, err) = spoofdet(dir.path(), &["train-model", "--manifest", "m", "--features", "f", "--out", "o"]);
    assert_eq!(code, 1);
    assert!(err.contains("--sad") && err.contains("--no-sad"), "{err}");

    std::fs::write(dir.path().join("bad.toml"), "[train]\nmax_epoch = 3\n").unwrap();
    let (code, err) = spoofdet(dir.path(), &["--config", "bad.toml", "eval", "--scores", "s", "--manifest", "m"]);
    assert_eq!(code, 1, "{err}");
    assert!(err.contains("max_epoch"), "{err}");
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(spoofdet(dir.path(), &["--help"]).0, 0);
    assert_eq!(spoofdet(dir.path(), &["score", "--help"]).0, 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = spoofdet(dir.path(), &["extract-features", "--manifest", "missing.tsv", "--out", "o"]);
    assert_eq!(code, 2);
    assert!(err.contains("missing.tsv"), "{err}");

    std::fs::write(dir.path().join("m.tsv"), "a.wav\tspoof\tgen0\teval\nb.wav\tpristine\tsrc0\teval\n").unwrap();
    std::fs::write(dir.path().join("s.tsv"), "a.wav\t1.0\t2.0\nc.wav\t0.0\t0.0\n").unwrap();
    let (code, err) = spoofdet(dir.path(), &["eval", "--scores", "s.tsv", "--manifest", "m.tsv"]);
    assert_eq!(code, 2);
    assert!(err.contains("c.wav"), "{err}");

    // the listed audio does not exist
    let (code, err) = spoofdet(dir.path(), &["extract-features", "--manifest", "m.tsv", "--out", "o"]);
    assert_eq!(code, 2);
    assert!(err.contains("2 of 2 files failed"), "{err}");
}

#[test]
fn eval_report() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("m.tsv"), "a.wav\tspoof\tgen0\teval\nb.wav\tpristine\tsrc0\teval\n").unwrap();
    std::fs::write(dir.path().join("s.tsv"), "a.wav\t1.0\t-1.0\nb.wav\t0.0\t0.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_spoofdet"))
        .current_dir(dir.path())
        .args(["eval", "--scores", "s.tsv", "--manifest", "m.tsv", "--pooling", "avg", "--out", "r.txt"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("eer\t0.0\n"), "{text}");
    assert_eq!(std::fs::read_to_string(dir.path().join("r.txt")).unwrap(), text);
    let (code, _) = spoofdet(dir.path(), &["eval", "--scores", "s.tsv", "--manifest", "m.tsv", "--pooling", "interleaved"]);
    assert_eq!(code, 0);
}

#[test]
fn numeric_failures_exit_3() {
    use spoofdet::archive::write_features;
    use spoofdet::features::{FeatureKind, FeatureMatrix};
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("emb")).unwrap();
    let mut manifest = String::new();
    for (i, (label, class)) in [("spoof", "gen0"), ("spoof", "gen1"), ("pristine", "src0"), ("pristine", "src1")]
        .iter()
        .cycle()
        .take(12)
        .enumerate()
    {
        manifest.push_str(&format!("u{i}.wav\t{label}\t{class}\ttrain\n"));
        // every utterance has the same embedding, so no direction separates the classes
        let m = FeatureMatrix::new(vec![1.0; 3 * 4], 3, 4, FeatureKind::Generic).unwrap();
        write_features(dir.path().join(format!("emb/u{i}.emb")), &m).unwrap();
    }
    std::fs::write(dir.path().join("m.tsv"), manifest).unwrap();
    let (code, err) = spoofdet(dir.path(), &["train-backend", "--manifest", "m.tsv", "--embeddings", "emb", "--out", "b"]);
    assert_eq!(code, 3, "{err}");
}
