use std::process::Command;

fn gliopath(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gliopath")).args(args).output().unwrap()
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let missing = dir.path().join("nope.csv");
    let m = missing.to_str().unwrap();

    let out = gliopath(&["train", "--manifest", m, "--out", d, "--lr", "-1"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = gliopath(&["train", "--manifest", m, "--out", d]);
    assert_eq!(out.status.code(), Some(3));
    let out = gliopath(&["gradcheck", "--batch", "4", "--size", "8", "--widths", "4,4,4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out = gliopath(&["synth", "--out", corpus.to_str().unwrap(), "--slides-per-class", "8", "--image-size", "32"]);
    assert!(out.status.success());
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# split only\ntask = codel\nrepeats = 3\nseed = 4\n").unwrap();
    let splits = dir.path().join("splits");
    let out = gliopath(&[
        "split",
        "--manifest",
        corpus.join("manifest.csv").to_str().unwrap(),
        "--out",
        splits.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--task",
        "idh",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<String> = std::fs::read_dir(&splits)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["idh_all_0.split.csv", "idh_all_1.split.csv", "idh_all_2.split.csv"]);

    std::fs::write(&cfg, "bogus_key = 1\n").unwrap();
    let out = gliopath(&["split", "--manifest", "x.csv", "--out", "y", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
