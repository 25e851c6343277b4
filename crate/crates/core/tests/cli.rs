use std::process::Command;

fn twostream(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_twostream"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn gen_data_writes_file_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data.smv");
    let out_s = out.to_str().unwrap();
    let (code, stdout, _) = twostream(&[
        "gen-data",
        "--classes",
        "4",
        "--clips-per-class",
        "5",
        "--frames",
        "10",
        "--size",
        "32",
        "--seed",
        "7",
        "--out",
        out_s,
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("20 clips"));
    assert!(out.exists());
    assert!(dir.path().join("data.json").exists());
}

#[test]
fn gen_data_reads_json_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"classes": 2, "clips_per_class": 3, "clip": {"frames": 4, "size": 16, "channels": 3}}"#,
    )
    .unwrap();
    let out = dir.path().join("d.smv");
    let (code, stdout, _) = twostream(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--classes",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{stdout}");
    assert!(stdout.contains("9 clips"));
}

#[test]
fn gradcheck_single_op() {
    let (code, stdout, _) = twostream(&["gradcheck", "--op", "adaptive_conv", "--seed", "1"]);
    assert_eq!(code, 0);
    assert!(stdout.starts_with("adaptive_conv"));
    let err: f64 = stdout
        .split("max rel err")
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-4);
}

#[test]
fn bench_writes_one_row_per_case() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out.csv");
    let (code, _, _) = twostream(&[
        "bench",
        "--modes",
        "dense,separable",
        "--n",
        "5,17",
        "--size",
        "16",
        "--repetitions",
        "3",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "case,n,S,mode,params_per_pixel,median_ns,min_ns,residual");
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().any(|l| l.starts_with("dense-n17-16,17,1,dense,289,")));
    assert!(lines.iter().any(|l| l.starts_with("separable-n5-16,5,1,separable,10,")));
}

#[test]
fn exit_codes() {
    assert_eq!(twostream(&["train", "--bogus"]).0, 1);
    assert_eq!(twostream(&["frobnicate"]).0, 1);
    assert_eq!(twostream(&["--help"]).0, 0);
    let (code, _, stderr) = twostream(&["train", "--data", "/nonexistent/data.smv", "--out", "/tmp/x.tsvc"]);
    assert_eq!(code, 2);
    assert!(stderr.contains("/nonexistent/data.smv"));
    assert_eq!(
        twostream(&["gen-data", "--classes", "99", "--out", "/tmp/never.smv"]).0,
        1
    );
    assert_eq!(twostream(&["gradcheck", "--op", "fft"]).0, 1);
    assert_eq!(twostream(&["bench", "--modes", "sparse"]).0, 1);
    assert_eq!(twostream(&["bench", "--n", "4", "--size", "8"]).0, 1);
}

#[test]
fn rollout_and_export_from_a_fresh_model() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_owned();
    let gen = [
        "gen-data",
        "--classes",
        "2",
        "--clips-per-class",
        "3",
        "--frames",
        "5",
        "--size",
        "16",
        "--out",
        &p("d.smv"),
    ];
    assert_eq!(twostream(&gen).0, 0);
    let cfg = p("train.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"ngf": 4, "content_dim": 8, "motion_dim": 4}, "train": {"batch_size": 2}}"#,
    )
    .unwrap();
    let train = [
        "train",
        "--data",
        &p("d.smv"),
        "--config",
        &cfg,
        "--iterations",
        "3",
        "--out",
        &p("m.tsvc"),
    ];
    assert_eq!(twostream(&train).0, 0);
    let roll = [
        "rollout",
        "--model",
        &p("m.tsvc"),
        "--count",
        "3",
        "--frames",
        "4",
        "--seed",
        "2",
        "--out",
        &p("g.smv"),
    ];
    assert_eq!(twostream(&roll).0, 0);
    let export = [
        "export-frames",
        "--clips",
        &p("g.smv"),
        "--index",
        "2",
        "--out",
        &p("frames"),
    ];
    assert_eq!(twostream(&export).0, 0);
    let frames: Vec<_> = std::fs::read_dir(dir.path().join("frames")).unwrap().collect();
    assert_eq!(frames.len(), 4);
    let bytes = std::fs::read(dir.path().join("frames/frame_000.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
    let (code, stdout, _) = twostream(&["eval", "--data", &p("d.smv"), "--model", &p("m.tsvc")]);
    assert_eq!(code, 0);
    assert!(stdout.contains("\"ratio\""));
}
