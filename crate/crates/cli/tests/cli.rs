use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tumorseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tumorseg")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn kv_value(text: &str, key: &str) -> Option<String> {
    text.lines().find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
}

fn phantom(dir: &Path, extra: &[&str]) {
    let mut args = vec!["phantom", "--output-dir", p(dir), "--seed", "9"];
    args.extend_from_slice(extra);
    let out = tumorseg(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline(data: &Path, out_dir: &Path) -> Output {
    tumorseg(&[
        "pipeline",
        "--atlas-dir",
        p(data),
        "--input",
        p(&data.join("patient.mvol")),
        "--ground-truth",
        p(&data.join("truth.mvol")),
        "--output-dir",
        p(out_dir),
    ])
}

#[test]
fn pipeline_succeeds_and_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    phantom(&data, &[]);
    let out_dir = tmp.path().join("out");
    let out = pipeline(&data, &out_dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "model.txt",
        "gbbm.mvol",
        "candidate.mvol",
        "candidate_report.txt",
        "segmentation.mvol",
        "fvf_log.txt",
        "report.txt",
    ] {
        assert!(out_dir.join(name).is_file(), "missing {name}");
    }
    let report = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert_eq!(kv_value(&report, "status").as_deref(), Some("ok"));
    let tm: f64 = kv_value(&report, "tm").unwrap().parse().unwrap();
    assert!(tm >= 0.85, "TM {tm}");
    assert_eq!(String::from_utf8(out.stdout).unwrap(), report);
}

#[test]
fn stages_run_one_at_a_time() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    phantom(&data, &["--shape", "ellipsoid", "--radii", "10,7,5"]);
    let work = tmp.path().join("work");
    let atlas = ["--atlas-dir", p(&data), "--output-dir", p(&work)];
    let run = |args: &[&str]| {
        let out = tumorseg(args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };

    run(&[&["fit"][..], &atlas].concat());
    let model = work.join("model.txt");
    let patient = data.join("patient.mvol");
    run(&[&["gbbm", "--model", p(&model), "--input", p(&patient)][..], &atlas].concat());
    let report = run(&[&["candidate", "--input", p(&work.join("gbbm.mvol"))][..], &atlas].concat());
    assert!(kv_value(&report, "candidate_voxels").unwrap().parse::<usize>().unwrap() > 0);
    run(&["segment", "--input", p(&patient), "--output-dir", p(&work)]);
    let eval = run(&[
        "evaluate",
        "--input",
        p(&work.join("segmentation.mvol")),
        "--ground-truth",
        p(&data.join("truth.mvol")),
    ]);
    let tm: f64 = kv_value(&eval, "tm").unwrap().parse().unwrap();
    assert!(tm >= 0.75, "TM {tm}");
}

#[test]
fn control_phantom_exits_with_no_candidate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    phantom(&data, &["--offset", "0"]);
    let out_dir = tmp.path().join("out");
    let out = pipeline(&data, &out_dir);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no candidate"));
    let report = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert_eq!(kv_value(&report, "status").as_deref(), Some("no-candidate"));
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing");
    assert_eq!(code(&pipeline(&missing, &tmp.path().join("out"))), 5);

    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "warp=9\n").unwrap();
    assert_eq!(code(&tumorseg(&["fit", "--config", p(&cfg)])), 1);

    assert_eq!(code(&tumorseg(&["phantom", "--offset", "1.5", "--output-dir", p(tmp.path())])), 1);
    assert_eq!(code(&tumorseg(&["segment", "--nonsense"])), 2);
    assert_eq!(code(&tumorseg(&[])), 2);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    // A bad psi in the file is fine once the flag replaces it.
    fs::write(&cfg, format!("psi=999\noutput_dir={}\n", p(&tmp.path().join("ph")))).unwrap();
    assert_eq!(code(&tumorseg(&["phantom", "--config", p(&cfg)])), 1);
    let out = tumorseg(&["phantom", "--config", p(&cfg), "--psi", "150"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("ph").join("patient.mvol").is_file());
}

#[test]
fn phantom_output_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    phantom(&a, &["--shape", "blob", "--size", "40", "--radii", "5"]);
    phantom(&b, &["--shape", "blob", "--size", "40", "--radii", "5"]);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}
