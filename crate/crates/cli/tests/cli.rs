use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_misdetect");

/// Small, fast training settings.
const TINY: &[&str] = &[
    "--width",
    "8",
    "--embed-dim",
    "8",
    "--max-epochs",
    "2",
    "--stage1-epochs",
    "1",
    "--warmup-steps",
    "2",
    "--batch-size",
    "16",
    "--patience",
    "2",
];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &Path, spec: &str, n: usize) -> String {
    let path = dir.join(format!("{spec}.jsonl"));
    let p = path.to_str().unwrap().to_owned();
    ok(&["gen", "--spec", spec, "--n", &n.to_string(), "--seed", "7", "--out", &p]);
    p
}

fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(TINY.iter().copied()).collect()
}

#[test]
fn gen_writes_requested_count_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let p = gen(dir.path(), "health", 2000);
    assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 2000);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(format!("{p}.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["command"], "gen");
    assert!(manifest["git_describe"].is_string());
    assert!(manifest["wall_time_secs"].is_number());
    let again = dir.path().join("again.jsonl");
    ok(&[
        "gen",
        "--spec",
        "health",
        "--n",
        "2000",
        "--seed",
        "7",
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(fs::read(&p).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn gradcheck_reports_every_group_within_tolerance() {
    let a = ok(&["gradcheck", "--tau", "0.07", "--seed", "3"]);
    assert!(a.contains("tau=0.07"), "{a}");
    let line = a.lines().nth(1).unwrap();
    let parts: Vec<&str> = line.split(", ").collect();
    assert_eq!(parts.len(), 3, "{line}");
    for (part, group) in parts.iter().zip(["Theta", "Phi", "Omega"]) {
        let (name, err) = part.split_once(": ").unwrap();
        assert_eq!(name, group);
        assert!(err.parse::<f64>().unwrap() <= 1e-4, "{line}");
    }
    assert_eq!(a, ok(&["gradcheck", "--tau", "0.07", "--seed", "3"]));
}

#[test]
fn gradcheck_breach_exits_two() {
    let out = run(&["gradcheck", "--tolerance", "1e-12"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[tolerance]:"));
}

#[test]
fn errors_are_one_line_with_kind() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out_dir = dir.path().join("o");
    let out = run(&[
        "train",
        "--data",
        missing.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[io]:") && err.contains("missing.jsonl"), "{err}");
    assert_eq!(err.lines().count(), 1);

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "lr = 0.001\n\nbatch_size = lots\n").unwrap();
    let out = run(&["train", "--config", cfg.to_str().unwrap(), "--data", "x", "--out", "y"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[format]:") && err.contains("line 3"), "{err}");

    let out = run(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[usage]:"));
}

#[test]
fn train_eval_round_trip_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "health", 160);
    let cfg = dir.path().join("desk.cfg");
    fs::write(&cfg, "# tiny\nseed = 5\n").unwrap();
    let (a, b) = (dir.path().join("run1"), dir.path().join("run2"));
    for out in [&a, &b] {
        let args = with_tiny(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--data",
            &data,
            "--out",
            out.to_str().unwrap(),
        ]);
        ok(&args);
    }
    for f in ["checkpoint.ckpt", "report.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report = fs::read_to_string(a.join("report.jsonl")).unwrap();
    assert!(report.lines().last().unwrap().contains("\"summary\""));
    let manifest = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(
        manifest.contains("seed = 5") && manifest.contains("width = 8"),
        "{manifest}"
    );

    let ev = dir.path().join("eval");
    let printed = ok(&[
        "eval",
        "--checkpoint",
        a.join("checkpoint.ckpt").to_str().unwrap(),
        "--data",
        &data,
        "--out",
        ev.to_str().unwrap(),
    ]);
    assert!(printed.contains("(n = 160)"), "{printed}");
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(
        metrics["tp"].as_u64().unwrap()
            + metrics["fp"].as_u64().unwrap()
            + metrics["tn"].as_u64().unwrap()
            + metrics["fn"].as_u64().unwrap(),
        160
    );
}

#[test]
fn augment_writes_two_views_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "politics", 30);
    let out = dir.path().join("views.jsonl");
    ok(&[
        "augment",
        "--data",
        &data,
        "--out",
        out.to_str().unwrap(),
        "--augment",
        "deletion",
        "--augment-rate",
        "0.3",
    ]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 30);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first["view1"].is_string() && first["view2"].is_string());
}

#[test]
fn sweeps_emit_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let health = gen(dir.path(), "health", 100);
    let politics = gen(dir.path(), "politics", 100);

    let out = dir.path().join("ablate");
    let table = ok(&with_tiny(&[
        "ablate",
        "--data",
        &health,
        "--runs",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(table.lines().count(), 5, "{table}");
    for v in ["full", "no_cl", "no_isr", "no_fusion"] {
        assert!(table.lines().any(|l| l.starts_with(v)), "{table}");
    }
    assert_eq!(
        fs::read_to_string(out.join("ablation.jsonl")).unwrap().lines().count(),
        4
    );

    let out = dir.path().join("aug");
    let table = ok(&with_tiny(&[
        "augcompare",
        "--data",
        &health,
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(table.lines().count(), 5, "{table}");

    let out = dir.path().join("cross");
    ok(&with_tiny(&[
        "crossdomain",
        "--data",
        &health,
        "--data",
        &politics,
        "--out",
        out.to_str().unwrap(),
    ]));
    let csv = fs::read_to_string(out.join("transfer.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "train\\test,health,politics");
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("health.ckpt").exists() && out.join("manifest.json").exists());
}
