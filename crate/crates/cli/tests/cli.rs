use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

const SMOKE: &[&str] = &[
    "dataset.train=50",
    "dataset.val=10",
    "dataset.test=20",
    "dataset.horizon=20",
    "training.epochs=3",
    "training.batch_size=16",
];

fn rkn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rkn"))
        .args(args)
        .current_dir(cwd)
        .env_remove("RKN_THREADS")
        .output()
        .unwrap()
}

fn with_overrides<'a>(mut args: Vec<&'a str>, overrides: &[&'a str]) -> Vec<&'a str> {
    for o in overrides {
        args.push("--override");
        args.push(o);
    }
    args
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        stdout(&o),
        stderr(&o)
    );
    o
}

fn generate_smoke(dir: &Path, name: &str) {
    ok(rkn(
        &with_overrides(vec!["generate", "--out", name], SMOKE),
        dir,
    ));
}

#[test]
fn help_documents_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let top = ok(rkn(&["--help"], dir.path()));
    for sub in ["generate", "train", "eval", "sweep", "report"] {
        assert!(stdout(&top).contains(sub));
        let help = ok(rkn(&[sub, "--help"], dir.path()));
        assert!(stdout(&help).contains("Usage"), "{sub}");
    }
    let train = stdout(&ok(rkn(&["train", "--help"], dir.path())));
    for flag in [
        "--config",
        "--override",
        "--dataset",
        "--checkpoint",
        "--history",
        "--resume",
        "--quiet",
    ] {
        assert!(train.contains(flag), "{flag}");
    }
    let sweep = stdout(&ok(rkn(&["sweep", "--help"], dir.path())));
    for flag in ["--nu", "--train", "--checkpoints", "--out"] {
        assert!(sweep.contains(flag), "{flag}");
    }
}

#[test]
fn unknown_flags_and_bad_overrides_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        rkn(&["generate", "--bogus"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(rkn(&["frobnicate"], dir.path()).status.code(), Some(2));
    let o = rkn(&["generate", "--override", "dataset.trian=2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset.trian"));
}

#[test]
fn invalid_probability_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = rkn(&["generate", "--override", "noise.p=1.5"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("noise.p"), "{}", stderr(&o));
    assert!(!dir.path().join("data").exists());
}

#[test]
fn thread_cap_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_rkn"))
        .args(["generate", "--override", "dataset.train=2"])
        .current_dir(dir.path())
        .env("RKN_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_rkn"))
        .args(with_overrides(vec!["generate"], SMOKE))
        .current_dir(dir.path())
        .env("RKN_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
}

#[test]
fn generate_writes_a_reproducible_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let first = ok(rkn(
        &with_overrides(vec!["generate", "--out", "a"], &["dataset.train=2"]),
        dir.path(),
    ));
    ok(rkn(
        &with_overrides(vec!["generate", "--out", "b"], &["dataset.train=2"]),
        dir.path(),
    ));
    assert!(stdout(&first).contains("fingerprint"));
    for f in ["train.csv", "val.csv", "test.csv", "meta.toml"] {
        let (a, b) = (
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
        );
        assert_eq!(a, b, "{f}");
    }
    let train = fs::read_to_string(dir.path().join("a/train.csv")).unwrap();
    assert_eq!(train.lines().count(), 1 + 2 * 150);
    assert_eq!(
        fs::read_to_string(dir.path().join("a/test.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 1000 * 150
    );
}

#[test]
fn smoke_training_resumes_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate_smoke(d, "data");

    let start = Instant::now();
    let out = ok(rkn(&with_overrides(vec!["train"], SMOKE), d));
    assert!(
        start.elapsed().as_secs() < 60,
        "smoke training took {:?}",
        start.elapsed()
    );
    assert!(stdout(&out).contains("best epoch"));
    let history = fs::read_to_string(d.join("history.csv")).unwrap();
    assert_eq!(
        history.lines().next().unwrap(),
        "epoch,train_nll,val_nll,val_mse_db,val_msmd"
    );
    assert_eq!(history.lines().count(), 4);

    // Resuming to five epochs continues the numbering.
    let mut resume = with_overrides(
        vec![
            "train",
            "--resume",
            "rkn.ckpt",
            "--checkpoint",
            "resumed.ckpt",
            "--history",
            "resumed.csv",
        ],
        SMOKE,
    );
    resume.extend(["--override", "training.epochs=5"]);
    ok(rkn(&resume, d));
    let resumed = fs::read_to_string(d.join("resumed.csv")).unwrap();
    let epochs: Vec<&str> = resumed
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(epochs, ["1", "2", "3", "4", "5"]);
    assert!(resumed.starts_with(&history));

    // An uninterrupted five-epoch run gives the same history.
    let mut full = with_overrides(
        vec![
            "train",
            "--checkpoint",
            "full.ckpt",
            "--history",
            "full.csv",
        ],
        SMOKE,
    );
    full.extend(["--override", "training.epochs=5"]);
    ok(rkn(&full, d));
    assert_eq!(fs::read(d.join("full.csv")).unwrap(), resumed.as_bytes());

    for method in ["okf", "sokf", "rkn.ckpt"] {
        let o = ok(rkn(
            &with_overrides(vec!["eval", method, "--svg"], SMOKE),
            d,
        ));
        let name = if method == "rkn.ckpt" { "rkn" } else { method };
        assert!(stdout(&o).contains(name));
        let report = fs::read_to_string(d.join("out").join(format!("{name}_report.csv"))).unwrap();
        assert_eq!(
            report.lines().next().unwrap(),
            "method,nu_db,mse_db,msmd,mse_pos,mse_vel"
        );
        assert!(report
            .lines()
            .nth(1)
            .unwrap()
            .starts_with(&format!("{name},4.0000000000000000e1,")));
        let consistency =
            fs::read_to_string(d.join("out").join(format!("{name}_consistency.csv"))).unwrap();
        assert_eq!(consistency.lines().count(), 21);
        assert_eq!(
            fs::read_to_string(d.join("out").join(format!("{name}_gain.csv")))
                .unwrap()
                .lines()
                .count(),
            21
        );
        assert!(d
            .join("out")
            .join(format!("{name}_consistency.svg"))
            .exists());
    }

    let before = fs::read(d.join("out/rkn_report.csv")).unwrap();
    ok(rkn(&with_overrides(vec!["eval", "rkn.ckpt"], SMOKE), d));
    assert_eq!(fs::read(d.join("out/rkn_report.csv")).unwrap(), before);

    let o = ok(rkn(
        &[
            "report",
            "out/okf_report.csv",
            "out/sokf_report.csv",
            "out/rkn_report.csv",
            "--table",
            "all.csv",
        ],
        d,
    ));
    let table = stdout(&o);
    assert!(table.contains("okf") && table.contains("sokf") && table.contains("rkn"));
    assert_eq!(
        fs::read_to_string(d.join("all.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
    let o = ok(rkn(&["report", "out/okf_gain.csv", "--svg", "plots"], d));
    assert!(stdout(&o).contains("okf_gain.svg"));
    assert!(d.join("plots/okf_gain.svg").exists());
}

#[test]
fn training_rejects_a_dataset_from_another_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate_smoke(d, "data");
    let mut args = with_overrides(vec!["train"], SMOKE);
    args.extend(["--override", "dataset.master_seed=9"]);
    let o = rkn(&args, d);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("fingerprint"), "{}", stderr(&o));
}

#[test]
fn corrupted_dataset_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate_smoke(d, "data");
    let path = d.join("data/val.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut fields: Vec<String> = lines[1].split(',').map(str::to_string).collect();
    fields[4] = "1.2345000000000000e0".into();
    lines[1] = fields.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let o = rkn(&with_overrides(vec!["train"], SMOKE), d);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("fingerprint"), "{}", stderr(&o));
    assert_eq!(rkn(&["eval", "okf"], d).status.code(), Some(4));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    generate_smoke(d, "data");
    let o = rkn(&["eval", "nowhere.ckpt"], d);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("nowhere.ckpt"), "{}", stderr(&o));
}

#[test]
fn sweep_reports_two_baselines_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = with_overrides(
        vec!["sweep", "--nu", "20,30,40,50,60"],
        &["dataset.test=20", "dataset.horizon=20"],
    );
    let o = ok(rkn(&args, d));
    let csv = fs::read_to_string(d.join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10);
    assert!(stdout(&o).lines().any(|l| l.starts_with("sokf")));
    assert!(d.join("out/config.toml").exists());

    let o = rkn(&["sweep", "--nu", "--out", "x"], d);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = rkn(&["sweep"], d);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_with_training_adds_rkn_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut args = with_overrides(vec!["sweep", "--nu", "20,40", "--train", "--quiet"], SMOKE);
    args.extend(["--override", "training.epochs=1"]);
    ok(rkn(&args, d));
    let csv = fs::read_to_string(d.join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(d.join("out/rkn_nu20.ckpt").exists() && d.join("out/rkn_nu40.ckpt").exists());

    // Reusing the trained checkpoints reproduces the table.
    let mut reuse = with_overrides(
        vec![
            "sweep",
            "--nu",
            "20,40",
            "--checkpoints",
            "out",
            "--out",
            "again",
        ],
        SMOKE,
    );
    reuse.extend(["--override", "training.epochs=1"]);
    ok(rkn(&reuse, d));
    assert_eq!(fs::read_to_string(d.join("again/sweep.csv")).unwrap(), csv);
}
