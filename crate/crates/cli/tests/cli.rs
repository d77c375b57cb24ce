use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn slingq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slingq"))
        .args(args)
        .current_dir(root())
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn tabular_harness_converges() {
    let text = stdout(&slingq(&["tabular"]));
    assert!(text.starts_with("state,action,q,q_star\n"));
    assert!(text.contains("# converged after"), "{}", text);
}

#[test]
fn oracle_lists_every_angle() {
    let text = stdout(&slingq(&["play-oracle", "levels/train", "--id", "train-01"]));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "angle,score_delta");
    assert_eq!(lines.len(), 1 + 91 + 1);
    assert!(lines[92].starts_with("# greedy sequence") && lines[92].ends_with("won true"));

    let missing = slingq(&["play-oracle", "levels/train"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn generated_packs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let text = stdout(&slingq(&["generate-levels", "--out", p(dir), "--count", "3", "--seed", "9"]));
        assert!(text.starts_with("wrote 3 levels"));
    }
    for i in 1..=3 {
        let name = format!("level-{:02}.lvl", i);
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn bad_config_exits_with_config_status() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "seed = 1\nunknown_knob = 3\n").unwrap();
    let out = slingq(&["train", "--config", p(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_knob"));

    let out = slingq(&["train", "--batch-size", "0", "--output", p(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn collect_train_evaluate_histogram_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let text = stdout(&slingq(&[
        "collect", "--episodes", "8", "--out", p(&data), "--verify", "--seed", "3",
    ]));
    assert!(text.contains("8 episodes") && text.contains("verified"), "{}", text);

    let run = tmp.path().join("run");
    let small = [
        "--output", p(&run), "--widths", "2,4,4,8", "--total-steps", "120", "--eval-every", "60", "--warmup", "32",
        "--preload", p(&data),
    ];
    let text = stdout(&slingq(&[&["train"], &small[..]].concat()));
    assert!(text.starts_with("trained to env step"));

    let csv = tmp.path().join("eval.csv");
    let args = ["evaluate", "--checkpoint", p(&run), "--levels", "levels/train", "--csv", p(&csv)];
    let first = stdout(&slingq(&args));
    assert_eq!(first, stdout(&slingq(&args)));
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 21 + 2);

    let hist = stdout(&slingq(&["histogram", "--dataset", p(&data)]));
    assert_eq!(hist.lines().count(), 92);
    let matrix = stdout(&slingq(&["histogram", "--run-dir", p(&run)]));
    let rows: Vec<&str> = matrix.lines().collect();
    assert!(rows[0].starts_with("step,a0,") && rows.len() >= 3);
    for row in &rows[1..] {
        let total: u64 = row.split(',').skip(1).map(|v| v.parse::<u64>().unwrap()).sum();
        assert_eq!(total, 21);
    }

    // A second start into the same directory is refused; resuming works.
    let again = slingq(&[&["train"], &small[..]].concat());
    assert_eq!(again.status.code(), Some(2));
    let resumed = stdout(&slingq(&[&["train", "--resume", "latest"], &small[..]].concat()));
    assert!(resumed.starts_with("trained to env step"));
}
