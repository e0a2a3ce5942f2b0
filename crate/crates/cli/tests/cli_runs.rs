use std::path::Path;
use std::process::{Command, Output};

fn selfdense(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_selfdense")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: &[&str] = &[
    "--desk",
    "--manifest",
    "data/manifest.csv",
    "--set",
    "model.image_size=32",
    "--set",
    "train.max_epochs=1",
    "--set",
    "data.folds=3",
    "--set",
    "stack.trees=10",
    "--threads",
    "1",
];

#[test]
fn stages_run_in_order_and_fail_fast() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = selfdense(d, &["synth", "--n", "30", "--size", "32", "--seed", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = selfdense(d, &[&["table"], SMALL].concat());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("foldplan"));

    for stage in ["enhance", "split", "train", "predict", "table", "stack", "eval"] {
        let o = selfdense(d, &[&[stage], SMALL].concat());
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(d.join("work/reports/stack.csv").is_file());

    let o = selfdense(d, &[&["cam", "--variant", "chan3"], SMALL].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 4);

    let o = selfdense(d, &[&["bench", "--runs", "100"], SMALL].concat());
    assert!(o.status.success());
    let line = stdout(&o);
    assert!(line.contains(" ± ") && line.contains("ms (100 runs)"), "{line}");
}

#[test]
fn unknown_flag_and_bad_config_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = selfdense(dir.path(), &["split", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let o = selfdense(dir.path(), &["split", "--set", "model.colour=2"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.colour"));

    std::fs::write(dir.path().join("run.cfg"), "seed=1\ntrain.lr=fast\n").unwrap();
    let o = selfdense(dir.path(), &["split", "--config", "run.cfg"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.lr"));
}

#[test]
fn eval_on_figure_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("id,pred,label\n");
    for (n, pred, label) in [(1119, 1, 1), (3728, 0, 0), (20, 1, 0), (15, 0, 1)] {
        for i in 0..n {
            text.push_str(&format!("r{pred}{label}_{i},{pred},{label}\n"));
        }
    }
    std::fs::write(dir.path().join("fig.csv"), text).unwrap();
    let o = selfdense(dir.path(), &["eval", "--predictions", "fig.csv"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("overall accuracy 99.28%"));
}
