use std::path::Path;
use std::process::{Command, Output};

use vidbench::synthetic::{generate_dataset, SyntheticOptions};

fn vidbench(args: &[&str], data_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vidbench"));
    cmd.args(args).env_remove("VIDBENCH_DATA_ROOT").env("RUST_LOG", "warn");
    if let Some(root) = data_root {
        cmd.env("VIDBENCH_DATA_ROOT", root);
    }
    cmd.output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn dataset(dir: &Path) {
    let opts = SyntheticOptions { frames: 20, width: 32, height: 24, ..SyntheticOptions::default() };
    generate_dataset(dir, 20, &opts).unwrap();
}

#[test]
fn help_documents_every_flag_and_subcommand() {
    let o = vidbench(&["--help"], None);
    assert!(o.status.success());
    let help = text(&o);
    for word in [
        "--config", "--seed", "--data-root", "--family", "--split", "--out", "prepare", "split", "tune", "train",
        "evaluate", "ablate", "report", "VIDBENCH_DATA_ROOT",
    ] {
        assert!(help.contains(word), "missing {word}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(vidbench(&["train", "--bogus"], None).status.code(), Some(2));
    assert_eq!(vidbench(&["frobnicate"], None).status.code(), Some(2));
    assert_eq!(vidbench(&["train", "--family", "resnet"], None).status.code(), Some(2));
    assert_eq!(vidbench(&[], None).status.code(), Some(2));
}

#[test]
fn stage_failures_exit_1() {
    let o = vidbench(&["split"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("VIDBENCH_DATA_ROOT"), "{}", text(&o));

    let tmp = tempfile::tempdir().unwrap();
    dataset(tmp.path());
    let out = tmp.path().join("runs");
    let o = vidbench(&["split", "--out", out.to_str().unwrap()], Some(tmp.path()));
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("2000"), "{}", text(&o));
}

#[test]
fn split_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    dataset(&data);
    let mut seen = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        let o = vidbench(
            &["split", "--seed", "7", "--allow-split-scaling", "--data-root", data.to_str().unwrap(), "--out", out.to_str().unwrap()],
            None,
        );
        assert!(o.status.success(), "{}", text(&o));
        seen.push([
            std::fs::read(out.join("splits/fraction.json")).unwrap(),
            std::fs::read(out.join("splits/full.json")).unwrap(),
        ]);
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn train_evaluate_ablate_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    dataset(&data);
    let out = tmp.path().join("runs");
    let out_s = out.to_str().unwrap();
    let common = ["--family", "cnn3d", "--epochs", "1", "--allow-split-scaling", "--out", out_s];
    let with = |cmd: &str, split: &str| {
        let mut v = vec![cmd, "--split", split];
        v.extend_from_slice(&common);
        vidbench(&v, Some(&data))
    };

    let o = vidbench(&["prepare", "--out", out_s], Some(&data));
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("40 of 40"));

    let o = with("train", "fraction");
    assert!(o.status.success(), "{}", text(&o));
    let cell = out.join("cnn3d/fraction");
    for f in ["config.json", "history.csv", "checkpoints/epoch_1/weights.safetensors"] {
        assert!(cell.join(f).is_file(), "{f}");
    }
    let o = with("evaluate", "fraction");
    assert!(o.status.success(), "{}", text(&o));
    assert!(cell.join("metrics.json").is_file());

    // only one of the two splits exists yet
    let o = vidbench(&["ablate", "--family", "cnn3d", "--out", out_s], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o).contains("cnn3d / full"), "{}", text(&o));

    for cmd in ["train", "evaluate"] {
        let o = with(cmd, "full");
        assert!(o.status.success(), "{}", text(&o));
    }
    let o = vidbench(&["ablate", "--out", out_s], None);
    assert!(o.status.success(), "{}", text(&o));
    assert!(out.join("ablation_summary.json").is_file() && out.join("ablation.svg").is_file());

    let o = vidbench(&["report", "--out", out_s], None);
    assert!(o.status.success());
    let table = text(&o);
    assert!(table.contains("fraction") && table.contains("full") && table.contains("cnn3d"), "{table}");
}
