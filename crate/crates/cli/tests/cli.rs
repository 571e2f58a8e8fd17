use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use phaselab::data::{read_dataset, write_dataset, SequenceRecord};
use phaselab::evalreport::read_summary_tsv;

fn phaselab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phaselab"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = phaselab(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn small_dataset(dir: &Path, name: &str, seed: &str) {
    ok(
        &["gen-data", "--out", name, "--n", "120", "--len-min", "20", "--len-max", "30", "--feature-dim", "8", "--seed", seed],
        dir,
    );
}

fn tiny_config(dir: &Path) {
    fs::write(dir.join("tiny.cfg"), "preset = desk\n*.epochs = 1\nlstm_state = 6\nbilstm_state = 4\n").unwrap();
}

#[test]
fn help_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["--help"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["gen-data", "split", "train", "annotate", "distill", "grid", "evaluate", "report"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "a", "4");
    small_dataset(dir.path(), "b", "4");
    let (a, b) = (read_dataset(&dir.path().join("a")).unwrap(), read_dataset(&dir.path().join("b")).unwrap());
    assert_eq!(a.len(), 120);
    assert_eq!(a, b);
    assert_eq!(
        fs::read(dir.path().join("a/manifest.tsv")).unwrap(),
        fs::read(dir.path().join("b/manifest.tsv")).unwrap()
    );
}

#[test]
fn usage_error_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(phaselab(&["train", "--variant", "m9"], dir.path()).status.code(), Some(2));
    assert_eq!(phaselab(&["no-such-command"], dir.path()).status.code(), Some(2));
}

#[test]
fn training_on_unlabeled_records_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "ds", "1");
    let records = read_dataset(&dir.path().join("ds")).unwrap();
    let bare: Vec<SequenceRecord> = records.iter().take(4).map(SequenceRecord::unlabeled).collect();
    write_dataset(&bare, &dir.path().join("bare")).unwrap();
    let ids: String = bare.iter().map(|r| format!("{}\n", r.id)).collect();
    fs::write(dir.path().join("ids.txt"), ids).unwrap();
    let out = phaselab(
        &["train", "--dataset", "bare", "--variant", "m3", "--train-ids-file", "ids.txt", "--out", "m", "--epochs", "1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: "), "{stderr}");
    assert!(!dir.path().join("m/model.ckpt").exists());
}

#[test]
fn split_train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "ds", "2");
    tiny_config(dir.path());
    ok(&["split", "--dataset", "ds", "--out", "sp", "--sizes", "3", "--repeats", "2"], dir.path());
    for f in ["split.tsv", "test_ids.txt", "val_ids.txt", "pool_ids.txt", "mini_3_0.txt", "mini_3_1.txt"] {
        assert!(dir.path().join("sp").join(f).exists(), "{f}");
    }
    ok(
        &[
            "train", "--dataset", "ds", "--variant", "m5", "--train-ids-file", "sp/mini_3_0.txt", "--val-ids-file",
            "sp/val_ids.txt", "--out", "m5", "--config", "tiny.cfg",
        ],
        dir.path(),
    );
    ok(&["annotate", "--teacher", "m5/model.ckpt", "--dataset", "ds", "--ids-file", "sp/pool_ids.txt", "--out", "syn"], dir.path());
    assert_eq!(read_dataset(&dir.path().join("syn")).unwrap().len(), 80);
    ok(&["evaluate", "--model", "m5/model.ckpt", "--dataset", "ds", "--ids-file", "sp/test_ids.txt", "--out", "ev"], dir.path());
    let metrics = fs::read_to_string(dir.path().join("ev/metrics.tsv")).unwrap();
    assert!(metrics.lines().any(|l| l.starts_with("m5\tf1\tall\t")), "{metrics}");
}

#[test]
fn grid_and_report_produce_all_rows() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset(dir.path(), "ds", "3");
    tiny_config(dir.path());
    ok(
        &["grid", "--dataset", "ds", "--sizes", "3,20", "--repeats", "3", "--workers", "2", "--out", "g", "--config", "tiny.cfg"],
        dir.path(),
    );
    let summary = read_summary_tsv(&dir.path().join("g/summary.tsv")).unwrap();
    assert_eq!(summary.len(), 2 * 8 * 4);
    assert!(summary.iter().all(|r| r.repeats == 3));
    ok(&["report", "--summary", "g/summary.tsv", "--out", "rep"], dir.path());
    let tables = fs::read_to_string(dir.path().join("rep/tables.md")).unwrap();
    assert!(tables.contains("selflearn"));
    assert!(fs::read_to_string(dir.path().join("rep/curves.svg")).unwrap().starts_with("<svg"));
}
