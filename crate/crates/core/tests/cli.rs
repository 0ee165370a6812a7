use std::path::Path;
use std::process::{Command, Output};

use decentrl::checkpoint::{self, Model};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decentrl"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bin(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn data(dir: &Path) {
    ok(
        dir,
        &["synth", "--seed", "2", "--out", "d", "--set", "entities=40"],
    );
    std::fs::write(
        dir.join("align.conf"),
        "# toy run\nkg1 = d/kg1.tsv\nkg2 = d/kg2.tsv\ntrain_pairs = d/train_pairs.tsv\n\
         valid_pairs = d/valid_pairs.tsv\ntest_pairs = d/test_pairs.tsv\ndim = 8\nlayers = 2\n",
    )
    .unwrap();
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn history_has_one_row_per_epoch() {
    let t = tempfile::tempdir().unwrap();
    data(t.path());
    ok(
        t.path(),
        &[
            "train-align",
            "--config",
            "align.conf",
            "--set",
            "epochs=4",
            "--set",
            "patience=100",
            "--out",
            "m",
        ],
    );
    let rows = csv_rows(&t.path().join("m/history.csv"));
    let epochs: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(epochs, ["1", "2", "3", "4"]);
    let resolved = std::fs::read_to_string(t.path().join("m/config.txt")).unwrap();
    assert!(resolved.contains("epochs = 4"));
    assert!(resolved.contains("dim = 8"));
}

#[test]
fn flags_override_config_file() {
    let t = tempfile::tempdir().unwrap();
    data(t.path());
    ok(
        t.path(),
        &[
            "train-align",
            "--config",
            "align.conf",
            "--set",
            "epochs=0",
            "--layers",
            "3",
            "--mode",
            "gat",
            "--out",
            "m",
        ],
    );
    let Model::Align(m) = checkpoint::load(t.path().join("m/model.ckpt")).unwrap() else {
        panic!("expected an alignment checkpoint");
    };
    assert_eq!(m.encoder.num_layers(), 3);
    assert_eq!(m.mode.to_string(), "gat");
}

#[test]
fn zero_epoch_checkpoint_evaluates() {
    let t = tempfile::tempdir().unwrap();
    data(t.path());
    ok(
        t.path(),
        &[
            "train-align",
            "--config",
            "align.conf",
            "--set",
            "epochs=0",
            "--out",
            "m",
        ],
    );
    ok(t.path(), &["eval", "--checkpoint", "m/model.ckpt"]);
    let report = csv_rows(&t.path().join("m/report.csv"));
    assert!(report.iter().any(|r| r[0] == "hits@1"));
}

#[test]
fn per_layer_report_has_every_layer_and_concat() {
    let t = tempfile::tempdir().unwrap();
    data(t.path());
    ok(
        t.path(),
        &[
            "train-align",
            "--config",
            "align.conf",
            "--set",
            "epochs=1",
            "--out",
            "m",
        ],
    );
    ok(
        t.path(),
        &["eval", "--checkpoint", "m/model.ckpt", "--per-layer"],
    );
    let rows = csv_rows(&t.path().join("m/per_layer.csv"));
    let h1: Vec<&str> = rows
        .iter()
        .map(|r| r[0].as_str())
        .filter(|m| m.ends_with(".hits@1") && !m.contains("ward"))
        .collect();
    assert_eq!(
        h1,
        [
            "layer-1.hits@1",
            "layer0.hits@1",
            "layer1.hits@1",
            "layer2.hits@1",
            "concat.hits@1"
        ]
    );
}

#[test]
fn prediction_pipeline_runs() {
    let t = tempfile::tempdir().unwrap();
    data(t.path());
    ok(
        t.path(),
        &[
            "train-predict",
            "--set",
            "train=d/kg1.tsv",
            "--set",
            "test=d/kg1.tsv",
            "--set",
            "epochs=1",
            "--dim",
            "8",
            "--layers",
            "1",
            "--distill",
            "infonce",
            "--out",
            "p",
        ],
    );
    assert!(matches!(
        checkpoint::load(t.path().join("p/model.ckpt")).unwrap(),
        Model::Predict(_)
    ));
    ok(t.path(), &["eval", "--checkpoint", "p/model.ckpt"]);
    // Per-layer evaluation is alignment only.
    let out = bin(
        t.path(),
        &["eval", "--checkpoint", "p/model.ckpt", "--per-layer"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn errors_exit_nonzero() {
    let t = tempfile::tempdir().unwrap();
    let missing = bin(t.path(), &["eval", "--checkpoint", "nowhere/model.ckpt"]);
    assert_eq!(missing.status.code(), Some(2));
    let unknown = bin(t.path(), &["train-align", "--set", "bogus=1"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("bogus"));
    std::fs::write(t.path().join("bad.conf"), "dim = eight\n").unwrap();
    let bad = bin(t.path(), &["train-align", "--config", "bad.conf"]);
    assert_eq!(bad.status.code(), Some(2));
    let no_data = bin(t.path(), &["train-align"]);
    assert_eq!(no_data.status.code(), Some(2));
}

#[test]
fn gradcheck_writes_table() {
    let t = tempfile::tempdir().unwrap();
    let stdout = ok(t.path(), &["gradcheck", "--out", "g"]);
    assert!(stdout.contains("dan+auto"));
    let rows = csv_rows(&t.path().join("g/gradcheck.csv"));
    assert!(rows.len() >= 30);
    assert!(rows.iter().all(|r| r.last().unwrap() == "pass"));
}

#[test]
fn split_writes_disjoint_pools() {
    let t = tempfile::tempdir().unwrap();
    data(t.path());
    ok(
        t.path(),
        &[
            "split",
            "--out",
            "s",
            "--set",
            "kg1=d/kg1.tsv",
            "--set",
            "kg2=d/kg2.tsv",
            "--set",
            "test_entities=d/test_pairs.tsv",
        ],
    );
    let open: Vec<String> = std::fs::read_to_string(t.path().join("s/kg1_open.txt"))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    assert!(!open.is_empty());
    let train = std::fs::read_to_string(t.path().join("s/kg1_train.tsv")).unwrap();
    for line in train.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        assert!(!open.iter().any(|e| e == f[0] || e == f[2]), "{line}");
    }
    let stats = csv_rows(&t.path().join("s/stats.csv"));
    let pools: Vec<(&str, &str)> = stats
        .iter()
        .map(|r| (r[0].as_str(), r[1].as_str()))
        .collect();
    assert_eq!(
        pools,
        [
            ("kg1", "train"),
            ("kg1", "test"),
            ("kg2", "train"),
            ("kg2", "test")
        ]
    );
}
