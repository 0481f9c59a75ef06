use std::path::Path;
use std::process::{Command, Output};

fn vgpmil(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vgpmil"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

const FAST: [&str; 6] = ["--inducing", "15", "--max-epochs", "8", "--samples", "100"];

#[test]
fn gen_train_predict_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&vgpmil(&["gen", "--out", "bags.csv", "--bags", "24", "--seed", "4"], d));

    let mut train = vec!["train", "--data", "bags.csv", "--model", "m.json", "--log", "train.log", "--seed", "1"];
    train.extend(FAST);
    let out = vgpmil(&train, d);
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().next().unwrap().starts_with("epoch=1 elbo="));
    let log = std::fs::read_to_string(d.join("train.log")).unwrap();
    assert_eq!(log, stdout);

    ok(&vgpmil(&["predict", "--model", "m.json", "--data", "bags.csv", "--out", "p.csv", "--samples", "50"], d));
    let csv = std::fs::read_to_string(d.join("p.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("row,bag_id,instance,prob,std"));
    // one bag row plus ten instance rows per bag
    assert_eq!(lines.count(), 24 * 11);

    let out = vgpmil(&["eval", "--model", "m.json", "--data", "bags.csv", "--samples", "50"], d);
    ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let auc = report["bag"]["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
    assert!(report["instance"]["auc"].is_number());
}

#[test]
fn same_seed_gives_identical_model_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&vgpmil(&["gen", "--out", "bags.csv", "--bags", "16", "--seed", "2"], d));
    for name in ["a.json", "b.json"] {
        let mut args = vec!["train", "--data", "bags.csv", "--model", name, "--psi", "gamma", "--seed", "7"];
        args.extend(FAST);
        ok(&vgpmil(&args, d));
    }
    let a = std::fs::read(d.join("a.json")).unwrap();
    let b = std::fs::read(d.join("b.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn singleton_bags_are_predicted() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&vgpmil(&["gen", "--out", "bags.csv", "--bags", "20", "--bag-size", "1", "--max-positives", "1", "--seed", "3"], d));
    let mut train = vec!["train", "--data", "bags.csv", "--model", "m.json"];
    train.extend(FAST);
    ok(&vgpmil(&train, d));
    ok(&vgpmil(&["predict", "--model", "m.json", "--data", "bags.csv", "--out", "p.csv", "--samples", "50"], d));
    let csv = std::fs::read_to_string(d.join("p.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 20 * 2);
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&vgpmil(&["gen", "--out", "bags.csv", "--bags", "12"], d));
    std::fs::write(d.join("run.conf"), "# comment\ninducing = 500\nmax-epochs = 3\nsamples = 20\n").unwrap();
    let out = vgpmil(
        &["train", "--config", "run.conf", "--data", "bags.csv", "--model", "m.json", "--max-epochs", "2"],
        d,
    );
    ok(&out);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = vgpmil(&["train", "--data", "missing.csv"], d);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!missing.stderr.is_empty());

    std::fs::write(d.join("bad.csv"), "bag_id,bag_label,x0\nb,1,notanumber\n").unwrap();
    assert_eq!(vgpmil(&["train", "--data", "bad.csv"], d).status.code(), Some(2));

    std::fs::write(d.join("m.json"), "{\"format_version\": 99}").unwrap();
    ok(&vgpmil(&["gen", "--out", "bags.csv", "--bags", "4"], d));
    assert_eq!(vgpmil(&["predict", "--model", "m.json", "--data", "bags.csv"], d).status.code(), Some(2));

    let bad_flag = vgpmil(&["train", "--data", "bags.csv", "--psi", "laplace"], d);
    assert_ne!(bad_flag.status.code(), Some(0));
}

#[test]
fn bench_writes_one_row_per_cell_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&vgpmil(&["gen", "--out", "bags.csv", "--bags", "20"], d));
    let out = vgpmil(
        &[
            "bench",
            "--data",
            "bags.csv",
            "--out",
            "bench.csv",
            "--summary",
            "summary.csv",
            "--splits",
            "2",
            "--inducing-grid",
            "8,12",
            "--psi-grid",
            "hs,gamma",
            "--alpha-grid",
            "1.0",
            "--beta-grid",
            "2.5",
            "--max-epochs",
            "4",
            "--samples",
            "50",
            "--threads",
            "2",
        ],
        d,
    );
    ok(&out);
    let table = std::fs::read_to_string(d.join("bench.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    // (2 inducing counts) x (hs + one gamma cell) x 2 splits
    assert_eq!(rows.len(), 8);
    assert_eq!(rows.iter().filter(|r| r.starts_with("hs,")).count(), 4);
    let summary = std::fs::read_to_string(d.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4);
}
