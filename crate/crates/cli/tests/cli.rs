use std::path::Path;
use std::process::{Command, Output};

fn awe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_awe")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn tsv_value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap_or_else(|| panic!("no `{key}` in {text}"))
        .to_string()
}

const SMALL: &str = "\
seed = 5
synth.num_word_types = 6
synth.examples_per_type = 5
synth.length_min = 20
synth.length_max = 40
synth.dev_word_types = 4
synth.dev_examples_per_type = 4
cell = gru
hidden_dim = 16
fc_dim = 24
classifier.max_epochs = 3
classifier.batch_size = 8
siamese.embed_dim = 8
siamese.max_epochs = 2
siamese.pairs_per_batch = 8
";

#[test]
fn synth_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), SMALL).unwrap();
    ok(&awe(&["synth", "--config", "run.cfg", "--out", "a"], dir.path()));
    ok(&awe(&["synth", "--config", "run.cfg", "--out", "b"], dir.path()));
    for f in ["train.awe", "dev.awe"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let other = awe(&["synth", "--config", "run.cfg", "--seed", "6", "--out", "c"], dir.path());
    ok(&other);
    assert_ne!(
        std::fs::read(dir.path().join("a/train.awe")).unwrap(),
        std::fs::read(dir.path().join("c/train.awe")).unwrap()
    );
}

#[test]
fn full_pipeline_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("run.cfg"), SMALL).unwrap();
    ok(&awe(&["synth", "--config", "run.cfg", "--out", "data"], p));
    let common = ["--config", "run.cfg", "--train", "data/train.awe", "--dev", "data/dev.awe"];

    let cls = ok(&awe(&[&["train-classifier"][..], &common, &["--out", "cls"]].concat(), p));
    let cls_ap: f64 = tsv_value(&cls, "dev_ap").parse().unwrap();
    let log = std::fs::read_to_string(p.join("cls/classifier.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["dev_ap"].is_number() && v["lr"].is_number());
    }

    let sia = ok(&awe(&[&["train-siamese"][..], &common, &["--warm-start", "cls/classifier.ckpt", "--out", "sia"]].concat(), p));
    let sia_ap: f64 = tsv_value(&sia, "dev_ap").parse().unwrap();
    assert!((0.0..=1.0).contains(&cls_ap) && (0.0..=1.0).contains(&sia_ap));

    let eval = ok(&awe(
        &["eval-ap", "--checkpoint", "sia/siamese.ckpt", "--dev", "data/dev.awe", "--train", "data/train.awe", "--pr-curve", "true", "--out", "eval"],
        p,
    ));
    let ap: f64 = tsv_value(&eval, "ap").parse().unwrap();
    assert!((ap - sia_ap).abs() < 1e-6, "eval {ap} vs training {sia_ap}");
    let buckets = std::fs::read_to_string(p.join("eval/buckets.tsv")).unwrap();
    assert_eq!(buckets.lines().count(), 1 + 7);
    assert!(p.join("eval/pr_curve.tsv").exists());
    let manifest = std::fs::read_to_string(p.join("eval/eval-ap.manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.starts_with("input\t")).count(), 3);

    ok(&awe(&["embed", "--checkpoint", "sia/siamese.ckpt", "--segments", "data/dev.awe", "--out", "emb"], p));
    let tsv = std::fs::read_to_string(p.join("emb/embeddings.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 16);
    assert_eq!(tsv.lines().next().unwrap().split('\t').count(), 1 + 8);
    let from_tsv = ok(&awe(&["eval-ap", "--embeddings", "emb/embeddings.tsv", "--out", "eval2"], p));
    let ap2: f64 = tsv_value(&from_tsv, "ap").parse().unwrap();
    assert!((ap2 - ap).abs() < 1e-6);

    let info = ok(&awe(&["inspect", "--checkpoint", "sia/siamese.ckpt", "--dev", "data/dev.awe"], p));
    assert_eq!(tsv_value(&info, "head"), "linear");
    assert_eq!(tsv_value(&info, "output_dim"), "8");
    assert_eq!(tsv_value(&info, "segments"), "16");
}

#[test]
fn eval_ap_reproduces_hand_value() {
    let dir = tempfile::tempdir().unwrap();
    let rows: String = [(0.0f64, "a"), (10.0, "a"), (25.0, "b"), (45.0, "b")]
        .iter()
        .map(|(deg, l)| format!("{l}\t{}\t{}\n", deg.to_radians().cos(), deg.to_radians().sin()))
        .collect();
    std::fs::write(dir.path().join("hand.tsv"), rows).unwrap();
    let out = ok(&awe(&["eval-ap", "--embeddings", "hand.tsv", "--out", "r"], dir.path()));
    assert_eq!(tsv_value(&out, "ap"), "0.833333");
    let report = std::fs::read_to_string(dir.path().join("r/ap.tsv")).unwrap();
    assert_eq!(tsv_value(&report, "ap").parse::<f64>().unwrap(), 5.0 / 6.0);
    assert_eq!(tsv_value(&report, "num_positive"), "2");
}

#[test]
fn failures_exit_with_class_codes_and_leave_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let bad_key = awe(&["synth", "--out", "x", "--sead", "1"], p);
    assert_eq!(bad_key.status.code(), Some(2));
    let line = String::from_utf8(bad_key.stderr).unwrap();
    let last = line.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(last).unwrap();
    assert_eq!(v["error"], "config");

    std::fs::write(p.join("bad.cfg"), "seed = 1\nunknown_key = 3\n").unwrap();
    assert_eq!(awe(&["synth", "--config", "bad.cfg", "--out", "x"], p).status.code(), Some(2));
    assert_eq!(awe(&["synth", "--out", "x", "--synth.length_min", "-3"], p).status.code(), Some(2));

    std::fs::write(p.join("garbage.awe"), b"AWE1 not really").unwrap();
    let corrupt = awe(&["train-classifier", "--train", "garbage.awe", "--dev", "garbage.awe", "--out", "y"], p);
    assert_eq!(corrupt.status.code(), Some(3));
    assert!(String::from_utf8(corrupt.stderr).unwrap().contains("garbage.awe"));
    assert_eq!(awe(&["inspect", "--checkpoint", "missing.ckpt"], p).status.code(), Some(3));

    std::fs::write(p.join("one.tsv"), "a\t1\t0\nb\t0\t1\n").unwrap();
    assert_eq!(awe(&["eval-ap", "--embeddings", "one.tsv", "--out", "z"], p).status.code(), Some(4));

    for d in ["x", "y", "z"] {
        assert!(!p.join(d).exists(), "{d} left behind");
    }
}

#[test]
fn grad_check_reports_both_losses() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&awe(&["grad-check", "--cell", "gru", "--stacked-layers", "1", "--fc-layers", "1", "--grad_check.step", "1e-5"], dir.path()));
    let rows: Vec<&str> = out.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].contains("cross_entropy") && rows[1].contains("cos_hinge"));
    for r in rows {
        let err: f64 = r.rsplit('\t').next().unwrap().parse().unwrap();
        assert!(err <= 1e-4, "{r}");
    }
    let strict = awe(&["grad-check", "--grad_check.tolerance", "0"], dir.path());
    assert_eq!(strict.status.code(), Some(4));
}

#[test]
fn sweep_tabulates_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("run.cfg"), SMALL).unwrap();
    ok(&awe(&["synth", "--config", "run.cfg", "--out", "data"], p));
    let out = ok(&awe(
        &[
            "sweep", "--config", "run.cfg", "--train", "data/train.awe", "--dev", "data/dev.awe",
            "--sweep.stacked_layers", "1,2", "--sweep.fc_layers", "1,2", "--classifier.max_epochs", "1", "--out", "sw",
        ],
        p,
    ));
    assert_eq!(out.lines().count(), 4);
    let table = std::fs::read_to_string(p.join("sw/sweep.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 4);
    let cells: Vec<(&str, &str)> = rows.iter().map(|r| (r[1], r[2])).collect();
    assert_eq!(cells, [("1", "1"), ("1", "2"), ("2", "1"), ("2", "2")]);
    assert!(rows.iter().all(|r| r[6] == "ok" && r[5].parse::<f64>().is_ok()));
}
