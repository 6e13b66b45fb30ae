use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use arcg_loop::forest::{deserialize_model, evaluate, Dataset};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arcg-loop"))
        .args(args)
        .output()
        .expect("spawn arcg-loop")
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn accuracy_line(stdout: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix("accuracy="))
        .expect("accuracy line")
        .parse()
        .unwrap()
}

#[test]
fn single_class_tree_is_one_leaf_and_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let (pcap, labels, csv, model) = (
        dir.path().join("ar.pcap"),
        dir.path().join("ar.csv"),
        dir.path().join("ar_features.csv"),
        dir.path().join("ar.posm"),
    );
    ok(&["synth", "--profile", "ar", "--flows", "2", "--duration", "5", "--seed", "4", "--out", s(&pcap), "--labels", s(&labels)]);
    ok(&["extract", "--pcap", s(&pcap), "--labels", s(&labels), "--out", s(&csv)]);
    let out = ok(&["train", "--data", s(&csv), "--kind", "dt", "--out", s(&model)]);
    assert!(out.contains("(1 nodes)"), "{out}");
    let out = ok(&["eval", "--model", s(&model), "--pcap", s(&pcap), "--labels", s(&labels)]);
    assert_eq!(accuracy_line(&out), 1.0);
}

#[test]
fn eval_matches_library_on_holdout_capture() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&["synth", "--profile", "mixed", "--flows", "9", "--duration", "20", "--seed", "1", "--out", s(&p("train.pcap")), "--labels", s(&p("train.csv"))]);
    ok(&["synth", "--profile", "mixed", "--flows", "9", "--duration", "20", "--seed", "2", "--out", s(&p("test.pcap")), "--labels", s(&p("test.csv"))]);
    ok(&["extract", "--pcap", s(&p("train.pcap")), "--labels", s(&p("train.csv")), "--out", s(&p("train_f.csv"))]);
    ok(&["extract", "--pcap", s(&p("test.pcap")), "--labels", s(&p("test.csv")), "--out", s(&p("test_f.csv"))]);
    ok(&["train", "--data", s(&p("train_f.csv")), "--kind", "rf", "--n-trees", "10", "--seed", "8", "--out", s(&p("m.posm"))]);
    let out = ok(&["eval", "--model", s(&p("m.posm")), "--pcap", s(&p("test.pcap")), "--labels", s(&p("test.csv"))]);

    let (model, version) = deserialize_model(&fs::read(p("m.posm")).unwrap()).unwrap();
    assert_eq!(version, 1);
    let holdout = Dataset::read_labeled_csv(fs::File::open(p("test_f.csv")).unwrap()).unwrap();
    let lib = evaluate(&model, holdout.iter()).unwrap();
    let printed = accuracy_line(&out);
    assert!((printed - lib.accuracy).abs() < 5e-7, "cli {printed} vs library {}", lib.accuracy);
    assert!(printed > 0.95, "{printed}");
}

#[test]
fn run_from_config_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let ini = dir.path().join("run.ini");
    fs::write(
        &ini,
        "[run]\nseed = 5\n\n[synthetic]\nflows = 6\nduration_s = 30\n\n[model]\nn_trees = 5\n\n\
         [report]\ntext = out/report.txt\nkv = out/report.kv\ndecisions = out/decisions.csv\nmisroutes = out/misroutes.csv\n",
    )
    .unwrap();
    let out = ok(&["run", "--config", s(&ini)]);
    assert!(out.contains("conservation"), "{out}");
    let kv = fs::read_to_string(dir.path().join("out/report.kv")).unwrap();
    assert!(kv.lines().any(|l| l == "conservation=ok"), "{kv}");
    assert_eq!(fs::read_to_string(dir.path().join("out/report.txt")).unwrap(), out);
    let decisions = fs::read_to_string(dir.path().join("out/decisions.csv")).unwrap();
    assert!(decisions.starts_with("src_ip,src_port,dst_ip,dst_port,proto,window_index,label,confidence,model_version,decided_at_us\n"));
    assert!(decisions.lines().count() > 1);
    assert!(dir.path().join("out/misroutes.csv").exists());
}

#[test]
fn errors_are_one_line_and_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.pcap");
    for args in [
        vec!["eval", "--model", "m.posm", "--pcap", s(&missing), "--labels", "l.csv"],
        vec!["bench", "--pcap", s(&missing)],
        vec!["run", "--config", "/does/not/exist.ini"],
    ] {
        let out = cli(&args);
        assert!(!out.status.success(), "{args:?}");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error: "), "{err}");
    }
    let out = cli(&["bench", "--pcap", s(&missing)]);
    assert!(String::from_utf8(out.stderr).unwrap().contains("nope.pcap"));

    let out = cli(&["synth", "--profile", "video"]);
    assert_eq!(out.status.code(), Some(2));
}
