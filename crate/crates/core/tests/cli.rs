mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use oodgat::experiment::report::parse_curve_csv;
use oodgat::experiment::RunReport;

fn oodgat(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oodgat"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_error(o: &Output, code: &str) {
    assert!(!o.status.success());
    let err = stderr(o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with(&format!("error[{code}]: ")), "{err}");
}

const SBM: &str = r#"
[dataset]
seed = 3

[dataset.sbm]
classes = 4
nodes_per_class = 40
p_intra = 0.12
p_inter = 0.01
feature_dim = 8
class_mean_separation = 1.2
ood_classes = [3]
"#;

#[test]
fn usage_errors_are_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = oodgat(&["fly"], dir.path());
    assert_error(&o, "E_USAGE");
    assert_eq!(o.status.code(), Some(2));
    assert_error(
        &oodgat(&["train-eval", "--workers", "lots"], dir.path()),
        "E_USAGE",
    );
    assert!(oodgat(&["--help"], dir.path()).status.success());
}

#[test]
fn spec_errors_carry_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_error(
        &oodgat(&["train-eval", "--spec", "missing.toml"], dir.path()),
        "E_IO",
    );
    fs::write(dir.path().join("gc.toml"), "name = \"gradcheck\"\n").unwrap();
    assert_error(
        &oodgat(&["train-eval", "--spec", "gc.toml"], dir.path()),
        "E_CONFIG",
    );
    fs::write(
        dir.path().join("typo.toml"),
        "name = \"gradcheck\"\nsplitz = 2\n",
    )
    .unwrap();
    assert_error(
        &oodgat(&["gradcheck", "--spec", "typo.toml"], dir.path()),
        "E_CONFIG",
    );
    assert_error(&oodgat(&["train-eval"], dir.path()), "E_CONFIG");
    fs::write(
        dir.path().join("bad.toml"),
        "name = \"train-eval\"\n[dataset]\nbundle = \"nowhere\"\nood_classes = [0]\n",
    )
    .unwrap();
    assert_error(
        &oodgat(&["train-eval", "--spec", "bad.toml"], dir.path()),
        "E_IO",
    );
}

#[test]
fn gen_sbm_then_train_eval_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("gen.toml"), format!("name = \"gen-sbm\"\n{SBM}")).unwrap();
    let o = oodgat(&["gen-sbm", "--spec", "gen.toml", "--out", "bundle"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("node_homophily"));

    let spec = r#"
name = "train-eval"
splits = 2
seeds_per_split = 2
train_per_class = 5
val_per_class = 5

[dataset]
bundle = "bundle"
ood_classes = [3]

[model]
architecture = "oodgat"
hidden_dim = 8
heads = 2

[train]
max_steps = 40
patience = 20

[train.loss]
beta = 1.0
gamma = 0.05
zeta = 0.005
epsilon = 0.6
"#;
    fs::write(p.join("te.toml"), spec).unwrap();
    let a = oodgat(&["train-eval", "--spec", "te.toml", "--out", "a"], p);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = oodgat(
        &[
            "train-eval",
            "--spec",
            "te.toml",
            "--out",
            "b",
            "--workers",
            "1",
            "--sequential",
        ],
        p,
    );
    assert!(b.status.success(), "{}", stderr(&b));
    for f in ["report.jsonl", "report.csv"] {
        assert_eq!(
            fs::read(p.join("a").join(f)).unwrap(),
            fs::read(p.join("b").join(f)).unwrap(),
            "{f}"
        );
    }

    let report =
        RunReport::from_jsonl(&fs::read_to_string(p.join("a/report.jsonl")).unwrap()).unwrap();
    assert_eq!(report.runs.len(), 4);
    let csv = fs::read_to_string(p.join("a/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 + 1);
    assert_eq!(RunReport::runs_from_csv(&csv).unwrap(), report.runs);

    for run in &report.runs {
        let stem = run.file_stem();
        assert!(p.join(format!("a/history/{stem}.csv")).exists());
        assert!(p.join(format!("a/checkpoints/{stem}.params")).exists());
        let roc = parse_curve_csv(
            &fs::read_to_string(p.join(format!("a/curves/{stem}-roc.csv"))).unwrap(),
        )
        .unwrap();
        for (kind, want) in [("ent", run.ent.auroc), ("att", run.att.unwrap().auroc)] {
            let pts: Vec<(f64, f64)> = roc
                .iter()
                .filter(|r| r.0 == kind)
                .map(|r| (r.3, r.2))
                .collect();
            assert_eq!(pts[0], (0.0, 0.0));
            assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
            assert!((common::trapezoid(&pts) - want).abs() < 1e-6, "{kind}");
        }
    }

    let other = oodgat(
        &[
            "train-eval",
            "--spec",
            "te.toml",
            "--out",
            "c",
            "--seed-base",
            "5",
        ],
        p,
    );
    assert!(other.status.success());
    let moved =
        RunReport::from_jsonl(&fs::read_to_string(p.join("c/report.jsonl")).unwrap()).unwrap();
    assert_eq!(moved.runs[0].seed, 5);
    assert_eq!(moved.runs[0].split_seed, 1005);
}

#[test]
fn checks_pass_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("h.toml"),
        "name = \"homophily-check\"\ngraphs = 60\n",
    )
    .unwrap();
    let o = oodgat(&["homophily-check", "--spec", "h.toml", "--out", "h"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value =
        serde_json::from_slice(&fs::read(p.join("h/homophily.json")).unwrap()).unwrap();
    assert_eq!(json["violations"], 0);
    assert_eq!(json["graphs"], 60);

    let o = oodgat(&["gradcheck", "--out", "g"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(p.join("g/gradcheck.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")), "{csv}");
}
