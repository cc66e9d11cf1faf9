use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[data.synth]
n_queries = 12
items_per_query = 10
dim = 3
n_groups = 2
bias_strength = 1.0
seed = 4

[train]
epochs = 5

[fair]
loops = 3
"#;

fn fairpair(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fairpair"));
    cmd.args(args).env_remove("FAIRPAIR_OUT");
    if let Some(dir) = env_out {
        cmd.env("FAIRPAIR_OUT", dir);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn full_workflow_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let out_s = out.to_string_lossy().into_owned();

    for cmd in ["generate", "train", "sweep", "evaluate"] {
        let o = fairpair(&[cmd, "--config", &cfg, "--out", &out_s], None);
        assert!(
            o.status.success(),
            "{cmd}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    for file in [
        "dataset.csv",
        "truth.csv",
        "model.txt",
        "history.csv",
        "coefficients.csv",
        "report_train.json",
        "report_valid.json",
        "report_test.json",
        "sweep.csv",
        "evaluation.json",
    ] {
        assert!(out.join(file).is_file(), "missing {file}");
    }
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let run = |dir: &Path, extra: &[&str]| {
        let d = dir.to_string_lossy().into_owned();
        let mut args = vec!["train", "--config", &cfg, "--out", &d];
        args.extend_from_slice(extra);
        let o = fairpair(&args, None);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    run(&a, &["--method", "unconstrained"]);
    run(&b, &["--method", "pairwise", "--T", "0"]);
    assert_eq!(
        fs::read(a.join("model.txt")).unwrap(),
        fs::read(b.join("model.txt")).unwrap()
    );
    assert_eq!(
        fs::read(a.join("history.csv")).unwrap(),
        fs::read(b.join("history.csv")).unwrap()
    );

    let c = tmp.path().join("c");
    run(&c, &["--constraint", "inter", "--seed", "9", "--T", "1"]);
    let report = fs::read_to_string(c.join("report_test.json")).unwrap();
    assert!(report.contains("\"constraint_kind\": \"inter\""));
    assert_eq!(
        fs::read_to_string(c.join("history.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}

#[test]
fn env_var_sets_output_dir_below_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let env_dir = tmp.path().join("env");
    let o = fairpair(&["generate", "--config", &cfg], Some(&env_dir));
    assert!(o.status.success());
    assert!(env_dir.join("dataset.csv").is_file());

    let flag_dir = tmp.path().join("flag");
    let f = flag_dir.to_string_lossy().into_owned();
    let o = fairpair(&["generate", "--config", &cfg, "--out", &f], Some(&env_dir));
    assert!(o.status.success());
    assert!(flag_dir.join("dataset.csv").is_file());
}

#[test]
fn config_out_dir_is_relative_to_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("out_dir = \"results\"\n{SMALL}"));
    let o = fairpair(&["generate", "--config", &cfg], None);
    assert!(o.status.success());
    assert!(tmp.path().join("results/dataset.csv").is_file());
}

#[test]
fn exit_codes_follow_error_classes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out").to_string_lossy().into_owned();

    // Missing config file: I/O.
    let missing = tmp.path().join("nope.toml").to_string_lossy().into_owned();
    assert_eq!(
        fairpair(&["train", "--config", &missing], None)
            .status
            .code(),
        Some(2)
    );

    // Malformed config: validation.
    let bad = write_config(tmp.path(), "constraint = \"sideways\"\n[data.synth]\n");
    assert_eq!(
        fairpair(&["train", "--config", &bad], None).status.code(),
        Some(1)
    );

    // Sweep before any coefficients exist: validation.
    let cfg = write_config(tmp.path(), SMALL);
    let o = fairpair(&["sweep", "--config", &cfg, "--out", &out], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("coefficients"));

    // Zero items per query: validation.
    let empty = write_config(
        tmp.path(),
        &SMALL.replace("items_per_query = 10", "items_per_query = 0"),
    );
    assert_eq!(
        fairpair(&["generate", "--config", &empty, "--out", &out], None)
            .status
            .code(),
        Some(1)
    );

    // Unknown flag value: usage errors count as validation.
    let o = fairpair(&["train", "--config", &cfg, "--method", "magic"], None);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(fairpair(&["--help"], None).status.code(), Some(0));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    for dir in ["r1", "r2"] {
        let d = tmp.path().join(dir).to_string_lossy().into_owned();
        for cmd in ["train", "sweep"] {
            assert!(fairpair(&[cmd, "--config", &cfg, "--out", &d], None)
                .status
                .success());
        }
    }
    for file in ["model.txt", "history.csv", "coefficients.csv", "sweep.csv"] {
        assert_eq!(
            fs::read(tmp.path().join("r1").join(file)).unwrap(),
            fs::read(tmp.path().join("r2").join(file)).unwrap(),
            "{file}"
        );
    }
}
