use std::path::Path;
use std::process::{Command, Output};

fn comet(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_comet"))
        .args(args)
        .current_dir(dir)
        .env_remove("COMET_SEED")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("c.toml");
    std::fs::write(&path, format!("schema_version = 1\n{body}")).unwrap();
    path.to_str().unwrap().to_string()
}

const TINY: &str = "dim = 4\nn_train = 40\nn_test = 20\nepochs = 2\nflow_layers = 2\nflow_hidden = 4\n";

#[test]
fn unknown_backbone_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = comet(&["--backbone", "foo", "train"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_2_and_names_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "epochs = -1\nkappa = -1.0\n");
    let o = comet(&["train", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("epochs") && err.contains("kappa"), "{err}");
}

#[test]
fn out_of_range_noise_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = comet(&["train", "--noise", "0.9"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn divergence_exits_3_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{TINY}alpha = 50.0\nbeta = 50.0\nmax_grad_norm = 0.0\nepochs = 30\n").replace("epochs = 2\n", ""),
    );
    let o = comet(&["train", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(dir.path().join("out/report.json")).unwrap();
    assert!(report.contains("\"status\": \"diverged\""));
    assert!(!dir.path().join("out/model.json").exists());
}

#[test]
fn missing_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = comet(&["train", "--config", "does-not-exist.toml"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    let o = comet(&["eval", "--model", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn corrupt_dataset_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.cmft"), b"junk").unwrap();
    std::fs::write(dir.path().join("b.cmft"), b"junk").unwrap();
    let cfg = write_config(dir.path(), "train_file = \"a.cmft\"\ntest_file = \"b.cmft\"\n");
    let o = comet(&["train", "--config", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = comet(&["gen", "--config", &cfg, "--out", "data"], dir.path());
    assert!(o.status.success());
    assert!(dir.path().join("data/train.cmft").exists());

    let o = comet(&["train", "--config", &cfg, "--backbone", "sn"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["backbone"], "sn");

    // The saved test split scores exactly as the in-process evaluation did.
    let o = comet(
        &[
            "eval",
            "--model",
            "out/model.json",
            "--data",
            "data/test.cmft",
            "--out",
            "eval",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval/eval.json")).unwrap()).unwrap();
    assert_eq!(eval["i_auroc"], report["eval"]["i_auroc"]);
}

#[test]
fn seed_precedence_flag_over_env_over_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}seed = 7\n"));
    let seed_of = |args: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_comet"));
        cmd.args(args).current_dir(dir.path()).env_remove("COMET_SEED");
        if let Some(v) = env {
            cmd.env("COMET_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
        report["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of(&["train", "--config", &cfg], None), 7);
    assert_eq!(seed_of(&["train", "--config", &cfg], Some("8")), 8);
    assert_eq!(seed_of(&["train", "--config", &cfg, "--seed", "9"], Some("8")), 9);
}
