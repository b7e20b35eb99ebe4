use std::path::Path;

use tailcast::cli::{main_with_args, EXIT_PREREQUISITE, EXIT_OK, EXIT_VALIDATION};

fn synth(dir: &Path) -> String {
    let root = dir.to_str().unwrap();
    assert_eq!(main_with_args(["tailcast", "synth", "--out", root]), EXIT_OK);
    format!("{root}/experiment.toml")
}

#[test]
fn backtest_without_topics_is_a_missing_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path());
    assert_eq!(main_with_args(["tailcast", "backtest", "--config", &config]), EXIT_PREREQUISITE);
    assert!(!dir.path().join("out/backtest").exists());
}

#[test]
fn validate_accepts_the_bundled_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path());
    assert_eq!(main_with_args(["tailcast", "validate", "--config", &config]), EXIT_OK);
}

#[test]
fn invalid_configs_exit_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path());
    let text = std::fs::read_to_string(&config).unwrap();
    let cases = [
        text.replacen("seed = ", "unused = ", 1),
        text.replacen("[backtest]", "bogus = 1\n[backtest]", 1),
        text.replace("quantile_grid = [", "quantile_grid = [1.5, "),
    ];
    for (i, bad) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.toml"));
        std::fs::write(&path, bad).unwrap();
        let code = main_with_args(["tailcast", "validate", "--config", path.to_str().unwrap()]);
        assert_eq!(code, EXIT_VALIDATION, "case {i}");
    }
    assert_eq!(main_with_args(["tailcast", "backtest"]), EXIT_VALIDATION);
    assert_eq!(main_with_args(["tailcast", "no-such-verb"]), EXIT_VALIDATION);
}

#[test]
fn missing_panel_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = synth(dir.path());
    std::fs::remove_dir_all(dir.path().join("panel")).unwrap();
    assert_eq!(main_with_args(["tailcast", "validate", "--config", &config]), EXIT_VALIDATION);
}
