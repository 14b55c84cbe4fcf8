use std::fs;

use cylscatter::cli::main_with_args;
use cylscatter::config::RunConfig;

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("cylscatter-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

#[test]
fn unknown_command_is_a_usage_error() {
    assert_eq!(main_with_args(["cylscatter", "frobnicate"]), 2);
    assert_eq!(main_with_args(["cylscatter"]), 2);
    assert_eq!(main_with_args(["cylscatter", "--config", "/nonexistent/run.toml", "spectrum"]), 2);
}

#[test]
fn version_prints_without_running() {
    assert_eq!(main_with_args(["cylscatter", "--version"]), 0);
}

#[test]
fn spectrum_artifacts_carry_the_config_hash() {
    let dir = scratch("spectrum");
    let cfg = RunConfig { seed: 11, ..RunConfig::default() };
    let config = dir.with_extension("toml");
    fs::write(&config, cfg.to_toml()).unwrap();
    let code = main_with_args(["cylscatter", "spectrum", "--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code, 0);
    for name in ["spectrum.csv", "mesh.csv"] {
        let text = fs::read_to_string(dir.join(name)).unwrap();
        assert_eq!(text.lines().next().unwrap(), format!("# config_hash={}", cfg.hash()));
    }
    let seeded = main_with_args(["cylscatter", "spectrum", "--seed", "12", "--out", dir.to_str().unwrap()]);
    assert_eq!(seeded, 0);
    let text = fs::read_to_string(dir.join("spectrum.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), format!("# config_hash={}", RunConfig { seed: 12, ..RunConfig::default() }.hash()));
    fs::remove_dir_all(&dir).unwrap();
    fs::remove_file(config).unwrap();
}

#[test]
fn smatrix_summary_is_json_with_defects() {
    let dir = scratch("smatrix");
    assert_eq!(main_with_args(["cylscatter", "smatrix", "--out", dir.to_str().unwrap()]), 0);
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("smatrix_summary.json")).unwrap()).unwrap();
    assert_eq!(doc["kind"], "smatrix_summary");
    for row in doc["data"].as_array().unwrap() {
        assert!(row["unitarity_defect"].as_f64().unwrap() < 1e-8);
    }
    fs::remove_dir_all(&dir).unwrap();
}
