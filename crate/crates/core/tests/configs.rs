//! Every shipped example config parses and runs with the expected exit status.

use std::path::PathBuf;

use bmo_core::experiment::{run, ExperimentConfig, RunOptions, EXIT_OK, EXIT_VIOLATION};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn example_configs_run() {
    let mut names: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    names.sort();
    assert!(names.len() >= 5);
    for path in names {
        let cfg = ExperimentConfig::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let out = run(
            &cfg,
            &RunOptions {
                base_dir: Some(configs_dir()),
                ..Default::default()
            },
        )
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let name = path.file_name().unwrap().to_string_lossy();
        let expected = if name.contains("nonconvex") { EXIT_VIOLATION } else { EXIT_OK };
        assert_eq!(out.exit_code, expected, "{name}: {:?}", out.violations);
    }
}
