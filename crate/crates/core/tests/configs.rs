//! The shipped example configurations.

use std::path::PathBuf;

use mvad::config::RunConfig;
use mvad::synth::Category;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn every_shipped_config_parses() {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            names.push(path.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    assert!(names.len() >= 6, "{names:?}");
}

#[test]
fn default_file_spells_out_the_built_in_defaults() {
    let loaded = RunConfig::load(&configs_dir().join("default.toml")).unwrap();
    assert_eq!(loaded, RunConfig::default());
}

#[test]
fn one_vs_rest_files_train_on_their_category() {
    for (file, cat) in [("train-box.toml", Category::Box), ("train-cylinder.toml", Category::Cylinder), ("train-torus.toml", Category::Torus)] {
        let cfg = RunConfig::load(&configs_dir().join(file)).unwrap();
        assert_eq!(cfg.protocol.train, vec![cat]);
        assert_eq!(cfg.protocol.test_categories(&cfg.synth.categories).len(), 3);
    }
}
