use std::path::PathBuf;

use copylab::sweep::SweepSpec;
use copylab::train::RunConfig;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_load() {
    let mut runs = 0;
    let mut sweeps = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_owned();
        if name.starts_with("sweep-") {
            let spec = SweepSpec::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
            let base = RunConfig::load(&spec.base).unwrap();
            let cells = spec.cells(&base).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(cells.len(), spec.values.len() * spec.seeds.len());
            sweeps += 1;
        } else {
            let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
            cfg.validate().unwrap();
            runs += 1;
        }
    }
    assert_eq!((runs, sweeps), (2, 3));
}

#[test]
fn desk_config_matches_the_builtin_defaults() {
    let cfg = RunConfig::load(&configs_dir().join("desk.toml")).unwrap();
    assert_eq!(cfg.model, RunConfig::desk().model);
    assert_eq!(cfg.train, RunConfig::desk().train);
}
