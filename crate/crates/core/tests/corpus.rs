//! The fuzz corpus seeds must parse and round-trip, as the fuzz targets assert.

use std::path::PathBuf;

use qkdn_sim::config::ScenarioConfig;
use qkdn_sim::topology::TopologySpec;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn config_seeds_round_trip() {
    for (path, text) in seeds("config_toml") {
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }
}

#[test]
fn topology_seeds_round_trip() {
    for (path, text) in seeds("topology_toml") {
        let topo = TopologySpec::from_toml_str(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(topo.is_km_connected());
        assert_eq!(TopologySpec::from_toml_str(&topo.to_toml_string()).unwrap(), topo);
    }
}

#[test]
fn truncated_seeds_fail_cleanly() {
    for (_, text) in seeds("config_toml").into_iter().chain(seeds("topology_toml")) {
        for cut in (0..text.len()).step_by(7) {
            let _ = ScenarioConfig::from_toml_str(&text[..cut]);
            let _ = TopologySpec::from_toml_str(&text[..cut]);
        }
    }
}
