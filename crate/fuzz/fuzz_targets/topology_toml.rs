#![no_main]

use libfuzzer_sys::fuzz_target;
use qkdn_sim::topology::TopologySpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(topo) = TopologySpec::from_toml_str(text) {
        assert!(topo.validate().is_ok());
        assert!(topo.is_km_connected());
        let again = TopologySpec::from_toml_str(&topo.to_toml_string()).expect("re-parse");
        assert_eq!(again, topo);
    }
});
