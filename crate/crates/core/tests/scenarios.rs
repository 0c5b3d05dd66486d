use proptest::prelude::*;

use qkdn_sim::config::{ScenarioConfig, TopologySource};
use qkdn_sim::control::{CmArchitectureKind, RoutingProtocolKind, ScenarioLabel};
use qkdn_sim::sim::{run, RunResult};
use qkdn_sim::topology::generate_internet_like;

fn baseline(label: ScenarioLabel, rate: f64) -> RunResult {
    let cfg = ScenarioConfig::default();
    run(cfg.resolve(label, 42, Some(rate)).unwrap()).unwrap()
}

#[test]
fn periodic_control_traffic_follows_setup() {
    for label in ScenarioLabel::ALL {
        let r = baseline(label, 100.0);
        let end = r.end.as_secs_f64();
        for n in &r.nodes {
            let sent = n.setup_sent_s.expect("every node sends setup");
            let expected = ((end - sent) / 60.0).ceil() as u64 - 1;
            assert_eq!(n.status_emitted, expected, "{label} node {}", n.node);
        }
        let configured = r.setup_complete.as_secs_f64();
        match label.parts().1 {
            RoutingProtocolKind::Proactive => {
                // the table carried by Init, then one push per update period
                let periodic = ((end - configured) / 60.0).ceil() as u64 - 1;
                assert_eq!(r.cm.table_pushes, 1 + periodic, "{label}");
                assert!(r.nodes.iter().all(|n| n.pushes_received == periodic), "{label}");
                assert_eq!(r.cm.vectors_served, 0);
            }
            RoutingProtocolKind::Reactive => {
                let started: u64 = r.nodes.iter().map(|n| n.transports_started).sum();
                // requests still in flight at the stop are not served
                assert!(r.cm.vectors_served <= started, "{label}");
                assert!(r.cm.vectors_served > 0, "{label}");
                assert_eq!(r.cm.by_kind.get("table_push"), None);
            }
        }
    }
}

#[test]
fn only_via_kms_runs_have_a_gateway() {
    for label in ScenarioLabel::ALL {
        let r = baseline(label, 50.0);
        match label.parts().0 {
            CmArchitectureKind::SeparatelyProtected => assert!(r.gateway.is_none()),
            CmArchitectureKind::CmViaKms => {
                assert_eq!(r.gateway.map(|g| g.0), Some(21));
                assert!(r.link(19, 21).is_some());
            }
        }
    }
}

#[test]
fn starved_links_censor_rather_than_drop() {
    let r = baseline(ScenarioLabel::B, 10.0);
    assert!(r.conservation_violations().is_empty());
    let censored: u64 = r.sessions.iter().map(|s| s.stats.censored).sum();
    assert!(censored > 0);
    assert!(r.metrics.t_msg_ne_ms.unwrap() > 1000.0);
}

#[test]
fn topology_file_matches_generated_source() {
    let dir = tempfile::tempdir().unwrap();
    generate_internet_like(20, 42).unwrap().save(&dir.path().join("net.toml")).unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "[run]\nscenario = \"C\"\nkey_rate_kps = 100.0\n\n[topology]\nsource = \"file\"\nfile = \"net.toml\"\n",
    )
    .unwrap();
    let from_file = ScenarioConfig::load(&cfg_path).unwrap();
    assert_eq!(from_file.topology.source, TopologySource::File);
    let a = run(from_file.resolve(ScenarioLabel::C, 42, Some(100.0)).unwrap()).unwrap();
    let b = baseline(ScenarioLabel::C, 100.0);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.events, b.events);
}

#[test]
fn config_round_trips_through_toml() {
    for cfg in [ScenarioConfig::default(), ScenarioConfig::padua()] {
        let text = cfg.to_toml_string();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn accounting_holds_on_random_networks(
        nodes in 6usize..14,
        topo_seed in 0u64..1000,
        seed in 0u64..1000,
        label in prop::sample::select(ScenarioLabel::ALL.to_vec()),
        rate in prop::sample::select(vec![5.0, 30.0, 120.0, 400.0]),
    ) {
        let mut cfg = ScenarioConfig::default();
        cfg.topology.nodes = nodes;
        cfg.topology.seed = topo_seed;
        cfg.run.total_time_s = 90.0;
        let r = run(cfg.resolve(label, seed, Some(rate)).unwrap()).unwrap();
        prop_assert!(r.conservation_violations().is_empty(), "{:?}", r.conservation_violations());
        match label.parts().0 {
            CmArchitectureKind::SeparatelyProtected => prop_assert_eq!(r.cm.keys_consumed, 0),
            CmArchitectureKind::CmViaKms => prop_assert_eq!(r.cm.keys_consumed, r.cm.km_hop_sum),
        }
        for s in &r.sessions {
            prop_assert!(s.stats.rx <= s.stats.tx);
        }
    }
}
