//! The bundled network files must stay loadable and keep the structural
//! properties the rest of the test suite relies on.

use mgopf::netmodel::{BusId, Network, Phase};

fn data_path(name: &str) -> String {
    format!("{}/../../data/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn ten_node_file_loads_and_is_radial() {
    let net = Network::from_json_file(data_path("ten_node.json")).expect("ten_node.json loads");

    assert_eq!(net.buses.len(), 10);
    assert_eq!(net.lines.len(), 9, "a radial network has n - 1 segments");
    assert_eq!(net.pcc, BusId(0));
    assert_eq!(net.base.v_ll_v, 4160.0);
    assert_eq!(net.base.s_va, 1e6);
    assert_eq!(net.c0, Some(40.0));

    // Connectivity: walking the segments reaches every bus exactly once.
    let mut seen = vec![net.pcc];
    let mut frontier = vec![net.pcc];
    while let Some(b) = frontier.pop() {
        for (k, _) in net.lines_at(b) {
            let l = &net.lines[k];
            let other = if l.from == b { l.to } else { l.from };
            if !seen.contains(&other) {
                seen.push(other);
                frontier.push(other);
            }
        }
    }
    assert_eq!(seen.len(), 10, "all buses reachable from the PCC");

    // Total demand: 1.78 MW / 0.898 Mvar across present phases.
    let s_base = net.base.s_va;
    let p_total: f64 = net.buses.iter().map(|b| b.p_load.iter().sum::<f64>()).sum();
    let q_total: f64 = net.buses.iter().map(|b| b.q_load.iter().sum::<f64>()).sum();
    assert!((p_total * s_base / 1e3 - 1780.0).abs() < 1e-9);
    assert!((q_total * s_base / 1e3 - 898.0).abs() < 1e-9);

    // Two unity-power-factor DG sites, 50 kW per phase, on three-phase buses.
    assert_eq!(net.dg.len(), 2);
    for unit in &net.dg {
        assert!(unit.is_unity_pf());
        assert!((unit.p_max * s_base / 1e3 - 50.0).abs() < 1e-12);
        assert_eq!(unit.p_min, 0.0);
        let bus = net.bus(unit.bus).expect("dg bus exists");
        assert_eq!(bus.phases.len(), 3);
    }

    // Two-phase laterals carry phases a and c only.
    for id in [3usize, 4, 9] {
        let bus = net.bus(BusId(id)).unwrap();
        assert_eq!(bus.phases.letters(), "ac");
        assert!(bus.phases.contains(Phase::A) && bus.phases.contains(Phase::C));
    }

    // The bundled two-area split covers every bus exactly once.
    let areas = net.areas.as_ref().expect("areas present");
    assert_eq!(areas.len(), 2);
    let mut covered: Vec<BusId> = areas.iter().flatten().copied().collect();
    covered.sort();
    assert_eq!(covered, (0..10).map(BusId).collect::<Vec<_>>());

    // Round trip: serializing and re-parsing preserves the structure.
    let json = net.to_json_string();
    let again = Network::from_json_str(&json).expect("round trip parses");
    assert_eq!(again.buses.len(), net.buses.len());
    assert_eq!(again.lines.len(), net.lines.len());
    assert_eq!(again.dg.len(), net.dg.len());
}
