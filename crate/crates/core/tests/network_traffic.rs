use nsca_core::network::{build_topology, Channel, ChannelState, LinkId, Network, NodeId, TopologySpec};
use nsca_core::traffic::{provision, Provision, Request, RequestTrace, TrafficGenerator, TrafficParams};
use proptest::prelude::*;

fn ring() -> Network {
    build_topology(&TopologySpec::four_node()).unwrap()
}

fn check_consistency(net: &Network) {
    let mut expected = 0;
    for lp in net.lightpaths() {
        expected += lp.path.len();
        for &l in lp.path.iter() {
            match net.state(l, lp.wavelength) {
                ChannelState::Data { lightpath, .. } => assert_eq!(lightpath, lp.id),
                s => panic!("lightpath {} missing on {:?}: {:?}", lp.id, l, s),
            }
        }
    }
    assert_eq!(net.data_channel_count(), expected);
}

fn request_strategy(nodes: usize) -> impl Strategy<Value = Request> {
    (0..nodes, 1..nodes, 1u32..15, -5.0f64..5.0).prop_map(move |(s, d, h, p)| Request {
        src: NodeId(s),
        dst: NodeId((s + d) % nodes),
        arrival_slot: 0,
        holding_slots: h,
        power_dbm: p,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn provisioning_keeps_continuity_and_quantum_channels(
        slots in prop::collection::vec(prop::collection::vec(request_strategy(4), 0..6), 1..40),
        qch in prop::collection::vec(1usize..=8, 4),
    ) {
        let mut net = ring();
        let mux: Vec<LinkId> = net.topology().mux_links().collect();
        for (l, &c) in mux.iter().zip(&qch) {
            net.place_quantum(*l, Channel(c)).unwrap();
        }
        for reqs in &slots {
            net.advance_timeslot();
            for r in reqs {
                let before: Vec<ChannelState> =
                    (0..net.link_count()).flat_map(|l| net.link_states(LinkId(l)).to_vec()).collect();
                let n_before = net.lightpaths().len();
                match provision(&mut net, r) {
                    Provision::Established { wavelength, .. } => {
                        let path = net.topology().route(r.src, r.dst).clone();
                        // first fit: no lower channel was free end-to-end
                        for lower in 1..wavelength.0 {
                            prop_assert!(path.iter().any(|&l| before[l.0 * 8 + lower - 1] != ChannelState::Free));
                        }
                    }
                    Provision::Blocked => {
                        let after: Vec<ChannelState> =
                            (0..net.link_count()).flat_map(|l| net.link_states(LinkId(l)).to_vec()).collect();
                        prop_assert_eq!(before, after);
                        prop_assert_eq!(n_before, net.lightpaths().len());
                    }
                }
                check_consistency(&net);
            }
            for (l, &c) in mux.iter().zip(&qch) {
                prop_assert_eq!(net.state(*l, Channel(c)), ChannelState::Quantum);
            }
        }
    }

    #[test]
    fn traffic_is_deterministic_per_seed(seed in any::<u64>(), load in 1.0f64..40.0) {
        let p = TrafficParams { load_erlang: load, seed, ..Default::default() };
        let a = RequestTrace::generate(&p, 4, 0, 50).unwrap();
        let b = RequestTrace::generate(&p, 4, 0, 50).unwrap();
        prop_assert_eq!(a.iter().collect::<Vec<_>>(), b.iter().collect::<Vec<_>>());
        for r in a.iter() {
            prop_assert!(r.src != r.dst && r.holding_slots >= 1);
            prop_assert!((-5.0..=5.0).contains(&r.power_dbm));
        }
    }
}

#[test]
fn usage_probabilities_sum_to_mean_hop_count() {
    for spec in [TopologySpec::four_node(), TopologySpec::six_node(), TopologySpec::nsfnet()] {
        let net = build_topology(&spec).unwrap();
        let topo = net.topology();
        let n = topo.nodes();
        let mut hops = 0usize;
        for s in 0..n {
            for d in 0..n {
                if s != d {
                    hops += topo.route(NodeId(s), NodeId(d)).len();
                }
            }
        }
        let mean_hops = hops as f64 / (n * (n - 1)) as f64;
        let sum: f64 = (0..topo.links().len()).map(|l| topo.usage_probability(LinkId(l))).sum();
        assert!((sum - mean_hops).abs() < 1e-12, "{sum} vs {mean_hops}");
    }
}

#[test]
fn mean_arrivals_match_offered_load() {
    let p = TrafficParams { load_erlang: 10.0, mean_holding_slots: 10.0, seed: 11, ..Default::default() };
    let mut gen = TrafficGenerator::new(&p, 4).unwrap();
    let slots = 100_000u64;
    let (mut n, mut hold) = (0usize, 0u64);
    for t in 0..slots {
        for r in gen.arrivals(t) {
            n += 1;
            hold += r.holding_slots as u64;
        }
    }
    let rate = n as f64 / slots as f64;
    assert!((rate - 1.0).abs() < 0.02, "{rate}");
    let mean_hold = hold as f64 / n as f64;
    assert!((mean_hold - 10.0).abs() < 0.2, "{mean_hold}");
}

fn blocking(load: f64, seed: u64) -> f64 {
    let p = TrafficParams { load_erlang: load, seed, ..Default::default() };
    let trace = RequestTrace::generate(&p, 4, 0, 3000).unwrap();
    let mut net = ring();
    let (mut offered, mut blocked) = (0u32, 0u32);
    for t in 0..trace.end() {
        if t > 0 {
            net.advance_timeslot();
        }
        for r in trace.slot(t) {
            if t >= 100 {
                offered += 1;
                blocked += (provision(&mut net, r) == Provision::Blocked) as u32;
            } else {
                provision(&mut net, r);
            }
        }
    }
    blocked as f64 / offered as f64
}

#[test]
fn blocking_grows_with_load() {
    let loads = [5.0, 15.0, 30.0, 50.0];
    let b: Vec<f64> = loads.iter().map(|&l| (0..3).map(|s| blocking(l, s)).sum::<f64>() / 3.0).collect();
    for w in b.windows(2) {
        assert!(w[1] > w[0], "{b:?}");
    }
}

#[test]
fn trace_csv_round_trip() {
    let p = TrafficParams { load_erlang: 20.0, seed: 3, ..Default::default() };
    let trace = RequestTrace::generate(&p, 4, 5, 30).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    trace.write_csv(&path).unwrap();
    let back = RequestTrace::read_csv(&path).unwrap();
    assert_eq!(back.request_count(), trace.request_count());
    assert_eq!(back.iter().collect::<Vec<_>>(), trace.iter().collect::<Vec<_>>());
}
