use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use windgmm::consensus::Topology;
use windgmm::dmap::{fit_dmap_observed, DmapConfig};
use windgmm::linalg::Vec2;
use windgmm::map::{default_hyperparams, init_params};

#[test]
fn no_raw_observation_is_ever_transmitted() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let m = 6;
    let n = 40;
    let farms: Vec<Vec<Vec2>> = (0..m)
        .map(|_| {
            (0..n)
                .map(|_| Vec2::new(rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)))
                .collect()
        })
        .collect();
    let raw: HashSet<u64> = farms
        .iter()
        .flatten()
        .flat_map(|p| [p[0].to_bits(), p[1].to_bits()])
        .collect();
    let topo = Topology::build((0..m).map(|i| [i as f64, 0.0]).collect(), 1.5).unwrap();
    let total: Vec<Vec2> = (0..n).map(|i| farms.iter().map(|f| f[i]).sum()).collect();
    let hyper = default_hyperparams(&total, 3).unwrap();
    let init = init_params(&total, 3, 0).unwrap();

    let mut messages = 0u64;
    let mut leaks = Vec::new();
    let mut strays = Vec::new();
    let report = fit_dmap_observed(
        &farms,
        &topo,
        &hyper,
        &init,
        &DmapConfig::default(),
        &mut |msg| {
            messages += 1;
            if msg.from >= m || !(msg.to == m || topo.has_edge(msg.from, msg.to)) {
                strays.push((msg.from, msg.to));
            }
            if msg.payload.iter().any(|x| raw.contains(&x.to_bits())) {
                leaks.push((msg.round, msg.from, msg.to));
            }
        },
    )
    .unwrap();

    assert!(messages > 0);
    assert_eq!(
        messages,
        report.aggregation.messages + report.statistics.messages
    );
    assert!(
        leaks.is_empty(),
        "raw values sent in {:?}",
        &leaks[..leaks.len().min(5)]
    );
    assert!(strays.is_empty(), "messages off the graph: {strays:?}");
}
