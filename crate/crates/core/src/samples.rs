//! Sample networks used in the documentation, the test-suite, and the
//! bundled JSON files under `networks/`.

use std::collections::BTreeMap;

use crate::diagram::{Demand, Supply};
use crate::network::{LinkFile, LinkKind, Network, NetworkFile, SplitEntry};

/// Trapezoidal diagram used by most samples: demand rises to 3000 veh/h at
/// 90 veh/mi, supply falls from 4000 veh/h to zero at the 360 veh/mi jam.
fn trapezoid_demand() -> Demand {
    Demand::PiecewiseLinear { v: 100.0 / 3.0, cap: 3000.0 }
}

fn trapezoid_supply() -> Supply {
    Supply::PiecewiseLinear { w: 100.0 / 9.0, jam: 360.0, cap: None }
}

pub(crate) fn ordinary(id: &str, tail: &str, head: &str) -> LinkFile {
    LinkFile {
        id: id.into(),
        kind: LinkKind::Ordinary,
        tail: Some(tail.into()),
        head: head.into(),
        demand: trapezoid_demand(),
        supply: Some(trapezoid_supply()),
        meter: None,
    }
}

pub(crate) fn onramp(id: &str, head: &str, v: f64, cap: f64) -> LinkFile {
    LinkFile {
        id: id.into(),
        kind: LinkKind::Onramp,
        tail: None,
        head: head.into(),
        demand: Demand::PiecewiseLinear { v, cap },
        supply: None,
        meter: None,
    }
}

pub(crate) fn split(from: &str, to: &str, beta: f64) -> SplitEntry {
    SplitEntry { from: from.into(), to: to.into(), beta }
}

/// Two queues merging into one junction that diverges into two exits.
/// The queue demands saturate at `c = 3000` with unit slope, so moderate
/// queue lengths already push the full rate; exit 3 is the scarce one.
pub fn example1_file() -> NetworkFile {
    NetworkFile {
        junctions: vec!["v1".into(), "v2".into(), "v3".into()],
        links: vec![
            onramp("1", "v1", 1.0, 3000.0),
            onramp("2", "v1", 1.0, 3000.0),
            ordinary("3", "v1", "v2"),
            ordinary("4", "v1", "v3"),
        ],
        split: vec![
            split("1", "3", 0.5),
            split("1", "4", 0.5),
            split("2", "3", 2.0 / 3.0),
            split("2", "4", 1.0 / 3.0),
        ],
        demands: BTreeMap::from([("1".into(), 1000.0), ("2".into(), 1500.0)]),
    }
}

pub fn example1() -> Network {
    let f = example1_file();
    Network::from_parts(f.junctions, f.links, f.split, f.demands).unwrap()
}

/// A queue diverging half/half into links 2 and 3; link 2 merges with a
/// second queue into the single exit 5. Default demands overload exit 5.
pub fn example2_file() -> NetworkFile {
    NetworkFile {
        junctions: vec!["v1".into(), "v2".into(), "v3".into(), "v4".into()],
        links: vec![
            onramp("1", "v1", 30.0, 3000.0),
            ordinary("2", "v1", "v2"),
            ordinary("3", "v1", "v3"),
            onramp("4", "v2", 30.0, 6000.0),
            ordinary("5", "v2", "v4"),
        ],
        split: vec![
            split("1", "2", 0.5),
            split("1", "3", 0.5),
            split("2", "5", 1.0),
            split("4", "5", 1.0),
        ],
        demands: BTreeMap::from([("1".into(), 2500.0), ("4".into(), 2500.0)]),
    }
}

pub fn example2() -> Network {
    let f = example2_file();
    Network::from_parts(f.junctions, f.links, f.split, f.demands).unwrap()
}

/// A three-section corridor with an onramp per junction, merge-only with
/// uniform off-network fractions (0, 0.2, 0.1 along the corridor).
pub fn freeway_file() -> NetworkFile {
    NetworkFile {
        junctions: vec!["v1".into(), "v2".into(), "v3".into(), "v4".into()],
        links: vec![
            onramp("r0", "v1", 40.0, 2000.0),
            ordinary("l1", "v1", "v2"),
            onramp("r1", "v2", 40.0, 2000.0),
            ordinary("l2", "v2", "v3"),
            onramp("r2", "v3", 40.0, 2000.0),
            ordinary("l3", "v3", "v4"),
        ],
        split: vec![
            split("r0", "l1", 1.0),
            split("l1", "l2", 0.8),
            split("r1", "l2", 0.8),
            split("l2", "l3", 0.9),
            split("r2", "l3", 0.9),
        ],
        demands: BTreeMap::from([
            ("r0".into(), 1500.0),
            ("r1".into(), 800.0),
            ("r2".into(), 600.0),
        ]),
    }
}

pub fn freeway() -> Network {
    let f = freeway_file();
    Network::from_parts(f.junctions, f.links, f.split, f.demands).unwrap()
}

/// Minimal cyclic graph; loads fine, fails validation.
pub fn two_cycle() -> Network {
    let file = NetworkFile {
        junctions: vec!["va".into(), "vb".into()],
        links: vec![
            onramp("in", "va", 30.0, 1000.0),
            ordinary("x", "va", "vb"),
            ordinary("y", "vb", "va"),
        ],
        split: vec![split("in", "x", 1.0), split("y", "x", 1.0), split("x", "y", 1.0)],
        demands: BTreeMap::from([("in".into(), 500.0)]),
    };
    Network::from_parts(file.junctions, file.links, file.split, file.demands).unwrap()
}

/// One queue feeding one bounded link into a sink.
pub fn single_ramp() -> Network {
    let file = NetworkFile {
        junctions: vec!["v1".into(), "v2".into()],
        links: vec![onramp("q", "v1", 30.0, 3000.0), ordinary("m", "v1", "v2")],
        split: vec![split("q", "m", 1.0)],
        demands: BTreeMap::from([("q".into(), 1000.0)]),
    };
    Network::from_parts(file.junctions, file.links, file.split, file.demands).unwrap()
}

/// Single queue with a low discharge bound feeding an ample link; arrivals
/// beyond 2000 can never pass.
pub fn single_ramp_capped() -> Network {
    let file = NetworkFile {
        junctions: vec!["v1".into(), "v2".into()],
        links: vec![onramp("q", "v1", 30.0, 2000.0), ordinary("m", "v1", "v2")],
        split: vec![split("q", "m", 1.0)],
        demands: BTreeMap::from([("q".into(), 1000.0)]),
    };
    Network::from_parts(file.junctions, file.links, file.split, file.demands).unwrap()
}

/// Same shape with smooth exponential curves (no kinks anywhere).
pub fn single_ramp_exp() -> Network {
    let file = NetworkFile {
        junctions: vec!["v1".into(), "v2".into()],
        links: vec![
            LinkFile {
                id: "q".into(),
                kind: LinkKind::Onramp,
                tail: None,
                head: "v1".into(),
                demand: Demand::Exponential { a: 2.0, b: 0.8 },
                supply: None,
                meter: None,
            },
            LinkFile {
                id: "m".into(),
                kind: LinkKind::Ordinary,
                tail: Some("v1".into()),
                head: "v2".into(),
                demand: Demand::Exponential { a: 2.0, b: 0.8 },
                supply: Some(Supply::Exponential { c: 3.0, b: 0.8, jam: 3.5 }),
                meter: None,
            },
        ],
        split: vec![split("q", "m", 1.0)],
        demands: BTreeMap::from([("q".into(), 0.5)]),
    };
    Network::from_parts(file.junctions, file.links, file.split, file.demands).unwrap()
}
