//! Shared fixtures for the crate's test modules: small deterministic
//! networks, random radial networks, and helpers that construct exactly
//! feasible operating points by back-filling loads from a chosen voltage
//! profile.

use crate::netmodel::{Base, Bus, BusId, DgUnit, Line, Network, Phase, PhaseSet};
use crate::{C64, CMat, CVec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// A path network `0 - 1 - ... - (n-1)`, all two-phase (`ab`), no
/// shunts, with loads left at zero (tests fill them in).
pub(crate) fn path_network(n: usize) -> Network {
    let z = CMat::from_row_slice(
        2,
        2,
        &[c(0.05, 0.09), c(0.01, 0.03), c(0.01, 0.03), c(0.05, 0.09)],
    );
    let buses = (0..n)
        .map(|i| Bus {
            id: BusId(i),
            phases: PhaseSet::from_letters("ab").unwrap(),
            p_load: [0.0; 3],
            q_load: [0.0; 3],
            y_cap: [0.0; 3],
            v_min: 0.5,
            v_max: 1.5,
        })
        .collect();
    let lines = (1..n)
        .map(|i| Line {
            from: BusId(i - 1),
            to: BusId(i),
            phases: PhaseSet::from_letters("ab").unwrap(),
            z: z.clone(),
            y_shunt: CMat::zeros(2, 2),
            i_max: None,
            loss_cap: None,
            neutral: None,
        })
        .collect();
    let net = Network {
        description: None,
        base: Base { s_va: 1e6, v_ll_v: 4160.0 },
        pcc: BusId(0),
        v0: CVec::from_vec(vec![c(1.0, 0.0), c(-0.5, -0.75f64.sqrt())]),
        c0: Some(40.0),
        buses,
        lines,
        dg: vec![],
        areas: None,
    };
    net.validate().unwrap();
    net
}

/// Builds an *exactly feasible* operating point by choosing voltages
/// first and back-filling every load so the balances hold identically.
pub(crate) fn backfill_loads(net: &mut Network, v: &CVec) {
    let idx = net.indexing();
    let y = net.ybus(&idx);
    let i = &y * v;
    for bpos in 0..net.buses.len() {
        let id = net.buses[bpos].id;
        if id == net.pcc || net.dg_at(id).is_some() {
            continue;
        }
        let phases = net.buses[bpos].phases;
        for phase in phases.iter() {
            let k = idx.index_of(id, phase);
            let s = v[k] * i[k].conj();
            net.buses[bpos].p_load[phase.index()] = -s.re;
            // Capacitor banks are not part of the admittance matrix, so the
            // balance reads `s = -load + j y_cap |v|^2`; solve for the load.
            net.buses[bpos].q_load[phase.index()] =
                -s.im + net.buses[bpos].y_cap[phase.index()] * v[k].norm_sqr();
        }
    }
}

/// Builds a random radial network: bus 0 is a three-phase PCC, each
/// further bus hangs off an earlier one with a (possibly) narrower
/// phase set, and each segment carries exactly the child's phases.
pub(crate) fn random_network(seed: u64, with_shunt: bool) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_bus = rng.gen_range(2..7);
    let mut phase_sets: Vec<PhaseSet> = vec![PhaseSet::ABC];
    let mut parents: Vec<usize> = vec![usize::MAX];
    for i in 1..n_bus {
        let parent = rng.gen_range(0..i);
        let parent_set = phase_sets[parent];
        let members: Vec<Phase> = parent_set.iter().collect();
        // Random non-empty subset of the parent's phases.
        let keep = rng.gen_range(1..=members.len());
        let mut set = PhaseSet::empty();
        let mut order: Vec<usize> = (0..members.len()).collect();
        for k in (1..order.len()).rev() {
            order.swap(k, rng.gen_range(0..=k));
        }
        for &m in order.iter().take(keep) {
            set.insert(members[m]);
        }
        phase_sets.push(set);
        parents.push(parent);
    }

    let buses = (0..n_bus)
        .map(|i| Bus {
            id: BusId(i),
            phases: phase_sets[i],
            p_load: [0.0; 3],
            q_load: [0.0; 3],
            y_cap: [0.0; 3],
            v_min: 0.9,
            v_max: 1.1,
        })
        .collect();

    let lines = (1..n_bus)
        .map(|i| {
            let np = phase_sets[i].len();
            // Symmetric, diagonally dominant impedance: invertible.
            let mut z = CMat::zeros(np, np);
            for r in 0..np {
                for s in 0..=r {
                    let v = if r == s {
                        c(rng.gen_range(0.3..0.8), rng.gen_range(0.6..1.2))
                    } else {
                        c(rng.gen_range(0.01..0.08), rng.gen_range(0.02..0.15))
                    };
                    z[(r, s)] = v;
                    z[(s, r)] = v;
                }
            }
            let y_shunt = if with_shunt {
                CMat::from_fn(np, np, |r, s| {
                    if r == s {
                        c(0.0, rng.gen_range(1e-4..1e-3))
                    } else {
                        c(0.0, 0.0)
                    }
                })
            } else {
                CMat::zeros(np, np)
            };
            Line {
                from: BusId(parents[i]),
                to: BusId(i),
                phases: phase_sets[i],
                z,
                y_shunt,
                i_max: None,
                loss_cap: None,
                neutral: None,
            }
        })
        .collect();

    let net = Network {
        description: None,
        base: Base {
            s_va: 1e6,
            v_ll_v: 4160.0,
        },
        pcc: BusId(0),
        v0: CVec::from_vec(vec![
            c(1.0, 0.0),
            c(-0.5, -0.75f64.sqrt()),
            c(-0.5, 0.75f64.sqrt()),
        ]),
        c0: Some(1.0),
        buses,
        lines,
        dg: vec![],
        areas: None,
    };
    net.validate().expect("random network must be valid");
    net
}

/// Decorates a network with small loads, a shunt capacitor, and one DG
/// unit on the last bus (when it is not the PCC), so that every kind of
/// coefficient matrix has something nontrivial to act on.
pub(crate) fn randomize_loads(net: &mut Network, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pcc = net.pcc;
    for bus in net.buses.iter_mut() {
        if bus.id == pcc {
            continue;
        }
        for phase in bus.phases.iter() {
            bus.p_load[phase.index()] = rng.gen_range(0.0..0.05);
            bus.q_load[phase.index()] = rng.gen_range(0.0..0.02);
            if rng.gen_bool(0.3) {
                bus.y_cap[phase.index()] = rng.gen_range(0.0..0.1);
            }
        }
    }
    let last = net.buses.last().unwrap();
    if last.id != pcc {
        let bus = last.id;
        net.dg.push(DgUnit {
            bus,
            p_min: 0.0,
            p_max: 0.05,
            q_min: 0.0,
            q_max: 0.0,
            cost: 30.0,
        });
    }
    net.validate().expect("decorated network must stay valid");
}
