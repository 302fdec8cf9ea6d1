//! Randomized invariants over the counting helpers, the channels, whole
//! simulations and the building blocks under random clean schedules.

use std::collections::VecDeque;
use std::sync::Arc;

use proptest::prelude::*;
use ssbft::bincon::{BinCon, Coin, DEFAULT_ROUND_CAP};
use ssbft::brb::BrbInstance;
use ssbft::bv::BvInstance;
use ssbft::harness::suite::{self, Family};
use ssbft::harness::{run_scenario, runner};
use ssbft::sim::channel::{Channel, Envelope, Overflow};
use ssbft::wire::{BoolSet, Packet, Tagged};
use ssbft::{differ, equal, DeliveryResult, Entry, Multiset, NodeId, SystemParams, Value};

fn entry() -> impl Strategy<Value = Entry> {
    prop_oneof![
        (0u8..5).prop_map(|v| Entry::Val(Value(v))),
        Just(Entry::Bolt)
    ]
}

fn params() -> impl Strategy<Value = SystemParams> {
    (1usize..40)
        .prop_flat_map(|n| (Just(n), 0..=(n - 1) / 3, 1usize..4))
        .prop_map(|(n, t, c)| SystemParams::new(n, t, c).unwrap())
}

/// Random schedule: a list of (from, to) deliveries among `k` nodes.
fn schedule(k: usize, len: usize) -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0..k, 0..k), 0..len)
}

proptest! {
    #[test]
    fn equal_and_differ_partition(entries in prop::collection::vec(entry(), 0..12), v in 0u8..5) {
        let rec: Multiset = entries.iter().copied().collect();
        let v = Value(v);
        let same = entries.iter().filter(|e| matches!(e, Entry::Val(x) if *x == v)).count();
        prop_assert_eq!(equal(v, &rec), same);
        prop_assert_eq!(equal(v, &rec) + differ(v, &rec), rec.len());
    }

    #[test]
    fn thresholds_leave_a_correct_witness(p in params()) {
        let th = p.thresholds();
        prop_assert!(th.n_minus_2t >= th.t_plus_1);
        // Two echo quorums share more than t nodes, so a correct one.
        prop_assert!(2 * p.echo_quorum() > p.n + p.t);
        prop_assert!(p.ready_quorum() > 2 * p.t);
        prop_assert!(p.ready_quorum() <= th.n_minus_t);
        prop_assert!(p.echo_quorum() <= th.n_minus_t);
    }

    #[test]
    fn channel_matches_bounded_queue_model(
        cap in 1usize..5,
        ops in prop::collection::vec(prop::option::of(0u64..1000), 0..60),
        newest in any::<bool>(),
    ) {
        let policy = if newest { Overflow::DropNewest } else { Overflow::DropOldest };
        let mut ch = Channel::new(NodeId(0), NodeId(1), cap);
        let mut model: VecDeque<u64> = VecDeque::new();
        for op in ops {
            match op {
                Some(seq) => {
                    let lost = ch.push(
                        Envelope { src: NodeId(0), seq, order: seq, packet: Arc::new(Packet::default()) },
                        policy,
                    );
                    let want = if model.len() < cap {
                        model.push_back(seq);
                        None
                    } else if newest {
                        Some(seq)
                    } else {
                        let old = model.pop_front();
                        model.push_back(seq);
                        old
                    };
                    prop_assert_eq!(lost.map(|e| e.seq), want);
                }
                None => prop_assert_eq!(ch.pop().map(|e| e.seq), model.pop_front()),
            }
            prop_assert!(ch.len() <= cap);
            prop_assert_eq!(ch.len(), model.len());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_respects_capacity_and_replays(index in 0u64..10_000, fam in 0usize..4) {
        let family = Family::ALL[fam];
        let s = suite::scenario(family, 4, index);
        let mut w = runner::build_world(&s).unwrap();
        for _ in 0..2_000 {
            if w.step().is_none() {
                break;
            }
            prop_assert!(w.channels().iter().all(|c| c.len() <= c.capacity()));
        }
        let a = run_scenario(&s).unwrap().trace.to_lines();
        let b = run_scenario(&s).unwrap().trace.to_lines();
        prop_assert!(a == b, "trace of {} differs between replays", s.name);
    }

    /// All nodes correct: own ECHO, own READY and the delivery are never
    /// withdrawn, and all deliveries agree on the broadcast payload.
    #[test]
    fn brb_clean_schedules_never_withdraw(n in 4usize..8, sched in schedule(7, 300)) {
        let p = SystemParams::max_resilience(n, 1).unwrap();
        let payload = Tagged::value(NodeId(0), Value(2));
        let mut nodes: Vec<BrbInstance> =
            p.nodes().map(|me| BrbInstance::new(p, me, NodeId(0))).collect();
        nodes[0].broadcast(payload);
        nodes[0].update();
        let mut prev: Vec<_> = nodes.iter().map(|b| (b.votes(), b.deliver())).collect();
        let steps = sched.into_iter().filter(|(a, b)| a < &n && b < &n && a != b);
        // Finish with full fair passes so completion can be checked.
        let fair = (0..4).flat_map(|_| (0..n).flat_map(move |a| (0..n).map(move |b| (a, b))));
        for (from, to) in steps.chain(fair.filter(|(a, b)| a != b)) {
            let v = nodes[from].votes();
            nodes[to].absorb(NodeId(from), &v);
            nodes[to].update();
            let (old, d) = &prev[to];
            let new = nodes[to].votes();
            prop_assert!(old.echo.is_none() || old.echo == new.echo);
            prop_assert!(old.ready.is_none() || old.ready == new.ready);
            prop_assert!(d.is_pending() || *d == nodes[to].deliver());
            prev[to] = (new, nodes[to].deliver());
        }
        for b in &nodes {
            prop_assert_eq!(b.deliver(), DeliveryResult::Decided(payload));
        }
    }

    /// Correct nodes only, at n in {4, 7, 10}: forwards and binValues only
    /// grow, binValues holds only correct inputs, and fair completion yields
    /// equal non-empty sets.
    #[test]
    fn bv_clean_schedules(
        size in 0usize..3,
        inputs in prop::collection::vec(any::<bool>(), 10),
        sched in schedule(10, 400),
    ) {
        let n = [4, 7, 10][size];
        let p = SystemParams::max_resilience(n, 1).unwrap();
        let live = n - p.t;
        let mut nodes: Vec<BvInstance> = (0..live).map(|i| BvInstance::new(p, NodeId(i))).collect();
        for (i, b) in nodes.iter_mut().enumerate() {
            b.broadcast(inputs[i]);
        }
        let proposed: Vec<bool> = inputs[..live].to_vec();
        let steps = sched.into_iter().filter(|(a, b)| a < &live && b < &live && a != b);
        let fair = (0..4).flat_map(|_| (0..live).flat_map(move |a| (0..live).map(move |b| (a, b))));
        for (from, to) in steps.chain(fair.filter(|(a, b)| a != b)) {
            let (f0, b0) = (nodes[to].forwarded(), nodes[to].bin_values());
            let v = nodes[from].forwarded();
            nodes[to].absorb(NodeId(from), v);
            nodes[to].update();
            let (f1, b1) = (nodes[to].forwarded(), nodes[to].bin_values());
            prop_assert_eq!(BoolSet(f0.0 & f1.0), f0);
            prop_assert_eq!(BoolSet(b0.0 & b1.0), b0);
            prop_assert!(b1.iter().all(|x| proposed.contains(&x)));
        }
        let first = nodes[0].bin_values();
        prop_assert!(!first.is_empty());
        prop_assert!(nodes.iter().all(|b| b.bin_values() == first));
    }

    /// `t` silent nodes: correct nodes agree on a proposed bit.
    #[test]
    fn bincon_clean_schedules_agree(
        size in 0usize..2,
        inputs in prop::collection::vec(any::<bool>(), 7),
        seed in any::<u64>(),
        sched in schedule(7, 300),
    ) {
        let n = [4, 7][size];
        let p = SystemParams::max_resilience(n, 1).unwrap();
        let live = n - p.t;
        let mut nodes: Vec<BinCon> = (0..live)
            .map(|i| BinCon::new(p, NodeId(i), Coin::Seeded(seed), DEFAULT_ROUND_CAP))
            .collect();
        for (i, c) in nodes.iter_mut().enumerate() {
            c.propose(inputs[i]);
        }
        let steps = sched.into_iter().filter(|(a, b)| a < &live && b < &live && a != b);
        for (from, to) in steps {
            let v = nodes[from].votes();
            nodes[to].absorb(NodeId(from), &v);
            nodes[to].update();
        }
        for _ in 0..DEFAULT_ROUND_CAP * 4 {
            for to in 0..live {
                for from in (0..live).filter(|f| *f != to) {
                    let v = nodes[from].votes();
                    nodes[to].absorb(NodeId(from), &v);
                }
                nodes[to].update();
            }
        }
        let d = nodes[0].result();
        let b = *d.decided().expect("decided within the round cap");
        prop_assert!(inputs[..live].contains(&b));
        prop_assert!(nodes.iter().all(|c| c.result() == d));
    }
}
