//! Exhaustive bounded-depth schedule search over the building blocks.
//!
//! The system has three correct nodes and one Byzantine node. A step either
//! delivers one correct node's current state to another correct node, or
//! delivers one entry of a finite Byzantine vote menu to a correct node.
//! Every state reachable within the depth bound is visited once (states are
//! deduplicated, so the search covers every schedule up to that depth).
//!
//! Safety is checked on every transition. Liveness is checked from every
//! visited state by continuing with a fair schedule among the correct nodes
//! until nothing changes, with the Byzantine node silent from then on.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::hash::Hash;

use crate::bincon::{BinCon, Coin, DEFAULT_ROUND_CAP};
use crate::brb::BrbInstance;
use crate::bv::BvInstance;
use crate::types::{DeliveryResult, NodeId, SystemParams, Value};
use crate::wire::{BcRoundVotes, BcVotes, BoolSet, BrbVotes, Content, Tagged};

/// Upper bound on fair iterations before a continuation counts as divergent.
const SETTLE_LIMIT: usize = 1_000;

/// A protocol instance as driven by the explorer.
pub trait Proto: Clone + Eq + Hash {
    type Votes: Clone + fmt::Debug;
    fn votes(&self) -> Self::Votes;
    fn absorb(&mut self, from: NodeId, v: &Self::Votes);
    fn update(&mut self);
}

impl Proto for BrbInstance {
    type Votes = BrbVotes;
    fn votes(&self) -> BrbVotes {
        BrbInstance::votes(self)
    }
    fn absorb(&mut self, from: NodeId, v: &BrbVotes) {
        BrbInstance::absorb(self, from, v)
    }
    fn update(&mut self) {
        BrbInstance::update(self)
    }
}

impl Proto for BvInstance {
    type Votes = BoolSet;
    fn votes(&self) -> BoolSet {
        self.forwarded()
    }
    fn absorb(&mut self, from: NodeId, v: &BoolSet) {
        BvInstance::absorb(self, from, *v)
    }
    fn update(&mut self) {
        BvInstance::update(self)
    }
}

impl Proto for BinCon {
    type Votes = BcVotes;
    fn votes(&self) -> BcVotes {
        BinCon::votes(self)
    }
    fn absorb(&mut self, from: NodeId, v: &BcVotes) {
        BinCon::absorb(self, from, v)
    }
    fn update(&mut self) {
        BinCon::update(self)
    }
}

/// One conformance target: initial correct states, the Byzantine menu and
/// the properties.
pub trait Target {
    type Node: Proto;
    fn name(&self) -> String;
    /// Correct nodes, in the order of [`Target::correct_ids`].
    fn initial(&self) -> Vec<Self::Node>;
    fn correct_ids(&self) -> Vec<NodeId>;
    fn byzantine(&self) -> NodeId;
    fn menu(&self) -> Vec<<Self::Node as Proto>::Votes>;
    /// Safety over one transition; returns the violated property.
    fn safety(&self, before: &[Self::Node], after: &[Self::Node]) -> Result<(), Violated>;
    /// Liveness on a fair fixpoint.
    fn liveness(&self, settled: &[Self::Node]) -> Result<(), Violated>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violated {
    pub property: &'static str,
    pub detail: String,
}

fn violated(property: &'static str, detail: String) -> Result<(), Violated> {
    Err(Violated { property, detail })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    /// Correct `from` reports its current state to correct `to`.
    Deliver { from: NodeId, to: NodeId },
    /// The Byzantine node reports menu entry `option` to correct `to`.
    Inject { option: usize, to: NodeId },
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Deliver { from, to } => write!(f, "{}->{}", from.0, to.0),
            Step::Inject { option, to } => write!(f, "byz#{option}->{}", to.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Counterexample {
    pub violated: Violated,
    /// Schedule from the initial state; liveness failures end in the state
    /// whose fair continuation failed.
    pub schedule: Vec<Step>,
}

#[derive(Clone, Debug, Default)]
pub struct Exploration {
    pub target: String,
    pub depth: usize,
    pub states: usize,
    pub transitions: usize,
    /// No new state appeared at the last level: the whole space was covered.
    pub closed: bool,
    pub violations: Vec<Counterexample>,
}

impl Exploration {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for Exploration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: depth {}, {} states, {} transitions{}, {} violations",
            self.target,
            self.depth,
            self.states,
            self.transitions,
            if self.closed { ", closed" } else { "" },
            self.violations.len()
        )?;
        if let Some(c) = self.violations.first() {
            let s: Vec<String> = c.schedule.iter().map(|s| s.to_string()).collect();
            write!(
                f,
                " (first: {} {} after [{}])",
                c.violated.property,
                c.violated.detail,
                s.join(" ")
            )?;
        }
        Ok(())
    }
}

struct Search<'a, T: Target> {
    target: &'a T,
    ids: Vec<NodeId>,
    menu: Vec<<T::Node as Proto>::Votes>,
}

impl<T: Target> Search<'_, T> {
    fn apply(&self, s: &[T::Node], step: Step) -> Vec<T::Node> {
        let mut next = s.to_vec();
        match step {
            Step::Deliver { from, to } => {
                let v = s[self.pos(from)].votes();
                let n = &mut next[self.pos(to)];
                n.absorb(from, &v);
                n.update();
            }
            Step::Inject { option, to } => {
                let n = &mut next[self.pos(to)];
                n.absorb(self.target.byzantine(), &self.menu[option]);
                n.update();
            }
        }
        next
    }

    fn pos(&self, id: NodeId) -> usize {
        self.ids
            .iter()
            .position(|i| *i == id)
            .expect("correct node")
    }

    fn steps(&self) -> Vec<Step> {
        let mut out = Vec::new();
        for &to in &self.ids {
            for &from in &self.ids {
                if from != to {
                    out.push(Step::Deliver { from, to });
                }
            }
            for option in 0..self.menu.len() {
                out.push(Step::Inject { option, to });
            }
        }
        out
    }

    /// Round-robin among correct nodes until a full pass changes nothing.
    fn settle(&self, s: &[T::Node]) -> Result<Vec<T::Node>, Violated> {
        let mut cur = s.to_vec();
        for _ in 0..SETTLE_LIMIT {
            let mut next = cur.clone();
            for &to in &self.ids {
                for &from in &self.ids {
                    if from != to {
                        let v = next[self.pos(from)].votes();
                        next[self.pos(to)].absorb(from, &v);
                    }
                }
                next[self.pos(to)].update();
            }
            self.target.safety(&cur, &next)?;
            if next == cur {
                return Ok(cur);
            }
            cur = next;
        }
        violated(
            "termination",
            format!("no fixpoint within {SETTLE_LIMIT} fair passes"),
        )
        .map(|_| cur)
    }
}

/// A visited state with its parent index and the step into it.
type Visited<N> = (Vec<N>, usize, Option<Step>);

/// Visits every state reachable within `depth` steps.
pub fn explore<T: Target>(target: &T, depth: usize) -> Exploration {
    let search = Search {
        target,
        ids: target.correct_ids(),
        menu: target.menu(),
    };
    let steps = search.steps();
    let root = target.initial();
    let mut index: HashMap<Vec<T::Node>, usize> = HashMap::new();
    let mut nodes: Vec<Visited<T::Node>> = vec![(root.clone(), 0, None)];
    index.insert(root, 0);
    let mut out = Exploration {
        target: target.name(),
        depth,
        ..Exploration::default()
    };
    let schedule = |nodes: &[Visited<T::Node>], mut i: usize| {
        let mut s = Vec::new();
        while let Some(step) = nodes[i].2 {
            s.push(step);
            i = nodes[i].1;
        }
        s.reverse();
        s
    };
    let mut frontier: VecDeque<usize> = VecDeque::from([0]);
    for level in 0..=depth {
        let mut next_frontier = VecDeque::new();
        while let Some(i) = frontier.pop_front() {
            let state = nodes[i].0.clone();
            if let Err(v) = search.settle(&state).and_then(|s| target.liveness(&s)) {
                out.violations.push(Counterexample {
                    violated: v,
                    schedule: schedule(&nodes, i),
                });
            }
            if level == depth {
                continue;
            }
            for &step in &steps {
                let next = search.apply(&state, step);
                out.transitions += 1;
                if let Err(v) = target.safety(&state, &next) {
                    let mut s = schedule(&nodes, i);
                    s.push(step);
                    out.violations.push(Counterexample {
                        violated: v,
                        schedule: s,
                    });
                }
                if !index.contains_key(&next) {
                    index.insert(next.clone(), nodes.len());
                    next_frontier.push_back(nodes.len());
                    nodes.push((next, i, Some(step)));
                }
            }
        }
        if level < depth && next_frontier.is_empty() {
            out.closed = true;
            break;
        }
        frontier = next_frontier;
    }
    out.states = nodes.len();
    out
}

fn n4() -> SystemParams {
    SystemParams::new(4, 1, 1).expect("n=4, t=1")
}

/// Resolved results must never change.
fn integrity<R: PartialEq + fmt::Debug>(
    property: &'static str,
    before: &[R],
    after: &[R],
    resolved: impl Fn(&R) -> bool,
) -> Result<(), Violated> {
    for (i, (b, a)) in before.iter().zip(after).enumerate() {
        if resolved(b) && b != a {
            return violated(property, format!("node {i}: {b:?} became {a:?}"));
        }
    }
    Ok(())
}

/// BRB at n=4: originator 0 correct (broadcasts `A`) or Byzantine (node 3).
#[derive(Clone, Debug)]
pub struct BrbTarget {
    pub byzantine_originator: bool,
}

impl BrbTarget {
    fn originator(&self) -> NodeId {
        NodeId(if self.byzantine_originator { 3 } else { 0 })
    }

    fn payload(&self, v: u8) -> Tagged {
        Tagged::value(self.originator(), Value(v))
    }
}

impl Target for BrbTarget {
    type Node = BrbInstance;

    fn name(&self) -> String {
        if self.byzantine_originator {
            "brb (byzantine originator)".into()
        } else {
            "brb (correct originator)".into()
        }
    }

    fn initial(&self) -> Vec<BrbInstance> {
        let p = n4();
        self.correct_ids()
            .into_iter()
            .map(|me| {
                let mut b = BrbInstance::new(p, me, self.originator());
                if me == self.originator() {
                    b.broadcast(self.payload(0));
                }
                b.update();
                b
            })
            .collect()
    }

    fn correct_ids(&self) -> Vec<NodeId> {
        vec![NodeId(0), NodeId(1), NodeId(2)]
    }

    fn byzantine(&self) -> NodeId {
        NodeId(3)
    }

    fn menu(&self) -> Vec<BrbVotes> {
        let (a, b) = (self.payload(0), self.payload(1));
        let sends = if self.byzantine_originator {
            vec![Some(a), Some(b)]
        } else {
            vec![None]
        };
        let mut out = Vec::new();
        for send in sends {
            for echo in [None, Some(a), Some(b)] {
                for ready in [
                    None,
                    Some(Content::Data(a)),
                    Some(Content::Data(b)),
                    Some(Content::Bolt),
                ] {
                    out.push(BrbVotes {
                        send,
                        echo,
                        ready,
                        ack: false,
                    });
                }
            }
        }
        out
    }

    fn safety(&self, before: &[BrbInstance], after: &[BrbInstance]) -> Result<(), Violated> {
        let d: Vec<_> = after.iter().map(|b| b.deliver()).collect();
        if !self.byzantine_originator {
            let want = DeliveryResult::Decided(self.payload(0));
            if let Some(x) = d.iter().find(|x| x.is_resolved() && **x != want) {
                return violated("brb-validity", format!("delivered {x:?}"));
            }
        }
        let prev: Vec<_> = before.iter().map(|b| b.deliver()).collect();
        integrity("brb-integrity", &prev, &d, |x| x.is_resolved())?;
        let mut resolved = d.iter().filter(|x| x.is_resolved());
        if let Some(first) = resolved.next() {
            if let Some(other) = resolved.find(|x| *x != first) {
                return violated("brb-no-duplicity", format!("{first:?} and {other:?}"));
            }
        }
        Ok(())
    }

    fn liveness(&self, s: &[BrbInstance]) -> Result<(), Violated> {
        let d: Vec<_> = s.iter().map(|b| b.deliver()).collect();
        if !self.byzantine_originator && d.iter().any(|x| x.is_pending()) {
            return violated("brb-completion-1", format!("results {d:?}"));
        }
        if d.iter().any(|x| x.is_resolved()) && d.iter().any(|x| x.is_pending()) {
            return violated("brb-completion-2", format!("results {d:?}"));
        }
        Ok(())
    }
}

/// BV at n=4 with the given inputs at correct nodes 0, 1, 2.
#[derive(Clone, Debug)]
pub struct BvTarget {
    pub inputs: [bool; 3],
}

impl Target for BvTarget {
    type Node = BvInstance;

    fn name(&self) -> String {
        format!("bv inputs {:?}", self.inputs)
    }

    fn initial(&self) -> Vec<BvInstance> {
        let p = n4();
        self.correct_ids()
            .into_iter()
            .zip(self.inputs)
            .map(|(me, b)| {
                let mut i = BvInstance::new(p, me);
                i.broadcast(b);
                i
            })
            .collect()
    }

    fn correct_ids(&self) -> Vec<NodeId> {
        vec![NodeId(0), NodeId(1), NodeId(2)]
    }

    fn byzantine(&self) -> NodeId {
        NodeId(3)
    }

    fn menu(&self) -> Vec<BoolSet> {
        (0..4).map(BoolSet).collect()
    }

    fn safety(&self, before: &[BvInstance], after: &[BvInstance]) -> Result<(), Violated> {
        for (i, n) in after.iter().enumerate() {
            if let Some(b) = n.bin_values().iter().find(|b| !self.inputs.contains(b)) {
                return violated("bv-validity", format!("node {i} holds {b} in binValues"));
            }
        }
        // binValues only grows.
        for (i, (b, a)) in before.iter().zip(after).enumerate() {
            if b.bin_values().iter().any(|x| !a.bin_values().contains(x)) {
                return violated(
                    "bv-integrity",
                    format!("node {i}: {} became {}", b.bin_values(), a.bin_values()),
                );
            }
        }
        Ok(())
    }

    fn liveness(&self, s: &[BvInstance]) -> Result<(), Violated> {
        let sets: Vec<BoolSet> = s.iter().map(|n| n.bin_values()).collect();
        if sets.iter().any(|b| b.is_empty()) {
            return violated("bv-completion", format!("binValues {sets:?}"));
        }
        if sets.iter().any(|b| *b != sets[0]) {
            return violated("bv-uniformity", format!("binValues {sets:?}"));
        }
        Ok(())
    }
}

/// Binary consensus at n=4 with the given proposals at correct nodes 0, 1, 2.
#[derive(Clone, Debug)]
pub struct BcTarget {
    pub inputs: [bool; 3],
    pub coin: Coin,
}

impl Target for BcTarget {
    type Node = BinCon;

    fn name(&self) -> String {
        format!("bincon inputs {:?} coin {:?}", self.inputs, self.coin)
    }

    fn initial(&self) -> Vec<BinCon> {
        let p = n4();
        self.correct_ids()
            .into_iter()
            .zip(self.inputs)
            .map(|(me, b)| {
                let mut c = BinCon::new(p, me, self.coin.clone(), DEFAULT_ROUND_CAP);
                c.propose(b);
                c
            })
            .collect()
    }

    fn correct_ids(&self) -> Vec<NodeId> {
        vec![NodeId(0), NodeId(1), NodeId(2)]
    }

    fn byzantine(&self) -> NodeId {
        NodeId(3)
    }

    /// Silence, a decision report, or consistent votes for one value (or
    /// both) through the first one or two rounds, with or without AUX.
    fn menu(&self) -> Vec<BcVotes> {
        let mut out = vec![BcVotes::default()];
        for d in [false, true] {
            out.push(BcVotes {
                rounds: Vec::new(),
                decided: Some(d),
            });
        }
        for forward in [BoolSet::only(false), BoolSet::only(true), BoolSet(3)] {
            for aux in [None, Some(false), Some(true)] {
                for len in 1..=2 {
                    out.push(BcVotes {
                        rounds: vec![BcRoundVotes { forward, aux }; len],
                        decided: None,
                    });
                }
            }
        }
        out
    }

    fn safety(&self, before: &[BinCon], after: &[BinCon]) -> Result<(), Violated> {
        let d: Vec<_> = after.iter().map(|c| c.result()).collect();
        for x in &d {
            if let DeliveryResult::Decided(v) = x {
                if !self.inputs.contains(v) {
                    return violated(
                        "bc-validity",
                        format!("decided {v}, inputs {:?}", self.inputs),
                    );
                }
            }
        }
        let prev: Vec<_> = before.iter().map(|c| c.result()).collect();
        integrity("bc-integrity", &prev, &d, |x| x.is_resolved())?;
        let vals: Vec<bool> = d.iter().filter_map(|x| x.decided().copied()).collect();
        if vals.iter().any(|v| *v != vals[0]) {
            return violated("bc-agreement", format!("results {d:?}"));
        }
        Ok(())
    }

    fn liveness(&self, s: &[BinCon]) -> Result<(), Violated> {
        let d: Vec<_> = s.iter().map(|c| c.result()).collect();
        if d.iter().any(|x| x.decided().is_none()) {
            return violated("bc-completion", format!("results {d:?}"));
        }
        Ok(())
    }
}

/// Targets and depths of the conformance suite. Each run covers every
/// schedule up to its depth; smaller spaces are explored until closed.
pub fn conformance_suite() -> Vec<Exploration> {
    let mut out = vec![
        explore(
            &BrbTarget {
                byzantine_originator: false,
            },
            7,
        ),
        explore(
            &BrbTarget {
                byzantine_originator: true,
            },
            4,
        ),
    ];
    for inputs in [
        [true; 3],
        [false; 3],
        [true, true, false],
        [false, false, true],
    ] {
        out.push(explore(&BvTarget { inputs }, 16));
    }
    for inputs in [[true; 3], [true, false, true], [false, true, false]] {
        out.push(explore(
            &BcTarget {
                inputs,
                coin: Coin::Seeded(1),
            },
            4,
        ));
        let coin = Coin::Script(vec![true, false]);
        out.push(explore(&BcTarget { inputs, coin }, 3));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brb_shallow_is_clean() {
        for byzantine_originator in [false, true] {
            let r = explore(
                &BrbTarget {
                    byzantine_originator,
                },
                3,
            );
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn bv_shallow_is_clean() {
        let r = explore(
            &BvTarget {
                inputs: [true, false, true],
            },
            4,
        );
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn bc_shallow_is_clean() {
        let r = explore(
            &BcTarget {
                inputs: [true, false, false],
                coin: Coin::Seeded(3),
            },
            2,
        );
        assert!(r.passed(), "{r}");
    }

    /// A broken target must be caught: claim the originator broadcast `B`.
    #[test]
    fn detects_validity_violation() {
        struct Wrong(BrbTarget);
        impl Target for Wrong {
            type Node = BrbInstance;
            fn name(&self) -> String {
                "wrong".into()
            }
            fn initial(&self) -> Vec<BrbInstance> {
                self.0.initial()
            }
            fn correct_ids(&self) -> Vec<NodeId> {
                self.0.correct_ids()
            }
            fn byzantine(&self) -> NodeId {
                self.0.byzantine()
            }
            fn menu(&self) -> Vec<BrbVotes> {
                self.0.menu()
            }
            fn safety(&self, _: &[BrbInstance], after: &[BrbInstance]) -> Result<(), Violated> {
                let want = DeliveryResult::Decided(self.0.payload(1));
                match after.iter().find(|b| b.deliver().is_resolved()) {
                    Some(b) if b.deliver() != want => violated("brb-validity", String::new()),
                    _ => Ok(()),
                }
            }
            fn liveness(&self, _: &[BrbInstance]) -> Result<(), Violated> {
                Ok(())
            }
        }
        let r = explore(
            &Wrong(BrbTarget {
                byzantine_originator: false,
            }),
            5,
        );
        assert!(!r.passed());
        assert!(r
            .violations
            .iter()
            .all(|c| c.violated.property == "brb-validity"));
        assert!(r.violations.iter().any(|c| !c.schedule.is_empty()));
    }

    #[test]
    fn fair_continuation_delivers() {
        // Settling a fresh correct-originator state reaches delivery.
        let t = BrbTarget {
            byzantine_originator: false,
        };
        let s = Search {
            target: &t,
            ids: t.correct_ids(),
            menu: t.menu(),
        };
        let done = s.settle(&t.initial()).unwrap();
        assert!(done
            .iter()
            .all(|b| b.deliver() == DeliveryResult::Decided(t.payload(0))));
    }
}
