//! Binary-values broadcast: forward a boolean once `t+1` nodes forward it,
//! deliver it into `binValues` once `2t+1` nodes forward it.
//!
//! After a transient fault, an own forward that is neither proposed nor
//! forwarded by a peer, and a delivered value with at most `t` forwards, are
//! dropped. Neither can happen in a clean execution.

use crate::types::{NodeId, SystemParams};
use crate::wire::BoolSet;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BvInstance {
    pub(crate) params: SystemParams,
    pub(crate) me: NodeId,
    /// Values this node broadcast itself.
    pub(crate) proposed: BoolSet,
    /// Per-node forward sets; entry `me` is this node's own.
    pub(crate) forwards: Vec<BoolSet>,
    pub(crate) bin_values: BoolSet,
}

impl BvInstance {
    pub fn new(params: SystemParams, me: NodeId) -> Self {
        BvInstance {
            params,
            me,
            proposed: BoolSet::EMPTY,
            forwards: vec![BoolSet::EMPTY; params.n],
            bin_values: BoolSet::EMPTY,
        }
    }

    /// Adds `b` to this node's forwarding stream. May be repeated.
    pub fn broadcast(&mut self, b: bool) {
        self.proposed.insert(b);
        self.forwards[self.me.0].insert(b);
        self.update();
    }

    /// Withdraws `b` from this node's own inputs.
    pub(crate) fn retract(&mut self, b: bool) {
        self.proposed.remove(b);
        self.update();
    }

    pub fn bin_values(&self) -> BoolSet {
        self.bin_values
    }

    pub fn forwarded(&self) -> BoolSet {
        self.forwards[self.me.0]
    }

    pub fn is_active(&self) -> bool {
        !self.forwarded().is_empty()
    }

    pub fn absorb(&mut self, from: NodeId, set: BoolSet) {
        if from != self.me && from.0 < self.params.n {
            self.forwards[from.0] = BoolSet(set.0 & 3);
        }
    }

    pub fn update(&mut self) {
        let t = self.params.t;
        let me = self.me.0;
        self.proposed = BoolSet(self.proposed.0 & 3);
        self.forwards[me] = BoolSet(self.forwards[me].0 & 3);
        self.bin_values = BoolSet(self.bin_values.0 & 3);
        for b in [false, true] {
            let peers = (0..self.params.n)
                .filter(|&j| j != me && self.forwards[j].contains(b))
                .count();
            if self.forwards[me].contains(b) && !self.proposed.contains(b) && peers == 0 {
                self.forwards[me].remove(b);
            }
            let count = self.forwards.iter().filter(|s| s.contains(b)).count();
            if self.bin_values.contains(b) && count <= t {
                self.bin_values.remove(b);
            }
        }
        for b in [false, true] {
            let count = self.forwards.iter().filter(|s| s.contains(b)).count();
            if count > t {
                self.forwards[self.me.0].insert(b);
            }
            let count = self.forwards.iter().filter(|s| s.contains(b)).count();
            if count > 2 * t {
                self.bin_values.insert(b);
            }
        }
    }

    pub fn recycle(&mut self) {
        *self = BvInstance::new(self.params, self.me);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(params: SystemParams, inputs: &[Option<bool>], iters: usize) -> Vec<BvInstance> {
        let mut insts: Vec<_> = params
            .nodes()
            .map(|me| BvInstance::new(params, me))
            .collect();
        for (i, b) in inputs.iter().enumerate() {
            if let Some(b) = b {
                insts[i].broadcast(*b);
            }
        }
        for _ in 0..iters {
            let sets: Vec<BoolSet> = insts.iter().map(|i| i.forwarded()).collect();
            for i in insts.iter_mut() {
                for (j, s) in sets.iter().enumerate() {
                    i.absorb(NodeId(j), *s);
                }
                i.update();
            }
        }
        insts
    }

    #[test]
    fn unanimous_true() {
        let p = SystemParams::new(4, 1, 1).unwrap();
        let r = run(p, &[Some(true); 4], 3);
        assert!(r.iter().all(|i| i.bin_values() == BoolSet::only(true)));
    }

    #[test]
    fn split_inputs_deliver_both() {
        let p = SystemParams::new(7, 2, 1).unwrap();
        let inputs = [
            Some(true),
            Some(true),
            Some(true),
            Some(false),
            Some(false),
            Some(false),
            Some(true),
        ];
        let r = run(p, &inputs, 4);
        assert!(r.iter().all(|i| i.bin_values().len() == 2));
    }

    #[test]
    fn value_from_faulty_only_is_not_delivered() {
        let p = SystemParams::new(4, 1, 1).unwrap();
        let mut i = BvInstance::new(p, NodeId(0));
        i.broadcast(true);
        i.absorb(NodeId(3), BoolSet::only(false));
        i.update();
        assert!(!i.bin_values().contains(false));
        assert!(!i.forwarded().contains(false));
    }

    #[test]
    fn thresholds_at_n4() {
        let p = SystemParams::new(4, 1, 1).unwrap();
        let mut i = BvInstance::new(p, NodeId(0));
        assert!(i.bin_values().is_empty());
        i.absorb(NodeId(1), BoolSet::only(true));
        i.update();
        assert!(!i.forwarded().contains(true));
        i.absorb(NodeId(2), BoolSet::only(true));
        i.update();
        assert!(i.forwarded().contains(true));
        assert_eq!(i.bin_values(), BoolSet::only(true));
        i.recycle();
        assert!(i.bin_values().is_empty());
    }
}
