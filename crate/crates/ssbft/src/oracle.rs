//! Non-stabilizing reference stack used as a differential oracle: a blocking
//! validated broadcast and the multivalued consensus reduction built on it.
//! Every `wait` becomes a guard re-evaluated on each update, and every
//! delivery is write-once.

use crate::bincon::BinCon;
use crate::mvc::{absorb_rows, MvcConfig};
use crate::types::{
    differ, equal, Alphabet, DeliveryResult, Multiset, NodeId, SystemParams, Value,
};
use crate::vbb::{CountPhase, VbbState};
use crate::wire::{Body, BoolSet, ObjectSnapshot, Phase, Tagged};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OracleMvc {
    pub(crate) params: SystemParams,
    pub(crate) me: NodeId,
    pub(crate) alphabet: Alphabet,
    pub(crate) brb: VbbState,
    pub(crate) proposal: Option<Value>,
    pub(crate) vbb: Vec<DeliveryResult>,
    pub(crate) sent_valid: bool,
    pub(crate) bc: BinCon,
    pub(crate) decision: DeliveryResult,
}

impl OracleMvc {
    pub fn new(cfg: &MvcConfig, me: NodeId) -> Self {
        OracleMvc {
            params: cfg.params,
            me,
            alphabet: cfg.alphabet,
            brb: VbbState::new(cfg.params, me, cfg.alphabet, CountPhase::Init),
            proposal: None,
            vbb: vec![DeliveryResult::Pending; cfg.params.n],
            sent_valid: false,
            bc: BinCon::new(cfg.params, me, cfg.coin.clone(), cfg.round_cap),
            decision: DeliveryResult::Pending,
        }
    }

    pub fn propose(&mut self, v: Value) {
        if self.proposal.is_none() {
            self.proposal = Some(v);
            self.brb.vbb_broadcast(v);
        }
    }

    /// VBB delivery from `k`, write-once.
    pub fn vbb_deliver(&self, k: NodeId) -> DeliveryResult {
        self.vbb[k.0]
    }

    pub fn result(&self) -> DeliveryResult {
        self.decision
    }

    /// Multiset of INIT-phase deliveries.
    fn init_rec(&self) -> Multiset {
        let d: Vec<DeliveryResult> = self
            .params
            .nodes()
            .map(|k| match self.brb.brb(Phase::Init, k).deliver() {
                DeliveryResult::Decided(Tagged {
                    body: Body::Value(v),
                    ..
                }) => DeliveryResult::Decided(v),
                DeliveryResult::Pending => DeliveryResult::Pending,
                _ => DeliveryResult::Error,
            })
            .collect();
        Multiset::from_results(self.params.nodes().zip(d.iter()))
    }

    fn vbb_rec(&self) -> Multiset {
        Multiset::from_results(self.params.nodes().zip(self.vbb.iter()))
    }

    pub fn update(&mut self) {
        self.brb.update();
        let th = self.params.thresholds();
        let rec = self.init_rec();

        if !self.sent_valid && rec.len() >= th.n_minus_t {
            if let Some(v) = self.proposal {
                self.sent_valid = true;
                let me = self.me;
                let x = equal(v, &rec) >= th.n_minus_2t;
                self.brb
                    .brb_mut(Phase::Valid, me)
                    .broadcast(Tagged::flag(me, x));
            }
        }

        for k in self.params.nodes() {
            if self.vbb[k.0].is_resolved() {
                continue;
            }
            let init = self.brb.brb(Phase::Init, k).deliver();
            let valid = self.brb.brb(Phase::Valid, k).deliver();
            if init.is_pending() || valid.is_pending() {
                continue;
            }
            self.vbb[k.0] = match (init, valid) {
                (
                    DeliveryResult::Decided(Tagged {
                        origin: o1,
                        body: Body::Value(v),
                    }),
                    DeliveryResult::Decided(Tagged {
                        origin: o2,
                        body: Body::Flag(x),
                    }),
                ) if o1 == k && o2 == k && self.alphabet.contains(v) => {
                    if x && equal(v, &rec) >= th.n_minus_2t {
                        DeliveryResult::Decided(v)
                    } else if !x && differ(v, &rec) >= th.t_plus_1 {
                        DeliveryResult::Error
                    } else {
                        DeliveryResult::Pending
                    }
                }
                _ => DeliveryResult::Error,
            };
        }

        let vrec = self.vbb_rec();
        if !self.bc.is_active() && vrec.len() >= th.n_minus_t {
            self.bc.propose(same_value(&vrec, th.n_minus_2t));
        }
        self.bc.update();
        if self.decision.is_pending() {
            self.decision = match self.bc.result() {
                DeliveryResult::Pending => DeliveryResult::Pending,
                DeliveryResult::Error | DeliveryResult::Decided(false) => DeliveryResult::Error,
                DeliveryResult::Decided(true) => self
                    .alphabet
                    .values()
                    .find(|v| equal(*v, &vrec) >= th.n_minus_2t)
                    .map_or(DeliveryResult::Pending, DeliveryResult::Decided),
            };
        }
    }

    pub fn snapshot(&self) -> ObjectSnapshot {
        let row = |p: Phase| self.brb.brb[p.index()].iter().map(|b| b.votes()).collect();
        ObjectSnapshot {
            brb: [row(Phase::Init), row(Phase::Valid)],
            bv: BoolSet::EMPTY,
            bc: self.bc.votes(),
        }
    }

    pub fn absorb(&mut self, from: NodeId, s: &ObjectSnapshot) {
        absorb_rows(&mut self.brb, from, s);
        self.bc.absorb(from, &s.bc);
    }
}

/// Some non-⚡ value reaches `n-2t` and all non-⚡ entries equal it.
fn same_value(rec: &Multiset, n_minus_2t: usize) -> bool {
    use crate::types::Entry;
    let vals: Vec<Value> = rec
        .iter()
        .filter_map(|(_, e)| match e {
            Entry::Val(v) => Some(*v),
            Entry::Bolt => None,
        })
        .collect();
    match vals.first() {
        Some(v) => vals.iter().all(|w| w == v) && equal(*v, rec) >= n_minus_2t,
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Entry;

    #[test]
    fn same_value_over_frozen_multiset() {
        let a = Entry::Val(Value(0));
        let b = Entry::Val(Value(1));
        assert!(same_value(&[a, a, Entry::Bolt].into_iter().collect(), 2));
        assert!(!same_value(&[a, b, a].into_iter().collect(), 2));
        assert!(!same_value(
            &[a, Entry::Bolt, Entry::Bolt].into_iter().collect(),
            2
        ));
        assert!(!same_value(&Multiset::new(), 2));
    }
}
