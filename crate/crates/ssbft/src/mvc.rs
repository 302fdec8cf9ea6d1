//! Self-stabilizing multivalued consensus: every node VBB-broadcasts its
//! proposal, proposes `sameValue()` to a binary consensus object once `n-t`
//! senders resolved, and keeps BV-broadcasting `sameValue()` so that a
//! corrupted `True` decision without support is detected.

use serde::{Deserialize, Serialize};

use crate::bincon::{BinCon, Coin};
use crate::bv::BvInstance;
use crate::types::{Alphabet, DeliveryResult, NodeId, SystemParams, Value};
use crate::vbb::{CountPhase, VbbBranch, VbbState};
use crate::wire::{ObjectSnapshot, Phase};

/// Construction parameters shared by all nodes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MvcConfig {
    pub params: SystemParams,
    pub alphabet: Alphabet,
    pub mode: CountPhase,
    pub coin: Coin,
    pub round_cap: usize,
}

/// The branch of `result()` that produced the outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MvcBranch {
    /// Binary consensus not proposed or undecided: ⊥.
    NotReady,
    /// Binary consensus decided false: ⚡.
    Rejected,
    /// Binary consensus returned ⚡: ⚡.
    BinaryError,
    /// A value delivered by `n-2t` senders: the value.
    Value,
    /// `True` decided but never BV-delivered, or no value can be backed: ⚡.
    Unsupported,
    /// ⊥.
    Incomplete,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mvc {
    pub(crate) params: SystemParams,
    pub(crate) me: NodeId,
    pub(crate) vbb: VbbState,
    pub(crate) bv: BvInstance,
    pub(crate) bc: BinCon,
}

impl Mvc {
    pub fn new(cfg: &MvcConfig, me: NodeId) -> Self {
        Mvc {
            params: cfg.params,
            me,
            vbb: VbbState::new(cfg.params, me, cfg.alphabet, cfg.mode),
            bv: BvInstance::new(cfg.params, me),
            bc: BinCon::new(cfg.params, me, cfg.coin.clone(), cfg.round_cap),
        }
    }

    pub fn vbb(&self) -> &VbbState {
        &self.vbb
    }

    pub fn bv(&self) -> &BvInstance {
        &self.bv
    }

    pub fn bc(&self) -> &BinCon {
        &self.bc
    }

    pub fn propose(&mut self, v: Value) {
        self.vbb.vbb_broadcast(v);
    }

    /// At least `n-t` senders resolved (⚡ counts).
    pub fn mc_wait(&self) -> bool {
        self.resolved().filter(|d| d.is_resolved()).count() >= self.params.thresholds().n_minus_t
    }

    fn resolved(&self) -> impl Iterator<Item = DeliveryResult> + '_ {
        self.params.nodes().map(|k| self.vbb.vbb_deliver(k))
    }

    /// Some value delivered by `n-2t` senders, and it is the only value
    /// delivered by any sender.
    pub fn same_value(&self) -> bool {
        let mut seen: Option<Value> = None;
        let mut count = 0;
        for d in self.resolved() {
            if let DeliveryResult::Decided(v) = d {
                match seen {
                    None => seen = Some(v),
                    Some(w) if w != v => return false,
                    _ => {}
                }
                count += 1;
            }
        }
        seen.is_some() && count >= self.params.thresholds().n_minus_2t
    }

    fn backed_value(&self) -> Option<Value> {
        let th = self.params.thresholds().n_minus_2t;
        let all: Vec<DeliveryResult> = self.resolved().collect();
        all.iter().filter_map(|d| d.decided().copied()).find(|v| {
            all.iter()
                .filter(|d| **d == DeliveryResult::Decided(*v))
                .count()
                >= th
        })
    }

    /// No value can still reach `n-2t` deliveries, even if every open sender
    /// delivers it. A clean `True` decision rules this out. A stalled ⚡ counts
    /// as open while its value can still be validated.
    fn unbackable(&self) -> bool {
        let branches: Vec<(DeliveryResult, VbbBranch)> = self
            .params
            .nodes()
            .map(|k| self.vbb.vbb_deliver_branch(k))
            .collect();
        let all: Vec<DeliveryResult> = branches.iter().map(|b| b.0).collect();
        let pending = self
            .params
            .nodes()
            .zip(&branches)
            .filter(|(k, (d, _))| d.is_pending() || self.vbb.stall_is_open(*k))
            .count();
        let best = all
            .iter()
            .filter_map(|d| d.decided())
            .map(|v| all.iter().filter(|d| d.decided() == Some(v)).count())
            .max()
            .unwrap_or(0);
        best + pending < self.params.thresholds().n_minus_2t
    }

    pub fn result(&self) -> DeliveryResult {
        self.result_branch().0
    }

    pub fn result_branch(&self) -> (DeliveryResult, MvcBranch) {
        use DeliveryResult::*;
        if !self.bc.is_active() {
            return (Pending, MvcBranch::NotReady);
        }
        match self.bc.result() {
            Pending => (Pending, MvcBranch::NotReady),
            Decided(false) => (Error, MvcBranch::Rejected),
            Error => (Error, MvcBranch::BinaryError),
            Decided(true) => {
                if let Some(v) = self.backed_value() {
                    (Decided(v), MvcBranch::Value)
                } else if self.mc_wait()
                    && (!self.bv.bin_values().contains(true) || self.unbackable())
                {
                    (Error, MvcBranch::Unsupported)
                } else {
                    (Pending, MvcBranch::Incomplete)
                }
            }
        }
    }

    /// Do-forever body.
    pub fn tick(&mut self) {
        self.vbb.tick();
        // `sameValue()` held when `True` was BV-broadcast, and the value it
        // saw stays delivered; without one the `True` input is stale.
        if self.bv.proposed.contains(true) && self.backed_value().is_none() {
            self.bv.retract(true);
        }
        if self.mc_wait() {
            let sv = self.same_value();
            if !self.bc.is_active() {
                self.bc.propose(sv);
            }
            self.bv.broadcast(sv);
        }
    }

    pub fn update(&mut self) {
        self.vbb.update();
        self.bv.update();
        self.bc.update();
    }

    pub fn snapshot(&self) -> ObjectSnapshot {
        let row = |p: Phase| self.vbb.brb[p.index()].iter().map(|b| b.votes()).collect();
        ObjectSnapshot {
            brb: [row(Phase::Init), row(Phase::Valid)],
            bv: self.bv.forwarded(),
            bc: self.bc.votes(),
        }
    }

    pub fn absorb(&mut self, from: NodeId, s: &ObjectSnapshot) {
        absorb_rows(&mut self.vbb, from, s);
        self.bv.absorb(from, s.bv);
        self.bc.absorb(from, &s.bc);
    }

    pub fn recycle(&mut self) {
        self.vbb.recycle();
        self.bv.recycle();
        self.bc.recycle();
    }
}

pub(crate) fn absorb_rows(vbb: &mut VbbState, from: NodeId, s: &ObjectSnapshot) {
    let blank = Default::default();
    for p in Phase::ALL {
        let row = &s.brb[p.index()];
        for (k, inst) in vbb.brb[p.index()].iter_mut().enumerate() {
            inst.absorb(from, row.get(k).unwrap_or(&blank));
        }
    }
}
