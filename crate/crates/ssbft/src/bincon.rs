//! Randomized binary consensus in the BV / AUX / common-coin round pattern.
//!
//! Each round runs a binary-values broadcast of the current estimate, then an
//! AUX vote restricted to `binValues`, then consults the common coin. A node
//! decides `v` when the surviving votes are exactly `{v}` and the coin shows
//! `v`. Decided nodes keep taking part in rounds until `n-t` nodes report a
//! decision, and `t+1` matching reports let a lagging node decide directly.
//! BV forwarding stays active in rounds a node has already left.
//! Running out of rounds yields ⚡.

use crate::bv::BvInstance;
use crate::types::{DeliveryResult, NodeId, SystemParams};
use crate::wire::{BcRoundVotes, BcVotes, BoolSet};

pub const DEFAULT_ROUND_CAP: usize = 64;

/// Common coin shared by all nodes of one consensus instance.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Coin {
    /// Deterministic function of the seed and the round.
    Seeded(u64),
    /// Test override: round `r` reads entry `(r-1) mod len`.
    Script(Vec<bool>),
}

impl Coin {
    pub fn flip(&self, round: usize) -> bool {
        match self {
            Coin::Seeded(seed) => {
                splitmix64(seed ^ (round as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)) & 1 == 1
            }
            Coin::Script(v) if v.is_empty() => false,
            Coin::Script(v) => v[(round.max(1) - 1) % v.len()],
        }
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BcRound {
    pub(crate) bv: BvInstance,
    /// Per-node AUX vote; entry `me` is this node's own.
    pub(crate) aux: Vec<Option<bool>>,
}

impl BcRound {
    fn new(params: SystemParams, me: NodeId) -> Self {
        BcRound {
            bv: BvInstance::new(params, me),
            aux: vec![None; params.n],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinCon {
    pub(crate) params: SystemParams,
    pub(crate) me: NodeId,
    pub(crate) coin: Coin,
    pub(crate) cap: usize,
    pub(crate) proposed: Option<bool>,
    pub(crate) est: bool,
    /// Current round, 1-based; 0 before proposing.
    pub(crate) round: usize,
    pub(crate) rounds: Vec<BcRound>,
    pub(crate) decided: DeliveryResult<bool>,
    /// Per-node decision reports; entry `me` mirrors `decided`.
    pub(crate) reports: Vec<Option<bool>>,
}

impl BinCon {
    pub fn new(params: SystemParams, me: NodeId, coin: Coin, cap: usize) -> Self {
        BinCon {
            params,
            me,
            coin,
            cap: cap.max(1),
            proposed: None,
            est: false,
            round: 0,
            rounds: Vec::new(),
            decided: DeliveryResult::Pending,
            reports: vec![None; params.n],
        }
    }

    /// First proposal wins; later ones are ignored.
    pub fn propose(&mut self, b: bool) {
        if self.proposed.is_none() {
            self.proposed = Some(b);
            self.est = b;
            self.round = 1;
            self.update();
        }
    }

    pub fn is_active(&self) -> bool {
        self.proposed.is_some()
    }

    pub fn result(&self) -> DeliveryResult<bool> {
        self.decided
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn recycle(&mut self) {
        *self = BinCon::new(self.params, self.me, self.coin.clone(), self.cap);
    }

    pub(crate) fn ensure_round(&mut self, r: usize) {
        while self.rounds.len() < r {
            self.rounds.push(BcRound::new(self.params, self.me));
        }
    }

    pub fn votes(&self) -> BcVotes {
        if self.proposed.is_none() {
            return BcVotes::default();
        }
        let upto = self.round.min(self.rounds.len()).min(self.cap);
        BcVotes {
            rounds: self.rounds[..upto]
                .iter()
                .map(|r| BcRoundVotes {
                    forward: r.bv.forwarded(),
                    aux: r.aux[self.me.0],
                })
                .collect(),
            decided: self.decided.decided().copied(),
        }
    }

    pub fn absorb(&mut self, from: NodeId, v: &BcVotes) {
        if from == self.me || from.0 >= self.params.n {
            return;
        }
        let upto = v.rounds.len().min(self.cap);
        self.ensure_round(upto);
        for (r, rv) in v.rounds[..upto].iter().enumerate() {
            self.rounds[r].bv.absorb(from, rv.forward);
            self.rounds[r].aux[from.0] = rv.aux;
        }
        for r in &mut self.rounds[upto..] {
            r.bv.absorb(from, BoolSet::EMPTY);
            r.aux[from.0] = None;
        }
        self.reports[from.0] = v.decided;
    }

    pub fn update(&mut self) {
        let me = self.me.0;
        if self.proposed.is_none() {
            self.reports[me] = self.decided.decided().copied();
            return;
        }
        let th = self.params.thresholds();
        // t+1 peers contradicting a decision means it came from a fault.
        if let DeliveryResult::Decided(d) = self.decided {
            let against = (0..self.params.n)
                .filter(|&j| j != me && self.reports[j] == Some(!d))
                .count();
            if against >= th.t_plus_1 {
                self.decided = DeliveryResult::Decided(!d);
            }
        }
        if self.decided.is_pending() {
            for b in [false, true] {
                if self.reports.iter().filter(|r| **r == Some(b)).count() >= th.t_plus_1 {
                    self.decided = DeliveryResult::Decided(b);
                    break;
                }
            }
        }
        self.round = self.round.max(1);
        // Earlier rounds keep relaying so peers still in them can finish.
        let past = self.round.min(self.rounds.len() + 1) - 1;
        for r in &mut self.rounds[..past] {
            r.bv.update();
        }
        loop {
            self.reports[me] = self.decided.decided().copied();
            if self.round > self.cap {
                if self.decided.is_pending() {
                    self.decided = DeliveryResult::Error;
                }
                break;
            }
            if self.decided.is_resolved() && self.reports.iter().flatten().count() >= th.n_minus_t {
                break;
            }
            let r = self.round;
            self.ensure_round(r);
            let est = self.est;
            let round = &mut self.rounds[r - 1];
            round.bv.broadcast(est);
            round.bv.update();
            let bin = round.bv.bin_values();
            if bin.is_empty() {
                break;
            }
            match round.aux[me] {
                Some(w) if bin.contains(w) => {}
                _ => round.aux[me] = Some(if bin.contains(est) { est } else { !est }),
            }
            let mut vals = BoolSet::EMPTY;
            let mut count = 0;
            for w in round.aux.iter().flatten() {
                if bin.contains(*w) {
                    vals.insert(*w);
                    count += 1;
                }
            }
            if count < th.n_minus_t {
                break;
            }
            let s = self.coin.flip(r);
            if vals.len() == 1 {
                let v = vals.contains(true);
                self.est = v;
                if v == s && self.decided.is_pending() {
                    self.decided = DeliveryResult::Decided(v);
                }
            } else {
                self.est = s;
            }
            self.round += 1;
        }
        self.reports[me] = self.decided.decided().copied();
    }
}
