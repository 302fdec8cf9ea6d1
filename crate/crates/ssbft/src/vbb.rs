//! Self-stabilizing validated Byzantine broadcast over a `2 x n` array of BRB
//! instances, `brb[phase][originator]`.
//!
//! The counting macros range over one row: `vbb_wait(phs)` counts originators
//! whose phase-`phs` instance has delivered, and so on. `vbb_deliver(k)` is a
//! pure query that combines the INIT and VALID deliveries of `k` with these
//! counts and with three consistency tests.

use serde::{Deserialize, Serialize};

use crate::brb::{BrbInstance, Shape};
use crate::types::{Alphabet, DeliveryResult, NodeId, SystemParams, Value};
use crate::wire::{Body, Phase, Tagged};

/// Which row the value check of a validated sender counts in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountPhase {
    /// Count INIT deliveries, the values the validation flag refers to.
    #[default]
    Init,
    /// Count VALID deliveries literally. Those carry flags, never values, so
    /// every sender resolves to ⚡.
    Valid,
}

impl CountPhase {
    pub fn phase(self) -> Phase {
        match self {
            CountPhase::Init => Phase::Init,
            CountPhase::Valid => Phase::Valid,
        }
    }
}

/// The branch of `vbb_deliver` that produced a result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VbbBranch {
    /// VALID delivered without INIT: ⚡.
    ValidWithoutInit,
    /// One of the phases still pending: ⊥.
    Waiting,
    /// A payload names another originator: ⚡.
    WrongOrigin,
    /// Payload shape or value outside the alphabet: ⚡.
    Malformed,
    /// Flag true and value confirmed: the value.
    Validated,
    /// Flag false and value refuted: ⚡.
    Refuted,
    /// `n-t` VALID deliveries but neither confirmation nor refutation: ⚡.
    Stalled,
    /// ⊥.
    Incomplete,
}

impl VbbBranch {
    /// Branches that can only fire after a transient fault or on faulty input.
    pub fn is_consistency_test(self) -> bool {
        matches!(
            self,
            VbbBranch::ValidWithoutInit
                | VbbBranch::WrongOrigin
                | VbbBranch::Malformed
                | VbbBranch::Stalled
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct VbbState {
    pub(crate) params: SystemParams,
    pub(crate) me: NodeId,
    pub(crate) alphabet: Alphabet,
    pub(crate) mode: CountPhase,
    pub(crate) brb: [Vec<BrbInstance>; 2],
}

impl VbbState {
    pub fn new(params: SystemParams, me: NodeId, alphabet: Alphabet, mode: CountPhase) -> Self {
        let row = |shape| {
            params
                .nodes()
                .map(|k| BrbInstance::with_shape(params, me, k, shape))
                .collect::<Vec<_>>()
        };
        VbbState {
            params,
            me,
            alphabet,
            mode,
            brb: [row(Shape::Value(alphabet.size)), row(Shape::Flag)],
        }
    }

    pub fn brb(&self, phase: Phase, k: NodeId) -> &BrbInstance {
        &self.brb[phase.index()][k.0]
    }

    pub fn brb_mut(&mut self, phase: Phase, k: NodeId) -> &mut BrbInstance {
        &mut self.brb[phase.index()][k.0]
    }

    pub fn mode(&self) -> CountPhase {
        self.mode
    }

    fn row(&self, phase: Phase) -> impl Iterator<Item = DeliveryResult<Tagged>> + '_ {
        self.brb[phase.index()].iter().map(|b| b.deliver())
    }

    /// At least `n-t` phase-`phs` instances have delivered.
    pub fn vbb_wait(&self, phs: Phase) -> bool {
        self.row(phs).filter(|d| d.is_resolved()).count() >= self.params.thresholds().n_minus_t
    }

    /// At least `n-2t` phase-`phs` deliveries carry value `v`.
    pub fn vbb_eq(&self, phs: Phase, v: Value) -> bool {
        self.row(phs).filter(|d| carries(d, v)).count() >= self.params.thresholds().n_minus_2t
    }

    /// At least `t+1` phase-`phs` deliveries differ from `v` (⚡ included).
    pub fn vbb_diff(&self, phs: Phase, v: Value) -> bool {
        self.row(phs)
            .filter(|d| d.is_resolved() && !carries(d, v))
            .count()
            >= self.params.thresholds().t_plus_1
    }

    /// `v` can still reach `n-2t` phase-`phs` deliveries if every pending
    /// instance delivers it.
    pub fn eq_reachable(&self, phs: Phase, v: Value) -> bool {
        let open = self.row(phs).filter(|d| d.is_pending()).count();
        self.row(phs).filter(|d| carries(d, v)).count() + open
            >= self.params.thresholds().n_minus_2t
    }

    /// A stalled ⚡ for `k` that more deliveries could still turn into a value.
    pub fn stall_is_open(&self, k: NodeId) -> bool {
        match self.vbb_deliver_branch(k) {
            (_, VbbBranch::Stalled) => match self.brb(Phase::Init, k).deliver() {
                DeliveryResult::Decided(Tagged {
                    body: Body::Value(v),
                    ..
                }) => self.eq_reachable(self.mode.phase(), v),
                _ => false,
            },
            _ => false,
        }
    }

    /// Starts the INIT broadcast of `(me, v)`.
    pub fn vbb_broadcast(&mut self, v: Value) {
        let me = self.me;
        self.brb_mut(Phase::Init, me)
            .broadcast(Tagged::value(me, v));
    }

    /// Do-forever body: once `n-t` INIT instances delivered and the own INIT
    /// terminated, broadcast whether the own value is backed by `n-2t` of them.
    pub fn tick(&mut self) {
        let me = self.me;
        if self.brb(Phase::Valid, me).is_broadcasting() {
            return;
        }
        if !(self.vbb_wait(Phase::Init) && self.brb(Phase::Init, me).has_terminated()) {
            return;
        }
        let x = match self.brb(Phase::Init, me).deliver() {
            DeliveryResult::Decided(Tagged {
                body: Body::Value(v),
                ..
            }) => self.vbb_eq(Phase::Init, v),
            _ => false,
        };
        self.brb_mut(Phase::Valid, me)
            .broadcast(Tagged::flag(me, x));
    }

    pub fn update(&mut self) {
        for row in &mut self.brb {
            for b in row.iter_mut() {
                b.update();
            }
        }
    }

    pub fn vbb_deliver(&self, k: NodeId) -> DeliveryResult {
        self.vbb_deliver_branch(k).0
    }

    /// `vbb_deliver` together with the branch that decided it.
    pub fn vbb_deliver_branch(&self, k: NodeId) -> (DeliveryResult, VbbBranch) {
        use DeliveryResult::*;
        let init = self.brb(Phase::Init, k).deliver();
        let valid = self.brb(Phase::Valid, k).deliver();
        if init.is_pending() && valid.is_resolved() {
            return (Error, VbbBranch::ValidWithoutInit);
        }
        if init.is_pending() || valid.is_pending() {
            return (Pending, VbbBranch::Waiting);
        }
        let foreign = |d: &DeliveryResult<Tagged>| matches!(d, Decided(p) if p.origin != k);
        if foreign(&init) || foreign(&valid) {
            return (Error, VbbBranch::WrongOrigin);
        }
        let (v, x) = match (init, valid) {
            (
                Decided(Tagged {
                    body: Body::Value(v),
                    ..
                }),
                Decided(Tagged {
                    body: Body::Flag(x),
                    ..
                }),
            ) if self.alphabet.contains(v) => (v, x),
            _ => return (Error, VbbBranch::Malformed),
        };
        let phs = self.mode.phase();
        if x && self.vbb_eq(phs, v) {
            return (Decided(v), VbbBranch::Validated);
        }
        if !x && self.vbb_diff(phs, v) {
            return (Error, VbbBranch::Refuted);
        }
        if self.vbb_wait(Phase::Valid) {
            return (Error, VbbBranch::Stalled);
        }
        (Pending, VbbBranch::Incomplete)
    }

    pub fn recycle(&mut self) {
        for row in &mut self.brb {
            for b in row.iter_mut() {
                b.recycle();
            }
        }
    }
}

fn carries(d: &DeliveryResult<Tagged>, v: Value) -> bool {
    matches!(d, DeliveryResult::Decided(Tagged { body: Body::Value(w), .. }) if *w == v)
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: Value = Value(0);
    const B: Value = Value(1);
    const C: Value = Value(2);

    fn state(mode: CountPhase) -> VbbState {
        VbbState::new(
            SystemParams::new(4, 1, 1).unwrap(),
            NodeId(0),
            Alphabet::DEFAULT,
            mode,
        )
    }

    fn set(s: &mut VbbState, phase: Phase, k: usize, d: DeliveryResult<Tagged>) {
        s.brb_mut(phase, NodeId(k)).delivered = d;
    }

    fn val(k: usize, v: Value) -> DeliveryResult<Tagged> {
        DeliveryResult::Decided(Tagged::value(NodeId(k), v))
    }

    fn flag(k: usize, x: bool) -> DeliveryResult<Tagged> {
        DeliveryResult::Decided(Tagged::flag(NodeId(k), x))
    }

    #[test]
    fn wait_counts_deliveries() {
        let mut s = state(CountPhase::Init);
        assert!(!s.vbb_wait(Phase::Init));
        set(&mut s, Phase::Init, 0, val(0, A));
        set(&mut s, Phase::Init, 1, val(1, A));
        assert!(!s.vbb_wait(Phase::Init));
        set(&mut s, Phase::Init, 2, DeliveryResult::Error);
        assert!(s.vbb_wait(Phase::Init));
    }

    #[test]
    fn eq_and_diff_count_per_value() {
        let mut s = state(CountPhase::Init);
        set(&mut s, Phase::Init, 0, val(0, A));
        assert!(!s.vbb_eq(Phase::Init, A));
        set(&mut s, Phase::Init, 1, val(1, A));
        set(&mut s, Phase::Init, 2, val(2, B));
        assert!(s.vbb_eq(Phase::Init, A));
        assert!(!s.vbb_eq(Phase::Init, B));
        assert!(!s.vbb_diff(Phase::Init, A));
        set(&mut s, Phase::Init, 1, val(1, C));
        assert!(s.vbb_diff(Phase::Init, A));
    }

    #[test]
    fn diff_examples() {
        let mut s = state(CountPhase::Init);
        set(&mut s, Phase::Init, 0, val(0, A));
        set(&mut s, Phase::Init, 1, val(1, B));
        assert!(!s.vbb_diff(Phase::Init, A));
        set(&mut s, Phase::Init, 2, val(2, C));
        assert!(s.vbb_diff(Phase::Init, A));
        for k in 0..3 {
            set(&mut s, Phase::Init, k, val(k, A));
        }
        assert!(!s.vbb_diff(Phase::Init, A));
    }

    #[test]
    fn valid_without_init_is_bolt() {
        let mut s = state(CountPhase::Init);
        set(&mut s, Phase::Valid, 2, flag(2, true));
        assert_eq!(
            s.vbb_deliver_branch(NodeId(2)),
            (DeliveryResult::Error, VbbBranch::ValidWithoutInit)
        );
        assert_eq!(s.vbb_deliver(NodeId(1)), DeliveryResult::Pending);
    }

    #[test]
    fn foreign_origin_is_bolt() {
        let mut s = state(CountPhase::Init);
        set(&mut s, Phase::Init, 2, val(1, A));
        set(&mut s, Phase::Valid, 2, flag(2, true));
        assert_eq!(s.vbb_deliver_branch(NodeId(2)).1, VbbBranch::WrongOrigin);
    }

    #[test]
    fn malformed_payloads_are_bolt() {
        let mut s = state(CountPhase::Init);
        set(&mut s, Phase::Init, 2, val(2, Value(9)));
        set(&mut s, Phase::Valid, 2, flag(2, true));
        assert_eq!(s.vbb_deliver_branch(NodeId(2)).1, VbbBranch::Malformed);
        set(&mut s, Phase::Init, 2, flag(2, true));
        assert_eq!(s.vbb_deliver_branch(NodeId(2)).1, VbbBranch::Malformed);
    }

    #[test]
    fn validated_value_with_valid_row_counting() {
        // A corrupted or faulty VALID row can carry values; two of them match.
        let mut s = state(CountPhase::Valid);
        set(&mut s, Phase::Init, 3, val(3, A));
        set(&mut s, Phase::Valid, 3, flag(3, true));
        set(&mut s, Phase::Valid, 0, val(0, A));
        set(&mut s, Phase::Valid, 1, val(1, A));
        assert_eq!(
            s.vbb_deliver_branch(NodeId(3)),
            (DeliveryResult::Decided(A), VbbBranch::Validated)
        );
    }

    #[test]
    fn valid_row_counting_never_validates_flags() {
        let mut s = state(CountPhase::Valid);
        for k in 0..4 {
            set(&mut s, Phase::Init, k, val(k, A));
            set(&mut s, Phase::Valid, k, flag(k, true));
        }
        assert_eq!(
            s.vbb_deliver_branch(NodeId(0)),
            (DeliveryResult::Error, VbbBranch::Stalled)
        );
        let mut s = state(CountPhase::Init);
        for k in 0..4 {
            set(&mut s, Phase::Init, k, val(k, A));
            set(&mut s, Phase::Valid, k, flag(k, true));
        }
        assert_eq!(
            s.vbb_deliver_branch(NodeId(0)),
            (DeliveryResult::Decided(A), VbbBranch::Validated)
        );
    }

    #[test]
    fn refuted_sender_is_bolt() {
        let mut s = state(CountPhase::Init);
        set(&mut s, Phase::Init, 3, val(3, A));
        set(&mut s, Phase::Valid, 3, flag(3, false));
        set(&mut s, Phase::Init, 0, val(0, B));
        assert_eq!(
            s.vbb_deliver_branch(NodeId(3)),
            (DeliveryResult::Pending, VbbBranch::Incomplete)
        );
        set(&mut s, Phase::Init, 1, val(1, C));
        assert_eq!(
            s.vbb_deliver_branch(NodeId(3)),
            (DeliveryResult::Error, VbbBranch::Refuted)
        );
    }

    #[test]
    fn tick_sends_validity_flag() {
        let p = SystemParams::new(4, 1, 1).unwrap();
        let mut s = VbbState::new(p, NodeId(0), Alphabet::DEFAULT, CountPhase::Init);
        s.vbb_broadcast(A);
        s.tick();
        assert!(!s.brb(Phase::Valid, NodeId(0)).is_broadcasting());
        set(&mut s, Phase::Init, 0, val(0, A));
        set(&mut s, Phase::Init, 1, val(1, B));
        set(&mut s, Phase::Init, 2, val(2, C));
        s.brb_mut(Phase::Init, NodeId(0)).acks = vec![true; 4];
        s.tick();
        assert_eq!(
            s.brb(Phase::Valid, NodeId(0)).input,
            Some(Tagged::flag(NodeId(0), false))
        );

        let mut s = VbbState::new(p, NodeId(0), Alphabet::DEFAULT, CountPhase::Init);
        s.vbb_broadcast(A);
        for k in 0..3 {
            set(&mut s, Phase::Init, k, val(k, A));
        }
        s.brb_mut(Phase::Init, NodeId(0)).acks = vec![true; 4];
        s.tick();
        assert_eq!(
            s.brb(Phase::Valid, NodeId(0)).input,
            Some(Tagged::flag(NodeId(0), true))
        );
    }

    #[test]
    fn queries_do_not_mutate() {
        let mut s = state(CountPhase::Init);
        set(&mut s, Phase::Init, 0, val(0, A));
        let before = s.clone();
        let _ = (
            s.vbb_deliver(NodeId(0)),
            s.vbb_wait(Phase::Init),
            s.vbb_eq(Phase::Init, A),
        );
        assert_eq!(before, s);
    }
}
