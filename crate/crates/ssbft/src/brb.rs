//! Query-based Byzantine reliable broadcast: a Bracha ECHO/READY machine whose
//! state is retransmitted every loop iteration.
//!
//! Own ECHO is write-once within an activation. Own READY and the delivered
//! value are write-once in clean executions; after a transient fault they are
//! cleared when no READY or ECHO evidence backs them. Peer slots hold the latest state each peer reported. An
//! instance whose echoes rule out every quorum under every admissible set of
//! faulty peers moves to READY ⚡, so a Byzantine originator cannot leave it
//! pending forever.
//!
//! Payloads not tagged with the originator, or not of the instance's
//! [`Shape`], count as absent. Such a payload can only come from a Byzantine
//! peer or a transient fault, and a stale own slot holding one is cleared so a
//! corrupted node can echo again.

use crate::types::{DeliveryResult, NodeId, SystemParams};
use crate::wire::{Body, BrbVotes, Content, Tagged};

/// Payload bodies an instance accepts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Shape {
    #[default]
    Any,
    /// A value below the given alphabet size.
    Value(u8),
    Flag,
}

impl Shape {
    pub fn admits(self, body: Body) -> bool {
        match (self, body) {
            (Shape::Any, _) | (Shape::Flag, Body::Flag(_)) => true,
            (Shape::Value(size), Body::Value(v)) => v.0 < size,
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BrbInstance {
    pub(crate) params: SystemParams,
    pub(crate) me: NodeId,
    pub(crate) originator: NodeId,
    pub(crate) shape: Shape,
    /// Payload this node broadcast (originator only).
    pub(crate) input: Option<Tagged>,
    /// Latest SEND reported by the originator.
    pub(crate) send: Option<Tagged>,
    /// Per-node ECHO; entry `me` is this node's own.
    pub(crate) echoes: Vec<Option<Tagged>>,
    /// Per-node READY; entry `me` is this node's own.
    pub(crate) readies: Vec<Option<Content>>,
    /// Per-node delivery acknowledgments; entry `me` mirrors `delivered`.
    pub(crate) acks: Vec<bool>,
    pub(crate) delivered: DeliveryResult<Tagged>,
}

impl BrbInstance {
    pub fn new(params: SystemParams, me: NodeId, originator: NodeId) -> Self {
        Self::with_shape(params, me, originator, Shape::Any)
    }

    pub fn with_shape(params: SystemParams, me: NodeId, originator: NodeId, shape: Shape) -> Self {
        BrbInstance {
            params,
            me,
            originator,
            shape,
            input: None,
            send: None,
            echoes: vec![None; params.n],
            readies: vec![None; params.n],
            acks: vec![false; params.n],
            delivered: DeliveryResult::Pending,
        }
    }

    pub fn originator(&self) -> NodeId {
        self.originator
    }

    /// Starts the broadcast of `payload`. Only the originator may broadcast;
    /// the first payload of an activation wins.
    pub fn broadcast(&mut self, payload: Tagged) {
        if self.input.is_some_and(|p| !self.admits(&p)) {
            self.input = None;
        }
        if self.me == self.originator && self.input.is_none() && self.admits(&payload) {
            self.input = Some(payload);
        }
    }

    pub fn is_broadcasting(&self) -> bool {
        self.input.is_some()
    }

    /// The delivered payload of this instance, ⚡ if the instance delivered
    /// the error symbol.
    pub fn deliver(&self) -> DeliveryResult<Tagged> {
        self.delivered
    }

    /// Sender-side termination: `n-t` nodes acknowledged delivery.
    pub fn has_terminated(&self) -> bool {
        self.me == self.originator
            && self.input.is_some()
            && self.acks.iter().filter(|a| **a).count() >= self.params.thresholds().n_minus_t
    }

    /// Returns to the post-recycling state.
    pub fn recycle(&mut self) {
        *self = BrbInstance::with_shape(self.params, self.me, self.originator, self.shape);
    }

    /// Tagged with the originator and of the expected shape.
    pub fn admits(&self, p: &Tagged) -> bool {
        p.origin == self.originator && self.shape.admits(p.body)
    }

    fn admits_content(&self, c: &Content) -> bool {
        match c {
            Content::Data(p) => self.admits(p),
            Content::Bolt => true,
        }
    }

    /// This node's current votes, as retransmitted.
    pub fn votes(&self) -> BrbVotes {
        BrbVotes {
            send: if self.me == self.originator {
                self.input
            } else {
                None
            },
            echo: self.echoes[self.me.0],
            ready: self.readies[self.me.0],
            ack: self.acks[self.me.0],
        }
    }

    /// Records the state reported by `from`, replacing the previous report.
    pub fn absorb(&mut self, from: NodeId, v: &BrbVotes) {
        if from == self.me || from.0 >= self.params.n {
            return;
        }
        if from == self.originator {
            self.send = v.send.filter(|p| self.admits(p));
        }
        self.echoes[from.0] = v.echo.filter(|p| self.admits(p));
        self.readies[from.0] = v.ready.filter(|c| self.admits_content(c));
        self.acks[from.0] = v.ack;
    }

    /// Applies the ECHO/READY/deliver rules until nothing changes.
    pub fn update(&mut self) {
        let me = self.me.0;
        if self.input.is_some_and(|p| !self.admits(&p)) {
            self.input = None;
        }
        if self.send.is_some_and(|p| !self.admits(&p)) {
            self.send = None;
        }
        for j in 0..self.params.n {
            if self.echoes[j].is_some_and(|p| !self.admits(&p)) {
                self.echoes[j] = None;
            }
            if self.readies[j].is_some_and(|c| !self.admits_content(&c)) {
                self.readies[j] = None;
            }
        }
        self.discard_unjustified();
        loop {
            let mut changed = false;
            if self.me == self.originator {
                if let Some(p) = self.input {
                    self.send = Some(p);
                    if self.echoes[me] != Some(p) {
                        self.echoes[me] = Some(p);
                        changed = true;
                    }
                }
            }
            if self.echoes[me].is_none() {
                if let Some(p) = self.send {
                    self.echoes[me] = Some(p);
                    changed = true;
                }
            }
            if self.readies[me].is_none() {
                if let Some(r) = self.next_ready() {
                    self.readies[me] = Some(r);
                    changed = true;
                }
            }
            if self.delivered.is_pending() {
                if let Some((c, k)) = top(self.readies.iter().flatten().copied()) {
                    if k >= self.params.ready_quorum() {
                        self.delivered = match c {
                            Content::Data(p) => DeliveryResult::Decided(p),
                            Content::Bolt => DeliveryResult::Error,
                        };
                        changed = true;
                    }
                }
            }
            self.acks[me] = self.delivered.is_resolved();
            if !changed {
                break;
            }
        }
    }

    /// Clears an own READY or delivery that no clean execution could have
    /// produced. In a clean execution both rest on sticky state at correct
    /// peers, so neither is ever cleared.
    fn discard_unjustified(&mut self) {
        let me = self.me.0;
        let q = self.params.echo_quorum();
        let t = self.params.t;
        let readies_for = |c: Content, with_own: bool| {
            self.readies
                .iter()
                .enumerate()
                .filter(|(j, r)| (with_own || *j != me) && **r == Some(c))
                .count()
        };
        if let Some(c) = content_of(self.delivered) {
            // A READY quorum holds at least `ready_quorum - t` correct readies.
            if readies_for(c, true) + t < self.params.ready_quorum() {
                self.delivered = DeliveryResult::Pending;
            }
        }
        let Some(c) = self.readies[me] else { return };
        let echoes_for = |p: Tagged| self.echoes.iter().filter(|e| **e == Some(p)).count();
        let justified = content_of(self.delivered) == Some(c)
            || readies_for(c, false) > 0
            || match c {
                Content::Data(p) => echoes_for(p) + t >= q,
                Content::Bolt => self.echoes.iter().flatten().all(|p| echoes_for(*p) < q),
            };
        if !justified {
            self.readies[me] = None;
        }
    }

    fn next_ready(&self) -> Option<Content> {
        if let Some((p, k)) = top(self.echoes.iter().flatten().copied()) {
            if k >= self.params.echo_quorum() {
                return Some(Content::Data(p));
            }
        }
        if let Some((c, k)) = top(self.readies.iter().flatten().copied()) {
            if k > self.params.t {
                return Some(c);
            }
        }
        match self.delivered {
            DeliveryResult::Decided(p) => return Some(Content::Data(p)),
            DeliveryResult::Error => return Some(Content::Bolt),
            DeliveryResult::Pending => {}
        }
        if self.quorum_impossible() {
            return Some(Content::Bolt);
        }
        None
    }

    /// True when no ECHO quorum for any payload can form at any correct node,
    /// under every set of at most `t` faulty nodes consistent with the echoes
    /// seen so far. Correct nodes echo only the originator's SEND and never
    /// change their echo, so a correct originator forces all correct echoes to
    /// agree.
    pub(crate) fn quorum_impossible(&self) -> bool {
        let n = self.params.n;
        let t = self.params.t;
        let q = self.params.echo_quorum();
        let me = self.me.0;
        let s = self.originator.0;
        let own = self.echoes[me];

        // Correct originator: every correct echo equals its payload.
        let anchor = if self.me == self.originator {
            self.input
        } else {
            self.send.or(self.echoes[s]).or(own)
        };
        let distinct: Vec<Tagged> = {
            let mut d: Vec<Tagged> = Vec::new();
            for e in self.echoes.iter().flatten() {
                if !d.contains(e) {
                    d.push(*e);
                }
            }
            d
        };
        let refs: Vec<Option<Tagged>> = match anchor {
            Some(p) => vec![Some(p)],
            None => distinct.iter().map(|p| Some(*p)).chain([None]).collect(),
        };
        for r in refs {
            let fits = |e: &Option<Tagged>| e.is_none() || (r.is_some() && *e == r);
            if !fits(&own) {
                continue;
            }
            if s != me && !fits(&self.echoes[s]) {
                continue;
            }
            if self.me != self.originator {
                if let (Some(p), Some(sp)) = (r, self.send) {
                    if p != sp {
                        continue;
                    }
                }
            }
            let outliers = (0..n)
                .filter(|&j| j != me && j != s && !fits(&self.echoes[j]))
                .count();
            if outliers <= t {
                return false;
            }
        }
        if self.me == self.originator || t == 0 {
            return true;
        }

        // Faulty originator: up to t-1 further faulty nodes.
        let candidates = distinct.iter().map(|p| Some(*p)).chain([None]);
        for m in candidates {
            let against = |e: &Option<Tagged>| e.is_some() && (m.is_none() || *e != m);
            let bad = (0..n)
                .filter(|&j| j != me && j != s && against(&self.echoes[j]))
                .count();
            let self_bad = usize::from(against(&own));
            let possible = n - bad.saturating_sub(t - 1) - self_bad;
            if possible >= q {
                return false;
            }
        }
        true
    }
}

fn content_of(d: DeliveryResult<Tagged>) -> Option<Content> {
    match d {
        DeliveryResult::Pending => None,
        DeliveryResult::Decided(p) => Some(Content::Data(p)),
        DeliveryResult::Error => Some(Content::Bolt),
    }
}

/// Most frequent item with a deterministic tie-break on first occurrence.
fn top<T: PartialEq + Copy>(it: impl Iterator<Item = T>) -> Option<(T, usize)> {
    let mut counts: Vec<(T, usize)> = Vec::new();
    for x in it {
        match counts.iter_mut().find(|(y, _)| *y == x) {
            Some(c) => c.1 += 1,
            None => counts.push((x, 1)),
        }
    }
    let mut best: Option<(T, usize)> = None;
    for (x, k) in counts {
        if best.map_or(true, |(_, b)| k > b) {
            best = Some((x, k));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Value;

    fn p4() -> SystemParams {
        SystemParams::new(4, 1, 2).unwrap()
    }

    fn a(o: usize) -> Tagged {
        Tagged::value(NodeId(o), Value(0))
    }

    fn b(o: usize) -> Tagged {
        Tagged::value(NodeId(o), Value(1))
    }

    fn exchange(insts: &mut [BrbInstance], rounds: usize) {
        for _ in 0..rounds {
            for i in insts.iter_mut() {
                i.update();
            }
            let votes: Vec<BrbVotes> = insts.iter().map(|i| i.votes()).collect();
            for i in insts.iter_mut() {
                for (j, v) in votes.iter().enumerate() {
                    i.absorb(NodeId(j), v);
                }
            }
        }
        for i in insts.iter_mut() {
            i.update();
        }
    }

    #[test]
    fn fault_free_broadcast_delivers_everywhere() {
        let p = p4();
        let mut insts: Vec<_> = p
            .nodes()
            .map(|me| BrbInstance::new(p, me, NodeId(0)))
            .collect();
        insts[0].broadcast(a(0));
        assert!(!insts[0].has_terminated());
        exchange(&mut insts, 5);
        for i in &insts {
            assert_eq!(i.deliver(), DeliveryResult::Decided(a(0)));
        }
        assert!(insts[0].has_terminated());
    }

    #[test]
    fn fresh_instance_is_pending() {
        let i = BrbInstance::new(p4(), NodeId(1), NodeId(0));
        assert_eq!(i.deliver(), DeliveryResult::Pending);
        assert!(!i.has_terminated());
    }

    #[test]
    fn three_readies_deliver_at_n4() {
        let mut i = BrbInstance::new(p4(), NodeId(1), NodeId(0));
        let r = BrbVotes {
            ready: Some(Content::Data(a(0))),
            ..Default::default()
        };
        i.absorb(NodeId(0), &r);
        i.absorb(NodeId(2), &r);
        i.update();
        // two peers reach t+1 and amplify our own READY, which makes three
        assert_eq!(i.readies[1], Some(Content::Data(a(0))));
        assert_eq!(i.deliver(), DeliveryResult::Decided(a(0)));
        let before = i.clone();
        assert_eq!(i.deliver(), i.deliver());
        assert_eq!(before, i);
    }

    #[test]
    fn t_plus_one_readies_amplify() {
        let p = SystemParams::new(7, 2, 2).unwrap();
        let mut i = BrbInstance::new(p, NodeId(1), NodeId(0));
        let r = BrbVotes {
            ready: Some(Content::Data(a(0))),
            ..Default::default()
        };
        i.absorb(NodeId(3), &r);
        i.absorb(NodeId(4), &r);
        i.update();
        assert_eq!(i.readies[1], None);
        i.absorb(NodeId(5), &r);
        i.update();
        assert_eq!(i.readies[1], Some(Content::Data(a(0))));
        assert_eq!(i.deliver(), DeliveryResult::Pending);
    }

    #[test]
    fn repeated_echo_from_peer_changes_nothing() {
        let mut i = BrbInstance::new(p4(), NodeId(1), NodeId(0));
        let e = BrbVotes {
            echo: Some(a(0)),
            ..Default::default()
        };
        i.absorb(NodeId(2), &e);
        let snap = i.clone();
        i.absorb(NodeId(2), &e);
        assert_eq!(snap, i);
    }

    #[test]
    fn peer_slot_keeps_latest_report() {
        let mut i = BrbInstance::new(p4(), NodeId(1), NodeId(0));
        i.absorb(
            NodeId(2),
            &BrbVotes {
                echo: Some(a(0)),
                ..Default::default()
            },
        );
        i.absorb(
            NodeId(2),
            &BrbVotes {
                echo: Some(b(0)),
                ..Default::default()
            },
        );
        assert_eq!(i.echoes[2], Some(b(0)));
    }

    #[test]
    fn own_echo_is_sticky() {
        let mut i = BrbInstance::new(p4(), NodeId(1), NodeId(0));
        i.absorb(
            NodeId(0),
            &BrbVotes {
                send: Some(a(0)),
                ..Default::default()
            },
        );
        i.update();
        i.absorb(
            NodeId(0),
            &BrbVotes {
                send: Some(b(0)),
                ..Default::default()
            },
        );
        i.update();
        assert_eq!(i.echoes[1], Some(a(0)));
    }

    #[test]
    fn equivocating_originator_yields_bolt() {
        let p = p4();
        let mut insts: Vec<_> = p
            .nodes()
            .map(|me| BrbInstance::new(p, me, NodeId(3)))
            .collect();
        let sends = [a(3), b(3), Tagged::value(NodeId(3), Value(2))];
        for (j, s) in sends.iter().enumerate() {
            insts[j].absorb(
                NodeId(3),
                &BrbVotes {
                    send: Some(*s),
                    ..Default::default()
                },
            );
        }
        let correct = &mut insts[..3];
        exchange(correct, 4);
        for i in correct.iter() {
            assert_eq!(i.deliver(), DeliveryResult::Error);
        }
    }

    #[test]
    fn correct_originator_never_triggers_bolt() {
        let p = p4();
        let mut i = BrbInstance::new(p, NodeId(1), NodeId(0));
        i.absorb(
            NodeId(0),
            &BrbVotes {
                send: Some(a(0)),
                echo: Some(a(0)),
                ..Default::default()
            },
        );
        i.absorb(
            NodeId(3),
            &BrbVotes {
                echo: Some(b(0)),
                ..Default::default()
            },
        );
        i.update();
        assert!(!i.quorum_impossible());
    }

    #[test]
    fn recycle_is_idempotent() {
        let p = p4();
        let mut i = BrbInstance::new(p, NodeId(0), NodeId(0));
        i.broadcast(a(0));
        i.update();
        i.recycle();
        let once = i.clone();
        i.recycle();
        assert_eq!(once, i);
        assert_eq!(i, BrbInstance::new(p, NodeId(0), NodeId(0)));
    }
}
