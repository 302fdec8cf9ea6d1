//! Time accounting over traces.
//!
//! An asynchronous cycle is the shortest stretch of steps in which every
//! correct node runs one loop iteration and completes a round-trip with every
//! other correct node: a packet of `i` sent within the stretch reaches `j`,
//! and a packet `j` sent after that receipt reaches `i`.
//!
//! A communication round ends once every correct node has run an iteration and
//! heard packets, sent within the round, from `n-t` distinct nodes (itself
//! included). Rounds need no fairness.

use crate::sim::trace::{EventKind, Trace};
use crate::types::NodeId;

/// Incremental cycle labelling. Feed events in order.
#[derive(Clone, Debug)]
pub struct CycleTracker {
    n: usize,
    correct: Vec<bool>,
    n_correct: usize,
    cycle: u64,
    start: u64,
    iterated: Vec<bool>,
    n_iterated: usize,
    first_recv: Vec<Option<u64>>,
    done: Vec<bool>,
    n_done: usize,
    send_steps: Vec<Vec<u64>>,
}

impl CycleTracker {
    pub fn new(n: usize, correct: &[NodeId]) -> Self {
        let mut c = vec![false; n];
        for k in correct {
            c[k.0] = true;
        }
        CycleTracker {
            n,
            n_correct: correct.len(),
            correct: c,
            cycle: 1,
            start: 0,
            iterated: vec![false; n],
            n_iterated: 0,
            first_recv: vec![None; n * n],
            done: vec![false; n * n],
            n_done: 0,
            send_steps: vec![Vec::new(); n],
        }
    }

    pub fn current(&self) -> u64 {
        self.cycle
    }

    /// Number of fully completed cycles.
    pub fn completed(&self) -> u64 {
        self.cycle - 1
    }

    fn sent_at(&self, src: NodeId, seq: u64) -> Option<u64> {
        self.send_steps
            .get(src.0)
            .and_then(|v| v.get(seq as usize))
            .copied()
    }

    /// Records an event and returns the cycle it belongs to.
    pub fn observe(&mut self, step: u64, node: Option<NodeId>, kind: &EventKind) -> u64 {
        let label = self.cycle;
        match (node, kind) {
            (Some(i), EventKind::Send { seq, .. }) => {
                let v = &mut self.send_steps[i.0];
                if v.len() as u64 == *seq {
                    v.push(step);
                }
                if self.correct[i.0] && !self.iterated[i.0] {
                    self.iterated[i.0] = true;
                    self.n_iterated += 1;
                }
            }
            (Some(j), EventKind::Receive { from, seq, .. }) => {
                let i = *from;
                if let Some(sent) = self.sent_at(i, *seq) {
                    if self.correct[i.0] && self.correct[j.0] && i != j {
                        let fwd = i.0 * self.n + j.0;
                        if sent >= self.start && self.first_recv[fwd].is_none() {
                            self.first_recv[fwd] = Some(step);
                        }
                        // `j` replies to `i`'s earlier packet: completes (j, i).
                        let back = j.0 * self.n + i.0;
                        if !self.done[back] {
                            if let Some(r) = self.first_recv[back] {
                                if sent > r {
                                    self.done[back] = true;
                                    self.n_done += 1;
                                }
                            }
                        }
                    }
                }
            }
            _ => {}
        }
        let pairs = self.n_correct * self.n_correct.saturating_sub(1);
        if self.n_correct > 0 && self.n_iterated == self.n_correct && self.n_done == pairs {
            self.cycle += 1;
            self.start = step + 1;
            self.iterated.iter_mut().for_each(|x| *x = false);
            self.n_iterated = 0;
            self.first_recv.iter_mut().for_each(|x| *x = None);
            self.done.iter_mut().for_each(|x| *x = false);
            self.n_done = 0;
        }
        label
    }
}

/// Cycle label of every event, or `None` when the trace comes from an unfair
/// policy and cycles are not applicable.
pub fn cycle_index(trace: &Trace) -> Option<Vec<u64>> {
    if !trace.header.fair {
        return None;
    }
    let mut t = CycleTracker::new(trace.header.params.n, &trace.header.correct);
    Some(
        trace
            .events
            .iter()
            .map(|e| t.observe(e.step, e.node, &e.kind))
            .collect(),
    )
}

/// Incremental communication-round labelling.
#[derive(Clone, Debug)]
pub struct RoundTracker {
    n: usize,
    quorum: usize,
    correct: Vec<bool>,
    round: u64,
    start: u64,
    iterated: Vec<bool>,
    heard: Vec<bool>,
    heard_count: Vec<usize>,
    send_steps: Vec<Vec<u64>>,
}

impl RoundTracker {
    pub fn new(n: usize, quorum: usize, correct: &[NodeId]) -> Self {
        let mut c = vec![false; n];
        for k in correct {
            c[k.0] = true;
        }
        let mut r = RoundTracker {
            n,
            quorum,
            correct: c,
            round: 1,
            start: 0,
            iterated: vec![false; n],
            heard: vec![false; n * n],
            heard_count: vec![0; n],
            send_steps: vec![Vec::new(); n],
        };
        r.reset(0);
        r
    }

    fn reset(&mut self, start: u64) {
        self.start = start;
        self.iterated.iter_mut().for_each(|x| *x = false);
        self.heard.iter_mut().for_each(|x| *x = false);
        for i in 0..self.n {
            self.heard[i * self.n + i] = true;
            self.heard_count[i] = 1;
        }
    }

    pub fn observe(&mut self, step: u64, node: Option<NodeId>, kind: &EventKind) -> u64 {
        let label = self.round;
        match (node, kind) {
            (Some(i), EventKind::Send { seq, .. }) => {
                let v = &mut self.send_steps[i.0];
                if v.len() as u64 == *seq {
                    v.push(step);
                }
                self.iterated[i.0] = true;
            }
            (Some(j), EventKind::Receive { from, seq, .. }) => {
                let sent = self
                    .send_steps
                    .get(from.0)
                    .and_then(|v| v.get(*seq as usize))
                    .copied();
                if sent.is_some_and(|s| s >= self.start) {
                    let k = j.0 * self.n + from.0;
                    if !self.heard[k] {
                        self.heard[k] = true;
                        self.heard_count[j.0] += 1;
                    }
                }
            }
            _ => {}
        }
        let finished = (0..self.n)
            .filter(|&i| self.correct[i])
            .all(|i| self.iterated[i] && self.heard_count[i] >= self.quorum);
        if finished && self.correct.iter().any(|c| *c) {
            self.round += 1;
            self.reset(step + 1);
        }
        label
    }
}

/// Communication-round label of every event.
pub fn round_index(trace: &Trace) -> Vec<u64> {
    let p = trace.header.params;
    let mut t = RoundTracker::new(p.n, p.thresholds().n_minus_t, &trace.header.correct);
    trace
        .events
        .iter()
        .map(|e| t.observe(e.step, e.node, &e.kind))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trace::{Event, TraceHeader};
    use crate::types::SystemParams;
    use crate::vbb::CountPhase;

    fn header(n: usize, t: usize) -> TraceHeader {
        TraceHeader {
            params: SystemParams { n, t, capacity: 4 },
            correct: (0..n).map(NodeId).collect(),
            objects: 1,
            mode: CountPhase::Init,
            fair: true,
            corrupted: false,
            oracle: false,
            target_epoch: None,
            steps: 0,
            stop_met: false,
        }
    }

    /// Builds a trace from (node, send?) items: `Ok(i)` is an iteration of
    /// `i`, `Err((from, seq, to))` a receipt.
    fn build(n: usize, items: &[Result<usize, (usize, u64, usize)>]) -> Trace {
        let mut t = Trace::new(header(n, 0));
        let mut seqs = vec![0u64; n];
        for (step, it) in items.iter().enumerate() {
            let (node, kind) = match *it {
                Ok(i) => {
                    let s = seqs[i];
                    seqs[i] += 1;
                    (i, EventKind::Send { seq: s, digest: 0 })
                }
                Err((from, seq, to)) => (
                    to,
                    EventKind::Receive {
                        from: NodeId(from),
                        seq,
                        digest: 0,
                    },
                ),
            };
            t.push(Event {
                step: step as u64,
                cycle: 0,
                node: Some(NodeId(node)),
                kind,
            });
        }
        t
    }

    /// Independent prefix scan: the cycle starting at `s0` ends at the least
    /// `e` such that the window `[s0, e]` satisfies the definition.
    fn brute_force(trace: &Trace) -> Vec<u64> {
        let ev = &trace.events;
        let correct: Vec<usize> = trace.header.correct.iter().map(|k| k.0).collect();
        let sent_at = |src: usize, seq: u64| {
            ev.iter()
                .find(|e| {
                    e.node == Some(NodeId(src))
                        && matches!(e.kind, EventKind::Send { seq: s, .. } if s == seq)
                })
                .map(|e| e.step)
        };
        let window_ok = |s0: u64, e: u64| {
            let inw = |x: u64| x >= s0 && x <= e;
            let iter_ok = correct.iter().all(|&i| {
                ev.iter().any(|x| {
                    x.node == Some(NodeId(i))
                        && matches!(x.kind, EventKind::Send { .. })
                        && inw(x.step)
                })
            });
            let recv = |from: usize, to: usize, min_sent: u64, strict: bool| -> Vec<u64> {
                ev.iter()
                    .filter(|x| inw(x.step) && x.node == Some(NodeId(to)))
                    .filter_map(|x| match x.kind {
                        EventKind::Receive { from: f, seq, .. } if f.0 == from => {
                            let s = sent_at(from, seq)?;
                            let ok = if strict { s > min_sent } else { s >= min_sent };
                            ok.then_some(x.step)
                        }
                        _ => None,
                    })
                    .collect()
            };
            let pairs_ok = correct.iter().all(|&i| {
                correct.iter().filter(|&&j| j != i).all(|&j| {
                    recv(i, j, s0, false)
                        .into_iter()
                        .any(|r1| !recv(j, i, r1, true).is_empty())
                })
            });
            iter_ok && pairs_ok
        };
        let mut labels = Vec::new();
        let mut cycle = 1;
        let mut s0 = 0u64;
        for e in ev {
            labels.push(cycle);
            if window_ok(s0, e.step) {
                cycle += 1;
                s0 = e.step + 1;
            }
        }
        labels
    }

    #[test]
    fn empty_trace_has_no_labels() {
        let t = Trace::new(header(3, 0));
        assert_eq!(cycle_index(&t), Some(vec![]));
    }

    #[test]
    fn two_node_round_trips() {
        // 0 and 1 iterate, exchange, and reply; then repeat.
        let items = [
            Ok(0),
            Ok(1),
            Err((0, 0, 1)),
            Err((1, 0, 0)),
            Ok(1),
            Ok(0),
            Err((1, 1, 0)),
            Err((0, 1, 1)),
            Ok(0),
        ];
        let mut t = build(2, &items);
        t.header.params.n = 2;
        let labels = cycle_index(&t).unwrap();
        assert_eq!(labels, vec![1, 1, 1, 1, 1, 1, 1, 1, 2]);
        assert_eq!(labels, brute_force(&t));
    }

    #[test]
    fn unfair_trace_is_not_applicable() {
        let mut t = Trace::new(header(3, 0));
        t.header.fair = false;
        assert_eq!(cycle_index(&t), None);
    }

    #[test]
    fn synthetic_three_node_traces_match_brute_force() {
        use rand::{Rng, SeedableRng};
        for seed in 0..40 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 3;
            let mut items = Vec::new();
            let mut seqs = [0u64; 3];
            let mut inflight: Vec<(usize, u64, usize)> = Vec::new();
            for _ in 0..80 {
                if inflight.is_empty() || rng.gen_bool(0.3) {
                    let i = rng.gen_range(0..n);
                    items.push(Ok(i));
                    for j in 0..n {
                        if j != i {
                            inflight.push((i, seqs[i], j));
                        }
                    }
                    seqs[i] += 1;
                } else {
                    let k = rng.gen_range(0..inflight.len());
                    items.push(Err(inflight.swap_remove(k)));
                }
            }
            let t = build(n, &items);
            assert_eq!(cycle_index(&t).unwrap(), brute_force(&t), "seed {seed}");
        }
    }

    #[test]
    fn rounds_need_n_minus_t_senders() {
        let mut t = build(4, &[Ok(0), Ok(1), Ok(2), Ok(3)]);
        t.header.params = SystemParams {
            n: 4,
            t: 1,
            capacity: 4,
        };
        assert_eq!(round_index(&t), vec![1, 1, 1, 1]);
        let items = [
            Ok(0),
            Ok(1),
            Ok(2),
            Ok(3),
            Err((1, 0, 0)),
            Err((2, 0, 0)),
            Err((0, 0, 1)),
            Err((2, 0, 1)),
            Err((0, 0, 2)),
            Err((1, 0, 2)),
            Err((0, 0, 3)),
            Err((1, 0, 3)),
            Ok(0),
        ];
        let mut t = build(4, &items);
        t.header.params = SystemParams {
            n: 4,
            t: 1,
            capacity: 4,
        };
        let r = round_index(&t);
        assert_eq!(r[11], 1);
        assert_eq!(r[12], 2);
    }
}
