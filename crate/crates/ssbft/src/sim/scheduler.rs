//! Scheduling policies. A scheduler picks one enabled action per step: an
//! iteration of some node's loop, or the delivery of the head packet of some
//! channel.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::NodeId;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum Policy {
    /// Deliver the oldest packet in transit; iterate nodes round-robin when
    /// nothing is in transit.
    Fifo,
    /// Uniform choice among enabled actions.
    #[default]
    Random,
    /// Random, but packets sent by `victims` are held back until step `budget`.
    AdversarialDelay { victims: Vec<NodeId>, budget: u64 },
    /// Until step `k` the `starved` nodes neither run nor exchange packets;
    /// afterwards random.
    UnfairUntil { k: u64, starved: Vec<NodeId> },
}

impl Policy {
    /// Whether asynchronous cycles are meaningful for traces of this policy.
    pub fn is_fair(&self) -> bool {
        !matches!(self, Policy::UnfairUntil { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Fifo => "fifo",
            Policy::Random => "random",
            Policy::AdversarialDelay { .. } => "adversarial-delay",
            Policy::UnfairUntil { .. } => "unfair-until-k-then-fair",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Iterate(NodeId),
    Deliver { src: NodeId, dst: NodeId },
}

/// What the scheduler may look at.
pub struct View<'a> {
    pub step: u64,
    /// Nodes whose loop can run.
    pub live: &'a [bool],
    /// `(src, dst, order of head packet)` for each non-empty channel.
    pub pending: &'a [(NodeId, NodeId, u64)],
}

#[derive(Clone, Debug)]
pub struct Scheduler {
    policy: Policy,
    cursor: usize,
}

impl Scheduler {
    pub fn new(policy: Policy) -> Self {
        Scheduler { policy, cursor: 0 }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn pick(&mut self, v: &View<'_>, rng: &mut ChaCha8Rng) -> Option<Action> {
        match &self.policy {
            Policy::Fifo => {
                if let Some(&(src, dst, _)) = v.pending.iter().min_by_key(|p| p.2) {
                    return Some(Action::Deliver { src, dst });
                }
                let n = v.live.len();
                for off in 0..n {
                    let i = (self.cursor + off) % n;
                    if v.live[i] {
                        self.cursor = (i + 1) % n;
                        return Some(Action::Iterate(NodeId(i)));
                    }
                }
                None
            }
            Policy::Random => uniform(v, rng, |_| true),
            Policy::AdversarialDelay { victims, budget } => {
                if v.step < *budget {
                    let victims = victims.clone();
                    uniform(v, rng, move |a| match a {
                        Action::Deliver { src, .. } => !victims.contains(&src),
                        Action::Iterate(_) => true,
                    })
                } else {
                    uniform(v, rng, |_| true)
                }
            }
            Policy::UnfairUntil { k, starved } => {
                if v.step < *k {
                    let starved = starved.clone();
                    uniform(v, rng, move |a| match a {
                        Action::Deliver { src, dst } => {
                            !starved.contains(&src) && !starved.contains(&dst)
                        }
                        Action::Iterate(i) => !starved.contains(&i),
                    })
                } else {
                    uniform(v, rng, |_| true)
                }
            }
        }
    }
}

fn uniform(v: &View<'_>, rng: &mut ChaCha8Rng, allow: impl Fn(Action) -> bool) -> Option<Action> {
    let iters = v
        .live
        .iter()
        .enumerate()
        .filter(|(_, l)| **l)
        .map(|(i, _)| Action::Iterate(NodeId(i)));
    let delivers = v
        .pending
        .iter()
        .map(|&(src, dst, _)| Action::Deliver { src, dst });
    let enabled: Vec<Action> = iters.chain(delivers).filter(|a| allow(*a)).collect();
    if enabled.is_empty() {
        return None;
    }
    Some(enabled[rng.gen_range(0..enabled.len())])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn fifo_prefers_pending_packets() {
        let mut s = Scheduler::new(Policy::Fifo);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let live = [true, true];
        let pending = [(NodeId(1), NodeId(0), 7), (NodeId(0), NodeId(1), 3)];
        let v = View {
            step: 0,
            live: &live,
            pending: &pending,
        };
        assert_eq!(
            s.pick(&v, &mut rng),
            Some(Action::Deliver {
                src: NodeId(0),
                dst: NodeId(1)
            })
        );
        let v = View {
            step: 0,
            live: &live,
            pending: &[],
        };
        assert_eq!(s.pick(&v, &mut rng), Some(Action::Iterate(NodeId(0))));
        assert_eq!(s.pick(&v, &mut rng), Some(Action::Iterate(NodeId(1))));
    }

    #[test]
    fn unfair_phase_starves_then_releases() {
        let mut s = Scheduler::new(Policy::UnfairUntil {
            k: 10,
            starved: vec![NodeId(0)],
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let live = [true, false];
        let v = View {
            step: 0,
            live: &live,
            pending: &[],
        };
        assert_eq!(s.pick(&v, &mut rng), None);
        let v = View {
            step: 10,
            live: &live,
            pending: &[],
        };
        assert_eq!(s.pick(&v, &mut rng), Some(Action::Iterate(NodeId(0))));
    }
}
