//! Byzantine behaviors. Each one wraps honest stacks and tampers with what
//! they send, so the faulty node stays protocol-shaped enough to matter.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bincon::BinCon;
use crate::bv::BvInstance;
use crate::mvc::MvcConfig;
use crate::node::Node;
use crate::types::{Alphabet, NodeId, Value};
use crate::vbb::VbbState;
use crate::wire::{BrbVotes, Content, ObjectSnapshot, Packet, Phase, Tagged};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum Strategy {
    /// Silent from the start.
    Crash,
    /// Runs two honest stacks proposing `a` and `b`; even-numbered peers hear
    /// the first, odd-numbered peers the second.
    Equivocate {
        #[serde(default = "first_value")]
        a: Value,
        #[serde(default = "second_value")]
        b: Value,
    },
    /// Broadcasts an ill-formatted INIT payload (wrong origin, value outside
    /// the alphabet, or a flag in place of a value) and a value in place of
    /// the VALID flag.
    SpamInvalid,
    /// Proposes `value`, claims it is valid and votes `true` in every binary
    /// exchange. All colluders share `value`.
    ColludeValue { value: Value },
    /// Honest stack whose packets leave only every `lag` iterations and carry
    /// the state from `lag` iterations earlier.
    DelayMaximal {
        #[serde(default = "default_lag")]
        lag: u64,
        #[serde(default = "first_value")]
        value: Value,
    },
}

fn first_value() -> Value {
    Value(0)
}

fn second_value() -> Value {
    Value(1)
}

fn default_lag() -> u64 {
    8
}

impl Strategy {
    pub const NAMES: [&'static str; 5] = [
        "crash",
        "equivocate",
        "spam-invalid",
        "collude-value",
        "delay-maximal",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Crash => "crash",
            Strategy::Equivocate { .. } => "equivocate",
            Strategy::SpamInvalid => "spam-invalid",
            Strategy::ColludeValue { .. } => "collude-value",
            Strategy::DelayMaximal { .. } => "delay-maximal",
        }
    }

    /// The strategy with default parameters; unknown names are rejected.
    pub fn from_name(name: &str) -> Result<Strategy, UnknownStrategy> {
        Ok(match name {
            "crash" => Strategy::Crash,
            "equivocate" => Strategy::Equivocate {
                a: first_value(),
                b: second_value(),
            },
            "spam-invalid" => Strategy::SpamInvalid,
            "collude-value" => Strategy::ColludeValue { value: Value(3) },
            "delay-maximal" => Strategy::DelayMaximal {
                lag: default_lag(),
                value: first_value(),
            },
            _ => return Err(UnknownStrategy(name.to_string())),
        })
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown Byzantine strategy `{0}` (expected one of: crash, equivocate, spam-invalid, collude-value, delay-maximal)")]
pub struct UnknownStrategy(pub String);

/// How a spamming node malforms its INIT payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Spam {
    WrongOrigin,
    OutOfAlphabet,
    FlagForValue,
}

#[derive(Clone, Debug)]
pub struct ByzNode {
    id: NodeId,
    n: usize,
    strategy: Strategy,
    alphabet: Alphabet,
    stacks: Vec<Node>,
    spam: Spam,
    history: VecDeque<Arc<Packet>>,
    iterations: u64,
}

impl ByzNode {
    pub fn new(
        cfg: &[MvcConfig],
        id: NodeId,
        strategy: Strategy,
        with_oracle: bool,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb12a_0000 ^ id.0 as u64);
        let copies = if matches!(strategy, Strategy::Equivocate { .. }) {
            2
        } else {
            1
        };
        let spam = match rng.gen_range(0..3) {
            0 => Spam::WrongOrigin,
            1 => Spam::OutOfAlphabet,
            _ => Spam::FlagForValue,
        };
        ByzNode {
            id,
            n: cfg[0].params.n,
            alphabet: cfg[0].alphabet,
            stacks: (0..copies)
                .map(|_| Node::new(cfg, id, with_oracle))
                .collect(),
            strategy,
            spam,
            history: VecDeque::new(),
            iterations: 0,
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn strategy(&self) -> &Strategy {
        &self.strategy
    }

    /// Whether this node ever takes steps.
    pub fn is_live(&self) -> bool {
        !matches!(self.strategy, Strategy::Crash)
    }

    /// Starts the strategy's proposals for a new activation.
    pub fn propose(&mut self) {
        match self.strategy {
            Strategy::Crash => {}
            Strategy::Equivocate { a, b } => {
                self.stacks[0].propose(a);
                self.stacks[1].propose(b);
            }
            Strategy::SpamInvalid => self.stacks[0].propose(Value(0)),
            Strategy::ColludeValue { value } => self.stacks[0].propose(value),
            Strategy::DelayMaximal { value, .. } => self.stacks[0].propose(value),
        }
    }

    /// One iteration; returns the packet for each destination, if any.
    pub fn iterate(&mut self) -> Vec<Option<Arc<Packet>>> {
        self.iterations += 1;
        let none = vec![None; self.n];
        match self.strategy.clone() {
            Strategy::Crash => none,
            Strategy::Equivocate { .. } => {
                let p: Vec<Arc<Packet>> = self
                    .stacks
                    .iter_mut()
                    .map(|s| Arc::new(s.iterate()))
                    .collect();
                (0..self.n)
                    .map(|d| (d != self.id.0).then(|| p[d % 2].clone()))
                    .collect()
            }
            Strategy::SpamInvalid => {
                let mut p = self.stacks[0].iterate();
                let me = self.id;
                for o in p.objects.iter_mut().chain(p.oracle.as_mut()) {
                    self.spam_object(me, o);
                }
                self.to_all(Arc::new(p))
            }
            Strategy::ColludeValue { .. } => {
                self.stacks[0].iterate();
                let me = self.id;
                let stack = &mut self.stacks[0];
                for o in &mut stack.objects {
                    lie(me, &mut o.vbb, Some(&mut o.bv), &mut o.bc);
                }
                if let Some(o) = &mut stack.oracle {
                    lie(me, &mut o.brb, None, &mut o.bc);
                }
                let p = Arc::new(stack.snapshot());
                self.to_all(p)
            }
            Strategy::DelayMaximal { lag, .. } => {
                let lag = lag.max(1);
                self.history.push_back(Arc::new(self.stacks[0].iterate()));
                while self.history.len() as u64 > lag {
                    self.history.pop_front();
                }
                if self.iterations % lag != 0 {
                    return none;
                }
                let p = self
                    .history
                    .front()
                    .cloned()
                    .expect("history holds the latest packet");
                self.to_all(p)
            }
        }
    }

    fn to_all(&self, p: Arc<Packet>) -> Vec<Option<Arc<Packet>>> {
        (0..self.n)
            .map(|d| (d != self.id.0).then(|| p.clone()))
            .collect()
    }

    fn spam_object(&self, me: NodeId, o: &mut ObjectSnapshot) {
        let other = NodeId((me.0 + 1) % self.n);
        let bad = match self.spam {
            Spam::WrongOrigin => Tagged::value(other, Value(0)),
            Spam::OutOfAlphabet => Tagged::value(me, Value(self.alphabet.size)),
            Spam::FlagForValue => Tagged::flag(me, true),
        };
        let bad_flag = Tagged::value(me, Value(0));
        for (phase, t) in [(Phase::Init, bad), (Phase::Valid, bad_flag)] {
            if let Some(v) = o.brb[phase.index()].get_mut(me.0) {
                *v = BrbVotes {
                    send: Some(t),
                    echo: Some(t),
                    ready: Some(Content::Data(t)),
                    ack: v.ack,
                };
            }
        }
    }

    pub fn receive(&mut self, from: NodeId, p: &Packet) {
        for s in &mut self.stacks {
            s.receive(from, p);
        }
    }

    pub fn recycle(&mut self) {
        for s in &mut self.stacks {
            s.recycle();
        }
        self.history.clear();
    }
}

/// Claims the own value valid and pushes `true` through every binary vote.
fn lie(me: NodeId, vbb: &mut VbbState, bv: Option<&mut BvInstance>, bc: &mut BinCon) {
    let t = Tagged::flag(me, true);
    let b = vbb.brb_mut(Phase::Valid, me);
    if b.input.is_some() {
        b.input = Some(t);
        b.send = Some(t);
        if b.echoes[me.0].is_some() {
            b.echoes[me.0] = Some(t);
        }
        if b.readies[me.0].is_some() {
            b.readies[me.0] = Some(Content::Data(t));
        }
    }
    if let Some(bv) = bv {
        bv.forwards[me.0].insert(true);
    }
    if bc.proposed.is_some() {
        for r in &mut bc.rounds {
            r.bv.forwards[me.0].insert(true);
            if r.aux[me.0].is_some() {
                r.aux[me.0] = Some(true);
            }
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Equivocate { a, b } => write!(f, "equivocate({a},{b})"),
            Strategy::ColludeValue { value } => write!(f, "collude-value({value})"),
            Strategy::DelayMaximal { lag, value } => write!(f, "delay-maximal({value}, lag {lag})"),
            s => f.write_str(s.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bincon::{Coin, DEFAULT_ROUND_CAP};
    use crate::types::SystemParams;
    use crate::vbb::CountPhase;

    fn cfg() -> Vec<MvcConfig> {
        vec![MvcConfig {
            params: SystemParams::new(4, 1, 1).unwrap(),
            alphabet: Alphabet::DEFAULT,
            mode: CountPhase::Init,
            coin: Coin::Seeded(0),
            round_cap: DEFAULT_ROUND_CAP,
        }]
    }

    #[test]
    fn names_roundtrip_and_unknown_rejected() {
        for name in Strategy::NAMES {
            assert_eq!(Strategy::from_name(name).unwrap().name(), name);
        }
        assert_eq!(
            Strategy::from_name("sleepy"),
            Err(UnknownStrategy("sleepy".into()))
        );
    }

    #[test]
    fn crash_is_silent() {
        let mut b = ByzNode::new(&cfg(), NodeId(3), Strategy::Crash, false, 0);
        b.propose();
        assert!(!b.is_live());
        assert!(b.iterate().iter().all(Option::is_none));
    }

    #[test]
    fn equivocation_splits_init_payloads() {
        let s = Strategy::Equivocate {
            a: Value(0),
            b: Value(1),
        };
        let mut b = ByzNode::new(&cfg(), NodeId(3), s, false, 0);
        b.propose();
        let out = b.iterate();
        assert!(out[3].is_none());
        let send = |d: usize| out[d].as_ref().unwrap().objects[0].brb[0][3].send;
        assert_eq!(send(0), Some(Tagged::value(NodeId(3), Value(0))));
        assert_eq!(send(1), Some(Tagged::value(NodeId(3), Value(1))));
        assert_eq!(send(2), send(0));
    }

    #[test]
    fn spam_payload_is_never_valid() {
        for seed in 0..8 {
            let mut b = ByzNode::new(&cfg(), NodeId(3), Strategy::SpamInvalid, false, seed);
            b.propose();
            let out = b.iterate();
            let t = out[0].as_ref().unwrap().objects[0].brb[0][3].send.unwrap();
            let ok =
                t.origin == NodeId(3) && matches!(t.body, crate::wire::Body::Value(v) if v.0 < 4);
            assert!(!ok, "seed {seed}: {t}");
        }
    }

    #[test]
    fn delay_sends_every_lag_iterations() {
        let mut b = ByzNode::new(
            &cfg(),
            NodeId(3),
            Strategy::DelayMaximal {
                lag: 3,
                value: Value(0),
            },
            false,
            0,
        );
        b.propose();
        let sent: Vec<bool> = (0..6).map(|_| b.iterate()[0].is_some()).collect();
        assert_eq!(sent, vec![false, false, true, false, false, true]);
    }
}
