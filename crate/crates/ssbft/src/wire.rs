//! Wire formats. Every loop iteration a node sends each peer one packet that
//! carries the complete current state of all its protocol objects, so a
//! single delivered packet refreshes everything the receiver knows about the
//! sender.

use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::types::{NodeId, Value};

/// The two BRB phases of a validated broadcast.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    Init,
    Valid,
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::Init, Phase::Valid];

    pub fn index(self) -> usize {
        match self {
            Phase::Init => 0,
            Phase::Valid => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Init => "init",
            Phase::Valid => "valid",
        }
    }
}

/// Second component of a BRB payload: a proposal value or a validity flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Body {
    Value(Value),
    Flag(bool),
}

/// A BRB payload `(origin, body)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tagged {
    pub origin: NodeId,
    pub body: Body,
}

impl Tagged {
    pub fn value(origin: NodeId, v: Value) -> Self {
        Tagged {
            origin,
            body: Body::Value(v),
        }
    }

    pub fn flag(origin: NodeId, x: bool) -> Self {
        Tagged {
            origin,
            body: Body::Flag(x),
        }
    }
}

impl fmt::Display for Tagged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.body {
            Body::Value(v) => write!(f, "({},{})", self.origin.0, v),
            Body::Flag(x) => write!(f, "({},{})", self.origin.0, x),
        }
    }
}

/// READY content: a payload or the error symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Content {
    Data(Tagged),
    Bolt,
}

/// Subset of `{false, true}` as a two-bit mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoolSet(pub u8);

impl BoolSet {
    pub const EMPTY: BoolSet = BoolSet(0);

    fn bit(b: bool) -> u8 {
        if b {
            2
        } else {
            1
        }
    }

    pub fn only(b: bool) -> Self {
        BoolSet(Self::bit(b))
    }

    pub fn contains(self, b: bool) -> bool {
        self.0 & Self::bit(b) != 0
    }

    pub fn insert(&mut self, b: bool) {
        self.0 |= Self::bit(b);
    }

    pub fn remove(&mut self, b: bool) {
        self.0 &= !Self::bit(b);
    }

    pub fn is_empty(self) -> bool {
        self.0 & 3 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = bool> {
        [false, true].into_iter().filter(move |b| self.contains(*b))
    }

    pub fn len(self) -> usize {
        self.iter().count()
    }
}

impl fmt::Display for BoolSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<&str> = self.iter().map(|b| if b { "T" } else { "F" }).collect();
        write!(f, "{{{}}}", items.join(","))
    }
}

/// What one node currently says about one BRB instance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BrbVotes {
    /// Only meaningful when the sender is the instance's originator.
    pub send: Option<Tagged>,
    pub echo: Option<Tagged>,
    pub ready: Option<Content>,
    /// The sender has delivered (completion acknowledgment).
    pub ack: bool,
}

/// What one node currently says about one binary consensus round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BcRoundVotes {
    pub forward: BoolSet,
    pub aux: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BcVotes {
    pub rounds: Vec<BcRoundVotes>,
    pub decided: Option<bool>,
}

/// Full state of one consensus object as seen on the wire.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectSnapshot {
    /// `brb[phase][originator]`.
    pub brb: [Vec<BrbVotes>; 2],
    pub bv: BoolSet,
    pub bc: BcVotes,
}

/// One packet: the sender's complete protocol state.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Packet {
    pub objects: Vec<ObjectSnapshot>,
    /// Reference stack state, present only in differential runs.
    pub oracle: Option<ObjectSnapshot>,
}

/// Protocol tag of a flattened message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kind {
    BrbSend,
    BrbEcho,
    BrbReady,
    BrbAck,
    BvForward,
    BcForward,
    BcAux,
    BcDecided,
}

/// Routing key of a flattened message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instance {
    /// Consensus object index; `None` for the reference stack.
    pub object: Option<usize>,
    pub originator: Option<NodeId>,
    pub phase: Option<Phase>,
    pub round: Option<usize>,
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.object {
            Some(o) => write!(f, "obj{o}")?,
            None => write!(f, "oracle")?,
        }
        if let Some(p) = self.phase {
            write!(f, "/{}", p.name())?;
        }
        if let Some(k) = self.originator {
            write!(f, "/{}", k.0)?;
        }
        if let Some(r) = self.round {
            write!(f, "/r{r}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Payload {
    Tagged(Tagged),
    Content(Content),
    Bools(BoolSet),
    Bool(bool),
    Empty,
}

/// Envelope view of one record inside a packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub kind: Kind,
    pub instance: Instance,
    pub payload: Payload,
}

impl ObjectSnapshot {
    pub fn empty(n: usize) -> Self {
        ObjectSnapshot {
            brb: [vec![BrbVotes::default(); n], vec![BrbVotes::default(); n]],
            bv: BoolSet::EMPTY,
            bc: BcVotes::default(),
        }
    }

    fn messages_into(&self, object: Option<usize>, out: &mut Vec<Message>) {
        for phase in Phase::ALL {
            for (k, v) in self.brb[phase.index()].iter().enumerate() {
                let instance = Instance {
                    object,
                    originator: Some(NodeId(k)),
                    phase: Some(phase),
                    round: None,
                };
                let mut push = |kind, payload| {
                    out.push(Message {
                        kind,
                        instance,
                        payload,
                    })
                };
                if let Some(s) = v.send {
                    push(Kind::BrbSend, Payload::Tagged(s));
                }
                if let Some(e) = v.echo {
                    push(Kind::BrbEcho, Payload::Tagged(e));
                }
                if let Some(r) = v.ready {
                    push(Kind::BrbReady, Payload::Content(r));
                }
                if v.ack {
                    push(Kind::BrbAck, Payload::Empty);
                }
            }
        }
        let base = Instance {
            object,
            originator: None,
            phase: None,
            round: None,
        };
        if !self.bv.is_empty() {
            out.push(Message {
                kind: Kind::BvForward,
                instance: base,
                payload: Payload::Bools(self.bv),
            });
        }
        for (r, rv) in self.bc.rounds.iter().enumerate() {
            let instance = Instance {
                round: Some(r + 1),
                ..base
            };
            if !rv.forward.is_empty() {
                out.push(Message {
                    kind: Kind::BcForward,
                    instance,
                    payload: Payload::Bools(rv.forward),
                });
            }
            if let Some(a) = rv.aux {
                out.push(Message {
                    kind: Kind::BcAux,
                    instance,
                    payload: Payload::Bool(a),
                });
            }
        }
        if let Some(d) = self.bc.decided {
            out.push(Message {
                kind: Kind::BcDecided,
                instance: base,
                payload: Payload::Bool(d),
            });
        }
    }
}

impl Packet {
    /// Flattens the packet into envelope records.
    pub fn messages(&self) -> Vec<Message> {
        let mut out = Vec::new();
        for (o, obj) in self.objects.iter().enumerate() {
            obj.messages_into(Some(o), &mut out);
        }
        if let Some(o) = &self.oracle {
            o.messages_into(None, &mut out);
        }
        out
    }

    /// Stable 64-bit digest used in traces.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv64::default();
        self.hash(&mut h);
        h.finish()
    }
}

/// FNV-1a, stable across platforms and runs.
#[derive(Clone, Copy)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }
}

impl Hasher for Fnv64 {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn write_usize(&mut self, i: usize) {
        self.write(&(i as u64).to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boolset_ops() {
        let mut s = BoolSet::EMPTY;
        assert!(s.is_empty());
        s.insert(true);
        assert!(s.contains(true) && !s.contains(false));
        s.insert(false);
        assert_eq!(s.len(), 2);
        assert_eq!(s.to_string(), "{F,T}");
    }

    #[test]
    fn packet_flattening_and_digest() {
        let mut obj = ObjectSnapshot::empty(2);
        obj.brb[0][1].send = Some(Tagged::value(NodeId(1), Value(0)));
        obj.brb[0][1].ack = true;
        obj.bv = BoolSet::only(true);
        let p = Packet {
            objects: vec![obj],
            oracle: None,
        };
        let m = p.messages();
        assert_eq!(m.len(), 3);
        assert_eq!(m[0].kind, Kind::BrbSend);
        assert_eq!(m[0].instance.to_string(), "obj0/init/1");
        assert_eq!(p.digest(), p.clone().digest());
        assert_ne!(p.digest(), Packet::default().digest());
    }
}
