//! Transient faults: a one-time arbitrary rewrite of correct nodes' protocol
//! state and of channel contents, applied before the first step.
//!
//! Every mutable field has a stable path such as
//! `node/2/obj/0/brb/valid/1/ready/3` or `channels/0/2`. A mask of path
//! patterns selects the fields; `*` matches one segment and a pattern also
//! matches everything below it.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bincon::BinCon;
use crate::brb::BrbInstance;
use crate::bv::BvInstance;
use crate::mvc::Mvc;
use crate::sim::world::{Actor, SimWorld, PREEXISTING};
use crate::types::{Alphabet, DeliveryResult, NodeId, Value};
use crate::wire::{
    BcRoundVotes, BcVotes, Body, BoolSet, BrbVotes, Content, ObjectSnapshot, Packet, Phase, Tagged,
};

/// Adversarially chosen corruptions, applied after the random ones.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Targeted {
    /// Every correct node's binary consensus of object 0 decided `true`.
    BcForcedTrue,
    /// Every correct node delivered VALID of `origin` without its INIT.
    ValidWithoutInit { origin: usize },
    /// Every correct node delivered an INIT payload it never received
    /// messages for.
    DeliveredWithoutMessages,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub seed: u64,
    /// Path patterns selecting the corruptible fields. Empty selects none.
    #[serde(default)]
    pub mask: Vec<String>,
    /// Probability that a selected field is rewritten.
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default)]
    pub targeted: Vec<Targeted>,
}

fn default_rate() -> f64 {
    0.3
}

impl FaultSpec {
    /// Random corruption of everything.
    pub fn everything(seed: u64, rate: f64) -> Self {
        FaultSpec {
            seed,
            mask: vec!["*".into()],
            rate,
            targeted: vec![],
        }
    }
}

/// Whether `path` is selected by `pattern`.
pub fn matches(pattern: &str, path: &str) -> bool {
    let mut p = pattern.split('/').filter(|s| !s.is_empty());
    let mut q = path.split('/');
    loop {
        match (p.next(), q.next()) {
            (None, _) => return true,
            (Some(_), None) => return false,
            (Some(a), Some(b)) if a == "*" || a == b => {}
            _ => return false,
        }
    }
}

struct Gen {
    rng: ChaCha8Rng,
    n: usize,
    alphabet: Alphabet,
    rate: f64,
    mask: Vec<String>,
    changed: usize,
}

impl Gen {
    /// Whether the field at `path` is rewritten.
    fn hit(&mut self, path: impl FnOnce() -> String) -> bool {
        if self.mask.is_empty() {
            return false;
        }
        let path = path();
        if self.mask.iter().any(|m| matches(m, &path))
            && self.rng.gen_bool(self.rate.clamp(0.0, 1.0))
        {
            self.changed += 1;
            return true;
        }
        false
    }

    fn node(&mut self) -> NodeId {
        NodeId(self.rng.gen_range(0..self.n))
    }

    fn value(&mut self) -> Value {
        // Mostly in the alphabet, occasionally one past it.
        Value(self.rng.gen_range(0..=self.alphabet.size))
    }

    fn tagged(&mut self) -> Tagged {
        let origin = self.node();
        if self.rng.gen_bool(0.5) {
            Tagged::value(origin, self.value())
        } else {
            Tagged::flag(origin, self.rng.gen())
        }
    }

    fn opt_tagged(&mut self) -> Option<Tagged> {
        self.rng.gen_bool(0.7).then(|| self.tagged())
    }

    fn content(&mut self) -> Option<Content> {
        match self.rng.gen_range(0..10) {
            0..=2 => None,
            3 => Some(Content::Bolt),
            _ => Some(Content::Data(self.tagged())),
        }
    }

    fn delivery<T>(&mut self, mut f: impl FnMut(&mut Self) -> T) -> DeliveryResult<T> {
        match self.rng.gen_range(0..10) {
            0..=3 => DeliveryResult::Pending,
            4 => DeliveryResult::Error,
            _ => DeliveryResult::Decided(f(self)),
        }
    }

    fn boolset(&mut self) -> BoolSet {
        BoolSet(self.rng.gen_range(0..4))
    }

    fn opt_bool(&mut self) -> Option<bool> {
        self.rng.gen_bool(0.6).then(|| self.rng.gen())
    }

    fn brb_votes(&mut self) -> BrbVotes {
        BrbVotes {
            send: self.opt_tagged(),
            echo: self.opt_tagged(),
            ready: self.content(),
            ack: self.rng.gen(),
        }
    }

    fn snapshot(&mut self) -> ObjectSnapshot {
        let n = self.n;
        let row = |g: &mut Gen| (0..n).map(|_| g.brb_votes()).collect();
        let rounds = self.rng.gen_range(0..4);
        ObjectSnapshot {
            brb: [row(self), row(self)],
            bv: self.boolset(),
            bc: BcVotes {
                rounds: (0..rounds)
                    .map(|_| BcRoundVotes {
                        forward: self.boolset(),
                        aux: self.opt_bool(),
                    })
                    .collect(),
                decided: self.opt_bool(),
            },
        }
    }

    fn brb(&mut self, b: &mut BrbInstance, at: &str) {
        let me = b.me;
        if me == b.originator && self.hit(|| format!("{at}/input")) {
            b.input = self.opt_tagged();
        }
        if self.hit(|| format!("{at}/send")) {
            b.send = self.opt_tagged();
        }
        for j in 0..self.n {
            if self.hit(|| format!("{at}/echo/{j}")) {
                b.echoes[j] = self.opt_tagged();
            }
            if self.hit(|| format!("{at}/ready/{j}")) {
                b.readies[j] = self.content();
            }
            if self.hit(|| format!("{at}/ack/{j}")) {
                b.acks[j] = self.rng.gen();
            }
        }
        if self.hit(|| format!("{at}/delivered")) {
            b.delivered = self.delivery(Gen::tagged);
        }
    }

    fn bv(&mut self, bv: &mut BvInstance, at: &str) {
        for j in 0..self.n {
            if self.hit(|| format!("{at}/forward/{j}")) {
                bv.forwards[j] = self.boolset();
            }
        }
        if self.hit(|| format!("{at}/proposed")) {
            bv.proposed = self.boolset();
        }
        if self.hit(|| format!("{at}/bin_values")) {
            bv.bin_values = self.boolset();
        }
    }

    fn bc(&mut self, bc: &mut BinCon, at: &str) {
        if self.hit(|| format!("{at}/proposed")) {
            bc.proposed = self.opt_bool();
        }
        if self.hit(|| format!("{at}/est")) {
            bc.est = self.rng.gen();
        }
        if self.hit(|| format!("{at}/round")) {
            bc.round = self.rng.gen_range(0..5);
            bc.ensure_round(bc.round);
        }
        if self.hit(|| format!("{at}/decided")) {
            bc.decided = self.delivery(|g| g.rng.gen());
        }
        for j in 0..self.n {
            if self.hit(|| format!("{at}/report/{j}")) {
                bc.reports[j] = self.opt_bool();
            }
        }
        for (r, round) in bc.rounds.iter_mut().enumerate() {
            let at = format!("{at}/r/{}", r + 1);
            self.bv(&mut round.bv, &at);
            for j in 0..self.n {
                if self.hit(|| format!("{at}/aux/{j}")) {
                    round.aux[j] = self.opt_bool();
                }
            }
        }
    }

    fn object(&mut self, m: &mut Mvc, at: &str) {
        for phase in Phase::ALL {
            for k in 0..self.n {
                let at = format!("{at}/brb/{}/{k}", phase.name());
                self.brb(m.vbb.brb_mut(phase, NodeId(k)), &at);
            }
        }
        self.bv(&mut m.bv, &format!("{at}/bv"));
        self.bc(&mut m.bc, &format!("{at}/bc"));
    }
}

/// Applies `spec` to the world. Must run before the first step. Returns the
/// number of rewritten fields and channels.
pub fn inject(world: &mut SimWorld, spec: &FaultSpec) -> usize {
    let n = world.params.n;
    let alphabet = match world.actors.iter().find_map(|a| match a {
        Actor::Correct(node) => node.objects().first().map(|o| o.vbb().alphabet),
        Actor::Byzantine(_) => None,
    }) {
        Some(a) => a,
        None => return 0,
    };
    let mut g = Gen {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        n,
        alphabet,
        rate: spec.rate,
        mask: spec.mask.clone(),
        changed: 0,
    };
    for i in 0..n {
        if let Actor::Correct(node) = &mut world.actors[i] {
            for (o, obj) in node.objects.iter_mut().enumerate() {
                g.object(obj, &format!("node/{i}/obj/{o}"));
            }
        }
    }
    let mut junk = Vec::new();
    for s in 0..n {
        for d in 0..n {
            if s != d && g.hit(|| format!("channels/{s}/{d}")) {
                let count = g.rng.gen_range(1..=world.params.capacity);
                for _ in 0..count {
                    let p = Packet {
                        objects: (0..world.objects).map(|_| g.snapshot()).collect(),
                        oracle: None,
                    };
                    junk.push((NodeId(s), NodeId(d), p));
                }
            }
        }
    }
    let mut changed = g.changed;
    for (s, d, p) in junk {
        world.channels[s.0 * n + d.0].clear();
        world.enqueue(s, d, PREEXISTING, Arc::new(p));
    }
    for t in &spec.targeted {
        changed += targeted(world, t, &mut g);
    }
    if changed > 0 || !spec.mask.is_empty() || !spec.targeted.is_empty() {
        world.mark_corrupted(changed);
    }
    changed
}

fn targeted(world: &mut SimWorld, t: &Targeted, g: &mut Gen) -> usize {
    let mut changed = 0;
    for a in &mut world.actors {
        let Actor::Correct(node) = a else { continue };
        let me = node.id();
        for obj in node.objects.iter_mut().take(match t {
            Targeted::BcForcedTrue => 1,
            _ => usize::MAX,
        }) {
            match *t {
                Targeted::BcForcedTrue => {
                    let bc = &mut obj.bc;
                    bc.proposed = Some(true);
                    bc.est = true;
                    bc.round = bc.round.max(1);
                    bc.ensure_round(bc.round);
                    bc.decided = DeliveryResult::Decided(true);
                    bc.reports[me.0] = Some(true);
                }
                Targeted::ValidWithoutInit { origin } => {
                    let k = NodeId(origin % g.n);
                    obj.vbb.brb_mut(Phase::Init, k).delivered = DeliveryResult::Pending;
                    obj.vbb.brb_mut(Phase::Valid, k).delivered =
                        DeliveryResult::Decided(Tagged::flag(k, true));
                }
                Targeted::DeliveredWithoutMessages => {
                    let k = g.node();
                    let v = g.value();
                    let b = obj.vbb.brb_mut(Phase::Init, k);
                    b.echoes.iter_mut().for_each(|e| *e = None);
                    b.readies.iter_mut().for_each(|r| *r = None);
                    b.send = None;
                    b.delivered = DeliveryResult::Decided(Tagged {
                        origin: k,
                        body: Body::Value(v),
                    });
                }
            }
            changed += 1;
        }
    }
    changed
}

/// Every corruptible path of the world, for listing and mask authoring.
pub fn paths(world: &SimWorld) -> Vec<String> {
    let n = world.params.n;
    let mut out = Vec::new();
    let bv = |out: &mut Vec<String>, at: &str| {
        for j in 0..n {
            out.push(format!("{at}/forward/{j}"));
        }
        out.push(format!("{at}/proposed"));
        out.push(format!("{at}/bin_values"));
    };
    for a in &world.actors {
        let Actor::Correct(node) = a else { continue };
        let i = node.id().0;
        for (o, obj) in node.objects().iter().enumerate() {
            let at = format!("node/{i}/obj/{o}");
            for phase in Phase::ALL {
                for k in 0..n {
                    let b = format!("{at}/brb/{}/{k}", phase.name());
                    if k == i {
                        out.push(format!("{b}/input"));
                    }
                    out.push(format!("{b}/send"));
                    for j in 0..n {
                        out.push(format!("{b}/echo/{j}"));
                        out.push(format!("{b}/ready/{j}"));
                        out.push(format!("{b}/ack/{j}"));
                    }
                    out.push(format!("{b}/delivered"));
                }
            }
            bv(&mut out, &format!("{at}/bv"));
            for f in ["proposed", "est", "round", "decided"] {
                out.push(format!("{at}/bc/{f}"));
            }
            for j in 0..n {
                out.push(format!("{at}/bc/report/{j}"));
            }
            for r in 1..=obj.bc().rounds.len() {
                bv(&mut out, &format!("{at}/bc/r/{r}"));
                for j in 0..n {
                    out.push(format!("{at}/bc/r/{r}/aux/{j}"));
                }
            }
        }
    }
    for s in 0..n {
        for d in 0..n {
            if s != d {
                out.push(format!("channels/{s}/{d}"));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_matching() {
        assert!(matches("node/*/obj/0/bc", "node/3/obj/0/bc/decided"));
        assert!(matches("*", "channels/0/1"));
        assert!(!matches("node/1", "node/10/obj/0/bv/bin_values"));
        assert!(!matches("node/1/obj/0/bc/decided", "node/1/obj/0/bc"));
        assert!(matches("channels", "channels/2/3"));
    }
}
