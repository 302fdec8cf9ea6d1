//! A node's full protocol stack: one or more consensus objects and, in
//! differential runs, the reference stack.

use crate::mvc::{Mvc, MvcConfig};
use crate::oracle::OracleMvc;
use crate::types::{NodeId, Value};
use crate::wire::Packet;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Node {
    pub(crate) id: NodeId,
    pub(crate) objects: Vec<Mvc>,
    pub(crate) oracle: Option<OracleMvc>,
    cfg: Vec<MvcConfig>,
}

impl Node {
    pub fn new(cfg: &[MvcConfig], id: NodeId, with_oracle: bool) -> Self {
        Node {
            id,
            objects: cfg.iter().map(|c| Mvc::new(c, id)).collect(),
            oracle: with_oracle.then(|| OracleMvc::new(&cfg[0], id)),
            cfg: cfg.to_vec(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn objects(&self) -> &[Mvc] {
        &self.objects
    }

    pub fn object_mut(&mut self, o: usize) -> &mut Mvc {
        &mut self.objects[o]
    }

    pub fn oracle(&self) -> Option<&OracleMvc> {
        self.oracle.as_ref()
    }

    /// Proposes `v` on every object.
    pub fn propose(&mut self, v: Value) {
        for o in &mut self.objects {
            o.propose(v);
        }
        if let Some(o) = &mut self.oracle {
            o.propose(v);
        }
    }

    /// One do-forever iteration; returns the packet for every peer.
    pub fn iterate(&mut self) -> Packet {
        for o in &mut self.objects {
            o.update();
            o.tick();
            o.update();
        }
        if let Some(o) = &mut self.oracle {
            o.update();
        }
        self.snapshot()
    }

    pub fn snapshot(&self) -> Packet {
        Packet {
            objects: self.objects.iter().map(|o| o.snapshot()).collect(),
            oracle: self.oracle.as_ref().map(|o| o.snapshot()),
        }
    }

    pub fn receive(&mut self, from: NodeId, p: &Packet) {
        for (o, s) in self.objects.iter_mut().zip(&p.objects) {
            o.absorb(from, s);
        }
        if let (Some(o), Some(s)) = (&mut self.oracle, &p.oracle) {
            o.absorb(from, s);
        }
    }

    /// Returns every object to its post-recycling state. The reference
    /// stack has no recycling of its own and is rebuilt.
    pub fn recycle(&mut self) {
        for o in &mut self.objects {
            o.recycle();
        }
        if self.oracle.is_some() {
            self.oracle = Some(OracleMvc::new(&self.cfg[0], self.id));
        }
    }
}
