//! The simulated system: nodes, channels, scheduler and trace, advanced one
//! atomic step at a time.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::byzantine::{ByzNode, Strategy};
use crate::mvc::{MvcBranch, MvcConfig};
use crate::node::Node;
use crate::recycler::Recycler;
use crate::sim::channel::{Channel, Envelope, Overflow};
use crate::sim::cycles::CycleTracker;
use crate::sim::scheduler::{Action, Policy, Scheduler, View};
use crate::sim::trace::{Event, EventKind, Trace, TraceHeader};
use crate::types::{DeliveryResult, NodeId, SystemParams, Value};
use crate::vbb::VbbBranch;
use crate::wire::{Kind, Packet};

/// Sequence number of packets that were in a channel before the run started.
pub const PREEXISTING: u64 = u64::MAX;

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)] // n actors, stored once
pub enum Actor {
    Correct(Node),
    Byzantine(ByzNode),
}

impl Actor {
    pub fn is_correct(&self) -> bool {
        matches!(self, Actor::Correct(_))
    }

    fn is_live(&self) -> bool {
        match self {
            Actor::Correct(_) => true,
            Actor::Byzantine(b) => b.is_live(),
        }
    }

    fn receive(&mut self, from: NodeId, p: &Packet) {
        match self {
            Actor::Correct(n) => n.receive(from, p),
            Actor::Byzantine(b) => b.receive(from, p),
        }
    }

    fn recycle(&mut self) {
        match self {
            Actor::Correct(n) => n.recycle(),
            Actor::Byzantine(b) => b.recycle(),
        }
    }
}

/// Everything needed to build a world.
#[derive(Clone, Debug)]
pub struct WorldSpec {
    /// One configuration per consensus object; more than one models
    /// batched recycling.
    pub objects: Vec<MvcConfig>,
    /// Proposal of each correct node; `None` marks a Byzantine node.
    pub proposals: Vec<Option<Value>>,
    pub byzantine: Vec<(NodeId, Strategy)>,
    pub policy: Policy,
    pub seed: u64,
    pub overflow: Overflow,
    pub oracle: bool,
    /// Epoch whose completion by every correct node is expected; recorded in
    /// the trace so completion can be judged offline.
    pub target_epoch: Option<u32>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WorldError {
    #[error("max_steps must be positive")]
    ZeroSteps,
    #[error("{0} Byzantine nodes exceed t = {1}")]
    TooManyByzantine(usize, usize),
    #[error("node {0} is listed as Byzantine twice or is out of range")]
    BadByzantine(usize),
    #[error("expected {expected} proposals, got {got}")]
    Proposals { expected: usize, got: usize },
    #[error("no objects configured")]
    NoObjects,
}

/// Messages sent per protocol layer, counting one per recipient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LayerCounts {
    pub brb: u64,
    pub bv: u64,
    pub bc: u64,
}

impl LayerCounts {
    fn add(&mut self, p: &Packet, copies: u64) {
        for m in p
            .messages()
            .into_iter()
            .filter(|m| m.instance.object.is_some())
        {
            let slot = match m.kind {
                Kind::BrbSend | Kind::BrbEcho | Kind::BrbReady | Kind::BrbAck => &mut self.brb,
                Kind::BvForward => &mut self.bv,
                Kind::BcForward | Kind::BcAux | Kind::BcDecided => &mut self.bc,
            };
            *slot += copies;
        }
    }
}

#[derive(Clone, Debug)]
struct Observed {
    vbb: Vec<Vec<(DeliveryResult, VbbBranch)>>,
    decide: Vec<(DeliveryResult, MvcBranch)>,
    bin: Vec<(Option<bool>, DeliveryResult<bool>)>,
    oracle_vbb: Vec<DeliveryResult>,
    oracle: DeliveryResult,
}

impl Observed {
    fn new(objects: usize, n: usize) -> Self {
        Observed {
            vbb: vec![vec![(DeliveryResult::Pending, VbbBranch::Waiting); n]; objects],
            decide: vec![(DeliveryResult::Pending, MvcBranch::NotReady); objects],
            bin: vec![(None, DeliveryResult::Pending); objects],
            oracle_vbb: vec![DeliveryResult::Pending; n],
            oracle: DeliveryResult::Pending,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimWorld {
    pub(crate) params: SystemParams,
    pub(crate) objects: usize,
    pub(crate) actors: Vec<Actor>,
    /// Channel `s -> d` at index `s * n + d`; the diagonal is unused.
    pub(crate) channels: Vec<Channel>,
    proposals: Vec<Option<Value>>,
    scheduler: Scheduler,
    rng: ChaCha8Rng,
    overflow: Overflow,
    step: u64,
    order: u64,
    seqs: Vec<u64>,
    epoch: u32,
    started: bool,
    trace: Trace,
    cycles: CycleTracker,
    observed: Vec<Observed>,
    /// Whether each correct node has reported a result for each object
    /// during the current epoch.
    was_delivered: Vec<Vec<bool>>,
    recycler: Recycler,
    messages: LayerCounts,
}

impl SimWorld {
    pub fn new(spec: &WorldSpec) -> Result<SimWorld, WorldError> {
        let cfg = spec.objects.first().ok_or(WorldError::NoObjects)?;
        let params = cfg.params;
        let n = params.n;
        if spec.proposals.len() != n {
            return Err(WorldError::Proposals {
                expected: n,
                got: spec.proposals.len(),
            });
        }
        if spec.byzantine.len() > params.t {
            return Err(WorldError::TooManyByzantine(spec.byzantine.len(), params.t));
        }
        let mut strategies: Vec<Option<Strategy>> = vec![None; n];
        for (id, s) in &spec.byzantine {
            if id.0 >= n || strategies[id.0].is_some() {
                return Err(WorldError::BadByzantine(id.0));
            }
            strategies[id.0] = Some(s.clone());
        }
        let actors: Vec<Actor> = params
            .nodes()
            .map(|id| match strategies[id.0].take() {
                Some(s) => {
                    Actor::Byzantine(ByzNode::new(&spec.objects, id, s, spec.oracle, spec.seed))
                }
                None => Actor::Correct(Node::new(&spec.objects, id, spec.oracle)),
            })
            .collect();
        let correct: Vec<NodeId> = params
            .nodes()
            .filter(|i| actors[i.0].is_correct())
            .collect();
        let missing = correct
            .iter()
            .filter(|i| spec.proposals[i.0].is_none())
            .count();
        if missing > 0 {
            return Err(WorldError::Proposals {
                expected: correct.len(),
                got: correct.len() - missing,
            });
        }
        let channels = (0..n * n)
            .map(|k| Channel::new(NodeId(k / n), NodeId(k % n), params.capacity))
            .collect();
        let header = TraceHeader {
            params,
            correct: correct.clone(),
            objects: spec.objects.len(),
            mode: cfg.mode,
            fair: spec.policy.is_fair(),
            corrupted: false,
            oracle: spec.oracle,
            target_epoch: spec.target_epoch,
            steps: 0,
            stop_met: false,
        };
        Ok(SimWorld {
            params,
            objects: spec.objects.len(),
            actors,
            channels,
            proposals: spec.proposals.clone(),
            scheduler: Scheduler::new(spec.policy.clone()),
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            overflow: spec.overflow,
            step: 0,
            order: 0,
            seqs: vec![0; n],
            epoch: 0,
            started: false,
            trace: Trace::new(header),
            cycles: CycleTracker::new(n, &correct),
            observed: vec![Observed::new(spec.objects.len(), n); n],
            was_delivered: vec![vec![false; spec.objects.len()]; n],
            recycler: Recycler::new(spec.objects.len()),
            messages: LayerCounts::default(),
        })
    }

    pub fn params(&self) -> SystemParams {
        self.params
    }

    pub fn actors(&self) -> &[Actor] {
        &self.actors
    }

    pub fn node(&self, i: NodeId) -> Option<&Node> {
        match &self.actors[i.0] {
            Actor::Correct(n) => Some(n),
            Actor::Byzantine(_) => None,
        }
    }

    pub fn correct(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.params
            .nodes()
            .filter(|i| self.actors[i.0].is_correct())
    }

    pub fn channel(&self, src: NodeId, dst: NodeId) -> &Channel {
        &self.channels[src.0 * self.params.n + dst.0]
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn cycle(&self) -> u64 {
        self.cycles.current()
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn messages(&self) -> LayerCounts {
        self.messages
    }

    pub fn recycles(&self) -> u32 {
        self.epoch
    }

    /// Whether every correct node reports a result for every object in the
    /// current epoch.
    pub fn all_decided(&self) -> bool {
        self.correct()
            .all(|i| self.was_delivered[i.0].iter().all(|d| *d))
    }

    pub(crate) fn mark_corrupted(&mut self, fields: usize) {
        self.trace.header.corrupted = true;
        self.emit(None, EventKind::Corrupt { fields });
    }

    pub(crate) fn next_order(&mut self) -> u64 {
        self.order += 1;
        self.order
    }

    fn emit(&mut self, node: Option<NodeId>, kind: EventKind) {
        let cycle = self.cycles.observe(self.step, node, &kind);
        self.trace.push(Event {
            step: self.step,
            cycle,
            node,
            kind,
        });
    }

    /// Invokes the proposals of the current epoch.
    fn propose_all(&mut self) {
        let epoch = self.epoch;
        for i in 0..self.params.n {
            match &mut self.actors[i] {
                Actor::Correct(node) => {
                    let v = self.proposals[i].expect("correct nodes have proposals");
                    node.propose(v);
                    for object in 0..self.objects {
                        self.emit(
                            Some(NodeId(i)),
                            EventKind::Propose {
                                object,
                                epoch,
                                value: v,
                            },
                        );
                    }
                }
                Actor::Byzantine(b) => b.propose(),
            }
        }
    }

    fn start(&mut self) {
        if !self.started {
            self.started = true;
            self.propose_all();
            for i in self.params.nodes() {
                self.observe(i);
            }
        }
    }

    /// Executes one atomic step; `None` when nothing is enabled.
    pub fn step(&mut self) -> Option<Action> {
        self.start();
        let n = self.params.n;
        let live: Vec<bool> = self.actors.iter().map(Actor::is_live).collect();
        let pending: Vec<(NodeId, NodeId, u64)> = self
            .channels
            .iter()
            .filter_map(|c| c.head().map(|e| (c.src, c.dst, e.order)))
            .collect();
        let view = View {
            step: self.step,
            live: &live,
            pending: &pending,
        };
        let action = self.scheduler.pick(&view, &mut self.rng)?;
        match action {
            Action::Iterate(i) => {
                let out: Vec<Option<Arc<Packet>>> = match &mut self.actors[i.0] {
                    Actor::Correct(node) => {
                        let p = Arc::new(node.iterate());
                        (0..n).map(|d| (d != i.0).then(|| p.clone())).collect()
                    }
                    Actor::Byzantine(b) => b.iterate(),
                };
                if let Some(p) = out.iter().flatten().next() {
                    let seq = self.seqs[i.0];
                    self.seqs[i.0] += 1;
                    self.emit(
                        Some(i),
                        EventKind::Send {
                            seq,
                            digest: p.digest(),
                        },
                    );
                    for (d, p) in out.into_iter().enumerate() {
                        if let Some(p) = p {
                            self.messages.add(&p, 1);
                            self.enqueue(i, NodeId(d), seq, p);
                        }
                    }
                }
                self.observe(i);
            }
            Action::Deliver { src, dst } => {
                let env = self.channels[src.0 * n + dst.0]
                    .pop()
                    .expect("scheduled channel is non-empty");
                self.emit(
                    Some(dst),
                    EventKind::Receive {
                        from: src,
                        seq: env.seq,
                        digest: env.packet.digest(),
                    },
                );
                self.actors[dst.0].receive(src, &env.packet);
            }
        }
        self.step += 1;
        if self
            .recycler
            .poll(self.all_decided(), self.cycles.current())
        {
            self.recycle();
        }
        Some(action)
    }

    pub(crate) fn enqueue(&mut self, src: NodeId, dst: NodeId, seq: u64, packet: Arc<Packet>) {
        let order = self.next_order();
        let env = Envelope {
            src,
            seq,
            order,
            packet,
        };
        let lost = self.channels[src.0 * self.params.n + dst.0].push(env, self.overflow);
        if let Some(lost) = lost {
            self.emit(
                Some(dst),
                EventKind::Drop {
                    from: src,
                    seq: lost.seq,
                },
            );
        }
    }

    /// Records result changes of node `i`.
    fn observe(&mut self, i: NodeId) {
        let epoch = self.epoch;
        let Actor::Correct(node) = &self.actors[i.0] else {
            return;
        };
        let mut events = Vec::new();
        let seen = &mut self.observed[i.0];
        for (o, obj) in node.objects().iter().enumerate() {
            for k in self.params.nodes() {
                let now = obj.vbb().vbb_deliver_branch(k);
                if now.0 != seen.vbb[o][k.0].0 {
                    seen.vbb[o][k.0] = now;
                    events.push(EventKind::VbbDeliver {
                        object: o,
                        epoch,
                        origin: k,
                        result: now.0,
                        branch: now.1,
                    });
                }
            }
            let (proposed, bin) = (obj.bc().proposed, obj.bc().result());
            if proposed != seen.bin[o].0 {
                if let Some(value) = proposed {
                    events.push(EventKind::BinPropose {
                        object: o,
                        epoch,
                        value,
                    });
                }
            }
            if bin != seen.bin[o].1 {
                events.push(EventKind::BinDecide {
                    object: o,
                    epoch,
                    result: bin,
                });
            }
            seen.bin[o] = (proposed, bin);
            let now = obj.result_branch();
            if now.0 != seen.decide[o].0 {
                seen.decide[o] = now;
                events.push(EventKind::Decide {
                    object: o,
                    epoch,
                    result: now.0,
                    branch: now.1,
                });
            }
            if now.0.is_resolved() {
                self.was_delivered[i.0][o] = true;
            }
        }
        if let Some(or) = node.oracle() {
            for k in self.params.nodes() {
                let now = or.vbb_deliver(k);
                if now != seen.oracle_vbb[k.0] {
                    seen.oracle_vbb[k.0] = now;
                    events.push(EventKind::OracleVbb {
                        epoch,
                        origin: k,
                        result: now,
                    });
                }
            }
            let now = or.result();
            if now != seen.oracle {
                seen.oracle = now;
                events.push(EventKind::OracleDecide { epoch, result: now });
            }
        }
        for e in events {
            self.emit(Some(i), e);
        }
    }

    /// Recycles every object at every node, flushes the channels and starts
    /// the next epoch with the same proposals.
    fn recycle(&mut self) {
        for a in &mut self.actors {
            a.recycle();
        }
        for c in &mut self.channels {
            c.clear();
        }
        self.epoch += 1;
        for row in &mut self.was_delivered {
            row.iter_mut().for_each(|d| *d = false);
        }
        let n = self.params.n;
        self.observed = vec![Observed::new(self.objects, n); n];
        self.emit(None, EventKind::Recycle { epoch: self.epoch });
        self.propose_all();
    }

    /// Steps until `stop` holds or `max_steps` steps ran. Returns whether
    /// `stop` was met.
    pub fn run_until(
        &mut self,
        stop: impl FnMut(&SimWorld) -> bool,
        max_steps: u64,
    ) -> Result<bool, WorldError> {
        self.run_bounded(stop, max_steps, None)
    }

    /// [`SimWorld::run_until`], also giving up after `max_cycles` cycles.
    pub fn run_bounded(
        &mut self,
        mut stop: impl FnMut(&SimWorld) -> bool,
        max_steps: u64,
        max_cycles: Option<u64>,
    ) -> Result<bool, WorldError> {
        if max_steps == 0 {
            return Err(WorldError::ZeroSteps);
        }
        self.start();
        let mut met = stop(self);
        let mut ran = 0;
        while !met && ran < max_steps && max_cycles.map_or(true, |c| self.cycles.completed() < c) {
            if self.step().is_none() {
                break;
            }
            ran += 1;
            met = stop(self);
        }
        self.trace.header.steps = self.step;
        self.trace.header.stop_met = met;
        Ok(met)
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }
}

/// When a run ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(tag = "condition", rename_all = "kebab-case")]
pub enum Stop {
    /// Every correct node has a result for every object in `epoch`.
    Decided { epoch: u32 },
    /// Run exactly `max_steps` steps.
    Steps,
}

impl Default for Stop {
    fn default() -> Self {
        Stop::Decided { epoch: 0 }
    }
}

impl Stop {
    pub fn holds(&self, w: &SimWorld) -> bool {
        match *self {
            Stop::Decided { epoch } => w.epoch() > epoch || (w.epoch() == epoch && w.all_decided()),
            Stop::Steps => false,
        }
    }

    pub fn target_epoch(&self) -> Option<u32> {
        match *self {
            Stop::Decided { epoch } => Some(epoch),
            Stop::Steps => None,
        }
    }
}
