//! Property verdicts and metrics. Everything here is computed from a trace
//! alone, so a saved trace can be re-judged offline.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::mvc::MvcBranch;
use crate::sim::cycles::{cycle_index, round_index};
use crate::sim::trace::{EventKind, Trace};
use crate::sim::world::LayerCounts;
use crate::types::{DeliveryResult, NodeId, Value};
use crate::vbb::CountPhase;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Property {
    /// Corrupted start: every correct node reached a result and recycling fired.
    Convergence,
    McCompletion,
    McAgreement,
    McValidity,
    McNoIntrusion,
    /// A correct node's non-⊥ result never changes within an activation.
    McStability,
    BcCompletion,
    BcAgreement,
    BcValidity,
    VbbJustification,
    VbbObligation,
    VbbUniformity,
    /// VBB consistency tests never fire for correct senders.
    VbbTestSoundness,
    /// The unsupported-`True` test of the reduction never fires.
    McTestSoundness,
    /// Non-⊥ outcomes equal the reference stack's, node for node.
    OracleEquivalence,
}

impl Property {
    pub fn name(self) -> &'static str {
        match self {
            Property::Convergence => "convergence",
            Property::McCompletion => "mc-completion",
            Property::McAgreement => "mc-agreement",
            Property::McValidity => "mc-validity",
            Property::McNoIntrusion => "mc-no-intrusion",
            Property::McStability => "mc-stability",
            Property::BcCompletion => "bc-completion",
            Property::BcAgreement => "bc-agreement",
            Property::BcValidity => "bc-validity",
            Property::VbbJustification => "vbb-justification",
            Property::VbbObligation => "vbb-obligation",
            Property::VbbUniformity => "vbb-uniformity",
            Property::VbbTestSoundness => "vbb-test-soundness",
            Property::McTestSoundness => "mc-test-soundness",
            Property::OracleEquivalence => "oracle-equivalence",
        }
    }

    /// The four requirements of multivalued consensus.
    pub const CONSENSUS: [Property; 4] = [
        Property::McCompletion,
        Property::McAgreement,
        Property::McValidity,
        Property::McNoIntrusion,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: Property,
    /// Activation index; `None` for whole-run properties.
    pub epoch: Option<u32>,
    pub object: Option<usize>,
    pub status: Status,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeResult {
    pub node: NodeId,
    /// Final result per object in the last activation.
    pub results: Vec<DeliveryResult>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub name: String,
    pub steps: u64,
    pub stop_met: bool,
    pub corrupted: bool,
    pub fair: bool,
    /// Row counted by the VBB value check; reported so a deviation from the
    /// literal reading is visible.
    pub vbb_count_phase: CountPhase,
    pub epochs: u32,
    pub results: Vec<NodeResult>,
    pub verdicts: Vec<Verdict>,
    /// Completed asynchronous cycles before the first activation from which
    /// every check passes; `None` if none or if cycles are undefined.
    pub cycles_to_stabilize: Option<u64>,
    /// Communication rounds each activation needed until every correct node
    /// had a result for every object.
    pub rounds_to_decide: Vec<Option<u64>>,
    /// Asynchronous cycles each activation needed, on fair schedules.
    pub cycles_to_decide: Vec<Option<u64>>,
    pub messages: Option<LayerCounts>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.status != Status::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| v.status == Status::Fail)
    }

    /// `Pass` if every verdict of `p` passed, `Fail` if any failed,
    /// `NotApplicable` if none was checked.
    pub fn status(&self, p: Property) -> Status {
        let mut s = Status::NotApplicable;
        for v in self.verdicts.iter().filter(|v| v.property == p) {
            match v.status {
                Status::Fail => return Status::Fail,
                Status::Pass => s = Status::Pass,
                Status::NotApplicable => {}
            }
        }
        s
    }

    pub fn from_trace(trace: &Trace) -> Report {
        Judge::new(trace).report()
    }
}

/// Per-(epoch, object) facts gathered from the trace.
#[derive(Default)]
struct Activation {
    start: usize,
    proposals: BTreeMap<NodeId, Value>,
    /// Every result change of each correct node, in order.
    decisions: BTreeMap<NodeId, Vec<DeliveryResult>>,
    /// Event index at which each correct node first had a result.
    first_result: BTreeMap<NodeId, usize>,
    bin_proposals: BTreeMap<NodeId, bool>,
    bin_decisions: BTreeMap<NodeId, DeliveryResult<bool>>,
    /// Latest non-⊥ VBB delivery per (receiver, origin).
    vbb: BTreeMap<(NodeId, NodeId), DeliveryResult>,
    /// Consistency-test firings for correct senders: (receiver, origin, branch).
    test_fired: Vec<String>,
    unsupported: Vec<NodeId>,
    oracle_vbb: BTreeMap<(NodeId, NodeId), DeliveryResult>,
    oracle: BTreeMap<NodeId, DeliveryResult>,
}

struct Judge<'a> {
    trace: &'a Trace,
    correct: BTreeSet<NodeId>,
    acts: BTreeMap<(u32, usize), Activation>,
    recycles: Vec<(u32, usize)>,
}

impl<'a> Judge<'a> {
    fn new(trace: &'a Trace) -> Self {
        let correct: BTreeSet<NodeId> = trace.header.correct.iter().copied().collect();
        let mut j = Judge {
            trace,
            correct,
            acts: BTreeMap::new(),
            recycles: Vec::new(),
        };
        for o in 0..trace.header.objects {
            j.acts.insert((0, o), Activation::default());
        }
        j.scan();
        j
    }

    fn act(&mut self, epoch: u32, object: usize) -> &mut Activation {
        self.acts.entry((epoch, object)).or_default()
    }

    fn scan(&mut self) {
        let trace = self.trace;
        for (idx, e) in trace.events.iter().enumerate() {
            let Some(node) = e.node else {
                if let EventKind::Recycle { epoch } = e.kind {
                    self.recycles.push((epoch, idx));
                    for o in 0..trace.header.objects {
                        self.act(epoch, o).start = idx;
                    }
                }
                continue;
            };
            if !self.correct.contains(&node) {
                continue;
            }
            let correct_origin = |k: &NodeId| self.correct.contains(k);
            match e.kind {
                EventKind::Propose {
                    object,
                    epoch,
                    value,
                } => {
                    self.act(epoch, object).proposals.insert(node, value);
                }
                EventKind::Decide {
                    object,
                    epoch,
                    result,
                    branch,
                } => {
                    let a = self.act(epoch, object);
                    a.decisions.entry(node).or_default().push(result);
                    if result.is_resolved() {
                        a.first_result.entry(node).or_insert(idx);
                    }
                    if branch == MvcBranch::Unsupported {
                        a.unsupported.push(node);
                    }
                }
                EventKind::VbbDeliver {
                    object,
                    epoch,
                    origin,
                    result,
                    branch,
                } => {
                    let fired = branch.is_consistency_test() && correct_origin(&origin);
                    let a = self.act(epoch, object);
                    if result.is_resolved() {
                        a.vbb.insert((node, origin), result);
                    }
                    if fired {
                        a.test_fired.push(format!("{node} on {origin}: {branch:?}"));
                    }
                }
                EventKind::BinPropose {
                    object,
                    epoch,
                    value,
                } => {
                    self.act(epoch, object)
                        .bin_proposals
                        .entry(node)
                        .or_insert(value);
                }
                EventKind::BinDecide {
                    object,
                    epoch,
                    result,
                } => {
                    self.act(epoch, object).bin_decisions.insert(node, result);
                }
                EventKind::OracleVbb {
                    epoch,
                    origin,
                    result,
                } => {
                    if result.is_resolved() {
                        self.act(epoch, 0).oracle_vbb.insert((node, origin), result);
                    }
                }
                EventKind::OracleDecide { epoch, result } => {
                    self.act(epoch, 0).oracle.insert(node, result);
                }
                _ => {}
            }
        }
    }

    /// Whether an activation started from the clean post-recycling state.
    fn clean(&self, epoch: u32) -> bool {
        epoch > 0 || !self.trace.header.corrupted
    }

    fn expected_complete(&self, epoch: u32) -> bool {
        self.trace.header.target_epoch.is_some_and(|t| epoch <= t)
    }

    fn report(&self) -> Report {
        let h = &self.trace.header;
        let mut verdicts = Vec::new();
        let epochs = self.recycles.len() as u32 + 1;
        let mut push = |property, epoch: Option<u32>, object, ok: Result<(), String>| {
            let (status, detail) = match ok {
                Ok(()) => (Status::Pass, String::new()),
                Err(d) if d.is_empty() => (Status::NotApplicable, String::new()),
                Err(d) => (Status::Fail, d),
            };
            verdicts.push(Verdict {
                property,
                epoch,
                object,
                status,
                detail,
            });
        };

        if h.corrupted {
            let done = self
                .acts
                .iter()
                .filter(|((e, _), _)| *e == 0)
                .all(|(_, a)| self.all_resolved(a));
            let ok = if done && !self.recycles.is_empty() {
                Ok(())
            } else if !self.expected_complete(1) {
                Err(String::new())
            } else if !done {
                Err("some correct node never left ⊥ in the corrupted activation".into())
            } else {
                Err("recycling never fired".into())
            };
            push(Property::Convergence, None, None, ok);
        }

        for (&(epoch, object), a) in &self.acts {
            let (e, o) = (Some(epoch), Some(object));
            if !self.clean(epoch) {
                continue;
            }
            push(Property::McCompletion, e, o, self.completion(epoch, a));
            push(Property::McAgreement, e, o, agreement(a));
            push(Property::McValidity, e, o, validity(a));
            push(Property::McNoIntrusion, e, o, no_intrusion(a));
            push(Property::McStability, e, o, stability(a));
            push(Property::BcCompletion, e, o, self.bc_completion(epoch, a));
            push(Property::BcAgreement, e, o, bc_agreement(a));
            push(Property::BcValidity, e, o, bc_validity(a));
            push(Property::VbbJustification, e, o, self.vbb_justification(a));
            push(Property::VbbObligation, e, o, self.vbb_obligation(a));
            push(Property::VbbUniformity, e, o, self.vbb_uniformity(a));
            push(
                Property::VbbTestSoundness,
                e,
                o,
                if a.test_fired.is_empty() {
                    Ok(())
                } else {
                    Err(a.test_fired.join("; "))
                },
            );
            push(
                Property::McTestSoundness,
                e,
                o,
                if a.unsupported.is_empty() {
                    Ok(())
                } else {
                    Err(format!("fired at {:?}", a.unsupported))
                },
            );
            if h.oracle && object == 0 {
                push(
                    Property::OracleEquivalence,
                    e,
                    o,
                    self.oracle_equivalence(a),
                );
            }
        }

        let rounds = round_index(self.trace);
        let cycles = cycle_index(self.trace);
        let mut rounds_to_decide = Vec::new();
        let mut cycles_to_decide = Vec::new();
        for epoch in 0..epochs {
            let acts: Vec<&Activation> = self
                .acts
                .iter()
                .filter(|((e, _), _)| *e == epoch)
                .map(|(_, a)| a)
                .collect();
            let done = acts.iter().all(|a| self.all_resolved(a));
            let span = |labels: &[u64]| -> Option<u64> {
                if !done || acts.is_empty() {
                    return None;
                }
                let start = acts[0].start;
                let end = acts
                    .iter()
                    .flat_map(|a| a.first_result.values())
                    .max()
                    .copied()?;
                let first = labels.get(start).copied().unwrap_or(1);
                labels.get(end).map(|l| l - first + 1)
            };
            rounds_to_decide.push(span(&rounds));
            cycles_to_decide.push(cycles.as_deref().and_then(span));
        }

        let cycles_to_stabilize = cycles.as_ref().and_then(|labels| {
            // The earliest activation from which no later verdict fails.
            let failing: Vec<u32> = verdicts
                .iter()
                .filter(|v| v.status == Status::Fail)
                .map(|v| v.epoch.map_or(u32::MAX, |e| e))
                .collect();
            let from = failing.iter().max().map_or(0, |e| e.saturating_add(1));
            let from = if h.corrupted { from.max(1) } else { from };
            if from == 0 {
                return Some(0);
            }
            let idx = self
                .recycles
                .iter()
                .find(|(e, _)| *e == from)
                .map(|(_, i)| *i)?;
            labels.get(idx).map(|l| l - 1)
        });

        let last = epochs - 1;
        let results = self
            .correct
            .iter()
            .map(|&node| NodeResult {
                node,
                results: (0..h.objects)
                    .map(|o| {
                        self.acts
                            .get(&(last, o))
                            .and_then(|a| a.decisions.get(&node))
                            .and_then(|d| d.last().copied())
                            .unwrap_or(DeliveryResult::Pending)
                    })
                    .collect(),
            })
            .collect();

        Report {
            name: String::new(),
            steps: h.steps,
            stop_met: h.stop_met,
            corrupted: h.corrupted,
            fair: h.fair,
            vbb_count_phase: h.mode,
            epochs,
            results,
            verdicts,
            cycles_to_stabilize,
            rounds_to_decide,
            cycles_to_decide,
            messages: None,
        }
    }

    fn all_resolved(&self, a: &Activation) -> bool {
        self.correct.iter().all(|i| a.first_result.contains_key(i))
    }

    fn completion(&self, epoch: u32, a: &Activation) -> Result<(), String> {
        if !self.expected_complete(epoch) {
            return Err(String::new());
        }
        let missing: Vec<&NodeId> = self
            .correct
            .iter()
            .filter(|i| !a.first_result.contains_key(i))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(format!("no result at {missing:?}"))
        }
    }

    fn bc_completion(&self, epoch: u32, a: &Activation) -> Result<(), String> {
        if !self.expected_complete(epoch) {
            return Err(String::new());
        }
        let missing: Vec<&NodeId> = a
            .bin_proposals
            .keys()
            .filter(|i| !a.bin_decisions.get(i).is_some_and(|d| d.is_resolved()))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(format!("proposed but undecided at {missing:?}"))
        }
    }

    fn correct_values(&self, a: &Activation) -> BTreeSet<Value> {
        a.proposals.values().copied().collect()
    }

    fn vbb_justification(&self, a: &Activation) -> Result<(), String> {
        let proposed = self.correct_values(a);
        for ((i, k), d) in &a.vbb {
            if let DeliveryResult::Decided(v) = d {
                if !proposed.contains(v) {
                    return Err(format!(
                        "{i} delivered {v} from {k}, proposed by no correct node"
                    ));
                }
            }
        }
        Ok(())
    }

    fn vbb_obligation(&self, a: &Activation) -> Result<(), String> {
        let proposed = self.correct_values(a);
        if proposed.len() != 1 {
            return Err(String::new());
        }
        let v = *proposed.iter().next().expect("one value");
        for ((i, k), d) in &a.vbb {
            if self.correct.contains(k) && *d != DeliveryResult::Decided(v) {
                return Err(format!(
                    "{i} delivered {d} from correct {k}; all proposed {v}"
                ));
            }
        }
        Ok(())
    }

    fn vbb_uniformity(&self, a: &Activation) -> Result<(), String> {
        let mut by_origin: BTreeMap<NodeId, (NodeId, DeliveryResult)> = BTreeMap::new();
        for ((i, k), d) in &a.vbb {
            match by_origin.get(k) {
                Some((j, e)) if e != d => {
                    return Err(format!("from {k}: {j} delivered {e}, {i} delivered {d}"))
                }
                Some(_) => {}
                None => {
                    by_origin.insert(*k, (*i, *d));
                }
            }
        }
        Ok(())
    }

    fn oracle_equivalence(&self, a: &Activation) -> Result<(), String> {
        for (i, o) in &a.oracle {
            let mine = a
                .decisions
                .get(i)
                .and_then(|d| d.last().copied())
                .unwrap_or(DeliveryResult::Pending);
            if o.is_resolved() && mine.is_resolved() && *o != mine {
                return Err(format!("{i} decided {mine}, reference decided {o}"));
            }
        }
        for (key, o) in &a.oracle_vbb {
            if let Some(mine) = a.vbb.get(key) {
                if mine != o {
                    return Err(format!(
                        "{} delivered {mine} from {}, reference delivered {o}",
                        key.0, key.1
                    ));
                }
            }
        }
        Ok(())
    }
}

fn finals(a: &Activation) -> impl Iterator<Item = (NodeId, DeliveryResult)> + '_ {
    a.decisions
        .iter()
        .filter_map(|(i, d)| d.iter().rev().find(|r| r.is_resolved()).map(|r| (*i, *r)))
}

fn agreement(a: &Activation) -> Result<(), String> {
    let mut seen: Option<(NodeId, DeliveryResult)> = None;
    for (i, d) in finals(a) {
        match seen {
            Some((j, e)) if e != d => return Err(format!("{j} decided {e}, {i} decided {d}")),
            None => seen = Some((i, d)),
            _ => {}
        }
    }
    Ok(())
}

fn validity(a: &Activation) -> Result<(), String> {
    let vals: BTreeSet<Value> = a.proposals.values().copied().collect();
    if vals.len() != 1 {
        return Err(String::new());
    }
    let v = *vals.iter().next().expect("one value");
    match finals(a).find(|(_, d)| *d != DeliveryResult::Decided(v)) {
        Some((i, d)) => Err(format!("{i} decided {d}; every correct node proposed {v}")),
        None => Ok(()),
    }
}

fn no_intrusion(a: &Activation) -> Result<(), String> {
    let vals: BTreeSet<Value> = a.proposals.values().copied().collect();
    for (i, d) in finals(a) {
        if let DeliveryResult::Decided(v) = d {
            if !vals.contains(&v) {
                return Err(format!("{i} decided {v}, proposed by no correct node"));
            }
        }
    }
    Ok(())
}

fn stability(a: &Activation) -> Result<(), String> {
    for (i, d) in &a.decisions {
        if let Some(first) = d.iter().position(|r| r.is_resolved()) {
            if d[first..].iter().any(|r| *r != d[first]) {
                return Err(format!("{i} changed its result: {:?}", &d[first..]));
            }
        }
    }
    Ok(())
}

fn bc_agreement(a: &Activation) -> Result<(), String> {
    let mut seen: Option<(NodeId, DeliveryResult<bool>)> = None;
    for (i, d) in a.bin_decisions.iter().filter(|(_, d)| d.is_resolved()) {
        match seen {
            Some((j, e)) if e != *d => return Err(format!("{j} decided {e}, {i} decided {d}")),
            None => seen = Some((*i, *d)),
            _ => {}
        }
    }
    Ok(())
}

fn bc_validity(a: &Activation) -> Result<(), String> {
    let props: BTreeSet<bool> = a.bin_proposals.values().copied().collect();
    for (i, d) in &a.bin_decisions {
        if let DeliveryResult::Decided(b) = d {
            if !props.contains(b) {
                return Err(format!("{i} decided {b}, proposed by no correct node"));
            }
        }
    }
    Ok(())
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = if self.name.is_empty() {
            "scenario"
        } else {
            &self.name
        };
        writeln!(f, "{name}: {}", if self.passed() { "PASS" } else { "FAIL" })?;
        writeln!(
            f,
            "  steps {}  stop {}  activations {}  corrupted {}  vbb count row {:?}",
            self.steps,
            if self.stop_met { "met" } else { "not met" },
            self.epochs,
            self.corrupted,
            self.vbb_count_phase
        )?;
        for r in &self.results {
            let rs: Vec<String> = r.results.iter().map(|d| d.to_string()).collect();
            writeln!(f, "  {}: {}", r.node, rs.join(" "))?;
        }
        let opt = |v: &[Option<u64>]| -> String {
            v.iter()
                .map(|x| x.map_or("-".to_string(), |x| x.to_string()))
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(f, "  rounds to decide: {}", opt(&self.rounds_to_decide))?;
        if self.fair {
            writeln!(f, "  cycles to decide: {}", opt(&self.cycles_to_decide))?;
            match self.cycles_to_stabilize {
                Some(c) => writeln!(f, "  cycles to stabilize: {c}")?,
                None => writeln!(f, "  cycles to stabilize: never")?,
            }
        } else {
            writeln!(f, "  cycles: n/a (unfair schedule)")?;
        }
        if let Some(m) = self.messages {
            writeln!(f, "  messages: brb {}  bv {}  bc {}", m.brb, m.bv, m.bc)?;
        }
        let mut by_prop: BTreeMap<Property, Status> = BTreeMap::new();
        for v in &self.verdicts {
            let s = by_prop.entry(v.property).or_insert(Status::NotApplicable);
            if v.status == Status::Fail || (v.status == Status::Pass && *s == Status::NotApplicable)
            {
                *s = v.status;
            }
        }
        for (p, s) in by_prop {
            let s = match s {
                Status::Pass => "pass",
                Status::Fail => "FAIL",
                Status::NotApplicable => "n/a",
            };
            writeln!(f, "  {:<20} {s}", p.name())?;
        }
        for v in self.failures() {
            writeln!(
                f,
                "  ! {} epoch {:?} object {:?}: {}",
                v.property.name(),
                v.epoch,
                v.object,
                v.detail
            )?;
        }
        Ok(())
    }
}
