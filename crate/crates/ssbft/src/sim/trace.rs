//! Append-only execution trace and its line-delimited export.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::mvc::MvcBranch;
use crate::types::{DeliveryResult, NodeId, SystemParams, Value};
use crate::vbb::{CountPhase, VbbBranch};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    /// One loop iteration ending in a send to every peer.
    Send {
        seq: u64,
        digest: u64,
    },
    /// Delivery of packet `seq` of `from`.
    Receive {
        from: NodeId,
        seq: u64,
        digest: u64,
    },
    /// Packet `seq` of `from` to this node was lost to channel overflow.
    Drop {
        from: NodeId,
        seq: u64,
    },
    Propose {
        object: usize,
        epoch: u32,
        value: Value,
    },
    /// `vbb_deliver(origin)` changed at this node.
    VbbDeliver {
        object: usize,
        epoch: u32,
        origin: NodeId,
        result: DeliveryResult,
        branch: VbbBranch,
    },
    /// `result()` changed at this node.
    Decide {
        object: usize,
        epoch: u32,
        result: DeliveryResult,
        branch: MvcBranch,
    },
    /// The binary consensus of an object received its proposal.
    BinPropose {
        object: usize,
        epoch: u32,
        value: bool,
    },
    /// The binary consensus result changed.
    BinDecide {
        object: usize,
        epoch: u32,
        result: DeliveryResult<bool>,
    },
    /// The reference stack's VBB delivery from `origin`.
    OracleVbb {
        epoch: u32,
        origin: NodeId,
        result: DeliveryResult,
    },
    /// The reference stack's decision.
    OracleDecide {
        epoch: u32,
        result: DeliveryResult,
    },
    Recycle {
        epoch: u32,
    },
    Corrupt {
        fields: usize,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Send { .. } => "send",
            EventKind::Receive { .. } => "receive",
            EventKind::Drop { .. } => "drop",
            EventKind::Propose { .. } => "propose",
            EventKind::VbbDeliver { .. } => "vbb-deliver",
            EventKind::Decide { .. } => "decide",
            EventKind::BinPropose { .. } => "bin-propose",
            EventKind::BinDecide { .. } => "bin-decide",
            EventKind::OracleVbb { .. } => "oracle-vbb",
            EventKind::OracleDecide { .. } => "oracle-decide",
            EventKind::Recycle { .. } => "recycle",
            EventKind::Corrupt { .. } => "corrupt",
        }
    }

    fn instance(&self) -> String {
        match self {
            EventKind::Propose { object, .. } | EventKind::Decide { object, .. } => {
                format!("obj{object}")
            }
            EventKind::VbbDeliver { object, origin, .. } => format!("obj{object}/vbb/{}", origin.0),
            EventKind::BinPropose { object, .. } | EventKind::BinDecide { object, .. } => {
                format!("obj{object}/bc")
            }
            EventKind::OracleVbb { origin, .. } => format!("oracle/vbb/{}", origin.0),
            EventKind::OracleDecide { .. } => "oracle".into(),
            _ => "*".into(),
        }
    }

    fn digest(&self) -> Option<u64> {
        match self {
            EventKind::Send { digest, .. } | EventKind::Receive { digest, .. } => Some(*digest),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    /// Asynchronous cycle the event belongs to, starting at 1.
    pub cycle: u64,
    pub node: Option<NodeId>,
    pub kind: EventKind,
}

/// Facts about the run needed to recompute every verdict from the trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub params: SystemParams,
    pub correct: Vec<NodeId>,
    pub objects: usize,
    pub mode: CountPhase,
    /// Whether the scheduler policy is fair, making cycles meaningful.
    pub fair: bool,
    /// Whether the run started from an injected corrupted state.
    pub corrupted: bool,
    pub oracle: bool,
    /// Epoch every correct node is expected to complete, if any.
    pub target_epoch: Option<u32>,
    /// Steps executed and whether the stop condition was met.
    pub steps: u64,
    pub stop_met: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<Event>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    step: u64,
    cycle: u64,
    node: Option<usize>,
    kind: String,
    instance: String,
    digest: String,
    event: EventKind,
}

impl Trace {
    pub fn new(header: TraceHeader) -> Self {
        Trace {
            header,
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, e: Event) {
        self.events.push(e);
    }

    /// Line-delimited export: one header line, then one record per event with
    /// fields `step, cycle, node, kind, instance, digest, event`.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        let header = serde_json::to_string(&self.header).expect("header serializes");
        let _ = writeln!(out, "{header}");
        for e in &self.events {
            let line = Line {
                step: e.step,
                cycle: e.cycle,
                node: e.node.map(|n| n.0),
                kind: e.kind.name().to_string(),
                instance: e.kind.instance(),
                digest: e
                    .kind
                    .digest()
                    .map_or_else(|| "-".to_string(), |d| format!("{d:016x}")),
                event: e.kind.clone(),
            };
            let _ = writeln!(
                out,
                "{}",
                serde_json::to_string(&line).expect("event serializes")
            );
        }
        out
    }

    pub fn from_lines(text: &str) -> Result<Trace, TraceParseError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(TraceParseError::Empty)?;
        let header: TraceHeader =
            serde_json::from_str(first).map_err(|e| TraceParseError::Line {
                line: 1,
                msg: e.to_string(),
            })?;
        let mut events = Vec::new();
        for (i, l) in lines {
            let line: Line = serde_json::from_str(l).map_err(|e| TraceParseError::Line {
                line: i + 1,
                msg: e.to_string(),
            })?;
            events.push(Event {
                step: line.step,
                cycle: line.cycle,
                node: line.node.map(NodeId),
                kind: line.event,
            });
        }
        Ok(Trace { header, events })
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TraceParseError {
    #[error("trace is empty")]
    Empty,
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
}
