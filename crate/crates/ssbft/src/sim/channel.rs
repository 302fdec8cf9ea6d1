//! Bounded unidirectional channels.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::types::NodeId;
use crate::wire::Packet;

/// What happens when a packet is enqueued on a full channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Overflow {
    #[default]
    DropOldest,
    DropNewest,
}

/// A packet in transit.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Envelope {
    pub src: NodeId,
    /// Iteration number of the sender that produced the packet.
    pub seq: u64,
    /// Global enqueue order, used by the FIFO policy.
    pub order: u64,
    pub packet: Arc<Packet>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Channel {
    pub src: NodeId,
    pub dst: NodeId,
    capacity: usize,
    pub(crate) queue: VecDeque<Envelope>,
}

impl Channel {
    pub fn new(src: NodeId, dst: NodeId, capacity: usize) -> Self {
        Channel {
            src,
            dst,
            capacity: capacity.max(1),
            queue: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn head(&self) -> Option<&Envelope> {
        self.queue.front()
    }

    /// Enqueues `e`, returning the packet lost to overflow if any.
    pub fn push(&mut self, e: Envelope, policy: Overflow) -> Option<Envelope> {
        if self.queue.len() < self.capacity {
            self.queue.push_back(e);
            return None;
        }
        match policy {
            Overflow::DropOldest => {
                let lost = self.queue.pop_front();
                self.queue.push_back(e);
                lost
            }
            Overflow::DropNewest => Some(e),
        }
    }

    pub fn pop(&mut self) -> Option<Envelope> {
        self.queue.pop_front()
    }

    pub fn clear(&mut self) {
        self.queue.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(seq: u64) -> Envelope {
        Envelope {
            src: NodeId(0),
            seq,
            order: seq,
            packet: Arc::new(Packet::default()),
        }
    }

    #[test]
    fn drop_oldest_keeps_newest() {
        let mut c = Channel::new(NodeId(0), NodeId(1), 2);
        assert!(c.push(env(1), Overflow::DropOldest).is_none());
        assert!(c.push(env(2), Overflow::DropOldest).is_none());
        assert_eq!(c.push(env(3), Overflow::DropOldest).unwrap().seq, 1);
        assert_eq!(c.len(), 2);
        assert_eq!(c.pop().unwrap().seq, 2);
    }

    #[test]
    fn drop_newest_rejects_incoming() {
        let mut c = Channel::new(NodeId(0), NodeId(1), 1);
        c.push(env(1), Overflow::DropNewest);
        assert_eq!(c.push(env(2), Overflow::DropNewest).unwrap().seq, 2);
        assert_eq!(c.head().unwrap().seq, 1);
    }
}
