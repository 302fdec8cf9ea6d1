//! Omniscient recycling: once every correct node reported a result for every
//! object of the current batch, wait for one asynchronous cycle boundary and
//! then recycle all nodes at once.

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Recycler {
    /// Objects recycled together.
    batch: usize,
    /// Cycle in which the condition was first seen to hold.
    armed_at: Option<u64>,
    fired: u32,
}

impl Recycler {
    pub fn new(batch: usize) -> Self {
        Recycler {
            batch,
            armed_at: None,
            fired: 0,
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn fired(&self) -> u32 {
        self.fired
    }

    /// Called between steps with whether every correct node delivered every
    /// object of the batch and the current cycle. Returns whether recycling
    /// fires now.
    pub fn poll(&mut self, all_delivered: bool, cycle: u64) -> bool {
        if !all_delivered {
            self.armed_at = None;
            return false;
        }
        match self.armed_at {
            None => {
                self.armed_at = Some(cycle);
                false
            }
            Some(c) if cycle > c => {
                self.armed_at = None;
                self.fired += 1;
                true
            }
            Some(_) => false,
        }
    }
}
