//! Self-stabilizing Byzantine fault-tolerant multivalued consensus.
//!
//! The protocol stack layers reliable broadcast ([`brb`]), binary-values
//! broadcast ([`bv`]) and randomized binary consensus ([`bincon`]) under a
//! validated broadcast ([`vbb`]) and the multivalued reduction ([`mvc`]).
//! [`sim`] drives whole systems under adversarial schedules, Byzantine
//! strategies and transient faults.

pub mod bincon;
pub mod brb;
pub mod bv;
pub mod byzantine;
pub mod explore;
pub mod faults;
pub mod harness;
pub mod mvc;
pub mod node;
pub mod oracle;
pub mod recycler;
pub mod sim;
pub mod types;
pub mod vbb;
pub mod wire;

pub use types::*;
