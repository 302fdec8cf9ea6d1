//! Shared vocabulary: identifiers, values, quorum thresholds and the
//! three-valued delivery result.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a node in `[0, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// A proposal value. Valid values are those below the scenario's alphabet size;
/// anything else is ill-formatted input. Serialized as its display form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Value(pub u8);

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(u8),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(Value(i)),
            Raw::Name(s) => Value::parse(&s).ok_or_else(|| {
                serde::de::Error::custom(format!("invalid value `{s}`: expected A..Z or 0..255"))
            }),
        }
    }
}

impl Value {
    /// Parses `A`..`Z`, a decimal index, or `#index`.
    pub fn parse(s: &str) -> Option<Value> {
        let s = s.trim();
        let s = s.strip_prefix('#').unwrap_or(s);
        let b = s.as_bytes();
        if b.len() == 1 && b[0].is_ascii_uppercase() {
            return Some(Value(b[0] - b'A'));
        }
        s.parse::<u8>().ok().map(Value)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 < 26 {
            write!(f, "{}", (b'A' + self.0) as char)
        } else {
            write!(f, "#{}", self.0)
        }
    }
}

/// The finite proposal alphabet `V = {0, .., size-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Alphabet {
    pub size: u8,
}

impl Alphabet {
    pub const DEFAULT: Alphabet = Alphabet { size: 4 };

    pub fn contains(&self, v: Value) -> bool {
        v.0 < self.size
    }

    pub fn values(&self) -> impl Iterator<Item = Value> {
        (0..self.size).map(Value)
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamsError {
    #[error("n = {n} does not satisfy n >= 3t + 1 for t = {t}")]
    TooFewNodes { n: usize, t: usize },
    #[error("channel capacity must be at least 1")]
    ZeroCapacity,
    #[error("n must be positive")]
    Empty,
}

/// System size, fault bound and channel capacity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SystemParams {
    pub n: usize,
    pub t: usize,
    pub capacity: usize,
}

impl SystemParams {
    pub fn new(n: usize, t: usize, capacity: usize) -> Result<Self, ParamsError> {
        let p = SystemParams { n, t, capacity };
        p.validate()?;
        Ok(p)
    }

    /// `t = floor((n-1)/3)` with the given capacity.
    pub fn max_resilience(n: usize, capacity: usize) -> Result<Self, ParamsError> {
        Self::new(n, n.saturating_sub(1) / 3, capacity)
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.n == 0 {
            return Err(ParamsError::Empty);
        }
        if self.n < 3 * self.t + 1 {
            return Err(ParamsError::TooFewNodes {
                n: self.n,
                t: self.t,
            });
        }
        if self.capacity == 0 {
            return Err(ParamsError::ZeroCapacity);
        }
        Ok(())
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n).map(NodeId)
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            n_minus_t: self.n - self.t,
            n_minus_2t: self.n - 2 * self.t,
            t_plus_1: self.t + 1,
        }
    }

    /// ECHO quorum: strictly more than `(n+t)/2`.
    pub fn echo_quorum(&self) -> usize {
        (self.n + self.t) / 2 + 1
    }

    /// READY count that delivers. Equals `2t+1` when `n = 3t+1`.
    pub fn ready_quorum(&self) -> usize {
        (2 * self.t + 1).max(self.echo_quorum())
    }
}

/// The three counting thresholds used by the algorithms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Thresholds {
    pub n_minus_t: usize,
    pub n_minus_2t: usize,
    pub t_plus_1: usize,
}

/// Returns `(n-t, n-2t, t+1)`, rejecting `n < 3t+1`.
pub fn thresholds(p: &SystemParams) -> Result<Thresholds, ParamsError> {
    if p.n < 3 * p.t + 1 {
        return Err(ParamsError::TooFewNodes { n: p.n, t: p.t });
    }
    Ok(p.thresholds())
}

/// Outcome of a query-based interface: pending (⊥), error (⚡) or a value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeliveryResult<T = Value> {
    #[default]
    Pending,
    Error,
    Decided(T),
}

impl<T> DeliveryResult<T> {
    pub fn is_pending(&self) -> bool {
        matches!(self, DeliveryResult::Pending)
    }

    pub fn is_resolved(&self) -> bool {
        !self.is_pending()
    }

    pub fn decided(&self) -> Option<&T> {
        match self {
            DeliveryResult::Decided(v) => Some(v),
            _ => None,
        }
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> DeliveryResult<U> {
        match self {
            DeliveryResult::Pending => DeliveryResult::Pending,
            DeliveryResult::Error => DeliveryResult::Error,
            DeliveryResult::Decided(v) => DeliveryResult::Decided(f(v)),
        }
    }
}

impl<T: fmt::Display> fmt::Display for DeliveryResult<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeliveryResult::Pending => write!(f, "⊥"),
            DeliveryResult::Error => write!(f, "⚡"),
            DeliveryResult::Decided(v) => write!(f, "{v}"),
        }
    }
}

/// An entry of a delivered multiset: a value or the error symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Entry {
    Val(Value),
    Bolt,
}

/// Bag of delivered entries, at most one per node.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Multiset {
    entries: Vec<(NodeId, Entry)>,
}

impl Multiset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the entry of `from`.
    pub fn insert(&mut self, from: NodeId, e: Entry) {
        match self.entries.iter_mut().find(|(k, _)| *k == from) {
            Some(slot) => slot.1 = e,
            None => self.entries.push((from, e)),
        }
    }

    /// Builds a multiset from delivery results; pending entries are skipped.
    pub fn from_results<'a>(it: impl IntoIterator<Item = (NodeId, &'a DeliveryResult)>) -> Self {
        let mut m = Multiset::new();
        for (k, r) in it {
            match r {
                DeliveryResult::Pending => {}
                DeliveryResult::Error => m.insert(k, Entry::Bolt),
                DeliveryResult::Decided(v) => m.insert(k, Entry::Val(*v)),
            }
        }
        m
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(NodeId, Entry)> {
        self.entries.iter()
    }
}

impl FromIterator<Entry> for Multiset {
    fn from_iter<I: IntoIterator<Item = Entry>>(iter: I) -> Self {
        Multiset {
            entries: iter
                .into_iter()
                .enumerate()
                .map(|(i, e)| (NodeId(i), e))
                .collect(),
        }
    }
}

/// Number of entries equal to `v`.
pub fn equal(v: Value, rec: &Multiset) -> usize {
    rec.entries
        .iter()
        .filter(|(_, e)| *e == Entry::Val(v))
        .count()
}

/// Number of entries different from `v`; ⚡ always differs.
pub fn differ(v: Value, rec: &Multiset) -> usize {
    rec.entries
        .iter()
        .filter(|(_, e)| *e != Entry::Val(v))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: Entry = Entry::Val(Value(0));
    const B: Entry = Entry::Val(Value(1));
    const C: Entry = Entry::Val(Value(2));

    fn bag(e: &[Entry]) -> Multiset {
        e.iter().copied().collect()
    }

    #[test]
    fn equal_counts_matching_entries() {
        assert_eq!(equal(Value(0), &bag(&[A, A, B])), 2);
        assert_eq!(equal(Value(0), &bag(&[])), 0);
        assert_eq!(equal(Value(1), &bag(&[A, A, B, Entry::Bolt])), 1);
    }

    #[test]
    fn differ_counts_bolt_as_different() {
        assert_eq!(differ(Value(0), &bag(&[A, A, B])), 1);
        assert_eq!(differ(Value(0), &bag(&[B, Entry::Bolt, C])), 3);
        assert_eq!(differ(Value(0), &bag(&[A])), 0);
    }

    #[test]
    fn thresholds_examples() {
        let t4 = thresholds(&SystemParams {
            n: 4,
            t: 1,
            capacity: 1,
        })
        .unwrap();
        assert_eq!((t4.n_minus_t, t4.n_minus_2t, t4.t_plus_1), (3, 2, 2));
        let t10 = thresholds(&SystemParams {
            n: 10,
            t: 3,
            capacity: 1,
        })
        .unwrap();
        assert_eq!((t10.n_minus_t, t10.n_minus_2t, t10.t_plus_1), (7, 4, 4));
        assert_eq!(
            thresholds(&SystemParams {
                n: 3,
                t: 1,
                capacity: 1
            }),
            Err(ParamsError::TooFewNodes { n: 3, t: 1 })
        );
    }

    #[test]
    fn quorums_at_optimal_resilience() {
        for t in 0..6 {
            let p = SystemParams::new(3 * t + 1, t, 1).unwrap();
            assert_eq!(p.ready_quorum(), 2 * t + 1);
            assert_eq!(p.echo_quorum(), 2 * t + 1);
        }
    }

    #[test]
    fn value_parse_and_display() {
        assert_eq!(Value::parse("C"), Some(Value(2)));
        assert_eq!(Value::parse("7"), Some(Value(7)));
        assert_eq!(Value(1).to_string(), "B");
        assert_eq!(Value(200).to_string(), "#200");
        assert_eq!(DeliveryResult::<Value>::Error.to_string(), "⚡");
    }

    #[test]
    fn multiset_keeps_one_entry_per_node() {
        let mut m = Multiset::new();
        m.insert(NodeId(0), A);
        m.insert(NodeId(0), B);
        assert_eq!(m.len(), 1);
        assert_eq!(equal(Value(1), &m), 1);
    }
}
