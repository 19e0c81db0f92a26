//! Players, ordered coalitions, and the utility-oracle abstraction shared by
//! every solver in the crate.
//!
//! A game is played by `n` players with dense indices `0..n`. A coalition is
//! an *ordered* sequence of distinct players: for an ordinal utility,
//! `U((a, b))` and `U((b, a))` are different evaluations.

use std::collections::HashMap;
use std::fmt;
use std::num::NonZeroUsize;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use lru::LruCache;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense player index in `[0, n)`. Reports and serialized files print
/// players one-based; everything in-process is zero-based.
pub type PlayerId = usize;

/// A finite sequence of distinct players; the argument of every ordinal
/// utility evaluation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OrderedCoalition(Vec<PlayerId>);

impl OrderedCoalition {
    /// Builds a coalition from an explicit ordering, rejecting duplicates.
    pub fn new(players: Vec<PlayerId>) -> Result<Self> {
        let mut seen = vec![];
        for &p in &players {
            if seen.contains(&p) {
                return Err(Error::DuplicatePlayer(p));
            }
            seen.push(p);
        }
        Ok(Self(players))
    }

    /// Builds a coalition from an ordering already known to be duplicate-free.
    pub(crate) fn from_distinct(players: Vec<PlayerId>) -> Self {
        debug_assert!({
            let mut sorted = players.clone();
            sorted.sort_unstable();
            sorted.windows(2).all(|w| w[0] != w[1])
        });
        Self(players)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// The canonical sequence of a player set: members in strictly
    /// increasing index order. An empty set yields the empty sequence.
    pub fn canonical(set: impl IntoIterator<Item = PlayerId>) -> Self {
        let mut players: Vec<PlayerId> = set.into_iter().collect();
        players.sort_unstable();
        players.dedup();
        Self(players)
    }

    /// Returns this sequence with `player` inserted so that exactly `slot`
    /// elements precede it. Rejects members already present and slots
    /// outside `0..=len`.
    pub fn insert_at(&self, player: PlayerId, slot: usize) -> Result<Self> {
        if self.contains(player) {
            return Err(Error::DuplicatePlayer(player));
        }
        if slot > self.len() {
            return Err(Error::SlotOutOfRange {
                slot,
                len: self.len(),
            });
        }
        let mut players = self.0.clone();
        players.insert(slot, player);
        Ok(Self(players))
    }

    /// Returns this sequence with `player` appended at the end.
    pub fn appended(&self, player: PlayerId) -> Result<Self> {
        self.insert_at(player, self.len())
    }

    /// Applies the transposition `(i, j)`: every occurrence of `i` becomes
    /// `j` and vice versa, positions unchanged. A no-op when neither appears.
    pub fn transposed(&self, i: PlayerId, j: PlayerId) -> Self {
        let players = self
            .0
            .iter()
            .map(|&p| {
                if p == i {
                    j
                } else if p == j {
                    i
                } else {
                    p
                }
            })
            .collect();
        Self(players)
    }

    /// The first `len` elements as a coalition.
    pub fn prefix(&self, len: usize) -> Self {
        Self(self.0[..len].to_vec())
    }

    pub fn players(&self) -> &[PlayerId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, player: PlayerId) -> bool {
        self.0.contains(&player)
    }

    pub fn iter(&self) -> impl Iterator<Item = PlayerId> + '_ {
        self.0.iter().copied()
    }
}

impl fmt::Display for OrderedCoalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for p in &self.0 {
            if !first {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
            first = false;
        }
        Ok(())
    }
}

impl FromStr for OrderedCoalition {
    type Err = Error;

    /// Parses the comma-separated form used by table files, e.g. `"0,2,1"`.
    /// The empty string is the empty coalition.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Self::empty());
        }
        let mut players = Vec::new();
        for tok in s.split(',') {
            let p: PlayerId = tok.trim().parse().map_err(|_| Error::Parse {
                line: 0,
                msg: format!("invalid player id {tok:?} in sequence {s:?}"),
            })?;
            players.push(p);
        }
        Self::new(players)
    }
}

/// The utility function `U` mapping ordered coalitions to a real value.
///
/// Implementations must be deterministic for a fixed instance, must return
/// `empty_value()` on the empty coalition, and must tolerate concurrent
/// evaluation (read-only state or internal synchronization).
pub trait UtilityOracle: Send + Sync {
    fn n_players(&self) -> usize;

    fn evaluate(&self, coalition: &OrderedCoalition) -> Result<f64>;

    /// Value of the empty coalition.
    fn empty_value(&self) -> f64 {
        0.0
    }
}

impl<T: UtilityOracle + ?Sized> UtilityOracle for &T {
    fn n_players(&self) -> usize {
        (**self).n_players()
    }
    fn evaluate(&self, coalition: &OrderedCoalition) -> Result<f64> {
        (**self).evaluate(coalition)
    }
    fn empty_value(&self) -> f64 {
        (**self).empty_value()
    }
}

impl<T: UtilityOracle + ?Sized> UtilityOracle for Box<T> {
    fn n_players(&self) -> usize {
        (**self).n_players()
    }
    fn evaluate(&self, coalition: &OrderedCoalition) -> Result<f64> {
        (**self).evaluate(coalition)
    }
    fn empty_value(&self) -> f64 {
        (**self).empty_value()
    }
}

impl<T: UtilityOracle + ?Sized> UtilityOracle for Arc<T> {
    fn n_players(&self) -> usize {
        (**self).n_players()
    }
    fn evaluate(&self, coalition: &OrderedCoalition) -> Result<f64> {
        (**self).evaluate(coalition)
    }
    fn empty_value(&self) -> f64 {
        (**self).empty_value()
    }
}

/// Memoizing wrapper around a utility oracle.
///
/// The cache key is the full ordered sequence — `(0,1)` and `(1,0)` are
/// distinct entries. Eviction is least-recently-used with an optional
/// capacity; the default is unbounded, which is what exact enumeration
/// wants. A hit returns the stored value bit-exactly.
pub struct CachedUtility<U> {
    inner: U,
    cache: Mutex<LruCache<OrderedCoalition, f64>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<U: UtilityOracle> CachedUtility<U> {
    /// Unbounded cache.
    pub fn new(inner: U) -> Self {
        Self {
            inner,
            cache: Mutex::new(LruCache::unbounded()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Cache bounded to `capacity` entries, evicting least-recently-used.
    pub fn with_capacity(inner: U, capacity: NonZeroUsize) -> Self {
        Self {
            inner,
            cache: Mutex::new(LruCache::new(capacity)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Number of inner evaluations performed.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn into_inner(self) -> U {
        self.inner
    }
}

impl<U: UtilityOracle> UtilityOracle for CachedUtility<U> {
    fn n_players(&self) -> usize {
        self.inner.n_players()
    }

    fn evaluate(&self, coalition: &OrderedCoalition) -> Result<f64> {
        if let Some(&v) = self.cache.lock().unwrap().get(coalition) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        // Evaluate outside the lock: inner oracles may be expensive, and two
        // workers computing the same deterministic value is harmless.
        let v = self.inner.evaluate(coalition)?;
        self.misses.fetch_add(1, Ordering::Relaxed);
        self.cache.lock().unwrap().put(coalition.clone(), v);
        Ok(v)
    }

    fn empty_value(&self) -> f64 {
        self.inner.empty_value()
    }
}

/// How a value vector was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Classic,
    Ordinal,
    PartialOrdinal,
    PartialOrdinalSubset,
    WithinUnion,
    AcrossUnion,
    Tmc,
    Cmc,
    Ctmc,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Classic => "classic",
            Method::Ordinal => "ordinal",
            Method::PartialOrdinal => "partial-ordinal",
            Method::PartialOrdinalSubset => "partial-ordinal-subset",
            Method::WithinUnion => "within-union",
            Method::AcrossUnion => "across-union",
            Method::Tmc => "tmc",
            Method::Cmc => "cmc",
            Method::Ctmc => "ctmc",
        };
        f.write_str(s)
    }
}

/// Per-player values plus basic production diagnostics.
///
/// `values[i]` is player `i`'s allocation. Players an estimator never
/// sampled carry `NaN` and a zero sample count.
#[derive(Debug, Clone, Serialize)]
pub struct ValueVector {
    pub method: Method,
    pub values: Vec<f64>,
    pub per_player_samples: Vec<u64>,
    pub permutations_used: u64,
    pub utility_evaluations: u64,
}

impl ValueVector {
    pub fn new(method: Method, n: usize) -> Self {
        Self {
            method,
            values: vec![0.0; n],
            per_player_samples: vec![0; n],
            permutations_used: 0,
            utility_evaluations: 0,
        }
    }

    pub fn n_players(&self) -> usize {
        self.values.len()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// A utility oracle defined by an explicit per-sequence table.
///
/// This is both the test-fixture workhorse and the CLI's `--table` game
/// format. Sequences absent from the table are oracle failures.
pub struct TableUtility {
    n: usize,
    values: HashMap<OrderedCoalition, f64>,
    empty_value: f64,
}

impl TableUtility {
    pub fn new(
        n: usize,
        entries: impl IntoIterator<Item = (OrderedCoalition, f64)>,
        empty_value: f64,
    ) -> Result<Self> {
        let mut values = HashMap::new();
        for (seq, v) in entries {
            for p in seq.iter() {
                if p >= n {
                    return Err(Error::PlayerOutOfRange { player: p, n });
                }
            }
            values.insert(seq, v);
        }
        Ok(Self {
            n,
            values,
            empty_value,
        })
    }

    /// Parses the JSON table format:
    /// `{"n": 2, "empty_value": 0.0, "values": {"0": 1.0, "0,1": 4.0, ...}}`.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct TableFile {
            n: usize,
            #[serde(default)]
            empty_value: f64,
            values: serde_json::Map<String, serde_json::Value>,
        }
        let file: TableFile = serde_json::from_str(text)?;
        let mut entries = Vec::with_capacity(file.values.len());
        for (key, value) in &file.values {
            let seq: OrderedCoalition = key.parse()?;
            let v = value.as_f64().ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("non-numeric value for sequence {key:?}"),
            })?;
            entries.push((seq, v));
        }
        TableUtility::new(file.n, entries, file.empty_value)
    }

    /// Smallest and largest value in the table (including the empty value).
    pub fn value_range(&self) -> (f64, f64) {
        let mut lo = self.empty_value;
        let mut hi = self.empty_value;
        for &v in self.values.values() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl UtilityOracle for TableUtility {
    fn n_players(&self) -> usize {
        self.n
    }

    fn evaluate(&self, coalition: &OrderedCoalition) -> Result<f64> {
        if coalition.is_empty() {
            return Ok(self.empty_value);
        }
        self.values
            .get(coalition)
            .copied()
            .ok_or_else(|| Error::Oracle(format!("table has no value for sequence ({coalition})")))
    }

    fn empty_value(&self) -> f64 {
        self.empty_value
    }
}
