//! Passage references and ranked result lists exchanged between stages.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Identity of a passage inside a corpus. Orders by `(doc_id, passage_id)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PassageRef {
    pub doc_id: String,
    pub passage_id: String,
}

/// Separator used when a passage reference has to travel as a single string
/// key (embedding files, CSV-ish reports).
pub const KEY_SEPARATOR: &str = "::";

impl PassageRef {
    pub fn new(doc_id: impl Into<String>, passage_id: impl Into<String>) -> Self {
        Self { doc_id: doc_id.into(), passage_id: passage_id.into() }
    }

    pub fn key(&self) -> String {
        format!("{}{}{}", self.doc_id, KEY_SEPARATOR, self.passage_id)
    }

    /// Inverse of [`PassageRef::key`]; splits on the first separator. A key
    /// without a separator maps to an empty passage id.
    pub fn from_key(key: &str) -> Self {
        match key.split_once(KEY_SEPARATOR) {
            Some((d, p)) => Self::new(d, p),
            None => Self::new(key, ""),
        }
    }
}

impl fmt::Display for PassageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.doc_id, KEY_SEPARATOR, self.passage_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub passage_id: String,
    pub score: f64,
}

impl RankedEntry {
    pub fn passage_ref(&self) -> PassageRef {
        PassageRef::new(self.doc_id.clone(), self.passage_id.clone())
    }
}

/// One retriever's ordered answer for one query. Rank of an entry is its
/// 1-based position in `entries`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub retriever_id: String,
    pub entries: Vec<RankedEntry>,
}

/// Score descending, then reference ascending.
pub fn standard_order(a: (&PassageRef, f64), b: (&PassageRef, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

impl RankedList {
    pub fn empty(query_id: impl Into<String>, retriever_id: impl Into<String>) -> Self {
        Self { query_id: query_id.into(), retriever_id: retriever_id.into(), entries: Vec::new() }
    }

    /// Builds a list from unordered scored references: sorts with
    /// [`standard_order`] and keeps the first `k`. References must be unique.
    pub fn from_scored(
        query_id: impl Into<String>,
        retriever_id: impl Into<String>,
        mut scored: Vec<(PassageRef, f64)>,
        k: usize,
    ) -> Self {
        scored.sort_by(|a, b| standard_order((&a.0, a.1), (&b.0, b.1)));
        scored.truncate(k);
        let entries = scored
            .into_iter()
            .map(|(r, score)| RankedEntry { doc_id: r.doc_id, passage_id: r.passage_id, score })
            .collect();
        Self { query_id: query_id.into(), retriever_id: retriever_id.into(), entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn refs(&self) -> impl Iterator<Item = PassageRef> + '_ {
        self.entries.iter().map(RankedEntry::passage_ref)
    }

    pub fn top(&self, k: usize) -> &[RankedEntry] {
        &self.entries[..k.min(self.entries.len())]
    }

    /// 1-based rank of `r`, if present.
    pub fn rank_of(&self, r: &PassageRef) -> Option<usize> {
        self.entries.iter().position(|e| e.doc_id == r.doc_id && e.passage_id == r.passage_id).map(|p| p + 1)
    }

    /// Checks the ordering and uniqueness invariants.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert((e.doc_id.as_str(), e.passage_id.as_str())) {
                return false;
            }
        }
        self.entries.windows(2).all(|w| {
            let (a, b) = (w[0].passage_ref(), w[1].passage_ref());
            standard_order((&a, w[0].score), (&b, w[1].score)) != Ordering::Greater
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_round_trip() {
        let r = PassageRef::new("11", "APP 4.50.");
        assert_eq!(PassageRef::from_key(&r.key()), r);
        assert_eq!(PassageRef::from_key("plain"), PassageRef::new("plain", ""));
    }

    #[test]
    fn from_scored_orders_and_truncates() {
        let list = RankedList::from_scored(
            "q",
            "r",
            vec![(PassageRef::new("b", "1"), 0.5), (PassageRef::new("a", "2"), 0.5), (PassageRef::new("c", "1"), 0.9)],
            2,
        );
        let ids: Vec<_> = list.refs().map(|r| r.doc_id).collect();
        assert_eq!(ids, vec!["c", "a"]);
        assert!(list.is_well_formed());
        assert_eq!(list.rank_of(&PassageRef::new("a", "2")), Some(2));
        assert_eq!(list.rank_of(&PassageRef::new("b", "1")), None);
    }
}
