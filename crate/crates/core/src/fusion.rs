//! Reciprocal rank fusion.
//!
//! A passage's fused score is `Σ 1/(rank + β)` over the input lists that
//! contain it; only ranks enter the sum, so score scales of the individual
//! retrievers never need calibrating. Absence from a list contributes 0.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::ranked::{PassageRef, RankedList};

pub const DEFAULT_BETA: f64 = 4.0;
pub const DEFAULT_DEPTH: usize = 40;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FusionError {
    #[error("lists for different queries: `{expected}` and `{found}`")]
    QueryMismatch { expected: String, found: String },
    #[error("retriever `{0}` is not enabled for fusion")]
    UnknownRetriever(String),
    #[error("invalid fusion config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub beta: f64,
    pub retriever_ids: Vec<String>,
}

impl FusionConfig {
    pub fn new(beta: f64, retriever_ids: Vec<String>) -> Result<Self, FusionError> {
        let cfg = Self { beta, retriever_ids };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(FusionError::InvalidConfig(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.retriever_ids.is_empty() {
            return Err(FusionError::InvalidConfig("no retrievers".into()));
        }
        let unique: HashSet<_> = self.retriever_ids.iter().collect();
        if unique.len() != self.retriever_ids.len() {
            return Err(FusionError::InvalidConfig("duplicate retriever id".into()));
        }
        Ok(())
    }

    /// Upper bound on any fused score: every list ranks the passage first.
    pub fn max_score(&self) -> f64 {
        self.retriever_ids.len() as f64 / (1.0 + self.beta)
    }
}

pub fn fused_retriever_id(ids: &[&str]) -> String {
    format!("rrf({})", ids.join(","))
}

/// Fuses `lists` (all for the same query) and keeps the top `k`.
pub fn rrf_fuse(lists: &[RankedList], config: &FusionConfig, k: usize) -> Result<RankedList, FusionError> {
    config.validate()?;
    let Some(first) = lists.first() else {
        return Err(FusionError::InvalidConfig("nothing to fuse".into()));
    };
    for l in lists {
        if l.query_id != first.query_id {
            return Err(FusionError::QueryMismatch { expected: first.query_id.clone(), found: l.query_id.clone() });
        }
        if !config.retriever_ids.contains(&l.retriever_id) {
            return Err(FusionError::UnknownRetriever(l.retriever_id.clone()));
        }
    }
    let mut scores: HashMap<PassageRef, f64> = HashMap::new();
    for l in lists {
        let mut seen = HashSet::new();
        for (pos, e) in l.entries.iter().enumerate() {
            let r = e.passage_ref();
            // a repeated entry keeps only its best rank
            if !seen.insert(r.clone()) {
                continue;
            }
            let rank = (pos + 1) as f64;
            *scores.entry(r).or_insert(0.0) += 1.0 / (rank + config.beta);
        }
    }
    let ids: Vec<&str> = lists.iter().map(|l| l.retriever_id.as_str()).collect();
    Ok(RankedList::from_scored(first.query_id.clone(), fused_retriever_id(&ids), scores.into_iter().collect(), k))
}
