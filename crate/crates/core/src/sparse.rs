//! Okapi BM25 over an inverted index.
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q} idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·|d|/avgdl))
//! idf(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query terms are summed with multiplicity. Passages sharing no term with
//! the query are never candidates.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::ranked::{PassageRef, RankedList};
use crate::text::TokenizerConfig;

pub const SNAPSHOT_VERSION: u32 = 1;
pub const RETRIEVER_ID: &str = "bm25";

#[derive(Debug, thiserror::Error)]
pub enum SparseError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("invalid BM25 parameters k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error("snapshot version {found} is not supported (expected {SNAPSHOT_VERSION})")]
    SnapshotVersion { found: u32 },
    #[error("snapshot i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot format: {0}")]
    Format(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub position: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseIndex {
    version: u32,
    params: Bm25Params,
    tokenizer: TokenizerConfig,
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    refs: Vec<PassageRef>,
    avg_doc_length: f64,
}

pub fn idf(doc_count: usize, df: usize) -> f64 {
    let (n, df) = (doc_count as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

pub fn term_weight(params: Bm25Params, tf: f64, doc_len: f64, avg_doc_length: f64) -> f64 {
    let norm = params.k1 * (1.0 - params.b + params.b * doc_len / avg_doc_length);
    tf * (params.k1 + 1.0) / (tf + norm)
}

impl SparseIndex {
    pub fn build(corpus: &Corpus, params: Bm25Params, tokenizer: TokenizerConfig) -> Result<Self, SparseError> {
        if corpus.is_empty() {
            return Err(SparseError::EmptyCorpus);
        }
        if !(params.k1 > 0.0 && (0.0..=1.0).contains(&params.b)) {
            return Err(SparseError::InvalidParams { k1: params.k1, b: params.b });
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for (pos, passage) in corpus.passages().iter().enumerate() {
            let tokens = tokenizer.tokenize(&passage.text);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            // positions are visited in increasing order, so each list stays sorted
            for (t, n) in tf {
                postings.entry(t).or_default().push(Posting { position: pos as u32, tf: n });
            }
        }
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        Ok(Self {
            version: SNAPSHOT_VERSION,
            params,
            tokenizer,
            postings,
            doc_lengths,
            refs: corpus.passages().iter().map(|p| p.passage_ref()).collect(),
            avg_doc_length,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn postings(&self, token: &str) -> Option<&[Posting]> {
        self.postings.get(token).map(Vec::as_slice)
    }

    pub fn passage_ref(&self, position: usize) -> &PassageRef {
        &self.refs[position]
    }

    /// Every candidate passage with its score, in position order.
    pub fn score_all(&self, query: &str) -> Vec<(usize, f64)> {
        let mut scores = vec![0.0f64; self.doc_count()];
        let mut hit = vec![false; self.doc_count()];
        let n = self.doc_count();
        for token in self.tokenizer.tokenize(query) {
            let Some(list) = self.postings.get(&token) else { continue };
            let w = idf(n, list.len());
            for p in list {
                let pos = p.position as usize;
                let dl = self.doc_lengths[pos] as f64;
                scores[pos] += w * term_weight(self.params, p.tf as f64, dl, self.avg_doc_length);
                hit[pos] = true;
            }
        }
        scores.into_iter().enumerate().filter(|(i, _)| hit[*i]).collect()
    }

    /// Top-`k` `(position, score)` pairs, ties broken by ascending position.
    pub fn search(&self, query: &str, k: usize) -> Vec<(usize, f64)> {
        let mut all = self.score_all(query);
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    /// Top-`k` as a [`RankedList`] (ties ordered by passage reference).
    pub fn search_ranked(&self, query_id: &str, query: &str, k: usize) -> RankedList {
        let scored = self.score_all(query).into_iter().map(|(pos, s)| (self.refs[pos].clone(), s)).collect();
        RankedList::from_scored(query_id, RETRIEVER_ID, scored, k)
    }

    pub fn write_snapshot<W: Write>(&self, w: W) -> Result<(), SparseError> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: R) -> Result<Self, SparseError> {
        let index: SparseIndex = serde_json::from_reader(r)?;
        if index.version != SNAPSHOT_VERSION {
            return Err(SparseError::SnapshotVersion { found: index.version });
        }
        Ok(index)
    }
}

pub fn build_sparse_index(corpus: &Corpus, k1: f64, b: f64) -> Result<SparseIndex, SparseError> {
    SparseIndex::build(corpus, Bm25Params { k1, b }, TokenizerConfig::default())
}

pub fn sparse_search(index: &SparseIndex, query_id: &str, query: &str, k: usize) -> RankedList {
    index.search_ranked(query_id, query, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::from_passages(texts.iter().enumerate().map(|(i, t)| Passage::new("d", i.to_string(), *t))).unwrap()
    }

    #[test]
    fn two_passage_postings() {
        let idx = build_sparse_index(&corpus(&["a b", "a c"]), 1.2, 0.75).unwrap();
        assert_eq!(idx.postings("a").unwrap(), &[Posting { position: 0, tf: 1 }, Posting { position: 1, tf: 1 }]);
        assert_eq!(idx.postings("b").unwrap(), &[Posting { position: 0, tf: 1 }]);
        assert_eq!(idx.postings("c").unwrap(), &[Posting { position: 1, tf: 1 }]);
        assert_eq!(idx.avg_doc_length(), 2.0);
    }

    #[test]
    fn single_passage_average() {
        let idx = build_sparse_index(&corpus(&["one two three"]), 1.2, 0.75).unwrap();
        assert_eq!(idx.avg_doc_length(), 3.0);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(build_sparse_index(&Corpus::default(), 1.2, 0.75), Err(SparseError::EmptyCorpus)));
        assert!(matches!(build_sparse_index(&corpus(&["x"]), 1.2, 1.5), Err(SparseError::InvalidParams { .. })));
    }

    #[test]
    fn symmetric_and_exclusive_queries() {
        let idx = build_sparse_index(&corpus(&["a b", "a c"]), 1.2, 0.75).unwrap();
        let hits = idx.search("a", 10);
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].1, hits[1].1);
        assert_eq!(hits[0].0, 0);
        assert_eq!(idx.search("b", 10).iter().map(|h| h.0).collect::<Vec<_>>(), vec![0]);
        assert!(idx.search("zzz", 10).is_empty());
    }

    #[test]
    fn snapshot_round_trip_and_version_check() {
        let idx = build_sparse_index(&corpus(&["a b", "a c"]), 1.5, 0.5).unwrap();
        let mut buf = Vec::new();
        idx.write_snapshot(&mut buf).unwrap();
        assert_eq!(SparseIndex::read_snapshot(buf.as_slice()).unwrap(), idx);
        let tampered = String::from_utf8(buf).unwrap().replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(
            SparseIndex::read_snapshot(tampered.as_bytes()),
            Err(SparseError::SnapshotVersion { found: 9 })
        ));
    }
}
