//! Exact nearest-neighbour search over externally computed embeddings, and
//! the question-to-question (Q2Q) retriever built on top of it.
//!
//! Exchange format: a JSON header line `{dim, count, space, profile}` with
//! `space` one of `cosine` or `dot`, then one `{id, vector}` record per line.
//! Cosine-space matrices are L2-normalized on load.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ranked::{standard_order, PassageRef, RankedList};

pub const Q2Q_RETRIEVER_ID: &str = "q2q";

/// Rows whose norm is within this of 1 count as normalized.
const UNIT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum DenseError {
    #[error("dimension mismatch for `{id}`: expected {expected}, found {found}")]
    DimensionMismatch { id: String, expected: usize, found: usize },
    #[error("duplicate embedding id `{0}`")]
    DuplicateId(String),
    #[error("zero vector for `{0}` cannot be normalized")]
    ZeroVector(String),
    #[error("header declares {declared} records, file has {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("question `{0}` has no gold passages")]
    MissingGold(String),
    #[error("embedding file: {0}")]
    Format(String),
    #[error("embedding i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Cosine,
    Dot,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExchangeHeader {
    pub dim: usize,
    pub count: usize,
    pub space: Space,
    pub profile: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExchangeRecord {
    id: String,
    vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    profile: String,
    ids: Vec<String>,
    dim: usize,
    vectors: Vec<f64>,
    normalized: bool,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl EmbeddingMatrix {
    pub fn new(
        profile: impl Into<String>,
        dim: usize,
        space: Space,
        rows: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self, DenseError> {
        if dim == 0 {
            return Err(DenseError::Format("dim must be positive".into()));
        }
        let mut ids = Vec::new();
        let mut seen = HashSet::new();
        let mut vectors = Vec::new();
        for (id, mut v) in rows {
            if v.len() != dim {
                return Err(DenseError::DimensionMismatch { id, expected: dim, found: v.len() });
            }
            if !seen.insert(id.clone()) {
                return Err(DenseError::DuplicateId(id));
            }
            if space == Space::Cosine {
                let n = l2_norm(&v);
                if n == 0.0 || !n.is_finite() {
                    return Err(DenseError::ZeroVector(id));
                }
                // already-unit rows stay bit-identical so exports round-trip
                if (n - 1.0).abs() > UNIT_TOLERANCE {
                    v.iter_mut().for_each(|x| *x /= n);
                }
            }
            vectors.extend_from_slice(&v);
            ids.push(id);
        }
        Ok(Self { profile: profile.into(), ids, dim, vectors, normalized: space == Space::Cosine })
    }

    pub fn profile(&self) -> &str {
        &self.profile
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids.iter().map(String::as_str).zip(self.vectors.chunks_exact(self.dim))
    }

    pub fn read_exchange<R: BufRead>(reader: R) -> Result<Self, DenseError> {
        let mut lines = reader.lines();
        let header_line = lines.next().ok_or_else(|| DenseError::Format("missing header".into()))??;
        let header: ExchangeHeader =
            serde_json::from_str(&header_line).map_err(|e| DenseError::Format(format!("header: {e}")))?;
        let mut rows = Vec::with_capacity(header.count);
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ExchangeRecord =
                serde_json::from_str(&line).map_err(|e| DenseError::Format(format!("record {}: {e}", n + 1)))?;
            rows.push((rec.id, rec.vector));
        }
        if rows.len() != header.count {
            return Err(DenseError::CountMismatch { declared: header.count, found: rows.len() });
        }
        Self::new(header.profile, header.dim, header.space, rows)
    }

    pub fn write_exchange<W: Write>(&self, mut w: W) -> Result<(), DenseError> {
        let header = ExchangeHeader {
            dim: self.dim,
            count: self.len(),
            space: if self.normalized { Space::Cosine } else { Space::Dot },
            profile: self.profile.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for (id, v) in self.rows() {
            let rec = ExchangeRecord { id: id.to_string(), vector: v.to_vec() };
            writeln!(w, "{}", serde_json::to_string(&rec).expect("record serializes"))?;
        }
        Ok(())
    }
}

pub fn load_embeddings(path: impl AsRef<std::path::Path>) -> Result<EmbeddingMatrix, DenseError> {
    let f = std::fs::File::open(path)?;
    EmbeddingMatrix::read_exchange(std::io::BufReader::new(f))
}

/// Full scan, then a partial selection of the best `k` under the standard order.
fn top_k_rows(query: &[f64], docs: &EmbeddingMatrix, k: usize) -> Vec<(PassageRef, f64)> {
    let mut scored: Vec<(PassageRef, f64)> =
        docs.rows().map(|(id, v)| (PassageRef::from_key(id), dot(query, v))).collect();
    if k > 0 && k < scored.len() {
        scored.select_nth_unstable_by(k - 1, |a, b| standard_order((&a.0, a.1), (&b.0, b.1)));
        scored.truncate(k);
    }
    scored
}

/// Exact top-`k` by dot product for every query row. Document ids are
/// passage keys (see [`PassageRef::key`]).
pub fn dense_search(
    queries: &EmbeddingMatrix,
    docs: &EmbeddingMatrix,
    k: usize,
    retriever_id: &str,
) -> Result<Vec<RankedList>, DenseError> {
    if queries.dim != docs.dim {
        return Err(DenseError::DimensionMismatch {
            id: queries.profile.clone(),
            expected: docs.dim,
            found: queries.dim,
        });
    }
    Ok((0..queries.len())
        .into_par_iter()
        .map(|i| {
            let scored = top_k_rows(queries.row(i), docs, k);
            RankedList::from_scored(queries.ids[i].clone(), retriever_id, scored, k)
        })
        .collect())
}

/// Search with a single query vector.
pub fn dense_search_one(
    query_id: &str,
    query: &[f64],
    docs: &EmbeddingMatrix,
    k: usize,
    retriever_id: &str,
) -> Result<RankedList, DenseError> {
    if query.len() != docs.dim {
        return Err(DenseError::DimensionMismatch { id: query_id.into(), expected: docs.dim, found: query.len() });
    }
    Ok(RankedList::from_scored(query_id, retriever_id, top_k_rows(query, docs, k), k))
}

/// Training-question embeddings plus the gold passages of each question.
#[derive(Debug, Clone)]
pub struct Q2QIndex {
    questions: EmbeddingMatrix,
    gold_map: HashMap<String, Vec<PassageRef>>,
}

impl Q2QIndex {
    pub fn new(questions: EmbeddingMatrix, gold_map: HashMap<String, Vec<PassageRef>>) -> Result<Self, DenseError> {
        for id in questions.ids() {
            if gold_map.get(id).is_none_or(Vec::is_empty) {
                return Err(DenseError::MissingGold(id.clone()));
            }
        }
        Ok(Self { questions, gold_map })
    }

    pub fn dim(&self) -> usize {
        self.questions.dim
    }

    /// The `m` most similar training questions as `(question_id, cosine)`,
    /// ties broken by question id.
    pub fn neighbors(&self, query: &[f64], m: usize) -> Result<Vec<(&str, f64)>, DenseError> {
        if query.len() != self.questions.dim {
            return Err(DenseError::DimensionMismatch {
                id: "query".into(),
                expected: self.questions.dim,
                found: query.len(),
            });
        }
        let n = l2_norm(query);
        let unit: Vec<f64> = if n > 0.0 { query.iter().map(|x| x / n).collect() } else { query.to_vec() };
        let mut sims: Vec<(&str, f64)> = self.questions.rows().map(|(id, v)| (id, dot(&unit, v))).collect();
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        sims.truncate(m);
        Ok(sims)
    }

    /// Gold passages of the `m_neighbors` nearest training questions, each
    /// scored by the best similarity among the questions that contribute it.
    pub fn search(
        &self,
        query_id: &str,
        query: &[f64],
        m_neighbors: usize,
        k: usize,
    ) -> Result<RankedList, DenseError> {
        let mut best: BTreeMap<PassageRef, f64> = BTreeMap::new();
        for (qid, sim) in self.neighbors(query, m_neighbors.max(1))? {
            for r in &self.gold_map[qid] {
                let slot = best.entry(r.clone()).or_insert(f64::NEG_INFINITY);
                if sim > *slot {
                    *slot = sim;
                }
            }
        }
        Ok(RankedList::from_scored(query_id, Q2Q_RETRIEVER_ID, best.into_iter().collect(), k))
    }
}

pub fn q2q_search(
    index: &Q2QIndex,
    query_id: &str,
    query: &[f64],
    m_neighbors: usize,
    k: usize,
) -> Result<RankedList, DenseError> {
    index.search(query_id, query, m_neighbors, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[(&str, Vec<f64>)]) -> EmbeddingMatrix {
        EmbeddingMatrix::new("t", rows[0].1.len(), Space::Cosine, rows.iter().map(|(i, v)| (i.to_string(), v.clone())))
            .unwrap()
    }

    #[test]
    fn exchange_round_trip() {
        let m = matrix(&[
            ("a", vec![1.0, 0.0, 0.0, 0.0]),
            ("b", vec![0.0, 2.0, 0.0, 0.0]),
            ("c", vec![0.3, -1.7, 0.2, 0.9]),
        ]);
        let mut buf = Vec::new();
        m.write_exchange(&mut buf).unwrap();
        let back = EmbeddingMatrix::read_exchange(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for ((_, x), (_, y)) in m.rows().zip(back.rows()) {
            for (a, b) in x.iter().zip(y) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        assert!((l2_norm(back.row(1)) - 1.0).abs() < 1e-6);
        let mut again = Vec::new();
        back.write_exchange(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn load_errors() {
        let header = r#"{"dim":2,"count":2,"space":"cosine","profile":"p"}"#;
        let bad_len = format!("{header}\n{{\"id\":\"a\",\"vector\":[1,0]}}\n{{\"id\":\"b\",\"vector\":[1,0,0]}}\n");
        assert!(matches!(
            EmbeddingMatrix::read_exchange(bad_len.as_bytes()),
            Err(DenseError::DimensionMismatch { .. })
        ));
        let dup = format!("{header}\n{{\"id\":\"a\",\"vector\":[1,0]}}\n{{\"id\":\"a\",\"vector\":[0,1]}}\n");
        assert!(matches!(EmbeddingMatrix::read_exchange(dup.as_bytes()), Err(DenseError::DuplicateId(_))));
        let zero = format!("{header}\n{{\"id\":\"a\",\"vector\":[1,0]}}\n{{\"id\":\"b\",\"vector\":[0,0]}}\n");
        assert!(matches!(EmbeddingMatrix::read_exchange(zero.as_bytes()), Err(DenseError::ZeroVector(_))));
        let short = format!("{header}\n{{\"id\":\"a\",\"vector\":[1,0]}}\n");
        assert!(matches!(EmbeddingMatrix::read_exchange(short.as_bytes()), Err(DenseError::CountMismatch { .. })));
    }

    #[test]
    fn identity_and_orthogonal_queries() {
        let docs = matrix(&[("d::1", vec![1.0, 0.0]), ("d::2", vec![0.0, 1.0])]);
        let q = matrix(&[("q", vec![1.0, 0.0])]);
        let out = dense_search(&q, &docs, 10, "e5").unwrap();
        assert_eq!(out[0].entries[0].passage_id, "1");
        assert!((out[0].entries[0].score - 1.0).abs() < 1e-6);
        assert!(out[0].entries[1].score.abs() < 1e-6);
        let wrong = matrix(&[("q", vec![1.0, 0.0, 0.0])]);
        assert!(matches!(dense_search(&wrong, &docs, 1, "e5"), Err(DenseError::DimensionMismatch { .. })));
    }

    fn q2q_fixture() -> Q2QIndex {
        let qs = matrix(&[("t1", vec![1.0, 0.0]), ("t2", vec![0.6, 0.8])]);
        let gold = HashMap::from([
            ("t1".to_string(), vec![PassageRef::new("d", "P2"), PassageRef::new("d", "P1")]),
            ("t2".to_string(), vec![PassageRef::new("d", "P1"), PassageRef::new("d", "P3")]),
        ]);
        Q2QIndex::new(qs, gold).unwrap()
    }

    #[test]
    fn q2q_identity() {
        let out = q2q_fixture().search("q", &[1.0, 0.0], 1, 10).unwrap();
        let ids: Vec<_> = out.refs().map(|r| r.passage_id).collect();
        assert_eq!(ids, vec!["P1", "P2"]);
        assert!(out.entries.iter().all(|e| (e.score - 1.0).abs() < 1e-12));
    }

    #[test]
    fn q2q_shared_gold_takes_max() {
        let q = [0.8, 0.6];
        let out = q2q_fixture().search("q", &q, 2, 10).unwrap();
        let p1 = out.entries.iter().find(|e| e.passage_id == "P1").unwrap();
        let sim1 = 0.8;
        let sim2 = 0.8 * 0.6 + 0.6 * 0.8;
        assert!((p1.score - f64::max(sim1, sim2)).abs() < 1e-12);
    }

    #[test]
    fn q2q_requires_gold() {
        let qs = matrix(&[("t1", vec![1.0, 0.0])]);
        assert!(matches!(Q2QIndex::new(qs, HashMap::new()), Err(DenseError::MissingGold(_))));
    }
}
