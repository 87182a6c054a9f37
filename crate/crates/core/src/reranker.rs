//! Second-stage reranking with a relevance scorer, and construction of the
//! scorer's binary fine-tuning set.

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Question};
use crate::gateway::{GatewayError, RelevanceScorer};
use crate::ranked::{PassageRef, RankedList};

pub const DEFAULT_RESCAN_DEPTH: usize = 40;
pub const DEFAULT_OUTPUT_K: usize = 10;
pub const DEFAULT_HARD_PER_Q: usize = 4;
pub const DEFAULT_EASY_PER_Q: usize = 4;
pub const DEFAULT_SCORER_BATCH: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum RerankError {
    #[error("question {0} has no gold passages")]
    UnlabeledQuestion(String),
    #[error("no L1 lists for question {0}")]
    MissingLists(String),
    #[error("candidate {0} is not in the corpus")]
    UnknownPassage(PassageRef),
    #[error("no candidates to rerank for question {0}")]
    EmptyCandidates(String),
    #[error("scorer failed on batch {batch} of question {question_id}: {source}")]
    ScorerFailure {
        question_id: String,
        batch: usize,
        #[source]
        source: GatewayError,
    },
    #[error("scorer returned {found} scores for {expected} pairs")]
    Misaligned { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Relevant,
    NotRelevant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    Hard,
    Easy,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankExample {
    pub question_id: String,
    pub question_text: String,
    pub passage_ref: PassageRef,
    pub passage_text: String,
    pub label: Label,
    pub negative_kind: NegativeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainsetConfig {
    pub top_k: usize,
    pub hard_per_q: usize,
    pub easy_per_q: usize,
    pub seed: u64,
}

impl Default for TrainsetConfig {
    fn default() -> Self {
        Self { top_k: 10, hard_per_q: DEFAULT_HARD_PER_Q, easy_per_q: DEFAULT_EASY_PER_Q, seed: 0 }
    }
}

/// `n` items from `pool` chosen uniformly without replacement, returned in
/// pool order. Takes everything when the pool is small enough.
fn draw<T: Clone>(pool: &[T], n: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    if pool.len() <= n {
        return pool.to_vec();
    }
    let mut idx = sample(rng, pool.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

/// Per question: every gold passage as a positive, then hard negatives from
/// the union of the L1 top-`top_k` lists, then easy negatives from the rest
/// of the corpus. One seeded generator runs across all questions in order.
pub fn build_rerank_trainset(
    questions: &[Question],
    l1_lists: &HashMap<String, Vec<RankedList>>,
    corpus: &Corpus,
    config: &TrainsetConfig,
) -> Result<Vec<RerankExample>, RerankError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::new();
    for q in questions {
        if !q.is_labeled() {
            return Err(RerankError::UnlabeledQuestion(q.question_id.clone()));
        }
        let lists = l1_lists.get(&q.question_id).ok_or_else(|| RerankError::MissingLists(q.question_id.clone()))?;
        let gold = q.gold_set();
        let example = |r: &PassageRef, label, kind| -> Result<RerankExample, RerankError> {
            let p = corpus.get(r).ok_or_else(|| RerankError::UnknownPassage(r.clone()))?;
            Ok(RerankExample {
                question_id: q.question_id.clone(),
                question_text: q.text.clone(),
                passage_ref: r.clone(),
                passage_text: p.text.clone(),
                label,
                negative_kind: kind,
            })
        };
        let mut seen = HashSet::new();
        for r in &q.gold_refs {
            if seen.insert(r.clone()) {
                out.push(example(r, Label::Relevant, NegativeKind::None)?);
            }
        }
        let mut pool = Vec::new();
        for l in lists {
            for e in l.top(config.top_k) {
                let r = e.passage_ref();
                if !gold.contains(&r) && seen.insert(r.clone()) {
                    pool.push(r);
                }
            }
        }
        let hard = draw(&pool, config.hard_per_q, &mut rng);
        let hard_set: HashSet<&PassageRef> = hard.iter().collect();
        let easy_pool: Vec<PassageRef> = corpus
            .passages()
            .iter()
            .map(|p| p.passage_ref())
            .filter(|r| !gold.contains(r) && !hard_set.contains(r))
            .collect();
        let easy = draw(&easy_pool, config.easy_per_q, &mut rng);
        if hard.is_empty() && easy.is_empty() {
            log::warn!("question {} yields no negatives", q.question_id);
        }
        for r in &hard {
            out.push(example(r, Label::NotRelevant, NegativeKind::Hard)?);
        }
        for r in &easy {
            out.push(example(r, Label::NotRelevant, NegativeKind::Easy)?);
        }
    }
    Ok(out)
}

/// Rescores every candidate and returns the top `k` by scorer probability.
pub fn rerank(
    query: &Question,
    candidates: &RankedList,
    corpus: &Corpus,
    scorer: &dyn RelevanceScorer,
    k: usize,
    batch_size: usize,
) -> Result<RankedList, RerankError> {
    if candidates.is_empty() {
        return Err(RerankError::EmptyCandidates(query.question_id.clone()));
    }
    let refs: Vec<PassageRef> = candidates.refs().collect();
    let pairs = refs
        .iter()
        .map(|r| {
            let p = corpus.get(r).ok_or_else(|| RerankError::UnknownPassage(r.clone()))?;
            Ok((query.text.clone(), p.text.clone()))
        })
        .collect::<Result<Vec<_>, RerankError>>()?;
    let mut scores = Vec::with_capacity(pairs.len());
    for (batch, chunk) in pairs.chunks(batch_size.max(1)).enumerate() {
        let s = scorer.relevance(chunk).map_err(|source| RerankError::ScorerFailure {
            question_id: query.question_id.clone(),
            batch,
            source,
        })?;
        if s.len() != chunk.len() {
            return Err(RerankError::Misaligned { expected: chunk.len(), found: s.len() });
        }
        scores.extend(s);
    }
    let rid = format!("l2({})", candidates.retriever_id);
    Ok(RankedList::from_scored(query.question_id.clone(), rid, refs.into_iter().zip(scores).collect(), k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::gateway::StubModels;

    fn corpus(n: usize) -> Corpus {
        Corpus::from_passages((1..=n).map(|i| Passage::new("d", format!("P{i}"), format!("text {i}.")))).unwrap()
    }

    fn r(p: &str) -> PassageRef {
        PassageRef::new("d", p)
    }

    fn list(ids: &[&str]) -> RankedList {
        let n = ids.len();
        RankedList::from_scored("q", "l1", ids.iter().enumerate().map(|(i, p)| (r(p), (n - i) as f64)).collect(), n)
    }

    fn question(gold: &[&str]) -> Question {
        Question { question_id: "q".into(), text: "text".into(), gold_refs: gold.iter().map(|p| r(p)).collect() }
    }

    #[test]
    fn hard_negatives_forced() {
        let lists = HashMap::from([("q".to_string(), vec![list(&["P1", "P2", "P3"])])]);
        let cfg = TrainsetConfig { top_k: 3, hard_per_q: 2, easy_per_q: 0, seed: 1 };
        let ex = build_rerank_trainset(&[question(&["P1"])], &lists, &corpus(5), &cfg).unwrap();
        let hard: Vec<_> =
            ex.iter().filter(|e| e.negative_kind == NegativeKind::Hard).map(|e| e.passage_ref.clone()).collect();
        assert_eq!(hard, vec![r("P2"), r("P3")]);
        assert_eq!(ex[0].label, Label::Relevant);
    }

    #[test]
    fn corpus_equal_to_gold_has_no_negatives() {
        let lists = HashMap::from([("q".to_string(), vec![list(&["P1", "P2"])])]);
        let ex =
            build_rerank_trainset(&[question(&["P1", "P2"])], &lists, &corpus(2), &TrainsetConfig::default()).unwrap();
        assert_eq!(ex.len(), 2);
        assert!(ex.iter().all(|e| e.label == Label::Relevant));
    }

    #[test]
    fn unlabeled_rejected() {
        let lists = HashMap::from([("q".to_string(), vec![list(&["P1"])])]);
        assert!(matches!(
            build_rerank_trainset(&[question(&[])], &lists, &corpus(2), &TrainsetConfig::default()),
            Err(RerankError::UnlabeledQuestion(_))
        ));
    }

    #[test]
    fn rerank_promotes_best_scored() {
        let c = Corpus::from_passages(vec![
            Passage::new("d", "P1", "alpha beta."),
            Passage::new("d", "P2", "gamma."),
            Passage::new("d", "P3", "delta."),
        ])
        .unwrap();
        let q = Question { question_id: "q".into(), text: "gamma".into(), gold_refs: vec![] };
        let out = rerank(&q, &list(&["P1", "P2", "P3"]), &c, &StubModels, 10, 2).unwrap();
        assert_eq!(out.entries[0].passage_id, "P2");
        assert_eq!(out.len(), 3);
        assert_eq!(out.retriever_id, "l2(l1)");
    }

    struct Failing;
    impl RelevanceScorer for Failing {
        fn relevance(&self, _: &[(String, String)]) -> Result<Vec<f64>, GatewayError> {
            Err(GatewayError::ProtocolViolation("down".into()))
        }
    }

    #[test]
    fn scorer_failure_names_batch() {
        let q = question(&["P1"]);
        let err = rerank(&q, &list(&["P1", "P2"]), &corpus(2), &Failing, 10, 1).unwrap_err();
        assert!(matches!(err, RerankError::ScorerFailure { batch: 0, .. }));
    }
}
