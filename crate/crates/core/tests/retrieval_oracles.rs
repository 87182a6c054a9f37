//! Brute-force oracles for lexical search, exact dense search, Q2Q, the
//! retrieval metrics and rank fusion.

use std::collections::{BTreeMap, HashMap, HashSet};

use proptest::prelude::*;
use regrank::dense::{dense_search, EmbeddingMatrix, Q2QIndex, Space};
use regrank::fusion::{rrf_fuse, FusionConfig};
use regrank::metrics::{average_precision_at_k, recall_at_k};
use regrank::sparse::build_sparse_index;
use regrank::text::tokenize;
use regrank::{Corpus, Passage, PassageRef, RankedList};

const VOCAB: &[&str] = &["fund", "must", "report", "capital", "risk", "board", "shall", "client"];

fn corpus_of(docs: &[Vec<usize>]) -> Corpus {
    Corpus::from_passages(docs.iter().enumerate().map(|(i, words)| {
        let text: Vec<&str> = words.iter().map(|&w| VOCAB[w]).collect();
        Passage::new("doc", format!("p{i:03}"), text.join(" "))
    }))
    .unwrap()
}

/// Textbook Okapi BM25 over raw token lists; positions ascending on ties.
fn bm25_oracle(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<(usize, f64)> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len()).sum::<usize>() as f64 / n;
    let mut out = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        let mut score = 0.0;
        let mut matched = false;
        for t in query {
            let tf = d.iter().filter(|x| *x == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = docs.iter().filter(|x| x.contains(t)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * (tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avgdl)));
        }
        if matched {
            out.push((i, score));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bm25_matches_brute_force(
        docs in prop::collection::vec(prop::collection::vec(0..VOCAB.len(), 1..12), 1..=50),
        query in prop::collection::vec(0..VOCAB.len() + 2, 1..6),
        k in 1usize..60,
    ) {
        let corpus = corpus_of(&docs);
        let index = build_sparse_index(&corpus, 1.2, 0.75).unwrap();
        let query_text: Vec<&str> = query.iter().map(|&w| VOCAB.get(w).copied().unwrap_or("absent")).collect();
        let query_text = query_text.join(" ");
        let tokens: Vec<Vec<String>> = corpus.passages().iter().map(|p| tokenize(&p.text)).collect();
        let mut expected = bm25_oracle(&tokens, &tokenize(&query_text), 1.2, 0.75);
        expected.truncate(k);
        let got = index.search(&query_text, k);
        prop_assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            prop_assert_eq!(g.0, e.0);
            prop_assert!((g.1 - e.1).abs() <= 1e-9);
        }
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn matrix(prefix: &str, rows: &[Vec<f64>]) -> EmbeddingMatrix {
    EmbeddingMatrix::new(
        "test",
        rows[0].len(),
        Space::Cosine,
        rows.iter().enumerate().map(|(i, v)| (format!("{prefix}::{i:02}"), v.clone())),
    )
    .unwrap()
}

fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dense_matches_full_scan(
        docs in prop::collection::vec(nonzero_vec(8), 20),
        queries in prop::collection::vec(nonzero_vec(8), 5),
    ) {
        let d = matrix("d", &docs);
        let q = matrix("q", &queries);
        let lists = dense_search(&q, &d, 7, "dense").unwrap();
        prop_assert_eq!(lists.len(), 5);
        for (qi, list) in lists.iter().enumerate() {
            let qu = unit(&queries[qi]);
            let mut all: Vec<(String, f64)> = docs
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("{i:02}"), unit(v).iter().zip(&qu).map(|(a, b)| a * b).sum()))
                .collect();
            all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let got: Vec<&str> = list.entries.iter().map(|e| e.passage_id.as_str()).collect();
            let want: Vec<&str> = all[..7].iter().map(|x| x.0.as_str()).collect();
            prop_assert_eq!(got, want);
            for (e, w) in list.entries.iter().zip(&all) {
                prop_assert!((e.score - w.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn q2q_matches_enumeration(
        train in prop::collection::vec(nonzero_vec(4), 1..12),
        golds in prop::collection::vec(prop::collection::vec(0usize..8, 1..4), 12),
        query in nonzero_vec(4),
        m in 1usize..6,
    ) {
        let ids: Vec<String> = (0..train.len()).map(|i| format!("t{i:02}")).collect();
        let qm = EmbeddingMatrix::new("q", 4, Space::Cosine, ids.iter().cloned().zip(train.iter().cloned())).unwrap();
        let gold_map: HashMap<String, Vec<PassageRef>> = ids
            .iter()
            .zip(&golds)
            .map(|(id, g)| (id.clone(), g.iter().map(|p| PassageRef::new("d", format!("P{p}"))).collect()))
            .collect();
        let index = Q2QIndex::new(qm, gold_map.clone()).unwrap();
        let got = index.search("new", &query, m, 100).unwrap();

        let qu = unit(&query);
        let mut sims: Vec<(String, f64)> = ids
            .iter()
            .zip(&train)
            .map(|(id, v)| (id.clone(), unit(v).iter().zip(&qu).map(|(a, b)| a * b).sum()))
            .collect();
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut best: BTreeMap<PassageRef, f64> = BTreeMap::new();
        for (id, s) in sims.iter().take(m) {
            for r in &gold_map[id] {
                let e = best.entry(r.clone()).or_insert(f64::MIN);
                *e = e.max(*s);
            }
        }
        prop_assert_eq!(got.len(), best.len());
        for e in &got.entries {
            prop_assert!((best[&e.passage_ref()] - e.score).abs() < 1e-12);
        }
        prop_assert!(got.is_well_formed());
    }
}

fn ranked(ids: &[u32]) -> RankedList {
    let n = ids.len();
    RankedList::from_scored(
        "q",
        "r",
        ids.iter().enumerate().map(|(i, p)| (PassageRef::new("d", format!("{p:04}")), (n - i) as f64)).collect(),
        n,
    )
}

fn distinct_ids(max: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::hash_set(0u32..300, 0..=max).prop_shuffle_vec()
}

trait ShuffleVec {
    fn prop_shuffle_vec(self) -> BoxedStrategy<Vec<u32>>;
}

impl<S: Strategy<Value = HashSet<u32>> + 'static> ShuffleVec for S {
    fn prop_shuffle_vec(self) -> BoxedStrategy<Vec<u32>> {
        self.prop_map(|s| {
            let mut v: Vec<u32> = s.into_iter().collect();
            v.sort_unstable();
            v
        })
        .prop_shuffle()
        .boxed()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn metrics_match_recount(
        list in distinct_ids(100),
        gold in prop::collection::hash_set(0u32..300, 1..=20),
        k in 1usize..120,
    ) {
        let l = ranked(&list);
        let g: HashSet<PassageRef> = gold.iter().map(|p| PassageRef::new("d", format!("{p:04}"))).collect();
        let is_gold = |i: usize| gold.contains(&list[i]);
        let depth = k.min(list.len());
        let recall = (0..depth).filter(|&i| is_gold(i)).count() as f64 / gold.len() as f64;
        let mut ap = 0.0;
        for i in 0..depth {
            if is_gold(i) {
                let precision = (0..=i).filter(|&j| is_gold(j)).count() as f64 / (i + 1) as f64;
                ap += precision;
            }
        }
        ap /= gold.len().min(k) as f64;
        let got_r = recall_at_k(&l, &g, k).unwrap();
        let got_ap = average_precision_at_k(&l, &g, k).unwrap();
        prop_assert!((got_r - recall).abs() < 1e-12);
        prop_assert!((got_ap - ap).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&got_ap));
        let perfect = (0..gold.len().min(k)).all(|i| i < list.len() && is_gold(i));
        prop_assert_eq!((got_ap - 1.0).abs() < 1e-12, perfect);
        prop_assert!(recall_at_k(&l, &g, k + 1).unwrap() >= got_r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fusion_invariants(
        lists in prop::collection::vec(distinct_ids(15), 1..4),
        scales in prop::collection::vec((0.1f64..10.0, -5.0f64..5.0), 3),
    ) {
        let ids: Vec<String> = (0..lists.len()).map(|i| format!("r{i}")).collect();
        let mk = |i: usize, transform: &dyn Fn(f64) -> f64| {
            let n = lists[i].len();
            RankedList::from_scored(
                "q",
                ids[i].clone(),
                lists[i].iter().enumerate().map(|(j, p)| (PassageRef::new("d", format!("{p:04}")), transform((n - j) as f64))).collect(),
                n,
            )
        };
        let config = FusionConfig::new(4.0, ids.clone()).unwrap();
        let raw: Vec<RankedList> = (0..lists.len()).map(|i| mk(i, &|x| x)).collect();
        let scaled: Vec<RankedList> = (0..lists.len())
            .map(|i| {
                let (a, c) = scales[i];
                mk(i, &move |x| a * x.powi(3) + c)
            })
            .collect();
        let fused = rrf_fuse(&raw, &config, 1000).unwrap();
        prop_assert_eq!(&fused, &rrf_fuse(&scaled, &config, 1000).unwrap());
        let union: HashSet<PassageRef> = raw.iter().flat_map(|l| l.refs()).collect();
        prop_assert_eq!(fused.len(), union.len());
        for e in &fused.entries {
            prop_assert!(union.contains(&e.passage_ref()));
            prop_assert!(e.score <= config.max_score() + 1e-15);
        }
        prop_assert!(fused.is_well_formed());
    }
}
