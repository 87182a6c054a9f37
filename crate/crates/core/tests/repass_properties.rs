//! RePASs properties: the identity-NLI maximum for concatenated passages,
//! the window reduction, bounds, and threshold monotonicity.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;

use proptest::prelude::*;
use regrank::answer::{passage_concat, single_line};
use regrank::corpus::{load_corpus, FormatProfile};
use regrank::gateway::{GatewayError, Nli, StubModels};
use regrank::repass::{
    composite, obligation_coverage, repass, NliScores, RuleObligationDetector, Scorer, WindowConfig,
};
use regrank::Passage;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn contradiction_pairs() -> Vec<Passage> {
    load_corpus(fixture("contradiction_pairs.jsonl"), &FormatProfile::passages()).unwrap().passages().to_vec()
}

#[test]
fn concat_attains_maximum_on_contradiction_pairs() {
    let passages = contradiction_pairs();
    assert_eq!(passages.len(), 6);
    let mut sets: Vec<Vec<Passage>> = passages.chunks(2).map(|c| c.to_vec()).collect();
    sets.extend(passages.chunks(2).map(|c| vec![c[1].clone(), c[0].clone()]));
    sets.push(passages.clone());
    for set in sets {
        let answer = passage_concat("q", &set).unwrap();
        let r = repass(&set, &answer, &StubModels, &RuleObligationDetector, WindowConfig::default()).unwrap();
        assert_eq!((r.e_s, r.c_s, r.oc_s, r.repass), (1.0, 0.0, 1.0, 1.0), "{:?}", answer.text);
    }
}

#[test]
fn single_line_loses_entailment() {
    let passages = contradiction_pairs();
    let answer = single_line("q", &passages[..2]).unwrap();
    let r = repass(&passages[..2], &answer, &StubModels, &RuleObligationDetector, WindowConfig::default()).unwrap();
    assert!(r.e_s < 1.0);
    assert_eq!(r.c_s, 0.0);
}

const POOL: &[&str] = &[
    "The firm must keep adequate records.",
    "An Authorised Person shall notify the Regulator promptly.",
    "This Chapter applies to every Fund Manager.",
    "Applicants are required to submit audited accounts.",
    "The Board should review the risk framework annually.",
    "INTRODUCTION.",
    "Guidance on capital adequacy follows.",
    "A Reporting Entity is required to disclose material information.",
];

fn passages_from(groups: &[Vec<usize>]) -> Vec<Passage> {
    groups
        .iter()
        .enumerate()
        .map(|(i, g)| Passage::new("d", format!("P{i}"), g.iter().map(|&s| POOL[s]).collect::<Vec<_>>().join(" ")))
        .collect()
}

/// Pseudo-random but fixed scores per (seed, premise, hypothesis).
struct SyntheticNli(u64);

impl Nli for SyntheticNli {
    fn nli(&self, pairs: &[(String, String)]) -> Result<Vec<NliScores>, GatewayError> {
        Ok(pairs
            .iter()
            .map(|(p, h)| {
                let mut hasher = DefaultHasher::new();
                (self.0, p, h).hash(&mut hasher);
                let x = hasher.finish();
                let e = (x & 0xffff) as f64 / 65536.0;
                let c = (1.0 - e) * ((x >> 16) & 0xffff) as f64 / 65536.0;
                NliScores::new(e, c, 1.0 - e - c)
            })
            .collect())
    }
}

fn groups() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(0..POOL.len(), 0..5), 0..4)
}

fn sentences() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..POOL.len(), 1..6)
}

fn text(ids: &[usize]) -> Vec<String> {
    ids.iter().map(|&i| POOL[i].to_string()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn concat_is_maximal_under_identity_nli(g in prop::collection::vec(prop::collection::vec(0..POOL.len(), 1..5), 1..5)) {
        let ps = passages_from(&g);
        let answer = passage_concat("q", &ps).unwrap();
        let r = repass(&ps, &answer, &StubModels, &RuleObligationDetector, WindowConfig::default()).unwrap();
        prop_assert_eq!(r.repass, 1.0);
    }

    #[test]
    fn zero_window_equals_plain(seed in any::<u64>(), g in groups(), a in sentences()) {
        let nli = SyntheticNli(seed);
        let scorer = Scorer::new(&nli, &RuleObligationDetector);
        let groups: Vec<Vec<String>> = g.iter().map(|x| text(x)).collect();
        let plain = scorer.score_sentences(&groups, &text(&a)).unwrap();
        let windowed = scorer.score_windowed(&groups, &text(&a), WindowConfig { context_n: 0 }).unwrap();
        prop_assert_eq!(serde_json::to_string(&plain).unwrap(), serde_json::to_string(&windowed).unwrap());
        prop_assert_eq!(plain, windowed);
    }

    #[test]
    fn report_is_bounded_and_composed(seed in any::<u64>(), g in groups(), a in sentences(), n in 0usize..4) {
        let nli = SyntheticNli(seed);
        let scorer = Scorer::new(&nli, &RuleObligationDetector);
        let groups: Vec<Vec<String>> = g.iter().map(|x| text(x)).collect();
        let r = scorer.score_windowed(&groups, &text(&a), WindowConfig { context_n: n }).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.repass));
        prop_assert!((r.repass - composite(r.e_s, r.c_s, r.oc_s)).abs() <= 1e-12);
        let covered = r.obligations.iter().filter(|o| o.covered).count();
        prop_assert_eq!(r.oc_s, if r.obligations.is_empty() { 1.0 } else { covered as f64 / r.obligations.len() as f64 });
    }

    #[test]
    fn coverage_monotone_in_threshold(seed in any::<u64>(), p in sentences(), a in sentences(), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
        let nli = SyntheticNli(seed);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let at = |t| obligation_coverage(&text(&p), &text(&a), &RuleObligationDetector, &nli, t).unwrap().oc_s;
        prop_assert!(at(hi) <= at(lo));
    }
}
