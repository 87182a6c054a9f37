//! Diagnostics: the entailment histogram of non-gold retrievals against gold
//! passages, and judge-model answer ratings.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::answer::{fill_template, Answer};
use crate::corpus::{Corpus, Question};
use crate::gateway::{GatewayError, Generator, Nli};
use crate::ranked::RankedList;
use crate::repass::{channel_scores, RepassError};

pub const JUDGE_PROMPT_TEMPLATE: &str = include_str!("../assets/judge_prompt.txt");
pub const RATING_MARKER: &str = "Total rating:";
pub const BUCKETS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("question {0} has no gold passages")]
    UnlabeledQuestion(String),
    #[error("scoring failed: {0}")]
    Scoring(#[from] RepassError),
    #[error("generator failed: {0}")]
    GeneratorFailure(#[from] GatewayError),
}

/// Which side of a (non-gold, gold) pair acts as the premise set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairDirection {
    /// Non-gold passage sentences entail gold sentences.
    #[default]
    RetrievedPremise,
    /// Gold passage sentences entail non-gold sentences.
    GoldPremise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramFilter {
    pub top_k: usize,
    pub c_s_max: f64,
    pub direction: PairDirection,
}

impl Default for HistogramFilter {
    fn default() -> Self {
        Self { top_k: 10, c_s_max: 0.2, direction: PairDirection::RetrievedPremise }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub bucket_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub filter: HistogramFilter,
    /// Non-gold retrievals examined before the contradiction filter.
    pub pairs_considered: usize,
}

impl HistogramReport {
    fn empty(filter: HistogramFilter) -> Self {
        Self {
            bucket_edges: (0..=BUCKETS).map(|i| i as f64 / BUCKETS as f64).collect(),
            counts: vec![0; BUCKETS],
            filter,
            pairs_considered: 0,
        }
    }

    pub fn qualifying(&self) -> usize {
        self.counts.iter().sum()
    }

    /// `bucket,count` rows for plotting.
    pub fn chart_data(&self) -> String {
        let mut out = String::from("bucket,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{:.1}-{:.1},{}\n", self.bucket_edges[i], self.bucket_edges[i + 1], c));
        }
        out
    }
}

/// Uniform bucket of a probability; the last bucket is closed at 1.
pub fn bucket_of(e: f64) -> usize {
    ((e * BUCKETS as f64).floor().max(0.0) as usize).min(BUCKETS - 1)
}

/// For each non-gold passage in each query's top `top_k`, scores it against
/// every gold passage of the query and keeps the pair with the highest E_s
/// among those with C_s below `c_s_max`. The kept E_s values are bucketed.
pub fn entailment_histogram(
    questions: &[Question],
    retrievals: &HashMap<String, RankedList>,
    corpus: &Corpus,
    nli: &dyn Nli,
    filter: HistogramFilter,
) -> Result<HistogramReport, AnalysisError> {
    let mut report = HistogramReport::empty(filter);
    for q in questions {
        if !q.is_labeled() {
            return Err(AnalysisError::UnlabeledQuestion(q.question_id.clone()));
        }
        let Some(list) = retrievals.get(&q.question_id) else {
            continue;
        };
        let gold = q.gold_set();
        let gold_sentences: Vec<&Vec<String>> =
            q.gold_refs.iter().filter_map(|r| corpus.get(r)).map(|p| &p.sentences).collect();
        for e in list.top(filter.top_k) {
            let r = e.passage_ref();
            if gold.contains(&r) {
                continue;
            }
            let Some(p) = corpus.get(&r) else {
                continue;
            };
            report.pairs_considered += 1;
            let mut best: Option<f64> = None;
            for g in &gold_sentences {
                let (premises, hypotheses) = match filter.direction {
                    PairDirection::RetrievedPremise => (&p.sentences, *g),
                    PairDirection::GoldPremise => (*g, &p.sentences),
                };
                if hypotheses.is_empty() {
                    continue;
                }
                let (entail, contra) = channel_scores(premises, hypotheses, nli)?;
                if contra.score < filter.c_s_max && best.is_none_or(|b| entail.score > b) {
                    best = Some(entail.score);
                }
            }
            if let Some(e_s) = best {
                report.counts[bucket_of(e_s)] += 1;
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub question_id: String,
    pub rating: u8,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub question_id: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeSummary {
    pub verdicts: Vec<JudgeVerdict>,
    pub failures: Vec<ParseFailure>,
    /// Mean over parsed verdicts; `None` when nothing parsed.
    pub mean_rating: Option<f64>,
}

pub fn judge_prompt(question: &str, answer: &str) -> String {
    fill_template(JUDGE_PROMPT_TEMPLATE, &[("question", question), ("answer", answer)])
}

/// Reads the rating from the last line carrying the marker: the first
/// integer after it, accepted only in 1..=4. Text before that line is the
/// rationale.
pub fn parse_judgement(response: &str) -> Option<(u8, String)> {
    let lines: Vec<&str> = response.lines().collect();
    let idx = lines.iter().rposition(|l| l.contains(RATING_MARKER))?;
    let line = lines[idx];
    let after = &line[line.find(RATING_MARKER)? + RATING_MARKER.len()..];
    let digits: String = after.chars().skip_while(|c| !c.is_ascii_digit()).take_while(|c| c.is_ascii_digit()).collect();
    let rating: u8 = digits.parse().ok()?;
    if !(1..=4).contains(&rating) {
        return None;
    }
    let mut rationale = lines[..idx].join("\n").trim().to_string();
    if let Some(rest) = rationale.strip_prefix("Evaluation:") {
        rationale = rest.trim().to_string();
    }
    Some((rating, rationale))
}

/// Rates each answer once, re-asks once for unparseable responses, and
/// records anything still unparseable as a failure excluded from the mean.
pub fn judge_answers(
    answers: &[Answer],
    questions: &[Question],
    generator: &dyn Generator,
) -> Result<JudgeSummary, AnalysisError> {
    let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    let prompts: Vec<String> = answers
        .iter()
        .map(|a| {
            let text = by_id.get(a.question_id.as_str()).map(|q| q.text.as_str()).unwrap_or("");
            judge_prompt(text, &a.text)
        })
        .collect();
    let mut responses = generator.generate(&prompts)?;
    let retry: Vec<usize> = (0..answers.len()).filter(|&i| parse_judgement(&responses[i]).is_none()).collect();
    if !retry.is_empty() {
        let again = generator.generate(&retry.iter().map(|&i| prompts[i].clone()).collect::<Vec<_>>())?;
        for (i, r) in retry.into_iter().zip(again) {
            responses[i] = r;
        }
    }
    let mut verdicts = Vec::new();
    let mut failures = Vec::new();
    for (a, response) in answers.iter().zip(responses) {
        match parse_judgement(&response) {
            Some((rating, rationale)) => {
                verdicts.push(JudgeVerdict { question_id: a.question_id.clone(), rating, rationale })
            }
            None => failures.push(ParseFailure { question_id: a.question_id.clone(), response }),
        }
    }
    let mean_rating = if verdicts.is_empty() {
        None
    } else {
        Some(verdicts.iter().map(|v| v.rating as f64).sum::<f64>() / verdicts.len() as f64)
    };
    Ok(JudgeSummary { verdicts, failures, mean_rating })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answer::Strategy;
    use crate::corpus::Passage;
    use crate::gateway::StubModels;
    use crate::ranked::PassageRef;
    use std::sync::Mutex;

    #[test]
    fn parse_cases() {
        assert_eq!(parse_judgement("Total rating: 4"), Some((4, String::new())));
        assert_eq!(parse_judgement("Good coverage.\nTotal rating: 2"), Some((2, "Good coverage.".into())));
        assert_eq!(parse_judgement("no marker here"), None);
        assert_eq!(parse_judgement("Total rating: 7"), None);
        assert_eq!(
            parse_judgement("Total rating: 1\nmore\nTotal rating: 3/4"),
            Some((3, "Total rating: 1\nmore".into()))
        );
    }

    struct Scripted(Mutex<Vec<String>>);
    impl Generator for Scripted {
        fn generate(&self, prompts: &[String]) -> Result<Vec<String>, GatewayError> {
            let mut q = self.0.lock().unwrap();
            Ok(prompts.iter().map(|_| q.remove(0)).collect())
        }
    }

    fn answer(id: &str) -> Answer {
        Answer { question_id: id.into(), strategy: Strategy::PassageConcat, text: "x".into(), source_refs: vec![] }
    }

    #[test]
    fn retry_then_failure() {
        let g = Scripted(Mutex::new(vec!["Total rating: 4".into(), "garbage".into(), "still garbage".into()]));
        let s = judge_answers(&[answer("a"), answer("b")], &[], &g).unwrap();
        assert_eq!(s.verdicts.len(), 1);
        assert_eq!(s.failures.len(), 1);
        assert_eq!(s.mean_rating, Some(4.0));
    }

    #[test]
    fn duplicate_lands_in_top_bucket() {
        let corpus = Corpus::from_passages(vec![
            Passage::new("d", "G", "The firm must keep records."),
            Passage::new("d", "D", "The firm must keep records."),
            Passage::new("d", "U", "Completely unrelated words here."),
        ])
        .unwrap();
        let q = Question { question_id: "q".into(), text: "t".into(), gold_refs: vec![PassageRef::new("d", "G")] };
        let list = RankedList::from_scored(
            "q",
            "r",
            vec![(PassageRef::new("d", "G"), 3.0), (PassageRef::new("d", "D"), 2.0), (PassageRef::new("d", "U"), 1.0)],
            10,
        );
        let h = entailment_histogram(
            &[q],
            &HashMap::from([("q".into(), list)]),
            &corpus,
            &StubModels,
            HistogramFilter::default(),
        )
        .unwrap();
        assert_eq!(h.counts[9], 1);
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.pairs_considered, 2);
        assert_eq!(h.bucket_edges.len(), 11);
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(bucket_of(0.0), 0);
        assert_eq!(bucket_of(0.09), 0);
        assert_eq!(bucket_of(0.1), 1);
        assert_eq!(bucket_of(1.0), 9);
    }
}
