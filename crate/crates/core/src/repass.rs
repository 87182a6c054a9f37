//! Reference-free answer scoring against retrieved passages.
//!
//! For answer sentences `a_i` (N of them) and passage sentences `p_j`:
//!
//! ```text
//! E_s  = (1/N) Σ_i max_j P_entail(premise = p_j, hypothesis = a_i)
//! C_s  = (1/N) Σ_i max_j P_contra(premise = p_j, hypothesis = a_i)
//! OC_s = (1/M) Σ_k [ max_l P_entail(premise = a_l, hypothesis = o_k) > 0.7 ]
//! RePASs = (E_s − C_s + OC_s + 1) / 3
//! ```
//!
//! where `o_k` are the M obligation sentences among the passage sentences.
//! Conventions: a max over no premises is 0; with M = 0, OC_s = 1.
//!
//! The windowed variant replaces single sentences by every run of N+1
//! consecutive sentences (per passage, and over the answer); N = 0 is the
//! plain metric.

use serde::{Deserialize, Serialize};

use crate::answer::Answer;
use crate::corpus::Passage;
use crate::gateway::{GatewayError, Nli};
use crate::text::{split_sentences, tokenize};

pub use crate::gateway::NliScores;

pub const OBLIGATION_THRESHOLD: f64 = 0.7;

#[derive(Debug, thiserror::Error)]
pub enum RepassError {
    #[error("answer has no sentences")]
    EmptyAnswer,
    #[error("coverage threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("NLI failure: {0}")]
    NliFailure(#[from] GatewayError),
    #[error("NLI returned {found} scores for {expected} pairs")]
    Misaligned { expected: usize, found: usize },
}

/// The RePASs composite.
pub fn composite(e_s: f64, c_s: f64, oc_s: f64) -> f64 {
    (e_s - c_s + oc_s + 1.0) / 3.0
}

/// Dense premise × hypothesis score table, premise-major. Filled completely
/// before any reduction so results do not depend on NLI call order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    premises: usize,
    hypotheses: usize,
    cells: Vec<NliScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub premise: usize,
    pub hypothesis: usize,
    pub entailment: f64,
    pub contradiction: f64,
    pub neutral: f64,
}

impl ScoreMatrix {
    pub fn compute(premises: &[String], hypotheses: &[String], nli: &dyn Nli) -> Result<Self, RepassError> {
        let pairs: Vec<(String, String)> =
            premises.iter().flat_map(|p| hypotheses.iter().map(move |h| (p.clone(), h.clone()))).collect();
        let cells = if pairs.is_empty() { Vec::new() } else { nli.nli(&pairs)? };
        if cells.len() != pairs.len() {
            return Err(RepassError::Misaligned { expected: pairs.len(), found: cells.len() });
        }
        Ok(Self { premises: premises.len(), hypotheses: hypotheses.len(), cells })
    }

    pub fn get(&self, premise: usize, hypothesis: usize) -> NliScores {
        self.cells[premise * self.hypotheses + hypothesis]
    }

    /// Per hypothesis: argmax premise and the max under `channel`.
    fn column_max(&self, channel: impl Fn(&NliScores) -> f64) -> Vec<(Option<usize>, f64)> {
        (0..self.hypotheses)
            .map(|h| {
                let mut best: (Option<usize>, f64) = (None, 0.0);
                for p in 0..self.premises {
                    let v = channel(&self.get(p, h));
                    if best.0.is_none() || v > best.1 {
                        best = (Some(p), v);
                    }
                }
                best
            })
            .collect()
    }

    /// The audit dump: one cell per (premise, hypothesis).
    pub fn dump(&self) -> Vec<MatrixCell> {
        (0..self.premises)
            .flat_map(|p| (0..self.hypotheses).map(move |h| (p, h)))
            .map(|(p, h)| {
                let s = self.get(p, h);
                MatrixCell {
                    premise: p,
                    hypothesis: h,
                    entailment: s.entailment,
                    contradiction: s.contradiction,
                    neutral: s.neutral,
                }
            })
            .collect()
    }
}

/// Mean-of-max reduction for one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub score: f64,
    /// Best premise index and its value, per hypothesis sentence.
    pub per_sentence: Vec<(Option<usize>, f64)>,
    pub no_premises: bool,
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

fn reduce(matrix: &ScoreMatrix, channel: impl Fn(&NliScores) -> f64) -> ChannelScore {
    let per_sentence = matrix.column_max(channel);
    ChannelScore { score: mean(per_sentence.iter().map(|x| x.1)), per_sentence, no_premises: matrix.premises == 0 }
}

/// Both channels from one premise × hypothesis matrix.
pub fn channel_scores(
    premises: &[String],
    hypotheses: &[String],
    nli: &dyn Nli,
) -> Result<(ChannelScore, ChannelScore), RepassError> {
    if hypotheses.is_empty() {
        return Err(RepassError::EmptyAnswer);
    }
    let m = ScoreMatrix::compute(premises, hypotheses, nli)?;
    Ok((reduce(&m, |s| s.entailment), reduce(&m, |s| s.contradiction)))
}

pub fn entailment_score(
    passage_sentences: &[String],
    answer_sentences: &[String],
    nli: &dyn Nli,
) -> Result<ChannelScore, RepassError> {
    if answer_sentences.is_empty() {
        return Err(RepassError::EmptyAnswer);
    }
    let m = ScoreMatrix::compute(passage_sentences, answer_sentences, nli)?;
    Ok(reduce(&m, |s| s.entailment))
}

pub fn contradiction_score(
    passage_sentences: &[String],
    answer_sentences: &[String],
    nli: &dyn Nli,
) -> Result<ChannelScore, RepassError> {
    if answer_sentences.is_empty() {
        return Err(RepassError::EmptyAnswer);
    }
    let m = ScoreMatrix::compute(passage_sentences, answer_sentences, nli)?;
    Ok(reduce(&m, |s| s.contradiction))
}

// ---------------------------------------------------------------------------
// Obligations

/// Decides which passage sentences state an obligation.
pub trait ObligationDetector: Send + Sync {
    fn detect(&self, sentences: &[String]) -> Vec<bool>;
}

/// Modal phrases matched on whole lowercased tokens.
pub const OBLIGATION_PHRASES: &[&[&str]] =
    &[&["must"], &["shall"], &["should"], &["is", "required", "to"], &["are", "required", "to"]];

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleObligationDetector;

impl RuleObligationDetector {
    pub fn is_obligation(sentence: &str) -> bool {
        let tokens = tokenize(sentence);
        OBLIGATION_PHRASES
            .iter()
            .any(|phrase| tokens.windows(phrase.len()).any(|w| w.iter().zip(phrase.iter()).all(|(t, p)| t == p)))
    }
}

impl ObligationDetector for RuleObligationDetector {
    fn detect(&self, sentences: &[String]) -> Vec<bool> {
        sentences.iter().map(|s| Self::is_obligation(s)).collect()
    }
}

pub fn detect_obligations(sentences: &[String]) -> Vec<bool> {
    RuleObligationDetector.detect(sentences)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObligationCoverage {
    /// Index into the passage sentence list.
    pub sentence_index: usize,
    pub covered: bool,
    pub best_entailment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageScore {
    pub oc_s: f64,
    pub obligations: Vec<ObligationCoverage>,
    pub vacuous: bool,
}

fn check_threshold(threshold: f64) -> Result<(), RepassError> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(RepassError::InvalidThreshold(threshold))
    }
}

/// Coverage of the detector-positive sentences of `passage_sentences` by the
/// answer units in `answer_premises`. An obligation is covered when its best
/// entailment strictly exceeds `threshold`.
fn coverage_against(
    passage_sentences: &[String],
    answer_premises: &[String],
    detector: &dyn ObligationDetector,
    nli: &dyn Nli,
    threshold: f64,
) -> Result<CoverageScore, RepassError> {
    check_threshold(threshold)?;
    let flags = detector.detect(passage_sentences);
    let indices: Vec<usize> = flags.iter().enumerate().filter(|(_, f)| **f).map(|(i, _)| i).collect();
    if indices.is_empty() {
        return Ok(CoverageScore { oc_s: 1.0, obligations: Vec::new(), vacuous: true });
    }
    let obligations: Vec<String> = indices.iter().map(|&i| passage_sentences[i].clone()).collect();
    let m = ScoreMatrix::compute(answer_premises, &obligations, nli)?;
    let best = m.column_max(|s| s.entailment);
    let obligations: Vec<ObligationCoverage> = indices
        .iter()
        .zip(best)
        .map(|(&i, (_, e))| ObligationCoverage { sentence_index: i, covered: e > threshold, best_entailment: e })
        .collect();
    let covered = obligations.iter().filter(|o| o.covered).count();
    Ok(CoverageScore { oc_s: covered as f64 / obligations.len() as f64, obligations, vacuous: false })
}

pub fn obligation_coverage(
    passage_sentences: &[String],
    answer_sentences: &[String],
    detector: &dyn ObligationDetector,
    nli: &dyn Nli,
    threshold: f64,
) -> Result<CoverageScore, RepassError> {
    coverage_against(passage_sentences, answer_sentences, detector, nli, threshold)
}

// ---------------------------------------------------------------------------
// Composite report

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Extra sentences of context per unit; 0 is the plain metric.
    pub context_n: usize,
}

/// Every run of `n + 1` consecutive sentences joined by single spaces; a
/// shorter list yields one window holding all of it.
pub fn windows(sentences: &[String], n: usize) -> Vec<String> {
    if sentences.is_empty() {
        return Vec::new();
    }
    let size = n + 1;
    if sentences.len() <= size {
        return vec![sentences.join(" ")];
    }
    sentences.windows(size).map(|w| w.join(" ")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceDiagnostic {
    pub best_premise: Option<usize>,
    pub entailment: f64,
    pub contradiction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RePassReport {
    pub e_s: f64,
    pub c_s: f64,
    pub oc_s: f64,
    pub repass: f64,
    pub context_n: usize,
    pub per_answer_sentence: Vec<SentenceDiagnostic>,
    pub obligations: Vec<ObligationCoverage>,
    pub warnings: Vec<String>,
}

impl RePassReport {
    fn assemble(
        premise_count: usize,
        entail: ChannelScore,
        contra: ChannelScore,
        coverage: CoverageScore,
        context_n: usize,
    ) -> Self {
        let mut warnings = Vec::new();
        if premise_count == 0 {
            warnings.push("no passage sentences: entailment and contradiction maxima default to 0".to_string());
        }
        if coverage.vacuous {
            warnings.push("no obligation sentences detected: coverage is vacuously 1".to_string());
        }
        let per_answer_sentence = entail
            .per_sentence
            .iter()
            .zip(&contra.per_sentence)
            .map(|(e, c)| SentenceDiagnostic { best_premise: e.0, entailment: e.1, contradiction: c.1 })
            .collect();
        Self {
            e_s: entail.score,
            c_s: contra.score,
            oc_s: coverage.oc_s,
            repass: composite(entail.score, contra.score, coverage.oc_s),
            context_n,
            per_answer_sentence,
            obligations: coverage.obligations,
            warnings,
        }
    }
}

/// Scoring options shared by the plain and windowed paths.
#[derive(Clone, Copy)]
pub struct Scorer<'a> {
    pub nli: &'a dyn Nli,
    pub detector: &'a dyn ObligationDetector,
    pub threshold: f64,
}

impl<'a> Scorer<'a> {
    pub fn new(nli: &'a dyn Nli, detector: &'a dyn ObligationDetector) -> Self {
        Self { nli, detector, threshold: OBLIGATION_THRESHOLD }
    }

    /// Plain metric over sentence groups (one group per passage).
    pub fn score_sentences(
        &self,
        passage_groups: &[Vec<String>],
        answer_sentences: &[String],
    ) -> Result<RePassReport, RepassError> {
        if answer_sentences.is_empty() {
            return Err(RepassError::EmptyAnswer);
        }
        check_threshold(self.threshold)?;
        let premises: Vec<String> = passage_groups.iter().flatten().cloned().collect();
        let m = ScoreMatrix::compute(&premises, answer_sentences, self.nli)?;
        let entail = reduce(&m, |s| s.entailment);
        let contra = reduce(&m, |s| s.contradiction);
        let coverage = coverage_against(&premises, answer_sentences, self.detector, self.nli, self.threshold)?;
        Ok(RePassReport::assemble(premises.len(), entail, contra, coverage, 0))
    }

    /// Windowed metric: premises are per-passage windows of `context_n + 1`
    /// sentences, hypotheses are windows over the answer. Obligations stay
    /// sentence-level and are checked against the answer windows.
    pub fn score_windowed(
        &self,
        passage_groups: &[Vec<String>],
        answer_sentences: &[String],
        window: WindowConfig,
    ) -> Result<RePassReport, RepassError> {
        if answer_sentences.is_empty() {
            return Err(RepassError::EmptyAnswer);
        }
        check_threshold(self.threshold)?;
        let n = window.context_n;
        let premise_windows: Vec<String> = passage_groups.iter().flat_map(|g| windows(g, n)).collect();
        let answer_windows = windows(answer_sentences, n);
        let m = ScoreMatrix::compute(&premise_windows, &answer_windows, self.nli)?;
        let entail = reduce(&m, |s| s.entailment);
        let contra = reduce(&m, |s| s.contradiction);
        let sentences: Vec<String> = passage_groups.iter().flatten().cloned().collect();
        let coverage = coverage_against(&sentences, &answer_windows, self.detector, self.nli, self.threshold)?;
        Ok(RePassReport::assemble(premise_windows.len(), entail, contra, coverage, n))
    }
}

/// Scores `answer` against the passages it was built from.
pub fn repass(
    passages: &[Passage],
    answer: &Answer,
    nli: &dyn Nli,
    detector: &dyn ObligationDetector,
    window: WindowConfig,
) -> Result<RePassReport, RepassError> {
    let groups: Vec<Vec<String>> = passages.iter().map(|p| p.sentences.clone()).collect();
    let answer_sentences = split_sentences(&answer.text);
    let scorer = Scorer::new(nli, detector);
    if window.context_n == 0 {
        scorer.score_sentences(&groups, &answer_sentences)
    } else {
        scorer.score_windowed(&groups, &answer_sentences, window)
    }
}
