//! Passage corpus and question splits: loading under a field-mapping profile,
//! deduplication, and the minimum-length filter.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ranked::PassageRef;
use crate::text::{split_sentences, tokenize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("passage {0} appears with two different texts")]
    DuplicateRefConflict(PassageRef),
    #[error("question id {0} appears twice in one split")]
    DuplicateQuestion(String),
    #[error("question {question_id} references unknown passage {passage}")]
    UnresolvedGold { question_id: String, passage: PassageRef },
    #[error("unknown format profile `{0}`")]
    UnknownProfile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    pub passage_id: String,
    pub text: String,
    pub sentences: Vec<String>,
    pub token_count: usize,
}

impl Passage {
    pub fn new(doc_id: impl Into<String>, passage_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let sentences = split_sentences(&text);
        let token_count = tokenize(&text).len();
        Self { doc_id: doc_id.into(), passage_id: passage_id.into(), text, sentences, token_count }
    }

    pub fn passage_ref(&self) -> PassageRef {
        PassageRef::new(self.doc_id.clone(), self.passage_id.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub question_id: String,
    pub text: String,
    #[serde(default)]
    pub gold_refs: Vec<PassageRef>,
}

impl Question {
    pub fn is_labeled(&self) -> bool {
        !self.gold_refs.is_empty()
    }

    pub fn gold_set(&self) -> HashSet<PassageRef> {
        self.gold_refs.iter().cloned().collect()
    }
}

/// Immutable, deduplicated passage collection.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    passages: Vec<Passage>,
    index_by_ref: HashMap<PassageRef, usize>,
}

impl Corpus {
    /// Deduplicates by reference. Repeats with identical text are merged;
    /// repeats with different text are rejected.
    pub fn from_passages(passages: impl IntoIterator<Item = Passage>) -> Result<Self, CorpusError> {
        let mut corpus = Corpus::default();
        for p in passages {
            corpus.insert(p)?;
        }
        Ok(corpus)
    }

    fn insert(&mut self, p: Passage) -> Result<(), CorpusError> {
        let r = p.passage_ref();
        match self.index_by_ref.get(&r) {
            Some(&pos) if self.passages[pos].text == p.text => Ok(()),
            Some(_) => Err(CorpusError::DuplicateRefConflict(r)),
            None => {
                self.index_by_ref.insert(r, self.passages.len());
                self.passages.push(p);
                Ok(())
            }
        }
    }

    /// Appends the passages of `other` under the same deduplication rule.
    pub fn merge(&mut self, other: Corpus) -> Result<(), CorpusError> {
        for p in other.passages {
            self.insert(p)?;
        }
        Ok(())
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn position(&self, r: &PassageRef) -> Option<usize> {
        self.index_by_ref.get(r).copied()
    }

    pub fn get(&self, r: &PassageRef) -> Option<&Passage> {
        self.position(r).map(|i| &self.passages[i])
    }

    /// Passages with `token_count >= min_tokens`, order preserved.
    pub fn preprocess(&self, min_tokens: usize) -> Corpus {
        let kept = self.passages.iter().filter(|p| p.token_count >= min_tokens).cloned();
        Corpus::from_passages(kept).expect("subset of a deduplicated corpus")
    }

    /// Checks that every gold reference of every labeled question resolves.
    pub fn validate_gold(&self, questions: &[Question]) -> Result<(), CorpusError> {
        for q in questions {
            for r in &q.gold_refs {
                if self.position(r).is_none() {
                    return Err(CorpusError::UnresolvedGold { question_id: q.question_id.clone(), passage: r.clone() });
                }
            }
        }
        Ok(())
    }
}

/// Free-function form of [`Corpus::preprocess`].
pub fn preprocess(corpus: &Corpus, min_tokens: usize) -> Corpus {
    corpus.preprocess(min_tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Each record is a question carrying its gold passages inline.
    QuestionRecords,
    /// Each record is one passage.
    PassageRecords,
}

/// Field names used to read a corpus file. Records are either a JSON array
/// or JSON Lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatProfile {
    pub name: String,
    pub layout: Layout,
    pub question_id: String,
    pub question_text: String,
    pub passages: String,
    pub doc_id: String,
    pub passage_id: String,
    pub passage_text: String,
}

impl FormatProfile {
    /// The ObliQA release layout.
    pub fn obliqa() -> Self {
        Self {
            name: "obliqa".into(),
            layout: Layout::QuestionRecords,
            question_id: "QuestionID".into(),
            question_text: "Question".into(),
            passages: "Passages".into(),
            doc_id: "DocumentID".into(),
            passage_id: "PassageID".into(),
            passage_text: "Passage".into(),
        }
    }

    /// Flat passage records: `{doc_id, passage_id, text}`.
    pub fn passages() -> Self {
        Self {
            name: "passages".into(),
            layout: Layout::PassageRecords,
            question_id: String::new(),
            question_text: String::new(),
            passages: String::new(),
            doc_id: "doc_id".into(),
            passage_id: "passage_id".into(),
            passage_text: "text".into(),
        }
    }

    pub fn named(name: &str) -> Result<Self, CorpusError> {
        match name {
            "obliqa" => Ok(Self::obliqa()),
            "passages" => Ok(Self::passages()),
            other => Err(CorpusError::UnknownProfile(other.to_string())),
        }
    }
}

fn read_records(text: &str) -> Result<Vec<Value>, CorpusError> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        return serde_json::from_str::<Vec<Value>>(trimmed).map_err(|e| CorpusError::Parse(e.to_string()));
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| CorpusError::Parse(format!("line {}: {e}", n + 1))))
        .collect()
}

/// Ids may be strings or numbers in the source data.
fn id_field(rec: &Value, field: &str) -> Result<String, CorpusError> {
    match rec.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(other) => Err(CorpusError::Parse(format!("field `{field}` is not an id: {other}"))),
        None => Err(CorpusError::Parse(format!("missing field `{field}`"))),
    }
}

fn text_field(rec: &Value, field: &str) -> Result<String, CorpusError> {
    match rec.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        _ => Err(CorpusError::Parse(format!("missing or non-string field `{field}`"))),
    }
}

fn passage_from(rec: &Value, profile: &FormatProfile) -> Result<Passage, CorpusError> {
    Ok(Passage::new(
        id_field(rec, &profile.doc_id)?,
        id_field(rec, &profile.passage_id)?,
        text_field(rec, &profile.passage_text)?,
    ))
}

fn inline_passages<'a>(rec: &'a Value, profile: &FormatProfile) -> Result<&'a Vec<Value>, CorpusError> {
    rec.get(&profile.passages)
        .and_then(Value::as_array)
        .ok_or_else(|| CorpusError::Parse(format!("missing array field `{}`", profile.passages)))
}

pub fn parse_corpus(text: &str, profile: &FormatProfile) -> Result<Corpus, CorpusError> {
    let records = read_records(text)?;
    let mut passages = Vec::new();
    for rec in &records {
        match profile.layout {
            Layout::PassageRecords => passages.push(passage_from(rec, profile)?),
            Layout::QuestionRecords => {
                for p in inline_passages(rec, profile)? {
                    passages.push(passage_from(p, profile)?);
                }
            }
        }
    }
    Corpus::from_passages(passages)
}

/// Questions of a split. Gold references come from the inline passages;
/// passage-record files contain no questions.
pub fn parse_questions(text: &str, profile: &FormatProfile) -> Result<Vec<Question>, CorpusError> {
    if profile.layout == Layout::PassageRecords {
        return Ok(Vec::new());
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for rec in read_records(text)? {
        let question_id = id_field(&rec, &profile.question_id)?;
        if !seen.insert(question_id.clone()) {
            return Err(CorpusError::DuplicateQuestion(question_id));
        }
        let gold_refs = match rec.get(&profile.passages) {
            None | Some(Value::Null) => Vec::new(),
            Some(_) => inline_passages(&rec, profile)?
                .iter()
                .map(|p| Ok(PassageRef::new(id_field(p, &profile.doc_id)?, id_field(p, &profile.passage_id)?)))
                .collect::<Result<_, CorpusError>>()?,
        };
        out.push(Question { question_id, text: text_field(&rec, &profile.question_text)?, gold_refs });
    }
    Ok(out)
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
}

pub fn load_corpus(path: impl AsRef<Path>, profile: &FormatProfile) -> Result<Corpus, CorpusError> {
    parse_corpus(&read_file(path.as_ref())?, profile)
}

pub fn load_questions(path: impl AsRef<Path>, profile: &FormatProfile) -> Result<Vec<Question>, CorpusError> {
    parse_questions(&read_file(path.as_ref())?, profile)
}
