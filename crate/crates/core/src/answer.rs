//! Answer strategies: LLM-prompted generation, passage concatenation, and
//! the single-line variant of concatenation.

use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, Question};
use crate::gateway::{GatewayError, Generator};
use crate::ranked::PassageRef;
use crate::text::{is_terminator, split_sentences};

pub const ANSWER_PROMPT_TEMPLATE: &str = include_str!("../assets/answer_prompt.txt");
pub const ANSWER_PROMPT_VERSION: &str = "regrank-answer-v1";

#[derive(Debug, thiserror::Error)]
pub enum AnswerError {
    #[error("no passages to build an answer from")]
    EmptyInput,
    #[error("generator failed: {0}")]
    GeneratorFailure(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    LlmPrompt,
    PassageConcat,
    SingleLine,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::LlmPrompt => "llm_prompt",
            Strategy::PassageConcat => "passage_concat",
            Strategy::SingleLine => "single_line",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "llm_prompt" | "llm" => Some(Strategy::LlmPrompt),
            "passage_concat" | "pc" => Some(Strategy::PassageConcat),
            "single_line" | "sl" => Some(Strategy::SingleLine),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub question_id: String,
    pub strategy: Strategy,
    pub text: String,
    pub source_refs: Vec<PassageRef>,
}

fn refs(passages: &[Passage]) -> Vec<PassageRef> {
    passages.iter().map(Passage::passage_ref).collect()
}

/// Passage texts joined by single spaces, in retrieval order.
pub fn passage_concat(question_id: &str, passages: &[Passage]) -> Result<Answer, AnswerError> {
    if passages.is_empty() {
        return Err(AnswerError::EmptyInput);
    }
    let text = passages.iter().map(|p| p.text.as_str()).collect::<Vec<_>>().join(" ");
    Ok(Answer { question_id: question_id.into(), strategy: Strategy::PassageConcat, text, source_refs: refs(passages) })
}

/// Removes sentence-final terminators from `text`, then collapses whitespace.
///
/// Any terminator still followed by whitespace afterwards (an abbreviation
/// such as `e.g.`) is dropped too, so the result never contains a
/// terminator followed by whitespace.
pub fn strip_terminators(text: &str) -> String {
    let pieces: Vec<String> =
        split_sentences(text).into_iter().map(|s| strip_final_terminators(&s).to_string()).collect();
    let joined = pieces.join(" ");
    let mut out = String::with_capacity(joined.len());
    let chars: Vec<char> = joined.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        if is_terminator(c) {
            let mut j = i;
            while j < chars.len() && is_terminator(chars[j]) {
                j += 1;
            }
            if j == chars.len() || chars[j].is_whitespace() {
                continue;
            }
        }
        out.push(c);
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Drops the terminator run ending a sentence, keeping closing quotes or
/// brackets that follow it.
fn strip_final_terminators(sentence: &str) -> String {
    let chars: Vec<char> = sentence.chars().collect();
    let mut end = chars.len();
    while end > 0 && matches!(chars[end - 1], '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}') {
        end -= 1;
    }
    let closers: String = chars[end..].iter().collect();
    let mut cut = end;
    while cut > 0 && is_terminator(chars[cut - 1]) {
        cut -= 1;
    }
    let body: String = chars[..cut].iter().collect();
    format!("{}{}", body.trim_end(), closers)
}

pub fn single_line(question_id: &str, passages: &[Passage]) -> Result<Answer, AnswerError> {
    let concat = passage_concat(question_id, passages)?;
    Ok(Answer { strategy: Strategy::SingleLine, text: strip_terminators(&concat.text), ..concat })
}

/// One passage per line, each prefixed with its reference.
pub fn format_context(passages: &[Passage]) -> String {
    passages.iter().map(|p| format!("[{}] {}", p.passage_ref(), p.text)).collect::<Vec<_>>().join("\n")
}

/// Fills `{name}` placeholders in one left-to-right pass, so substituted
/// text is never re-scanned.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        for (name, value) in values {
            let key = format!("{{{name}}}");
            if rest[open..].starts_with(&key) {
                out.push_str(value);
                rest = &rest[open + key.len()..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = &rest[open + 1..];
    }
    out.push_str(rest);
    out
}

pub fn answer_prompt(question: &str, passages: &[Passage]) -> String {
    fill_template(ANSWER_PROMPT_TEMPLATE, &[("question", question), ("context", &format_context(passages))])
}

/// Generates answers for several questions in one generator batch.
pub fn llm_answers(items: &[(&Question, &[Passage])], generator: &dyn Generator) -> Result<Vec<Answer>, AnswerError> {
    let prompts: Vec<String> = items
        .iter()
        .map(|(q, ps)| {
            if ps.is_empty() {
                log::warn!("question {} has no passages; prompting with an empty context", q.question_id);
            }
            answer_prompt(&q.text, ps)
        })
        .collect();
    let outputs = generator.generate(&prompts)?;
    Ok(items
        .iter()
        .zip(outputs)
        .map(|((q, ps), text)| Answer {
            question_id: q.question_id.clone(),
            strategy: Strategy::LlmPrompt,
            text,
            source_refs: refs(ps),
        })
        .collect())
}

pub fn llm_answer(question: &Question, passages: &[Passage], generator: &dyn Generator) -> Result<Answer, AnswerError> {
    Ok(llm_answers(&[(question, passages)], generator)?.remove(0))
}

pub fn answer_with(
    strategy: Strategy,
    question: &Question,
    passages: &[Passage],
    generator: &dyn Generator,
) -> Result<Answer, AnswerError> {
    match strategy {
        Strategy::PassageConcat => passage_concat(&question.question_id, passages),
        Strategy::SingleLine => single_line(&question.question_id, passages),
        Strategy::LlmPrompt => llm_answer(question, passages, generator),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::StubModels;

    fn ps(texts: &[&str]) -> Vec<Passage> {
        texts.iter().enumerate().map(|(i, t)| Passage::new("d", format!("P{}", i + 1), *t)).collect()
    }

    #[test]
    fn concat_basic_and_order() {
        let p = ps(&["A must act.", "B shall file."]);
        assert_eq!(passage_concat("q", &p).unwrap().text, "A must act. B shall file.");
        assert_eq!(passage_concat("q", &p[..1]).unwrap().text, "A must act.");
        let rev = vec![p[1].clone(), p[0].clone()];
        let a = passage_concat("q", &rev).unwrap();
        assert_eq!(a.text, "B shall file. A must act.");
        assert_eq!(a.source_refs, vec![PassageRef::new("d", "P2"), PassageRef::new("d", "P1")]);
        assert!(matches!(passage_concat("q", &[]), Err(AnswerError::EmptyInput)));
    }

    #[test]
    fn single_line_cases() {
        assert_eq!(single_line("q", &ps(&["A must act.", "B shall file."])).unwrap().text, "A must act B shall file");
        assert_eq!(single_line("q", &ps(&["no   terminators  here"])).unwrap().text, "no terminators here");
        assert_eq!(single_line("q", &ps(&["Rule 9.2.7 applies."])).unwrap().text, "Rule 9.2.7 applies");
        assert_eq!(strip_terminators("Use e.g. this. Done!"), "Use e.g this Done");
        assert!(matches!(single_line("q", &[]), Err(AnswerError::EmptyInput)));
    }

    #[test]
    fn prompt_substitution_is_single_pass() {
        let t = fill_template("q: {question} c: {context}", &[("question", "{context}"), ("context", "X")]);
        assert_eq!(t, "q: {context} c: X");
    }

    #[test]
    fn echo_generator_returns_context() {
        let q = Question { question_id: "q1".into(), text: "What must A do?".into(), gold_refs: vec![] };
        let p = ps(&["A must act.", "B shall file."]);
        let a = llm_answer(&q, &p, &StubModels).unwrap();
        assert_eq!(a.text, format_context(&p));
        assert_eq!(a.strategy, Strategy::LlmPrompt);
        let empty = llm_answer(&q, &[], &StubModels).unwrap();
        assert_eq!(empty.text, "");
    }
}
