use super::text::{normalize_answer, normalize_text, tokenize};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Bridge,
    Comparison,
}

impl std::str::FromStr for QuestionType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bridge" => Ok(QuestionType::Bridge),
            "comparison" => Ok(QuestionType::Comparison),
            other => Err(Error::UnknownQuestionType(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Sentence { text, tokens }
    }
}

/// A link from sentence `sentence` of a paragraph to the paragraph titled
/// `target`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperlink {
    pub sentence: usize,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub title: String,
    pub sentences: Vec<Sentence>,
    #[serde(default)]
    pub hyperlinks: Vec<Hyperlink>,
}

/// `(paragraph title, sentence index)`; serialised as a two-element array.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SupportingFact(pub String, pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub question: String,
    pub question_tokens: Vec<String>,
    pub paragraphs: Vec<Paragraph>,
    pub answer: String,
    pub supporting_facts: Vec<SupportingFact>,
    #[serde(rename = "type")]
    pub qtype: QuestionType,
}

impl QAExample {
    pub fn paragraph_index(&self, title: &str) -> Option<usize> {
        self.paragraphs.iter().position(|p| p.title == title)
    }

    pub fn is_gold_paragraph(&self, idx: usize) -> bool {
        let title = &self.paragraphs[idx].title;
        self.supporting_facts.iter().any(|sf| &sf.0 == title)
    }

    pub fn is_support(&self, title: &str, sentence: usize) -> bool {
        self.supporting_facts
            .iter()
            .any(|sf| sf.0 == title && sf.1 == sentence)
    }

    pub fn gold_paragraphs(&self) -> Vec<usize> {
        (0..self.paragraphs.len())
            .filter(|&i| self.is_gold_paragraph(i))
            .collect()
    }

    /// `"yes"`/`"no"` answers after normalisation.
    pub fn yes_no(&self) -> Option<bool> {
        match normalize_text(&self.answer).as_str() {
            "yes" => Some(true),
            "no" => Some(false),
            _ => None,
        }
    }

    pub fn normalized_answer(&self) -> Vec<String> {
        normalize_answer(&self.answer)
    }

    /// Checks the structural invariants: non-empty titles, and supporting
    /// facts that point at existing sentences.
    pub fn validate(&self) -> Result<()> {
        if self.paragraphs.is_empty() {
            return Err(Error::NoParagraphs {
                id: self.id.clone(),
            });
        }
        for p in &self.paragraphs {
            if p.title.is_empty() {
                return Err(missing(&self.id, "context.title"));
            }
        }
        for sf in &self.supporting_facts {
            let ok = self
                .paragraph_index(&sf.0)
                .is_some_and(|i| sf.1 < self.paragraphs[i].sentences.len());
            if !ok {
                return Err(missing(
                    &self.id,
                    &format!("supporting_facts[{}, {}]", sf.0, sf.1),
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn missing(id: &str, field: &str) -> Error {
    Error::MissingField {
        id: id.to_string(),
        field: field.to_string(),
    }
}
