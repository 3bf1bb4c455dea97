use crate::corpus::{normalize_text, title_tokens, QAExample};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

/// Capitalised words that never start or continue an entity on their own.
const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "but", "by", "did", "do", "does", "for", "from", "had",
    "has", "have", "he", "her", "his", "how", "i", "if", "in", "is", "it", "its", "of", "on",
    "or", "she", "that", "the", "their", "these", "they", "this", "those", "to", "was", "we",
    "were", "what", "when", "where", "which", "who", "whom", "whose", "why", "with",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    /// Token range within the sentence (or question).
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub norm: String,
}

fn is_capitalized(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_uppercase)
        && !FUNCTION_WORDS.contains(&tok.to_lowercase().as_str())
}

/// Maximal runs of capitalised tokens plus occurrences of any of `titles`,
/// deduplicated by normalised text and ordered by position.
fn spans_in(tokens: &[String], titles: &[Vec<String>]) -> Vec<EntitySpan> {
    let mut raw: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        if is_capitalized(&tokens[i]) {
            let s = i;
            while i < tokens.len() && is_capitalized(&tokens[i]) {
                i += 1;
            }
            raw.push((s, i));
        } else {
            i += 1;
        }
    }
    let lowered: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
    for t in titles.iter().filter(|t| !t.is_empty()) {
        for s in 0..lowered.len().saturating_sub(t.len() - 1) {
            if lowered[s..s + t.len()] == t[..] {
                raw.push((s, s + t.len()));
            }
        }
    }
    raw.sort();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (s, e) in raw {
        let text = tokens[s..e].join(" ");
        let norm = normalize_text(&text);
        if norm.is_empty() || !seen.insert(norm.clone()) {
            continue;
        }
        out.push(EntitySpan {
            start: s,
            end: e,
            text,
            norm,
        });
    }
    out
}

fn selected_titles(ex: &QAExample, selected: &[usize]) -> Vec<Vec<String>> {
    selected
        .iter()
        .map(|&p| title_tokens(&ex.paragraphs[p].title))
        .collect()
}

/// Entity spans for each sentence of each selected paragraph, in selection
/// order: `out[k][s]` lists the entities of sentence `s` of `selected[k]`.
pub fn extract_entities(ex: &QAExample, selected: &[usize]) -> Vec<Vec<Vec<EntitySpan>>> {
    let titles = selected_titles(ex, selected);
    selected
        .iter()
        .map(|&p| {
            ex.paragraphs[p]
                .sentences
                .iter()
                .map(|s| spans_in(&s.tokens, &titles))
                .collect()
        })
        .collect()
}

/// Normalised entity strings of the question.
pub fn question_entities(ex: &QAExample, selected: &[usize]) -> Vec<String> {
    spans_in(&ex.question_tokens, &selected_titles(ex, selected))
        .into_iter()
        .map(|e| e.norm)
        .collect()
}
