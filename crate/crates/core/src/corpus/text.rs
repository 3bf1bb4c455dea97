//! Tokenisation and answer normalisation.

/// Splits on whitespace and detaches every non-alphanumeric character as a
/// token of its own. Returns `(token, byte_start, byte_end)` triples.
pub fn tokenize_with_offsets(text: &str) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            out.push((text[s..i].to_string(), s, i));
        }
        if !ch.is_whitespace() {
            let e = i + ch.len_utf8();
            out.push((text[i..e].to_string(), i, e));
        }
    }
    if let Some(s) = word_start {
        out.push((text[s..].to_string(), s, text.len()));
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text)
        .into_iter()
        .map(|(t, _, _)| t)
        .collect()
}

/// Answer normalisation with the official evaluator's semantics: lowercase,
/// delete ASCII punctuation, blank out the articles `a`/`an`/`the` as whole
/// words, then split on whitespace.
pub fn normalize_answer(s: &str) -> Vec<String> {
    let lowered = s.to_lowercase();
    let no_punc: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    let no_articles = remove_articles(&no_punc);
    no_articles.split_whitespace().map(str::to_string).collect()
}

/// `normalize_answer` joined back with single spaces.
pub fn normalize_text(s: &str) -> String {
    normalize_answer(s).join(" ")
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

// Equivalent of re.sub(r"\b(a|an|the)\b", " ", s).
fn remove_articles(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if matches!(word.as_str(), "a" | "an" | "the") {
            out.push(' ');
        } else {
            out.push_str(word);
        }
        word.clear();
    };
    for c in s.chars() {
        if is_word_char(c) {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}
