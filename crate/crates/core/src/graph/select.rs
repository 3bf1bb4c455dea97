use crate::corpus::{find_seq, title_tokens, QAExample};
use std::collections::HashSet;

fn lower_question(ex: &QAExample) -> Vec<String> {
    ex.question_tokens.iter().map(|t| t.to_lowercase()).collect()
}

/// Whether paragraph `idx`'s title occurs as a contiguous token run in the
/// question.
pub fn first_hop(ex: &QAExample, idx: usize) -> bool {
    let q = lower_question(ex);
    let t = title_tokens(&ex.paragraphs[idx].title);
    find_seq(&q, &t).is_some()
}

/// Paragraph indices in selection order: title matches first, then
/// paragraphs linked from their sentences, then the rest by the number of
/// distinct question tokens they contain (stable on ties). With
/// `force_gold`, missing gold paragraphs replace the lowest-ranked non-gold
/// picks.
pub fn select_paragraphs(ex: &QAExample, max_paragraphs: usize, force_gold: bool) -> Vec<usize> {
    let n = ex.paragraphs.len();
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut taken = vec![false; n];
    let mut take = |i: usize, order: &mut Vec<usize>| {
        if !taken[i] {
            taken[i] = true;
            order.push(i);
        }
    };

    let hop1: Vec<usize> = (0..n).filter(|&i| first_hop(ex, i)).collect();
    for &i in &hop1 {
        take(i, &mut order);
    }
    for &i in &hop1 {
        for link in &ex.paragraphs[i].hyperlinks {
            if let Some(j) = ex.paragraph_index(&link.target) {
                take(j, &mut order);
            }
        }
    }

    let q: HashSet<String> = lower_question(ex).into_iter().collect();
    let mut rest: Vec<(usize, usize)> = (0..n)
        .filter(|&i| !order.contains(&i))
        .map(|i| {
            let words: HashSet<String> = ex.paragraphs[i]
                .sentences
                .iter()
                .flat_map(|s| s.tokens.iter().map(|t| t.to_lowercase()))
                .collect();
            (i, words.intersection(&q).count())
        })
        .collect();
    rest.sort_by(|a, b| b.1.cmp(&a.1));
    for (i, _) in rest {
        take(i, &mut order);
    }
    order.truncate(max_paragraphs.max(1));

    if force_gold {
        for g in ex.gold_paragraphs() {
            if order.contains(&g) {
                continue;
            }
            match order.iter().rposition(|&i| !ex.is_gold_paragraph(i)) {
                Some(pos) => order[pos] = g,
                None => order.push(g),
            }
        }
    }
    order
}
