//! Answer scoring: exact match and Levenshtein similarity.
//!
//! Responses are judged on their *answer span*: the tokens before the first
//! EOS. Everything after a stray EOS is ignored, and a response that never
//! emitted EOS is judged whole.

use crate::model::TokenId;
use crate::vocab::EOS;

/// Tokens up to (excluding) the first EOS; the whole slice if there is none.
pub fn answer_span(response: &[TokenId]) -> &[TokenId] {
    match response.iter().position(|&t| t == EOS) {
        Some(idx) => &response[..idx],
        None => response,
    }
}

/// 1.0 iff the answer spans of `a` and `b` match token-for-token.
pub fn score_exact(a: &[TokenId], b: &[TokenId]) -> f64 {
    if answer_span(a) == answer_span(b) {
        1.0
    } else {
        0.0
    }
}

/// Token-level Levenshtein distance (unit insert/delete/substitute costs).
pub fn levenshtein(a: &[TokenId], b: &[TokenId]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    // Single-row DP: prev[j] = distance(a[..i], b[..j]) from the last pass.
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, &ta) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &tb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ta != tb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// 1 minus the length-normalized Levenshtein distance between the answer
/// spans: 1.0 for identical spans, 0.0 for totally dissimilar ones.
/// Symmetric in its arguments; two empty spans count as identical.
pub fn score_similarity(a: &[TokenId], b: &[TokenId]) -> f64 {
    let (a, b) = (answer_span(a), answer_span(b));
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

/// Exact score plus similarity score, in [0, 2]. Used to pick the best model
/// per instruction when labeling router training data.
pub fn score_combined(response: &[TokenId], gold: &[TokenId]) -> f64 {
    score_exact(response, gold) + score_similarity(response, gold)
}
