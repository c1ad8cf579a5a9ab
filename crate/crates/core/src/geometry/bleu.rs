//! Sentence BLEU and Self-BLEU.
//!
//! BLEU-4 with uniform weights over the n-gram orders the hypothesis actually
//! has (`min(4, len)`), clipped counts against the max count in any
//! reference, the closest-reference brevity penalty, and epsilon smoothing:
//! an order with zero clipped matches contributes `EPSILON / total` instead
//! of zero.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;
pub const EPSILON: f64 = 1e-9;

pub fn tokenize(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

pub fn sentence_bleu(hypothesis: &str, references: &[&str]) -> f64 {
    let hyp = tokenize(hypothesis);
    let refs: Vec<Vec<&str>> = references.iter().map(|r| tokenize(r)).collect();
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let orders = MAX_ORDER.min(hyp.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let hyp_counts = ngram_counts(&hyp, n);
        let mut max_ref: HashMap<&Vec<&str>, usize> = HashMap::new();
        for r in &refs {
            let rc = ngram_counts(r, n);
            for g in hyp_counts.keys() {
                if let Some(c) = rc.get(g) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(*c);
                }
            }
        }
        let clipped: usize = hyp_counts
            .iter()
            .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let total = hyp.len() + 1 - n;
        let p = if clipped == 0 {
            EPSILON / total as f64
        } else {
            clipped as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let c = hyp.len();
    // Closest reference length, ties toward the shorter one.
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|len| (len.abs_diff(c), *len))
        .expect("non-empty refs");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / orders as f64).exp()
}

/// Mean BLEU of each sentence against all the others. Duplicates are kept.
pub fn self_bleu(sentences: &[String]) -> Result<f64> {
    if sentences.len() < 2 {
        return Err(Error::TooFewSentences);
    }
    let total: f64 = (0..sentences.len())
        .map(|i| {
            let refs: Vec<&str> = sentences
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, s)| s.as_str())
                .collect();
            sentence_bleu(&sentences[i], &refs)
        })
        .sum();
    Ok((total / sentences.len() as f64).clamp(0.0, 1.0))
}
