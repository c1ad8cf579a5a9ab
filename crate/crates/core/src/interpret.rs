//! Natural-language label descriptions.
//!
//! The generator proposes short phrases from a label's prototypes; each
//! phrase is scored by its entailment hit rate, the fraction of prototypes
//! `s` with `nli(s, phrase) >= tau`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::wire::{GenerateParams, WireClient};

pub const DEFAULT_DESCRIPTION_TEMPLATE: &str =
    "These sentences share one theme. Give {k} short phrases (1–3 words) naming the theme.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposals {
    pub phrases: Vec<String>,
    /// The generator produced fewer than `k` distinct phrases.
    pub duplicate_collapse: bool,
}

/// Prompt: the template with `{k}` filled, then one prototype per line.
pub fn description_prompt(template: &str, k: usize, prototypes: &[String]) -> String {
    let mut p = template.replace("{k}", &k.to_string());
    for s in prototypes {
        p.push('\n');
        p.push_str(s);
    }
    p
}

/// Strips list markers and quotes from one proposed line.
fn clean_phrase(line: &str) -> String {
    let t = line.trim();
    let t = t.trim_start_matches(|c: char| c.is_ascii_digit());
    let t = t.trim_start_matches(['.', ')', '-', '*', '•']).trim();
    t.trim_matches(['"', '\'']).trim().to_string()
}

pub fn propose_descriptions(
    client: &WireClient,
    prototypes: &[String],
    k: usize,
    template: &str,
    stream: &RngStream,
) -> Result<Proposals> {
    if prototypes.is_empty() {
        return Err(Error::precondition("prototype set is empty"));
    }
    if k == 0 {
        return Err(Error::precondition("k must be at least 1"));
    }
    let prompt = description_prompt(template, k, prototypes);
    let texts = client.generate(&prompt, &GenerateParams::with_n(k).seeded(stream.seed_u64()))?;
    let mut seen = HashSet::new();
    let mut phrases = Vec::new();
    for line in texts.iter().flat_map(|t| t.lines()) {
        let p = clean_phrase(line);
        if !p.is_empty() && seen.insert(p.to_lowercase()) {
            phrases.push(p);
        }
    }
    phrases.truncate(k);
    let duplicate_collapse = phrases.len() < k;
    if duplicate_collapse {
        warn!(k, distinct = phrases.len(), "fewer distinct description phrases than requested");
    }
    Ok(Proposals {
        phrases,
        duplicate_collapse,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptionCandidate {
    pub text: String,
    pub hit_rate: f64,
    /// Entailment score per prototype, in prototype order.
    pub scores: Vec<f64>,
}

pub fn hit_rate(scores: &[f64], tau: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().filter(|&&s| s >= tau).count() as f64 / scores.len() as f64
}

/// Hit rate descending, then text ascending.
pub fn rank(candidates: &mut [DescriptionCandidate]) {
    candidates.sort_by(|a, b| b.hit_rate.total_cmp(&a.hit_rate).then_with(|| a.text.cmp(&b.text)));
}

pub fn hit_rate_and_rank(
    client: &WireClient,
    candidates: &[String],
    prototypes: &[String],
    tau: f64,
) -> Result<Vec<DescriptionCandidate>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::precondition("tau must lie in [0, 1]"));
    }
    if prototypes.is_empty() {
        return Err(Error::precondition("prototype set is empty"));
    }
    let pairs: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..prototypes.len()).map(move |p| (c, p)))
        .collect();
    let scores = client.par_map(&pairs, |_, &(c, p)| client.nli_entail(&prototypes[p], &candidates[c]))?;
    let mut out: Vec<DescriptionCandidate> = scores
        .chunks(prototypes.len())
        .zip(candidates)
        .map(|(s, text)| DescriptionCandidate {
            text: text.clone(),
            hit_rate: hit_rate(s, tau),
            scores: s.to_vec(),
        })
        .collect();
    rank(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counting() {
        assert_eq!(hit_rate(&[0.9, 0.1, 0.6, 0.59, 0.0], 0.6), 0.4);
        assert_eq!(hit_rate(&[0.0, 0.3], 0.0), 1.0);
        assert_eq!(hit_rate(&[], 0.5), 0.0);
    }

    #[test]
    fn phrase_cleanup() {
        assert_eq!(clean_phrase("1. Bright weather"), "Bright weather");
        assert_eq!(clean_phrase("- \"sunshine\""), "sunshine");
        assert_eq!(clean_phrase("  plain "), "plain");
    }

    #[test]
    fn ranking_ties_by_text() {
        let c = |t: &str, h: f64| DescriptionCandidate { text: t.into(), hit_rate: h, scores: vec![] };
        let mut v = vec![c("b", 0.5), c("a", 0.5), c("z", 0.9)];
        rank(&mut v);
        let order: Vec<&str> = v.iter().map(|d| d.text.as_str()).collect();
        assert_eq!(order, ["z", "a", "b"]);
    }

    proptest! {
        #[test]
        fn monotone_in_tau(scores in prop::collection::vec(0.0f64..=1.0, 1..30), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(hit_rate(&scores, hi) <= hit_rate(&scores, lo));
        }

        #[test]
        fn order_invariant(mut scores in prop::collection::vec(0.0f64..=1.0, 1..30), tau in 0.0f64..=1.0) {
            let h = hit_rate(&scores, tau);
            scores.reverse();
            prop_assert_eq!(h, hit_rate(&scores, tau));
        }
    }
}
