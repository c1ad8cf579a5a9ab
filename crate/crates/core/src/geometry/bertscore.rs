//! Greedy-matching BERTScore without idf weighting.
//!
//! Token rows of both encodings are L2-normalized; each candidate row is
//! matched to its most similar reference row for precision and vice versa
//! for recall.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::norm;
use crate::wire::{EmbeddingMatrix, WireClient};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn unit_rows(e: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
    e.row_iter()
        .map(|r| {
            let n = norm(r);
            if !n.is_finite() {
                return Err(Error::NonFiniteInput);
            }
            if n == 0.0 {
                return Err(Error::DegenerateVector("zero token row".into()));
            }
            Ok(r.iter().map(|v| v / n).collect())
        })
        .collect()
}

fn greedy(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|a| {
            to.iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    total / from.len() as f64
}

pub fn bertscore_from_embeddings(candidate: &EmbeddingMatrix, reference: &EmbeddingMatrix) -> Result<BertScore> {
    if candidate.cols() != reference.cols() {
        return Err(Error::precondition("token widths differ"));
    }
    let (c, r) = (unit_rows(candidate)?, unit_rows(reference)?);
    let precision = greedy(&c, &r).clamp(-1.0, 1.0);
    let recall = greedy(&r, &c).clamp(-1.0, 1.0);
    let f1 = if precision + recall > 0.0 {
        (2.0 * precision * recall / (precision + recall)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(BertScore { precision, recall, f1 })
}

/// F1 of `candidate` against `reference`, both encoded by `encoder`.
pub fn bertscore_greedy(client: &WireClient, encoder: &str, candidate: &str, reference: &str) -> Result<BertScore> {
    let c = client.encode_by(encoder, candidate)?;
    let r = client.encode_by(encoder, reference)?;
    bertscore_from_embeddings(&c, &r)
}
