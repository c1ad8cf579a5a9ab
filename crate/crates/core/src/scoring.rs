//! Prototype scoring and selection.
//!
//! A candidate's representativeness is
//!
//! ```text
//! R(s) = alpha(s, eta) + lambda * cos(z, c_y) + gamma * (1 - max_{y' != y} cos(z, c_y'))
//! ```
//!
//! where `z` is the mean-pooled sampler encoding of `s` and `c_y` is the mean
//! of the L2-normalized vectors of label `y`'s anchor pool. Because the
//! centroids are fixed before selection, the sum of `R` over a `K`-subset is
//! maximized by the `K` highest individual scores.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::radius::RadiusEstimate;
use crate::wire::{EmbeddingMatrix, LabelId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceVector {
    pub text: String,
    pub values: Vec<f64>,
}

/// Column means of `e`.
pub fn mean_pool(e: &EmbeddingMatrix) -> Result<Vec<f64>> {
    if e.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let mut out = vec![0.0; e.cols()];
    for row in e.row_iter() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let l = e.rows() as f64;
    out.iter_mut().for_each(|o| *o /= l);
    Ok(out)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; `None` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CentroidTable {
    pub centroids: BTreeMap<LabelId, Vec<f64>>,
    /// Labels whose centroid came out as the zero vector.
    pub degenerate: BTreeSet<LabelId>,
    pub warnings: Vec<String>,
}

impl CentroidTable {
    fn usable(&self, label: &LabelId) -> Result<&[f64]> {
        if self.degenerate.contains(label) {
            return Err(Error::DegenerateCentroid(label.to_string()));
        }
        self.centroids
            .get(label)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::precondition(format!("no centroid for label {label}")))
    }
}

/// Per-label mean of L2-normalized member vectors. The mean is not
/// re-normalized. Zero-norm members are skipped with a warning.
pub fn centroids(pools: &BTreeMap<LabelId, Vec<SentenceVector>>) -> Result<CentroidTable> {
    let mut table = CentroidTable::default();
    for (label, members) in pools {
        let mut sum: Option<Vec<f64>> = None;
        let mut used = 0usize;
        for m in members {
            let n = norm(&m.values);
            if !n.is_finite() {
                return Err(Error::NonFiniteInput);
            }
            if n == 0.0 {
                let msg = format!("label {label}: zero-norm vector for {:?} excluded", m.text);
                warn!("{msg}");
                table.warnings.push(msg);
                continue;
            }
            let acc = sum.get_or_insert_with(|| vec![0.0; m.values.len()]);
            if acc.len() != m.values.len() {
                return Err(Error::precondition(format!("label {label}: mixed vector dimensions")));
            }
            for (a, v) in acc.iter_mut().zip(&m.values) {
                *a += v / n;
            }
            used += 1;
        }
        let Some(mut c) = sum else {
            return Err(Error::EmptyPool(label.to_string()));
        };
        c.iter_mut().for_each(|x| *x /= used as f64);
        if norm(&c) == 0.0 {
            table.warnings.push(format!("label {label}: centroid is the zero vector"));
            table.degenerate.insert(label.clone());
        }
        table.centroids.insert(label.clone(), c);
    }
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub lambda_consistency: f64,
    pub gamma: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            lambda_consistency: 1.0,
            gamma: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub alpha_term: f64,
    pub consistency: f64,
    pub separability: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub total: f64,
}

/// Scores a candidate vector of label `label`.
pub fn score(
    z: &[f64],
    label: &LabelId,
    alpha: Option<f64>,
    table: &CentroidTable,
    weights: ScoreWeights,
) -> Result<ScoreBreakdown> {
    let alpha = alpha.ok_or_else(|| Error::MissingRadius(label.to_string()))?;
    if !(weights.lambda_consistency >= 0.0 && weights.gamma >= 0.0) {
        return Err(Error::precondition("lambda and gamma must be non-negative"));
    }
    let own = table.usable(label)?;
    let consistency = cosine(z, own).ok_or_else(|| Error::DegenerateVector(format!("candidate of {label}")))?;
    let mut max_other: Option<f64> = None;
    for other in table.centroids.keys().filter(|l| *l != label) {
        let c = table.usable(other)?;
        let cos = cosine(z, c).expect("non-zero vectors");
        max_other = Some(max_other.map_or(cos, |m| m.max(cos)));
    }
    let max_other = max_other.ok_or(Error::SingleLabel)?;
    let separability = 1.0 - max_other;
    Ok(ScoreBreakdown {
        alpha_term: alpha,
        consistency,
        separability,
        lambda: weights.lambda_consistency,
        gamma: weights.gamma,
        total: alpha + weights.lambda_consistency * consistency + weights.gamma * separability,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub text: String,
    pub vector: Vec<f64>,
    pub radius: RadiusEstimate,
    pub breakdown: ScoreBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub label: LabelId,
    pub members: Vec<ScoredCandidate>,
    /// Requested K exceeded the candidate count; the whole pool was kept.
    pub truncated: bool,
}

impl PrototypeSet {
    pub fn texts(&self) -> Vec<String> {
        self.members.iter().map(|m| m.text.clone()).collect()
    }

    pub fn total(&self) -> f64 {
        self.members.iter().map(|m| m.breakdown.total).sum()
    }
}

/// Order used for selection: total descending, then text ascending.
pub fn selection_order(a: &ScoredCandidate, b: &ScoredCandidate) -> std::cmp::Ordering {
    b.breakdown
        .total
        .total_cmp(&a.breakdown.total)
        .then_with(|| a.text.cmp(&b.text))
}

pub fn select_top_k(label: LabelId, mut candidates: Vec<ScoredCandidate>, k: usize) -> Result<PrototypeSet> {
    if k == 0 {
        return Err(Error::precondition("K must be at least 1"));
    }
    let truncated = k > candidates.len();
    if truncated {
        warn!(%label, k, pool = candidates.len(), "K exceeds pool size; keeping whole pool");
    }
    candidates.sort_by(selection_order);
    candidates.truncate(k);
    Ok(PrototypeSet {
        label,
        members: candidates,
        truncated,
    })
}
