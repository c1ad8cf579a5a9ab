//! Structural and diversity diagnostics of recovered label distributions.
//!
//! All distances are cosine distances `1 - cos`. Class centroids here are
//! plain means of the member vectors, so every metric is invariant to a
//! global positive rescaling of the embeddings.

pub mod align;
pub mod bertscore;
pub mod bleu;
pub mod projection;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sampler::{sample_distribution, SemanticDistribution};
use crate::scoring::{cosine, mean_pool};
use crate::wire::WireClient;

pub use align::{cross_align, cross_align_vectors, AlignmentRow, AlignmentTable};
pub use bertscore::{bertscore_from_embeddings, bertscore_greedy, BertScore};
pub use bleu::{sentence_bleu, self_bleu};
pub use projection::{export_projection, write_projection_csv, Projection, ProjectionPoint};

/// Member vectors grouped by label.
pub type LabelGroups = BTreeMap<String, Vec<Vec<f64>>>;

pub fn mean_vector(members: &[Vec<f64>]) -> Vec<f64> {
    let d = members.first().map_or(0, Vec::len);
    let mut c = vec![0.0; d];
    for m in members {
        for (a, v) in c.iter_mut().zip(m) {
            *a += v;
        }
    }
    c.iter_mut().for_each(|a| *a /= members.len() as f64);
    c
}

fn cosine_distance(a: &[f64], b: &[f64], what: impl FnOnce() -> String) -> Result<f64> {
    cosine(a, b)
        .map(|c| 1.0 - c)
        .ok_or_else(|| Error::DegenerateVector(what()))
}

pub fn class_centroids(groups: &LabelGroups) -> Result<BTreeMap<String, Vec<f64>>> {
    groups
        .iter()
        .map(|(label, members)| {
            if members.is_empty() {
                return Err(Error::EmptyGroup(label.clone()));
            }
            if members.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteInput);
            }
            Ok((label.clone(), mean_vector(members)))
        })
        .collect()
}

/// Mean distance of each label's members to its centroid, per label.
pub fn intra_per_label(groups: &LabelGroups) -> Result<BTreeMap<String, f64>> {
    let cents = class_centroids(groups)?;
    groups
        .iter()
        .map(|(label, members)| {
            let c = &cents[label];
            let total = members
                .iter()
                .map(|z| cosine_distance(z, c, || format!("member or centroid of {label}")))
                .sum::<Result<f64>>()?;
            Ok((label.clone(), total / members.len() as f64))
        })
        .collect()
}

/// Mean over labels of the mean member-to-centroid cosine distance.
pub fn d_intra(groups: &LabelGroups) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::precondition("no label groups"));
    }
    let per = intra_per_label(groups)?;
    Ok(per.values().sum::<f64>() / per.len() as f64)
}

/// Mean cosine distance over unordered centroid pairs.
pub fn d_inter(groups: &LabelGroups) -> Result<f64> {
    if groups.len() < 2 {
        return Err(Error::SingleLabel);
    }
    let cents: Vec<(String, Vec<f64>)> = class_centroids(groups)?.into_iter().collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..cents.len() {
        for j in i + 1..cents.len() {
            total += cosine_distance(&cents[i].1, &cents[j].1, || {
                format!("centroid of {} or {}", cents[i].0, cents[j].0)
            })?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub encoder_id: String,
    pub d_intra: f64,
    pub d_inter: f64,
    /// `d_inter / d_intra`, absent when `d_intra` is zero.
    pub ratio_r: Option<f64>,
    pub zero_intra: bool,
    pub per_label_intra: BTreeMap<String, f64>,
}

/// Intra distances at or below this are rounding noise around zero.
pub const ZERO_INTRA_TOL: f64 = 1e-12;

pub fn separability_ratio(d_intra: f64, d_inter: f64) -> Option<f64> {
    (d_intra > ZERO_INTRA_TOL).then(|| d_inter / d_intra)
}

pub fn d_inter_and_ratio(groups: &LabelGroups) -> Result<(f64, Option<f64>)> {
    let inter = d_inter(groups)?;
    Ok((inter, separability_ratio(d_intra(groups)?, inter)))
}

pub fn geometry_report(encoder_id: &str, groups: &LabelGroups) -> Result<GeometryReport> {
    let per_label_intra = intra_per_label(groups)?;
    let intra = per_label_intra.values().sum::<f64>() / per_label_intra.len() as f64;
    let inter = d_inter(groups)?;
    Ok(GeometryReport {
        encoder_id: encoder_id.to_string(),
        d_intra: intra,
        d_inter: inter,
        ratio_r: separability_ratio(intra, inter),
        zero_intra: intra <= ZERO_INTRA_TOL,
        per_label_intra,
    })
}

/// Decimal half-up rounding of `x` to `places`, computed on the scaled
/// integer so binary representation error cannot flip a half.
pub fn round_half_up(x: f64, places: u32) -> f64 {
    let scale = 10f64.powi(places as i32);
    let scaled = x * scale;
    // Nudge by a relative ulp-scale slack before flooring.
    (scaled + 0.5 + scaled.abs() * 1e-12).floor() / scale
}

/// Reporting convention for `r`: the ratio is recorded at 4 decimals like the
/// distance columns, and that recorded value is shown at 2 decimals.
pub fn report_ratio(r: f64) -> String {
    let recorded = round_half_up(r, 4);
    format!("{:.2}", round_half_up(recorded, 2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveValue {
    pub precision: f64,
    pub spread: f64,
    pub lambda_spread: f64,
    pub total: f64,
}

/// Mean pairwise cosine distance among vectors; 0 for fewer than two.
pub fn mean_pairwise_distance(vectors: &[Vec<f64>]) -> Result<f64> {
    if vectors.len() < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            total += cosine_distance(&vectors[i], &vectors[j], || format!("prototype {i} or {j}"))?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Precision of `n` samples plus `lambda_spread` times the prototype spread.
pub fn empirical_objective(
    client: &WireClient,
    dist: &SemanticDistribution,
    n: usize,
    lambda_spread: f64,
    stream: &RngStream,
) -> Result<ObjectiveValue> {
    if dist.prototypes.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let samples = sample_distribution(client, dist, n, stream)?;
    let texts: Vec<String> = samples.into_iter().map(|s| s.text).collect();
    let labels = client.par_map(&texts, |_, t| client.classify(t))?;
    let precision = labels.iter().filter(|l| **l == dist.label).count() as f64 / n as f64;
    let vectors = dist
        .prototypes
        .iter()
        .map(|p| mean_pool(&p.embedding))
        .collect::<Result<Vec<_>>>()?;
    let spread = mean_pairwise_distance(&vectors)?;
    Ok(ObjectiveValue {
        precision,
        spread,
        lambda_spread,
        total: precision + lambda_spread * spread,
    })
}

/// Plain mean of per-task averages, e.g. the overall label consistency.
pub fn overall_average(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
