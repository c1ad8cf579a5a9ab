//! Cross-model label alignment.
//!
//! Each label is represented by the plain mean of its prototype vectors, all
//! produced by one shared encoder. A target label is paired with the
//! reference label of highest cosine similarity; ties go to the
//! lexicographically smaller reference label.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mean_vector, LabelGroups};
use crate::scoring::{cosine, mean_pool};
use crate::wire::WireClient;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub target_label: String,
    pub reference_model: String,
    pub closest_label: String,
    pub similarity: f64,
    pub all: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTable {
    pub encoder_id: String,
    pub rows: Vec<AlignmentRow>,
}

fn label_centroids(groups: &LabelGroups, side: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    if groups.is_empty() {
        return Err(Error::EmptySet(format!("{side}: no labels")));
    }
    groups
        .iter()
        .map(|(label, members)| {
            if members.is_empty() {
                return Err(Error::EmptySet(format!("{side}: label {label}")));
            }
            Ok((label.clone(), mean_vector(members)))
        })
        .collect()
}

/// Alignment over already-embedded prototype vectors.
pub fn cross_align_vectors(
    encoder_id: &str,
    target: &LabelGroups,
    references: &BTreeMap<String, LabelGroups>,
) -> Result<AlignmentTable> {
    let targets = label_centroids(target, "target")?;
    let mut rows = Vec::new();
    for (model, groups) in references {
        let refs = label_centroids(groups, model)?;
        for (t_label, t_c) in &targets {
            let mut all = BTreeMap::new();
            let mut best: Option<(&String, f64)> = None;
            for (r_label, r_c) in &refs {
                let sim = cosine(t_c, r_c)
                    .ok_or_else(|| Error::DegenerateVector(format!("centroid of {t_label} or {model}/{r_label}")))?;
                all.insert(r_label.clone(), sim);
                // Iteration is in label order, so strict > keeps the smaller label on ties.
                if best.is_none_or(|(_, s)| sim > s) {
                    best = Some((r_label, sim));
                }
            }
            let (closest, similarity) = best.expect("non-empty reference set");
            rows.push(AlignmentRow {
                target_label: t_label.clone(),
                reference_model: model.clone(),
                closest_label: closest.clone(),
                similarity,
                all,
            });
        }
    }
    Ok(AlignmentTable {
        encoder_id: encoder_id.to_string(),
        rows,
    })
}

fn embed(client: &WireClient, encoder: &str, sets: &BTreeMap<String, Vec<String>>) -> Result<LabelGroups> {
    sets.iter()
        .map(|(label, texts)| {
            let vs = client.par_map(texts, |_, t| mean_pool(&client.encode_by(encoder, t)?))?;
            Ok((label.clone(), vs))
        })
        .collect()
}

/// Embeds target and reference prototype texts with `encoder` and aligns them.
pub fn cross_align(
    client: &WireClient,
    encoder: &str,
    target: &BTreeMap<String, Vec<String>>,
    references: &BTreeMap<String, BTreeMap<String, Vec<String>>>,
) -> Result<AlignmentTable> {
    let t = embed(client, encoder, target)?;
    let r = references
        .iter()
        .map(|(model, sets)| Ok((model.clone(), embed(client, encoder, sets)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    cross_align_vectors(encoder, &t, &r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(items: &[(&str, &[&[f64]])]) -> LabelGroups {
        items
            .iter()
            .map(|(l, vs)| (l.to_string(), vs.iter().map(|v| v.to_vec()).collect()))
            .collect()
    }

    #[test]
    fn self_alignment_is_identity() {
        let t = g(&[("a", &[&[1.0, 0.1]]), ("b", &[&[0.1, 1.0], &[0.0, 2.0]])]);
        let refs = BTreeMap::from([("same".to_string(), t.clone())]);
        let table = cross_align_vectors("enc", &t, &refs).unwrap();
        for row in &table.rows {
            assert_eq!(row.closest_label, row.target_label);
            assert!((row.similarity - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orthogonal_tie_goes_to_smaller_label() {
        let t = g(&[("x", &[&[0.0, 0.0, 1.0]])]);
        let refs = BTreeMap::from([("m".to_string(), g(&[("q", &[&[1.0, 0.0, 0.0]]), ("p", &[&[0.0, 1.0, 0.0]])]))]);
        let row = &cross_align_vectors("enc", &t, &refs).unwrap().rows[0];
        assert_eq!(row.closest_label, "p");
        assert_eq!(row.similarity, 0.0);
    }

    #[test]
    fn empty_sets_rejected() {
        let t = g(&[("x", &[])]);
        let refs = BTreeMap::from([("m".to_string(), g(&[("p", &[&[1.0]])]))]);
        assert!(matches!(cross_align_vectors("e", &t, &refs), Err(Error::EmptySet(_))));
    }
}
