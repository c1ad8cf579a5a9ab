//! Latent-space neighborhood sampling.
//!
//! A variant of sentence `x` is `Dec(Enc(x) + delta)` with `delta` drawn iid
//! `N(0, alpha^2)` per coordinate of the `l x d` encoding. Noise is generated
//! here, between the encode and decode calls, so the seed and scale stay in
//! the engine.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::wire::{EmbeddingMatrix, LabelId, WireClient};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub text: String,
    pub embedding: EmbeddingMatrix,
    pub alpha: f64,
}

/// Prototypes with their radii: the empirical distribution of one label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticDistribution {
    pub label: LabelId,
    pub prototypes: Vec<Prototype>,
}

impl SemanticDistribution {
    pub fn new(label: LabelId, prototypes: Vec<Prototype>) -> Result<Self> {
        if let Some(p) = prototypes.iter().find(|p| !(p.alpha.is_finite() && p.alpha >= 0.0)) {
            return Err(Error::precondition(format!(
                "prototype {:?} has invalid alpha {}",
                p.text, p.alpha
            )));
        }
        Ok(Self { label, prototypes })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledSentence {
    pub prototype: usize,
    pub text: String,
}

/// Adds iid Gaussian noise of standard deviation `alpha` to every coordinate.
pub fn perturb(e: &EmbeddingMatrix, alpha: f64, stream: &RngStream) -> Result<EmbeddingMatrix> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::precondition(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    if e.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if alpha == 0.0 {
        return Ok(e.clone());
    }
    let mut rng = stream.rng();
    let data = e
        .data()
        .iter()
        .map(|v| v + alpha * rng.sample::<f64, _>(StandardNormal))
        .collect();
    e.with_data(data)
}

pub fn sample_variant(client: &WireClient, x: &str, alpha: f64, stream: &RngStream) -> Result<String> {
    let e = client.encode(x)?;
    client.decode(&perturb(&e, alpha, stream)?)
}

/// Draws `n` sentences: for draw `i` a prototype is picked uniformly with
/// stream `("pick", i)` and perturbed at its own alpha with `("noise", i)`.
pub fn sample_distribution(
    client: &WireClient,
    dist: &SemanticDistribution,
    n: usize,
    stream: &RngStream,
) -> Result<Vec<SampledSentence>> {
    if dist.prototypes.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    if n == 0 {
        return Err(Error::precondition("sample count must be at least 1"));
    }
    let picks = pick_prototypes(dist.prototypes.len(), n, stream);
    client.par_map(&picks, |i, &k| {
        let proto = &dist.prototypes[k];
        let noisy = perturb(&proto.embedding, proto.alpha, &stream.child("noise", i as u64))?;
        Ok(SampledSentence {
            prototype: k,
            text: client.decode(&noisy)?,
        })
    })
}

/// Uniform prototype indices for `n` draws.
pub fn pick_prototypes(count: usize, n: usize, stream: &RngStream) -> Vec<usize> {
    (0..n)
        .map(|i| stream.child("pick", i as u64).rng().random_range(0..count))
        .collect()
}
