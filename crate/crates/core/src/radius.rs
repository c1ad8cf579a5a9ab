//! Sampling-radius estimation.
//!
//! The radius of a sentence `s` at confidence `eta` is the largest noise
//! scale under which perturbed-and-decoded variants of `s` keep the
//! reference label with probability at least `eta`. It is found by bisection
//! on `[alpha_min, alpha_max]`, each probe estimating the match rate from `m`
//! Monte-Carlo draws. The reference label is the label of the noiseless
//! round trip `Dec(Enc(s))`; the label of `s` itself is recorded alongside.

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::sampler::perturb;
use crate::wire::{EmbeddingMatrix, LabelId, WireClient};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadiusConfig {
    pub eta: f64,
    pub m: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub eps: f64,
}

impl Default for RadiusConfig {
    fn default() -> Self {
        Self {
            eta: 0.7,
            m: 100,
            alpha_min: 0.0,
            alpha_max: 10.0,
            eps: 1e-3,
        }
    }
}

impl RadiusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::precondition("eta must lie in (0, 1)"));
        }
        if self.m == 0 {
            return Err(Error::precondition("m must be at least 1"));
        }
        if !(self.alpha_min.is_finite() && self.alpha_max.is_finite()) || self.alpha_min < 0.0 {
            return Err(Error::precondition("alpha bounds must be finite and non-negative"));
        }
        if self.alpha_min >= self.alpha_max {
            return Err(Error::precondition("alpha_min must be below alpha_max"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::precondition("eps must be positive"));
        }
        Ok(())
    }

    /// Number of bisection probes: `ceil(log2((alpha_max - alpha_min) / eps))`.
    pub fn probe_count(&self) -> usize {
        let mut n = 0;
        let mut width = self.alpha_max - self.alpha_min;
        while width > self.eps {
            width /= 2.0;
            n += 1;
        }
        n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub alpha: f64,
    pub match_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusEstimate {
    pub alpha_star: f64,
    pub eta: f64,
    pub m: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub eps: f64,
    pub trace: Vec<Probe>,
    /// Label of `Dec(Enc(s))`, the one match rates are measured against.
    pub reference_label: LabelId,
    /// Label of `s` itself.
    pub source_label: LabelId,
}

impl RadiusEstimate {
    pub fn labels_agree(&self) -> bool {
        self.reference_label == self.source_label
    }
}

/// Bisection driver. `rate(probe_index, alpha)` must return the match rate at
/// `alpha`; `low` moves up whenever the rate reaches `eta`. Returns `low`.
pub fn bisect(
    config: &RadiusConfig,
    mut rate: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<(f64, Vec<Probe>)> {
    config.validate()?;
    let (mut low, mut high) = (config.alpha_min, config.alpha_max);
    let mut trace = Vec::with_capacity(config.probe_count());
    while high - low > config.eps {
        let alpha = 0.5 * (low + high);
        let r = rate(trace.len(), alpha)?;
        trace.push(Probe { alpha, match_rate: r });
        if r >= config.eta {
            low = alpha;
        } else {
            high = alpha;
        }
    }
    Ok((low, trace))
}

/// Fraction of `m` noisy round trips of `embedding` classified as `reference`.
/// Draw `j` uses stream `stream.child("draw", j)`.
pub fn match_rate_against(
    client: &WireClient,
    embedding: &EmbeddingMatrix,
    reference: &LabelId,
    alpha: f64,
    m: usize,
    stream: &RngStream,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::precondition("m must be at least 1"));
    }
    let draws: Vec<u64> = (0..m as u64).collect();
    let hits = client.par_map(&draws, |_, &j| {
        let noisy = perturb(embedding, alpha, &stream.child("draw", j))?;
        let text = client.decode(&noisy)?;
        Ok(client.classify(&text)? == *reference)
    })?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / m as f64)
}

/// Match rate of `s` at `alpha`, against the label of its noiseless round trip.
pub fn match_rate(client: &WireClient, s: &str, alpha: f64, m: usize, stream: &RngStream) -> Result<f64> {
    let e = client.encode(s)?;
    let reference = client.classify(&client.decode(&e)?)?;
    match_rate_against(client, &e, &reference, alpha, m, stream)
}

pub fn estimate_alpha(
    client: &WireClient,
    s: &str,
    config: &RadiusConfig,
    stream: &RngStream,
) -> Result<RadiusEstimate> {
    config.validate()?;
    let e = client.encode(s)?;
    let reference_label = client.classify(&client.decode(&e)?)?;
    let source_label = client.classify(s)?;
    if reference_label != source_label {
        warn!(
            sentence = s,
            reference = %reference_label,
            source = %source_label,
            "round-trip label differs from source label"
        );
    }
    let (alpha_star, trace) = bisect(config, |probe, alpha| {
        match_rate_against(
            client,
            &e,
            &reference_label,
            alpha,
            config.m,
            &stream.child("probe", probe as u64),
        )
    })?;
    Ok(RadiusEstimate {
        alpha_star,
        eta: config.eta,
        m: config.m,
        alpha_min: config.alpha_min,
        alpha_max: config.alpha_max,
        eps: config.eps,
        trace,
        reference_label,
        source_label,
    })
}
