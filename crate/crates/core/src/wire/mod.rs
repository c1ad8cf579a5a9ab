//! Backend wire protocol and the budgeted, cached query client.
//!
//! Five JSON-over-HTTP routes make up the protocol:
//!
//! | route          | request                                              | response                     |
//! |----------------|------------------------------------------------------|------------------------------|
//! | `/v1/classify` | `{"text"}`                                           | `{"label"}`                  |
//! | `/v1/encode`   | `{"text"}`                                           | `{"embedding": [[f]]}`       |
//! | `/v1/decode`   | `{"embedding": [[f]]}`                               | `{"text"}`                   |
//! | `/v1/generate` | `{"prompt", "n", "top_p", "temperature", "seed"?}`   | `{"texts": [s]}`             |
//! | `/v1/nli`      | `{"premise", "hypothesis"}`                          | `{"entailment": f}`          |
//!
//! Errors are non-2xx responses carrying `{"error": s}`.

pub mod canonical;
pub mod client;
pub mod conformance;
pub mod ledger;
pub mod transport;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use client::{Backends, Service, WireClient, SAMPLER_ENCODER};
pub use ledger::{CacheRecord, Ledger};
pub use transport::{HttpTransport, Transport, TransportFailure};

/// A classifier output label. Compared byte-for-byte, never normalized.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(String);

impl LabelId {
    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if value.is_empty() {
            return Err(Error::precondition("label must be non-empty"));
        }
        Ok(Self(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LabelId {
    /// Panics on the empty string; use [`LabelId::new`] for untrusted input.
    fn from(value: &str) -> Self {
        Self::new(value).expect("empty label")
    }
}

/// Row-major `rows x cols` latent code. Serialized as a nested array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::precondition("embedding must have at least one row and column"));
        }
        if rows * cols != data.len() {
            return Err(Error::precondition(format!(
                "embedding shape {rows}x{cols} does not match {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::precondition("ragged embedding rows"));
        }
        let n = rows.len();
        Self::new(n, cols, rows.into_iter().flatten().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.row_iter().map(<[f64]>::to_vec).collect()
    }

    /// Builds a same-shape matrix from new values without re-validating shape.
    pub(crate) fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.rows, self.cols, data)
    }
}

impl TryFrom<Vec<Vec<f64>>> for EmbeddingMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows)
    }
}

impl From<EmbeddingMatrix> for Vec<Vec<f64>> {
    fn from(m: EmbeddingMatrix) -> Self {
        m.to_rows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Classify,
    Encode,
    Decode,
    Generate,
    Nli,
}

impl Route {
    pub const ALL: [Route; 5] = [
        Route::Classify,
        Route::Encode,
        Route::Decode,
        Route::Generate,
        Route::Nli,
    ];

    pub fn path(self) -> &'static str {
        match self {
            Route::Classify => "/v1/classify",
            Route::Encode => "/v1/encode",
            Route::Decode => "/v1/decode",
            Route::Generate => "/v1/generate",
            Route::Nli => "/v1/nli",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Route::Classify => "classify",
            Route::Encode => "encode",
            Route::Decode => "decode",
            Route::Generate => "generate",
            Route::Nli => "nli",
        }
    }
}

/// Connection settings for one backend service.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_base_ms() -> u64 {
    200
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_url.is_empty() {
            return Err(Error::Config("endpoint base_url is empty".into()));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Config("timeout_ms must be positive".into()));
        }
        if self.backoff_base_ms == 0 {
            return Err(Error::Config("backoff_base_ms must be positive".into()));
        }
        Ok(())
    }
}

/// Decoding parameters for `/v1/generate`. Defaults are nucleus p = 0.9 and
/// temperature 1.0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateParams {
    pub n: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl Default for GenerateParams {
    fn default() -> Self {
        Self {
            n: 1,
            top_p: 0.9,
            temperature: 1.0,
            seed: None,
        }
    }
}

impl GenerateParams {
    pub fn with_n(n: usize) -> Self {
        Self {
            n,
            ..Self::default()
        }
    }

    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::precondition("generate: n must be at least 1"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::precondition("generate: top_p must lie in (0, 1]"));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::precondition("generate: temperature must be finite and >= 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generate_defaults() {
        let p = GenerateParams::default();
        assert_eq!(p.top_p, 0.9);
        assert_eq!(p.temperature, 1.0);
        assert!(GenerateParams::with_n(0).validate().is_err());
    }

    #[test]
    fn ragged_rows_rejected() {
        let err = EmbeddingMatrix::from_rows(vec![vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn non_finite_rejected() {
        let err = EmbeddingMatrix::new(1, 2, vec![f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteInput));
    }

    #[test]
    fn matrix_serializes_as_nested_rows() {
        let m = EmbeddingMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, "[[1.0,2.0],[3.0,4.0]]");
        let back: EmbeddingMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn empty_label_rejected() {
        assert!(LabelId::new("").is_err());
        assert_ne!(LabelId::from("Pos"), LabelId::from("pos"));
    }
}
