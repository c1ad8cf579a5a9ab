use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use serde_json::{json, Value};
use tracing::debug;

use super::canonical::request_key;
use super::ledger::{Ledger, LedgerSnapshot};
use super::transport::{Transport, TransportFailure};
use super::{EmbeddingMatrix, EndpointConfig, GenerateParams, LabelId, Route};
use crate::error::{Error, Result};

/// A named backend: where requests go and how hard to retry.
#[derive(Clone)]
pub struct Service {
    pub name: String,
    pub transport: Arc<dyn Transport>,
    pub config: EndpointConfig,
}

impl Service {
    pub fn new(name: impl Into<String>, transport: Arc<dyn Transport>, config: EndpointConfig) -> Self {
        Self {
            name: name.into(),
            transport,
            config,
        }
    }
}

impl std::fmt::Debug for Service {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Service")
            .field("name", &self.name)
            .field("base_url", &self.config.base_url)
            .finish()
    }
}

/// Role assignment for every backend the engine talks to.
#[derive(Clone, Debug)]
pub struct Backends {
    pub classifier: Service,
    /// Encoder/decoder pair whose latent space the sampler perturbs.
    pub sampler: Service,
    pub generator: Service,
    pub nli: Service,
    /// External sentence encoders used for geometry and alignment, by id.
    pub encoders: BTreeMap<String, Service>,
}

impl Backends {
    /// Serves every role from one transport (e.g. an in-process simworld).
    pub fn uniform(transport: Arc<dyn Transport>, config: EndpointConfig) -> Self {
        let svc = |name: &str| Service::new(name, transport.clone(), config.clone());
        Self {
            classifier: svc("classifier"),
            sampler: svc("sampler"),
            generator: svc("generator"),
            nli: svc("nli"),
            encoders: BTreeMap::new(),
        }
    }

    pub fn with_encoder(mut self, id: &str, service: Service) -> Self {
        self.encoders.insert(id.to_string(), service);
        self
    }
}

/// Budgeted, cached, retrying client over the five protocol routes.
pub struct WireClient {
    backends: Backends,
    ledger: Arc<Ledger>,
    labels: Mutex<BTreeSet<LabelId>>,
    pool: rayon::ThreadPool,
}

impl WireClient {
    pub fn new(backends: Backends, ledger: Arc<Ledger>, max_in_flight: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(max_in_flight.max(1))
            .thread_name(|i| format!("wire-{i}"))
            .build()
            .expect("failed to build dispatch pool");
        Self {
            backends,
            ledger,
            labels: Mutex::new(BTreeSet::new()),
            pool,
        }
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }

    pub fn ledger_snapshot(&self) -> LedgerSnapshot {
        self.ledger.snapshot()
    }

    /// Every distinct label observed from the classifier so far.
    pub fn labels(&self) -> BTreeSet<LabelId> {
        self.labels.lock().expect("label set poisoned").clone()
    }

    /// Maps `f` over `items` on the bounded dispatch pool, preserving order.
    pub fn par_map<T, U, F>(&self, items: &[T], f: F) -> Result<Vec<U>>
    where
        T: Sync,
        U: Send,
        F: Fn(usize, &T) -> Result<U> + Sync + Send,
    {
        self.pool.install(|| {
            items
                .par_iter()
                .enumerate()
                .map(|(i, item)| f(i, item))
                .collect()
        })
    }

    pub fn classify(&self, text: &str) -> Result<LabelId> {
        require_text("classify", "text", text)?;
        let svc = &self.backends.classifier;
        let label = self.call(svc, Route::Classify, json!({ "text": text }), |resp| {
            let label = resp
                .get("label")
                .and_then(Value::as_str)
                .ok_or("missing string field \"label\"")?;
            LabelId::new(label).map_err(|_| "empty label")
        })?;
        self.labels.lock().expect("label set poisoned").insert(label.clone());
        Ok(label)
    }

    /// Encodes with the sampler's encoder.
    pub fn encode(&self, text: &str) -> Result<EmbeddingMatrix> {
        let svc = self.backends.sampler.clone();
        self.encode_on(&svc, text)
    }

    /// Encodes with a named external encoder.
    pub fn encode_with(&self, encoder_id: &str, text: &str) -> Result<EmbeddingMatrix> {
        let svc = self
            .backends
            .encoders
            .get(encoder_id)
            .cloned()
            .ok_or_else(|| Error::Config(format!("unknown encoder id {encoder_id:?}")))?;
        self.encode_on(&svc, text)
    }

    /// Encodes with `encoder_id`, where `"sampler"` names the sampler encoder.
    pub fn encode_by(&self, encoder_id: &str, text: &str) -> Result<EmbeddingMatrix> {
        if encoder_id == SAMPLER_ENCODER && !self.backends.encoders.contains_key(encoder_id) {
            self.encode(text)
        } else {
            self.encode_with(encoder_id, text)
        }
    }

    fn encode_on(&self, svc: &Service, text: &str) -> Result<EmbeddingMatrix> {
        require_text("encode", "text", text)?;
        self.call(svc, Route::Encode, json!({ "text": text }), |resp| {
            let rows = resp.get("embedding").ok_or("missing field \"embedding\"")?;
            let rows: Vec<Vec<f64>> =
                serde_json::from_value(rows.clone()).map_err(|_| "embedding is not a nested number array")?;
            EmbeddingMatrix::from_rows(rows).map_err(|_| "embedding is empty, ragged or non-finite")
        })
    }

    pub fn decode(&self, embedding: &EmbeddingMatrix) -> Result<String> {
        if embedding.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let svc = &self.backends.sampler;
        self.call(svc, Route::Decode, json!({ "embedding": embedding }), |resp| {
            let text = resp
                .get("text")
                .and_then(Value::as_str)
                .ok_or("missing string field \"text\"")?;
            if text.is_empty() {
                return Err("decoded text is empty");
            }
            Ok(text.to_string())
        })
    }

    pub fn generate(&self, prompt: &str, params: &GenerateParams) -> Result<Vec<String>> {
        require_text("generate", "prompt", prompt)?;
        params.validate()?;
        let mut body = json!({
            "prompt": prompt,
            "n": params.n,
            "top_p": params.top_p,
            "temperature": params.temperature,
        });
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        let n = params.n;
        let svc = &self.backends.generator;
        self.call(svc, Route::Generate, body, |resp| {
            let texts: Vec<String> = resp
                .get("texts")
                .cloned()
                .and_then(|v| serde_json::from_value(v).ok())
                .ok_or("missing string array \"texts\"")?;
            if texts.len() != n {
                return Err("texts length differs from n");
            }
            Ok(texts)
        })
    }

    pub fn nli_entail(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        require_text("nli", "premise", premise)?;
        require_text("nli", "hypothesis", hypothesis)?;
        let svc = &self.backends.nli;
        self.call(
            svc,
            Route::Nli,
            json!({ "premise": premise, "hypothesis": hypothesis }),
            |resp| {
                let score = resp
                    .get("entailment")
                    .and_then(Value::as_f64)
                    .ok_or("missing numeric field \"entailment\"")?;
                // Tolerate float noise at the interval ends; anything else is a bad backend.
                const SLACK: f64 = 1e-9;
                if !(score >= -SLACK && score <= 1.0 + SLACK) {
                    return Err("entailment score outside [0, 1]");
                }
                Ok(score.clamp(0.0, 1.0))
            },
        )
    }

    fn call<T>(
        &self,
        svc: &Service,
        route: Route,
        request: Value,
        parse: impl Fn(&Value) -> std::result::Result<T, &'static str>,
    ) -> Result<T> {
        let endpoint = format!("{}:{}", svc.name, route.name());
        let key = request_key(&endpoint, &request);
        if let Some(cached) = self.ledger.lookup(&key) {
            return parse(&cached).map_err(|m| Error::protocol(&endpoint, format!("cached response: {m}")));
        }
        self.ledger.reserve(&endpoint)?;
        let response = dispatch(svc, route, &request, &endpoint)?;
        let parsed = parse(&response).map_err(|m| Error::protocol(&endpoint, m))?;
        self.ledger.record(&endpoint, key, &request, &response)?;
        Ok(parsed)
    }
}

/// Encoder id that resolves to the sampler's own encoder.
pub const SAMPLER_ENCODER: &str = "sampler";

fn require_text(route: &str, field: &str, text: &str) -> Result<()> {
    if text.is_empty() {
        return Err(Error::precondition(format!("{route}: {field} must be non-empty")));
    }
    Ok(())
}

fn dispatch(svc: &Service, route: Route, body: &Value, endpoint: &str) -> Result<Value> {
    let mut attempt: u32 = 0;
    loop {
        match svc.transport.post(route, body) {
            Ok(v) => return Ok(v),
            Err(f) if f.is_retryable() && attempt < svc.config.max_retries => {
                let delay = svc.config.backoff_base_ms.saturating_mul(1u64 << attempt.min(20));
                debug!(endpoint, attempt, delay_ms = delay, "retrying: {}", f.message());
                thread::sleep(Duration::from_millis(delay));
                attempt += 1;
            }
            Err(f @ TransportFailure::Status { code, .. }) if code < 500 => {
                return Err(Error::protocol(endpoint, f.message()));
            }
            Err(f @ TransportFailure::Malformed(_)) => {
                return Err(Error::protocol(endpoint, f.message()));
            }
            Err(f) => {
                return Err(Error::Transport {
                    endpoint: endpoint.to_string(),
                    attempts: attempt + 1,
                    message: f.message(),
                });
            }
        }
    }
}
