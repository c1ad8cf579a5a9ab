//! Deterministic synthetic backends with analytic decision geometry.
//!
//! A world speaks the full wire protocol over "point sentences" of the form
//! `p v1 ... vd`. Encoding parses a point sentence into a `1 x d` matrix,
//! decoding formats the row-mean of a matrix with `q` decimals, and the
//! classifier applies one of four closed-form region rules. Because the
//! text/embedding map is exact, every pipeline stage has a brute-force or
//! analytic oracle.
//!
//! The generator recognises three prompt shapes, checked in this order:
//!
//! 1. the prompt contains the world's `description_marker` (default
//!    `"theme"`): it returns keyword phrases for the majority region of the
//!    point sentences found in the prompt;
//! 2. the prompt contains a point sentence: it returns seeded jitter around
//!    that point (paraphrasing);
//! 3. otherwise: it looks up a lexicon word in the prompt and returns seeded
//!    jitter around the word's anchor point. Unknown words get an anchor
//!    derived from a hash of the word.
//!
//! The NLI rule scores 1.0 when premise and hypothesis are identical, or when
//! the premise is a point sentence and the hypothesis mentions one of the
//! keywords of the premise's region label. Everything else scores 0.0.

pub mod oracle;
pub mod server;

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::wire::{Backends, EndpointConfig, Ledger, Route, Transport, TransportFailure, WireClient};
use std::sync::Arc;

pub use oracle::{normal_cdf, normal_quantile, oracle_radius};
pub use server::{serve_sim, SimServer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Region {
    /// `labels[1]` where `normal . x > offset`, `labels[0]` where it is below.
    Halfspace {
        normal: Vec<f64>,
        offset: f64,
        labels: [String; 2],
    },
    NearestCentroid {
        centers: BTreeMap<String, Vec<f64>>,
    },
    Constant {
        label: String,
    },
    /// Bands along one coordinate: `labels[i]` covers `(cuts[i-1], cuts[i])`.
    OrdinalBands {
        axis: usize,
        cuts: Vec<f64>,
        labels: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub dim: usize,
    #[serde(default = "default_quantization")]
    pub quantization: u32,
    pub region: Region,
    #[serde(default)]
    pub lexicon: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub nli_rules: BTreeMap<String, Vec<String>>,
    #[serde(default = "default_jitter")]
    pub generator_jitter: f64,
    #[serde(default = "default_jitter")]
    pub paraphrase_jitter: f64,
    /// Half-width of the cube that hashed anchors for unknown words fall in.
    #[serde(default = "default_unknown_spread")]
    pub unknown_word_spread: f64,
    #[serde(default = "default_marker")]
    pub description_marker: String,
}

fn default_quantization() -> u32 {
    4
}

fn default_jitter() -> f64 {
    0.1
}

fn default_unknown_spread() -> f64 {
    5.0
}

fn default_marker() -> String {
    "theme".to_string()
}

impl WorldSpec {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Spec(format!("{}: {e}", path.display())))
    }

    pub fn halfspace(normal: Vec<f64>, offset: f64, negative: &str, positive: &str) -> Self {
        Self::with_region(
            normal.len(),
            Region::Halfspace {
                normal,
                offset,
                labels: [negative.to_string(), positive.to_string()],
            },
        )
    }

    pub fn constant(dim: usize, label: &str) -> Self {
        Self::with_region(dim, Region::Constant { label: label.to_string() })
    }

    pub fn with_region(dim: usize, region: Region) -> Self {
        Self {
            dim,
            quantization: default_quantization(),
            region,
            lexicon: BTreeMap::new(),
            nli_rules: BTreeMap::new(),
            generator_jitter: default_jitter(),
            paraphrase_jitter: default_jitter(),
            unknown_word_spread: default_unknown_spread(),
            description_marker: default_marker(),
        }
    }

    fn validate(&self) -> Result<()> {
        let spec_err = |m: String| Err(Error::Spec(m));
        if self.dim == 0 {
            return spec_err("dim must be at least 1".into());
        }
        if self.quantization == 0 || self.quantization > 12 {
            return spec_err("quantization must lie in 1..=12".into());
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match &self.region {
            Region::Halfspace { normal, offset, labels } => {
                if normal.len() != self.dim || !finite(normal) || !offset.is_finite() {
                    return spec_err("halfspace normal must be finite with length dim".into());
                }
                if normal.iter().all(|x| *x == 0.0) {
                    return spec_err("halfspace normal must be non-zero".into());
                }
                if labels.iter().any(String::is_empty) {
                    return spec_err("labels must be non-empty".into());
                }
            }
            Region::NearestCentroid { centers } => {
                if centers.is_empty() {
                    return spec_err("nearest_centroid needs at least one center".into());
                }
                for (label, c) in centers {
                    if label.is_empty() || c.len() != self.dim || !finite(c) {
                        return spec_err(format!("center {label:?} must be finite with length dim"));
                    }
                }
            }
            Region::Constant { label } => {
                if label.is_empty() {
                    return spec_err("constant label must be non-empty".into());
                }
            }
            Region::OrdinalBands { axis, cuts, labels } => {
                if *axis >= self.dim {
                    return spec_err("ordinal axis out of range".into());
                }
                if labels.len() != cuts.len() + 1 || labels.iter().any(String::is_empty) {
                    return spec_err("ordinal bands need cuts.len() + 1 non-empty labels".into());
                }
                if !finite(cuts) || cuts.windows(2).any(|w| w[0] >= w[1]) {
                    return spec_err("ordinal cuts must be finite and strictly increasing".into());
                }
            }
        }
        for (word, p) in &self.lexicon {
            if p.len() != self.dim || !finite(p) {
                return spec_err(format!("lexicon anchor {word:?} must be finite with length dim"));
            }
        }
        for v in [self.generator_jitter, self.paraphrase_jitter, self.unknown_word_spread] {
            if !(v.is_finite() && v >= 0.0) {
                return spec_err("jitter and spread must be finite and non-negative".into());
            }
        }
        Ok(())
    }
}

/// An in-process world. Implements [`Transport`] directly.
#[derive(Debug)]
pub struct SimWorld {
    spec: WorldSpec,
    point_pattern: Regex,
}

type HandlerResult = std::result::Result<Value, (u16, String)>;

fn bad_request<T>(msg: impl Into<String>) -> std::result::Result<T, (u16, String)> {
    Err((400, msg.into()))
}

impl SimWorld {
    pub fn new(spec: WorldSpec) -> Result<Self> {
        spec.validate()?;
        let number = r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?";
        let pattern = format!(r"(?:^|\s)p((?:[ \t]+{number}){{{}}})", spec.dim);
        let point_pattern = Regex::new(&pattern).map_err(|e| Error::Spec(e.to_string()))?;
        Ok(Self { spec, point_pattern })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(WorldSpec::from_file(path)?)
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    /// A client whose every role is served by this world in-process, with an
    /// in-memory ledger.
    pub fn into_client(self, budget: Option<u64>, max_in_flight: usize) -> WireClient {
        let config = EndpointConfig::new("sim://in-process");
        let backends = Backends::uniform(Arc::new(self), config);
        WireClient::new(backends, Arc::new(Ledger::in_memory(budget)), max_in_flight)
    }

    /// Parses a point sentence `p v1 ... vd`; `None` for anything else.
    pub fn parse_point(&self, text: &str) -> Option<Vec<f64>> {
        let mut tokens = text.split_whitespace();
        if tokens.next() != Some("p") {
            return None;
        }
        let values: Vec<f64> = tokens.map(|t| t.parse::<f64>().ok()).collect::<Option<_>>()?;
        (values.len() == self.spec.dim && values.iter().all(|v| v.is_finite())).then_some(values)
    }

    /// Formats a point with `q` decimals. Values that round to zero print
    /// without a sign.
    pub fn format_point(&self, point: &[f64]) -> String {
        let q = self.spec.quantization as usize;
        let scale = 10f64.powi(q as i32);
        let mut out = String::from("p");
        for v in point {
            let mut r = (v * scale).round() / scale;
            if r == 0.0 {
                r = 0.0;
            }
            out.push_str(&format!(" {r:.q$}"));
        }
        out
    }

    /// Region label of a point. Ties go to the lexicographically smaller label.
    pub fn label_of(&self, x: &[f64]) -> &str {
        match &self.spec.region {
            Region::Halfspace { normal, offset, labels } => {
                let s = dot(normal, x) - offset;
                if s > 0.0 {
                    &labels[1]
                } else if s < 0.0 {
                    &labels[0]
                } else {
                    labels[0].as_str().min(labels[1].as_str())
                }
            }
            Region::NearestCentroid { centers } => {
                let mut best: Option<(&str, f64)> = None;
                // BTreeMap order makes the first strict minimum the smallest label.
                for (label, c) in centers {
                    let d: f64 = c.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((label, d));
                    }
                }
                best.map(|(l, _)| l).expect("validated non-empty")
            }
            Region::Constant { label } => label,
            Region::OrdinalBands { axis, cuts, labels } => {
                let v = x[*axis];
                let band = cuts.iter().take_while(|c| v > **c).count();
                if band < cuts.len() && v == cuts[band] {
                    labels[band].as_str().min(labels[band + 1].as_str())
                } else {
                    &labels[band]
                }
            }
        }
    }

    /// Every label the world can emit, sorted.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = match &self.spec.region {
            Region::Halfspace { labels, .. } => labels.to_vec(),
            Region::NearestCentroid { centers } => centers.keys().cloned().collect(),
            Region::Constant { label } => vec![label.clone()],
            Region::OrdinalBands { labels, .. } => labels.clone(),
        };
        out.sort();
        out.dedup();
        out
    }

    fn extract_points(&self, prompt: &str) -> Vec<Vec<f64>> {
        self.point_pattern
            .captures_iter(prompt)
            .filter_map(|c| {
                let values: Option<Vec<f64>> = c[1].split_whitespace().map(|t| t.parse().ok()).collect();
                values
            })
            .collect()
    }

    fn text_field<'a>(body: &'a Value, field: &str) -> std::result::Result<&'a str, (u16, String)> {
        match body.get(field).and_then(Value::as_str) {
            Some(s) if !s.is_empty() => Ok(s),
            Some(_) => bad_request(format!("field {field:?} must be non-empty")),
            None => bad_request(format!("missing string field {field:?}")),
        }
    }

    fn point_field(&self, body: &Value, field: &str) -> std::result::Result<Vec<f64>, (u16, String)> {
        let text = Self::text_field(body, field)?;
        match self.parse_point(text) {
            Some(p) => Ok(p),
            None => bad_request(format!("{field:?} is not a point sentence of dimension {}", self.spec.dim)),
        }
    }

    /// Handles one protocol request; errors are `(status, message)`.
    pub fn handle(&self, route: Route, body: &Value) -> HandlerResult {
        match route {
            Route::Classify => {
                let p = self.point_field(body, "text")?;
                Ok(json!({ "label": self.label_of(&p) }))
            }
            Route::Encode => {
                let p = self.point_field(body, "text")?;
                Ok(json!({ "embedding": [p] }))
            }
            Route::Decode => {
                let rows: Vec<Vec<f64>> = match body.get("embedding").cloned().map(serde_json::from_value) {
                    Some(Ok(rows)) => rows,
                    _ => return bad_request("field \"embedding\" must be a nested number array"),
                };
                if rows.is_empty() || rows.iter().any(|r| r.len() != self.spec.dim) {
                    return bad_request(format!("embedding must be l x {} with l >= 1", self.spec.dim));
                }
                let mut mean = vec![0.0; self.spec.dim];
                for r in &rows {
                    for (m, v) in mean.iter_mut().zip(r) {
                        *m += v;
                    }
                }
                let l = rows.len() as f64;
                mean.iter_mut().for_each(|m| *m /= l);
                Ok(json!({ "text": self.format_point(&mean) }))
            }
            Route::Generate => self.generate(body),
            Route::Nli => {
                let premise = Self::text_field(body, "premise")?;
                let hypothesis = Self::text_field(body, "hypothesis")?;
                Ok(json!({ "entailment": self.entailment(premise, hypothesis) }))
            }
        }
    }

    pub fn entailment(&self, premise: &str, hypothesis: &str) -> f64 {
        if premise == hypothesis {
            return 1.0;
        }
        let Some(p) = self.parse_point(premise) else {
            return 0.0;
        };
        let hyp = hypothesis.to_lowercase();
        let hit = self
            .spec
            .nli_rules
            .get(self.label_of(&p))
            .is_some_and(|kws| kws.iter().any(|k| hyp.contains(&k.to_lowercase())));
        if hit {
            1.0
        } else {
            0.0
        }
    }

    fn generate(&self, body: &Value) -> HandlerResult {
        let prompt = Self::text_field(body, "prompt")?;
        let n = match body.get("n").and_then(Value::as_u64) {
            Some(n) if (1..=10_000).contains(&n) => n as usize,
            _ => return bad_request("field \"n\" must be an integer in 1..=10000"),
        };
        let top_p = body.get("top_p").and_then(Value::as_f64).unwrap_or(0.9);
        if !(top_p > 0.0 && top_p <= 1.0) {
            return bad_request("field \"top_p\" must lie in (0, 1]");
        }
        let temperature = body.get("temperature").and_then(Value::as_f64).unwrap_or(1.0);
        if !(temperature.is_finite() && temperature >= 0.0) {
            return bad_request("field \"temperature\" must be finite and >= 0");
        }
        let seed = match body.get("seed") {
            None | Some(Value::Null) => 0,
            Some(v) => match v.as_u64() {
                Some(s) => s,
                None => return bad_request("field \"seed\" must be a non-negative integer"),
            },
        };
        let stream = RngStream::from_seed(seed).child("simworld/generate", 0).child(prompt, 0);

        let points = self.extract_points(prompt);
        let texts = if prompt.to_lowercase().contains(&self.spec.description_marker.to_lowercase()) {
            self.describe(&points, n)
        } else if let Some(center) = points.first() {
            self.jitter_around(center, self.spec.paraphrase_jitter * temperature, n, &stream)
        } else {
            let anchor = self.anchor_for_prompt(prompt);
            self.jitter_around(&anchor, self.spec.generator_jitter * temperature, n, &stream)
        };
        Ok(json!({ "texts": texts }))
    }

    fn jitter_around(&self, center: &[f64], sigma: f64, n: usize, stream: &RngStream) -> Vec<String> {
        (0..n)
            .map(|i| {
                let mut rng = stream.child("sample", i as u64).rng();
                let p: Vec<f64> = center
                    .iter()
                    .map(|c| c + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                self.format_point(&p)
            })
            .collect()
    }

    /// Anchor of the longest lexicon word that occurs as a whole word in the
    /// prompt, or a hashed anchor for the quoted word (or whole prompt).
    fn anchor_for_prompt(&self, prompt: &str) -> Vec<f64> {
        let lower = prompt.to_lowercase();
        let words: Vec<&str> = lower
            .split(|c: char| !(c.is_alphanumeric() || c == '_' || c == '-'))
            .filter(|w| !w.is_empty())
            .collect();
        let mut best: Option<(&String, &Vec<f64>)> = None;
        for (word, anchor) in &self.spec.lexicon {
            let lw = word.to_lowercase();
            let found = if lw.contains(char::is_whitespace) {
                lower.contains(&lw)
            } else {
                words.contains(&lw.as_str())
            };
            if found && best.is_none_or(|(b, _)| word.len() > b.len()) {
                best = Some((word, anchor));
            }
        }
        if let Some((_, anchor)) = best {
            return anchor.clone();
        }
        let key = quoted_word(prompt).unwrap_or(prompt);
        let mut rng = RngStream::from_seed(0).child("simworld/unknown-word", 0).child(key, 0).rng();
        let s = self.spec.unknown_word_spread;
        (0..self.spec.dim).map(|_| rng.random_range(-s..=s)).collect()
    }

    fn describe(&self, points: &[Vec<f64>], n: usize) -> Vec<String> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for p in points {
            *counts.entry(self.label_of(p)).or_default() += 1;
        }
        // Max count; BTreeMap order breaks ties toward the smaller label.
        let majority = counts
            .iter()
            .fold(None::<(&str, usize)>, |acc, (l, c)| match acc {
                Some((_, bc)) if bc >= *c => acc,
                _ => Some((l, *c)),
            })
            .map(|(l, _)| l);

        let mut phrases: Vec<String> = Vec::new();
        fn push(phrases: &mut Vec<String>, p: &str) {
            if !phrases.iter().any(|q| q == p) {
                phrases.push(p.to_string());
            }
        }
        if let Some(kws) = majority.and_then(|l| self.spec.nli_rules.get(l)) {
            kws.iter().for_each(|k| push(&mut phrases, k));
        }
        for (label, kws) in &self.spec.nli_rules {
            if Some(label.as_str()) != majority {
                kws.iter().for_each(|k| push(&mut phrases, k));
            }
        }
        let mut i = 1;
        while phrases.len() < n {
            push(&mut phrases, &format!("theme {i}"));
            i += 1;
        }
        phrases.truncate(n);
        phrases
    }
}

impl Transport for SimWorld {
    fn post(&self, route: Route, body: &Value) -> std::result::Result<Value, TransportFailure> {
        self.handle(route, body).map_err(|(code, message)| TransportFailure::Status {
            code,
            message,
            structured: true,
        })
    }
}

fn quoted_word(prompt: &str) -> Option<&str> {
    let start = prompt.find('\'')? + 1;
    let len = prompt[start..].find('\'')?;
    (len > 0).then(|| &prompt[start..start + len])
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
