//! Run configuration.
//!
//! One TOML file carries every hyperparameter. Relative paths resolve
//! against the directory of the file. An endpoint whose `base_url` is
//! `sim:<path>` is served in-process by the simulated world at `<path>`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::anchors::{GenerationSettings, PromptTemplates, TraversalLimits};
use crate::error::{Error, Result};
use crate::interpret::DEFAULT_DESCRIPTION_TEMPLATE;
use crate::radius::RadiusConfig;
use crate::scoring::ScoreWeights;
use crate::simworld::SimWorld;
use crate::wire::canonical::canonical_bytes;
use crate::wire::{Backends, EndpointConfig, HttpTransport, Service, Transport, SAMPLER_ENCODER};

pub const SIM_SCHEME: &str = "sim:";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointsConfig {
    /// Used for any role left unset.
    pub default: Option<EndpointConfig>,
    pub classifier: Option<EndpointConfig>,
    pub sampler: Option<EndpointConfig>,
    pub generator: Option<EndpointConfig>,
    pub nli: Option<EndpointConfig>,
    /// External encoders by id, used for geometry and alignment.
    #[serde(default)]
    pub encoders: BTreeMap<String, EndpointConfig>,
}

impl EndpointsConfig {
    pub fn role(&self, name: &str) -> Result<&EndpointConfig> {
        let specific = match name {
            "classifier" => &self.classifier,
            "sampler" => &self.sampler,
            "generator" => &self.generator,
            "nli" => &self.nli,
            _ => return Err(Error::Config(format!("unknown endpoint role {name}"))),
        };
        specific
            .as_ref()
            .or(self.default.as_ref())
            .ok_or_else(|| Error::Config(format!("no endpoint configured for {name}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorsConfig {
    pub hierarchy: PathBuf,
    /// Node ids the traversal starts from.
    pub roots: Vec<String>,
    pub depth_limit: usize,
    pub per_node_cap: usize,
    pub word_budget: usize,
    pub per_word_n: usize,
    pub per_sentence_n: usize,
    pub top_p: f64,
    pub temperature: f64,
    pub expand_words: bool,
    pub expand_sentences: bool,
    pub corpus: Option<PathBuf>,
    pub templates: PromptTemplates,
}

impl Default for AnchorsConfig {
    fn default() -> Self {
        let g = GenerationSettings::default();
        Self {
            hierarchy: PathBuf::new(),
            roots: Vec::new(),
            depth_limit: 2,
            per_node_cap: 8,
            word_budget: 64,
            per_word_n: g.per_word_n,
            per_sentence_n: g.per_sentence_n,
            top_p: g.top_p,
            temperature: g.temperature,
            expand_words: true,
            expand_sentences: true,
            corpus: None,
            templates: g.templates,
        }
    }
}

impl AnchorsConfig {
    pub fn limits(&self) -> TraversalLimits {
        TraversalLimits {
            depth_limit: self.depth_limit,
            per_node_cap: self.per_node_cap,
            word_budget: self.word_budget,
        }
    }

    pub fn generation(&self) -> GenerationSettings {
        GenerationSettings {
            templates: self.templates.clone(),
            per_word_n: self.per_word_n,
            per_sentence_n: self.per_sentence_n,
            top_p: self.top_p,
            temperature: self.temperature,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub lambda_consistency: f64,
    pub gamma: f64,
    /// Prototypes kept per label.
    pub k: usize,
    /// Pool members per label whose radius is estimated, in pool order.
    pub max_candidates: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            lambda_consistency: 1.0,
            gamma: 1.0,
            k: 50,
            max_candidates: 200,
        }
    }
}

impl SelectionConfig {
    pub fn weights(&self) -> ScoreWeights {
        ScoreWeights {
            lambda_consistency: self.lambda_consistency,
            gamma: self.gamma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Sentences drawn per label distribution.
    pub n: usize,
    pub lambda_spread: f64,
    /// Encoder for BERTScore between samples and their prototypes.
    pub bertscore_encoder: String,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n: 100,
            lambda_spread: 1.0,
            bertscore_encoder: SAMPLER_ENCODER.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretConfig {
    pub tau: f64,
    pub k_descriptions: usize,
    /// Ranked descriptions kept per label in the report.
    pub keep: usize,
    pub template: String,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        Self {
            tau: 0.6,
            k_descriptions: 10,
            keep: 2,
            template: DEFAULT_DESCRIPTION_TEMPLATE.into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    /// Encoder shared by target and reference sets; the sampler encoder when unset.
    pub encoder: Option<String>,
    /// Reference model name to a `prototypes.json` written by another run.
    pub references: BTreeMap<String, PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub budget: Option<u64>,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    pub endpoints: EndpointsConfig,
    pub anchors: AnchorsConfig,
    #[serde(default)]
    pub radius: RadiusConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub interpret: InterpretConfig,
    #[serde(default)]
    pub align: Option<AlignConfig>,
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("forensics-cache")
}

fn default_in_flight() -> usize {
    8
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.as_os_str().is_empty() || p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn resolve_endpoint(base: &Path, e: &mut EndpointConfig) {
    if let Some(rest) = e.base_url.strip_prefix(SIM_SCHEME) {
        e.base_url = format!("{SIM_SCHEME}{}", resolve(base, Path::new(rest)).display());
    }
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::Io(e),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        self.cache_dir = resolve(base, &self.cache_dir);
        self.anchors.hierarchy = resolve(base, &self.anchors.hierarchy);
        if let Some(c) = &self.anchors.corpus {
            self.anchors.corpus = Some(resolve(base, c));
        }
        let e = &mut self.endpoints;
        for ep in [&mut e.default, &mut e.classifier, &mut e.sampler, &mut e.generator, &mut e.nli]
            .into_iter()
            .flatten()
        {
            resolve_endpoint(base, ep);
        }
        for ep in e.encoders.values_mut() {
            resolve_endpoint(base, ep);
        }
        if let Some(a) = &mut self.align {
            for p in a.references.values_mut() {
                *p = resolve(base, p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: &str| Err(Error::Config(m.to_string()));
        self.radius.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.anchors.templates.validate()?;
        if !(0.0..=1.0).contains(&self.interpret.tau) {
            return cfg_err("interpret.tau must lie in [0, 1]");
        }
        if self.selection.k == 0 {
            return cfg_err("selection.k must be at least 1");
        }
        if self.selection.max_candidates == 0 {
            return cfg_err("selection.max_candidates must be at least 1");
        }
        if !(self.selection.lambda_consistency >= 0.0 && self.selection.gamma >= 0.0) {
            return cfg_err("selection weights must be non-negative");
        }
        if !(self.sampling.lambda_spread >= 0.0) {
            return cfg_err("sampling.lambda_spread must be non-negative");
        }
        if self.sampling.n < 2 {
            return cfg_err("sampling.n must be at least 2");
        }
        if self.interpret.k_descriptions == 0 {
            return cfg_err("interpret.k_descriptions must be at least 1");
        }
        if self.anchors.per_word_n == 0 || self.anchors.per_sentence_n == 0 {
            return cfg_err("anchors per_word_n and per_sentence_n must be at least 1");
        }
        if !(self.anchors.top_p > 0.0 && self.anchors.top_p <= 1.0) {
            return cfg_err("anchors.top_p must lie in (0, 1]");
        }
        if self.anchors.roots.is_empty() {
            return cfg_err("anchors.roots must name at least one node id");
        }
        if self.max_in_flight == 0 {
            return cfg_err("max_in_flight must be at least 1");
        }
        let must_exist = |p: &Path, what: &str| {
            if p.is_file() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} {} does not exist", p.display())))
            }
        };
        must_exist(&self.anchors.hierarchy, "hierarchy file")?;
        if let Some(c) = &self.anchors.corpus {
            must_exist(c, "corpus file")?;
        }
        for role in ["classifier", "sampler", "generator", "nli"] {
            let ep = self.endpoints.role(role)?;
            ep.validate()?;
            if let Some(p) = ep.base_url.strip_prefix(SIM_SCHEME) {
                must_exist(Path::new(p), "world file")?;
            }
        }
        for (id, ep) in &self.endpoints.encoders {
            if id == SAMPLER_ENCODER {
                return Err(Error::Config(format!("encoder id {SAMPLER_ENCODER:?} is reserved")));
            }
            ep.validate()?;
        }
        let known = |id: &str| id == SAMPLER_ENCODER || self.endpoints.encoders.contains_key(id);
        if !known(&self.sampling.bertscore_encoder) {
            return cfg_err("sampling.bertscore_encoder names no configured encoder");
        }
        if let Some(a) = &self.align {
            if a.encoder.as_deref().is_some_and(|e| !known(e)) {
                return cfg_err("align.encoder names no configured encoder");
            }
            for p in a.references.values() {
                must_exist(p, "alignment reference")?;
            }
        }
        Ok(())
    }

    /// SHA-256 of the semantic fields. The seed, budget, cache location,
    /// parallelism and transport timing knobs are excluded.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is an object");
        for k in ["seed", "budget", "cache_dir", "max_in_flight"] {
            obj.remove(k);
        }
        fn strip_transport(v: &mut serde_json::Value) {
            match v {
                serde_json::Value::Object(m) => {
                    if m.contains_key("base_url") {
                        for k in ["timeout_ms", "max_retries", "backoff_base_ms"] {
                            m.remove(k);
                        }
                    }
                    m.values_mut().for_each(strip_transport);
                }
                serde_json::Value::Array(a) => a.iter_mut().for_each(strip_transport),
                _ => {}
            }
        }
        strip_transport(&mut v);
        hex::encode(Sha256::digest(canonical_bytes(&json!(v))))
    }

    /// Backends per role. `sim:` worlds sharing a path share one instance.
    pub fn backends(&self) -> Result<Backends> {
        let mut worlds: BTreeMap<String, Arc<dyn Transport>> = BTreeMap::new();
        let mut service = |name: &str, ep: &EndpointConfig| -> Result<Service> {
            let transport: Arc<dyn Transport> = match ep.base_url.strip_prefix(SIM_SCHEME) {
                Some(path) => match worlds.get(path) {
                    Some(t) => t.clone(),
                    None => {
                        let t: Arc<dyn Transport> = Arc::new(SimWorld::from_file(path)?);
                        worlds.insert(path.to_string(), t.clone());
                        t
                    }
                },
                None => Arc::new(HttpTransport::new(ep)),
            };
            Ok(Service::new(name, transport, ep.clone()))
        };
        let mut b = Backends {
            classifier: service("classifier", self.endpoints.role("classifier")?)?,
            sampler: service("sampler", self.endpoints.role("sampler")?)?,
            generator: service("generator", self.endpoints.role("generator")?)?,
            nli: service("nli", self.endpoints.role("nli")?)?,
            encoders: BTreeMap::new(),
        };
        for (id, ep) in &self.endpoints.encoders {
            b.encoders.insert(id.clone(), service(id, ep)?);
        }
        Ok(b)
    }

    /// Encoder ids used for geometry rows: the sampler encoder first, then
    /// external encoders in id order.
    pub fn geometry_encoders(&self) -> Vec<String> {
        std::iter::once(SAMPLER_ENCODER.to_string())
            .chain(self.endpoints.encoders.keys().cloned())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[endpoints.default]
base_url = "http://127.0.0.1:9"

[anchors]
hierarchy = "h.txt"
roots = ["r"]
"#;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = RunConfig::parse(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(cfg.anchors.hierarchy, PathBuf::from("/base/h.txt"));
        assert_eq!(cfg.cache_dir, PathBuf::from("/base/forensics-cache"));
        assert_eq!(cfg.radius, RadiusConfig::default());
        assert_eq!(cfg.selection.k, 50);
        assert_eq!(cfg.interpret.tau, 0.6);
        assert_eq!(cfg.interpret.k_descriptions, 10);
        assert_eq!(cfg.endpoints.role("nli").unwrap().base_url, "http://127.0.0.1:9");
    }

    #[test]
    fn sim_urls_resolve() {
        let text = MINIMAL.replace("http://127.0.0.1:9", "sim:w.json");
        let cfg = RunConfig::parse(&text, Path::new("/base")).unwrap();
        assert_eq!(cfg.endpoints.role("classifier").unwrap().base_url, "sim:/base/w.json");
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = format!("{MINIMAL}\n[radius]\nbogus = 1\n");
        assert!(matches!(RunConfig::parse(&text, Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn hash_tracks_semantic_fields_only() {
        let base = RunConfig::parse(MINIMAL, Path::new("/b")).unwrap();
        let mut other = base.clone();
        other.seed = Some(5);
        other.budget = Some(10);
        other.cache_dir = PathBuf::from("/elsewhere");
        other.endpoints.default.as_mut().unwrap().timeout_ms = 1;
        assert_eq!(base.config_hash(), other.config_hash());
        other.radius.eta = 0.8;
        assert_ne!(base.config_hash(), other.config_hash());
    }

    #[test]
    fn validation_ranges() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("h.txt"), "N r root\n").unwrap();
        let ok = RunConfig::parse(MINIMAL, dir.path()).unwrap();
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.interpret.tau = 1.5;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.selection.k = 0;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.radius.eta = 1.0;
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.anchors.hierarchy = dir.path().join("missing.txt");
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
