//! Stage orchestration over a cache directory.
//!
//! Stages run in the order probe, radius, select, sample, geometry,
//! interpret, align, report. Each reads the artifacts of earlier stages from
//! the cache directory and writes its own, so any stage can be rerun alone.
//! All backend traffic goes through the cache ledger in the same directory,
//! which makes a rerun against a warm cache free of dispatches.
//!
//! Per-label work that fails for a non-fatal reason marks the label degraded
//! and later stages skip it. Budget exhaustion, transport failure and I/O
//! errors abort the run and leave a `checkpoint.json` naming the stage.

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::anchors::{
    build_pools, expand_pool, ingest_corpus, read_pools_jsonl, traverse_hierarchy, write_pools_jsonl, ExpansionMode,
    LexicalHierarchy, Pools, Provenance,
};
use crate::error::{Error, Result};
use crate::geometry::{
    bertscore_from_embeddings, cross_align, export_projection, geometry_report, mean_pairwise_distance, self_bleu,
    AlignmentTable, GeometryReport, LabelGroups, Projection,
};
use crate::interpret::{hit_rate_and_rank, propose_descriptions, DescriptionCandidate, Proposals};
use crate::radius::{estimate_alpha, RadiusEstimate};
use crate::rng::RngStream;
use crate::sampler::{sample_distribution, Prototype, SemanticDistribution};
use crate::scoring::{centroids, mean_pool, score, select_top_k, PrototypeSet, ScoredCandidate, SentenceVector};
use crate::wire::{Ledger, LabelId, WireClient, SAMPLER_ENCODER};

pub use config::RunConfig;
pub use report::{build_report, write_report, ForensicsReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Probe,
    Radius,
    Select,
    Sample,
    Geometry,
    Interpret,
    Align,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Probe,
        Stage::Radius,
        Stage::Select,
        Stage::Sample,
        Stage::Geometry,
        Stage::Interpret,
        Stage::Align,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Probe => "probe",
            Stage::Radius => "radius",
            Stage::Select => "select",
            Stage::Sample => "sample",
            Stage::Geometry => "geometry",
            Stage::Interpret => "interpret",
            Stage::Align => "align",
            Stage::Report => "report",
        }
    }

    /// The artifact this stage writes.
    pub fn artifact(self) -> &'static str {
        match self {
            Stage::Probe => "pools.jsonl",
            Stage::Radius => "radii.json",
            Stage::Select => "prototypes.json",
            Stage::Sample => "samples.json",
            Stage::Geometry => "geometry.json",
            Stage::Interpret => "descriptions.json",
            Stage::Align => "alignment.json",
            Stage::Report => "report.json",
        }
    }
}

pub const RUN_FILE: &str = "run.json";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const PROBE_FILE: &str = "probe.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Results keyed by label, with failed labels set aside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerLabel<T> {
    pub ok: BTreeMap<String, T>,
    pub degraded: BTreeMap<String, String>,
}

impl<T> Default for PerLabel<T> {
    fn default() -> Self {
        Self {
            ok: BTreeMap::new(),
            degraded: BTreeMap::new(),
        }
    }
}

impl<T> PerLabel<T> {
    /// Runs `f` per label; non-fatal failures degrade the label.
    pub fn collect<'a>(
        labels: impl IntoIterator<Item = &'a String>,
        inherited: &BTreeMap<String, String>,
        mut f: impl FnMut(&str) -> Result<T>,
    ) -> Result<Self> {
        let mut out = PerLabel {
            ok: BTreeMap::new(),
            degraded: inherited.clone(),
        };
        for label in labels {
            match f(label) {
                Ok(v) => {
                    out.ok.insert(label.clone(), v);
                }
                Err(e) if e.is_fatal() => return Err(e),
                Err(e) => {
                    warn!(%label, error = %e, "label degraded");
                    out.degraded.insert(label.clone(), e.to_string());
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub words: Vec<String>,
    pub pool_sizes: BTreeMap<String, usize>,
    pub provenance_counts: BTreeMap<String, BTreeMap<String, usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusEntry {
    pub text: String,
    pub estimate: RadiusEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub sets: PerLabel<PrototypeSet>,
    pub centroid_warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub prototype: usize,
    pub text: String,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEvaluation {
    pub samples: Vec<Sample>,
    /// Fraction of samples classified as the distribution's label.
    pub consistency: f64,
    /// Fraction of samples classified as their prototype's reference label.
    pub sampler_consistency: f64,
    pub self_bleu: f64,
    pub bertscore_f1: f64,
    pub spread: f64,
    /// `consistency + lambda_spread * spread`.
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryArtifact {
    pub reports: Vec<GeometryReport>,
    /// Why no geometry rows exist, e.g. fewer than two usable labels.
    pub skipped: Option<String>,
    pub projection: Option<Projection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelDescriptions {
    pub proposals: Proposals,
    pub ranked: Vec<DescriptionCandidate>,
}

/// An open run: resolved config, seed, and a client over the cache ledger.
pub struct Run {
    pub config: RunConfig,
    pub meta: RunMeta,
    /// The seed was drawn at random because none was supplied or recorded.
    pub seed_drawn: bool,
    pub client: WireClient,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

impl Run {
    /// Opens the cache directory. Seed precedence: `seed_override`, the
    /// config, `run.json`, then a fresh random draw. Stage artifacts from a
    /// run with a different seed or config hash are discarded.
    pub fn open(config: RunConfig, seed_override: Option<u64>) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(&config.cache_dir)?;
        let run_path = config.cache_dir.join(RUN_FILE);
        let previous: Option<RunMeta> = match std::fs::read_to_string(&run_path) {
            Ok(t) => Some(serde_json::from_str(&t)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(e.into()),
        };
        let mut seed_drawn = false;
        let seed = match seed_override.or(config.seed).or(previous.as_ref().map(|p| p.seed)) {
            Some(s) => s,
            None => {
                seed_drawn = true;
                rand::random()
            }
        };
        let meta = RunMeta {
            seed,
            config_hash: config.config_hash(),
        };
        if previous.as_ref().is_some_and(|p| *p != meta) {
            warn!("seed or configuration changed; discarding earlier stage artifacts");
            for stage in Stage::ALL {
                let p = config.cache_dir.join(stage.artifact());
                if p.exists() {
                    std::fs::remove_file(p)?;
                }
            }
            let p = config.cache_dir.join(PROBE_FILE);
            if p.exists() {
                std::fs::remove_file(p)?;
            }
        }
        write_json(&run_path, &meta)?;
        let ledger = Ledger::open(config.cache_dir.join(LEDGER_FILE), config.budget)?;
        let client = WireClient::new(config.backends()?, Arc::new(ledger), config.max_in_flight);
        Ok(Self {
            config,
            meta,
            seed_drawn,
            client,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.config.cache_dir
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir().join(file)
    }

    fn stream(&self, stage: Stage) -> RngStream {
        RngStream::from_seed(self.meta.seed).child(stage.name(), 0)
    }

    fn load<T: DeserializeOwned>(&self, stage: Stage) -> Result<T> {
        let path = self.path(stage.artifact());
        let text = std::fs::read_to_string(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingStageArtifact {
                stage: stage.name().into(),
                artifact: stage.artifact().into(),
            },
            _ => Error::Io(e),
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    fn load_optional<T: DeserializeOwned>(&self, stage: Stage) -> Result<Option<T>> {
        match self.load(stage) {
            Ok(v) => Ok(Some(v)),
            Err(Error::MissingStageArtifact { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn load_pools(&self) -> Result<Pools> {
        let path = self.path(Stage::Probe.artifact());
        if !path.exists() {
            return Err(Error::MissingStageArtifact {
                stage: Stage::Probe.name().into(),
                artifact: Stage::Probe.artifact().into(),
            });
        }
        read_pools_jsonl(path)
    }

    pub fn load_radii(&self) -> Result<PerLabel<Vec<RadiusEntry>>> {
        self.load(Stage::Radius)
    }

    pub fn load_selection(&self) -> Result<Selection> {
        self.load(Stage::Select)
    }

    pub fn load_samples(&self) -> Result<PerLabel<SampleEvaluation>> {
        self.load(Stage::Sample)
    }

    pub fn load_geometry(&self) -> Result<GeometryArtifact> {
        self.load(Stage::Geometry)
    }

    pub fn load_descriptions(&self) -> Result<PerLabel<LabelDescriptions>> {
        self.load(Stage::Interpret)
    }

    pub fn load_alignment(&self) -> Result<Option<AlignmentTable>> {
        self.load_optional(Stage::Align)
    }

    pub fn run_stage(&self, stage: Stage) -> Result<()> {
        info!(stage = stage.name(), "running stage");
        let result = match stage {
            Stage::Probe => self.probe(),
            Stage::Radius => self.radius(),
            Stage::Select => self.select(),
            Stage::Sample => self.sample(),
            Stage::Geometry => self.geometry(),
            Stage::Interpret => self.interpret(),
            Stage::Align => self.align(),
            Stage::Report => self.report().map(|_| ()),
        };
        if let Err(e) = &result {
            if e.is_fatal() {
                let checkpoint = serde_json::json!({
                    "failed_stage": stage.name(),
                    "error": e.to_string(),
                    "dispatched_total": self.client.ledger_snapshot().dispatched_total,
                });
                write_json(&self.path(CHECKPOINT_FILE), &checkpoint)?;
            }
        }
        result
    }

    /// Runs every stage in order; alignment only when configured.
    pub fn run_all(&self) -> Result<ForensicsReport> {
        for stage in Stage::ALL {
            if stage == Stage::Report || (stage == Stage::Align && self.config.align.is_none()) {
                continue;
            }
            self.run_stage(stage)?;
        }
        let checkpoint = self.path(CHECKPOINT_FILE);
        let report = self.report()?;
        if checkpoint.exists() {
            std::fs::remove_file(checkpoint)?;
        }
        Ok(report)
    }

    pub fn probe(&self) -> Result<()> {
        let a = &self.config.anchors;
        let stream = self.stream(Stage::Probe);
        let h = LexicalHierarchy::from_file(&a.hierarchy)?;
        let words = traverse_hierarchy(&h, &a.roots, a.limits())?;
        let settings = a.generation();
        let mut pools = build_pools(&self.client, &words, &settings, &stream.child("generate", 0))?;
        for (label, pool) in pools.iter_mut() {
            let s = stream.child("expand", 0).child(label.as_str(), 0);
            if a.expand_words {
                expand_pool(&self.client, pool, &h, ExpansionMode::Word, &settings, &s)?;
            }
            if a.expand_sentences && !pool.is_empty() {
                expand_pool(&self.client, pool, &h, ExpansionMode::Sentence, &settings, &s)?;
            }
        }
        if let Some(corpus) = &a.corpus {
            ingest_corpus(&self.client, &mut pools, corpus)?;
        }
        let mut provenance_counts = BTreeMap::new();
        for (label, pool) in &pools {
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for m in pool.members() {
                *counts.entry(provenance_name(m.provenance).to_string()).or_default() += 1;
            }
            provenance_counts.insert(label.to_string(), counts);
        }
        let summary = ProbeSummary {
            words,
            pool_sizes: pools.iter().map(|(l, p)| (l.to_string(), p.len())).collect(),
            provenance_counts,
        };
        write_pools_jsonl(&pools, self.path(Stage::Probe.artifact()))?;
        write_json(&self.path(PROBE_FILE), &summary)
    }

    pub fn radius(&self) -> Result<()> {
        let pools = self.load_pools()?;
        let stream = self.stream(Stage::Radius);
        let labels: Vec<String> = pools.keys().map(LabelId::to_string).collect();
        let out: PerLabel<Vec<RadiusEntry>> = PerLabel::collect(&labels, &BTreeMap::new(), |label| {
            let pool = &pools[&LabelId::new(label)?];
            let s = stream.child(label, 0);
            pool.members()
                .iter()
                .take(self.config.selection.max_candidates)
                .enumerate()
                .map(|(i, m)| {
                    let estimate = estimate_alpha(&self.client, &m.text, &self.config.radius, &s.child("candidate", i as u64))?;
                    Ok(RadiusEntry {
                        text: m.text.clone(),
                        estimate,
                    })
                })
                .collect()
        })?;
        write_json(&self.path(Stage::Radius.artifact()), &out)
    }

    fn pool_vectors(&self, pools: &Pools) -> Result<BTreeMap<LabelId, Vec<SentenceVector>>> {
        pools
            .iter()
            .map(|(label, pool)| {
                let texts = pool.texts();
                let vs = self.client.par_map(&texts, |_, t| {
                    Ok(SentenceVector {
                        text: t.clone(),
                        values: mean_pool(&self.client.encode(t)?)?,
                    })
                })?;
                Ok((label.clone(), vs))
            })
            .collect()
    }

    pub fn select(&self) -> Result<()> {
        let pools = self.load_pools()?;
        let radii = self.load_radii()?;
        let vectors = self.pool_vectors(&pools)?;
        let table = centroids(&vectors)?;
        let weights = self.config.selection.weights();
        let sets = PerLabel::collect(radii.ok.keys(), &radii.degraded, |label| {
            let id = LabelId::new(label)?;
            let by_text: BTreeMap<&str, &Vec<f64>> =
                vectors[&id].iter().map(|v| (v.text.as_str(), &v.values)).collect();
            let candidates = radii.ok[label]
                .iter()
                .map(|entry| {
                    let z = by_text
                        .get(entry.text.as_str())
                        .ok_or_else(|| Error::precondition(format!("no vector for {:?}", entry.text)))?;
                    let breakdown = score(z, &id, Some(entry.estimate.alpha_star), &table, weights)?;
                    Ok(ScoredCandidate {
                        text: entry.text.clone(),
                        vector: z.to_vec(),
                        radius: entry.estimate.clone(),
                        breakdown,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            select_top_k(id, candidates, self.config.selection.k)
        })?;
        let selection = Selection {
            sets,
            centroid_warnings: table.warnings,
        };
        write_json(&self.path(Stage::Select.artifact()), &selection)
    }

    pub fn sample(&self) -> Result<()> {
        let selection = self.load_selection()?;
        let stream = self.stream(Stage::Sample);
        let sc = &self.config.sampling;
        let out = PerLabel::collect(selection.sets.ok.keys(), &selection.sets.degraded, |label| {
            let set = &selection.sets.ok[label];
            let prototypes = set
                .members
                .iter()
                .map(|m| {
                    Ok(Prototype {
                        text: m.text.clone(),
                        embedding: self.client.encode(&m.text)?,
                        alpha: m.radius.alpha_star,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let dist = SemanticDistribution::new(set.label.clone(), prototypes)?;
            let drawn = sample_distribution(&self.client, &dist, sc.n, &stream.child(label, 0))?;
            let labels = self.client.par_map(&drawn, |_, d| self.client.classify(&d.text))?;
            let samples: Vec<Sample> = drawn
                .into_iter()
                .zip(&labels)
                .map(|(d, l)| Sample {
                    prototype: d.prototype,
                    text: d.text,
                    label: l.to_string(),
                })
                .collect();
            let n = samples.len() as f64;
            let consistency = samples.iter().filter(|s| s.label == label).count() as f64 / n;
            let sampler_consistency = samples
                .iter()
                .filter(|s| s.label == set.members[s.prototype].radius.reference_label.as_str())
                .count() as f64
                / n;
            let texts: Vec<String> = samples.iter().map(|s| s.text.clone()).collect();
            let enc = &sc.bertscore_encoder;
            let f1s = self.client.par_map(&samples, |_, s| {
                let c = self.client.encode_by(enc, &s.text)?;
                let r = self.client.encode_by(enc, &set.members[s.prototype].text)?;
                Ok(bertscore_from_embeddings(&c, &r)?.f1)
            })?;
            let proto_vectors: Vec<Vec<f64>> = set.members.iter().map(|m| m.vector.clone()).collect();
            let spread = mean_pairwise_distance(&proto_vectors)?;
            Ok(SampleEvaluation {
                consistency,
                sampler_consistency,
                self_bleu: self_bleu(&texts)?,
                bertscore_f1: f1s.iter().sum::<f64>() / n,
                spread,
                objective: consistency + sc.lambda_spread * spread,
                samples,
            })
        })?;
        write_json(&self.path(Stage::Sample.artifact()), &out)
    }

    pub fn geometry(&self) -> Result<()> {
        let samples = self.load_samples()?;
        let selection = self.load_selection()?;
        let mut reports = Vec::new();
        let mut skipped = None;
        if samples.ok.len() < 2 {
            skipped = Some(format!("{} usable label(s); geometry needs two", samples.ok.len()));
        } else {
            for enc in self.config.geometry_encoders() {
                let mut groups = LabelGroups::new();
                for (label, eval) in &samples.ok {
                    let vs = self.client.par_map(&eval.samples, |_, s| mean_pool(&self.client.encode_by(&enc, &s.text)?))?;
                    groups.insert(label.clone(), vs);
                }
                match geometry_report(&enc, &groups) {
                    Ok(r) => reports.push(r),
                    Err(e) if e.is_fatal() => return Err(e),
                    Err(e) => {
                        warn!(encoder = %enc, error = %e, "geometry row skipped");
                        skipped = Some(format!("encoder {enc}: {e}"));
                    }
                }
            }
        }
        let points: Vec<(String, f64, Vec<f64>)> = selection
            .sets
            .ok
            .iter()
            .flat_map(|(label, set)| {
                set.members
                    .iter()
                    .map(move |m| (label.clone(), m.radius.alpha_star, m.vector.clone()))
            })
            .collect();
        let projection = match export_projection(&points) {
            Ok(p) => Some(p),
            Err(e) => {
                warn!(error = %e, "projection skipped");
                None
            }
        };
        let artifact = GeometryArtifact {
            reports,
            skipped,
            projection,
        };
        write_json(&self.path(Stage::Geometry.artifact()), &artifact)
    }

    pub fn interpret(&self) -> Result<()> {
        let selection = self.load_selection()?;
        let ic = &self.config.interpret;
        let stream = self.stream(Stage::Interpret);
        let out = PerLabel::collect(selection.sets.ok.keys(), &selection.sets.degraded, |label| {
            let texts = selection.sets.ok[label].texts();
            let proposals = propose_descriptions(&self.client, &texts, ic.k_descriptions, &ic.template, &stream.child(label, 0))?;
            let ranked = hit_rate_and_rank(&self.client, &proposals.phrases, &texts, ic.tau)?;
            Ok(LabelDescriptions { proposals, ranked })
        })?;
        write_json(&self.path(Stage::Interpret.artifact()), &out)
    }

    pub fn align(&self) -> Result<()> {
        let Some(ac) = &self.config.align else {
            return Err(Error::Config("no [align] section configured".into()));
        };
        let selection = self.load_selection()?;
        let texts_of = |s: &Selection| -> BTreeMap<String, Vec<String>> {
            s.sets.ok.iter().map(|(l, set)| (l.clone(), set.texts())).collect()
        };
        let target = texts_of(&selection);
        let mut references = BTreeMap::new();
        for (model, path) in &ac.references {
            let text = std::fs::read_to_string(path)?;
            let s: Selection = serde_json::from_str(&text)?;
            references.insert(model.clone(), texts_of(&s));
        }
        let encoder = ac.encoder.as_deref().unwrap_or(SAMPLER_ENCODER);
        let table = cross_align(&self.client, encoder, &target, &references)?;
        write_json(&self.path(Stage::Align.artifact()), &table)
    }

    /// Assembles the report from artifacts and writes JSON and CSVs.
    pub fn report(&self) -> Result<ForensicsReport> {
        let report = build_report(self)?;
        write_report(&report, self.dir())?;
        report::write_projection(self)?;
        Ok(report)
    }
}

/// Provenance tag as written in artifacts.
pub fn provenance_name(p: Provenance) -> &'static str {
    match p {
        Provenance::Generated => "generated",
        Provenance::WordExpansion => "word_expansion",
        Provenance::SentenceExpansion => "sentence_expansion",
        Provenance::Corpus => "corpus",
    }
}
