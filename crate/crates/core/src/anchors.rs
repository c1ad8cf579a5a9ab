//! Per-label anchor pools.
//!
//! Words come from a breadth-first walk of a lexical hierarchy. Each word is
//! turned into sentences by the generator, and a sentence joins the pool of
//! whatever label the classifier assigns it. Pools then grow along three
//! paths: sentences for words related to a member's source word, paraphrases
//! of members, and lines of an external corpus. Every addition is
//! classifier-confirmed, and pools never lose members.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::wire::{GenerateParams, LabelId, WireClient};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    SimilarTo,
    AlsoSee,
}

impl RelationKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "similar_to" => Some(Self::SimilarTo),
            "also_see" => Some(Self::AlsoSee),
            _ => None,
        }
    }
}

/// A forest of hypernym edges over words, plus symmetric lexical relations.
///
/// File format, one record per line (`#` comments and blank lines ignored):
///
/// ```text
/// N <id> <word>
/// H <child_id> <parent_id>
/// R <similar_to|also_see> <id> <id>
/// ```
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LexicalHierarchy {
    nodes: BTreeMap<String, String>,
    parent: BTreeMap<String, String>,
    children: BTreeMap<String, BTreeSet<String>>,
    relations: BTreeSet<(RelationKind, String, String)>,
}

impl LexicalHierarchy {
    pub fn parse(text: &str) -> Result<Self> {
        let mut h = Self::default();
        let mut edges = Vec::new();
        let mut rels = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let bad = |message: String| Error::Hierarchy { line: line_no, message };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.splitn(3, char::is_whitespace);
            let tag = parts.next().unwrap_or_default();
            let a = parts.next().map(str::trim).filter(|s| !s.is_empty());
            let rest = parts.next().map(str::trim).filter(|s| !s.is_empty());
            match (tag, a, rest) {
                ("N", Some(id), Some(word)) => {
                    if h.nodes.insert(id.to_string(), word.to_string()).is_some() {
                        return Err(bad(format!("duplicate node id {id}")));
                    }
                }
                ("H", Some(child), Some(parent)) if !parent.contains(char::is_whitespace) => {
                    edges.push((line_no, child.to_string(), parent.to_string()));
                }
                ("R", Some(kind), Some(pair)) => {
                    let kind = RelationKind::parse(kind).ok_or_else(|| bad(format!("unknown relation {kind}")))?;
                    let ids: Vec<&str> = pair.split_whitespace().collect();
                    let [x, y] = ids[..] else {
                        return Err(bad("relation needs exactly two ids".into()));
                    };
                    rels.push((line_no, kind, x.to_string(), y.to_string()));
                }
                _ => return Err(bad(format!("malformed record {line:?}"))),
            }
        }
        for (line, child, parent) in edges {
            for id in [&child, &parent] {
                if !h.nodes.contains_key(id) {
                    return Err(Error::Hierarchy { line, message: format!("unknown node id {id}") });
                }
            }
            if h.parent.insert(child.clone(), parent.clone()).is_some() {
                return Err(Error::Hierarchy { line, message: format!("node {child} has two parents") });
            }
            h.children.entry(parent).or_default().insert(child);
        }
        for (line, kind, x, y) in rels {
            for id in [&x, &y] {
                if !h.nodes.contains_key(id) {
                    return Err(Error::Hierarchy { line, message: format!("unknown node id {id}") });
                }
            }
            let (a, b) = if x <= y { (x, y) } else { (y, x) };
            h.relations.insert((kind, a, b));
        }
        h.check_acyclic()?;
        Ok(h)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&read_existing(path.as_ref())?)
    }

    fn check_acyclic(&self) -> Result<()> {
        for start in self.parent.keys() {
            let mut seen = HashSet::new();
            let mut cur = start;
            while let Some(p) = self.parent.get(cur) {
                if !seen.insert(cur) {
                    return Err(Error::Hierarchy {
                        line: 0,
                        message: format!("hypernym cycle through {start}"),
                    });
                }
                cur = p;
            }
        }
        Ok(())
    }

    pub fn word(&self, id: &str) -> Option<&str> {
        self.nodes.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn children(&self, id: &str) -> impl Iterator<Item = &str> {
        self.children.get(id).into_iter().flatten().map(String::as_str)
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    /// Words related to `word` through any relation, sorted and deduplicated.
    pub fn related_words(&self, word: &str) -> Vec<String> {
        let ids: BTreeSet<&str> = self
            .nodes
            .iter()
            .filter(|(_, w)| w.as_str() == word)
            .map(|(id, _)| id.as_str())
            .collect();
        let mut out = BTreeSet::new();
        for (_, a, b) in &self.relations {
            if ids.contains(a.as_str()) {
                out.insert(self.nodes[b].clone());
            }
            if ids.contains(b.as_str()) {
                out.insert(self.nodes[a].clone());
            }
        }
        out.remove(word);
        out.into_iter().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraversalLimits {
    /// Depth of the deepest level visited; roots are depth 0.
    pub depth_limit: usize,
    pub per_node_cap: usize,
    pub word_budget: usize,
}

/// Breadth-first word list from `roots`, children in sorted id order.
pub fn traverse_hierarchy(h: &LexicalHierarchy, roots: &[String], limits: TraversalLimits) -> Result<Vec<String>> {
    if let Some(r) = roots.iter().find(|r| !h.nodes.contains_key(*r)) {
        return Err(Error::UnknownRoot(r.clone()));
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut queue: VecDeque<(&str, usize)> = VecDeque::new();
    for r in roots {
        if seen.insert(r.as_str()) {
            queue.push_back((r, 0));
        }
    }
    while let Some((id, depth)) = queue.pop_front() {
        if out.len() >= limits.word_budget {
            break;
        }
        out.push(h.nodes[id].clone());
        if depth < limits.depth_limit {
            for child in h.children(id).take(limits.per_node_cap) {
                if seen.insert(child) {
                    queue.push_back((child, depth + 1));
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Generated,
    WordExpansion,
    SentenceExpansion,
    Corpus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSentence {
    pub text: String,
    pub source_word: Option<String>,
    pub provenance: Provenance,
    pub label: LabelId,
}

/// Members of one label in insertion order, unique by text.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorPool {
    pub label: LabelId,
    members: Vec<AnchorSentence>,
    texts: HashSet<String>,
}

impl AnchorPool {
    pub fn new(label: LabelId) -> Self {
        Self {
            label,
            members: Vec::new(),
            texts: HashSet::new(),
        }
    }

    /// Adds `s` unless its text is already present. `s.label` must match.
    pub fn insert(&mut self, s: AnchorSentence) -> Result<bool> {
        if s.label != self.label {
            return Err(Error::precondition(format!(
                "sentence labeled {} offered to pool {}",
                s.label, self.label
            )));
        }
        if !self.texts.insert(s.text.clone()) {
            return Ok(false);
        }
        self.members.push(s);
        Ok(true)
    }

    pub fn members(&self) -> &[AnchorSentence] {
        &self.members
    }

    pub fn texts(&self) -> Vec<String> {
        self.members.iter().map(|m| m.text.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, text: &str) -> bool {
        self.texts.contains(text)
    }
}

pub type Pools = BTreeMap<LabelId, AnchorPool>;

pub const DEFAULT_WORD_TEMPLATE: &str = "Write one natural sentence that uses the word '{w}'.";
pub const DEFAULT_PARAPHRASE_TEMPLATE: &str = "Paraphrase the following sentence: {x}";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    /// Must contain `{w}`.
    pub word: String,
    /// Must contain `{x}`.
    pub paraphrase: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            word: DEFAULT_WORD_TEMPLATE.into(),
            paraphrase: DEFAULT_PARAPHRASE_TEMPLATE.into(),
        }
    }
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<()> {
        if !self.word.contains("{w}") {
            return Err(Error::Config("word template must contain {w}".into()));
        }
        if !self.paraphrase.contains("{x}") {
            return Err(Error::Config("paraphrase template must contain {x}".into()));
        }
        Ok(())
    }

    pub fn word_prompt(&self, w: &str) -> String {
        self.word.replace("{w}", w)
    }

    pub fn paraphrase_prompt(&self, x: &str) -> String {
        self.paraphrase.replace("{x}", x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub templates: PromptTemplates,
    pub per_word_n: usize,
    pub per_sentence_n: usize,
    pub top_p: f64,
    pub temperature: f64,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            templates: PromptTemplates::default(),
            per_word_n: 8,
            per_sentence_n: 4,
            top_p: 0.9,
            temperature: 1.0,
        }
    }
}

impl GenerationSettings {
    fn params(&self, n: usize, stream: &RngStream) -> GenerateParams {
        GenerateParams {
            n,
            top_p: self.top_p,
            temperature: self.temperature,
            seed: Some(stream.seed_u64()),
        }
    }
}

struct Candidate {
    text: String,
    source_word: Option<String>,
    label: LabelId,
}

/// Generates `n` sentences per prompt and labels each. Results keep
/// (prompt order, generation index) order.
fn generate_labeled(
    client: &WireClient,
    prompts: &[(String, Option<String>)],
    n: usize,
    settings: &GenerationSettings,
    stream: &RngStream,
) -> Result<Vec<Candidate>> {
    let per_prompt = client.par_map(prompts, |i, (prompt, word)| {
        let texts = client.generate(prompt, &settings.params(n, &stream.child("prompt", i as u64)))?;
        texts
            .into_iter()
            .map(|text| {
                let label = client.classify(&text)?;
                Ok(Candidate {
                    text,
                    source_word: word.clone(),
                    label,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(per_prompt.into_iter().flatten().collect())
}

/// Pools for every label the classifier assigns to sentences generated from
/// `words`.
pub fn build_pools(
    client: &WireClient,
    words: &[String],
    settings: &GenerationSettings,
    stream: &RngStream,
) -> Result<Pools> {
    settings.templates.validate()?;
    let prompts: Vec<(String, Option<String>)> = words
        .iter()
        .map(|w| (settings.templates.word_prompt(w), Some(w.clone())))
        .collect();
    let mut pools = Pools::new();
    for c in generate_labeled(client, &prompts, settings.per_word_n, settings, stream)? {
        let pool = pools.entry(c.label.clone()).or_insert_with(|| AnchorPool::new(c.label.clone()));
        pool.insert(AnchorSentence {
            text: c.text,
            source_word: c.source_word,
            provenance: Provenance::Generated,
            label: c.label,
        })?;
    }
    Ok(pools)
}

/// The pool of `label` alone; empty when no generated sentence carries it.
pub fn build_pool(
    client: &WireClient,
    label: &LabelId,
    words: &[String],
    settings: &GenerationSettings,
    stream: &RngStream,
) -> Result<AnchorPool> {
    let mut pools = build_pools(client, words, settings, stream)?;
    Ok(pools.remove(label).unwrap_or_else(|| AnchorPool::new(label.clone())))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionMode {
    Word,
    Sentence,
}

fn append_confirmed(pool: &mut AnchorPool, candidates: Vec<Candidate>, provenance: Provenance) -> Result<usize> {
    let mut added = 0;
    let label = pool.label.clone();
    for c in candidates.into_iter().filter(|c| c.label == label) {
        let fresh = pool.insert(AnchorSentence {
            text: c.text,
            source_word: c.source_word,
            provenance,
            label: c.label,
        })?;
        added += usize::from(fresh);
    }
    Ok(added)
}

/// Grows `pool` in place and returns the number of members added.
pub fn expand_pool(
    client: &WireClient,
    pool: &mut AnchorPool,
    h: &LexicalHierarchy,
    mode: ExpansionMode,
    settings: &GenerationSettings,
    stream: &RngStream,
) -> Result<usize> {
    settings.templates.validate()?;
    match mode {
        ExpansionMode::Word => {
            let mut seen = HashSet::new();
            let mut prompts = Vec::new();
            for m in pool.members() {
                let Some(w) = &m.source_word else { continue };
                for r in h.related_words(w) {
                    if seen.insert(r.clone()) {
                        prompts.push((settings.templates.word_prompt(&r), Some(r)));
                    }
                }
            }
            let cands = generate_labeled(client, &prompts, settings.per_word_n, settings, &stream.child("word", 0))?;
            append_confirmed(pool, cands, Provenance::WordExpansion)
        }
        ExpansionMode::Sentence => {
            if pool.is_empty() {
                return Err(Error::EmptyPool(pool.label.to_string()));
            }
            let prompts: Vec<(String, Option<String>)> = pool
                .members()
                .iter()
                .map(|m| (settings.templates.paraphrase_prompt(&m.text), m.source_word.clone()))
                .collect();
            let cands = generate_labeled(
                client,
                &prompts,
                settings.per_sentence_n,
                settings,
                &stream.child("sentence", 0),
            )?;
            append_confirmed(pool, cands, Provenance::SentenceExpansion)
        }
    }
}

fn read_existing(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Non-blank trimmed lines of a corpus file.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<String>> {
    Ok(read_existing(path.as_ref())?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Classifies every corpus line once and routes it to the pool of its label,
/// creating pools as needed. Returns the number of members added.
pub fn ingest_corpus(client: &WireClient, pools: &mut Pools, path: impl AsRef<Path>) -> Result<usize> {
    let lines = read_corpus(path)?;
    let labels = client.par_map(&lines, |_, l| client.classify(l))?;
    let mut added = 0;
    for (text, label) in lines.into_iter().zip(labels) {
        let pool = pools.entry(label.clone()).or_insert_with(|| AnchorPool::new(label.clone()));
        added += usize::from(pool.insert(AnchorSentence {
            text,
            source_word: None,
            provenance: Provenance::Corpus,
            label,
        })?);
    }
    Ok(added)
}

/// Members whose label no longer matches a fresh classification.
pub fn verify_pool(client: &WireClient, pool: &AnchorPool) -> Result<Vec<String>> {
    let labels = client.par_map(pool.members(), |_, m| client.classify(&m.text))?;
    Ok(pool
        .members()
        .iter()
        .zip(labels)
        .filter(|(_, l)| *l != pool.label)
        .map(|(m, _)| m.text.clone())
        .collect())
}

/// One JSON object per member, pools in label order.
pub fn write_pools_jsonl(pools: &Pools, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for pool in pools.values() {
        for m in pool.members() {
            serde_json::to_writer(&mut w, m)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_pools_jsonl(path: impl AsRef<Path>) -> Result<Pools> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut pools = Pools::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: AnchorSentence = serde_json::from_str(&line)?;
        pools
            .entry(s.label.clone())
            .or_insert_with(|| AnchorPool::new(s.label.clone()))
            .insert(s)?;
    }
    Ok(pools)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{SimWorld, WorldSpec};

    const TREE: &str = "\
# tiny
N r root
N a alpha
N b beta
N c gamma
N d delta
H a r
H b r
H c r
H d a
R similar_to b c
";

    fn limits(depth_limit: usize, per_node_cap: usize, word_budget: usize) -> TraversalLimits {
        TraversalLimits { depth_limit, per_node_cap, word_budget }
    }

    #[test]
    fn bfs_depth_one() {
        let h = LexicalHierarchy::parse(TREE).unwrap();
        let w = traverse_hierarchy(&h, &["r".into()], limits(1, 10, 100)).unwrap();
        assert_eq!(w, ["root", "alpha", "beta", "gamma"]);
        let w = traverse_hierarchy(&h, &["r".into()], limits(2, 10, 100)).unwrap();
        assert_eq!(w, ["root", "alpha", "beta", "gamma", "delta"]);
    }

    #[test]
    fn budget_and_cap() {
        let h = LexicalHierarchy::parse(TREE).unwrap();
        assert_eq!(traverse_hierarchy(&h, &["r".into()], limits(5, 10, 2)).unwrap().len(), 2);
        let w = traverse_hierarchy(&h, &["r".into()], limits(5, 1, 100)).unwrap();
        assert_eq!(w, ["root", "alpha", "delta"]);
    }

    #[test]
    fn unknown_root() {
        let h = LexicalHierarchy::parse(TREE).unwrap();
        assert!(matches!(
            traverse_hierarchy(&h, &["zz".into()], limits(1, 1, 1)),
            Err(Error::UnknownRoot(_))
        ));
    }

    #[test]
    fn malformed_hierarchies() {
        for bad in [
            "N a x\nH a a\n",
            "N a x\nN b y\nH a b\nH b a\n",
            "N a x\nH a zz\n",
            "N a x\nR opposite a a\n",
            "N a x\nN a y\n",
            "Q what\n",
        ] {
            assert!(matches!(LexicalHierarchy::parse(bad), Err(Error::Hierarchy { .. })), "{bad:?}");
        }
    }

    #[test]
    fn relations_are_symmetric() {
        let h = LexicalHierarchy::parse(TREE).unwrap();
        assert_eq!(h.related_words("beta"), ["gamma"]);
        assert_eq!(h.related_words("gamma"), ["beta"]);
        assert!(h.related_words("alpha").is_empty());
    }

    #[test]
    fn pool_dedups_and_checks_label() {
        let mut p = AnchorPool::new(LabelId::from("A"));
        let s = |t: &str, l: &str| AnchorSentence {
            text: t.into(),
            source_word: None,
            provenance: Provenance::Corpus,
            label: LabelId::from(l),
        };
        assert!(p.insert(s("x", "A")).unwrap());
        assert!(!p.insert(s("x", "A")).unwrap());
        assert!(p.insert(s("y", "B")).is_err());
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn constant_classifier_keeps_everything_in_one_pool() {
        let client = SimWorld::new(WorldSpec::constant(2, "A")).unwrap().into_client(None, 2);
        let words = vec!["sun".to_string(), "rain".to_string()];
        let settings = GenerationSettings { per_word_n: 3, ..Default::default() };
        let stream = RngStream::from_seed(1);
        let a = build_pool(&client, &LabelId::from("A"), &words, &settings, &stream).unwrap();
        assert_eq!(a.len(), 6);
        assert!(a.members().iter().all(|m| m.provenance == Provenance::Generated));
        let b = build_pool(&client, &LabelId::from("B"), &words, &settings, &stream).unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn word_expansion_without_relations_is_noop() {
        let client = SimWorld::new(WorldSpec::constant(2, "A")).unwrap().into_client(None, 2);
        let settings = GenerationSettings { per_word_n: 2, ..Default::default() };
        let stream = RngStream::from_seed(1);
        let mut pool = build_pool(&client, &LabelId::from("A"), &["sun".into()], &settings, &stream).unwrap();
        let before = pool.clone();
        let h = LexicalHierarchy::parse("N a sun\n").unwrap();
        let added = expand_pool(&client, &mut pool, &h, ExpansionMode::Word, &settings, &stream).unwrap();
        assert_eq!(added, 0);
        assert_eq!(pool, before);
    }

    #[test]
    fn jsonl_round_trip() {
        let client = SimWorld::new(WorldSpec::constant(2, "A")).unwrap().into_client(None, 2);
        let settings = GenerationSettings { per_word_n: 2, ..Default::default() };
        let pools = build_pools(&client, &["sun".into()], &settings, &RngStream::from_seed(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pools.jsonl");
        write_pools_jsonl(&pools, &path).unwrap();
        let back = read_pools_jsonl(&path).unwrap();
        assert_eq!(back[&LabelId::from("A")].members(), pools[&LabelId::from("A")].members());
    }

    #[test]
    fn missing_corpus() {
        assert!(matches!(read_corpus("/nonexistent/corpus.txt"), Err(Error::FileNotFound(_))));
    }
}
