//! Seeded synthetic benchmarks over attribute sets, and oracle backends
//! that make every pipeline stage hand-checkable.

mod ops;
mod oracle;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ops::{apply_ops, caption_of, parse_caption, parse_instruction, render_ops, AttrSet, EditOp, CAPTION_PREFIX};
pub use oracle::{oracle_suite, DropRule, FailureModeConfig, OracleSuite, EDITED_LOCATOR_PREFIX, FAILURE_GRAMMAR};

use crate::backends::{BackendKind, BackendProfile, BackendsFile, OracleSection, Role};
use crate::error::{Error, Result};
use crate::eval::Dataset;
use crate::index::{normalize, write_binary, write_jsonl, EmbeddingFormat, EmbeddingRecord};
use crate::types::{ComposedQuery, SUBSET_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrClass {
    Visual,
    Semantic,
}

/// Visual and semantic tokens. Embedding coordinates follow this order,
/// visual tokens first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeUniverse {
    pub visual: Vec<String>,
    pub semantic: Vec<String>,
}

impl AttributeUniverse {
    pub fn new<S: Into<String>>(visual: impl IntoIterator<Item = S>, semantic: impl IntoIterator<Item = S>) -> Result<Self> {
        let u = Self {
            visual: visual.into_iter().map(Into::into).collect(),
            semantic: semantic.into_iter().map(Into::into).collect(),
        };
        let mut seen = std::collections::HashSet::new();
        for t in u.tokens() {
            if t.is_empty() || t.contains(char::is_whitespace) || t.contains(',') {
                return Err(Error::range("universe", format!("invalid token {t:?}")));
            }
            if !seen.insert(t) {
                return Err(Error::range("universe", format!("token {t:?} listed twice")));
            }
        }
        Ok(u)
    }

    /// Names tokens `v00`, `v01`, … and `s00`, `s01`, …
    pub fn generated(n_visual: usize, n_semantic: usize) -> Self {
        let width = |n: usize| n.saturating_sub(1).to_string().len().max(2);
        let (wv, ws) = (width(n_visual), width(n_semantic));
        Self {
            visual: (0..n_visual).map(|i| format!("v{i:0wv$}")).collect(),
            semantic: (0..n_semantic).map(|i| format!("s{i:0ws$}")).collect(),
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.visual.iter().chain(&self.semantic).map(String::as_str)
    }

    pub fn dim(&self) -> usize {
        self.visual.len() + self.semantic.len()
    }

    pub fn class_tokens(&self, class: AttrClass) -> &[String] {
        match class {
            AttrClass::Visual => &self.visual,
            AttrClass::Semantic => &self.semantic,
        }
    }

    fn coordinates(&self) -> HashMap<&str, (usize, AttrClass)> {
        let v = self.visual.iter().enumerate().map(|(i, t)| (t.as_str(), (i, AttrClass::Visual)));
        let s = self
            .semantic
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), (self.visual.len() + i, AttrClass::Semantic)));
        v.chain(s).collect()
    }

    /// Unnormalized indicator vector; tokens outside the universe are ignored.
    pub fn indicator<'a>(&self, tokens: impl IntoIterator<Item = &'a String>) -> Vec<f32> {
        let coords = self.coordinates();
        let mut v = vec![0.0f32; self.dim()];
        for t in tokens {
            if let Some(&(i, _)) = coords.get(t.as_str()) {
                v[i] = 1.0;
            }
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthItem {
    pub item_id: String,
    pub attributes: AttrSet,
}

/// Items over a universe. Serialized as the oracle manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub universe: AttributeUniverse,
    pub items: Vec<SynthItem>,
}

impl SynthCorpus {
    pub fn new(universe: AttributeUniverse, items: Vec<SynthItem>) -> Result<Self> {
        let known: std::collections::HashSet<&str> = universe.tokens().collect();
        let mut ids = std::collections::HashSet::new();
        for item in &items {
            if !ids.insert(item.item_id.as_str()) {
                return Err(Error::DuplicateId(item.item_id.clone()));
            }
            if item.attributes.is_empty() {
                return Err(Error::range("attributes", format!("item `{}` has no attributes", item.item_id)));
            }
            if let Some(t) = item.attributes.iter().find(|t| !known.contains(t.as_str())) {
                return Err(Error::range(
                    "attributes",
                    format!("item `{}` uses token {t:?} outside the universe", item.item_id),
                ));
            }
        }
        Ok(Self { universe, items })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: SynthCorpus = serde_json::from_str(&text).map_err(|e| Error::schema(e.line(), "oracle manifest", e.to_string()))?;
        Self::new(raw.universe, raw.items)
    }

    pub fn class_of(&self, token: &str) -> Option<AttrClass> {
        if self.universe.visual.iter().any(|t| t == token) {
            Some(AttrClass::Visual)
        } else if self.universe.semantic.iter().any(|t| t == token) {
            Some(AttrClass::Semantic)
        } else {
            None
        }
    }

    pub fn embedding(&self, attributes: &AttrSet) -> Result<Vec<f32>> {
        let mut v = self.universe.indicator(attributes);
        normalize(&caption_of(attributes), &mut v)?;
        Ok(v)
    }

    pub fn embeddings(&self) -> Result<Vec<EmbeddingRecord>> {
        self.items
            .iter()
            .map(|it| Ok(EmbeddingRecord::new(it.item_id.clone(), self.embedding(&it.attributes)?)))
            .collect()
    }

    /// Every item whose attribute set equals `target`, in corpus order.
    pub fn items_with(&self, target: &AttrSet) -> Vec<&str> {
        self.items
            .iter()
            .filter(|it| &it.attributes == target)
            .map(|it| it.item_id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_items: usize,
    pub n_visual: usize,
    pub n_semantic: usize,
    pub attrs_per_item: usize,
    /// Probability that a new item is a one-token variant of an earlier one.
    pub variant_rate: f64,
    /// Probability that a new item copies an earlier item's attributes.
    pub duplicate_rate: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_items: 200,
            n_visual: 8,
            n_semantic: 8,
            attrs_per_item: 4,
            variant_rate: 0.6,
            duplicate_rate: 0.05,
        }
    }
}

fn fresh_attributes(rng: &mut ChaCha8Rng, u: &AttributeUniverse, a: usize) -> AttrSet {
    let mut nv = a.div_ceil(2).min(u.visual.len());
    let mut ns = a - nv;
    if ns > u.semantic.len() {
        ns = u.semantic.len();
        nv = a - ns;
    }
    let mut out = AttrSet::new();
    out.extend(u.visual.choose_multiple(rng, nv).cloned());
    out.extend(u.semantic.choose_multiple(rng, ns).cloned());
    out
}

/// Swaps one token for an unused token of the same class, if any class allows it.
fn variant_of(rng: &mut ChaCha8Rng, u: &AttributeUniverse, base: &AttrSet) -> Option<AttrSet> {
    let options: Vec<(Vec<&String>, Vec<&String>)> = [AttrClass::Visual, AttrClass::Semantic]
        .into_iter()
        .map(|c| {
            let pool = u.class_tokens(c);
            let present: Vec<&String> = pool.iter().filter(|t| base.contains(*t)).collect();
            let spare: Vec<&String> = pool.iter().filter(|t| !base.contains(*t)).collect();
            (present, spare)
        })
        .filter(|(p, s)| !p.is_empty() && !s.is_empty())
        .collect();
    let (present, spare) = options.choose(rng)?;
    let mut out = base.clone();
    out.remove(*present.choose(rng)?);
    out.insert((*spare.choose(rng)?).clone());
    Some(out)
}

pub fn gen_corpus(spec: &CorpusSpec) -> Result<SynthCorpus> {
    if spec.n_items == 0 {
        return Err(Error::range("n_items", "must be at least 1"));
    }
    if spec.attrs_per_item == 0 {
        return Err(Error::range("attrs_per_item", "must be at least 1"));
    }
    if spec.attrs_per_item > spec.n_visual + spec.n_semantic {
        return Err(Error::range(
            "attrs_per_item",
            format!(
                "{} exceeds the universe size {}",
                spec.attrs_per_item,
                spec.n_visual + spec.n_semantic
            ),
        ));
    }
    for (field, p) in [("variant_rate", spec.variant_rate), ("duplicate_rate", spec.duplicate_rate)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::range(field, format!("{p} is outside [0, 1]")));
        }
    }
    let universe = AttributeUniverse::generated(spec.n_visual, spec.n_semantic);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.n_items.saturating_sub(1).to_string().len().max(5);
    let mut items: Vec<SynthItem> = Vec::with_capacity(spec.n_items);
    for i in 0..spec.n_items {
        let attributes = if i > 0 && rng.random_bool(spec.duplicate_rate) {
            items[rng.random_range(0..i)].attributes.clone()
        } else if i > 0 && rng.random_bool(spec.variant_rate) {
            let base = items[rng.random_range(0..i)].attributes.clone();
            match variant_of(&mut rng, &universe, &base) {
                Some(v) => v,
                None => fresh_attributes(&mut rng, &universe, spec.attrs_per_item),
            }
        } else {
            fresh_attributes(&mut rng, &universe, spec.attrs_per_item)
        };
        items.push(SynthItem {
            item_id: format!("item{i:0width$}"),
            attributes,
        });
    }
    SynthCorpus::new(universe, items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub seed: u64,
    pub n_queries: usize,
    pub edit_ops_per_query: usize,
    pub with_subsets: bool,
    /// Draws allowed per query before giving up.
    pub max_attempts: usize,
}

impl Default for QuerySpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_queries: 50,
            edit_ops_per_query: 1,
            with_subsets: false,
            max_attempts: 1000,
        }
    }
}

fn random_op(rng: &mut ChaCha8Rng, u: &AttributeUniverse, current: &AttrSet) -> Option<EditOp> {
    let absent = |class: AttrClass| -> Vec<&String> { u.class_tokens(class).iter().filter(|t| !current.contains(*t)).collect() };
    let roll = rng.random_range(0..10u32);
    if roll == 0 {
        let all: Vec<&String> = u.visual.iter().chain(&u.semantic).filter(|t| !current.contains(*t)).collect();
        if let Some(t) = all.choose(rng) {
            return Some(EditOp::Add((*t).clone()));
        }
    } else if roll == 1 && current.len() > 1 {
        let present: Vec<&String> = current.iter().collect();
        return Some(EditOp::Remove(present.choose(rng)?.to_string()));
    }
    let present: Vec<&String> = current.iter().collect();
    let from = (*present.choose(rng)?).clone();
    let class = if u.visual.contains(&from) {
        AttrClass::Visual
    } else {
        AttrClass::Semantic
    };
    let to = (*absent(class).choose(rng)?).clone();
    Some(EditOp::Replace(from, to))
}

fn draw_subset(rng: &mut ChaCha8Rng, corpus: &SynthCorpus, target: &AttrSet, gt: &[&str]) -> Result<Vec<String>> {
    let mut others: Vec<&SynthItem> = corpus.items.iter().filter(|it| !gt.contains(&it.item_id.as_str())).collect();
    if others.len() < SUBSET_SIZE - 1 {
        return Err(Error::range("with_subsets", "corpus too small for six-member subsets"));
    }
    others.shuffle(rng);
    // hardest negatives first: largest overlap with the target
    others.sort_by_key(|it| std::cmp::Reverse(it.attributes.intersection(target).count()));
    let mut subset: Vec<String> = others[..SUBSET_SIZE - 1].iter().map(|it| it.item_id.clone()).collect();
    subset.push((*gt.choose(rng).expect("gt nonempty")).to_string());
    subset.shuffle(rng);
    Ok(subset)
}

/// Queries whose ground truth is every item carrying exactly the edited
/// attribute set.
pub fn gen_queries(corpus: &SynthCorpus, spec: &QuerySpec) -> Result<Vec<ComposedQuery>> {
    if corpus.items.is_empty() {
        return Err(Error::range("corpus", "must contain at least one item"));
    }
    if spec.edit_ops_per_query == 0 {
        return Err(Error::range("edit_ops_per_query", "must be at least 1"));
    }
    let mut by_set: BTreeMap<&AttrSet, Vec<&str>> = BTreeMap::new();
    for it in &corpus.items {
        by_set.entry(&it.attributes).or_default().push(&it.item_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.n_queries.saturating_sub(1).to_string().len().max(4);
    let mut out = Vec::with_capacity(spec.n_queries);
    for q in 0..spec.n_queries {
        let mut drawn = None;
        for _ in 0..spec.max_attempts {
            let reference = corpus.items.choose(&mut rng).expect("nonempty");
            let mut current = reference.attributes.clone();
            let mut ops = Vec::with_capacity(spec.edit_ops_per_query);
            for _ in 0..spec.edit_ops_per_query {
                let Some(op) = random_op(&mut rng, &corpus.universe, &current) else { break };
                current = apply_ops(&current, std::slice::from_ref(&op));
                ops.push(op);
            }
            if ops.len() < spec.edit_ops_per_query || current == reference.attributes {
                continue;
            }
            let Some(gt) = by_set.get(&current) else { continue };
            let gt: Vec<&str> = gt.iter().copied().filter(|id| *id != reference.item_id).collect();
            if gt.is_empty() {
                continue;
            }
            drawn = Some((reference, ops, current, gt));
            break;
        }
        let (reference, ops, target, gt) = drawn.ok_or(Error::Unsatisfiable(spec.max_attempts))?;
        let mut query = ComposedQuery::new(format!("q{q:0width$}"), &reference.item_id, render_ops(&ops))
            .with_ground_truth(gt.iter().copied());
        if spec.with_subsets {
            query.subset_ids = Some(draw_subset(&mut rng, corpus, &target, &gt)?);
        }
        out.push(query);
    }
    Ok(out)
}

/// A generated corpus with its queries and the oracle settings to run it with.
#[derive(Debug, Clone)]
pub struct SynthBenchmark {
    pub corpus: SynthCorpus,
    pub queries: Vec<ComposedQuery>,
    pub failure: FailureModeConfig,
}

pub const DATASET_FILE: &str = "dataset.json";
pub const ORACLE_FILE: &str = "oracle.json";
pub const BACKENDS_FILE: &str = "backends.json";

impl SynthBenchmark {
    pub fn generate(corpus: &CorpusSpec, queries: &QuerySpec, failure: FailureModeConfig) -> Result<Self> {
        let corpus = gen_corpus(corpus)?;
        let queries = gen_queries(&corpus, queries)?;
        Ok(Self {
            corpus,
            queries,
            failure,
        })
    }

    /// Database manifest: each item's locator is its own id.
    pub fn dataset(&self) -> Dataset {
        Dataset {
            queries: self.queries.clone(),
            manifest: self
                .corpus
                .items
                .iter()
                .map(|it| (it.item_id.clone(), it.item_id.clone()))
                .collect(),
        }
    }

    pub fn backends_file(&self, oracle_manifest: &str) -> BackendsFile {
        BackendsFile {
            artifact_dir: None,
            oracle: Some(OracleSection {
                manifest: oracle_manifest.to_string(),
                failure: Some(self.failure.to_string()),
                logit_scale: Some(self.failure.logit_scale),
                noise: Some(self.failure.noise),
            }),
            profiles: Role::ALL.into_iter().map(|r| BackendProfile::new(r, BackendKind::Oracle)).collect(),
        }
    }

    /// Writes dataset, embeddings, oracle manifest and backend profiles into
    /// `dir`; returns the embedding file path.
    pub fn write(&self, dir: &Path, format: EmbeddingFormat) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.dataset().write(&dir.join(DATASET_FILE))?;
        let records = self.corpus.embeddings()?;
        let emb = match format {
            EmbeddingFormat::JsonLines => {
                let p = dir.join("embeddings.jsonl");
                write_jsonl(&p, &records)?;
                p
            }
            EmbeddingFormat::Binary => {
                let p = dir.join("embeddings.bin");
                write_binary(&p, &records, self.corpus.universe.dim())?;
                p
            }
        };
        write_json(&dir.join(ORACLE_FILE), &self.corpus)?;
        write_json(&dir.join(BACKENDS_FILE), &self.backends_file(ORACLE_FILE))?;
        Ok(emb)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> CorpusSpec {
        CorpusSpec {
            seed,
            n_items: 100,
            ..CorpusSpec::default()
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        assert_eq!(gen_corpus(&spec(7)).unwrap(), gen_corpus(&spec(7)).unwrap());
        assert_ne!(gen_corpus(&spec(7)).unwrap(), gen_corpus(&spec(8)).unwrap());
    }

    #[test]
    fn too_many_attributes_is_range() {
        let s = CorpusSpec {
            attrs_per_item: 17,
            ..spec(1)
        };
        assert!(matches!(gen_corpus(&s), Err(Error::Range { field: "attrs_per_item", .. })));
        let s = CorpusSpec { n_items: 0, ..spec(1) };
        assert!(matches!(gen_corpus(&s), Err(Error::Range { field: "n_items", .. })));
    }

    #[test]
    fn items_have_fixed_size_and_unit_embeddings() {
        let c = gen_corpus(&spec(3)).unwrap();
        for it in &c.items {
            assert_eq!(it.attributes.len(), 4);
        }
        for r in c.embeddings().unwrap() {
            let n: f64 = r.vector.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn ground_truth_matches_corpus_scan() {
        let c = gen_corpus(&spec(11)).unwrap();
        let qs = gen_queries(
            &c,
            &QuerySpec {
                seed: 5,
                n_queries: 40,
                ..QuerySpec::default()
            },
        )
        .unwrap();
        let attrs: HashMap<&str, &AttrSet> = c.items.iter().map(|i| (i.item_id.as_str(), &i.attributes)).collect();
        for q in &qs {
            let target = apply_ops(attrs[q.reference_id.as_str()], &parse_instruction(&q.modification_text));
            // independent scan over every item
            let expect: std::collections::BTreeSet<String> = c
                .items
                .iter()
                .filter(|i| i.attributes == target && i.item_id != q.reference_id)
                .map(|i| i.item_id.clone())
                .collect();
            assert_eq!(q.ground_truth_ids, expect);
            assert!(!expect.is_empty());
        }
    }

    #[test]
    fn duplicates_give_multi_gt_queries() {
        let c = gen_corpus(&CorpusSpec {
            duplicate_rate: 0.3,
            ..spec(2)
        })
        .unwrap();
        let qs = gen_queries(
            &c,
            &QuerySpec {
                n_queries: 60,
                ..QuerySpec::default()
            },
        )
        .unwrap();
        assert!(qs.iter().any(|q| q.ground_truth_ids.len() > 1));
    }

    #[test]
    fn exhausted_budget_is_unsatisfiable() {
        // every item distinct and far apart: no single edit lands on another item
        let u = AttributeUniverse::generated(4, 4);
        let items = vec![
            SynthItem {
                item_id: "a".into(),
                attributes: ["v00", "v01", "s00", "s01"].map(String::from).into(),
            },
            SynthItem {
                item_id: "b".into(),
                attributes: ["v02", "v03", "s02", "s03"].map(String::from).into(),
            },
        ];
        let c = SynthCorpus::new(u, items).unwrap();
        let r = gen_queries(
            &c,
            &QuerySpec {
                n_queries: 1,
                max_attempts: 20,
                ..QuerySpec::default()
            },
        );
        assert!(matches!(r, Err(Error::Unsatisfiable(20))));
    }

    #[test]
    fn subsets_are_valid() {
        let c = gen_corpus(&spec(4)).unwrap();
        let qs = gen_queries(
            &c,
            &QuerySpec {
                n_queries: 20,
                with_subsets: true,
                ..QuerySpec::default()
            },
        )
        .unwrap();
        for q in qs {
            q.validate().unwrap();
        }
    }
}
