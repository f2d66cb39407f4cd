//! Embedding-based retrieval evaluation, image search, invariance across
//! renderings and keyword extraction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attributes::AttributeSet;
use crate::corpus::{Corpus, Geometry, Lighting, RenderImage};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::lexistats::{csv_err, Lexicon};
use crate::stattests::{wilcoxon_signed_rank_with, WilcoxonMethod, WilcoxonResult};
use crate::structure::RankProduct;
use crate::textproc::ProcessedDescription;
use crate::util::{dot, Moments};

pub const DEFAULT_KS: [usize; 5] = [1, 5, 10, 20, 100];

/// Rendering metadata for every image key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageCatalog {
    entries: Vec<RenderImage>,
    index: HashMap<String, usize>,
}

impl ImageCatalog {
    pub fn new(entries: Vec<RenderImage>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.image_id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    kind: "image",
                    id: e.image_id.clone(),
                });
            }
        }
        Ok(ImageCatalog { entries, index })
    }

    pub fn from_corpus(corpus: &Corpus) -> Self {
        ImageCatalog::new(corpus.images().to_vec()).expect("corpus image ids are unique")
    }

    /// Reads an `image_id,material_id,geometry,lighting` CSV.
    pub fn read_csv<R: Read>(r: R, source_name: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            image_id: String,
            material_id: String,
            geometry: String,
            lighting: String,
        }
        let mut rdr = csv::Reader::from_reader(r);
        let mut entries = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::parse(source_name, line, e.to_string()))?;
            entries.push(RenderImage {
                image_id: row.image_id,
                material_id: row.material_id,
                geometry: Geometry::from_str(&row.geometry).map_err(|e| Error::parse(source_name, line, e))?,
                lighting: Lighting::from_str(&row.lighting).map_err(|e| Error::parse(source_name, line, e))?,
            });
        }
        ImageCatalog::new(entries)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["image_id", "material_id", "geometry", "lighting"]).map_err(csv_err)?;
        for e in &self.entries {
            wtr.write_record([&e.image_id, &e.material_id, e.geometry.as_str(), e.lighting.as_str()])
                .map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::io("csv", e))
    }

    pub fn entries(&self) -> &[RenderImage] {
        &self.entries
    }

    pub fn get(&self, image_id: &str) -> Option<&RenderImage> {
        self.index.get(image_id).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CandidateFilter {
    #[serde(default)]
    pub geometry: Option<Geometry>,
    #[serde(default)]
    pub lighting: Option<Lighting>,
}

impl CandidateFilter {
    pub fn accepts(&self, image: &RenderImage) -> bool {
        self.geometry.is_none_or(|g| g == image.geometry) && self.lighting.is_none_or(|l| l == image.lighting)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalCase {
    pub query_key: String,
    pub truth_material: String,
    #[serde(default)]
    pub candidate_filter: CandidateFilter,
    /// Exact image expected in image truth mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_image: Option<String>,
}

/// Reads retrieval cases, one JSON object per line; blank lines are skipped.
pub fn read_cases<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<RetrievalCase>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthMode {
    /// Any rendering of the right material is a hit.
    #[default]
    Material,
    /// Only the case's `truth_image` is a hit.
    Image,
}

impl FromStr for TruthMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "material" => Ok(TruthMode::Material),
            "image" => Ok(TruthMode::Image),
            other => Err(format!("unknown truth mode {other:?}")),
        }
    }
}

/// Candidate indices (into the image store) per distinct filter.
fn candidate_lists(cases: &[RetrievalCase], image_store: &EmbeddingStore, catalog: &ImageCatalog) -> Result<BTreeMap<CandidateFilter, Vec<usize>>> {
    let filters: BTreeSet<CandidateFilter> = cases.iter().map(|c| c.candidate_filter).collect();
    let mut out = BTreeMap::new();
    for f in filters {
        let idx = catalog
            .entries()
            .iter()
            .filter(|e| f.accepts(e))
            .map(|e| image_store.index_of(&e.image_id))
            .collect::<Result<Vec<_>>>()?;
        out.insert(f, idx);
    }
    Ok(out)
}

/// 1-based rank of the best-ranked ground-truth candidate for each case.
/// Candidates are ordered by descending cosine, then ascending key.
pub fn case_ranks(
    text_store: &EmbeddingStore,
    image_store: &EmbeddingStore,
    catalog: &ImageCatalog,
    cases: &[RetrievalCase],
    mode: TruthMode,
) -> Result<Vec<usize>> {
    if text_store.dim() != image_store.dim() {
        return Err(Error::InvalidParameter(format!(
            "text dimension {} differs from image dimension {}",
            text_store.dim(),
            image_store.dim()
        )));
    }
    let lists = candidate_lists(cases, image_store, catalog)?;
    cases
        .par_iter()
        .map(|case| {
            let q = text_store
                .vector(&case.query_key)
                .ok_or_else(|| Error::MissingKey(case.query_key.clone()))?;
            let qn = dot(q, q);
            let candidates = &lists[&case.candidate_filter];
            let keys = image_store.keys();
            let is_truth = |i: usize| match mode {
                TruthMode::Material => catalog.get(&keys[i]).is_some_and(|e| e.material_id == case.truth_material),
                TruthMode::Image => case.truth_image.as_deref() == Some(keys[i].as_str()),
            };
            let sims: Vec<(f64, usize)> = candidates.iter().map(|&i| (image_store.cosine_with(i, q, qn), i)).collect();
            let beats = |a: &(f64, usize), b: &(f64, usize)| a.0 > b.0 || (a.0 == b.0 && keys[a.1] < keys[b.1]);
            let best = sims
                .iter()
                .filter(|(_, i)| is_truth(*i))
                .fold(None::<&(f64, usize)>, |acc, c| match acc {
                    Some(b) if !beats(c, b) => Some(b),
                    _ => Some(c),
                })
                .ok_or_else(|| Error::MissingGroundTruth {
                    case: case.query_key.clone(),
                    truth: match mode {
                        TruthMode::Material => case.truth_material.clone(),
                        TruthMode::Image => case.truth_image.clone().unwrap_or_else(|| "<none>".into()),
                    },
                })?;
            Ok(1 + sims.iter().filter(|c| beats(c, best)).count())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallTable {
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub cases: usize,
    pub mode: TruthMode,
}

impl RecallTable {
    pub fn from_ranks(ranks: &[usize], ks: &[usize], mode: TruthMode) -> Self {
        let recall = ks
            .iter()
            .map(|&k| {
                if ranks.is_empty() {
                    0.0
                } else {
                    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
                }
            })
            .collect();
        RecallTable {
            ks: ks.to_vec(),
            recall,
            cases: ranks.len(),
            mode,
        }
    }

    pub fn at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }

    /// CSV `K,recall` with recall as a fraction.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["K", "recall"]).map_err(csv_err)?;
        for (k, r) in self.ks.iter().zip(&self.recall) {
            wtr.write_record([k.to_string(), r.to_string()]).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::io("csv", e))
    }
}

pub fn topk_recall(
    text_store: &EmbeddingStore,
    image_store: &EmbeddingStore,
    catalog: &ImageCatalog,
    cases: &[RetrievalCase],
    ks: &[usize],
    mode: TruthMode,
) -> Result<RecallTable> {
    if ks.contains(&0) {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let ranks = case_ranks(text_store, image_store, catalog, cases, mode)?;
    Ok(RecallTable::from_ranks(&ranks, &ks, mode))
}

/// Recall tables for a series of (name, text store, image store) snapshots.
pub fn recall_sweep(
    snapshots: &[(String, EmbeddingStore, EmbeddingStore)],
    catalog: &ImageCatalog,
    cases: &[RetrievalCase],
    ks: &[usize],
    mode: TruthMode,
) -> Result<Vec<(String, RecallTable)>> {
    snapshots
        .iter()
        .map(|(name, text, image)| Ok((name.clone(), topk_recall(text, image, catalog, cases, ks, mode)?)))
        .collect()
}

/// CSV `model,K,recall` for a sweep.
pub fn write_sweep_csv<W: Write>(w: W, sweep: &[(String, RecallTable)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["model", "K", "recall"]).map_err(csv_err)?;
    for (name, table) in sweep {
        for (k, r) in table.ks.iter().zip(&table.recall) {
            wtr.write_record([name.clone(), k.to_string(), r.to_string()]).map_err(csv_err)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("csv", e))
}

/// The `k` entries of `store` most cosine-similar to `query`, descending,
/// ties by ascending key.
pub fn image_search(query: &[f64], store: &EmbeddingStore, k: usize) -> Result<Vec<(String, f64)>> {
    if store.is_empty() {
        return Err(Error::InsufficientData("no candidates".into()));
    }
    if k > store.len() {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds {} candidates", store.len())));
    }
    if query.len() != store.dim() {
        return Err(Error::InvalidParameter(format!(
            "query dimension {} differs from store dimension {}",
            query.len(),
            store.dim()
        )));
    }
    let qn = dot(query, query);
    if qn == 0.0 {
        return Err(Error::ZeroNorm("query".into()));
    }
    let mut scored: Vec<(f64, usize)> = (0..store.len()).into_par_iter().map(|i| (store.cosine_with(i, query, qn), i)).collect();
    let keys = store.keys();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then_with(|| keys[a.1].cmp(&keys[b.1]));
    if k < scored.len() && k > 0 {
        scored.select_nth_unstable_by(k - 1, cmp);
    }
    scored.truncate(k);
    scored.sort_by(cmp);
    Ok(scored.into_iter().map(|(s, i)| (keys[i].clone(), s)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvarianceMode {
    /// Vary geometry under baseline lighting.
    Geometry,
    /// Vary lighting on the baseline geometry.
    Lighting,
}

impl FromStr for InvarianceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "geometry" => Ok(InvarianceMode::Geometry),
            "lighting" => Ok(InvarianceMode::Lighting),
            other => Err(format!("unknown invariance mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialInvariance {
    pub material_id: String,
    pub variants: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub mode: InvarianceMode,
    /// Mean of the per-material means.
    pub mean: f64,
    /// Population standard deviation of the per-material means.
    pub std: f64,
    pub materials: Vec<MaterialInvariance>,
    /// Materials with fewer than two variants.
    pub skipped: Vec<String>,
}

impl InvarianceReport {
    /// CSV `material_id,variants,mean`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["material_id", "variants", "mean"]).map_err(csv_err)?;
        for m in &self.materials {
            wtr.write_record([m.material_id.clone(), m.variants.to_string(), m.mean.to_string()])
                .map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::io("csv", e))
    }
}

/// Mean cosine between renderings of the same material that differ in the
/// varied dimension. Only catalog images present in `store` take part.
pub fn invariance(store: &EmbeddingStore, catalog: &ImageCatalog, mode: InvarianceMode) -> Result<InvarianceReport> {
    let mut by_material: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for e in catalog.entries() {
        let fixed_ok = match mode {
            InvarianceMode::Geometry => e.lighting == Lighting::Baseline,
            InvarianceMode::Lighting => e.geometry == Geometry::Baseline,
        };
        if !fixed_ok {
            continue;
        }
        if let Ok(i) = store.index_of(&e.image_id) {
            by_material.entry(e.material_id.as_str()).or_default().push(i);
        }
    }
    let mut materials = Vec::new();
    let mut skipped = Vec::new();
    for (material, idx) in by_material {
        if idx.len() < 2 {
            log::warn!("material {material} has a single {mode:?} variant; skipped");
            skipped.push(material.to_string());
            continue;
        }
        let mut m = Moments::default();
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                m.push(store.cosine_at(i, j));
            }
        }
        materials.push(MaterialInvariance {
            material_id: material.to_string(),
            variants: idx.len(),
            mean: m.mean,
        });
    }
    if materials.is_empty() {
        return Err(Error::InsufficientData("no material has two variants".into()));
    }
    let mut across = Moments::default();
    materials.iter().for_each(|m| across.push(m.mean));
    Ok(InvarianceReport {
        mode,
        mean: across.mean,
        std: across.std(),
        materials,
        skipped,
    })
}

/// Paired signed-rank comparison of per-material means present in both reports.
pub fn compare_invariance(ours: &InvarianceReport, other: &InvarianceReport, method: WilcoxonMethod) -> Result<WilcoxonResult> {
    let theirs: HashMap<&str, f64> = other.materials.iter().map(|m| (m.material_id.as_str(), m.mean)).collect();
    let pairs: Vec<(f64, f64)> = ours
        .materials
        .iter()
        .filter_map(|m| theirs.get(m.material_id.as_str()).map(|&t| (m.mean, t)))
        .collect();
    wilcoxon_signed_rank_with(&pairs, method)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    pub lemma: String,
    pub attribute: String,
    /// Descriptions containing the lemma.
    pub count: usize,
    pub psi: Option<f64>,
}

/// Lexicon lemmas with an attribute that occur in the first `n_desc`
/// descriptions, ordered by description count (descending), attribute Ψ
/// (ascending, unknown last) and lemma.
pub fn extract_keywords(
    descriptions: &[ProcessedDescription],
    lexicon: &Lexicon,
    set: &AttributeSet,
    psi: &[RankProduct],
    n_desc: usize,
) -> Vec<Keyword> {
    let psi_of: HashMap<&str, f64> = psi.iter().filter_map(|p| p.psi.map(|v| (p.attribute.as_str(), v))).collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for d in descriptions.iter().take(n_desc) {
        for lemma in d.distinct_lemmas() {
            if lexicon.contains(lemma) && set.attribute_of(lemma).is_some() {
                *counts.entry(lemma).or_default() += 1;
            }
        }
    }
    let mut out: Vec<Keyword> = counts
        .into_iter()
        .map(|(lemma, count)| {
            let attribute = set.attribute_of(lemma).expect("filtered").to_string();
            Keyword {
                psi: psi_of.get(attribute.as_str()).copied(),
                lemma: lemma.to_string(),
                attribute,
                count,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then_with(|| a.psi.unwrap_or(f64::INFINITY).total_cmp(&b.psi.unwrap_or(f64::INFINITY)))
            .then_with(|| a.lemma.cmp(&b.lemma))
    });
    out
}
