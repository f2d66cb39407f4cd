//! Attribute discovery over lemma embeddings, attribute occurrence
//! probabilities and keyword classification.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::lexistats::csv_err;
use crate::textproc::ProcessedDescription;
use crate::util::{cosine_raw, norm};

/// Attribute name that marks a lemma as belonging to no attribute.
pub const OUTLIER: &str = "outlier";

/// Attributes left out of keyword classification by default.
pub const DEFAULT_EXCLUDED: [&str; 3] = ["military", "sewing", "weight"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Preference {
    /// Median of the off-diagonal similarities.
    Median,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApConfig {
    pub preference: Preference,
    pub damping: f64,
    pub conv_iters: usize,
    pub max_iters: usize,
    /// Seed for the tie-breaking noise added to the similarities.
    pub seed: u64,
}

impl Default for ApConfig {
    fn default() -> Self {
        ApConfig {
            preference: Preference::Median,
            damping: 0.9,
            conv_iters: 50,
            max_iters: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    /// Item index of each exemplar, ascending.
    pub exemplars: Vec<usize>,
    /// Cluster index (into `exemplars`) for every item.
    pub assignments: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
    /// Message passing found no exemplar; a single best exemplar was chosen instead.
    pub fallback: bool,
}

impl ApResult {
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.exemplars.len()];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

/// Cosine similarity matrix over `keys` of `store`.
pub fn similarity_matrix<S: AsRef<str>>(store: &EmbeddingStore, keys: &[S]) -> Result<Array2<f64>> {
    let idx: Vec<usize> = keys.iter().map(|k| store.index_of(k.as_ref())).collect::<Result<_>>()?;
    let n = idx.len();
    let mut s = vec![0.0; n * n];
    s.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = store.cosine_at(idx[i], idx[j]);
        }
    });
    Ok(Array2::from_shape_vec((n, n), s).expect("n * n values"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        (v[m / 2 - 1] + v[m / 2]) / 2.0
    }
}

/// Affinity propagation by responsibility/availability message passing.
pub fn affinity_propagation(similarity: &Array2<f64>, config: &ApConfig) -> Result<ApResult> {
    let (n, m) = similarity.dim();
    if n != m {
        return Err(Error::InvalidParameter(format!("similarity matrix is {n}x{m}")));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("affinity propagation needs 2 items, got {n}")));
    }
    if similarity.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite similarity".into()));
    }
    if !(0.5..1.0).contains(&config.damping) {
        return Err(Error::InvalidParameter(format!("damping {} outside [0.5, 1)", config.damping)));
    }
    if config.conv_iters == 0 || config.max_iters == 0 {
        return Err(Error::InvalidParameter("iteration limits must be positive".into()));
    }

    let preference = match config.preference {
        Preference::Value(p) if p.is_finite() => p,
        Preference::Value(p) => return Err(Error::InvalidParameter(format!("preference {p}"))),
        Preference::Median => median(
            similarity
                .indexed_iter()
                .filter(|((i, j), _)| i != j)
                .map(|(_, &v)| v)
                .collect(),
        ),
    };

    let mut s: Vec<f64> = similarity.iter().copied().collect();
    for k in 0..n {
        s[k * n + k] = preference;
    }
    // Noise proportional to the value range breaks exact ties (degenerate
    // symmetric inputs oscillate otherwise) and does not change under shifts.
    let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let scale = (hi - lo).max(f64::MIN_POSITIVE) * 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for v in s.iter_mut() {
        *v += scale * (rng.random::<f64>() - 0.5);
    }

    let lambda = config.damping;
    let mut r = vec![0.0; n * n];
    let mut a = vec![0.0; n * n];
    let mut history = vec![0u8; n * config.conv_iters];
    let mut streak_counts = vec![0usize; n];
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..config.max_iters {
        iterations = it + 1;
        r.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            let srow = &s[i * n..(i + 1) * n];
            let arow = &a[i * n..(i + 1) * n];
            let (mut best, mut second, mut arg) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0);
            for k in 0..n {
                let v = arow[k] + srow[k];
                if v > best {
                    second = best;
                    best = v;
                    arg = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let new = srow[k] - if k == arg { second } else { best };
                row[k] = lambda * row[k] + (1.0 - lambda) * new;
            }
        });

        let mut col_sum = vec![0.0; n];
        for i in 0..n {
            for k in 0..n {
                let v = r[i * n + k];
                col_sum[k] += if i == k { v } else { v.max(0.0) };
            }
        }
        a.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for k in 0..n {
                let rik = r[i * n + k];
                let own = if i == k { rik } else { rik.max(0.0) };
                let new = col_sum[k] - own;
                let new = if i == k { new } else { new.min(0.0) };
                row[k] = lambda * row[k] + (1.0 - lambda) * new;
            }
        });

        let slot = it % config.conv_iters;
        let mut k_count = 0;
        for k in 0..n {
            let e = u8::from(a[k * n + k] + r[k * n + k] > 0.0);
            k_count += e as usize;
            let old = history[k * config.conv_iters + slot];
            history[k * config.conv_iters + slot] = e;
            streak_counts[k] = streak_counts[k] + e as usize - old as usize;
        }
        if it + 1 >= config.conv_iters {
            let stable = streak_counts.iter().all(|&c| c == 0 || c == config.conv_iters);
            if stable && k_count > 0 {
                converged = true;
                break;
            }
        }
    }

    let mut exemplars: Vec<usize> = (0..n).filter(|&k| a[k * n + k] + r[k * n + k] > 0.0).collect();
    let fallback = exemplars.is_empty();
    if fallback {
        let best = (0..n)
            .max_by(|&x, &y| {
                let sx: f64 = (0..n).map(|i| similarity[[i, x]]).sum();
                let sy: f64 = (0..n).map(|i| similarity[[i, y]]).sum();
                sx.total_cmp(&sy).then(y.cmp(&x))
            })
            .expect("n >= 2");
        exemplars.push(best);
    }

    let assign = |exemplars: &[usize]| -> Vec<usize> {
        (0..n)
            .map(|i| {
                if let Some(c) = exemplars.iter().position(|&e| e == i) {
                    return c;
                }
                let mut best = 0;
                for (c, &e) in exemplars.iter().enumerate() {
                    if similarity[[i, e]] > similarity[[i, exemplars[best]]] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    };

    // Refine each exemplar to the member maximizing within-cluster similarity.
    let mut assignments = assign(&exemplars);
    if !fallback {
        let mut refined = exemplars.clone();
        for (c, slot) in refined.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assignments[i] == c).collect();
            let mut best = *slot;
            let mut best_score = f64::NEG_INFINITY;
            for &cand in &members {
                let score: f64 = members
                    .iter()
                    .map(|&i| if i == cand { preference } else { similarity[[i, cand]] })
                    .sum();
                if score > best_score {
                    best_score = score;
                    best = cand;
                }
            }
            *slot = best;
        }
        refined.sort_unstable();
        refined.dedup();
        exemplars = refined;
        assignments = assign(&exemplars);
    }

    if !converged {
        log::warn!("affinity propagation did not converge after {iterations} iterations");
    }
    Ok(ApResult {
        exemplars,
        assignments,
        converged,
        iterations,
        fallback,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub members: BTreeSet<String>,
    pub centroid: Vec<f64>,
    pub exemplar: String,
}

/// Named, disjoint lemma clusters plus unassigned outliers.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSet {
    attributes: Vec<Attribute>,
    outliers: BTreeSet<String>,
    lookup: HashMap<String, usize>,
}

impl AttributeSet {
    fn assemble(groups: BTreeMap<String, (Vec<String>, Option<String>)>, outliers: BTreeSet<String>, store: &EmbeddingStore) -> Result<Self> {
        let mut attributes = Vec::with_capacity(groups.len());
        let mut lookup = HashMap::new();
        for (name, (members, exemplar)) in groups {
            let mut centroid = vec![0.0; store.dim()];
            for lemma in &members {
                let v = store.vector(lemma).ok_or_else(|| Error::MissingKey(lemma.clone()))?;
                centroid.iter_mut().zip(v).for_each(|(c, x)| *c += x);
            }
            centroid.iter_mut().for_each(|c| *c /= members.len() as f64);
            let exemplar = match exemplar {
                Some(e) => e,
                None => closest_to(&members, &centroid, store),
            };
            for lemma in &members {
                if lookup.insert(lemma.clone(), attributes.len()).is_some() {
                    return Err(Error::DuplicateId {
                        kind: "attribute lemma",
                        id: lemma.clone(),
                    });
                }
            }
            attributes.push(Attribute {
                name,
                members: members.into_iter().collect(),
                centroid,
                exemplar,
            });
        }
        if let Some(l) = outliers.iter().find(|l| lookup.contains_key(*l)) {
            return Err(Error::DuplicateId {
                kind: "attribute lemma",
                id: l.clone(),
            });
        }
        Ok(AttributeSet {
            attributes,
            outliers,
            lookup,
        })
    }

    /// Builds the set from `lemma,attribute` pairs; [`OUTLIER`] marks excluded lemmas.
    /// Each exemplar is the member closest to its centroid.
    pub fn from_assignments(pairs: &[(String, String)], store: &EmbeddingStore) -> Result<Self> {
        let mut groups: BTreeMap<String, (Vec<String>, Option<String>)> = BTreeMap::new();
        let mut outliers = BTreeSet::new();
        let mut seen = BTreeSet::new();
        for (lemma, attr) in pairs {
            if !seen.insert(lemma.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "attribute lemma",
                    id: lemma.clone(),
                });
            }
            if attr == OUTLIER {
                outliers.insert(lemma.clone());
            } else {
                groups.entry(attr.clone()).or_default().0.push(lemma.clone());
            }
        }
        Self::assemble(groups, outliers, store)
    }

    /// Membership without embeddings: centroids are empty and each exemplar
    /// is the alphabetically first member. Classification skips such sets.
    pub fn membership_only(pairs: &[(String, String)]) -> Result<Self> {
        let mut groups: BTreeMap<String, (Vec<String>, Option<String>)> = BTreeMap::new();
        let mut outliers = BTreeSet::new();
        let mut lookup = HashMap::new();
        for (lemma, attr) in pairs {
            if attr == OUTLIER {
                if !outliers.insert(lemma.clone()) {
                    return Err(Error::DuplicateId {
                        kind: "attribute lemma",
                        id: lemma.clone(),
                    });
                }
            } else {
                groups.entry(attr.clone()).or_default().0.push(lemma.clone());
            }
        }
        let mut attributes = Vec::new();
        for (name, (members, _)) in groups {
            for lemma in &members {
                if lookup.insert(lemma.clone(), attributes.len()).is_some() || outliers.contains(lemma) {
                    return Err(Error::DuplicateId {
                        kind: "attribute lemma",
                        id: lemma.clone(),
                    });
                }
            }
            let members: BTreeSet<String> = members.into_iter().collect();
            attributes.push(Attribute {
                name,
                exemplar: members.iter().next().cloned().unwrap_or_default(),
                members,
                centroid: Vec::new(),
            });
        }
        Ok(AttributeSet {
            attributes,
            outliers,
            lookup,
        })
    }

    /// Builds the set from clustering output over `lemmas`. `curation` maps an
    /// exemplar lemma to an attribute name; clusters sharing a name are merged,
    /// uncurated clusters are named after their exemplar.
    pub fn from_clusters<S: AsRef<str>>(
        lemmas: &[S],
        ap: &ApResult,
        curation: Option<&BTreeMap<String, String>>,
        store: &EmbeddingStore,
    ) -> Result<Self> {
        if lemmas.len() != ap.assignments.len() {
            return Err(Error::InvalidParameter(format!(
                "{} lemmas for {} cluster assignments",
                lemmas.len(),
                ap.assignments.len()
            )));
        }
        let mut groups: BTreeMap<String, (Vec<String>, Option<String>)> = BTreeMap::new();
        let mut outliers = BTreeSet::new();
        for (c, members) in ap.clusters().into_iter().enumerate() {
            let exemplar = lemmas[ap.exemplars[c]].as_ref().to_string();
            let name = curation.and_then(|m| m.get(&exemplar)).cloned().unwrap_or_else(|| exemplar.clone());
            let names: Vec<String> = members.iter().map(|&i| lemmas[i].as_ref().to_string()).collect();
            if name == OUTLIER {
                outliers.extend(names);
                continue;
            }
            let entry = groups.entry(name).or_default();
            // A merged group gets its exemplar recomputed from the centroid.
            entry.1 = if entry.0.is_empty() { Some(exemplar) } else { None };
            entry.0.extend(names);
        }
        Self::assemble(groups, outliers, store)
    }

    /// Attributes sorted by name.
    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.attributes.iter().map(|a| a.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Attribute> {
        self.position(name).map(|i| &self.attributes[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.attributes.binary_search_by(|a| a.name.as_str().cmp(name)).ok()
    }

    pub fn outliers(&self) -> &BTreeSet<String> {
        &self.outliers
    }

    /// Index of the attribute holding `lemma`.
    pub fn attribute_index(&self, lemma: &str) -> Option<usize> {
        self.lookup.get(lemma).copied()
    }

    pub fn attribute_of(&self, lemma: &str) -> Option<&str> {
        self.attribute_index(lemma).map(|i| self.attributes[i].name.as_str())
    }

    /// Lemmas from `lemmas` that are neither attribute members nor outliers.
    pub fn uncovered<'a>(&self, lemmas: impl IntoIterator<Item = &'a str>) -> Vec<&'a str> {
        lemmas
            .into_iter()
            .filter(|l| !self.lookup.contains_key(*l) && !self.outliers.contains(*l))
            .collect()
    }

    /// `(lemma, attribute)` rows for members and outliers, sorted by lemma.
    pub fn assignments(&self) -> Vec<(&str, &str)> {
        let mut rows: Vec<(&str, &str)> = self
            .attributes
            .iter()
            .flat_map(|a| a.members.iter().map(move |l| (l.as_str(), a.name.as_str())))
            .chain(self.outliers.iter().map(|l| (l.as_str(), OUTLIER)))
            .collect();
        rows.sort_unstable();
        rows
    }
}

fn closest_to(members: &[String], centroid: &[f64], store: &EmbeddingStore) -> String {
    let mut best: Option<(f64, &String)> = None;
    for m in members {
        let c = cosine_raw(store.vector(m).expect("checked by caller"), centroid);
        let c = if c.is_nan() { f64::NEG_INFINITY } else { c };
        best = match best {
            Some((bc, bm)) if bc > c || (bc == c && bm <= m) => Some((bc, bm)),
            _ => Some((c, m)),
        };
    }
    best.map(|(_, m)| m.clone()).unwrap_or_default()
}

/// Reads a `lemma,attribute` CSV.
pub fn read_attribute_csv<R: Read>(r: R, source_name: &str) -> Result<Vec<(String, String)>> {
    #[derive(Deserialize)]
    struct Row {
        lemma: String,
        attribute: String,
    }
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::parse(source_name, i + 2, e.to_string()))?;
        out.push((row.lemma.trim().to_string(), row.attribute.trim().to_string()));
    }
    Ok(out)
}

pub fn write_attribute_csv<W: Write>(w: W, set: &AttributeSet) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["lemma", "attribute"]).map_err(csv_err)?;
    for (lemma, attr) in set.assignments() {
        wtr.write_record([lemma, attr]).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("csv", e))
}

/// Writes `lemma,attribute,x,y` with empty coordinates for an external projection.
pub fn write_cluster_export<W: Write>(w: W, set: &AttributeSet) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["lemma", "attribute", "x", "y"]).map_err(csv_err)?;
    for (lemma, attr) in set.assignments() {
        wtr.write_record([lemma, attr, "", ""]).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("csv", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeProbabilities {
    pub names: Vec<String>,
    pub descriptions: usize,
    /// Descriptions containing each attribute.
    pub counts: Vec<u64>,
    /// `joint_counts[i][j]`: descriptions containing both i and j.
    pub joint_counts: Vec<Vec<u64>>,
    pub p: Vec<f64>,
    /// `p_cond[i][j]` = p(aᵢ | aⱼ); `None` when aⱼ never occurs.
    pub p_cond: Vec<Vec<Option<f64>>>,
}

impl AttributeProbabilities {
    /// p(aᵢ ∧ aⱼ).
    pub fn joint(&self, i: usize, j: usize) -> f64 {
        self.joint_counts[i][j] as f64 / self.descriptions as f64
    }
}

/// Fraction of descriptions mentioning each attribute, and conditional
/// co-occurrence probabilities.
pub fn attribute_probabilities(processed: &[ProcessedDescription], set: &AttributeSet) -> Result<AttributeProbabilities> {
    if processed.is_empty() {
        return Err(Error::InsufficientData("no descriptions".into()));
    }
    let k = set.len();
    let presence: Vec<Vec<usize>> = processed
        .par_iter()
        .map(|d| {
            let mut seen = vec![false; k];
            for l in &d.lemmas {
                if let Some(i) = set.attribute_index(l) {
                    seen[i] = true;
                }
            }
            (0..k).filter(|&i| seen[i]).collect()
        })
        .collect();
    let mut counts = vec![0u64; k];
    let mut joint = vec![vec![0u64; k]; k];
    for present in &presence {
        for &i in present {
            counts[i] += 1;
            for &j in present {
                joint[i][j] += 1;
            }
        }
    }
    let n = processed.len() as f64;
    let p = counts.iter().map(|&c| c as f64 / n).collect();
    let p_cond = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| (counts[j] > 0).then(|| joint[i][j] as f64 / counts[j] as f64))
                .collect()
        })
        .collect();
    Ok(AttributeProbabilities {
        names: set.names().map(str::to_string).collect(),
        descriptions: processed.len(),
        counts,
        joint_counts: joint,
        p,
        p_cond,
    })
}

/// Name of the non-excluded attribute whose centroid is most cosine-similar
/// to `vector`; ties go to the name that sorts first.
pub fn classify_vector(vector: &[f64], set: &AttributeSet, excluded: &BTreeSet<String>) -> Option<String> {
    let vnorm = norm(vector);
    if vnorm == 0.0 || !vnorm.is_finite() {
        return None;
    }
    let mut best: Option<(f64, &str)> = None;
    for a in set.attributes() {
        if excluded.contains(&a.name) {
            continue;
        }
        if a.centroid.len() != vector.len() {
            continue;
        }
        let c = cosine_raw(vector, &a.centroid);
        if c.is_nan() {
            continue;
        }
        if best.is_none_or(|(bc, _)| c > bc) {
            best = Some((c, &a.name));
        }
    }
    best.map(|(_, n)| n.to_string())
}

pub fn classify_keyword(word: &str, set: &AttributeSet, store: &EmbeddingStore, excluded: &BTreeSet<String>) -> Result<String> {
    let v = store.vector(word).ok_or_else(|| Error::Unclassifiable(word.to_string()))?;
    classify_vector(v, set, excluded).ok_or_else(|| Error::Unclassifiable(word.to_string()))
}

pub fn default_excluded() -> BTreeSet<String> {
    DEFAULT_EXCLUDED.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledKeyword {
    pub word: String,
    pub attribute: String,
    pub class: String,
}

/// Reads a `word,attribute,class` CSV.
pub fn read_labeled_keywords<R: Read>(r: R, source_name: &str) -> Result<Vec<LabeledKeyword>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<LabeledKeyword>().enumerate() {
        out.push(row.map_err(|e| Error::parse(source_name, i + 2, e.to_string()))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionCell {
    pub class: String,
    pub attribute: String,
    pub true_positives: u64,
    pub predicted: u64,
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionTable {
    pub cells: Vec<PrecisionCell>,
    /// Per attribute: mean precision over classes where it is defined.
    pub averages: BTreeMap<String, Option<f64>>,
    /// Words without an embedding, per class; counted as misses.
    pub unclassified: BTreeMap<String, u64>,
}

impl PrecisionTable {
    pub fn cell(&self, class: &str, attribute: &str) -> Option<&PrecisionCell> {
        self.cells.iter().find(|c| c.class == class && c.attribute == attribute)
    }

    /// CSV `class,attribute,true_positives,predicted,precision` followed by
    /// `average` rows; undefined precision is written as `n/a`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let fmt = |p: Option<f64>| p.map_or_else(|| "n/a".to_string(), |v| v.to_string());
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["class", "attribute", "true_positives", "predicted", "precision"])
            .map_err(csv_err)?;
        for c in &self.cells {
            wtr.write_record([
                c.class.clone(),
                c.attribute.clone(),
                c.true_positives.to_string(),
                c.predicted.to_string(),
                fmt(c.precision),
            ])
            .map_err(csv_err)?;
        }
        for (attr, avg) in &self.averages {
            wtr.write_record(["average".to_string(), attr.clone(), String::new(), String::new(), fmt(*avg)])
                .map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::io("csv", e))
    }
}

/// Precision of keyword classification per (class, attribute):
/// true positives over predicted positives.
pub fn generalization_precision(
    labeled: &[LabeledKeyword],
    set: &AttributeSet,
    store: &EmbeddingStore,
    excluded: &BTreeSet<String>,
) -> PrecisionTable {
    let predictions: Vec<Option<String>> = labeled
        .par_iter()
        .map(|k| classify_keyword(&k.word, set, store, excluded).ok())
        .collect();
    let classes: BTreeSet<&str> = labeled.iter().map(|k| k.class.as_str()).collect();
    let attrs: Vec<&str> = set.names().filter(|n| !excluded.contains(*n)).collect();

    let mut tally: BTreeMap<(&str, &str), (u64, u64)> = BTreeMap::new();
    let mut unclassified: BTreeMap<String, u64> = classes.iter().map(|c| (c.to_string(), 0)).collect();
    for (k, pred) in labeled.iter().zip(&predictions) {
        match pred {
            Some(p) => {
                let e = tally.entry((k.class.as_str(), p.as_str())).or_default();
                e.1 += 1;
                if *p == k.attribute {
                    e.0 += 1;
                }
            }
            None => *unclassified.get_mut(&k.class).expect("class collected") += 1,
        }
    }

    let mut cells = Vec::new();
    let mut averages = BTreeMap::new();
    for &attr in &attrs {
        let mut defined = Vec::new();
        for &class in &classes {
            let (tp, predicted) = tally.get(&(class, attr)).copied().unwrap_or((0, 0));
            let precision = (predicted > 0).then(|| tp as f64 / predicted as f64);
            defined.extend(precision);
            cells.push(PrecisionCell {
                class: class.to_string(),
                attribute: attr.to_string(),
                true_positives: tp,
                predicted,
                precision,
            });
        }
        let avg = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        averages.insert(attr.to_string(), avg);
    }
    PrecisionTable {
        cells,
        averages,
        unclassified,
    }
}
