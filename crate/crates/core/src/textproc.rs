//! Text normalization and token/type/lemma extraction.
//!
//! Pipeline per description: lowercase, replace everything outside `a-z`
//! (keeping hyphens and apostrophes between two letters) with spaces, split on
//! whitespace, optionally spell-correct, drop stop words, lemmatize with a
//! dictionary and identity fallback.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::util::Summary;

const BUNDLED_LEMMAS: &str = include_str!("../data/lemmas.tsv");
const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords.txt");

/// Coarse part-of-speech classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosTag {
    Noun,
    Adjective,
    Verb,
    Adverb,
    Other,
}

impl PosTag {
    pub const ALL: [PosTag; 5] = [
        PosTag::Noun,
        PosTag::Adjective,
        PosTag::Verb,
        PosTag::Adverb,
        PosTag::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Noun => "noun",
            PosTag::Adjective => "adjective",
            PosTag::Verb => "verb",
            PosTag::Adverb => "adverb",
            PosTag::Other => "other",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Accepts the coarse names, Universal Dependencies tags and Penn Treebank tags.
impl FromStr for PosTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim();
        if t.is_empty() {
            return Err("empty POS tag".into());
        }
        let lower = t.to_ascii_lowercase();
        Ok(match lower.as_str() {
            "noun" | "propn" => PosTag::Noun,
            "adjective" | "adj" => PosTag::Adjective,
            "verb" | "aux" => PosTag::Verb,
            "adverb" | "adv" => PosTag::Adverb,
            _ if t.starts_with("NN") => PosTag::Noun,
            _ if t.starts_with("JJ") => PosTag::Adjective,
            _ if t.starts_with("VB") || t == "MD" => PosTag::Verb,
            _ if t.starts_with("RB") || t == "WRB" => PosTag::Adverb,
            _ => PosTag::Other,
        })
    }
}

impl<'de> Deserialize<'de> for PosTagList {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<String>::deserialize(de)?;
        raw.iter()
            .map(|s| s.parse().map_err(serde::de::Error::custom))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(PosTagList)
    }
}

struct PosTagList(Vec<PosTag>);

#[derive(Deserialize)]
struct PosRecord {
    description_id: String,
    tags: PosTagList,
}

/// Reads a POS annotation file: one `{"description_id", "tags": [...]}` per line.
pub fn load_pos_annotations(path: &Path) -> Result<BTreeMap<String, Vec<PosTag>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pos_annotations(&text, &path.display().to_string())
}

pub fn parse_pos_annotations(text: &str, source_name: &str) -> Result<BTreeMap<String, Vec<PosTag>>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PosRecord = serde_json::from_str(line).map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
        if out.insert(rec.description_id.clone(), rec.tags.0).is_some() {
            return Err(Error::parse(
                source_name,
                i + 1,
                format!("duplicate annotation for {}", rec.description_id),
            ));
        }
    }
    Ok(out)
}

/// Surface form to lemma mapping plus the stop-word list.
///
/// Chains in the input (`colours -> colour -> color`) are collapsed so that
/// every lemma maps to itself.
#[derive(Debug, Clone, Default)]
pub struct LemmaDictionary {
    lemmas: HashMap<String, String>,
    stopwords: HashSet<String>,
}

impl LemmaDictionary {
    pub fn new(
        pairs: impl IntoIterator<Item = (String, String)>,
        stopwords: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let mut raw: HashMap<String, String> = HashMap::new();
        for (surface, lemma) in pairs {
            if surface == lemma {
                continue;
            }
            if let Some(prev) = raw.get(&surface) {
                if *prev != lemma {
                    return Err(Error::InvalidParameter(format!(
                        "surface form {surface:?} maps to both {prev:?} and {lemma:?}"
                    )));
                }
            }
            raw.insert(surface, lemma);
        }

        let mut lemmas = HashMap::with_capacity(raw.len());
        for surface in raw.keys() {
            let mut current = surface.as_str();
            let mut steps = 0;
            while let Some(next) = raw.get(current) {
                current = next;
                steps += 1;
                if steps > raw.len() {
                    return Err(Error::InvalidParameter(format!(
                        "lemma cycle through {surface:?}"
                    )));
                }
            }
            lemmas.insert(surface.clone(), current.to_string());
        }

        Ok(LemmaDictionary {
            lemmas,
            stopwords: stopwords.into_iter().map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()).collect(),
        })
    }

    /// The bundled English inflection table and stop-word list.
    pub fn bundled() -> Self {
        let pairs = parse_lemma_tsv(BUNDLED_LEMMAS, "bundled lemmas").expect("bundled lemma table is valid");
        LemmaDictionary::new(pairs, parse_stopwords(BUNDLED_STOPWORDS)).expect("bundled lemma table is acyclic")
    }

    /// Loads the given files, falling back to the bundled resources for any
    /// that are not provided.
    pub fn from_files(lemma_tsv: Option<&Path>, stopwords: Option<&Path>) -> Result<Self> {
        let pairs = match lemma_tsv {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                parse_lemma_tsv(&text, &p.display().to_string())?
            }
            None => parse_lemma_tsv(BUNDLED_LEMMAS, "bundled lemmas")?,
        };
        let stops = match stopwords {
            Some(p) => parse_stopwords(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => parse_stopwords(BUNDLED_STOPWORDS),
        };
        LemmaDictionary::new(pairs, stops)
    }

    pub fn lemma<'a>(&'a self, token: &'a str) -> &'a str {
        self.lemmas.get(token).map(String::as_str).unwrap_or(token)
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(word)
    }

    pub fn is_known_lemma(&self, word: &str) -> bool {
        self.lemmas.values().any(|l| l == word)
    }

    pub fn len(&self) -> usize {
        self.lemmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lemmas.is_empty()
    }
}

pub fn parse_lemma_tsv(text: &str, source_name: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next(), cols.next()) {
            (Some(s), Some(l), None) if !s.trim().is_empty() && !l.trim().is_empty() => {
                pairs.push((s.trim().to_lowercase(), l.trim().to_lowercase()))
            }
            _ => return Err(Error::parse(source_name, i + 1, "expected two tab-separated columns")),
        }
    }
    Ok(pairs)
}

pub fn parse_stopwords(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// Lowercases and splits raw text into normalized word tokens.
pub fn normalize(text: &str) -> Vec<String> {
    let lower: Vec<char> = text
        .to_lowercase()
        .chars()
        .map(|c| if c == '\u{2019}' { '\'' } else { c })
        .collect();
    let mut cleaned = String::with_capacity(lower.len());
    for (i, &c) in lower.iter().enumerate() {
        let keep = match c {
            'a'..='z' => true,
            '-' | '\'' => {
                let before = i > 0 && lower[i - 1].is_ascii_lowercase();
                let after = lower.get(i + 1).is_some_and(|n| n.is_ascii_lowercase());
                before && after
            }
            _ => false,
        };
        cleaned.push(if keep { c } else { ' ' });
    }
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Edit-distance-1 spelling correction against corpus word frequencies.
///
/// A token is only replaced when it is rare (frequency below `rare_below`)
/// and its best candidate is at least `dominance` times more frequent.
#[derive(Debug, Clone)]
pub struct SpellChecker {
    vocabulary: HashMap<String, u64>,
    rare_below: u64,
    dominance: u64,
}

impl SpellChecker {
    pub fn new(vocabulary: HashMap<String, u64>) -> Self {
        SpellChecker {
            vocabulary,
            rare_below: 3,
            dominance: 10,
        }
    }

    /// Builds the vocabulary from normalized tokens of the given texts.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocabulary: HashMap<String, u64> = HashMap::new();
        for t in texts {
            for tok in normalize(t) {
                *vocabulary.entry(tok).or_default() += 1;
            }
        }
        SpellChecker::new(vocabulary)
    }

    pub fn with_thresholds(mut self, rare_below: u64, dominance: u64) -> Self {
        self.rare_below = rare_below;
        self.dominance = dominance;
        self
    }

    pub fn frequency(&self, word: &str) -> u64 {
        self.vocabulary.get(word).copied().unwrap_or(0)
    }

    pub fn correct<'a>(&self, token: &'a str) -> Cow<'a, str> {
        let freq = self.frequency(token);
        if freq >= self.rare_below {
            return Cow::Borrowed(token);
        }
        let needed = self.dominance.saturating_mul(freq.max(1));
        let mut best: Option<(u64, String)> = None;
        for cand in edit1_candidates(token) {
            let f = self.frequency(&cand);
            if f < needed {
                continue;
            }
            let better = match &best {
                None => true,
                Some((bf, bw)) => f > *bf || (f == *bf && cand < *bw),
            };
            if better {
                best = Some((f, cand));
            }
        }
        match best {
            Some((_, w)) => Cow::Owned(w),
            None => Cow::Borrowed(token),
        }
    }
}

/// All strings one deletion, adjacent transposition, substitution or
/// insertion (over `a-z`) away from `word`.
pub fn edit1_candidates(word: &str) -> BTreeSet<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    let mut out = BTreeSet::new();
    let rebuild = |v: &[char]| v.iter().collect::<String>();
    for i in 0..n {
        let mut v = chars.clone();
        v.remove(i);
        out.insert(rebuild(&v));
    }
    for i in 0..n.saturating_sub(1) {
        let mut v = chars.clone();
        v.swap(i, i + 1);
        out.insert(rebuild(&v));
    }
    for i in 0..n {
        for c in 'a'..='z' {
            let mut v = chars.clone();
            v[i] = c;
            out.insert(rebuild(&v));
        }
    }
    for i in 0..=n {
        for c in 'a'..='z' {
            let mut v = chars.clone();
            v.insert(i, c);
            out.insert(rebuild(&v));
        }
    }
    out.remove(word);
    out.remove("");
    out
}

#[derive(Debug, Clone, Default)]
pub enum SpellPolicy {
    #[default]
    Off,
    EditDistanceOne(SpellChecker),
}

impl SpellPolicy {
    fn apply<'a>(&self, token: &'a str) -> Cow<'a, str> {
        match self {
            SpellPolicy::Off => Cow::Borrowed(token),
            SpellPolicy::EditDistanceOne(checker) => checker.correct(token),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessedDescription {
    pub description_id: String,
    pub tokens: Vec<String>,
    pub types: BTreeSet<String>,
    pub lemmas: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_tags: Option<Vec<PosTag>>,
    /// Whitespace word count of the raw text, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_words: Option<usize>,
}

impl ProcessedDescription {
    pub fn distinct_lemmas(&self) -> BTreeSet<&str> {
        self.lemmas.iter().map(String::as_str).collect()
    }
}

pub fn preprocess(
    description_id: &str,
    text: &str,
    dict: &LemmaDictionary,
    spell: &SpellPolicy,
) -> ProcessedDescription {
    let mut tokens = Vec::new();
    let mut lemmas = Vec::new();
    for raw in normalize(text) {
        let token = spell.apply(&raw);
        if dict.is_stopword(&token) {
            continue;
        }
        let lemma = dict.lemma(&token);
        if dict.is_stopword(lemma) {
            continue;
        }
        lemmas.push(lemma.to_string());
        tokens.push(token.into_owned());
    }
    let types = tokens.iter().cloned().collect();
    ProcessedDescription {
        description_id: description_id.to_string(),
        tokens,
        types,
        lemmas,
        pos_tags: None,
        raw_words: Some(text.split_whitespace().count()),
    }
}

/// Processes every valid description of the corpus, attaching POS tags when
/// the corpus carries annotations. Output is sorted by description id.
pub fn process_corpus(corpus: &Corpus, dict: &LemmaDictionary, spell: &SpellPolicy) -> Vec<ProcessedDescription> {
    let valid: Vec<_> = corpus.valid_descriptions().collect();
    let mut out: Vec<ProcessedDescription> = valid
        .par_iter()
        .map(|d| {
            let mut p = preprocess(&d.id, &d.text, dict, spell);
            p.pos_tags = corpus.pos_annotations().get(&d.id).cloned();
            p
        })
        .collect();
    out.sort_by(|a, b| a.description_id.cmp(&b.description_id));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub length: usize,
    pub raw: usize,
    pub processed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosShare {
    pub tag: PosTag,
    pub total: usize,
    /// Per-description fraction of tags of this class.
    pub fraction: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextStats {
    pub descriptions: usize,
    pub total_tokens: usize,
    pub total_types: usize,
    pub total_lemmas: usize,
    pub distinct_types: usize,
    pub distinct_lemmas: usize,
    pub tokens: Summary,
    pub types: Summary,
    pub lemmas: Summary,
    pub length_histogram: Vec<LengthBin>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pos: Vec<PosShare>,
}

/// Corpus-level and per-description counts. Per description, `lemmas` counts
/// distinct lemmas; totals are sums of the per-description counts.
pub fn corpus_stats(processed: &[ProcessedDescription]) -> Result<TextStats> {
    if processed.is_empty() {
        return Err(Error::InsufficientData("no processed descriptions".into()));
    }
    let tokens: Vec<f64> = processed.iter().map(|p| p.tokens.len() as f64).collect();
    let types: Vec<f64> = processed.iter().map(|p| p.types.len() as f64).collect();
    let lemmas: Vec<f64> = processed.iter().map(|p| p.distinct_lemmas().len() as f64).collect();

    let mut histogram: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for p in processed {
        histogram.entry(p.tokens.len()).or_default().1 += 1;
        if let Some(raw) = p.raw_words {
            histogram.entry(raw).or_default().0 += 1;
        }
    }

    let mut pos = Vec::new();
    let tagged: Vec<&Vec<PosTag>> = processed
        .iter()
        .filter_map(|p| p.pos_tags.as_ref())
        .filter(|t| !t.is_empty())
        .collect();
    if !tagged.is_empty() {
        for tag in PosTag::ALL {
            let fractions: Vec<f64> = tagged
                .iter()
                .map(|tags| tags.iter().filter(|&&t| t == tag).count() as f64 / tags.len() as f64)
                .collect();
            let total = tagged.iter().map(|tags| tags.iter().filter(|&&t| t == tag).count()).sum();
            pos.push(PosShare {
                tag,
                total,
                fraction: Summary::of(&fractions).expect("non-empty"),
            });
        }
    }

    let distinct_types: BTreeSet<&str> = processed.iter().flat_map(|p| p.tokens.iter().map(String::as_str)).collect();
    let distinct_lemmas: BTreeSet<&str> = processed.iter().flat_map(|p| p.lemmas.iter().map(String::as_str)).collect();

    Ok(TextStats {
        descriptions: processed.len(),
        total_tokens: processed.iter().map(|p| p.tokens.len()).sum(),
        total_types: processed.iter().map(|p| p.types.len()).sum(),
        total_lemmas: processed.iter().map(|p| p.distinct_lemmas().len()).sum(),
        distinct_types: distinct_types.len(),
        distinct_lemmas: distinct_lemmas.len(),
        tokens: Summary::of(&tokens).expect("non-empty"),
        types: Summary::of(&types).expect("non-empty"),
        lemmas: Summary::of(&lemmas).expect("non-empty"),
        length_histogram: histogram
            .into_iter()
            .map(|(length, (raw, processed))| LengthBin { length, raw, processed })
            .collect(),
        pos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dict(pairs: &[(&str, &str)], stops: &[&str]) -> LemmaDictionary {
        LemmaDictionary::new(
            pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())),
            stops.iter().map(|s| s.to_string()),
        )
        .unwrap()
    }

    #[test]
    fn basic_pipeline() {
        let d = dict(&[], &["the", "is"]);
        let p = preprocess("d1", "The fabric is SOFT, soft!", &d, &SpellPolicy::Off);
        assert_eq!(p.tokens, ["fabric", "soft", "soft"]);
        assert_eq!(p.types, ["fabric", "soft"].iter().map(|s| s.to_string()).collect());
        assert_eq!(p.lemmas, ["fabric", "soft", "soft"]);
        assert_eq!(p.raw_words, Some(5));
    }

    #[test]
    fn lexeme_maps_to_lemma() {
        let d = dict(&[("colors", "color"), ("colored", "color"), ("coloring", "color")], &[]);
        let p = preprocess("d", "colors colored coloring", &d, &SpellPolicy::Off);
        assert_eq!(p.lemmas, ["color", "color", "color"]);
        assert_eq!(p.tokens, ["colors", "colored", "coloring"]);
    }

    #[test]
    fn chains_collapse_and_cycles_fail() {
        let d = dict(&[("colours", "colour"), ("colour", "color")], &[]);
        assert_eq!(d.lemma("colours"), "color");
        assert_eq!(d.lemma("color"), "color");
        let err = LemmaDictionary::new(
            [("a", "b"), ("b", "a")].iter().map(|(x, y)| (x.to_string(), y.to_string())),
            Vec::<String>::new(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn bundled_resources_load() {
        let d = LemmaDictionary::bundled();
        assert_eq!(d.lemma("stripes"), "stripe");
        assert_eq!(d.lemma("colours"), "color");
        assert_eq!(d.lemma("woven"), "weave");
        assert!(d.is_stopword("the"));
        for color in ["red", "white", "black", "blue", "green", "grey", "brown"] {
            assert!(!d.is_stopword(color), "{color} must not be a stop word");
        }
    }

    #[test]
    fn normalization_keeps_intra_word_marks() {
        assert_eq!(normalize("Dark-blue, it's 100% 'wool'-ish -- ok"), ["dark-blue", "it's", "wool", "ish", "ok"]);
        assert_eq!(normalize("fabric\u{2019}s"), ["fabric's"]);
        assert_eq!(normalize("Ünïcode"), ["n", "code"]);
    }

    // Damerau-Levenshtein restricted to adjacent transpositions (optimal string alignment).
    fn osa_distance(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
                if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                    d[i][j] = d[i][j].min(d[i - 2][j - 2] + 1);
                }
            }
        }
        d[a.len()][b.len()]
    }

    /// Independent oracle: scan the vocabulary for distance-1 words and pick
    /// the most frequent eligible one.
    fn oracle_correct(token: &str, vocab: &HashMap<String, u64>) -> String {
        let f = vocab.get(token).copied().unwrap_or(0);
        if f >= 3 {
            return token.to_string();
        }
        let mut words: Vec<(&String, &u64)> = vocab
            .iter()
            .filter(|(w, &c)| c >= 10 * f.max(1) && osa_distance(token, w) == 1)
            .collect();
        words.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        words.first().map(|(w, _)| (*w).clone()).unwrap_or_else(|| token.to_string())
    }

    #[test]
    fn spell_correction_matches_enumeration_oracle() {
        let vocab: HashMap<String, u64> = [
            ("soft", 50u64),
            ("sort", 12),
            ("soot", 4),
            ("silk", 30),
            ("silky", 8),
            ("softt", 1),
            ("wool", 40),
            ("woll", 2),
            ("red", 100),
            ("rde", 1),
        ]
        .iter()
        .map(|(w, c)| (w.to_string(), *c))
        .collect();
        let checker = SpellChecker::new(vocab.clone());
        assert_eq!(checker.correct("softt"), "soft");
        for tok in ["softt", "sofd", "sillk", "woll", "wol", "rde", "xyz", "silky", "sot", "wool"] {
            assert_eq!(checker.correct(tok), oracle_correct(tok, &vocab), "token {tok}");
        }
        let d = dict(&[], &[]);
        let p = preprocess("d", "softt", &d, &SpellPolicy::EditDistanceOne(checker));
        assert_eq!(p.tokens, ["soft"]);
    }

    #[test]
    fn edit1_candidate_count() {
        // n deletions + (n-1) transpositions + 25n substitutions + 26(n+1) insertions, minus duplicates.
        let c = edit1_candidates("ab");
        assert!(c.contains("a") && c.contains("ba") && c.contains("abc") && c.contains("xb"));
        assert!(!c.contains("ab"));
        for w in &c {
            assert_eq!(osa_distance("ab", w), 1, "{w}");
        }
    }

    #[test]
    fn stats_totals_and_medians() {
        let mk = |id: &str, n: usize| ProcessedDescription {
            description_id: id.into(),
            tokens: (0..n).map(|i| format!("w{i}")).collect(),
            types: (0..n).map(|i| format!("w{i}")).collect(),
            lemmas: (0..n).map(|i| format!("w{i}")).collect(),
            pos_tags: None,
            raw_words: Some(n + 3),
        };
        let one = corpus_stats(&[mk("a", 5)]).unwrap();
        assert_eq!(one.tokens.mean, 5.0);
        assert_eq!(one.tokens.median, 5.0);

        let two = corpus_stats(&[mk("a", 10), mk("b", 20)]).unwrap();
        assert_eq!(two.tokens.mean, 15.0);
        assert_eq!(two.tokens.median, 15.0);
        assert_eq!(two.total_tokens, 30);
        assert_eq!(two.distinct_types, 20);
        assert_eq!(
            two.length_histogram,
            vec![
                LengthBin { length: 10, raw: 0, processed: 1 },
                LengthBin { length: 13, raw: 1, processed: 0 },
                LengthBin { length: 20, raw: 0, processed: 1 },
                LengthBin { length: 23, raw: 1, processed: 0 },
            ]
        );
        assert!(corpus_stats(&[]).is_err());
    }

    #[test]
    fn pos_distribution() {
        let mut p = preprocess("a", "red soft wool", &dict(&[], &[]), &SpellPolicy::Off);
        p.pos_tags = Some(vec![PosTag::Adjective, PosTag::Adjective, PosTag::Noun, PosTag::Other]);
        let s = corpus_stats(&[p]).unwrap();
        let adj = s.pos.iter().find(|x| x.tag == PosTag::Adjective).unwrap();
        assert_eq!(adj.total, 2);
        assert_eq!(adj.fraction.median, 0.5);
    }

    #[test]
    fn pos_annotation_parsing() {
        let text = "{\"description_id\":\"d1\",\"tags\":[\"NOUN\",\"JJ\",\"adverb\",\"DET\"]}\n";
        let m = parse_pos_annotations(text, "pos").unwrap();
        assert_eq!(m["d1"], [PosTag::Noun, PosTag::Adjective, PosTag::Adverb, PosTag::Other]);
        assert!(parse_pos_annotations("{\"description_id\":1}", "pos").is_err());
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(text in "[A-Za-z ,.'!-]{0,80}") {
            let d = LemmaDictionary::bundled();
            let vocab = SpellChecker::from_texts(["the soft soft soft red wool wool wool fabric is nice", text.as_str()]);
            let spell = SpellPolicy::EditDistanceOne(vocab);
            let once = preprocess("x", &text, &d, &spell);
            let twice = preprocess("x", &once.tokens.join(" "), &d, &spell);
            prop_assert_eq!(&once.tokens, &twice.tokens);
            prop_assert_eq!(&once.lemmas, &twice.lemmas);
            prop_assert_eq!(once.tokens.len(), once.lemmas.len());
            for (tok, lem) in once.tokens.iter().zip(&once.lemmas) {
                prop_assert!(!d.is_stopword(lem));
                prop_assert!(lem == tok || d.lemma(tok) == lem);
            }
            let types: BTreeSet<String> = once.tokens.iter().cloned().collect();
            prop_assert_eq!(types, once.types);
        }
    }
}
