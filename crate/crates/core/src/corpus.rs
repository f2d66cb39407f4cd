//! Corpus data model, ingestion, validation and audit.
//!
//! A corpus is built from flat description records (JSONL or CSV). Images and
//! describers are derived from those records, so every description is linked
//! to an existing image and describer by construction; [`Corpus::from_parts`]
//! checks the links when the parts come from elsewhere.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::PosTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Baseline,
    Sphere,
    SphereDraped,
    Plane,
    PlaneDraped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lighting {
    Baseline,
    Outdoor,
    Studio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Accepted,
    RejectedGeneric,
    RejectedWrong,
    RejectedGrammar,
    #[default]
    Unaudited,
}

impl Status {
    pub fn is_rejected(self) -> bool {
        matches!(
            self,
            Status::RejectedGeneric | Status::RejectedWrong | Status::RejectedGrammar
        )
    }

    /// Accepted or not yet audited. Public exports carry no audit labels, so
    /// unaudited descriptions count as valid.
    pub fn is_valid(self) -> bool {
        !self.is_rejected()
    }
}

macro_rules! snake_enum_str {
    ($ty:ty, $($variant:path => $name:literal),+ $(,)?) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.trim() {
                    $($name => Ok($variant),)+
                    other => Err(format!("unknown {} value {other:?}", stringify!($ty).to_lowercase())),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

snake_enum_str!(Geometry,
    Geometry::Baseline => "baseline",
    Geometry::Sphere => "sphere",
    Geometry::SphereDraped => "sphere_draped",
    Geometry::Plane => "plane",
    Geometry::PlaneDraped => "plane_draped",
);

snake_enum_str!(Lighting,
    Lighting::Baseline => "baseline",
    Lighting::Outdoor => "outdoor",
    Lighting::Studio => "studio",
);

snake_enum_str!(Status,
    Status::Accepted => "accepted",
    Status::RejectedGeneric => "rejected_generic",
    Status::RejectedWrong => "rejected_wrong",
    Status::RejectedGrammar => "rejected_grammar",
    Status::Unaudited => "unaudited",
);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Describer {
    pub id: String,
    pub description_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderImage {
    pub image_id: String,
    pub material_id: String,
    pub geometry: Geometry,
    pub lighting: Lighting,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub id: String,
    pub image_id: String,
    pub describer_id: String,
    pub text: String,
    pub status: Status,
    pub rating: Option<u8>,
}

impl Description {
    /// Whitespace-separated words of the raw text, before any normalization.
    pub fn raw_word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// One flat input record, as found in JSONL lines and CSV rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub id: String,
    pub image_id: String,
    pub material_id: String,
    pub geometry: String,
    pub lighting: String,
    pub describer_id: String,
    pub text: String,
    #[serde(default)]
    pub status: Option<String>,
    #[serde(default, deserialize_with = "de_rating")]
    pub rating: Option<i64>,
}

// Accepts a JSON number, a numeric string, or an empty CSV cell.
fn de_rating<'de, D>(de: D) -> std::result::Result<Option<i64>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(i64),
        Str(String),
    }
    match Option::<Raw>::deserialize(de)? {
        None => Ok(None),
        Some(Raw::Int(v)) => Ok(Some(v)),
        Some(Raw::Str(s)) if s.trim().is_empty() => Ok(None),
        Some(Raw::Str(s)) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| serde::de::Error::custom(format!("invalid rating {s:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "jsonl" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" | "json" => Some(InputFormat::Jsonl),
            "csv" => Some(InputFormat::Csv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    describers: Vec<Describer>,
    images: Vec<RenderImage>,
    descriptions: Vec<Description>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pos_annotations: BTreeMap<String, Vec<PosTag>>,
}

impl Corpus {
    /// Assembles a corpus, checking id uniqueness and that every description
    /// points at a known image and describer. Describer counts are recomputed.
    pub fn from_parts(
        describer_ids: impl IntoIterator<Item = String>,
        images: Vec<RenderImage>,
        descriptions: Vec<Description>,
    ) -> Result<Self> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for id in describer_ids {
            if counts.insert(id.clone(), 0).is_some() {
                return Err(Error::DuplicateId {
                    kind: "describer",
                    id,
                });
            }
        }

        let mut image_ids = BTreeSet::new();
        let mut variants = BTreeSet::new();
        for image in &images {
            if !image_ids.insert(image.image_id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "image",
                    id: image.image_id.clone(),
                });
            }
            if !variants.insert((image.material_id.as_str(), image.geometry, image.lighting)) {
                return Err(Error::DuplicateId {
                    kind: "image variant",
                    id: format!("{}/{}/{}", image.material_id, image.geometry, image.lighting),
                });
            }
        }

        let mut description_ids = BTreeSet::new();
        for d in &descriptions {
            if !description_ids.insert(d.id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "description",
                    id: d.id.clone(),
                });
            }
            if let Some(r) = d.rating {
                check_rating(i64::from(r))?;
            }
            if !image_ids.contains(d.image_id.as_str()) {
                return Err(Error::DanglingReference {
                    description: d.id.clone(),
                    kind: "image",
                    id: d.image_id.clone(),
                });
            }
            match counts.get_mut(&d.describer_id) {
                Some(c) => *c += 1,
                None => {
                    return Err(Error::DanglingReference {
                        description: d.id.clone(),
                        kind: "describer",
                        id: d.describer_id.clone(),
                    })
                }
            }
        }

        let describers = counts
            .into_iter()
            .map(|(id, description_count)| Describer {
                id,
                description_count,
            })
            .collect();
        Ok(Corpus {
            describers,
            images,
            descriptions,
            pos_annotations: BTreeMap::new(),
        })
    }

    /// Builds a corpus from flat records. `source_name` is used in error messages
    /// and `lines[i]` is the 1-based line of record `i`.
    pub fn from_records(records: Vec<DescriptionRecord>, source_name: &str, lines: &[usize]) -> Result<Self> {
        let mut images: BTreeMap<String, RenderImage> = BTreeMap::new();
        let mut describer_ids = BTreeSet::new();
        let mut descriptions = Vec::with_capacity(records.len());

        for (i, rec) in records.into_iter().enumerate() {
            let line = lines.get(i).copied().unwrap_or(i + 1);
            let bad = |msg: String| Error::parse(source_name, line, msg);
            let geometry: Geometry = rec.geometry.parse().map_err(bad)?;
            let lighting: Lighting = rec.lighting.parse().map_err(bad)?;
            let status = match rec.status.as_deref().map(str::trim) {
                None | Some("") => Status::Unaudited,
                Some(s) => s.parse().map_err(bad)?,
            };
            let rating = match rec.rating {
                None => None,
                Some(r) => {
                    check_rating(r).map_err(|e| bad(e.to_string()))?;
                    Some(r as u8)
                }
            };
            let image = RenderImage {
                image_id: rec.image_id.clone(),
                material_id: rec.material_id,
                geometry,
                lighting,
            };
            match images.get(&rec.image_id) {
                Some(existing) if *existing != image => {
                    return Err(bad(format!(
                        "image {} redeclared with different material/geometry/lighting",
                        rec.image_id
                    )))
                }
                Some(_) => {}
                None => {
                    images.insert(rec.image_id.clone(), image);
                }
            }
            describer_ids.insert(rec.describer_id.clone());
            descriptions.push(Description {
                id: rec.id,
                image_id: rec.image_id,
                describer_id: rec.describer_id,
                text: rec.text,
                status,
                rating,
            });
        }

        Corpus::from_parts(describer_ids, images.into_values().collect(), descriptions)
    }

    pub fn describers(&self) -> &[Describer] {
        &self.describers
    }

    pub fn images(&self) -> &[RenderImage] {
        &self.images
    }

    pub fn descriptions(&self) -> &[Description] {
        &self.descriptions
    }

    pub fn len(&self) -> usize {
        self.descriptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptions.is_empty()
    }

    pub fn valid_descriptions(&self) -> impl Iterator<Item = &Description> {
        self.descriptions.iter().filter(|d| d.status.is_valid())
    }

    pub fn description(&self, id: &str) -> Option<&Description> {
        self.descriptions.iter().find(|d| d.id == id)
    }

    /// Flat records in description order, suitable for re-ingestion.
    pub fn records(&self) -> Vec<DescriptionRecord> {
        let images: HashMap<&str, &RenderImage> = self.images.iter().map(|i| (i.image_id.as_str(), i)).collect();
        self.descriptions
            .iter()
            .map(|d| {
                let img = images[d.image_id.as_str()];
                DescriptionRecord {
                    id: d.id.clone(),
                    image_id: d.image_id.clone(),
                    material_id: img.material_id.clone(),
                    geometry: img.geometry.as_str().to_string(),
                    lighting: img.lighting.as_str().to_string(),
                    describer_id: d.describer_id.clone(),
                    text: d.text.clone(),
                    status: Some(d.status.as_str().to_string()),
                    rating: d.rating.map(i64::from),
                }
            })
            .collect()
    }

    /// Writes [`Corpus::records`] as JSONL.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in self.records() {
            let line = serde_json::to_string(&r).expect("records serialize");
            writeln!(w, "{line}").map_err(|e| Error::io("jsonl", e))?;
        }
        w.flush().map_err(|e| Error::io("jsonl", e))
    }

    pub fn pos_annotations(&self) -> &BTreeMap<String, Vec<PosTag>> {
        &self.pos_annotations
    }

    /// Attaches POS tags per description id. Unknown ids are rejected.
    pub fn with_pos_annotations(mut self, annotations: BTreeMap<String, Vec<PosTag>>) -> Result<Self> {
        let ids: BTreeSet<&str> = self.descriptions.iter().map(|d| d.id.as_str()).collect();
        if let Some(unknown) = annotations.keys().find(|k| !ids.contains(k.as_str())) {
            return Err(Error::UnknownDescription(unknown.clone()));
        }
        self.pos_annotations = annotations;
        Ok(self)
    }
}

fn check_rating(r: i64) -> Result<()> {
    if (1..=5).contains(&r) {
        Ok(())
    } else {
        Err(Error::RatingOutOfRange(r))
    }
}

/// Reads a corpus file. Parse errors carry the 1-based line number.
pub fn ingest(path: &Path, format: InputFormat) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    match format {
        InputFormat::Jsonl => ingest_jsonl(BufReader::new(file), &name),
        InputFormat::Csv => ingest_csv(file, &name),
    }
}

pub fn ingest_jsonl<R: BufRead>(reader: R, source_name: &str) -> Result<Corpus> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, line_no, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DescriptionRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(source_name, line_no, e.to_string()))?;
        records.push(rec);
        lines.push(line_no);
    }
    Corpus::from_records(records, source_name, &lines)
}

pub fn ingest_csv<R: Read>(reader: R, source_name: &str) -> Result<Corpus> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(source_name, 1, e.to_string()))?
        .clone();
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(source_name, line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let rec: DescriptionRecord = row
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(source_name, line, e.to_string()))?;
        records.push(rec);
        lines.push(line);
    }
    Corpus::from_records(records, source_name, &lines)
}

/// Which descriptions form the denominator of a describer's share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShareBasis {
    #[default]
    ValidOnly,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPolicy {
    pub min_words: usize,
    pub max_words: usize,
    pub min_count: usize,
    pub max_share: f64,
    pub share_basis: ShareBasis,
    pub min_valid: usize,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        ValidationPolicy {
            min_words: 20,
            max_words: 100,
            min_count: 10,
            max_share: 0.09,
            share_basis: ShareBasis::ValidOnly,
            min_valid: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthFlag {
    TooShort { description_id: String, words: usize },
    TooLong { description_id: String, words: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DescriberFlag {
    BelowMinimum { describer_id: String, count: usize },
    OverShare { describer_id: String, share: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFlag {
    pub image_id: String,
    pub valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ValidationReport {
    pub length: Vec<LengthFlag>,
    pub describers: Vec<DescriberFlag>,
    pub images: Vec<ImageFlag>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.length.is_empty() && self.describers.is_empty() && self.images.is_empty()
    }
}

/// Checks collection constraints. Report only; the corpus is not modified.
pub fn validate(corpus: &Corpus, policy: &ValidationPolicy) -> ValidationReport {
    let mut report = ValidationReport::default();

    for d in &corpus.descriptions {
        let words = d.raw_word_count();
        if words < policy.min_words {
            report.length.push(LengthFlag::TooShort {
                description_id: d.id.clone(),
                words,
            });
        } else if words > policy.max_words {
            report.length.push(LengthFlag::TooLong {
                description_id: d.id.clone(),
                words,
            });
        }
    }

    let mut per_describer: HashMap<&str, (usize, usize)> = HashMap::new();
    for d in &corpus.descriptions {
        let e = per_describer.entry(d.describer_id.as_str()).or_default();
        e.0 += 1;
        if d.status.is_valid() {
            e.1 += 1;
        }
    }
    let (total_all, total_valid) = per_describer
        .values()
        .fold((0, 0), |(a, v), &(da, dv)| (a + da, v + dv));
    let denominator = match policy.share_basis {
        ShareBasis::ValidOnly => total_valid,
        ShareBasis::All => total_all,
    };
    for describer in &corpus.describers {
        let (all, valid) = per_describer
            .get(describer.id.as_str())
            .copied()
            .unwrap_or((0, 0));
        if all < policy.min_count {
            report.describers.push(DescriberFlag::BelowMinimum {
                describer_id: describer.id.clone(),
                count: all,
            });
        }
        if denominator > 0 {
            let numerator = match policy.share_basis {
                ShareBasis::ValidOnly => valid,
                ShareBasis::All => all,
            };
            let share = numerator as f64 / denominator as f64;
            if share > policy.max_share {
                report.describers.push(DescriberFlag::OverShare {
                    describer_id: describer.id.clone(),
                    share,
                });
            }
        }
    }

    let mut valid_per_image: HashMap<&str, usize> = HashMap::new();
    for d in corpus.valid_descriptions() {
        *valid_per_image.entry(d.image_id.as_str()).or_default() += 1;
    }
    for image in &corpus.images {
        let valid = valid_per_image.get(image.image_id.as_str()).copied().unwrap_or(0);
        if valid < policy.min_valid {
            report.images.push(ImageFlag {
                image_id: image.image_id.clone(),
                valid,
            });
        }
    }

    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub description_id: String,
    pub status: Status,
    #[serde(default)]
    pub rating: Option<u8>,
}

/// Reads audit entries, one JSON object per line; blank lines are skipped.
pub fn read_audits<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<AuditEntry>> {
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

/// Applies manual audit labels, then rejects every still-unaudited description
/// of a describer whose rejection rate among this batch's audited descriptions
/// exceeds `cascade_threshold`.
pub fn audit_apply(corpus: &Corpus, audits: &[AuditEntry], cascade_threshold: f64) -> Result<Corpus> {
    if !(cascade_threshold > 0.0 && cascade_threshold <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "cascade threshold {cascade_threshold} outside (0, 1]"
        )));
    }
    let index: HashMap<&str, usize> = corpus
        .descriptions
        .iter()
        .enumerate()
        .map(|(i, d)| (d.id.as_str(), i))
        .collect();

    let mut out = corpus.clone();
    let mut audited = vec![false; out.descriptions.len()];
    let mut rates: HashMap<String, (usize, usize)> = HashMap::new();

    for entry in audits {
        let &i = index
            .get(entry.description_id.as_str())
            .ok_or_else(|| Error::UnknownDescription(entry.description_id.clone()))?;
        if entry.status == Status::Unaudited {
            return Err(Error::InvalidParameter(format!(
                "audit of {} must assign a status",
                entry.description_id
            )));
        }
        if audited[i] {
            return Err(Error::DuplicateId {
                kind: "audit entry",
                id: entry.description_id.clone(),
            });
        }
        if let Some(r) = entry.rating {
            check_rating(i64::from(r))?;
        }
        audited[i] = true;
        let d = &mut out.descriptions[i];
        d.status = entry.status;
        d.rating = entry.rating;
        let rate = rates.entry(d.describer_id.clone()).or_default();
        rate.0 += 1;
        if entry.status.is_rejected() {
            rate.1 += 1;
        }
    }

    for d in out.descriptions.iter_mut() {
        if d.status != Status::Unaudited {
            continue;
        }
        if let Some(&(n, rejected)) = rates.get(&d.describer_id) {
            if rejected as f64 / n as f64 > cascade_threshold {
                d.status = Status::RejectedGeneric;
            }
        }
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, image: &str, describer: &str, words: usize) -> String {
        let text = vec!["soft"; words].join(" ");
        format!(
            r#"{{"id":"{id}","image_id":"{image}","material_id":"m-{image}","geometry":"baseline","lighting":"baseline","describer_id":"{describer}","text":"{text}"}}"#
        )
    }

    fn corpus_from(lines: &[String]) -> Result<Corpus> {
        ingest_jsonl(lines.join("\n").as_bytes(), "test.jsonl")
    }

    #[test]
    fn three_line_jsonl() {
        let c = corpus_from(&[
            record("d1", "i1", "a", 25),
            record("d2", "i1", "b", 25),
            record("d3", "i1", "a", 25),
        ])
        .unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.images().len(), 1);
        assert_eq!(c.describers().len(), 2);
        assert_eq!(c.describers()[0].description_count, 2);
        assert!(c.descriptions().iter().all(|d| d.status == Status::Unaudited));
    }

    #[test]
    fn jsonl_round_trip() {
        let c = corpus_from(&[record("d1", "i1", "a", 25), record("d2", "i2", "b", 5)]).unwrap();
        let c = audit_apply(
            &c,
            &[AuditEntry {
                description_id: "d2".into(),
                status: Status::RejectedWrong,
                rating: Some(2),
            }],
            0.35,
        )
        .unwrap();
        let mut out = Vec::new();
        c.write_jsonl(&mut out).unwrap();
        assert_eq!(ingest_jsonl(out.as_slice(), "rt").unwrap(), c);
        let audits = read_audits(r#"{"description_id":"d1","status":"accepted"}"#.as_bytes(), "a").unwrap();
        assert_eq!(audits[0].rating, None);
    }

    #[test]
    fn rating_out_of_range_is_rejected_with_line() {
        let bad = r#"{"id":"d2","image_id":"i1","material_id":"m","geometry":"plane","lighting":"studio","describer_id":"a","text":"x","rating":7}"#;
        let err = corpus_from(&[record("d1", "i1", "a", 3), bad.to_string()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rating out of range"), "{msg}");
        assert!(msg.contains(":2:"), "{msg}");
    }

    #[test]
    fn duplicate_description_id() {
        let err = corpus_from(&[record("d1", "i1", "a", 3), record("d1", "i1", "b", 3)]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { kind: "description", .. }));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = corpus_from(&[record("d1", "i1", "a", 3), "{not json".into()]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn dangling_reference_from_parts() {
        let err = Corpus::from_parts(
            ["a".to_string()],
            vec![],
            vec![Description {
                id: "d".into(),
                image_id: "nope".into(),
                describer_id: "a".into(),
                text: String::new(),
                status: Status::Unaudited,
                rating: None,
            }],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DanglingReference { kind: "image", .. }));
    }

    #[test]
    fn csv_with_quoted_text() {
        let data = "id,image_id,material_id,geometry,lighting,describer_id,text,status,rating\n\
                    d1,i1,m1,sphere,outdoor,a,\"soft, red \"\"wool\"\"\",accepted,4\n\
                    d2,i1,m1,sphere,outdoor,b,plain,,\n";
        let c = ingest_csv(data.as_bytes(), "t.csv").unwrap();
        assert_eq!(c.descriptions()[0].text, "soft, red \"wool\"");
        assert_eq!(c.descriptions()[0].rating, Some(4));
        assert_eq!(c.descriptions()[1].status, Status::Unaudited);
        assert_eq!(c.images()[0].geometry, Geometry::Sphere);
    }

    #[test]
    fn csv_bad_rating_reports_error() {
        let data = "id,image_id,material_id,geometry,lighting,describer_id,text,status,rating\n\
                    d1,i1,m1,sphere,outdoor,a,x,accepted,0\n";
        let err = ingest_csv(data.as_bytes(), "t.csv").unwrap_err();
        assert!(err.to_string().contains("rating out of range"));
    }

    #[test]
    fn short_description_is_flagged() {
        let c = corpus_from(&[record("d1", "i1", "a", 12)]).unwrap();
        let r = validate(&c, &ValidationPolicy::default());
        assert_eq!(
            r.length,
            vec![LengthFlag::TooShort {
                description_id: "d1".into(),
                words: 12
            }]
        );
    }

    #[test]
    fn over_share_describer_is_flagged() {
        // a: 10 of 100 descriptions, the rest spread over 9 describers of 10.
        let mut lines = Vec::new();
        for i in 0..100 {
            let describer = format!("w{}", i / 10);
            lines.push(record(&format!("d{i:03}"), &format!("i{}", i % 20), &describer, 30));
        }
        let c = corpus_from(&lines).unwrap();
        let r = validate(&c, &ValidationPolicy::default());
        let over: Vec<_> = r
            .describers
            .iter()
            .filter(|f| matches!(f, DescriberFlag::OverShare { .. }))
            .collect();
        assert_eq!(over.len(), 10);
        assert!(r.images.is_empty());
        assert!(r.length.is_empty());

        let relaxed = ValidationPolicy {
            max_share: 0.10,
            ..Default::default()
        };
        assert!(validate(&c, &relaxed).describers.is_empty());
    }

    #[test]
    fn share_basis_changes_denominator() {
        let mut lines = Vec::new();
        for i in 0..20 {
            lines.push(record(&format!("d{i:02}"), "i1", if i < 10 { "a" } else { "b" }, 30));
        }
        let c = corpus_from(&lines).unwrap();
        let audits: Vec<_> = (10..18)
            .map(|i| AuditEntry {
                description_id: format!("d{i:02}"),
                status: Status::RejectedWrong,
                rating: Some(1),
            })
            .collect();
        let c = audit_apply(&c, &audits, 0.35).unwrap();
        let policy = ValidationPolicy {
            max_share: 0.6,
            ..Default::default()
        };
        // a holds 10 of 10 valid but only 10 of 20 overall.
        let valid = validate(&c, &policy);
        assert!(valid
            .describers
            .iter()
            .any(|f| matches!(f, DescriberFlag::OverShare { describer_id, .. } if describer_id == "a")));
        let all = validate(
            &c,
            &ValidationPolicy {
                share_basis: ShareBasis::All,
                ..policy
            },
        );
        assert!(!all.describers.iter().any(|f| matches!(f, DescriberFlag::OverShare { .. })));
    }

    #[test]
    fn five_valid_per_image_gives_no_image_flags() {
        let mut lines = Vec::new();
        for img in 0..3 {
            for k in 0..5 {
                lines.push(record(&format!("d{img}{k}"), &format!("i{img}"), &format!("w{k}"), 30));
            }
        }
        let c = corpus_from(&lines).unwrap();
        let r = validate(&c, &ValidationPolicy::default());
        assert!(r.images.is_empty());
        // Five describers with three descriptions each: below the minimum of ten.
        assert_eq!(r.describers.iter().filter(|f| matches!(f, DescriberFlag::BelowMinimum { .. })).count(), 5);
    }

    fn describer_corpus() -> Corpus {
        let mut lines = Vec::new();
        for i in 0..15 {
            lines.push(record(&format!("a{i:02}"), "i1", "a", 30));
        }
        for i in 0..6 {
            lines.push(record(&format!("b{i:02}"), "i1", "b", 30));
        }
        corpus_from(&lines).unwrap()
    }

    fn audit(id: &str, status: Status) -> AuditEntry {
        AuditEntry {
            description_id: id.into(),
            status,
            rating: Some(if status.is_rejected() { 1 } else { 4 }),
        }
    }

    #[test]
    fn cascade_rejects_remaining_descriptions() {
        let c = describer_corpus();
        // a: 10 audited, 4 rejected (40%); 5 unaudited left.
        let mut audits: Vec<_> = (0..4).map(|i| audit(&format!("a{i:02}"), Status::RejectedGeneric)).collect();
        audits.extend((4..10).map(|i| audit(&format!("a{i:02}"), Status::Accepted)));
        audits.push(audit("b00", Status::Accepted));
        let out = audit_apply(&c, &audits, 0.35).unwrap();
        for i in 10..15 {
            assert_eq!(out.description(&format!("a{i:02}")).unwrap().status, Status::RejectedGeneric);
            assert_eq!(out.description(&format!("a{i:02}")).unwrap().rating, None);
        }
        for i in 1..6 {
            assert_eq!(out.description(&format!("b{i:02}")).unwrap().status, Status::Unaudited);
        }
        let total: usize = out.describers().iter().map(|d| d.description_count).sum();
        assert_eq!(total, out.len());
    }

    #[test]
    fn threshold_one_never_cascades_with_acceptances() {
        let c = describer_corpus();
        let audits = vec![audit("a00", Status::RejectedWrong), audit("a01", Status::Accepted)];
        let out = audit_apply(&c, &audits, 1.0).unwrap();
        assert_eq!(out.valid_descriptions().count(), c.len() - 1);
    }

    #[test]
    fn audit_errors() {
        let c = describer_corpus();
        assert!(matches!(
            audit_apply(&c, &[audit("zz", Status::Accepted)], 0.35),
            Err(Error::UnknownDescription(_))
        ));
        assert!(audit_apply(&c, &[], 0.0).is_err());
        assert!(audit_apply(&c, &[audit("a00", Status::Accepted), audit("a00", Status::Accepted)], 0.35).is_err());
    }
}
