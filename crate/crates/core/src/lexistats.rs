//! Lemma frequency, dispersion (average reduced frequency), coverage curves and
//! lexicon selection.
//!
//! Positions for ARF come from a single token stream formed by concatenating
//! the lemma sequences of all descriptions in ascending description-id order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::ProcessedDescription;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaStats {
    pub lemma: String,
    /// Absolute frequency: occurrences of every surface form of the lemma.
    pub f: u64,
    pub arf: f64,
}

/// Occurrence positions of every lemma in the concatenated stream.
#[derive(Debug, Clone)]
pub struct LemmaIndex {
    stream_len: usize,
    positions: BTreeMap<String, Vec<usize>>,
}

impl LemmaIndex {
    pub fn build(processed: &[ProcessedDescription]) -> Self {
        let mut ordered: Vec<&ProcessedDescription> = processed.iter().collect();
        ordered.sort_by(|a, b| a.description_id.cmp(&b.description_id));
        let mut positions: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut pos = 0;
        for d in ordered {
            for lemma in &d.lemmas {
                positions.entry(lemma.clone()).or_default().push(pos);
                pos += 1;
            }
        }
        LemmaIndex {
            stream_len: pos,
            positions,
        }
    }

    pub fn stream_len(&self) -> usize {
        self.stream_len
    }

    pub fn lemma_count(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self, lemma: &str) -> Option<&[usize]> {
        self.positions.get(lemma).map(Vec::as_slice)
    }

    /// `(lemma, f)` in lemma order.
    pub fn frequency_table(&self) -> Vec<(String, u64)> {
        self.positions
            .iter()
            .map(|(l, p)| (l.clone(), p.len() as u64))
            .collect()
    }

    pub fn arf(&self, lemma: &str) -> Result<f64> {
        let pos = self
            .positions
            .get(lemma)
            .ok_or_else(|| Error::UnknownLemma(lemma.to_string()))?;
        Ok(arf_from_positions(pos, self.stream_len))
    }

    /// Frequency and ARF for every lemma, in lemma order.
    pub fn lemma_stats(&self) -> Vec<LemmaStats> {
        let entries: Vec<(&String, &Vec<usize>)> = self.positions.iter().collect();
        entries
            .par_iter()
            .map(|(lemma, pos)| LemmaStats {
                lemma: (*lemma).clone(),
                f: pos.len() as u64,
                arf: arf_from_positions(pos, self.stream_len),
            })
            .collect()
    }
}

/// Average reduced frequency of an item with sorted occurrence `positions`
/// in a stream of length `n`: `(1/v) Σ min(d_i, v)` with `v = n/f` and
/// circular gaps `d_i` (the last gap wraps around to the first occurrence).
pub fn arf_from_positions(positions: &[usize], n: usize) -> f64 {
    let f = positions.len();
    if f == 0 {
        return 0.0;
    }
    debug_assert!(positions.windows(2).all(|w| w[0] < w[1]));
    debug_assert!(positions[f - 1] < n);
    let v = n as f64 / f as f64;
    let mut sum = 0.0;
    for w in positions.windows(2) {
        sum += ((w[1] - w[0]) as f64).min(v);
    }
    let wrap = n - positions[f - 1] + positions[0];
    sum += (wrap as f64).min(v);
    sum / v
}

/// Sorts by ARF descending, then frequency descending, then lemma.
pub fn rank_lemmas(mut stats: Vec<LemmaStats>) -> Vec<LemmaStats> {
    stats.sort_by(|a, b| {
        b.arf
            .total_cmp(&a.arf)
            .then(b.f.cmp(&a.f))
            .then_with(|| a.lemma.cmp(&b.lemma))
    });
    stats
}

/// How a description's lemmas are counted for coverage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMode {
    /// Lemma occurrences (tokens).
    #[default]
    Occurrences,
    /// Distinct lemmas.
    Distinct,
}

/// Mean description coverage by the top-k lemmas of a ranking, for every k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    ranking: Vec<LemmaStats>,
    mean_coverage: Vec<f64>,
    pub mode: CoverageMode,
    pub descriptions: usize,
}

impl CoverageCurve {
    pub fn ranking(&self) -> &[LemmaStats] {
        &self.ranking
    }

    pub fn len(&self) -> usize {
        self.mean_coverage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_coverage.is_empty()
    }

    /// Mean coverage of the top `k` lemmas (k ≥ 1).
    pub fn at(&self, k: usize) -> Option<f64> {
        k.checked_sub(1).and_then(|i| self.mean_coverage.get(i)).copied()
    }

    pub fn points(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.mean_coverage.iter().enumerate().map(|(i, &c)| (i + 1, c))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["k", "mean_coverage"]).map_err(csv_err)?;
        for (k, c) in self.points() {
            wtr.write_record([k.to_string(), c.to_string()]).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::io("csv", e))?;
        Ok(())
    }
}

/// Builds the coverage curve of `ranking` over the descriptions. Descriptions
/// without lemmas are excluded.
///
/// Counts are kept as integers per distinct description length, so the curve
/// is exactly monotone and reaches exactly 1.0 once every lemma is ranked.
pub fn coverage_curve(
    processed: &[ProcessedDescription],
    ranking: &[LemmaStats],
    mode: CoverageMode,
) -> Result<CoverageCurve> {
    let mut rank_of: HashMap<&str, usize> = HashMap::with_capacity(ranking.len());
    for (i, s) in ranking.iter().enumerate() {
        if rank_of.insert(s.lemma.as_str(), i).is_some() {
            return Err(Error::InvalidParameter(format!("lemma {} ranked twice", s.lemma)));
        }
    }
    let k_max = ranking.len();

    // deltas[t][r] = number of counted lemmas with rank r across descriptions of size t.
    let mut deltas: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    let mut descriptions = 0usize;
    for d in processed {
        let counted: Vec<&str> = match mode {
            CoverageMode::Occurrences => d.lemmas.iter().map(String::as_str).collect(),
            CoverageMode::Distinct => {
                let mut seen = HashSet::new();
                d.lemmas.iter().map(String::as_str).filter(|l| seen.insert(*l)).collect()
            }
        };
        let total = counted.len();
        if total == 0 {
            continue;
        }
        descriptions += 1;
        let row = deltas.entry(total).or_insert_with(|| vec![0; k_max]);
        for lemma in counted {
            if let Some(&r) = rank_of.get(lemma) {
                row[r] += 1;
            }
        }
    }

    let mut mean_coverage = vec![0.0; k_max];
    if descriptions > 0 {
        let mut running: Vec<(f64, u64)> = deltas.keys().map(|&t| (t as f64, 0)).collect();
        let rows: Vec<&Vec<u64>> = deltas.values().collect();
        for (k, slot) in mean_coverage.iter_mut().enumerate() {
            let mut sum = 0.0;
            for (acc, row) in running.iter_mut().zip(&rows) {
                acc.1 += row[k];
                sum += acc.1 as f64 / acc.0;
            }
            *slot = sum / descriptions as f64;
        }
    }

    Ok(CoverageCurve {
        ranking: ranking.to_vec(),
        mean_coverage,
        mode,
        descriptions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub entries: Vec<LemmaStats>,
    pub coverage: f64,
    pub target: f64,
}

impl Lexicon {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, lemma: &str) -> bool {
        self.entries.iter().any(|e| e.lemma == lemma)
    }

    pub fn lemmas(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.lemma.as_str())
    }
}

/// Smallest prefix of the curve's ranking whose mean coverage reaches `target`.
pub fn select_lexicon(curve: &CoverageCurve, target: f64) -> Result<Lexicon> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidParameter(format!("coverage target {target} outside (0, 1]")));
    }
    let k = curve
        .mean_coverage
        .iter()
        .position(|&c| c >= target)
        .ok_or_else(|| Error::UnreachableTarget {
            target,
            max: curve.mean_coverage.last().copied().unwrap_or(0.0),
        })?;
    Ok(Lexicon {
        entries: curve.ranking[..=k].to_vec(),
        coverage: curve.mean_coverage[k],
        target,
    })
}

/// Writes `rank,lemma,arf,f` rows (rank is 1-based).
pub fn write_lemma_csv<W: Write>(w: W, entries: &[LemmaStats]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["rank", "lemma", "arf", "f"]).map_err(csv_err)?;
    for (i, e) in entries.iter().enumerate() {
        wtr.write_record([(i + 1).to_string(), e.lemma.clone(), e.arf.to_string(), e.f.to_string()])
            .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("csv", e))?;
    Ok(())
}

/// Reads a `rank,lemma,arf,f` file back, ordered by rank.
pub fn read_lemma_csv<R: Read>(r: R, source_name: &str) -> Result<Vec<LemmaStats>> {
    #[derive(Deserialize)]
    struct Row {
        rank: usize,
        lemma: String,
        arf: f64,
        f: u64,
    }
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::parse(source_name, i + 2, e.to_string()))?;
        rows.push(row);
    }
    rows.sort_by_key(|r| r.rank);
    Ok(rows
        .into_iter()
        .map(|r| LemmaStats {
            lemma: r.lemma,
            f: r.f,
            arf: r.arf,
        })
        .collect())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::InvalidParameter(format!("csv: {e}"))
}
