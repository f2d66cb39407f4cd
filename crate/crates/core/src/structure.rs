//! Order of appearance of attributes within descriptions: ranks, rank
//! products and significance grouping.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attributes::AttributeSet;
use crate::error::{Error, Result};
use crate::lexistats::csv_err;
use crate::stattests::{dunn_posthoc, kruskal_wallis, Correction, PairwiseMatrix, StatResult};
use crate::textproc::ProcessedDescription;

/// Ranks attributes by the token index of their first member lemma. A lemma
/// may map to several attributes; attributes first seen at the same token are
/// ordered by name.
pub fn attribute_ranks_with<'b, F, I>(lemmas: &[String], attributes_of: F) -> Vec<(String, u32)>
where
    F: Fn(&str) -> I,
    I: IntoIterator<Item = &'b str>,
{
    let mut first: BTreeMap<&'b str, usize> = BTreeMap::new();
    for (pos, lemma) in lemmas.iter().enumerate() {
        for attr in attributes_of(lemma) {
            first.entry(attr).or_insert(pos);
        }
    }
    let mut order: Vec<(&str, usize)> = first.into_iter().collect();
    order.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
    order
        .into_iter()
        .enumerate()
        .map(|(i, (name, _))| (name.to_string(), i as u32 + 1))
        .collect()
}

pub fn attribute_ranks(description: &ProcessedDescription, set: &AttributeSet) -> Vec<(String, u32)> {
    attribute_ranks_with(&description.lemmas, |l| set.attribute_of(l))
}

/// Ranks of each attribute over the descriptions where it appears.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub names: Vec<String>,
    pub ranks: Vec<Vec<u32>>,
}

impl RankTable {
    pub fn build(processed: &[ProcessedDescription], set: &AttributeSet) -> Self {
        let per_description: Vec<Vec<(String, u32)>> =
            processed.par_iter().map(|d| attribute_ranks(d, set)).collect();
        let names: Vec<String> = set.names().map(str::to_string).collect();
        let mut ranks = vec![Vec::new(); names.len()];
        for list in per_description {
            for (name, rank) in list {
                let i = set.position(&name).expect("attribute from set");
                ranks[i].push(rank);
            }
        }
        RankTable { names, ranks }
    }

    pub fn from_ranks(ranks: BTreeMap<String, Vec<u32>>) -> Self {
        let (names, ranks) = ranks.into_iter().unzip();
        RankTable { names, ranks }
    }

    /// Number of descriptions in which attribute `i` appears.
    pub fn descriptions(&self, i: usize) -> usize {
        self.ranks[i].len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankProduct {
    pub attribute: String,
    /// Geometric mean of ranks; `None` for attributes that never appear.
    pub psi: Option<f64>,
    pub descriptions: usize,
}

pub fn rank_product(table: &RankTable) -> Vec<RankProduct> {
    table
        .names
        .iter()
        .zip(&table.ranks)
        .map(|(name, ranks)| RankProduct {
            attribute: name.clone(),
            psi: (!ranks.is_empty())
                .then(|| (ranks.iter().map(|&r| f64::from(r).ln()).sum::<f64>() / ranks.len() as f64).exp()),
            descriptions: ranks.len(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedAttribute {
    pub attribute: String,
    pub psi: Option<f64>,
    /// 1-based significance group; `None` for attributes that never appear.
    pub group_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureResult {
    pub kruskal_wallis: StatResult,
    /// Attributes entering the tests, in the row order of `posthoc`.
    pub tested: Vec<String>,
    pub posthoc: PairwiseMatrix,
    pub alpha: f64,
    /// All attributes by ascending Ψ (name breaks ties), absent ones last.
    pub attributes: Vec<GroupedAttribute>,
}

impl StructureResult {
    pub fn groups(&self) -> Vec<Vec<&str>> {
        let mut out: Vec<Vec<&str>> = Vec::new();
        for a in &self.attributes {
            if let Some(g) = a.group_id {
                if out.len() < g {
                    out.resize_with(g, Vec::new);
                }
                out[g - 1].push(&a.attribute);
            }
        }
        out
    }

    /// CSV `attribute,psi,group_id`; absent attributes get `n/a` and an empty group.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["attribute", "psi", "group_id"]).map_err(csv_err)?;
        for a in &self.attributes {
            wtr.write_record([
                a.attribute.clone(),
                a.psi.map_or_else(|| "n/a".into(), |p| p.to_string()),
                a.group_id.map_or_else(String::new, |g| g.to_string()),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::io("csv", e))
    }
}

/// Kruskal-Wallis over attribute rank samples, Dunn post-hoc comparisons and
/// groups of attributes without significant differences.
///
/// Groups are formed walking attributes in Ψ order: an attribute joins the
/// current group when its difference to at least one member is not
/// significant at `alpha`, and opens a new group otherwise.
pub fn structure_test(table: &RankTable, alpha: f64, correction: Correction) -> Result<StructureResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    let products = rank_product(table);
    let present: Vec<usize> = (0..table.names.len()).filter(|&i| !table.ranks[i].is_empty()).collect();
    if present.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 attributes that appear, got {}",
            present.len()
        )));
    }
    let samples: Vec<Vec<f64>> = present
        .iter()
        .map(|&i| table.ranks[i].iter().map(|&r| f64::from(r)).collect())
        .collect();
    let kw = kruskal_wallis(&samples)?;
    let posthoc = dunn_posthoc(&samples, correction)?;

    let mut order: Vec<usize> = (0..present.len()).collect();
    order.sort_by(|&x, &y| {
        let (px, py) = (products[present[x]].psi.unwrap(), products[present[y]].psi.unwrap());
        px.total_cmp(&py).then_with(|| table.names[present[x]].cmp(&table.names[present[y]]))
    });
    let mut group_of = vec![0usize; present.len()];
    let mut current: Vec<usize> = Vec::new();
    let mut group = 0;
    for &t in &order {
        let joins = current.iter().any(|&m| posthoc.p(t, m) >= alpha);
        if !joins {
            group += 1;
            current.clear();
        }
        current.push(t);
        group_of[t] = group;
    }

    let mut attributes: Vec<GroupedAttribute> = order
        .iter()
        .map(|&t| GroupedAttribute {
            attribute: table.names[present[t]].clone(),
            psi: products[present[t]].psi,
            group_id: Some(group_of[t]),
        })
        .collect();
    attributes.extend(products.iter().filter(|p| p.psi.is_none()).map(|p| GroupedAttribute {
        attribute: p.attribute.clone(),
        psi: None,
        group_id: None,
    }));

    Ok(StructureResult {
        kruskal_wallis: kw,
        tested: present.iter().map(|&i| table.names[i].clone()).collect(),
        posthoc,
        alpha,
        attributes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn lookup(lemma: &str) -> Vec<&'static str> {
        match lemma {
            "red" => vec!["color"],
            "soft" => vec!["touch"],
            "silky" => vec!["touch", "shine"],
            _ => vec![],
        }
    }

    #[test]
    fn first_appearance_ranks() {
        let l = strings(&["red", "soft", "red"]);
        assert_eq!(
            attribute_ranks_with(&l, lookup),
            [("color".to_string(), 1), ("touch".to_string(), 2)]
        );
        let one = strings(&["fabric", "soft"]);
        assert_eq!(attribute_ranks_with(&one, lookup), [("touch".to_string(), 1)]);
        assert!(attribute_ranks_with(&strings(&["fabric"]), lookup).is_empty());
    }

    #[test]
    fn shared_token_ties_by_name() {
        let l = strings(&["silky", "red"]);
        assert_eq!(
            attribute_ranks_with(&l, lookup),
            [("shine".to_string(), 1), ("touch".to_string(), 2), ("color".to_string(), 3)]
        );
    }

    fn table(rows: &[(&str, &[u32])]) -> RankTable {
        RankTable::from_ranks(rows.iter().map(|(n, r)| (n.to_string(), r.to_vec())).collect())
    }

    #[test]
    fn rank_products() {
        let t = table(&[("a", &[2, 2, 2]), ("b", &[1, 4]), ("c", &[])]);
        let p = rank_product(&t);
        assert!((p[0].psi.unwrap() - 2.0).abs() < 1e-12);
        assert!((p[1].psi.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(p[2].psi, None);
    }

    #[test]
    fn identical_distributions_one_group() {
        let t = table(&[("a", &[1, 2, 3, 1, 2]), ("b", &[1, 2, 3, 1, 2]), ("c", &[1, 2, 3, 1, 2])]);
        let r = structure_test(&t, 0.05, Correction::Holm).unwrap();
        assert!(r.kruskal_wallis.statistic.abs() < 1e-12);
        assert_eq!(r.groups().len(), 1);
    }

    #[test]
    fn hand_h_and_separated_groups() {
        let t = table(&[("x", &[1, 2, 3]), ("y", &[4, 5, 6]), ("z", &[7, 8, 9])]);
        let r = structure_test(&t, 0.05, Correction::Holm).unwrap();
        assert!((r.kruskal_wallis.statistic - 7.2).abs() < 1e-12);

        let low: Vec<u32> = (0..60).map(|i| 1 + i % 2).collect();
        let high: Vec<u32> = (0..60).map(|i| 7 + i % 2).collect();
        let t = table(&[("early", &low), ("early2", &low), ("late", &high), ("never", &[])]);
        let r = structure_test(&t, 0.05, Correction::Holm).unwrap();
        assert_eq!(r.groups(), [vec!["early", "early2"], vec!["late"]]);
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("attribute,psi,group_id\nearly,"));
        assert!(text.ends_with("never,n/a,\n"));
    }

    #[test]
    fn needs_two_present_attributes() {
        let t = table(&[("a", &[1, 2]), ("b", &[])]);
        assert!(structure_test(&t, 0.05, Correction::Holm).is_err());
    }
}
