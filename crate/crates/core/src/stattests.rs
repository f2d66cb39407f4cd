//! Rank-based statistical tests: Kruskal-Wallis, Dunn's post-hoc test, ANOSIM
//! and the Wilcoxon signed-rank test.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::util::{midranks, tie_sum};

/// Outcome of a statistical test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    pub effect_size: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub df: Option<usize>,
    pub permutations: Option<usize>,
    pub seed: Option<u64>,
}

fn normal_sf(z: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").sf(z)
}

fn validate_groups(groups: &[Vec<f64>]) -> Result<usize> {
    if groups.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 groups, got {}", groups.len())));
    }
    if let Some(i) = groups.iter().position(Vec::is_empty) {
        return Err(Error::InsufficientData(format!("group {i} is empty")));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite observation".into()));
    }
    Ok(groups.iter().map(Vec::len).sum())
}

struct PooledRanks {
    mean_rank: Vec<f64>,
    sizes: Vec<usize>,
    ties: f64,
}

fn pooled_ranks(groups: &[Vec<f64>]) -> PooledRanks {
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let mut rank_sum = Vec::with_capacity(groups.len());
    let mut offset = 0;
    for g in groups {
        rank_sum.push(ranks[offset..offset + g.len()].iter().sum::<f64>());
        offset += g.len();
    }
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    PooledRanks {
        mean_rank: rank_sum.iter().zip(&sizes).map(|(s, &n)| s / n as f64).collect(),
        sizes,
        ties: tie_sum(&ties),
    }
}

/// Kruskal-Wallis H with midranks and tie correction; p from χ² with k − 1 df.
/// Effect size is ε² = H / (N − 1).
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<StatResult> {
    let n = validate_groups(groups)?;
    let r = pooled_ranks(groups);
    let nf = n as f64;
    let df = groups.len() - 1;
    let correction = 1.0 - r.ties / (nf * nf * nf - nf);
    let (h, p) = if correction <= 0.0 {
        (0.0, 1.0)
    } else {
        // 12 Σ nᵢ (R̄ᵢ − R̄)² / (N(N + 1)), free of the cancellation in ΣRᵢ²/nᵢ − 3(N + 1)
        let grand = (nf + 1.0) / 2.0;
        let s: f64 = r.mean_rank.iter().zip(&r.sizes).map(|(m, &k)| k as f64 * (m - grand) * (m - grand)).sum();
        let h = (12.0 * s / (nf * (nf + 1.0)) / correction).max(0.0);
        let p = ChiSquared::new(df as f64).expect("df > 0").sf(h);
        (h, p.clamp(0.0, 1.0))
    };
    Ok(StatResult {
        method: "kruskal-wallis".into(),
        statistic: h,
        p_value: p,
        effect_size: (n > 1).then(|| h / (nf - 1.0)),
        n,
        df: Some(df),
        permutations: None,
        seed: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    None,
    Bonferroni,
    #[default]
    Holm,
}

impl FromStr for Correction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Correction::None),
            "bonferroni" => Ok(Correction::Bonferroni),
            "holm" => Ok(Correction::Holm),
            other => Err(format!("unknown correction {other:?}")),
        }
    }
}

/// Symmetric k × k matrix of pairwise z statistics and p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    pub k: usize,
    pub correction: Correction,
    z: Vec<f64>,
    p_raw: Vec<f64>,
    p: Vec<f64>,
}

impl PairwiseMatrix {
    /// z for mean rank of `i` minus mean rank of `j`.
    pub fn z(&self, i: usize, j: usize) -> f64 {
        self.z[i * self.k + j]
    }

    pub fn p_raw(&self, i: usize, j: usize) -> f64 {
        self.p_raw[i * self.k + j]
    }

    /// Corrected p-value (1 on the diagonal).
    pub fn p(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.k + j]
    }
}

/// Dunn's test on mean-rank differences with tie-corrected variance.
pub fn dunn_posthoc(groups: &[Vec<f64>], correction: Correction) -> Result<PairwiseMatrix> {
    let n = validate_groups(groups)?;
    let r = pooled_ranks(groups);
    let k = groups.len();
    let nf = n as f64;
    let variance = nf * (nf + 1.0) / 12.0 - if n > 1 { r.ties / (12.0 * (nf - 1.0)) } else { 0.0 };

    let mut z = vec![0.0; k * k];
    let mut p_raw = vec![1.0; k * k];
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let se = (variance * (1.0 / r.sizes[i] as f64 + 1.0 / r.sizes[j] as f64)).sqrt();
            let zij = if se > 0.0 { (r.mean_rank[i] - r.mean_rank[j]) / se } else { 0.0 };
            let pij = (2.0 * normal_sf(zij.abs())).min(1.0);
            z[i * k + j] = zij;
            z[j * k + i] = -zij;
            p_raw[i * k + j] = pij;
            p_raw[j * k + i] = pij;
            pairs.push((i, j, pij));
        }
    }

    let m = pairs.len() as f64;
    let mut adjusted: Vec<f64> = pairs.iter().map(|&(_, _, p)| p).collect();
    match correction {
        Correction::None => {}
        Correction::Bonferroni => adjusted.iter_mut().for_each(|p| *p = (*p * m).min(1.0)),
        Correction::Holm => {
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            order.sort_by(|&a, &b| pairs[a].2.total_cmp(&pairs[b].2).then(a.cmp(&b)));
            let mut running: f64 = 0.0;
            for (rank, &idx) in order.iter().enumerate() {
                let scaled = ((m - rank as f64) * pairs[idx].2).min(1.0);
                running = running.max(scaled);
                adjusted[idx] = running;
            }
        }
    }
    let mut p = vec![1.0; k * k];
    for (&(i, j, _), &adj) in pairs.iter().zip(&adjusted) {
        p[i * k + j] = adj;
        p[j * k + i] = adj;
    }
    Ok(PairwiseMatrix {
        k,
        correction,
        z,
        p_raw,
        p,
    })
}

/// How pair dissimilarities are ranked for ANOSIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum RankMode {
    /// Exact for n ≤ 5000 items, histogram beyond.
    #[default]
    Auto,
    /// Full sort of all pairs with midranks for exact ties.
    Exact,
    /// Quantize into `bins` equal-width bins; pairs in one bin share its midrank.
    Histogram { bins: usize },
}

pub const EXACT_RANK_LIMIT: usize = 5000;
pub const DEFAULT_HISTOGRAM_BINS: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnosimConfig {
    pub permutations: usize,
    pub seed: u64,
    pub rank_mode: RankMode,
}

impl Default for AnosimConfig {
    fn default() -> Self {
        AnosimConfig {
            permutations: 999,
            seed: 0,
            rank_mode: RankMode::Auto,
        }
    }
}

/// Index of pair (i, j), i < j, in row-major upper-triangle order.
#[inline]
pub fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

enum PairRanks {
    Exact(Vec<f64>),
    Binned { bins: Vec<u32>, midrank: Vec<f64> },
}

impl PairRanks {
    #[inline]
    fn rank(&self, idx: usize) -> f64 {
        match self {
            PairRanks::Exact(r) => r[idx],
            PairRanks::Binned { bins, midrank } => midrank[bins[idx] as usize],
        }
    }
}

/// Evaluates `f(i, j)` for every pair i < j into condensed order, in parallel over rows.
fn fill_condensed<T, F>(n: usize, out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync,
{
    let mut rows: Vec<(usize, &mut [T])> = Vec::with_capacity(n);
    let mut rest = out;
    for i in 0..n.saturating_sub(1) {
        let (row, tail) = rest.split_at_mut(n - i - 1);
        rows.push((i, row));
        rest = tail;
    }
    rows.into_par_iter().for_each(|(i, row)| {
        for (offset, slot) in row.iter_mut().enumerate() {
            *slot = f(i, i + 1 + offset);
        }
    });
}

fn exact_ranks<F>(n: usize, dissimilarity: &F) -> Result<PairRanks>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let m = n * (n - 1) / 2;
    let mut values = vec![0.0f64; m];
    fill_condensed(n, &mut values, dissimilarity);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite dissimilarity".into()));
    }
    let mut order: Vec<u32> = (0..m as u32).collect();
    order.par_sort_unstable_by(|&a, &b| values[a as usize].total_cmp(&values[b as usize]).then(a.cmp(&b)));
    // Overwrite values with midranks run by run; a run's first value is still
    // untouched while its extent is being determined.
    let mut i = 0;
    while i < m {
        let head = values[order[i] as usize];
        let mut j = i + 1;
        while j < m && values[order[j] as usize] == head {
            j += 1;
        }
        let rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            values[idx as usize] = rank;
        }
        i = j;
    }
    Ok(PairRanks::Exact(values))
}

fn histogram_ranks<F>(n: usize, dissimilarity: &F, bins: usize) -> Result<PairRanks>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    if bins == 0 || bins > u32::MAX as usize {
        return Err(Error::InvalidParameter(format!("invalid histogram bin count {bins}")));
    }
    let (lo, hi) = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for j in i + 1..n {
                let d = dissimilarity(i, j);
                lo = lo.min(d);
                hi = hi.max(d);
            }
            (lo, hi)
        })
        .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter("non-finite dissimilarity".into()));
    }
    let width = hi - lo;
    let m = n * (n - 1) / 2;
    let mut bin_of = vec![0u32; m];
    fill_condensed(n, &mut bin_of, |i, j| {
        if width > 0.0 {
            (((dissimilarity(i, j) - lo) / width * bins as f64) as usize).min(bins - 1) as u32
        } else {
            0
        }
    });
    let mut counts = vec![0u64; bins];
    for &b in &bin_of {
        counts[b as usize] += 1;
    }
    let mut midrank = vec![0.0; bins];
    let mut before = 0u64;
    for (slot, &c) in midrank.iter_mut().zip(&counts) {
        *slot = before as f64 + (c as f64 + 1.0) / 2.0;
        before += c;
    }
    Ok(PairRanks::Binned { bins: bin_of, midrank })
}

/// Sum of ranks over within-group pairs, given members of each group.
fn within_rank_sum(n: usize, ranks: &PairRanks, members: &[Vec<usize>]) -> f64 {
    let mut sum = 0.0;
    for group in members {
        for (a, &i) in group.iter().enumerate() {
            for &j in &group[a + 1..] {
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                sum += ranks.rank(condensed_index(n, lo, hi));
            }
        }
    }
    sum
}

fn group_members(labels: impl Iterator<Item = usize>, groups: usize) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); groups];
    for (i, l) in labels.enumerate() {
        members[l].push(i);
    }
    members
}

/// Maps arbitrary labels to dense group indices in first-seen order.
pub fn encode_labels<L: Ord + Clone>(labels: &[L]) -> Vec<usize> {
    let mut ids: BTreeMap<L, usize> = BTreeMap::new();
    let mut next = 0;
    labels
        .iter()
        .map(|l| {
            *ids.entry(l.clone()).or_insert_with(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// ANOSIM R statistic with a label-permutation p-value.
///
/// `dissimilarity(i, j)` is called for i < j < n. R = (r̄_between − r̄_within) / (M/2)
/// over the ranks of all M = n(n−1)/2 pair dissimilarities, and
/// p = (b + 1)/(m + 1) where b counts permutations with R ≥ R_observed.
/// Permutation `r` draws from a ChaCha8 stream `r` under `config.seed`, so
/// results do not depend on thread scheduling.
pub fn anosim<F>(n: usize, dissimilarity: F, labels: &[usize], config: &AnosimConfig) -> Result<StatResult>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    if n < 4 {
        return Err(Error::InsufficientData(format!("ANOSIM needs at least 4 items, got {n}")));
    }
    if labels.len() != n {
        return Err(Error::InvalidParameter(format!("{} labels for {n} items", labels.len())));
    }
    let groups = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; groups];
    labels.iter().for_each(|&l| sizes[l] += 1);
    let present: Vec<usize> = sizes.iter().copied().filter(|&s| s > 0).collect();
    if present.len() < 2 {
        return Err(Error::Degenerate("a single group holds every item".into()));
    }
    let n_within: usize = present.iter().map(|s| s * (s - 1) / 2).sum();
    if n_within == 0 {
        return Err(Error::Degenerate("no group has two or more members".into()));
    }
    let m = n * (n - 1) / 2;
    let n_between = m - n_within;

    let ranks = match config.rank_mode {
        RankMode::Exact => exact_ranks(n, &dissimilarity)?,
        RankMode::Histogram { bins } => histogram_ranks(n, &dissimilarity, bins)?,
        RankMode::Auto if n <= EXACT_RANK_LIMIT => exact_ranks(n, &dissimilarity)?,
        RankMode::Auto => histogram_ranks(n, &dissimilarity, DEFAULT_HISTOGRAM_BINS)?,
    };

    let total = m as f64 * (m as f64 + 1.0) / 2.0;
    let r_of = |within: f64| {
        let mean_w = within / n_within as f64;
        let mean_b = (total - within) / n_between as f64;
        (mean_b - mean_w) / (m as f64 / 2.0)
    };

    let observed_within = within_rank_sum(n, &ranks, &group_members(labels.iter().copied(), groups));
    let r_obs = r_of(observed_within);

    // R_perm ≥ R_obs exactly when the permuted within-group rank sum is not larger;
    // rank sums are exact multiples of 1/2, so the comparison is exact.
    let hits: usize = (0..config.permutations)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(rep as u64);
            let mut perm = labels.to_vec();
            perm.shuffle(&mut rng);
            let within = within_rank_sum(n, &ranks, &group_members(perm.into_iter(), groups));
            usize::from(within <= observed_within)
        })
        .sum();

    Ok(StatResult {
        method: match ranks {
            PairRanks::Exact(_) => "anosim".into(),
            PairRanks::Binned { .. } => "anosim (histogram ranks)".into(),
        },
        statistic: r_obs,
        p_value: (hits as f64 + 1.0) / (config.permutations as f64 + 1.0),
        effect_size: Some(r_obs),
        n,
        df: None,
        permutations: Some(config.permutations),
        seed: Some(config.seed),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WilcoxonMethod {
    /// Exact null distribution for n ≤ 50 without tied |differences|,
    /// normal approximation otherwise.
    #[default]
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub w_plus: f64,
    pub w_minus: f64,
    /// Normal-approximation z with continuity correction (sign of W+ − mean).
    pub z: f64,
    pub exact: bool,
    pub result: StatResult,
}

const EXACT_SIGNED_RANK_LIMIT: usize = 50;

pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<WilcoxonResult> {
    wilcoxon_signed_rank_with(pairs, WilcoxonMethod::Auto)
}

/// Two-sided Wilcoxon signed-rank test on `x − y`. Zero differences are
/// dropped; effect size r = |z| / √n over the non-zero differences.
pub fn wilcoxon_signed_rank_with(pairs: &[(f64, f64)], method: WilcoxonMethod) -> Result<WilcoxonResult> {
    let diffs: Vec<f64> = pairs.iter().map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidParameter("non-finite difference".into()));
    }
    if diffs.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let n = diffs.len();
    if n < 6 {
        return Err(Error::InsufficientData(format!(
            "signed-rank test needs at least 6 non-zero differences, got {n}"
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let nf = n as f64;
    let w_minus = nf * (nf + 1.0) / 2.0 - w_plus;

    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_sum(&ties) / 48.0;
    let dev = w_plus - mean;
    let z = if var > 0.0 && dev.abs() > 0.5 {
        (dev - 0.5 * dev.signum()) / var.sqrt()
    } else {
        0.0
    };

    let use_exact = match method {
        WilcoxonMethod::Exact => {
            if !ties.is_empty() {
                return Err(Error::InvalidParameter(
                    "exact signed-rank distribution requires untied differences".into(),
                ));
            }
            true
        }
        WilcoxonMethod::Normal => false,
        WilcoxonMethod::Auto => ties.is_empty() && n <= EXACT_SIGNED_RANK_LIMIT,
    };
    let p = if use_exact {
        let w = w_plus.min(w_minus).round() as usize;
        (2.0 * signed_rank_cdf(n, w)).min(1.0)
    } else {
        (2.0 * normal_sf(z.abs())).min(1.0)
    };

    Ok(WilcoxonResult {
        w_plus,
        w_minus,
        z,
        exact: use_exact,
        result: StatResult {
            method: if use_exact {
                "wilcoxon signed-rank (exact)".into()
            } else {
                "wilcoxon signed-rank (normal approximation)".into()
            },
            statistic: w_plus.min(w_minus),
            p_value: p,
            effect_size: Some(z.abs() / nf.sqrt()),
            n,
            df: None,
            permutations: None,
            seed: None,
        },
    })
}

/// P(W ≤ w) under the null for n untied ranks, by counting subsets of
/// {1..n} with each rank sum.
pub fn signed_rank_cdf(n: usize, w: usize) -> f64 {
    let max = n * (n + 1) / 2;
    let mut counts = vec![0f64; max + 1];
    counts[0] = 1.0;
    for k in 1..=n {
        for s in (k..=max).rev() {
            counts[s] += counts[s - k];
        }
    }
    let total = 2f64.powi(n as i32);
    counts[..=w.min(max)].iter().sum::<f64>() / total
}
