//! Similarity between descriptions of the same image versus different images.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{pairwise_blocks, EmbeddingStore};
use crate::error::{Error, Result};
use crate::stattests::{anosim, encode_labels, AnosimConfig, RankMode, StatResult};
use crate::util::Moments;

/// Which descriptions enter ANOSIM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum AnosimSampling {
    Skip,
    Full,
    /// Up to `per_image` descriptions from each of up to `max_images` images.
    Stratified { per_image: usize, max_images: usize },
}

impl Default for AnosimSampling {
    fn default() -> Self {
        AnosimSampling::Stratified {
            per_image: 5,
            max_images: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub block_size: usize,
    pub sampling: AnosimSampling,
    pub permutations: usize,
    pub seed: u64,
    pub rank_mode: RankMode,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            block_size: 512,
            sampling: AnosimSampling::default(),
            permutations: 999,
            seed: 0,
            rank_mode: RankMode::Auto,
        }
    }
}

pub const STD_CONVENTION: &str = "population standard deviation over pairs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySummary {
    pub intra_mean: f64,
    pub intra_std: f64,
    pub inter_mean: f64,
    pub inter_std: f64,
    pub n_intra_pairs: u64,
    pub n_inter_pairs: u64,
    pub descriptions: usize,
    pub images: usize,
    pub std_convention: String,
    pub anosim: Option<StatResult>,
    pub anosim_items: usize,
    pub sampling: AnosimSampling,
}

/// Streams all description pairs in tiles, accumulating cosine moments
/// separately for same-image and different-image pairs, then runs ANOSIM on
/// 1 − cosine over the configured sample.
///
/// `labels` holds `(description key, image id)`; order does not matter.
pub fn intra_inter(store: &EmbeddingStore, labels: &[(String, String)], config: &SimilarityConfig) -> Result<SimilaritySummary> {
    let mut sorted: Vec<&(String, String)> = labels.iter().collect();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateId {
            kind: "description",
            id: w[0].0.clone(),
        });
    }
    let keys: Vec<String> = sorted.iter().map(|(k, _)| k.clone()).collect();
    let images: Vec<&str> = sorted.iter().map(|(_, i)| i.as_str()).collect();
    let image_ids = encode_labels(&images);
    let n_images = image_ids.iter().max().map_or(0, |m| m + 1);
    if n_images < 2 {
        return Err(Error::InsufficientData(format!(
            "need descriptions of at least 2 images, got {n_images}"
        )));
    }

    let plan = pairwise_blocks(store, &keys, &keys, config.block_size)?;
    let tiles: Vec<_> = plan.tiles().into_iter().filter(|t| t.col_end > t.row_start + 1).collect();
    let partials: Vec<(Moments, Moments)> = tiles
        .par_iter()
        .map(|&tile| {
            let block = plan.block(tile);
            let mut intra = Moments::default();
            let mut inter = Moments::default();
            for r in 0..block.rows() {
                let i = tile.row_start + r;
                for c in (i + 1).saturating_sub(tile.col_start)..block.cols() {
                    let j = tile.col_start + c;
                    let s = block.get(r, c);
                    if image_ids[i] == image_ids[j] {
                        intra.push(s);
                    } else {
                        inter.push(s);
                    }
                }
            }
            (intra, inter)
        })
        .collect();
    let (mut intra, mut inter) = (Moments::default(), Moments::default());
    for (a, b) in &partials {
        intra.merge(a);
        inter.merge(b);
    }
    if intra.count == 0 {
        return Err(Error::InsufficientData("no image has two descriptions".into()));
    }

    let (anosim_result, anosim_items) = match config.sampling {
        AnosimSampling::Skip => (None, 0),
        sampling => {
            let chosen = sample_indices(&image_ids, n_images, sampling, config.seed);
            let idx: Vec<usize> = chosen.iter().map(|&c| plan.row_indices()[c]).collect();
            let sub_labels = encode_labels(&chosen.iter().map(|&c| image_ids[c]).collect::<Vec<_>>());
            let cfg = AnosimConfig {
                permutations: config.permutations,
                seed: config.seed,
                rank_mode: config.rank_mode,
            };
            let r = anosim(idx.len(), |i, j| 1.0 - store.cosine_at(idx[i], idx[j]), &sub_labels, &cfg)?;
            (Some(r), idx.len())
        }
    };

    Ok(SimilaritySummary {
        intra_mean: intra.mean,
        intra_std: intra.std(),
        inter_mean: inter.mean,
        inter_std: inter.std(),
        n_intra_pairs: intra.count,
        n_inter_pairs: inter.count,
        descriptions: keys.len(),
        images: n_images,
        std_convention: STD_CONVENTION.into(),
        anosim: anosim_result,
        anosim_items,
        sampling: config.sampling,
    })
}

/// Positions (into the key-sorted description list) selected for ANOSIM.
fn sample_indices(image_ids: &[usize], n_images: usize, sampling: AnosimSampling, seed: u64) -> Vec<usize> {
    let AnosimSampling::Stratified { per_image, max_images } = sampling else {
        return (0..image_ids.len()).collect();
    };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_images];
    for (i, &img) in image_ids.iter().enumerate() {
        members[img].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<usize> = (0..n_images).collect();
    let mut picked_images: Vec<usize> = if n_images > max_images {
        all.choose_multiple(&mut rng, max_images).copied().collect()
    } else {
        all
    };
    picked_images.sort_unstable();
    let mut out = Vec::new();
    for img in picked_images {
        let mut m = members[img].clone();
        if m.len() > per_image {
            m.shuffle(&mut rng);
            m.truncate(per_image);
        }
        out.extend(m);
    }
    out.sort_unstable();
    out
}

/// `(description key, image id)` pairs for every key of `store` found in `image_of`.
pub fn labels_from_map(store: &EmbeddingStore, image_of: &BTreeMap<String, String>) -> Result<Vec<(String, String)>> {
    store
        .keys()
        .iter()
        .map(|k| {
            image_of
                .get(k)
                .map(|img| (k.clone(), img.clone()))
                .ok_or_else(|| Error::UnknownDescription(k.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn label(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn identical_within_orthogonal_across() {
        let store = EmbeddingStore::from_entries(
            2,
            [
                ("a1", vec![1.0, 0.0]),
                ("a2", vec![2.0, 0.0]),
                ("b1", vec![0.0, 1.0]),
                ("b2", vec![0.0, 3.0]),
            ],
        )
        .unwrap();
        let labels = label(&[("a1", "A"), ("a2", "A"), ("b1", "B"), ("b2", "B")]);
        let s = intra_inter(&store, &labels, &SimilarityConfig::default()).unwrap();
        assert_eq!((s.intra_mean, s.intra_std, s.inter_mean, s.inter_std), (1.0, 0.0, 0.0, 0.0));
        assert_eq!((s.n_intra_pairs, s.n_inter_pairs), (2, 4));
        assert_eq!(s.anosim.unwrap().statistic, 1.0);
    }

    fn random_case(n: usize, images: usize, seed: u64) -> (EmbeddingStore, Vec<(String, String)>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = EmbeddingStore::new(4);
        let mut labels = Vec::new();
        for i in 0..n {
            let v: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.3).collect();
            store.insert(format!("d{i}"), &v).unwrap();
            labels.push((format!("d{i}"), format!("img{}", rng.random_range(0..images))));
        }
        (store, labels)
    }

    #[test]
    fn streaming_matches_double_loop() {
        let (store, labels) = random_case(300, 40, 3);
        let cfg = SimilarityConfig {
            block_size: 37,
            sampling: AnosimSampling::Skip,
            ..Default::default()
        };
        let s = intra_inter(&store, &labels, &cfg).unwrap();
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for i in 0..labels.len() {
            for j in i + 1..labels.len() {
                let c = store.cosine(&labels[i].0, &labels[j].0).unwrap();
                if labels[i].1 == labels[j].1 {
                    intra.push(c)
                } else {
                    inter.push(c)
                }
            }
        }
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt())
        };
        let (im, is) = stats(&intra);
        let (em, es) = stats(&inter);
        assert_eq!(s.n_intra_pairs as usize, intra.len());
        assert_eq!((s.n_intra_pairs + s.n_inter_pairs) as usize, 300 * 299 / 2);
        assert!((s.intra_mean - im).abs() < 1e-9 && (s.intra_std - is).abs() < 1e-9);
        assert!((s.inter_mean - em).abs() < 1e-9 && (s.inter_std - es).abs() < 1e-9);

        let mut reversed = labels.clone();
        reversed.reverse();
        assert_eq!(intra_inter(&store, &reversed, &cfg).unwrap(), s);
    }

    #[test]
    fn stratified_sample_limits() {
        let ids: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let picked = sample_indices(
            &ids,
            10,
            AnosimSampling::Stratified {
                per_image: 3,
                max_images: 4,
            },
            9,
        );
        assert_eq!(picked.len(), 12);
        let mut per: BTreeMap<usize, usize> = BTreeMap::new();
        picked.iter().for_each(|&p| *per.entry(ids[p]).or_default() += 1);
        assert_eq!(per.len(), 4);
        assert!(per.values().all(|&c| c == 3));
    }

    #[test]
    fn single_image_is_an_error() {
        let (store, mut labels) = random_case(10, 1, 1);
        labels.iter_mut().for_each(|l| l.1 = "only".into());
        assert!(intra_inter(&store, &labels, &SimilarityConfig::default()).is_err());
    }
}
