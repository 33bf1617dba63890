//! Gallery ranking, CMC and mAP, multi-shot matching, score fusion, and the
//! batch / incremental / active experiment protocols.
//!
//! Ties in distance are always broken by ascending gallery index.

mod protocol;

pub use protocol::*;

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::linalg;
use crate::regression::EmbeddingModel;
use crate::{IrsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankList {
    pub probe: usize,
    /// Gallery positions, nearest first.
    pub order: Vec<usize>,
    /// Distances aligned with `order` (non-decreasing).
    pub distances: Vec<f64>,
}

impl RankList {
    /// Sorts gallery positions `0..distances.len()` by (distance, position).
    pub fn from_distances(probe: usize, distances: &[f64]) -> RankList {
        let mut order: Vec<usize> = (0..distances.len()).collect();
        order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
        let sorted = order.iter().map(|&g| distances[g]).collect();
        RankList {
            probe,
            order,
            distances: sorted,
        }
    }

    /// 1-based rank of gallery position `g`.
    pub fn rank_of(&self, g: usize) -> Option<usize> {
        self.order.iter().position(|&x| x == g).map(|p| p + 1)
    }
}

/// Ranks every gallery sample against one probe column.
pub fn rank_gallery(model: &EmbeddingModel, probe: &FeatureMatrix, gallery: &FeatureMatrix) -> Result<RankList> {
    if gallery.is_empty() {
        return Err(IrsError::invalid("empty gallery"));
    }
    let p = model.embed_matrix(probe.data())?;
    let g = model.embed_matrix(gallery.data())?;
    let dists: Vec<f64> = (0..g.nrows())
        .map(|j| linalg::sq_euclidean(p.row(0).transpose().as_slice(), g.row(j).transpose().as_slice()).sqrt())
        .collect();
    Ok(RankList::from_distances(0, &dists))
}

/// Unsquared Euclidean distances between embedded rows (`probes × gallery`).
pub fn distance_matrix(probe_emb: &DMatrix<f64>, gallery_emb: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::pairwise_sq_dists(probe_emb, gallery_emb).map(f64::sqrt)
}

/// Embeds both sides and ranks the gallery for every probe.
pub fn rank_all(model: &EmbeddingModel, probes: &FeatureMatrix, gallery: &FeatureMatrix) -> Result<Vec<RankList>> {
    if gallery.is_empty() {
        return Err(IrsError::invalid("empty gallery"));
    }
    let dm = distance_matrix(&model.embed_matrix(probes.data())?, &model.embed_matrix(gallery.data())?);
    Ok(rank_distance_matrix(&dm))
}

pub fn rank_distance_matrix(dm: &DMatrix<f64>) -> Vec<RankList> {
    (0..dm.nrows())
        .map(|i| {
            let row: Vec<f64> = dm.row(i).iter().copied().collect();
            RankList::from_distances(i, &row)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    pub values: Vec<f64>,
}

impl CmcCurve {
    /// Matching rate at 1-based rank `k`.
    pub fn at(&self, k: usize) -> f64 {
        self.values[(k - 1).min(self.values.len() - 1)]
    }

    pub fn rank1(&self) -> f64 {
        self.values[0]
    }
}

fn check_labels(ranklists: &[RankList], probe_ids: &[u32], gallery_ids: &[u32]) -> Result<()> {
    if ranklists.len() != probe_ids.len() {
        return Err(IrsError::LabelCount {
            expected: ranklists.len(),
            found: probe_ids.len(),
        });
    }
    if ranklists.is_empty() {
        return Err(IrsError::invalid("no probes"));
    }
    for (rl, pid) in ranklists.iter().zip(probe_ids) {
        if rl.order.len() != gallery_ids.len() {
            return Err(IrsError::dims("rank list length differs from gallery size"));
        }
        if !gallery_ids.contains(pid) {
            return Err(IrsError::invalid(format!("probe id {pid} has no match in the gallery")));
        }
    }
    Ok(())
}

/// 1-based rank of the first true match in each rank list.
pub fn first_match_ranks(ranklists: &[RankList], probe_ids: &[u32], gallery_ids: &[u32]) -> Result<Vec<usize>> {
    check_labels(ranklists, probe_ids, gallery_ids)?;
    Ok(ranklists
        .iter()
        .zip(probe_ids)
        .map(|(rl, pid)| rl.order.iter().position(|&g| gallery_ids[g] == *pid).unwrap() + 1)
        .collect())
}

pub fn cmc(ranklists: &[RankList], probe_ids: &[u32], gallery_ids: &[u32]) -> Result<CmcCurve> {
    let ranks = first_match_ranks(ranklists, probe_ids, gallery_ids)?;
    let n = gallery_ids.len();
    let mut hits = vec![0usize; n];
    for r in &ranks {
        hits[r - 1] += 1;
    }
    let total = ranks.len() as f64;
    let mut acc = 0;
    let values = hits
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / total
        })
        .collect();
    Ok(CmcCurve { values })
}

/// Mean over probes of the average precision at each true-match position.
pub fn mean_ap(ranklists: &[RankList], probe_ids: &[u32], gallery_ids: &[u32]) -> Result<f64> {
    check_labels(ranklists, probe_ids, gallery_ids)?;
    let total: f64 = ranklists
        .iter()
        .zip(probe_ids)
        .map(|(rl, pid)| {
            let mut hits = 0usize;
            let mut sum = 0.0;
            for (pos, &g) in rl.order.iter().enumerate() {
                if gallery_ids[g] == *pid {
                    hits += 1;
                    sum += hits as f64 / (pos + 1) as f64;
                }
            }
            sum / hits as f64
        })
        .sum();
    Ok(total / ranklists.len() as f64)
}

/// Mean embedded distance over all cross-set pairs; duplicates count.
pub fn multishot_distance(model: &EmbeddingModel, probe_set: &FeatureMatrix, gallery_set: &FeatureMatrix) -> Result<f64> {
    let dm = distance_matrix(&model.embed_matrix(probe_set.data())?, &model.embed_matrix(gallery_set.data())?);
    Ok(dm.mean())
}

/// Groups samples by identity (first-appearance order) and averages the
/// distance matrix over each probe-group × gallery-group block.
pub fn multishot_matrix(dm: &DMatrix<f64>, probe_ids: &[u32], gallery_ids: &[u32]) -> (DMatrix<f64>, Vec<u32>, Vec<u32>) {
    fn groups(ids: &[u32]) -> (Vec<u32>, Vec<Vec<usize>>) {
        let mut order = Vec::new();
        let mut map: HashMap<u32, usize> = HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            let g = *map.entry(id).or_insert_with(|| {
                order.push(id);
                members.push(Vec::new());
                members.len() - 1
            });
            members[g].push(i);
        }
        (order, members)
    }
    let (pids, pgroups) = groups(probe_ids);
    let (gids, ggroups) = groups(gallery_ids);
    let out = DMatrix::from_fn(pgroups.len(), ggroups.len(), |a, b| {
        let mut s = 0.0;
        for &i in &pgroups[a] {
            for &j in &ggroups[b] {
                s += dm[(i, j)];
            }
        }
        s / (pgroups[a].len() * ggroups[b].len()) as f64
    });
    (out, pids, gids)
}

/// Min-max normalises each matrix over all of its entries, then takes the
/// weighted sum (equal weights by default). A constant matrix contributes
/// zeros.
pub fn fuse_scores(matrices: &[DMatrix<f64>], weights: Option<&[f64]>) -> Result<DMatrix<f64>> {
    let first = matrices
        .first()
        .ok_or_else(|| IrsError::invalid("nothing to fuse"))?;
    let shape = first.shape();
    if let Some(bad) = matrices.iter().find(|m| m.shape() != shape) {
        return Err(IrsError::dims(format!("cannot fuse {:?} with {:?}", shape, bad.shape())));
    }
    let default_w = vec![1.0 / matrices.len() as f64; matrices.len()];
    let weights = weights.unwrap_or(&default_w);
    if weights.len() != matrices.len() {
        return Err(IrsError::invalid("one weight per matrix required"));
    }
    let mut out = DMatrix::zeros(shape.0, shape.1);
    for (k, (m, w)) in matrices.iter().zip(weights).enumerate() {
        let (lo, hi) = (m.min(), m.max());
        if hi > lo {
            out += m.map(|v| (v - lo) / (hi - lo)) * *w;
        } else {
            log::warn!("score matrix {k} is constant; it contributes nothing to the fusion");
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn list_with_ranks(true_rank: usize, n: usize) -> RankList {
        // gallery position 0 is the true match placed at `true_rank`.
        let mut order: Vec<usize> = (1..n).collect();
        order.insert(true_rank - 1, 0);
        RankList {
            probe: 0,
            distances: (0..n).map(|i| i as f64).collect(),
            order,
        }
    }

    #[test]
    fn cmc_counting() {
        let lists: Vec<RankList> = [1, 3, 2].iter().map(|&r| list_with_ranks(r, 4)).collect();
        let gallery_ids = [7, 1, 2, 3];
        let c = cmc(&lists, &[7, 7, 7], &gallery_ids).unwrap();
        assert_relative_eq!(c.values[0], 1.0 / 3.0);
        assert_relative_eq!(c.values[1], 2.0 / 3.0);
        assert_eq!(&c.values[2..], &[1.0, 1.0]);
        assert!(cmc(&lists, &[7, 7, 9], &gallery_ids).is_err());
    }

    #[test]
    fn ap_worked_example() {
        let rl = RankList {
            probe: 0,
            order: vec![0, 1, 2, 3],
            distances: vec![0.0, 1.0, 2.0, 3.0],
        };
        let ap = mean_ap(&[rl], &[5], &[5, 1, 5, 2]).unwrap();
        assert_relative_eq!(ap, (1.0 + 2.0 / 3.0) / 2.0, epsilon = 1e-15);
        assert_relative_eq!(ap, 0.83333, epsilon = 1e-5);
        for k in 1..=5 {
            let ap = mean_ap(&[list_with_ranks(k, 5)], &[7], &[7, 1, 2, 3, 4]).unwrap();
            assert_relative_eq!(ap, 1.0 / k as f64, epsilon = 1e-15);
        }
    }

    #[test]
    fn ties_break_by_gallery_index() {
        let rl = RankList::from_distances(0, &[0.7, 0.5, 0.5]);
        assert_eq!(rl.order, vec![1, 2, 0]);
        assert_eq!(rl.rank_of(0), Some(3));
    }

    #[test]
    fn fusion_behaviour() {
        let orders = |m: &DMatrix<f64>| -> Vec<Vec<usize>> { rank_distance_matrix(m).into_iter().map(|r| r.order).collect() };
        let a = DMatrix::from_row_slice(2, 3, &[0.1, 0.5, 0.9, 0.3, 0.2, 0.8]);
        let self_fused = fuse_scores(&[a.clone(), a.clone()], None).unwrap();
        assert_eq!(orders(&self_fused), orders(&a));
        let flat = DMatrix::from_element(2, 3, 4.0);
        let fused = fuse_scores(&[flat, a.clone()], None).unwrap();
        assert_eq!(orders(&fused), orders(&a));
        let affine = a.map(|v| 3.0 * v + 10.0);
        assert_relative_eq!(fuse_scores(&[affine], None).unwrap(), fuse_scores(&[a.clone()], None).unwrap(), epsilon = 1e-12);
        assert!(fuse_scores(&[a, DMatrix::zeros(3, 2)], None).is_err());
    }

    #[test]
    fn multishot_grouping() {
        let dm = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (m, pids, gids) = multishot_matrix(&dm, &[1, 1, 2], &[1, 2]);
        assert_eq!(pids, vec![1, 2]);
        assert_eq!(gids, vec![1, 2]);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 5.0, 6.0]));
    }
}
