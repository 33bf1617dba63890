//! Active selection of which probe to label next, and the labeling loop.
//!
//! Three criteria are scored for every unlabeled probe, all on the squared
//! model distance `d(a, b) = ‖Pᵀa − Pᵀb‖²`:
//!
//! - diversity: distance to the nearest already-labeled probe-view sample
//! - discrepancy: distance to the nearest gallery sample
//! - uncertainty: entropy of `softmax(−d)` over the gallery
//!
//! Each criterion is divided by its pool maximum and the three are summed.
//! The highest total wins; ties go to the lowest sample index.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::evaluation::RankList;
use crate::incremental::{IncrementalState, KernelLift};
use crate::linalg;
use crate::regression::{median_bandwidth, EmbeddingModel, Kernel};
use crate::{IrsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    JointE2,
    Random,
    Density,
}

impl std::str::FromStr for Strategy {
    type Err = IrsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jointe2" | "joint" => Ok(Strategy::JointE2),
            "random" => Ok(Strategy::Random),
            "density" => Ok(Strategy::Density),
            other => Err(IrsError::invalid(format!("unknown strategy {other:?}"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::JointE2 => "jointe2",
            Strategy::Random => "random",
            Strategy::Density => "density",
        })
    }
}

/// Which gallery samples the discrepancy and uncertainty criteria range over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GalleryScope {
    /// Gallery samples not yet annotated.
    #[default]
    Unlabeled,
    /// Every gallery-view training sample.
    All,
}

/// Squared distance from each candidate row to its nearest labeled row.
/// With nothing labeled the criterion is zero for every candidate.
pub fn diversity_scores(candidates: &DMatrix<f64>, labeled: &DMatrix<f64>) -> Vec<f64> {
    if labeled.nrows() == 0 {
        return vec![0.0; candidates.nrows()];
    }
    row_minima(&linalg::pairwise_sq_dists(candidates, labeled))
}

fn row_minima(d: &DMatrix<f64>) -> Vec<f64> {
    d.row_iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).collect()
}

pub fn discrepancy_scores(candidates: &DMatrix<f64>, gallery: &DMatrix<f64>) -> Result<Vec<f64>> {
    if gallery.nrows() == 0 {
        return Err(IrsError::invalid("discrepancy needs a non-empty gallery pool"));
    }
    Ok(row_minima(&linalg::pairwise_sq_dists(candidates, gallery)))
}

/// Natural-log entropy of `p_j ∝ exp(−d_j)`, shifted by the smallest distance
/// for stability.
pub fn entropy_of_distances(dists: &[f64]) -> f64 {
    let dmin = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = dists.iter().map(|d| (-(d - dmin)).exp()).collect();
    let z: f64 = w.iter().sum();
    -w.iter()
        .map(|wi| {
            let p = wi / z;
            if p > 0.0 {
                p * p.ln()
            } else {
                0.0
            }
        })
        .sum::<f64>()
}

pub fn uncertainty_scores(candidates: &DMatrix<f64>, gallery: &DMatrix<f64>) -> Result<Vec<f64>> {
    if gallery.nrows() < 2 {
        return Err(IrsError::invalid("uncertainty needs at least 2 gallery samples"));
    }
    let d = linalg::pairwise_sq_dists(candidates, gallery);
    Ok(d.row_iter()
        .map(|r| entropy_of_distances(&r.iter().copied().collect::<Vec<_>>()))
        .collect())
}

/// Divides by the maximum; an all-zero vector stays all zeros.
pub fn normalize_by_max(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(0.0f64, f64::max);
    if max > 0.0 {
        v.iter().map(|x| x / max).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// Position of the largest normalised sum; first position wins ties.
pub fn joint_argmax(e1: &[f64], e2: &[f64], e3: &[f64]) -> Option<usize> {
    let (n1, n2, n3) = (normalize_by_max(e1), normalize_by_max(e2), normalize_by_max(e3));
    let mut best: Option<(usize, f64)> = None;
    for i in 0..n1.len() {
        let s = n1[i] + n2[i] + n3[i];
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Mean squared distance to the `k` nearest other candidates (lower is denser).
pub fn density_scores(candidates: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let n = candidates.nrows();
    if n <= 1 {
        return vec![0.0; n];
    }
    let k = k.clamp(1, n - 1);
    let d = linalg::pairwise_sq_dists(candidates, candidates);
    (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| d[(i, j)]).collect();
            row.sort_by(f64::total_cmp);
            row[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

/// Raw criterion values, aligned with the unlabeled probe pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Criteria {
    pub probes: Vec<usize>,
    pub diversity: Vec<f64>,
    pub discrepancy: Vec<f64>,
    pub uncertainty: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum KernelChoice {
    None,
    Linear,
    /// `bandwidth = None` uses the median heuristic over the anchors.
    Rbf { bandwidth: Option<f64> },
}

impl KernelChoice {
    pub fn resolve(&self, anchors: &DMatrix<f64>) -> Result<Option<Kernel>> {
        match self {
            KernelChoice::None => Ok(None),
            KernelChoice::Linear => Ok(Some(Kernel::Linear)),
            KernelChoice::Rbf { bandwidth } => {
                let bw = match bandwidth {
                    Some(b) => *b,
                    None => median_bandwidth(anchors)?,
                };
                Ok(Some(Kernel::rbf(bw)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveConfig {
    pub strategy: Strategy,
    /// Annotations to request.
    pub budget: usize,
    /// Identities labeled at random before active selection.
    pub seed_ids: usize,
    /// Candidates shown to a human annotator.
    pub rank_window: usize,
    pub lambda: f64,
    pub kernel: KernelChoice,
    /// Extra unlabeled samples added to the kernel anchor set.
    pub extra_anchors: usize,
    pub gallery_scope: GalleryScope,
    /// Neighbourhood size for the density baseline.
    pub density_k: usize,
    /// Attempts per step before an annotator failure aborts the session.
    pub annotator_attempts: usize,
    pub seed: u64,
}

impl Default for ActiveConfig {
    fn default() -> Self {
        ActiveConfig {
            strategy: Strategy::JointE2,
            budget: 200,
            seed_ids: 10,
            rank_window: 50,
            lambda: crate::DEFAULT_LAMBDA,
            kernel: KernelChoice::None,
            extra_anchors: 0,
            gallery_scope: GalleryScope::Unlabeled,
            density_k: 5,
            annotator_attempts: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub gallery_index: usize,
    pub distance: f64,
}

/// A probe handed out for annotation, with the unlabeled gallery ranked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issued {
    pub step: usize,
    pub probe_index: usize,
    pub chosen_by: Strategy,
    pub epsilon: [f64; 3],
    pub ranked: Vec<RankedCandidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "gallery_index")]
pub enum Answer {
    Match(usize),
    /// The true match is not in the list; the probe is dropped unlabeled.
    Skip,
}

/// One line of the session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub probe_index: usize,
    pub gallery_index: Option<usize>,
    pub chosen_by: Strategy,
    pub true_match_rank: Option<usize>,
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub epsilon3: f64,
    pub update_ms: f64,
    #[serde(default)]
    pub skipped: bool,
}

impl StepRecord {
    pub fn answer(&self) -> Answer {
        match self.gallery_index {
            Some(g) if !self.skipped => Answer::Match(g),
            _ => Answer::Skip,
        }
    }
}

pub trait Annotator {
    /// Picks the true match for `issued.probe_index` among `issued.ranked`.
    fn annotate(&mut self, issued: &Issued, features: &FeatureMatrix) -> Result<Answer>;
}

/// Answers from ground-truth identity labels, whatever the match's rank.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleAnnotator;

impl Annotator for OracleAnnotator {
    fn annotate(&mut self, issued: &Issued, features: &FeatureMatrix) -> Result<Answer> {
        let id = features.ids()[issued.probe_index];
        Ok(issued
            .ranked
            .iter()
            .find(|c| features.ids()[c.gallery_index] == id)
            .map_or(Answer::Skip, |c| Answer::Match(c.gallery_index)))
    }
}

/// Replays a recorded sequence of answers; the probes must come up in the
/// recorded order.
#[derive(Debug, Clone)]
pub struct ReplayAnnotator {
    records: Vec<(usize, Answer)>,
    next: usize,
}

impl ReplayAnnotator {
    pub fn new(records: Vec<(usize, Answer)>) -> Self {
        ReplayAnnotator { records, next: 0 }
    }

    pub fn from_log(log: &[StepRecord]) -> Self {
        Self::new(log.iter().map(|r| (r.probe_index, r.answer())).collect())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl Annotator for ReplayAnnotator {
    fn annotate(&mut self, issued: &Issued, _: &FeatureMatrix) -> Result<Answer> {
        let (probe, answer) = *self
            .records
            .get(self.next)
            .ok_or_else(|| IrsError::Annotator("replay log exhausted".into()))?;
        if probe != issued.probe_index {
            return Err(IrsError::Annotator(format!(
                "replay diverged at step {}: log has probe {probe}, session selected {}",
                issued.step, issued.probe_index
            )));
        }
        self.next += 1;
        Ok(answer)
    }
}

/// The active labeling loop state.
#[derive(Debug, Clone)]
pub struct LabelingSession {
    features: FeatureMatrix,
    /// Columns the model is fitted on: raw features, or their kernel lift.
    work: DMatrix<f64>,
    lift: Option<KernelLift>,
    state: IncrementalState,
    config: ActiveConfig,
    probe_pool: Vec<usize>,
    gallery_pool: Vec<usize>,
    gallery_all: Vec<usize>,
    labeled_probes: Vec<usize>,
    labeled_gallery: Vec<usize>,
    seed_identities: Vec<u32>,
    issued_count: usize,
    pending: Option<Issued>,
    log: Vec<StepRecord>,
    next_label: u32,
    rng: ChaCha8Rng,
}

impl LabelingSession {
    /// Labels `config.seed_ids` random training identities (all of their
    /// probe- and gallery-view samples) and fits the initial model. Every
    /// other training sample of the two views forms the unlabeled pools.
    pub fn new(
        features: FeatureMatrix,
        train_ids: &BTreeSet<u32>,
        probe_cam: u32,
        gallery_cam: u32,
        config: ActiveConfig,
    ) -> Result<Self> {
        if config.seed_ids == 0 {
            return Err(IrsError::invalid("seed set must contain at least one identity"));
        }
        if config.rank_window == 0 {
            return Err(IrsError::invalid("rank window must be at least 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let in_view = |cam: u32| -> Vec<usize> {
            (0..features.len())
                .filter(|&i| features.cams()[i] == cam && train_ids.contains(&features.ids()[i]))
                .collect()
        };
        let probes = in_view(probe_cam);
        let gallery = in_view(gallery_cam);
        let gallery_ids: BTreeSet<u32> = gallery.iter().map(|&i| features.ids()[i]).collect();
        let eligible: Vec<u32> = probes
            .iter()
            .map(|&i| features.ids()[i])
            .filter(|id| gallery_ids.contains(id))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if eligible.len() < config.seed_ids {
            return Err(IrsError::invalid(format!(
                "seed set of {} identities requested, only {} have both views",
                config.seed_ids,
                eligible.len()
            )));
        }
        let mut seed_identities: Vec<u32> = eligible.choose_multiple(&mut rng, config.seed_ids).copied().collect();
        seed_identities.sort_unstable();
        let is_seed = |i: &usize| seed_identities.binary_search(&features.ids()[*i]).is_ok();
        let labeled_probes: Vec<usize> = probes.iter().copied().filter(is_seed).collect();
        let labeled_gallery: Vec<usize> = gallery.iter().copied().filter(is_seed).collect();
        let probe_pool: Vec<usize> = probes.iter().copied().filter(|i| !is_seed(i)).collect();
        let gallery_pool: Vec<usize> = gallery.iter().copied().filter(|i| !is_seed(i)).collect();

        let seed_cols: Vec<usize> = labeled_probes.iter().chain(&labeled_gallery).copied().collect();
        let raw_seed = features.data().select_columns(&seed_cols);
        let (work, lift) = match config.kernel.resolve(&raw_seed)? {
            None => (features.data().clone(), None),
            Some(kernel) => {
                let mut anchor_cols = seed_cols.clone();
                let mut unlabeled: Vec<usize> = probe_pool.iter().chain(&gallery_pool).copied().collect();
                unlabeled.shuffle(&mut rng);
                unlabeled.truncate(config.extra_anchors);
                unlabeled.sort_unstable();
                anchor_cols.extend(unlabeled);
                let lift = KernelLift::new(features.data().select_columns(&anchor_cols), kernel)?;
                (lift.lift(features.data())?, Some(lift))
            }
        };
        let seed_labels: Vec<u32> = seed_cols.iter().map(|&i| features.ids()[i]).collect();
        let y0 = crate::coding::onehot(&seed_labels, seed_identities.len())?;
        let state = IncrementalState::init_matrix(&work.select_columns(&seed_cols), &y0.y, y0.registry, config.lambda)?;
        let next_label = features.ids().iter().copied().max().unwrap_or(0) + 1;

        Ok(LabelingSession {
            features,
            work,
            lift,
            state,
            config,
            probe_pool,
            gallery_pool,
            gallery_all: gallery,
            labeled_probes,
            labeled_gallery,
            seed_identities,
            issued_count: 0,
            pending: None,
            log: Vec::new(),
            next_label,
            rng,
        })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn config(&self) -> &ActiveConfig {
        &self.config
    }

    pub fn state(&self) -> &IncrementalState {
        &self.state
    }

    pub fn probe_pool(&self) -> &[usize] {
        &self.probe_pool
    }

    pub fn gallery_pool(&self) -> &[usize] {
        &self.gallery_pool
    }

    pub fn labeled_probes(&self) -> &[usize] {
        &self.labeled_probes
    }

    pub fn labeled_gallery(&self) -> &[usize] {
        &self.labeled_gallery
    }

    pub fn seed_identities(&self) -> &[u32] {
        &self.seed_identities
    }

    pub fn log(&self) -> &[StepRecord] {
        &self.log
    }

    pub fn pending(&self) -> Option<&Issued> {
        self.pending.as_ref()
    }

    /// Annotations handed out so far (skips included).
    pub fn steps_taken(&self) -> usize {
        self.issued_count
    }

    pub fn budget_left(&self) -> usize {
        self.config.budget.saturating_sub(self.issued_count)
    }

    pub fn is_done(&self) -> bool {
        self.pending.is_none()
            && (self.budget_left() == 0 || self.probe_pool.is_empty() || self.gallery_pool.is_empty())
    }

    /// Embedding model for raw features at the current state.
    pub fn model(&self) -> EmbeddingModel {
        match &self.lift {
            Some(lift) => lift.model(&self.state),
            None => self.state.snapshot(),
        }
    }

    fn embed_cols(&self, cols: &[usize]) -> DMatrix<f64> {
        self.work.select_columns(cols).tr_mul(self.state.projection())
    }

    fn scope_gallery(&self) -> &[usize] {
        match self.config.gallery_scope {
            GalleryScope::Unlabeled => &self.gallery_pool,
            GalleryScope::All => &self.gallery_all,
        }
    }

    /// Raw criteria for every unlabeled probe under the current model.
    pub fn criteria(&self) -> Result<Criteria> {
        let cand = self.embed_cols(&self.probe_pool);
        let labeled = self.embed_cols(&self.labeled_probes);
        let gal = self.embed_cols(self.scope_gallery());
        let diversity = diversity_scores(&cand, &labeled);
        let (discrepancy, uncertainty) = if gal.nrows() >= 2 {
            (discrepancy_scores(&cand, &gal)?, uncertainty_scores(&cand, &gal)?)
        } else {
            // A single gallery candidate carries no ranking ambiguity.
            (discrepancy_scores(&cand, &gal)?, vec![0.0; cand.nrows()])
        };
        Ok(Criteria {
            probes: self.probe_pool.clone(),
            diversity,
            discrepancy,
            uncertainty,
        })
    }

    /// Picks the next probe by the configured strategy. Returns the probe's
    /// sample index and its raw criterion values.
    pub fn select_next(&mut self) -> Result<(usize, [f64; 3])> {
        if self.probe_pool.is_empty() {
            return Err(IrsError::Session("probe pool is empty".into()));
        }
        let crit = self.criteria()?;
        let pos = match self.config.strategy {
            Strategy::JointE2 => joint_argmax(&crit.diversity, &crit.discrepancy, &crit.uncertainty).unwrap(),
            Strategy::Random => {
                let positions: Vec<usize> = (0..self.probe_pool.len()).collect();
                *positions.choose(&mut self.rng).unwrap()
            }
            Strategy::Density => {
                let scores = density_scores(&self.embed_cols(&self.probe_pool), self.config.density_k);
                let mut best = 0;
                for (i, s) in scores.iter().enumerate() {
                    if *s < scores[best] {
                        best = i;
                    }
                }
                best
            }
        };
        Ok((
            self.probe_pool[pos],
            [crit.diversity[pos], crit.discrepancy[pos], crit.uncertainty[pos]],
        ))
    }

    /// Ranks the unlabeled gallery against `probe` (unsquared distances).
    pub fn rank_pool(&self, probe: usize) -> RankList {
        let p = self.embed_cols(&[probe]);
        let g = self.embed_cols(&self.gallery_pool);
        let d: Vec<f64> = linalg::pairwise_sq_dists(&p, &g).iter().map(|v| v.sqrt()).collect();
        RankList::from_distances(probe, &d)
    }

    /// Hands out the next probe, or re-issues the outstanding one. `None`
    /// once the budget or a pool is exhausted.
    pub fn issue(&mut self) -> Result<Option<Issued>> {
        if let Some(p) = &self.pending {
            return Ok(Some(p.clone()));
        }
        if self.is_done() {
            return Ok(None);
        }
        let (probe, epsilon) = self.select_next()?;
        let rl = self.rank_pool(probe);
        let ranked = rl
            .order
            .iter()
            .zip(&rl.distances)
            .map(|(&g, &distance)| RankedCandidate {
                gallery_index: self.gallery_pool[g],
                distance,
            })
            .collect();
        let issued = Issued {
            step: self.issued_count,
            probe_index: probe,
            chosen_by: self.config.strategy,
            epsilon,
            ranked,
        };
        self.pending = Some(issued.clone());
        Ok(Some(issued))
    }

    /// Applies the answer for the outstanding probe and updates the model.
    pub fn annotate(&mut self, probe: usize, answer: Answer) -> Result<StepRecord> {
        let issued = match &self.pending {
            Some(p) if p.probe_index == probe => p.clone(),
            Some(p) => {
                return Err(IrsError::Session(format!(
                    "probe {probe} is not the outstanding probe {}",
                    p.probe_index
                )))
            }
            None => return Err(IrsError::Session("no probe is outstanding".into())),
        };
        let mut record = StepRecord {
            step: issued.step,
            probe_index: probe,
            gallery_index: None,
            chosen_by: issued.chosen_by,
            true_match_rank: None,
            epsilon1: issued.epsilon[0],
            epsilon2: issued.epsilon[1],
            epsilon3: issued.epsilon[2],
            update_ms: 0.0,
            skipped: false,
        };
        match answer {
            Answer::Match(g) => {
                let rank = issued
                    .ranked
                    .iter()
                    .position(|c| c.gallery_index == g)
                    .ok_or_else(|| IrsError::invalid(format!("gallery sample {g} is not in the unlabeled pool")))?;
                let xp = self.work.select_columns(&[probe, g]);
                let label = self.next_label;
                let start = Instant::now();
                self.state.update_labeled(&xp, &[label, label])?;
                record.update_ms = start.elapsed().as_secs_f64() * 1e3;
                self.next_label += 1;
                self.gallery_pool.retain(|&x| x != g);
                self.labeled_probes.push(probe);
                self.labeled_gallery.push(g);
                record.gallery_index = Some(g);
                record.true_match_rank = Some(rank + 1);
            }
            Answer::Skip => record.skipped = true,
        }
        self.probe_pool.retain(|&x| x != probe);
        self.issued_count += 1;
        self.pending = None;
        self.log.push(record.clone());
        Ok(record)
    }
}

/// Runs select → rank → annotate → update until the budget or the pools run
/// out. `on_step` sees the session after each applied step. An annotator
/// error is retried up to `annotator_attempts` times, then aborts the run.
pub fn run_session<A, F>(session: &mut LabelingSession, annotator: &mut A, mut on_step: F) -> Result<Vec<StepRecord>>
where
    A: Annotator + ?Sized,
    F: FnMut(&LabelingSession, &StepRecord),
{
    let start = session.log.len();
    while let Some(issued) = session.issue()? {
        let mut attempt = 0;
        let answer = loop {
            attempt += 1;
            match annotator.annotate(&issued, &session.features) {
                Ok(a) => break a,
                Err(e) if attempt < session.config.annotator_attempts.max(1) => {
                    log::warn!("annotator failed on step {} (attempt {attempt}): {e}", issued.step);
                }
                Err(e) => return Err(e),
            }
        };
        let record = session.annotate(issued.probe_index, answer)?;
        on_step(session, &record);
    }
    Ok(session.log[start..].to_vec())
}

pub fn write_log_jsonl(records: &[StepRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn read_log_jsonl(text: &str) -> Result<Vec<StepRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| IrsError::invalid(format!("log line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn diversity_examples() {
        let labeled = col(&[0.0, 10.0]);
        assert_eq!(diversity_scores(&col(&[4.0]), &labeled), vec![16.0]);
        assert_eq!(diversity_scores(&col(&[10.0]), &labeled), vec![0.0]);
        assert_eq!(diversity_scores(&col(&[1.0, 5.0]), &DMatrix::zeros(0, 1)), vec![0.0, 0.0]);
        let s = diversity_scores(&col(&[1.0, 5.0, 30.0]), &labeled);
        assert_eq!(s.iter().copied().fold(0.0, f64::max), s[2]);
    }

    #[test]
    fn discrepancy_examples() {
        assert_eq!(discrepancy_scores(&col(&[5.0]), &col(&[3.0, 9.0])).unwrap(), vec![4.0]);
        assert_eq!(discrepancy_scores(&col(&[9.0]), &col(&[3.0, 9.0])).unwrap(), vec![0.0]);
        assert!(discrepancy_scores(&col(&[9.0]), &DMatrix::zeros(0, 1)).is_err());
        // subset never decreases the minimum
        let full = discrepancy_scores(&col(&[5.0]), &col(&[3.0, 9.0, 4.5])).unwrap()[0];
        let sub = discrepancy_scores(&col(&[5.0]), &col(&[3.0, 9.0])).unwrap()[0];
        assert!(sub >= full);
    }

    #[test]
    fn entropy_examples() {
        assert_relative_eq!(entropy_of_distances(&[2.0, 2.0]), 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(entropy_of_distances(&[1.0; 7]), 7f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(
            entropy_of_distances(&[0.0, 2f64.ln()]),
            3f64.ln() - (2.0 / 3.0) * 2f64.ln(),
            epsilon = 1e-15
        );
        assert_relative_eq!(entropy_of_distances(&[0.0, 2f64.ln()]), 0.63651, epsilon = 1e-5);
        assert!(entropy_of_distances(&[0.0, 1e6, 1e6]) < 1e-12);
        assert!(uncertainty_scores(&col(&[1.0]), &col(&[1.0])).is_err());
    }

    #[test]
    fn normalisation_and_selection() {
        assert_eq!(normalize_by_max(&[2.0, 4.0]), vec![0.5, 1.0]);
        assert_eq!(normalize_by_max(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(joint_argmax(&[1.0, 3.0, 2.0], &[1.0, 5.0, 2.0], &[0.1, 0.3, 0.2]), Some(1));
        assert_eq!(joint_argmax(&[1.0, 1.0], &[2.0, 2.0], &[0.0, 0.0]), Some(0));
        assert_eq!(joint_argmax(&[], &[], &[]), None);
    }

    #[test]
    fn density_prefers_clusters() {
        let c = col(&[0.0, 0.1, 0.2, 5.0]);
        let s = density_scores(&c, 2);
        let best = (0..4).min_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        assert_eq!(best, 1);
    }

    #[test]
    fn log_roundtrip() {
        let r = StepRecord {
            step: 0,
            probe_index: 3,
            gallery_index: Some(8),
            chosen_by: Strategy::JointE2,
            true_match_rank: Some(2),
            epsilon1: 0.5,
            epsilon2: 1.5,
            epsilon3: 0.25,
            update_ms: 0.1,
            skipped: false,
        };
        let text = write_log_jsonl(std::slice::from_ref(&r));
        assert!(text.contains("\"true_match_rank\":2"));
        assert_eq!(read_log_jsonl(&text).unwrap(), vec![r]);
    }
}
