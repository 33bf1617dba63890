use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{cmc, distance_matrix, mean_ap, multishot_matrix, rank_distance_matrix, CmcCurve};
use crate::active::{run_session, ActiveConfig, GalleryScope, KernelChoice, LabelingSession, OracleAnnotator, Strategy};
use crate::coding::{self, CodingScheme};
use crate::dataset::{self, make_split, FeatureMatrix, SplitSpec, SyntheticSpec};
use crate::incremental::{IncrementalState, KernelLift};
use crate::linalg;
use crate::regression::{self, EmbeddingModel, SolveInfo, SolveMethod};
use crate::{IrsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Manifest { path: PathBuf },
}

impl DataSource {
    pub fn load(&self) -> Result<FeatureMatrix> {
        match self {
            DataSource::Synthetic(spec) => dataset::gen_synthetic(spec),
            DataSource::Manifest { path } => dataset::load_features(path),
        }
    }
}

/// How test probes are matched against the test gallery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotMode {
    /// Every probe sample against every gallery sample.
    #[default]
    All,
    /// One randomly chosen gallery sample per identity (seeded per split).
    Single,
    /// Distances averaged over all cross-view pairs of each identity pair.
    Multi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ProtocolMode {
    /// Fit once on all training data.
    Batch,
    /// Start from `start_ids` training identities and add `step_ids` per
    /// update. With `compare_batch`, a batch refit after every step is timed
    /// alongside and compared at the end.
    Incremental {
        start_ids: usize,
        step_ids: usize,
        #[serde(default)]
        compare_batch: bool,
        /// Identity counts at which test CMC snapshots are taken.
        #[serde(default)]
        checkpoints: Vec<usize>,
    },
    /// Oracle-annotated active sessions; checkpoints count annotations.
    Active {
        strategies: Vec<Strategy>,
        budget: usize,
        seed_ids: usize,
        checkpoints: Vec<usize>,
        #[serde(default)]
        gallery_scope: GalleryScope,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub data: DataSource,
    pub split_ratio: f64,
    pub seeds: Vec<u64>,
    pub lambda: f64,
    pub coding: CodingScheme,
    pub kernel: KernelChoice,
    #[serde(default)]
    pub shot: ShotMode,
    pub mode: ProtocolMode,
}

impl ProtocolConfig {
    pub fn batch(data: DataSource) -> Self {
        ProtocolConfig {
            data,
            split_ratio: 0.5,
            seeds: vec![0],
            lambda: crate::DEFAULT_LAMBDA,
            coding: CodingScheme::OneHot,
            kernel: KernelChoice::None,
            shot: ShotMode::All,
            mode: ProtocolMode::Batch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(IrsError::invalid("protocol needs at least one seed"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(IrsError::invalid(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        match &self.mode {
            ProtocolMode::Batch => {}
            ProtocolMode::Incremental { start_ids, step_ids, .. } => {
                if *start_ids == 0 || *step_ids == 0 {
                    return Err(IrsError::invalid("start_ids and step_ids must be at least 1"));
                }
            }
            ProtocolMode::Active { strategies, seed_ids, .. } => {
                if strategies.is_empty() {
                    return Err(IrsError::invalid("active protocol needs at least one strategy"));
                }
                if *seed_ids == 0 {
                    return Err(IrsError::invalid("seed set must contain at least one identity"));
                }
            }
        }
        if !matches!(self.mode, ProtocolMode::Batch) {
            if self.coding != CodingScheme::OneHot {
                return Err(IrsError::invalid("incremental and active protocols use OneHot coding"));
            }
            if self.lambda <= 0.0 {
                return Err(IrsError::invalid("incremental and active protocols need lambda > 0"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub strategy: Option<Strategy>,
    /// Identities (incremental) or annotations (active) at the snapshot.
    pub at: usize,
    pub cmc: Vec<f64>,
    pub rank1: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub strategy: Option<Strategy>,
    pub cmc: Vec<f64>,
    pub rank1: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub alt_seconds: f64,
    pub update_times_ms: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub batch_alt_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rankings_identical: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rel_frobenius: Option<f64>,
    #[serde(default)]
    pub checkpoints: Vec<Checkpoint>,
}

/// Checkpoint averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointSummary {
    pub strategy: Option<Strategy>,
    pub at: usize,
    pub mean_cmc: Vec<f64>,
    pub mean_rank1: f64,
    #[serde(rename = "mAP")]
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub config_digest: String,
    pub per_seed: Vec<SeedReport>,
    /// Mean final CMC (first strategy in active mode).
    pub mean_cmc: Vec<f64>,
    #[serde(rename = "mAP")]
    pub map: f64,
    /// Mean over seeds of the summed training time.
    pub alt_seconds: f64,
    /// Per-update wall time, averaged over seeds position by position.
    pub update_times_ms: Vec<f64>,
    #[serde(default)]
    pub checkpoints: Vec<CheckpointSummary>,
}

impl ProtocolReport {
    pub fn mean_rank1(&self) -> f64 {
        self.mean_cmc.first().copied().unwrap_or(0.0)
    }

    pub fn checkpoint(&self, strategy: Option<Strategy>, at: usize) -> Option<&CheckpointSummary> {
        self.checkpoints.iter().find(|c| c.strategy == strategy && c.at == at)
    }

    /// `rank,mean` plus one column per checkpoint (`strategy@at`).
    pub fn write_cmc_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("rank,mean");
        for c in &self.checkpoints {
            match c.strategy {
                Some(s) => out.push_str(&format!(",{s}@{}", c.at)),
                None => out.push_str(&format!(",ids@{}", c.at)),
            }
        }
        out.push('\n');
        for k in 0..self.mean_cmc.len() {
            out.push_str(&format!("{},{}", k + 1, self.mean_cmc[k]));
            for c in &self.checkpoints {
                out.push_str(&format!(",{}", c.mean_cmc.get(k).copied().unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| IrsError::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| IrsError::io(path, e))
    }
}

/// Test probes and gallery for one split, in the configured shot mode.
#[derive(Debug, Clone)]
pub struct TestSet {
    pub probes: FeatureMatrix,
    pub gallery: FeatureMatrix,
    pub shot: ShotMode,
}

impl TestSet {
    pub fn new(fm: &FeatureMatrix, split: &SplitSpec, shot: ShotMode) -> Result<Self> {
        let probe_idx = split.test_probe_indices(fm);
        let mut gallery_idx = split.test_gallery_indices(fm);
        if probe_idx.is_empty() || gallery_idx.is_empty() {
            return Err(IrsError::invalid("test split has an empty probe or gallery view"));
        }
        if shot == ShotMode::Single {
            let mut rng = ChaCha8Rng::seed_from_u64(split.seed);
            let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for &i in &gallery_idx {
                by_id.entry(fm.ids()[i]).or_default().push(i);
            }
            gallery_idx = by_id.values().map(|v| *v.choose(&mut rng).unwrap()).collect();
            gallery_idx.sort_unstable();
        }
        Ok(TestSet {
            probes: fm.select(&probe_idx),
            gallery: fm.select(&gallery_idx),
            shot,
        })
    }

    /// Probe × gallery distances and the labels of both axes.
    pub fn distances(&self, model: &EmbeddingModel) -> Result<(DMatrix<f64>, Vec<u32>, Vec<u32>)> {
        let dm = distance_matrix(
            &model.embed_matrix(self.probes.data())?,
            &model.embed_matrix(self.gallery.data())?,
        );
        Ok(match self.shot {
            ShotMode::Multi => multishot_matrix(&dm, self.probes.ids(), self.gallery.ids()),
            _ => (dm, self.probes.ids().to_vec(), self.gallery.ids().to_vec()),
        })
    }

    pub fn evaluate(&self, model: &EmbeddingModel) -> Result<(CmcCurve, f64)> {
        let (dm, pids, gids) = self.distances(model)?;
        score_distances(&dm, &pids, &gids)
    }
}

/// Only probes with a true match in the gallery are scored.
pub fn score_distances(dm: &DMatrix<f64>, probe_ids: &[u32], gallery_ids: &[u32]) -> Result<(CmcCurve, f64)> {
    let gset: BTreeSet<u32> = gallery_ids.iter().copied().collect();
    let keep: Vec<usize> = (0..probe_ids.len()).filter(|&i| gset.contains(&probe_ids[i])).collect();
    if keep.len() < probe_ids.len() {
        log::warn!("{} probes have no true match in the gallery and are not scored", probe_ids.len() - keep.len());
    }
    let dm = dm.select_rows(&keep);
    let pids: Vec<u32> = keep.iter().map(|&i| probe_ids[i]).collect();
    let rl = rank_distance_matrix(&dm);
    Ok((cmc(&rl, &pids, gallery_ids)?, mean_ap(&rl, &pids, gallery_ids)?))
}

/// Fits a batch model on `train` with the configured coding and kernel.
pub fn fit_batch(train: &FeatureMatrix, config: &ProtocolConfig, seed: u64) -> Result<EmbeddingModel> {
    let y = coding::encode(config.coding, train.ids(), None, seed)?;
    match config.kernel.resolve(train.data())? {
        None => regression::fit_linear(train, &y, config.lambda),
        Some(k) => regression::fit_kernel_with(train, &y, config.lambda, k),
    }
}

pub fn run_protocol(config: &ProtocolConfig) -> Result<ProtocolReport> {
    let fm = config.data.load()?;
    run_protocol_on(config, &fm)
}

/// As [`run_protocol`] with the features already in memory.
pub fn run_protocol_on(config: &ProtocolConfig, fm: &FeatureMatrix) -> Result<ProtocolReport> {
    config.validate()?;
    let mut per_seed = Vec::new();
    for &seed in &config.seeds {
        let split = make_split(fm, config.split_ratio, seed)?;
        let test = TestSet::new(fm, &split, config.shot)?;
        match &config.mode {
            ProtocolMode::Batch => per_seed.push(run_batch(fm, &split, &test, config, seed)?),
            ProtocolMode::Incremental {
                start_ids,
                step_ids,
                compare_batch,
                checkpoints,
            } => per_seed.push(run_incremental(
                fm,
                &split,
                &test,
                config,
                IncrementalPlan {
                    start_ids: *start_ids,
                    step_ids: *step_ids,
                    compare_batch: *compare_batch,
                    checkpoints,
                },
                seed,
            )?),
            ProtocolMode::Active {
                strategies,
                budget,
                seed_ids,
                checkpoints,
                gallery_scope,
            } => {
                for &strategy in strategies {
                    let active = ActiveConfig {
                        strategy,
                        budget: *budget,
                        seed_ids: *seed_ids,
                        lambda: config.lambda,
                        kernel: config.kernel.clone(),
                        gallery_scope: *gallery_scope,
                        seed,
                        ..ActiveConfig::default()
                    };
                    per_seed.push(run_active(fm, &split, &test, active, checkpoints)?);
                }
            }
        }
    }
    Ok(summarize(config.digest(), per_seed))
}

fn run_batch(fm: &FeatureMatrix, split: &SplitSpec, test: &TestSet, config: &ProtocolConfig, seed: u64) -> Result<SeedReport> {
    let train = fm.select(&split.train_indices(fm));
    let start = Instant::now();
    let model = fit_batch(&train, config, seed)?;
    let secs = start.elapsed().as_secs_f64();
    let (curve, map) = test.evaluate(&model)?;
    Ok(SeedReport {
        seed,
        strategy: None,
        rank1: curve.rank1(),
        cmc: curve.values,
        map,
        alt_seconds: secs,
        update_times_ms: vec![secs * 1e3],
        batch_alt_seconds: None,
        rankings_identical: None,
        rel_frobenius: None,
        checkpoints: Vec::new(),
    })
}

struct IncrementalPlan<'a> {
    start_ids: usize,
    step_ids: usize,
    compare_batch: bool,
    checkpoints: &'a [usize],
}

fn run_incremental(
    fm: &FeatureMatrix,
    split: &SplitSpec,
    test: &TestSet,
    config: &ProtocolConfig,
    plan: IncrementalPlan<'_>,
    seed: u64,
) -> Result<SeedReport> {
    // Identities arrive in a seeded random order.
    let mut order: Vec<u32> = split.train_ids.iter().copied().collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x1d5));
    }
    if plan.start_ids > order.len() {
        return Err(IrsError::invalid(format!(
            "start_ids {} exceeds the {} training identities",
            plan.start_ids,
            order.len()
        )));
    }
    let cols_of = |ids: &[u32]| -> Vec<usize> {
        let set: BTreeSet<u32> = ids.iter().copied().collect();
        (0..fm.len()).filter(|&i| set.contains(&fm.ids()[i])).collect()
    };
    // Columns are kept grouped by arrival so batch refits see the same class order.
    let mut seen_cols = cols_of(&order[..plan.start_ids]);
    let lift = match config.kernel.resolve(&fm.data().select_columns(&seen_cols))? {
        None => None,
        Some(k) => Some(KernelLift::new(fm.data().select_columns(&seen_cols), k)?),
    };
    let work = match &lift {
        Some(l) => l.lift(fm.data())?,
        None => fm.data().clone(),
    };
    let model_of = |p: &DMatrix<f64>| match &lift {
        Some(l) => l.model_with(p.clone(), config.lambda),
        None => EmbeddingModel::linear(
            p.clone(),
            config.lambda,
            SolveInfo {
                method: SolveMethod::Woodbury,
                effective_rank: p.nrows(),
            },
        ),
    };
    let batch_fit = |cols: &[usize]| -> Result<DMatrix<f64>> {
        let labels: Vec<u32> = cols.iter().map(|&i| fm.ids()[i]).collect();
        let y = coding::onehot(&labels, coding::ClassRegistry::from(labels.clone()).len())?;
        Ok(regression::fit_linear_matrix(&work.select_columns(cols), &y.y, config.lambda)?.0)
    };

    let mut update_times_ms = Vec::new();
    let mut batch_secs = 0.0;
    let mut checkpoints = Vec::new();

    let labels0: Vec<u32> = seen_cols.iter().map(|&i| fm.ids()[i]).collect();
    let start = Instant::now();
    let y0 = coding::onehot(&labels0, coding::ClassRegistry::from(labels0.clone()).len())?;
    let mut state = IncrementalState::init_matrix(&work.select_columns(&seen_cols), &y0.y, y0.registry, config.lambda)?;
    update_times_ms.push(start.elapsed().as_secs_f64() * 1e3);
    let mut batch_p = None;
    if plan.compare_batch {
        let t = Instant::now();
        batch_p = Some(batch_fit(&seen_cols)?);
        batch_secs += t.elapsed().as_secs_f64();
    }
    let mut n_ids = plan.start_ids;
    let snapshot = |n_ids: usize, state: &IncrementalState, out: &mut Vec<Checkpoint>| -> Result<()> {
        if plan.checkpoints.contains(&n_ids) {
            let (curve, map) = test.evaluate(&model_of(state.projection()))?;
            out.push(Checkpoint {
                strategy: None,
                at: n_ids,
                rank1: curve.rank1(),
                cmc: curve.values,
                map,
            });
        }
        Ok(())
    };
    snapshot(n_ids, &state, &mut checkpoints)?;
    while n_ids < order.len() {
        let next = &order[n_ids..(n_ids + plan.step_ids).min(order.len())];
        let cols = cols_of(next);
        let labels: Vec<u32> = cols.iter().map(|&i| fm.ids()[i]).collect();
        let xp = work.select_columns(&cols);
        let t = Instant::now();
        state.update_labeled(&xp, &labels)?;
        update_times_ms.push(t.elapsed().as_secs_f64() * 1e3);
        n_ids += next.len();
        seen_cols.extend(cols);
        if plan.compare_batch {
            let t = Instant::now();
            batch_p = Some(batch_fit(&seen_cols)?);
            batch_secs += t.elapsed().as_secs_f64();
        }
        snapshot(n_ids, &state, &mut checkpoints)?;
    }

    let model = model_of(state.projection());
    let (curve, map) = test.evaluate(&model)?;
    let (mut rankings_identical, mut rel_frobenius) = (None, None);
    if let Some(bp) = batch_p {
        rel_frobenius = Some(linalg::rel_frobenius(state.projection(), &bp));
        let (a, _, _) = test.distances(&model)?;
        let (b, _, _) = test.distances(&model_of(&bp))?;
        rankings_identical = Some(
            rank_distance_matrix(&a)
                .iter()
                .zip(rank_distance_matrix(&b))
                .all(|(x, y)| x.order == y.order),
        );
    }
    Ok(SeedReport {
        seed,
        strategy: None,
        rank1: curve.rank1(),
        cmc: curve.values,
        map,
        alt_seconds: update_times_ms.iter().sum::<f64>() / 1e3,
        update_times_ms,
        batch_alt_seconds: plan.compare_batch.then_some(batch_secs),
        rankings_identical,
        rel_frobenius,
        checkpoints,
    })
}

fn run_active(
    fm: &FeatureMatrix,
    split: &SplitSpec,
    test: &TestSet,
    config: ActiveConfig,
    at: &[usize],
) -> Result<SeedReport> {
    let strategy = config.strategy;
    let seed = config.seed;
    let start = Instant::now();
    let mut session = LabelingSession::new(fm.clone(), &split.train_ids, split.probe_cam, split.gallery_cam, config)?;
    let init_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut checkpoints = Vec::new();
    let mut failure = None;
    let mut take = |s: &LabelingSession, out: &mut Vec<Checkpoint>| {
        if at.contains(&s.steps_taken()) {
            match test.evaluate(&s.model()) {
                Ok((curve, map)) => out.push(Checkpoint {
                    strategy: Some(strategy),
                    at: s.steps_taken(),
                    rank1: curve.rank1(),
                    cmc: curve.values,
                    map,
                }),
                Err(e) => failure = Some(e),
            }
        }
    };
    take(&session, &mut checkpoints);
    let log = run_session(&mut session, &mut OracleAnnotator, |s, _| take(s, &mut checkpoints))?;
    if let Some(e) = failure {
        return Err(e);
    }
    let mut update_times_ms = vec![init_ms];
    update_times_ms.extend(log.iter().map(|r| r.update_ms));
    let (curve, map) = test.evaluate(&session.model())?;
    Ok(SeedReport {
        seed,
        strategy: Some(strategy),
        rank1: curve.rank1(),
        cmc: curve.values,
        map,
        alt_seconds: update_times_ms.iter().sum::<f64>() / 1e3,
        update_times_ms,
        batch_alt_seconds: None,
        rankings_identical: None,
        rel_frobenius: None,
        checkpoints,
    })
}

fn mean_vec<'a>(rows: impl Iterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let rows: Vec<&Vec<f64>> = rows.collect();
    let len = rows.iter().map(|r| r.len()).min().unwrap_or(0);
    (0..len)
        .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64)
        .collect()
}

fn summarize(config_digest: String, per_seed: Vec<SeedReport>) -> ProtocolReport {
    let lead = per_seed[0].strategy;
    let main: Vec<&SeedReport> = per_seed.iter().filter(|r| r.strategy == lead).collect();
    let n = main.len() as f64;
    let mut keys: Vec<(Option<Strategy>, usize)> = Vec::new();
    for r in &per_seed {
        for c in &r.checkpoints {
            if !keys.contains(&(c.strategy, c.at)) {
                keys.push((c.strategy, c.at));
            }
        }
    }
    let checkpoints = keys
        .into_iter()
        .map(|(strategy, at)| {
            let hits: Vec<&Checkpoint> = per_seed
                .iter()
                .flat_map(|r| &r.checkpoints)
                .filter(|c| c.strategy == strategy && c.at == at)
                .collect();
            let k = hits.len() as f64;
            CheckpointSummary {
                strategy,
                at,
                mean_cmc: mean_vec(hits.iter().map(|c| &c.cmc)),
                mean_rank1: hits.iter().map(|c| c.rank1).sum::<f64>() / k,
                map: hits.iter().map(|c| c.map).sum::<f64>() / k,
            }
        })
        .collect();
    ProtocolReport {
        config_digest,
        mean_cmc: mean_vec(main.iter().map(|r| &r.cmc)),
        map: main.iter().map(|r| r.map).sum::<f64>() / n,
        alt_seconds: main.iter().map(|r| r.alt_seconds).sum::<f64>() / n,
        update_times_ms: mean_vec(main.iter().map(|r| &r.update_times_ms)),
        checkpoints,
        per_seed,
    }
}
