//! End-to-end library workflows: protocols, labeling sessions and replay.

use std::collections::BTreeSet;

use irs_core::active::{
    read_log_jsonl, run_session, write_log_jsonl, ActiveConfig, Annotator, Answer, Issued, KernelChoice,
    LabelingSession, OracleAnnotator, ReplayAnnotator, Strategy,
};
use irs_core::coding::CodingScheme;
use irs_core::dataset::{gen_synthetic, make_split, write_dataset, FeatureMatrix, SyntheticSpec};
use irs_core::evaluation::{run_protocol, run_protocol_on, DataSource, ProtocolConfig, ProtocolMode, ShotMode};
use irs_core::incremental::IncrementalState;
use irs_core::regression::EmbeddingModel;
use irs_core::storage::read_matrix;
use irs_core::IrsError;

fn small(noise: f64, shift: f64) -> FeatureMatrix {
    gen_synthetic(&SyntheticSpec {
        num_ids: 40,
        imgs_per_id_per_cam: 1,
        d: 16,
        view_shift_scale: shift,
        noise_scale: noise,
        seed: 3,
    })
    .unwrap()
}

fn session(fm: &FeatureMatrix, config: ActiveConfig) -> LabelingSession {
    let split = make_split(fm, 0.75, config.seed).unwrap();
    LabelingSession::new(fm.clone(), &split.train_ids, split.probe_cam, split.gallery_cam, config).unwrap()
}

fn cfg(strategy: Strategy, budget: usize) -> ActiveConfig {
    ActiveConfig {
        strategy,
        budget,
        seed_ids: 3,
        seed: 2,
        ..ActiveConfig::default()
    }
}

#[test]
fn zero_budget_leaves_model_unchanged() {
    let fm = small(0.5, 0.5);
    let mut s = session(&fm, cfg(Strategy::JointE2, 0));
    let before = s.state().projection().clone();
    let log = run_session(&mut s, &mut OracleAnnotator, |_, _| {}).unwrap();
    assert!(log.is_empty());
    assert_eq!(s.state().projection(), &before);
}

#[test]
fn degenerate_geometry_finds_every_match_at_rank_one() {
    let fm = small(0.0, 0.0);
    let mut s = session(&fm, cfg(Strategy::JointE2, 20));
    let log = run_session(&mut s, &mut OracleAnnotator, |_, _| {}).unwrap();
    assert_eq!(log.len(), 20);
    assert!(log.iter().all(|r| r.true_match_rank == Some(1)));
}

#[test]
fn sessions_never_repeat_a_probe_and_spend_min_of_budget_and_pool() {
    let fm = small(0.7, 0.5);
    for strategy in [Strategy::JointE2, Strategy::Random, Strategy::Density] {
        let mut s = session(&fm, cfg(strategy, 1000));
        let pool = s.probe_pool().len();
        let log = run_session(&mut s, &mut OracleAnnotator, |s, _| {
            let labeled: BTreeSet<usize> = s.labeled_probes().iter().copied().collect();
            assert!(s.probe_pool().iter().all(|p| !labeled.contains(p)));
        })
        .unwrap();
        assert_eq!(log.len(), pool);
        let probes: BTreeSet<usize> = log.iter().map(|r| r.probe_index).collect();
        assert_eq!(probes.len(), log.len(), "{strategy} repeated a probe");
        assert!(s.is_done());
    }
}

#[test]
fn issue_is_idempotent_and_annotation_order_is_enforced() {
    let fm = small(0.7, 0.5);
    let mut s = session(&fm, cfg(Strategy::JointE2, 5));
    assert!(matches!(s.annotate(0, Answer::Skip), Err(IrsError::Session(_))));
    let first = s.issue().unwrap().unwrap();
    assert_eq!(s.issue().unwrap().unwrap(), first);
    let other = *s.probe_pool().iter().find(|&&p| p != first.probe_index).unwrap();
    assert!(matches!(s.annotate(other, Answer::Skip), Err(IrsError::Session(_))));
    let g = first.ranked[0].gallery_index;
    let rec = s.annotate(first.probe_index, Answer::Match(g)).unwrap();
    assert_eq!(rec.true_match_rank, Some(1));
    assert!(matches!(s.annotate(first.probe_index, Answer::Match(g)), Err(IrsError::Session(_))));
}

#[test]
fn skip_spends_budget_without_update() {
    let fm = small(0.7, 0.5);
    let mut s = session(&fm, cfg(Strategy::JointE2, 3));
    let issued = s.issue().unwrap().unwrap();
    let before = s.state().clone();
    let rec = s.annotate(issued.probe_index, Answer::Skip).unwrap();
    assert!(rec.skipped && rec.gallery_index.is_none());
    assert_eq!(s.state(), &before);
    assert_eq!(s.budget_left(), 2);
    assert!(!s.probe_pool().contains(&issued.probe_index));
}

#[test]
fn random_strategy_is_seed_deterministic() {
    let fm = small(0.7, 0.5);
    let run = |seed| {
        let mut c = cfg(Strategy::Random, 10);
        c.seed = seed;
        let mut s = session(&fm, c);
        run_session(&mut s, &mut OracleAnnotator, |_, _| {}).unwrap()
    };
    let strip = |v: Vec<irs_core::active::StepRecord>| v.into_iter().map(|r| (r.probe_index, r.gallery_index)).collect::<Vec<_>>();
    assert_eq!(strip(run(7)), strip(run(7)));
    assert_ne!(strip(run(7)), strip(run(8)));
}

struct Flaky {
    failures_left: usize,
}

impl Annotator for Flaky {
    fn annotate(&mut self, issued: &Issued, fm: &FeatureMatrix) -> irs_core::Result<Answer> {
        if self.failures_left > 0 {
            self.failures_left -= 1;
            return Err(IrsError::Annotator("timeout".into()));
        }
        OracleAnnotator.annotate(issued, fm)
    }
}

#[test]
fn annotator_failures_are_retried_then_abort() {
    let fm = small(0.7, 0.5);
    let mut s = session(&fm, cfg(Strategy::JointE2, 4));
    let log = run_session(&mut s, &mut Flaky { failures_left: 2 }, |_, _| {}).unwrap();
    assert_eq!(log.len(), 4);

    let mut s = session(&fm, cfg(Strategy::JointE2, 4));
    let err = run_session(&mut s, &mut Flaky { failures_left: 3 }, |_, _| {}).unwrap_err();
    assert!(matches!(err, IrsError::Annotator(_)));
    assert!(s.log().is_empty(), "an aborted step must not be logged as skipped");
}

#[test]
fn replayed_log_reproduces_checkpoint_bitwise() {
    let fm = small(0.8, 0.5);
    let dir = tempfile::tempdir().unwrap();
    let mut live = session(&fm, cfg(Strategy::JointE2, 12));
    // A "human" that sometimes picks a non-top candidate and sometimes skips.
    let mut step = 0;
    while let Some(issued) = live.issue().unwrap() {
        let answer = match step % 4 {
            3 => Answer::Skip,
            1 => Answer::Match(issued.ranked[1.min(issued.ranked.len() - 1)].gallery_index),
            _ => OracleAnnotator.annotate(&issued, &fm).unwrap(),
        };
        live.annotate(issued.probe_index, answer).unwrap();
        step += 1;
    }
    let text = write_log_jsonl(live.log());
    let records = read_log_jsonl(&text).unwrap();
    let a = dir.path().join("live.json");
    live.state().save_checkpoint(&a).unwrap();

    let mut replay = session(&fm, cfg(Strategy::JointE2, records.len()));
    run_session(&mut replay, &mut ReplayAnnotator::from_log(&records), |_, _| {}).unwrap();
    let b = dir.path().join("replay.json");
    replay.state().save_checkpoint(&b).unwrap();
    for tag in ["tinv", "p"] {
        let pa = std::fs::read(dir.path().join(format!("live.{tag}.f64le"))).unwrap();
        let pb = std::fs::read(dir.path().join(format!("replay.{tag}.f64le"))).unwrap();
        assert_eq!(pa, pb, "{tag} payload differs");
    }
    let restored = IncrementalState::load_checkpoint(&b).unwrap();
    assert_eq!(&restored, replay.state());
    assert_eq!(read_matrix(&dir.path().join("replay.p.f64le")).unwrap(), *replay.state().projection());
}

#[test]
fn replay_detects_divergence() {
    let fm = small(0.8, 0.5);
    let mut s = session(&fm, cfg(Strategy::JointE2, 2));
    let wrong = *s.probe_pool().last().unwrap();
    let mut replay = ReplayAnnotator::new(vec![(wrong, Answer::Skip)]);
    let first = s.issue().unwrap().unwrap();
    assert_ne!(first.probe_index, wrong);
    assert!(run_session(&mut s, &mut replay, |_, _| {}).is_err());
}

#[test]
fn kernel_session_runs_and_model_embeds_raw_features() {
    let fm = small(0.7, 0.5);
    let mut c = cfg(Strategy::JointE2, 6);
    c.kernel = KernelChoice::Rbf { bandwidth: None };
    c.extra_anchors = 10;
    let mut s = session(&fm, c);
    run_session(&mut s, &mut OracleAnnotator, |_, _| {}).unwrap();
    let emb = s.model().embed_matrix(fm.data()).unwrap();
    assert_eq!(emb.nrows(), fm.len());
    assert_eq!(emb.ncols(), s.state().registry().len());
}

fn active_config(data: DataSource, seeds: Vec<u64>) -> ProtocolConfig {
    ProtocolConfig {
        data,
        split_ratio: 0.75,
        seeds,
        lambda: 0.1,
        coding: CodingScheme::OneHot,
        kernel: KernelChoice::None,
        shot: ShotMode::All,
        mode: ProtocolMode::Active {
            strategies: vec![Strategy::JointE2, Strategy::Random, Strategy::Density],
            budget: 20,
            seed_ids: 3,
            checkpoints: vec![5, 10, 15, 20],
            gallery_scope: Default::default(),
        },
    }
}

#[test]
fn active_protocol_emits_a_snapshot_per_checkpoint_and_strategy() {
    let spec = SyntheticSpec {
        num_ids: 40,
        imgs_per_id_per_cam: 1,
        d: 16,
        view_shift_scale: 0.5,
        noise_scale: 0.7,
        seed: 1,
    };
    let report = run_protocol(&active_config(DataSource::Synthetic(spec), vec![0, 1])).unwrap();
    assert_eq!(report.per_seed.len(), 6);
    assert_eq!(report.checkpoints.len(), 12);
    for s in &report.per_seed {
        assert_eq!(s.checkpoints.iter().map(|c| c.at).collect::<Vec<_>>(), vec![5, 10, 15, 20]);
        assert_eq!(s.update_times_ms.len(), 21);
    }
    assert!(report.checkpoint(Some(Strategy::Density), 20).is_some());
}

#[test]
fn batch_protocol_reports_every_seed_and_a_stable_digest() {
    let dir = tempfile::tempdir().unwrap();
    let fm = small(0.7, 0.5);
    let manifest = write_dataset(dir.path(), "small", &fm).unwrap();
    let mut config = ProtocolConfig::batch(DataSource::Manifest { path: manifest });
    config.seeds = (0..10).collect();
    let report = run_protocol(&config).unwrap();
    assert_eq!(report.per_seed.len(), 10);
    let mean = report.per_seed.iter().map(|s| s.rank1).sum::<f64>() / 10.0;
    assert!((report.mean_rank1() - mean).abs() < 1e-12);
    assert_eq!(report.config_digest, config.digest());
    assert_eq!(report.config_digest.len(), 64);
    let json = serde_json::to_value(&report).unwrap();
    for key in ["config_digest", "per_seed", "mean_cmc", "mAP", "alt_seconds", "update_times_ms"] {
        assert!(json.get(key).is_some(), "report lacks {key}");
    }
    let csv = dir.path().join("cmc.csv");
    report.write_cmc_csv(&csv).unwrap();
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("rank,mean\n1,"));
    assert_eq!(text.lines().count(), report.mean_cmc.len() + 1);
}

#[test]
fn shot_modes_shape_the_gallery() {
    let fm = gen_synthetic(&SyntheticSpec {
        num_ids: 20,
        imgs_per_id_per_cam: 3,
        d: 8,
        view_shift_scale: 0.3,
        noise_scale: 0.3,
        seed: 4,
    })
    .unwrap();
    let mut config = ProtocolConfig::batch(DataSource::Synthetic(SyntheticSpec::standard(0)));
    for (shot, gallery) in [(ShotMode::All, 30), (ShotMode::Single, 10), (ShotMode::Multi, 10)] {
        config.shot = shot;
        let r = run_protocol_on(&config, &fm).unwrap();
        assert_eq!(r.mean_cmc.len(), gallery, "{shot:?}");
        assert_eq!(*r.mean_cmc.last().unwrap(), 1.0);
    }
}

#[test]
fn incremental_protocol_matches_batch_and_snapshots() {
    let fm = small(0.7, 0.5);
    let config = ProtocolConfig {
        data: DataSource::Synthetic(SyntheticSpec::standard(0)),
        split_ratio: 0.75,
        seeds: vec![0],
        lambda: 0.1,
        coding: CodingScheme::OneHot,
        kernel: KernelChoice::None,
        shot: ShotMode::All,
        mode: ProtocolMode::Incremental {
            start_ids: 5,
            step_ids: 2,
            compare_batch: true,
            checkpoints: vec![5, 15, 25],
        },
    };
    let r = run_protocol_on(&config, &fm).unwrap();
    let s = &r.per_seed[0];
    assert_eq!(s.rankings_identical, Some(true));
    assert!(s.rel_frobenius.unwrap() < 1e-9);
    assert_eq!(s.update_times_ms.len(), 1 + 13);
    assert_eq!(s.checkpoints.len(), 3);

    let mut bad = config.clone();
    bad.coding = CodingScheme::Fda;
    assert!(run_protocol_on(&bad, &fm).is_err());
}

#[test]
fn kernel_incremental_protocol_runs() {
    let fm = small(0.7, 0.5);
    let config = ProtocolConfig {
        data: DataSource::Synthetic(SyntheticSpec::standard(0)),
        split_ratio: 0.75,
        seeds: vec![1],
        lambda: 0.1,
        coding: CodingScheme::OneHot,
        kernel: KernelChoice::Rbf { bandwidth: None },
        shot: ShotMode::All,
        mode: ProtocolMode::Incremental {
            start_ids: 10,
            step_ids: 5,
            compare_batch: true,
            checkpoints: vec![],
        },
    };
    let s = &run_protocol_on(&config, &fm).unwrap().per_seed[0];
    assert!(s.rel_frobenius.unwrap() < 1e-6);
    assert_eq!(s.rankings_identical, Some(true));
}

#[test]
fn saved_models_reload_identically() {
    let dir = tempfile::tempdir().unwrap();
    let fm = small(0.7, 0.5);
    let mut config = ProtocolConfig::batch(DataSource::Synthetic(SyntheticSpec::standard(0)));
    config.kernel = KernelChoice::Rbf { bandwidth: Some(3.0) };
    let model = irs_core::evaluation::fit_batch(&fm, &config, 0).unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    let back = EmbeddingModel::load(&path).unwrap();
    assert_eq!(back, model);
}
