use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use irs_core::active::{
    read_log_jsonl, run_session, write_log_jsonl, Annotator, GalleryScope, KernelChoice, OracleAnnotator,
    ReplayAnnotator, Strategy,
};
use irs_core::coding::CodingScheme;
use irs_core::dataset::{self, gen_synthetic, make_split, SyntheticSpec};
use irs_core::evaluation::{
    fit_batch, fuse_scores, run_protocol, score_distances, CmcCurve, DataSource, ProtocolConfig, ProtocolMode,
    ShotMode, TestSet,
};
use irs_core::regression::EmbeddingModel;
use irs_core::service::{open_session, SessionConfig};
use irs_core::{IrsError, Result};

#[derive(Parser)]
#[command(name = "irs", version, about = "Identity regression embeddings for re-identification")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Dataset manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, global = true, value_enum, default_value_t = KernelFlag::None)]
    kernel: KernelFlag,
    /// RBF bandwidth: `median` or a positive number.
    #[arg(long, global = true, default_value = "median")]
    bandwidth: String,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KernelFlag {
    Rbf,
    Linear,
    None,
}

#[derive(Clone, Copy, ValueEnum)]
enum CodingFlag {
    Onehot,
    Fda,
    Random,
}

impl From<CodingFlag> for CodingScheme {
    fn from(c: CodingFlag) -> Self {
        match c {
            CodingFlag::Onehot => CodingScheme::OneHot,
            CodingFlag::Fda => CodingScheme::Fda,
            CodingFlag::Random => CodingScheme::Random,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ShotFlag {
    All,
    Single,
    Multi,
}

impl From<ShotFlag> for ShotMode {
    fn from(s: ShotFlag) -> Self {
        match s {
            ShotFlag::All => ShotMode::All,
            ShotFlag::Single => ShotMode::Single,
            ShotFlag::Multi => ShotMode::Multi,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeFlag {
    Unlabeled,
    All,
}

impl From<ScopeFlag> for GalleryScope {
    fn from(s: ScopeFlag) -> Self {
        match s {
            ScopeFlag::Unlabeled => GalleryScope::Unlabeled,
            ScopeFlag::All => GalleryScope::All,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-camera dataset.
    GenSynth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "synthetic")]
        name: String,
        #[arg(long, default_value_t = 300)]
        num_ids: usize,
        #[arg(long, default_value_t = 2)]
        imgs_per_id: usize,
        #[arg(long, short = 'd', default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        view_shift: f64,
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
    },
    /// Fit a batch model on the training split and report test CMC/mAP.
    Train {
        #[arg(long, value_enum, default_value_t = CodingFlag::Onehot)]
        coding: CodingFlag,
        #[arg(long, default_value_t = 0.5)]
        split_ratio: f64,
        /// Model header to write (payloads go next to it).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ShotFlag::All)]
        shot: ShotFlag,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a saved model, optionally fused with others, or run a
    /// protocol config.
    Evaluate {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Extra `MANIFEST:MODEL` pairs fused at score level.
        #[arg(long)]
        fuse: Vec<String>,
        /// Protocol config (JSON); replaces the single-model evaluation.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        split_ratio: f64,
        #[arg(long, value_enum, default_value_t = ShotFlag::All)]
        shot: ShotFlag,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        cmc_csv: Option<PathBuf>,
    },
    /// Run active labeling sessions with an oracle (or replayed) annotator.
    Simulate {
        #[arg(long, default_value = "jointe2")]
        strategy: Strategy,
        /// Comma-separated strategies to compare; overrides --strategy.
        #[arg(long, value_delimiter = ',')]
        compare: Vec<Strategy>,
        #[arg(long, default_value_t = 200)]
        budget: usize,
        #[arg(long, default_value_t = 10)]
        seed_ids: usize,
        /// Number of seeded folds, starting at --seed.
        #[arg(long, default_value_t = 1)]
        folds: u64,
        #[arg(long, value_delimiter = ',', default_value = "50,100,150,200")]
        checkpoints: Vec<usize>,
        #[arg(long, default_value_t = 0.5)]
        split_ratio: f64,
        #[arg(long, default_value_t = 50)]
        rank_window: usize,
        #[arg(long, value_enum, default_value_t = ScopeFlag::Unlabeled)]
        gallery_scope: ScopeFlag,
        /// JSON-lines session log (suffixed per run when several run).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Replay the answers of a recorded log instead of the oracle.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Write the final incremental state here (single run only).
        #[arg(long)]
        checkpoint_out: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Serve the labeling session over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: std::net::SocketAddr,
        #[arg(long, default_value_t = 50)]
        rank_window: usize,
        #[arg(long, default_value = "jointe2")]
        strategy: Strategy,
        #[arg(long, default_value_t = 200)]
        budget: usize,
        #[arg(long, default_value_t = 10)]
        seed_ids: usize,
        #[arg(long, default_value_t = 0.5)]
        split_ratio: f64,
        #[arg(long, value_enum, default_value_t = ScopeFlag::Unlabeled)]
        gallery_scope: ScopeFlag,
        #[arg(long)]
        checkpoint_out: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

impl Global {
    fn manifest(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .ok_or_else(|| IrsError::InvalidArgument("--manifest is required".into()))
    }

    fn kernel(&self) -> Result<KernelChoice> {
        Ok(match self.kernel {
            KernelFlag::None => KernelChoice::None,
            KernelFlag::Linear => KernelChoice::Linear,
            KernelFlag::Rbf if self.bandwidth == "median" => KernelChoice::Rbf { bandwidth: None },
            KernelFlag::Rbf => {
                let bw: f64 = self
                    .bandwidth
                    .parse()
                    .map_err(|_| IrsError::InvalidArgument(format!("bad bandwidth {:?}", self.bandwidth)))?;
                KernelChoice::Rbf { bandwidth: Some(bw) }
            }
        })
    }
}

fn print_metrics(label: &str, curve: &CmcCurve, map: f64) {
    println!(
        "{label}rank1={:.4} rank5={:.4} rank10={:.4} rank20={:.4} mAP={:.4}",
        curve.at(1),
        curve.at(5),
        curve.at(10),
        curve.at(20),
        map
    );
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text).map_err(|e| IrsError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| IrsError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

#[derive(Serialize)]
struct MetricsReport {
    cmc: Vec<f64>,
    rank1: f64,
    #[serde(rename = "mAP")]
    map: f64,
}

fn train(g: &Global, coding: CodingScheme, split_ratio: f64, shot: ShotMode, out: Option<&Path>, report: Option<&Path>) -> Result<()> {
    let fm = dataset::load_features(g.manifest()?)?;
    let split = make_split(&fm, split_ratio, g.seed)?;
    let config = ProtocolConfig {
        data: DataSource::Manifest {
            path: g.manifest()?.to_path_buf(),
        },
        split_ratio,
        seeds: vec![g.seed],
        lambda: g.lambda,
        coding,
        kernel: g.kernel()?,
        shot,
        mode: ProtocolMode::Batch,
    };
    config.validate()?;
    let model = fit_batch(&fm.select(&split.train_indices(&fm)), &config, g.seed)?;
    if let Some(out) = out {
        model.save(out)?;
    }
    let (curve, map) = TestSet::new(&fm, &split, shot)?.evaluate(&model)?;
    print_metrics("", &curve, map);
    if let Some(path) = report {
        write_json(
            path,
            &MetricsReport {
                rank1: curve.rank1(),
                cmc: curve.values,
                map,
            },
        )?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    g: &Global,
    model: Option<&Path>,
    fuse: &[String],
    config: Option<&Path>,
    split_ratio: f64,
    shot: ShotMode,
    report: Option<&Path>,
    cmc_csv: Option<&Path>,
) -> Result<()> {
    if let Some(config) = config {
        let text = std::fs::read_to_string(config).map_err(|e| IrsError::Io {
            path: config.to_path_buf(),
            source: e,
        })?;
        let cfg: ProtocolConfig = serde_json::from_str(&text).map_err(|e| IrsError::Json {
            path: config.to_path_buf(),
            source: e,
        })?;
        let rep = run_protocol(&cfg)?;
        print_metrics(
            "mean ",
            &CmcCurve {
                values: rep.mean_cmc.clone(),
            },
            rep.map,
        );
        println!("alt_seconds={:.6}", rep.alt_seconds);
        for c in &rep.checkpoints {
            let who = c.strategy.map_or("ids".to_string(), |s| s.to_string());
            println!("checkpoint {who}@{} rank1={:.4} mAP={:.4}", c.at, c.mean_rank1, c.map);
        }
        if let Some(path) = report {
            write_json(path, &rep)?;
        }
        if let Some(path) = cmc_csv {
            rep.write_cmc_csv(path)?;
        }
        return Ok(());
    }
    let model_path = model.ok_or_else(|| IrsError::InvalidArgument("--model or --config is required".into()))?;
    let mut pairs = vec![(g.manifest()?.to_path_buf(), model_path.to_path_buf())];
    for spec in fuse {
        let (m, p) = spec
            .rsplit_once(':')
            .ok_or_else(|| IrsError::InvalidArgument(format!("--fuse expects MANIFEST:MODEL, got {spec:?}")))?;
        pairs.push((m.into(), p.into()));
    }
    let mut matrices = Vec::new();
    let mut labels = None;
    for (manifest, model_path) in &pairs {
        let fm = dataset::load_features(manifest)?;
        let split = make_split(&fm, split_ratio, g.seed)?;
        let model = EmbeddingModel::load(model_path)?;
        let (dm, pids, gids) = TestSet::new(&fm, &split, shot)?.distances(&model)?;
        match &labels {
            None => labels = Some((pids, gids)),
            Some(l) if *l != (pids.clone(), gids.clone()) => {
                return Err(IrsError::InvalidArgument(format!(
                    "{} does not share the test split of the first manifest",
                    manifest.display()
                )))
            }
            _ => {}
        }
        matrices.push(dm);
    }
    let (pids, gids) = labels.expect("at least one model");
    let dm = if matrices.len() == 1 {
        matrices.pop().unwrap()
    } else {
        fuse_scores(&matrices, None)?
    };
    let (curve, map) = score_distances(&dm, &pids, &gids)?;
    print_metrics("", &curve, map);
    if let Some(path) = cmc_csv {
        let mut text = String::from("rank,cmc\n");
        for (k, v) in curve.values.iter().enumerate() {
            text.push_str(&format!("{},{v}\n", k + 1));
        }
        write_text(path, &text)?;
    }
    if let Some(path) = report {
        write_json(
            path,
            &MetricsReport {
                rank1: curve.rank1(),
                cmc: curve.values,
                map,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SimRow {
    strategy: Strategy,
    seed: u64,
    at: usize,
    rank1: f64,
    #[serde(rename = "mAP")]
    map: f64,
}

#[derive(Serialize)]
struct SimSummary {
    strategy: Strategy,
    at: usize,
    mean_rank1: f64,
    #[serde(rename = "mAP")]
    map: f64,
}

#[derive(Serialize)]
struct SimReport {
    rows: Vec<SimRow>,
    summary: Vec<SimSummary>,
}

struct SimArgs {
    strategies: Vec<Strategy>,
    budget: usize,
    seed_ids: usize,
    folds: u64,
    checkpoints: Vec<usize>,
    split_ratio: f64,
    rank_window: usize,
    gallery_scope: GalleryScope,
    log: Option<PathBuf>,
    replay: Option<PathBuf>,
    checkpoint_out: Option<PathBuf>,
    report: Option<PathBuf>,
}

fn log_path(base: &Path, strategy: Strategy, seed: u64, single: bool) -> PathBuf {
    if single {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("session");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("jsonl");
    base.with_file_name(format!("{stem}.{strategy}.{seed}.{ext}"))
}

fn simulate(g: &Global, a: SimArgs) -> Result<()> {
    let single = a.strategies.len() == 1 && a.folds == 1;
    if !single && (a.replay.is_some() || a.checkpoint_out.is_some()) {
        return Err(IrsError::InvalidArgument(
            "--replay and --checkpoint-out need a single strategy and fold".into(),
        ));
    }
    let replay = match &a.replay {
        Some(p) => Some(read_log_jsonl(&std::fs::read_to_string(p).map_err(|e| IrsError::Io {
            path: p.clone(),
            source: e,
        })?)?),
        None => None,
    };
    let mut rows = Vec::new();
    for fold in 0..a.folds {
        let seed = g.seed + fold;
        for &strategy in &a.strategies {
            let mut cfg = SessionConfig::new(g.manifest()?.to_path_buf());
            cfg.lambda = g.lambda;
            cfg.kernel = g.kernel()?;
            cfg.strategy = strategy;
            cfg.budget = match &replay {
                Some(r) => r.len(),
                None => a.budget,
            };
            cfg.seed_ids = a.seed_ids;
            cfg.rank_window = a.rank_window;
            cfg.seed = seed;
            cfg.split_ratio = a.split_ratio;
            cfg.gallery_scope = a.gallery_scope;
            let (ds, split, mut session) = open_session(&cfg)?;
            let test = TestSet::new(&ds.features, &split, ShotMode::All)?;
            let mut annotator: Box<dyn Annotator> = match &replay {
                Some(r) => Box::new(ReplayAnnotator::from_log(r)),
                None => Box::new(OracleAnnotator),
            };
            let mut failure = None;
            let mut snap = |s: &irs_core::active::LabelingSession, rows: &mut Vec<SimRow>| {
                if a.checkpoints.contains(&s.steps_taken()) {
                    match test.evaluate(&s.model()) {
                        Ok((curve, map)) => rows.push(SimRow {
                            strategy,
                            seed,
                            at: s.steps_taken(),
                            rank1: curve.rank1(),
                            map,
                        }),
                        Err(e) => failure = Some(e),
                    }
                }
            };
            snap(&session, &mut rows);
            let log = run_session(&mut session, annotator.as_mut(), |s, _| snap(s, &mut rows))?;
            if let Some(e) = failure {
                return Err(e);
            }
            let (curve, map) = test.evaluate(&session.model())?;
            print_metrics(&format!("{strategy} seed={seed} steps={} ", log.len()), &curve, map);
            if let Some(base) = &a.log {
                write_text(&log_path(base, strategy, seed, single), &write_log_jsonl(&log))?;
            }
            if let Some(path) = &a.checkpoint_out {
                session.state().save_checkpoint(path)?;
            }
        }
    }
    let mut groups: BTreeMap<(String, usize), (Strategy, Vec<&SimRow>)> = BTreeMap::new();
    for r in &rows {
        groups
            .entry((r.strategy.to_string(), r.at))
            .or_insert_with(|| (r.strategy, Vec::new()))
            .1
            .push(r);
    }
    let summary: Vec<SimSummary> = a
        .strategies
        .iter()
        .flat_map(|s| {
            let mut v: Vec<SimSummary> = groups
                .iter()
                .filter(|((name, _), _)| *name == s.to_string())
                .map(|((_, at), (strategy, rs))| SimSummary {
                    strategy: *strategy,
                    at: *at,
                    mean_rank1: rs.iter().map(|r| r.rank1).sum::<f64>() / rs.len() as f64,
                    map: rs.iter().map(|r| r.map).sum::<f64>() / rs.len() as f64,
                })
                .collect();
            v.sort_by_key(|x| x.at);
            v
        })
        .collect();
    println!("strategy\tlabels\trank1\tmAP");
    for s in &summary {
        println!("{}\t{}\t{:.4}\t{:.4}", s.strategy, s.at, s.mean_rank1, s.map);
    }
    if let Some(path) = &a.report {
        write_json(path, &SimReport { rows, summary })?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::GenSynth {
            out_dir,
            name,
            num_ids,
            imgs_per_id,
            dim,
            view_shift,
            noise,
        } => {
            let fm = gen_synthetic(&SyntheticSpec {
                num_ids,
                imgs_per_id_per_cam: imgs_per_id,
                d: dim,
                view_shift_scale: view_shift,
                noise_scale: noise,
                seed: g.seed,
            })?;
            std::fs::create_dir_all(&out_dir).map_err(|e| IrsError::Io {
                path: out_dir.clone(),
                source: e,
            })?;
            println!("{}", dataset::write_dataset(&out_dir, &name, &fm)?.display());
            Ok(())
        }
        Command::Train {
            coding,
            split_ratio,
            out,
            shot,
            report,
        } => train(g, coding.into(), split_ratio, shot.into(), out.as_deref(), report.as_deref()),
        Command::Evaluate {
            model,
            fuse,
            config,
            split_ratio,
            shot,
            report,
            cmc_csv,
        } => evaluate(
            g,
            model.as_deref(),
            &fuse,
            config.as_deref(),
            split_ratio,
            shot.into(),
            report.as_deref(),
            cmc_csv.as_deref(),
        ),
        Command::Simulate {
            strategy,
            compare,
            budget,
            seed_ids,
            folds,
            checkpoints,
            split_ratio,
            rank_window,
            gallery_scope,
            log,
            replay,
            checkpoint_out,
            report,
        } => simulate(
            g,
            SimArgs {
                strategies: if compare.is_empty() { vec![strategy] } else { compare },
                budget,
                seed_ids,
                folds: folds.max(1),
                checkpoints,
                split_ratio,
                rank_window,
                gallery_scope: gallery_scope.into(),
                log,
                replay,
                checkpoint_out,
                report,
            },
        ),
        Command::Serve {
            listen,
            rank_window,
            strategy,
            budget,
            seed_ids,
            split_ratio,
            gallery_scope,
            checkpoint_out,
            log,
        } => {
            let mut cfg = SessionConfig::new(g.manifest()?.to_path_buf());
            cfg.lambda = g.lambda;
            cfg.kernel = g.kernel()?;
            cfg.strategy = strategy;
            cfg.budget = budget;
            cfg.seed_ids = seed_ids;
            cfg.rank_window = rank_window;
            cfg.seed = g.seed;
            cfg.split_ratio = split_ratio;
            cfg.gallery_scope = gallery_scope.into();
            cfg.listen = listen;
            cfg.checkpoint_out = checkpoint_out;
            cfg.log_out = log;
            let rt = tokio::runtime::Runtime::new().map_err(|e| IrsError::Io {
                path: PathBuf::from("<tokio runtime>"),
                source: e,
            })?;
            rt.block_on(irs_core::service::serve(&cfg))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IRS_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
