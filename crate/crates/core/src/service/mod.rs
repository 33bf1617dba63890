//! Session configuration shared by the CLI and the HTTP annotation service.
//!
//! Both entry points build their [`LabelingSession`] through
//! [`open_session`], so a log recorded by a human through the service replays
//! through the library into the same model, bit for bit.

mod http;

pub use http::{router, serve, AppState, SessionHandle};

use std::net::SocketAddr;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::active::{ActiveConfig, GalleryScope, KernelChoice, LabelingSession, Strategy};
use crate::dataset::{self, make_split, LoadedDataset, SplitSpec};
use crate::{IrsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub manifest: PathBuf,
    pub lambda: f64,
    pub kernel: KernelChoice,
    pub strategy: Strategy,
    pub budget: usize,
    pub seed_ids: usize,
    pub rank_window: usize,
    pub seed: u64,
    /// Fraction of identities used for training; the rest are held out.
    pub split_ratio: f64,
    #[serde(default)]
    pub gallery_scope: GalleryScope,
    pub listen: SocketAddr,
    /// Incremental checkpoint rewritten after every accepted annotation.
    #[serde(default)]
    pub checkpoint_out: Option<PathBuf>,
    /// JSON-lines session log appended after every step.
    #[serde(default)]
    pub log_out: Option<PathBuf>,
}

impl SessionConfig {
    pub fn new(manifest: PathBuf) -> Self {
        let d = ActiveConfig::default();
        SessionConfig {
            manifest,
            lambda: d.lambda,
            kernel: d.kernel,
            strategy: d.strategy,
            budget: d.budget,
            seed_ids: d.seed_ids,
            rank_window: d.rank_window,
            seed: d.seed,
            split_ratio: 0.5,
            gallery_scope: d.gallery_scope,
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            checkpoint_out: None,
            log_out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed_ids < 1 {
            return Err(IrsError::invalid("seed set size must be at least 1"));
        }
        if self.rank_window < 1 {
            return Err(IrsError::invalid("rank window must be at least 1"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(IrsError::invalid("sessions need a finite lambda > 0"));
        }
        Ok(())
    }

    pub fn active_config(&self) -> ActiveConfig {
        ActiveConfig {
            strategy: self.strategy,
            budget: self.budget,
            seed_ids: self.seed_ids,
            rank_window: self.rank_window,
            lambda: self.lambda,
            kernel: self.kernel.clone(),
            gallery_scope: self.gallery_scope,
            seed: self.seed,
            ..ActiveConfig::default()
        }
    }
}

/// Loads the dataset, splits it with the configured seed and initialises the
/// session on the training identities.
pub fn open_session(config: &SessionConfig) -> Result<(LoadedDataset, SplitSpec, LabelingSession)> {
    config.validate()?;
    let ds = dataset::load_dataset(&config.manifest)?;
    let split = make_split(&ds.features, config.split_ratio, config.seed)?;
    let session = LabelingSession::new(
        ds.features.clone(),
        &split.train_ids,
        split.probe_cam,
        split.gallery_cam,
        config.active_config(),
    )?;
    Ok((ds, split, session))
}
