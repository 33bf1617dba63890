//! Feature matrices, manifests, identity splits and the synthetic generator.
//!
//! Samples are stored one per column (`d × n`). Identity and camera labels are
//! positive integers. Nothing is normalised at load time unless the manifest
//! lists an explicit preprocessing step.
//!
//! The synthetic generator draws from ChaCha8 (`rand_chacha::ChaCha8Rng`
//! seeded through `seed_from_u64`) with normals from `rand_distr`'s
//! `StandardNormal`. Draw order: the view-shift vector, then one base vector
//! per identity, then noise for every sample in storage order.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVectorView};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::storage;
use crate::{IrsError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    ids: Vec<u32>,
    cams: Vec<u32>,
}

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>, ids: Vec<u32>, cams: Vec<u32>) -> Result<Self> {
        let (d, n) = data.shape();
        if d == 0 || n == 0 {
            return Err(IrsError::invalid(format!("empty feature matrix ({d}x{n})")));
        }
        if ids.len() != n {
            return Err(IrsError::LabelCount {
                expected: n,
                found: ids.len(),
            });
        }
        if cams.len() != n {
            return Err(IrsError::LabelCount {
                expected: n,
                found: cams.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(IrsError::NonFinite {
                row: pos % d,
                col: pos / d,
            });
        }
        Ok(FeatureMatrix { data, ids, cams })
    }

    /// Feature dimension `d`.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Sample count `n`.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn cams(&self) -> &[u32] {
        &self.cams
    }

    pub fn sample(&self, i: usize) -> DVectorView<'_, f64> {
        self.data.column(i)
    }

    /// Columns at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            data: self.data.select_columns(indices),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
            cams: indices.iter().map(|&i| self.cams[i]).collect(),
        }
    }

    /// `[self | other]`.
    pub fn hconcat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.dim() != other.dim() {
            return Err(IrsError::dims(format!(
                "cannot concatenate d={} with d={}",
                self.dim(),
                other.dim()
            )));
        }
        let mut data = DMatrix::zeros(self.dim(), self.len() + other.len());
        data.columns_mut(0, self.len()).copy_from(&self.data);
        data.columns_mut(self.len(), other.len()).copy_from(&other.data);
        Ok(FeatureMatrix {
            data,
            ids: self.ids.iter().chain(&other.ids).copied().collect(),
            cams: self.cams.iter().chain(&other.cams).copied().collect(),
        })
    }

    /// Same labels, new feature columns (for kernel lifts and preprocessing).
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<FeatureMatrix> {
        if data.ncols() != self.len() {
            return Err(IrsError::dims(format!(
                "replacement has {} columns, expected {}",
                data.ncols(),
                self.len()
            )));
        }
        FeatureMatrix::new(data, self.ids.clone(), self.cams.clone())
    }

    /// Distinct identity labels in order of first appearance.
    pub fn distinct_ids(&self) -> Vec<u32> {
        let mut seen = BTreeSet::new();
        self.ids.iter().copied().filter(|id| seen.insert(*id)).collect()
    }

    pub fn distinct_cams(&self) -> Vec<u32> {
        self.cams.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Indices of samples whose identity is in `ids` and camera equals `cam`.
    pub fn indices_where(&self, ids: &BTreeSet<u32>, cam: Option<u32>) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| ids.contains(&self.ids[i]) && cam.is_none_or(|c| self.cams[i] == c))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFormat {
    Csv,
    F64le,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelSource {
    Inline(Vec<u32>),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    /// Scale every sample to unit Euclidean norm.
    L2Normalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub features: PathBuf,
    pub format: FeatureFormat,
    pub d: usize,
    pub n: usize,
    pub ids: LabelSource,
    pub cams: LabelSource,
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub preprocess: Vec<Preprocess>,
    /// Optional per-sample image paths, served to the annotation console.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thumbnails: Option<Vec<PathBuf>>,
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: Manifest,
    pub base_dir: PathBuf,
    pub features: FeatureMatrix,
}

impl LoadedDataset {
    pub fn thumbnail(&self, index: usize) -> Option<PathBuf> {
        let thumbs = self.manifest.thumbnails.as_ref()?;
        thumbs.get(index).map(|p| self.base_dir.join(p))
    }
}

pub fn load_features(manifest_path: &Path) -> Result<FeatureMatrix> {
    load_dataset(manifest_path).map(|ds| ds.features)
}

pub fn load_dataset(manifest_path: &Path) -> Result<LoadedDataset> {
    if !manifest_path.exists() {
        return Err(IrsError::io(
            manifest_path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "manifest not found"),
        ));
    }
    let manifest: Manifest = storage::read_json(manifest_path)?;
    let base_dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let feat_path = base_dir.join(&manifest.features);
    let data = match manifest.format {
        FeatureFormat::F64le => {
            let m = storage::read_matrix(&feat_path)?;
            if m.shape() != (manifest.d, manifest.n) {
                return Err(IrsError::dims(format!(
                    "manifest declares {}x{}, payload is {}x{}",
                    manifest.d,
                    manifest.n,
                    m.nrows(),
                    m.ncols()
                )));
            }
            m
        }
        FeatureFormat::Csv => read_csv_features(&feat_path, manifest.d, manifest.n)?,
    };
    let ids = resolve_labels(&manifest.ids, &base_dir, 0)?;
    let cams = resolve_labels(&manifest.cams, &base_dir, 1)?;
    let mut features = FeatureMatrix::new(data, ids, cams)?;
    for step in &manifest.preprocess {
        features = apply_preprocess(&features, *step)?;
    }
    if let Some(thumbs) = &manifest.thumbnails {
        if thumbs.len() != features.len() {
            return Err(IrsError::LabelCount {
                expected: features.len(),
                found: thumbs.len(),
            });
        }
    }
    Ok(LoadedDataset {
        manifest,
        base_dir,
        features,
    })
}

pub fn apply_preprocess(fm: &FeatureMatrix, step: Preprocess) -> Result<FeatureMatrix> {
    match step {
        Preprocess::L2Normalize => {
            let mut data = fm.data().clone();
            for mut col in data.column_iter_mut() {
                let norm = col.norm();
                if norm > 0.0 {
                    col /= norm;
                }
            }
            fm.with_data(data)
        }
    }
}

fn read_csv_features(path: &Path, d: usize, n: usize) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| IrsError::io(path, e))?;
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != n {
        return Err(IrsError::dims(format!(
            "manifest declares n={n}, CSV has {} rows",
            rows.len()
        )));
    }
    let mut data = DMatrix::zeros(d, n);
    for (r, line) in rows.iter().enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != d {
            return Err(IrsError::dims(format!(
                "row {r} has {} values, manifest declares d={d}",
                cells.len()
            )));
        }
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| IrsError::format(path, format!("bad number {cell:?} at ({r},{c})")))?;
            if !v.is_finite() {
                return Err(IrsError::NonFinite { row: r, col: c });
            }
            data[(c, r)] = v;
        }
    }
    Ok(data)
}

/// Reads labels from an inline array or a sidecar CSV. A two-column sidecar
/// (`id,cam`) contributes column `column`; a one-column file is used as is.
fn resolve_labels(src: &LabelSource, base: &Path, column: usize) -> Result<Vec<u32>> {
    let path = match src {
        LabelSource::Inline(v) => return Ok(v.clone()),
        LabelSource::File(p) => base.join(p),
    };
    let text = fs::read_to_string(&path).map_err(|e| IrsError::io(&path, e))?;
    let mut out = Vec::new();
    for (r, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let cell = if cells.len() == 1 { cells[0] } else { cells.get(column).copied().unwrap_or("") };
        match cell.parse::<u32>() {
            Ok(v) => out.push(v),
            // header line
            Err(_) if r == 0 => continue,
            Err(_) => {
                return Err(IrsError::format(&path, format!("bad label {cell:?} on line {}", r + 1)))
            }
        }
    }
    Ok(out)
}

/// Writes `fm` as `<name>.f64le` + `<name>.labels.csv` + `<name>.json` in `dir`
/// and returns the manifest path.
pub fn write_dataset(dir: &Path, name: &str, fm: &FeatureMatrix) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| IrsError::io(dir, e))?;
    let feat_file = format!("{name}.f64le");
    let label_file = format!("{name}.labels.csv");
    storage::write_matrix(&dir.join(&feat_file), fm.data())?;
    let mut labels = String::from("id,cam\n");
    for (id, cam) in fm.ids().iter().zip(fm.cams()) {
        labels.push_str(&format!("{id},{cam}\n"));
    }
    let label_path = dir.join(&label_file);
    fs::write(&label_path, labels).map_err(|e| IrsError::io(&label_path, e))?;
    let manifest = Manifest {
        features: feat_file.into(),
        format: FeatureFormat::F64le,
        d: fm.dim(),
        n: fm.len(),
        ids: LabelSource::File(label_file.clone().into()),
        cams: LabelSource::File(label_file.into()),
        name: name.to_string(),
        preprocess: Vec::new(),
        thumbnails: None,
    };
    let manifest_path = dir.join(format!("{name}.json"));
    storage::write_json(&manifest_path, &manifest)?;
    Ok(manifest_path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ids: BTreeSet<u32>,
    pub test_ids: BTreeSet<u32>,
    pub probe_cam: u32,
    pub gallery_cam: u32,
    pub seed: u64,
}

impl SplitSpec {
    pub fn train_indices(&self, fm: &FeatureMatrix) -> Vec<usize> {
        fm.indices_where(&self.train_ids, None)
    }

    pub fn test_probe_indices(&self, fm: &FeatureMatrix) -> Vec<usize> {
        fm.indices_where(&self.test_ids, Some(self.probe_cam))
    }

    pub fn test_gallery_indices(&self, fm: &FeatureMatrix) -> Vec<usize> {
        fm.indices_where(&self.test_ids, Some(self.gallery_cam))
    }
}

/// Randomly partitions identities into train and test by `ratio`. The probe
/// camera is the smallest camera label present, the gallery camera the next.
pub fn make_split(fm: &FeatureMatrix, ratio: f64, seed: u64) -> Result<SplitSpec> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(IrsError::invalid(format!("split ratio {ratio} outside (0,1)")));
    }
    let mut ids: Vec<u32> = fm.ids().iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if ids.len() < 2 {
        return Err(IrsError::invalid(format!(
            "need at least 2 identities to split, found {}",
            ids.len()
        )));
    }
    let cams = fm.distinct_cams();
    if cams.len() < 2 {
        return Err(IrsError::invalid("need at least 2 camera views to split"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_train = ((ids.len() as f64 * ratio).round() as usize).clamp(1, ids.len() - 1);
    Ok(SplitSpec {
        train_ids: ids[..n_train].iter().copied().collect(),
        test_ids: ids[n_train..].iter().copied().collect(),
        probe_cam: cams[0],
        gallery_cam: cams[1],
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_ids: usize,
    pub imgs_per_id_per_cam: usize,
    pub d: usize,
    pub view_shift_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Reference configuration for desk-scale experiments: 300 identities,
    /// two images per camera, `d = 64`, unit view shift and unit noise.
    pub fn standard(seed: u64) -> Self {
        SyntheticSpec {
            num_ids: 300,
            imgs_per_id_per_cam: 2,
            d: 64,
            view_shift_scale: 1.0,
            noise_scale: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_ids < 2 || self.imgs_per_id_per_cam < 1 || self.d < 2 {
            return Err(IrsError::invalid(
                "synthetic spec needs num_ids >= 2, imgs_per_id_per_cam >= 1, d >= 2",
            ));
        }
        if !(self.view_shift_scale >= 0.0 && self.noise_scale >= 0.0) {
            return Err(IrsError::invalid("synthetic scales must be non-negative"));
        }
        Ok(())
    }
}

/// Two-camera synthetic identities. Samples are ordered identity-major, then
/// camera 1 before camera 2, then image index.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<FeatureMatrix> {
    spec.validate()?;
    let d = spec.d;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let shift: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
    let bases: Vec<Vec<f64>> = (0..spec.num_ids)
        .map(|_| (0..d).map(|_| normal(&mut rng)).collect())
        .collect();

    let n = spec.num_ids * 2 * spec.imgs_per_id_per_cam;
    let mut data = DMatrix::zeros(d, n);
    let mut ids = Vec::with_capacity(n);
    let mut cams = Vec::with_capacity(n);
    let mut col = 0;
    for (k, base) in bases.iter().enumerate() {
        for cam in 1..=2u32 {
            for _ in 0..spec.imgs_per_id_per_cam {
                for r in 0..d {
                    let mut v = base[r] + spec.noise_scale * normal(&mut rng);
                    if cam == 2 {
                        v += spec.view_shift_scale * shift[r];
                    }
                    data[(r, col)] = v;
                }
                ids.push(k as u32 + 1);
                cams.push(cam);
                col += 1;
            }
        }
    }
    FeatureMatrix::new(data, ids, cams)
}

/// Sample count per identity.
pub fn class_counts(ids: &[u32]) -> HashMap<u32, usize> {
    let mut counts = HashMap::new();
    for &id in ids {
        *counts.entry(id).or_insert(0) += 1;
    }
    counts
}
