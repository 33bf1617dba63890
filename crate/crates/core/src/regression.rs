//! Batch identity regression: closed-form ridge fits in primal and kernel
//! form, embedding, matching distance, and the scatter-matrix FDA solver used
//! as an independent check on the FDA coding.
//!
//! Matching uses unsquared Euclidean distance between embeddings. The
//! active-learning criteria use the squared form `(x₁−x₂)ᵀPPᵀ(x₁−x₂)`; both
//! order candidates identically.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::coding::TargetCoding;
use crate::dataset::FeatureMatrix;
use crate::linalg;
use crate::storage;
use crate::{IrsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    /// `exp(−‖a−b‖² / (2·bandwidth²))`
    Rbf { bandwidth: f64 },
    /// `⟨a, b⟩`
    Linear,
}

impl Kernel {
    pub fn rbf(bandwidth: f64) -> Result<Kernel> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(IrsError::invalid(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Kernel::Rbf { bandwidth })
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { bandwidth } => {
                (-linalg::sq_euclidean(a, b) / (2.0 * bandwidth * bandwidth)).exp()
            }
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        }
    }

    /// Kernel matrix between the columns of `a` (rows of the result) and the
    /// columns of `b`.
    pub fn gram(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if a.nrows() != b.nrows() {
            return Err(IrsError::dims(format!(
                "kernel inputs have d={} and d={}",
                a.nrows(),
                b.nrows()
            )));
        }
        if let Kernel::Linear = self {
            return Ok(a.transpose() * b);
        }
        Ok(DMatrix::from_fn(a.ncols(), b.ncols(), |i, j| {
            self.eval(a.column(i).as_slice(), b.column(j).as_slice())
        }))
    }

    pub fn bandwidth(&self) -> Option<f64> {
        match *self {
            Kernel::Rbf { bandwidth } => Some(bandwidth),
            Kernel::Linear => None,
        }
    }
}

pub fn rbf_kernel(a: &FeatureMatrix, b: &FeatureMatrix, bandwidth: f64) -> Result<DMatrix<f64>> {
    Kernel::rbf(bandwidth)?.gram(a.data(), b.data())
}

/// Median of the pairwise Euclidean distances between distinct columns.
pub fn median_bandwidth(x: &DMatrix<f64>) -> Result<f64> {
    let n = x.ncols();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(linalg::sq_euclidean(x.column(i).as_slice(), x.column(j).as_slice()).sqrt());
        }
    }
    if dists.is_empty() {
        return Err(IrsError::invalid("median heuristic needs at least 2 samples"));
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if median > 0.0 {
        Ok(median)
    } else {
        Err(IrsError::invalid("median pairwise distance is zero"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Cholesky,
    PseudoInverse,
    Woodbury,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveInfo {
    pub method: SolveMethod,
    pub effective_rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    /// `P`, `d × m`.
    Linear { p: DMatrix<f64> },
    /// `Q`, `n_a × m`, applied to kernel values against `anchors` (`d × n_a`).
    Kernel {
        anchors: DMatrix<f64>,
        kernel: Kernel,
        q: DMatrix<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub projection: Projection,
    pub lambda: f64,
    pub solve: SolveInfo,
}

impl EmbeddingModel {
    pub fn linear(p: DMatrix<f64>, lambda: f64, solve: SolveInfo) -> Self {
        EmbeddingModel {
            projection: Projection::Linear { p },
            lambda,
            solve,
        }
    }

    /// Raw feature dimension the model accepts.
    pub fn input_dim(&self) -> usize {
        match &self.projection {
            Projection::Linear { p } => p.nrows(),
            Projection::Kernel { anchors, .. } => anchors.nrows(),
        }
    }

    /// Embedding dimension `m`.
    pub fn output_dim(&self) -> usize {
        match &self.projection {
            Projection::Linear { p } => p.ncols(),
            Projection::Kernel { q, .. } => q.ncols(),
        }
    }

    /// Embeds raw columns `x` (`d × n`), returning one row per sample (`n × m`).
    pub fn embed_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.input_dim() {
            return Err(IrsError::dims(format!(
                "model expects d={}, input has d={}",
                self.input_dim(),
                x.nrows()
            )));
        }
        match &self.projection {
            Projection::Linear { p } => Ok(x.transpose() * p),
            Projection::Kernel { anchors, kernel, q } => Ok(kernel.gram(x, anchors)? * q),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (kind, kernel, main, anchors) = match &self.projection {
            Projection::Linear { p } => (ModelKind::Linear, None, p, None),
            Projection::Kernel { anchors, kernel, q } => (ModelKind::Kernel, Some(*kernel), q, Some(anchors)),
        };
        let main_path = storage::payload_path(path, if anchors.is_some() { "q" } else { "p" });
        storage::write_matrix(&main_path, main)?;
        let anchors_file = match anchors {
            Some(a) => {
                let ap = storage::payload_path(path, "anchors");
                storage::write_matrix(&ap, a)?;
                Some(file_name(&ap))
            }
            None => None,
        };
        let header = ModelHeader {
            kind,
            lambda: self.lambda,
            d: self.input_dim(),
            m: self.output_dim(),
            bandwidth: kernel.and_then(|k| k.bandwidth()),
            kernel,
            solver: self.solve,
            projection: file_name(&main_path),
            anchors: anchors_file,
        };
        storage::write_json(path, &header)
    }

    pub fn load(path: &Path) -> Result<EmbeddingModel> {
        let header: ModelHeader = storage::read_json(path)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let main = storage::read_matrix(&dir.join(&header.projection))?;
        let projection = match header.kind {
            ModelKind::Linear => {
                if main.shape() != (header.d, header.m) {
                    return Err(IrsError::dims("projection payload disagrees with header"));
                }
                Projection::Linear { p: main }
            }
            ModelKind::Kernel => {
                let anchors_file = header
                    .anchors
                    .as_ref()
                    .ok_or_else(|| IrsError::format(path, "kernel model without anchors"))?;
                let anchors = storage::read_matrix(&dir.join(anchors_file))?;
                let kernel = header
                    .kernel
                    .ok_or_else(|| IrsError::format(path, "kernel model without kernel"))?;
                if anchors.nrows() != header.d || main.shape() != (anchors.ncols(), header.m) {
                    return Err(IrsError::dims("kernel payloads disagree with header"));
                }
                Projection::Kernel {
                    anchors,
                    kernel,
                    q: main,
                }
            }
        };
        Ok(EmbeddingModel {
            projection,
            lambda: header.lambda,
            solve: header.solver,
        })
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().unwrap().to_string_lossy().into_owned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ModelKind {
    Linear,
    Kernel,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    kind: ModelKind,
    lambda: f64,
    d: usize,
    m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bandwidth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kernel: Option<Kernel>,
    solver: SolveInfo,
    projection: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchors: Option<String>,
}

fn check_fit_inputs(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<()> {
    if x.ncols() != y.nrows() {
        return Err(IrsError::dims(format!(
            "X has {} samples but Y has {} rows",
            x.ncols(),
            y.nrows()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(IrsError::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

/// `P = (XXᵀ + λI)† X Y`. A positive `lambda` is solved by Cholesky; zero
/// falls back to `P = (Xᵀ)† Y` through a cut-off SVD.
pub fn fit_linear_matrix(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<(DMatrix<f64>, SolveInfo)> {
    check_fit_inputs(x, y, lambda)?;
    let d = x.nrows();
    if lambda > 0.0 {
        let mut t = x * x.transpose();
        for i in 0..d {
            t[(i, i)] += lambda;
        }
        let p = linalg::spd_solve(&t, &(x * y))?;
        return Ok((
            p,
            SolveInfo {
                method: SolveMethod::Cholesky,
                effective_rank: d,
            },
        ));
    }
    let (xt_pinv, rank) = linalg::pinv(&x.transpose())?;
    if rank == 0 {
        return Err(IrsError::Singular { rank, dim: d });
    }
    Ok((
        xt_pinv * y,
        SolveInfo {
            method: SolveMethod::PseudoInverse,
            effective_rank: rank,
        },
    ))
}

pub fn fit_linear(x: &FeatureMatrix, y: &TargetCoding, lambda: f64) -> Result<EmbeddingModel> {
    let (p, solve) = fit_linear_matrix(x.data(), &y.y, lambda)?;
    Ok(EmbeddingModel::linear(p, lambda, solve))
}

/// `Q = (KKᵀ + λK)† K Y` with `K` the training kernel matrix.
pub fn fit_kernel_with(x: &FeatureMatrix, y: &TargetCoding, lambda: f64, kernel: Kernel) -> Result<EmbeddingModel> {
    check_fit_inputs(x.data(), &y.y, lambda)?;
    let k = kernel.gram(x.data(), x.data())?;
    let mut lhs = &k * k.transpose() + &k * lambda;
    linalg::symmetrize(&mut lhs);
    let (inv, rank) = linalg::symmetric_pinv(&lhs);
    if rank == 0 {
        return Err(IrsError::Singular { rank, dim: k.nrows() });
    }
    let q = inv * (&k * &y.y);
    Ok(EmbeddingModel {
        projection: Projection::Kernel {
            anchors: x.data().clone(),
            kernel,
            q,
        },
        lambda,
        solve: SolveInfo {
            method: SolveMethod::PseudoInverse,
            effective_rank: rank,
        },
    })
}

/// RBF kernel fit. `bandwidth = None` uses the median heuristic.
pub fn fit_kernel(x: &FeatureMatrix, y: &TargetCoding, lambda: f64, bandwidth: Option<f64>) -> Result<EmbeddingModel> {
    let bw = match bandwidth {
        Some(b) => b,
        None => median_bandwidth(x.data())?,
    };
    fit_kernel_with(x, y, lambda, Kernel::rbf(bw)?)
}

pub fn embed(model: &EmbeddingModel, x: &FeatureMatrix) -> Result<DMatrix<f64>> {
    model.embed_matrix(x.data())
}

/// Euclidean distance between two embedded rows.
pub fn match_distance(e1: &[f64], e2: &[f64]) -> Result<f64> {
    if e1.len() != e2.len() {
        return Err(IrsError::dims(format!("embeddings of length {} and {}", e1.len(), e2.len())));
    }
    Ok(linalg::sq_euclidean(e1, e2).sqrt())
}

/// `½‖XᵀP − Y‖²_F + ½λ‖P‖²_F`, the objective whose unique minimiser is the
/// closed-form `P` returned by [`fit_linear`].
pub fn ridge_objective(x: &DMatrix<f64>, y: &DMatrix<f64>, p: &DMatrix<f64>, lambda: f64) -> f64 {
    0.5 * (x.transpose() * p - y).norm_squared() + 0.5 * lambda * p.norm_squared()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdaSolution {
    /// `d × q` discriminant directions.
    pub g: DMatrix<f64>,
    /// Eigenvalues, descending.
    pub eigvals: Vec<f64>,
}

/// Solves `(XXᵀ + λI)† S_b G = G Λ` with `S_b = Σ_j n_j u_j u_jᵀ` built from
/// class centroids. Each direction is scaled so that `gᵀ(XXᵀ + λI)g = α`,
/// the normalisation under which `GGᵀ` equals `PPᵀ` of the FDA-coded fit.
///
/// Callers centre `X`. Dense eigen-solvers throughout; meant for small
/// instances.
pub fn fda_solve(x: &DMatrix<f64>, ids: &[u32], lambda: f64) -> Result<FdaSolution> {
    let (d, n) = x.shape();
    if ids.len() != n {
        return Err(IrsError::LabelCount { expected: n, found: ids.len() });
    }
    if !(lambda >= 0.0) {
        return Err(IrsError::invalid("lambda must be >= 0"));
    }
    let mut classes: Vec<u32> = ids.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(IrsError::invalid("FDA needs at least 2 classes"));
    }

    let mut sb = DMatrix::zeros(d, d);
    for &c in &classes {
        let members: Vec<usize> = (0..n).filter(|&i| ids[i] == c).collect();
        let nj = members.len() as f64;
        let u = x.select_columns(&members).column_sum() / nj;
        sb += (&u * u.transpose()) * nj;
    }

    let mut st = x * x.transpose();
    for i in 0..d {
        st[(i, i)] += lambda;
    }
    // Pseudo-inverse square root of the (regularised) total scatter.
    let st_eig = SymmetricEigen::new(st);
    let max_ev = st_eig.eigenvalues.max();
    let cut = linalg::rank_cutoff(max_ev, d, d);
    let mut w = DMatrix::zeros(d, d);
    for (k, &ev) in st_eig.eigenvalues.iter().enumerate() {
        if ev > cut {
            let v = st_eig.eigenvectors.column(k);
            w += (v / ev.sqrt()) * v.transpose();
        }
    }

    let mut c = &w * &sb * &w;
    linalg::symmetrize(&mut c);
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let sb_rank = {
        let e = SymmetricEigen::new(sb.clone()).eigenvalues;
        let cut = linalg::rank_cutoff(e.amax(), d, d);
        e.iter().filter(|v| v.abs() > cut).count()
    };
    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = 1e3 * d as f64 * f64::EPSILON * top.max(f64::MIN_POSITIVE);
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&k| eig.eigenvalues[k] > tol)
        .take(sb_rank.min(classes.len() - 1))
        .collect();

    let mut g = DMatrix::zeros(d, keep.len());
    let mut eigvals = Vec::with_capacity(keep.len());
    for (col, &k) in keep.iter().enumerate() {
        let alpha = eig.eigenvalues[k];
        g.set_column(col, &((&w * eig.eigenvectors.column(k)) * alpha.sqrt()));
        eigvals.push(alpha);
    }
    Ok(FdaSolution { g, eigvals })
}
