//! Exact incremental updates of the ridge solution.
//!
//! The state keeps `T⁻¹ = (λI + Σ xxᵀ)⁻¹` and the current projection `P`.
//! Adding a chunk `X'` with targets `Y'` applies the Woodbury identity
//!
//! ```text
//! A      = T⁻¹X'
//! K      = A (I + X'ᵀA)⁻¹
//! T⁻¹   ← T⁻¹ − K Aᵀ
//! P     ← [P | 0] + K (Y' − X'ᵀ[P | 0])
//! ```
//!
//! where `K = T_new⁻¹ X'`, so the last line is the usual projection update
//! `(P − A(I+X'ᵀA)⁻¹X'ᵀP) ⊕ 0 + T_new⁻¹X'Y'` with the shared factor pulled out.
//! New identities append zero columns to `P` before the data term. No earlier
//! samples are needed.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coding::{ClassRegistry, TargetCoding};
use crate::dataset::FeatureMatrix;
use crate::linalg;
use crate::regression::{EmbeddingModel, Kernel, Projection, SolveInfo, SolveMethod};
use crate::storage;
use crate::{IrsError, Result};

/// How a chunk of new samples is folded in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePath {
    /// One Sherman-Morrison step per sample; only scalar inverses.
    RankOne,
    /// One Woodbury step with an `n' × n'` solve.
    Chunk,
}

/// Sequential rank-one updates win when the chunk is small next to `d`.
pub fn choose_path(n_new: usize, d: usize) -> UpdatePath {
    if n_new <= 32 && n_new * 50 <= d {
        UpdatePath::RankOne
    } else {
        UpdatePath::Chunk
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalState {
    tinv: DMatrix<f64>,
    p: DMatrix<f64>,
    registry: ClassRegistry,
    lambda: f64,
    n_seen: usize,
    update_count: usize,
}

impl IncrementalState {
    /// `T₀ = X₀X₀ᵀ + λI`, `P₀ = T₀⁻¹X₀Y₀`. Requires `λ > 0`.
    pub fn init(x0: &FeatureMatrix, y0: &TargetCoding, lambda: f64) -> Result<Self> {
        Self::init_matrix(x0.data(), &y0.y, y0.registry.clone(), lambda)
    }

    /// OneHot-coded initialisation from the identity labels of `x0`.
    pub fn init_onehot(x0: &FeatureMatrix, lambda: f64) -> Result<Self> {
        let y0 = crate::coding::onehot(x0.ids(), x0.distinct_ids().len())?;
        Self::init(x0, &y0, lambda)
    }

    pub fn init_matrix(
        x0: &DMatrix<f64>,
        y0: &DMatrix<f64>,
        registry: ClassRegistry,
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(IrsError::invalid(format!(
                "incremental learning needs lambda > 0, got {lambda}"
            )));
        }
        let (d, n) = x0.shape();
        if d == 0 || n == 0 {
            return Err(IrsError::invalid("initial seed set is empty"));
        }
        if y0.nrows() != n {
            return Err(IrsError::dims(format!("X0 has {n} samples, Y0 has {} rows", y0.nrows())));
        }
        if y0.ncols() != registry.len() {
            return Err(IrsError::dims(format!(
                "Y0 has {} columns for {} registered classes",
                y0.ncols(),
                registry.len()
            )));
        }
        let mut t = x0 * x0.transpose();
        for i in 0..d {
            t[(i, i)] += lambda;
        }
        let tinv = linalg::spd_inverse(&t)?;
        let p = &tinv * (x0 * y0);
        Ok(IncrementalState {
            tinv,
            p,
            registry,
            lambda,
            n_seen: n,
            update_count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.tinv.nrows()
    }

    pub fn tinv(&self) -> &DMatrix<f64> {
        &self.tinv
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn registry(&self) -> &ClassRegistry {
        &self.registry
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_seen(&self) -> usize {
        self.n_seen
    }

    pub fn update_count(&self) -> usize {
        self.update_count
    }

    /// Linear embedding model over the current projection.
    pub fn snapshot(&self) -> EmbeddingModel {
        EmbeddingModel::linear(
            self.p.clone(),
            self.lambda,
            SolveInfo {
                method: SolveMethod::Woodbury,
                effective_rank: self.dim(),
            },
        )
    }

    fn validate(&self, xp: &DMatrix<f64>, yp: &DMatrix<f64>, new_classes: &[u32]) -> Result<()> {
        if xp.nrows() != self.dim() {
            return Err(IrsError::dims(format!("state has d={}, new data has d={}", self.dim(), xp.nrows())));
        }
        if xp.ncols() == 0 {
            return Err(IrsError::invalid("update with no samples"));
        }
        if yp.nrows() != xp.ncols() {
            return Err(IrsError::dims(format!("{} new samples but {} target rows", xp.ncols(), yp.nrows())));
        }
        let width = self.registry.len() + new_classes.len();
        if yp.ncols() > width {
            return Err(IrsError::invalid(format!(
                "targets reference column {} but only {} classes are registered or declared new",
                yp.ncols() - 1,
                width
            )));
        }
        if yp.ncols() < width {
            return Err(IrsError::dims(format!("targets have {} columns, expected {width}", yp.ncols())));
        }
        for (i, c) in new_classes.iter().enumerate() {
            if self.registry.column(*c).is_some() || new_classes[..i].contains(c) {
                return Err(IrsError::invalid(format!("class {c} declared new twice or already registered")));
            }
        }
        Ok(())
    }

    fn grow(&mut self, new_classes: &[u32]) {
        if new_classes.is_empty() {
            return;
        }
        let old = self.p.ncols();
        let p = std::mem::replace(&mut self.p, DMatrix::zeros(0, 0));
        self.p = p.resize_horizontally(old + new_classes.len(), 0.0);
        for &c in new_classes {
            self.registry.register(c);
        }
    }

    /// Folds in `xp` (`d × n'`) with targets `yp` (`n' × (m + c')`), where
    /// `new_classes` names the `c'` identities that get fresh columns.
    pub fn update(&mut self, xp: &DMatrix<f64>, yp: &DMatrix<f64>, new_classes: &[u32]) -> Result<()> {
        self.update_with(UpdatePath::Chunk, xp, yp, new_classes)
    }

    /// Same result as [`update`](Self::update), picking the cheaper path.
    pub fn update_auto(&mut self, xp: &DMatrix<f64>, yp: &DMatrix<f64>, new_classes: &[u32]) -> Result<UpdatePath> {
        let path = choose_path(xp.ncols(), self.dim());
        self.update_with(path, xp, yp, new_classes)?;
        Ok(path)
    }

    pub fn update_with(
        &mut self,
        path: UpdatePath,
        xp: &DMatrix<f64>,
        yp: &DMatrix<f64>,
        new_classes: &[u32],
    ) -> Result<()> {
        self.validate(xp, yp, new_classes)?;
        match path {
            UpdatePath::Chunk => {
                // Compute before touching the state so failures leave it intact.
                let a = &self.tinv * xp;
                let mut s = xp.transpose() * &a;
                for i in 0..s.nrows() {
                    s[(i, i)] += 1.0;
                }
                let gain = linalg::spd_solve(&s, &a.transpose())?.transpose();
                self.grow(new_classes);
                self.tinv.gemm(-1.0, &gain, &a.transpose(), 1.0);
                let residual = yp - xp.transpose() * &self.p;
                self.p.gemm(1.0, &gain, &residual, 1.0);
            }
            UpdatePath::RankOne => {
                self.grow(new_classes);
                let mut a = DVector::zeros(self.dim());
                for j in 0..xp.ncols() {
                    let x = xp.column(j);
                    a.gemv(1.0, &self.tinv, &x, 0.0);
                    let s = 1.0 + x.dot(&a);
                    let k = &a / s;
                    self.tinv.ger(-1.0, &k, &a, 1.0);
                    let r = yp.row(j).transpose() - self.p.tr_mul(&x);
                    self.p.ger(1.0, &k, &r, 1.0);
                }
            }
        }
        linalg::symmetrize(&mut self.tinv);
        self.n_seen += xp.ncols();
        self.update_count += 1;
        Ok(())
    }

    /// OneHot update from identity labels: unseen labels become new classes.
    pub fn update_labeled(&mut self, xp: &DMatrix<f64>, labels: &[u32]) -> Result<UpdatePath> {
        if labels.len() != xp.ncols() {
            return Err(IrsError::LabelCount {
                expected: xp.ncols(),
                found: labels.len(),
            });
        }
        let new_classes = self.registry.unseen(labels);
        let width = self.registry.len() + new_classes.len();
        let mut yp = DMatrix::zeros(labels.len(), width);
        for (i, l) in labels.iter().enumerate() {
            let col = self
                .registry
                .column(*l)
                .unwrap_or_else(|| self.registry.len() + new_classes.iter().position(|c| c == l).unwrap());
            yp[(i, col)] = 1.0;
        }
        self.update_auto(xp, &yp, &new_classes)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let tinv_path = storage::payload_path(path, "tinv");
        let p_path = storage::payload_path(path, "p");
        storage::write_matrix(&tinv_path, &self.tinv)?;
        storage::write_matrix(&p_path, &self.p)?;
        let header = CheckpointHeader {
            lambda: self.lambda,
            d: self.dim(),
            m: self.p.ncols(),
            n_seen: self.n_seen,
            update_count: self.update_count,
            classes: self.registry.labels().to_vec(),
            tinv: name_of(&tinv_path),
            p: name_of(&p_path),
        };
        storage::write_json(path, &header)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let h: CheckpointHeader = storage::read_json(path)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let tinv = storage::read_matrix(&dir.join(&h.tinv))?;
        let p = storage::read_matrix(&dir.join(&h.p))?;
        if tinv.shape() != (h.d, h.d) || p.shape() != (h.d, h.m) || h.classes.len() != h.m {
            return Err(IrsError::format(path, "checkpoint payloads disagree with header"));
        }
        Ok(IncrementalState {
            tinv,
            p,
            registry: ClassRegistry::from(h.classes),
            lambda: h.lambda,
            n_seen: h.n_seen,
            update_count: h.update_count,
        })
    }
}

fn name_of(p: &Path) -> String {
    p.file_name().unwrap().to_string_lossy().into_owned()
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    lambda: f64,
    d: usize,
    m: usize,
    n_seen: usize,
    update_count: usize,
    classes: Vec<u32>,
    tinv: String,
    p: String,
}

/// Fixed-anchor kernel map `x ↦ [k(x, a_1), …, k(x, a_{n_a})]`. Incremental
/// learning then runs unchanged in the `n_a`-dimensional lifted space.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelLift {
    anchors: DMatrix<f64>,
    kernel: Kernel,
}

impl KernelLift {
    pub fn new(anchors: DMatrix<f64>, kernel: Kernel) -> Result<Self> {
        if anchors.ncols() == 0 || anchors.nrows() == 0 {
            return Err(IrsError::invalid("kernel lift needs at least one anchor"));
        }
        Ok(KernelLift { anchors, kernel })
    }

    pub fn anchors(&self) -> &DMatrix<f64> {
        &self.anchors
    }

    pub fn kernel(&self) -> Kernel {
        self.kernel
    }

    pub fn lifted_dim(&self) -> usize {
        self.anchors.ncols()
    }

    /// Lifts raw columns (`d × n`) to `n_a × n`.
    pub fn lift(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.kernel.gram(&self.anchors, x)
    }

    pub fn lift_features(&self, fm: &FeatureMatrix) -> Result<FeatureMatrix> {
        fm.with_data(self.lift(fm.data())?)
    }

    /// Embedding model applying a lifted-space projection to raw inputs.
    pub fn model(&self, state: &IncrementalState) -> EmbeddingModel {
        self.model_with(state.projection().clone(), state.lambda())
    }

    /// Embedding model for an arbitrary lifted-space projection `q`.
    pub fn model_with(&self, q: DMatrix<f64>, lambda: f64) -> EmbeddingModel {
        EmbeddingModel {
            projection: Projection::Kernel {
                anchors: self.anchors.clone(),
                kernel: self.kernel,
                q,
            },
            lambda,
            solve: SolveInfo {
                method: SolveMethod::Woodbury,
                effective_rank: self.lifted_dim(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coding;
    use approx::assert_relative_eq;

    fn scalar_fm(vals: &[f64], ids: &[u32]) -> FeatureMatrix {
        FeatureMatrix::new(DMatrix::from_row_slice(1, vals.len(), vals), ids.to_vec(), vec![1; ids.len()]).unwrap()
    }

    #[test]
    fn scalar_init_and_update() {
        let x0 = scalar_fm(&[1.0], &[1]);
        let mut st = IncrementalState::init_onehot(&x0, 0.1).unwrap();
        assert_relative_eq!(st.tinv()[(0, 0)], 1.0 / 1.1, epsilon = 1e-15);
        st.update_labeled(&DMatrix::from_element(1, 1, 2.0), &[1]).unwrap();
        // direct inverse of 1.1 + 4
        assert_relative_eq!(st.tinv()[(0, 0)], 1.0 / 5.1, epsilon = 1e-14);
        assert_relative_eq!(st.tinv()[(0, 0)], 0.19608, epsilon = 1e-5);
        assert_eq!(st.n_seen(), 2);
        assert_eq!(st.update_count(), 1);
    }

    #[test]
    fn init_requires_positive_lambda() {
        let x0 = scalar_fm(&[1.0], &[1]);
        assert!(IncrementalState::init_onehot(&x0, 0.0).is_err());
        let empty = DMatrix::<f64>::zeros(3, 0);
        assert!(IncrementalState::init_matrix(&empty, &DMatrix::zeros(0, 0), ClassRegistry::default(), 0.1).is_err());
    }

    #[test]
    fn growth_pads_zero_columns() {
        let x0 = FeatureMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), vec![1, 2], vec![1, 1]).unwrap();
        let mut st = IncrementalState::init_onehot(&x0, 0.5).unwrap();
        let before = st.projection().clone();
        let mut padded = st.clone();
        padded.grow(&[9, 10]);
        assert_eq!(padded.projection().columns(0, 2), before);
        assert!(padded.projection().columns(2, 2).iter().all(|v| *v == 0.0));
        assert_eq!(padded.registry().len(), 4);

        // Bad declarations
        let xp = DMatrix::from_element(2, 1, 1.0);
        assert!(st.update(&xp, &DMatrix::from_element(1, 4, 0.0), &[3]).is_err());
        assert!(st.update(&xp, &DMatrix::from_element(1, 3, 0.0), &[1]).is_err());
        assert!(st.update(&DMatrix::from_element(3, 1, 1.0), &DMatrix::from_element(1, 2, 0.0), &[]).is_err());
        assert_eq!(st.projection(), &before);
    }

    #[test]
    fn zero_updates_equals_batch() {
        let x0 = FeatureMatrix::new(
            DMatrix::from_fn(4, 6, |i, j| ((i * 5 + j * 3) % 7) as f64 - 3.0),
            vec![1, 2, 3, 1, 2, 3],
            vec![1, 1, 1, 2, 2, 2],
        )
        .unwrap();
        let y0 = coding::onehot(x0.ids(), 3).unwrap();
        let st = IncrementalState::init(&x0, &y0, 0.1).unwrap();
        let batch = crate::regression::fit_linear_matrix(x0.data(), &y0.y, 0.1).unwrap().0;
        assert!(linalg::rel_frobenius(st.projection(), &batch) < 1e-10);
    }

    #[test]
    fn path_policy() {
        assert_eq!(choose_path(3, 1000), UpdatePath::RankOne);
        assert_eq!(choose_path(500, 100), UpdatePath::Chunk);
        assert_eq!(choose_path(33, 100_000), UpdatePath::Chunk);
        assert_eq!(choose_path(1, 100), UpdatePath::RankOne);
    }

    #[test]
    fn lift_self_similarity() {
        let anchors = DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.25);
        let lift = KernelLift::new(anchors.clone(), Kernel::rbf(0.7).unwrap()).unwrap();
        let lifted = lift.lift(&anchors).unwrap();
        for i in 0..4 {
            assert_eq!(lifted[(i, i)], 1.0);
        }
        assert_eq!(lifted, lift.lift(&anchors).unwrap());
        assert!(KernelLift::new(DMatrix::zeros(3, 0), Kernel::Linear).is_err());
    }
}
