//! Target matrices `Y` (`n × m`) for the three embedding-space codings.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::class_counts;
use crate::{IrsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodingScheme {
    OneHot,
    Fda,
    Random,
}

impl std::str::FromStr for CodingScheme {
    type Err = IrsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "onehot" => Ok(CodingScheme::OneHot),
            "fda" => Ok(CodingScheme::Fda),
            "random" => Ok(CodingScheme::Random),
            other => Err(IrsError::invalid(format!("unknown coding {other:?}"))),
        }
    }
}

/// Identity label to target column, in registration order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<u32>", into = "Vec<u32>")]
pub struct ClassRegistry {
    labels: Vec<u32>,
    index: HashMap<u32, usize>,
}

impl From<Vec<u32>> for ClassRegistry {
    fn from(labels: Vec<u32>) -> Self {
        let mut reg = ClassRegistry::default();
        for l in labels {
            reg.register(l);
        }
        reg
    }
}

impl From<ClassRegistry> for Vec<u32> {
    fn from(reg: ClassRegistry) -> Self {
        reg.labels
    }
}

impl ClassRegistry {
    /// Registers `label` if unseen and returns its column.
    pub fn register(&mut self, label: u32) -> usize {
        if let Some(&c) = self.index.get(&label) {
            return c;
        }
        let c = self.labels.len();
        self.labels.push(label);
        self.index.insert(label, c);
        c
    }

    pub fn column(&self, label: u32) -> Option<usize> {
        self.index.get(&label).copied()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels in `ids` not yet registered, first-appearance order, deduplicated.
    pub fn unseen(&self, ids: &[u32]) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::new();
        for &id in ids {
            if !self.index.contains_key(&id) && !out.contains(&id) {
                out.push(id);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetCoding {
    pub y: DMatrix<f64>,
    pub registry: ClassRegistry,
    pub scheme: CodingScheme,
    pub seed: Option<u64>,
}

impl TargetCoding {
    pub fn rows(&self) -> usize {
        self.y.nrows()
    }

    pub fn width(&self) -> usize {
        self.y.ncols()
    }
}

/// Builds `Y` for `scheme`; `m` defaults to the number of distinct classes.
pub fn encode(scheme: CodingScheme, ids: &[u32], m: Option<usize>, seed: u64) -> Result<TargetCoding> {
    let registry = ClassRegistry::from(ids.to_vec());
    let m = m.unwrap_or(registry.len());
    match scheme {
        CodingScheme::OneHot => onehot(ids, m),
        CodingScheme::Fda => fda(ids, m),
        CodingScheme::Random => random_coding(ids, m, seed),
    }
}

fn indicator(ids: &[u32], m: usize, value: impl Fn(u32) -> f64) -> Result<(DMatrix<f64>, ClassRegistry)> {
    let registry = ClassRegistry::from(ids.to_vec());
    if m < registry.len() {
        return Err(IrsError::invalid(format!(
            "m = {m} is smaller than the {} distinct classes",
            registry.len()
        )));
    }
    let mut y = DMatrix::zeros(ids.len(), m);
    for (i, &id) in ids.iter().enumerate() {
        y[(i, registry.column(id).unwrap())] = value(id);
    }
    Ok((y, registry))
}

/// One unit axis per identity.
pub fn onehot(ids: &[u32], m: usize) -> Result<TargetCoding> {
    let (y, registry) = indicator(ids, m, |_| 1.0)?;
    Ok(TargetCoding {
        y,
        registry,
        scheme: CodingScheme::OneHot,
        seed: None,
    })
}

/// Axis per identity scaled by `1/√n_i`, `n_i` the identity's sample count.
pub fn fda(ids: &[u32], m: usize) -> Result<TargetCoding> {
    let counts = class_counts(ids);
    let (y, registry) = indicator(ids, m, |id| 1.0 / (counts[&id] as f64).sqrt())?;
    Ok(TargetCoding {
        y,
        registry,
        scheme: CodingScheme::Fda,
        seed: None,
    })
}

/// One uniform `[0,1)^m` vector per identity, shared by all of its samples.
/// Vectors are drawn in first-appearance order of the identities.
pub fn random_coding(ids: &[u32], m: usize, seed: u64) -> Result<TargetCoding> {
    if m == 0 {
        return Err(IrsError::invalid("random coding needs m >= 1"));
    }
    let registry = ClassRegistry::from(ids.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes: Vec<Vec<f64>> = (0..registry.len())
        .map(|_| (0..m).map(|_| rng.random::<f64>()).collect())
        .collect();
    let y = DMatrix::from_fn(ids.len(), m, |i, j| codes[registry.column(ids[i]).unwrap()][j]);
    Ok(TargetCoding {
        y,
        registry,
        scheme: CodingScheme::Random,
        seed: Some(seed),
    })
}
