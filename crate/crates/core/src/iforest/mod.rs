//! Isolation Forest one-class classifier.
//!
//! Each tree is grown on a subsample of at most `subsample_size` rows drawn
//! without replacement. A node splits on a dimension chosen uniformly among
//! the dimensions whose values are not constant in the node, at a value drawn
//! uniformly in `[min, max)`; rows with `x <= split` go left. A node becomes
//! external when it holds at most one row, reaches `ceil(log2(psi))` depth,
//! or has no splittable dimension.
//!
//! The anomaly score is `s = 2^(-E[h(x)] / c(psi))` and the normality score
//! used for decisions is `g = 0.5 - s`: a flow is attributed to the model iff
//! `g >= threshold`.

mod artifact;
mod tree;

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use artifact::{decode_artifact, encode_artifact, ArtifactError, ModelArtifact, FORMAT_VERSION};
pub use tree::{IsolationTree, Node};

const EULER_GAMMA: f64 = 0.577_215_664_9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForestError {
    #[error("insufficient-data: empty training matrix")]
    InsufficientData,
    #[error("row {row} has dimension {found}, expected {expected}")]
    DimensionMismatch { row: usize, expected: usize, found: usize },
    #[error("row {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
}

/// Harmonic number `H(i) = 1 + 1/2 + ... + 1/i`. Summed directly below 16,
/// otherwise taken from its asymptotic expansion (error under 1e-12).
pub fn harmonic(i: usize) -> f64 {
    if i < 16 {
        return (1..=i).rev().map(|k| 1.0 / k as f64).sum();
    }
    let x = i as f64;
    let x2 = x * x;
    libm::log(x) + EULER_GAMMA + 1.0 / (2.0 * x) - 1.0 / (12.0 * x2) + 1.0 / (120.0 * x2 * x2)
        - 1.0 / (252.0 * x2 * x2 * x2)
}

/// Average path length of an unsuccessful BST search over `n` points,
/// `c(n) = 2 H(n-1) - 2 (n-1) / n`; 0 for `n <= 1`.
pub fn c_factor(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    2.0 * harmonic(n - 1) - 2.0 * (n - 1) as f64 / n as f64
}

/// Height limit `ceil(log2(psi))`; 0 for `psi <= 1`.
pub fn height_limit(psi: usize) -> u32 {
    if psi <= 1 {
        0
    } else {
        libm::ceil(libm::log2(psi as f64)) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub subsample_size: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            subsample_size: 256,
            seed: 0,
        }
    }
}

// splitmix64 finalizer
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of tree `index`: splitmix64 of the master seed advanced by
/// `index + 1` golden-ratio increments. Each tree then draws from a
/// ChaCha8 stream seeded with it.
pub fn tree_seed(master_seed: u64, index: usize) -> u64 {
    mix64(master_seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForest {
    trees: Vec<IsolationTree>,
    subsample_size: usize,
    master_seed: u64,
    dimension: usize,
}

impl IsolationForest {
    pub fn train<V: AsRef<[f64]>>(rows: &[V], params: &ForestParams) -> Result<Self, ForestError> {
        if params.n_trees == 0 {
            return Err(ForestError::InvalidParams("n_trees must be positive"));
        }
        if params.subsample_size == 0 {
            return Err(ForestError::InvalidParams("subsample_size must be positive"));
        }
        let first = rows.first().ok_or(ForestError::InsufficientData)?;
        let dimension = first.as_ref().len();
        for (row, v) in rows.iter().enumerate() {
            let v = v.as_ref();
            if v.len() != dimension {
                return Err(ForestError::DimensionMismatch {
                    row,
                    expected: dimension,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(ForestError::NonFinite(row));
            }
        }

        let psi = params.subsample_size.min(rows.len());
        let limit = height_limit(psi);
        let trees = (0..params.n_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(params.seed, t));
                let sample = rand::seq::index::sample(&mut rng, rows.len(), psi).into_vec();
                IsolationTree::grow(rows, sample, limit, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            subsample_size: psi,
            master_seed: params.seed,
            dimension,
        })
    }

    pub(crate) fn from_parts(
        trees: Vec<IsolationTree>,
        subsample_size: usize,
        master_seed: u64,
        dimension: usize,
    ) -> Self {
        Self {
            trees,
            subsample_size,
            master_seed,
            dimension,
        }
    }

    pub fn trees(&self) -> &[IsolationTree] {
        &self.trees
    }

    /// Effective subsample size, `min(psi, training rows)`.
    pub fn subsample_size(&self) -> usize {
        self.subsample_size
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dimension, "query dimension");
        let total: f64 = self.trees.iter().map(|t| t.path_length(x)).sum();
        total / self.trees.len() as f64
    }

    /// `s in (0, 1]`; exactly 0.5 when `c(psi) = 0`.
    ///
    /// Panics if `x.len() != self.dimension()`.
    pub fn anomaly_score(&self, x: &[f64]) -> f64 {
        let c = c_factor(self.subsample_size);
        let e = self.mean_path_length(x);
        if c == 0.0 {
            return 0.5;
        }
        libm::exp2(-e / c)
    }

    /// `g = 0.5 - s`, in `[-0.5, 0.5)`. Higher means more typical of the model.
    pub fn normality_score(&self, x: &[f64]) -> f64 {
        0.5 - self.anomaly_score(x)
    }
}
