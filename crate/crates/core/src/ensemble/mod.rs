//! Adaptive switching between three local models and one global model.
//!
//! Training alternates between fine-tuning each local model on the patches it
//! restores best and relabelling the patches. At coding time the encoder signals,
//! per 64x64 patch, which member to use; the decoder dispatches accordingly.

mod bank;
mod features;
mod flags;
mod init;
mod refine;
mod select;

use std::fmt;

pub use bank::{member_seed, pretrain_bank, AsnBank, PretrainPlan, PRETRAIN_FOLDS};
pub use features::{compute_feature_vector, zigzag, zigzag_order, FeatureVector, Projection, REDUCED_DIM};
pub use flags::{flag_overhead_bits, FlagStream, FLAG_BITS, FLAG_MAGIC, FLAG_VERSION};
pub use init::{cluster_features, init_cluster, init_psnr, init_random, kmeans, tercile_labels};
pub use refine::{
    best_member, evaluate_bank, iterate_train, refine_labels, BankEvaluation, IterateConfig, IterationOutcome,
};
pub use select::{decode_dispatch, encode_select_flags, FrameSelection};

use crate::error::{bail, Result};

pub const LOCAL_MODELS: usize = 3;
pub const BANK_SIZE: usize = LOCAL_MODELS + 1;
/// Bank index of the global model.
pub const GLOBAL_INDEX: usize = LOCAL_MODELS;

/// Class of a patch: a local model `0..3`, or the global model `3`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchLabel(u8);

impl PatchLabel {
    pub const GLOBAL: PatchLabel = PatchLabel(GLOBAL_INDEX as u8);

    /// Label of local model `j`.
    ///
    /// # Panics
    /// If `j` is not a local index.
    pub fn local(j: usize) -> Self {
        assert!(j < LOCAL_MODELS, "local label {j} out of range");
        Self(j as u8)
    }

    /// Label of any bank member.
    ///
    /// # Panics
    /// If `j` is not a bank index.
    pub fn member(j: usize) -> Self {
        assert!(j < BANK_SIZE, "bank index {j} out of range");
        Self(j as u8)
    }

    pub fn new(value: u8) -> Result<Self> {
        if value as usize >= BANK_SIZE {
            bail!(Precondition, "label {value} is outside 0..{BANK_SIZE}");
        }
        Ok(Self(value))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_local(self) -> bool {
        (self.0 as usize) < LOCAL_MODELS
    }
}

impl fmt::Display for PatchLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Number of patches carrying each label.
pub fn label_counts(labels: &[PatchLabel]) -> [usize; BANK_SIZE] {
    let mut counts = [0; BANK_SIZE];
    for l in labels {
        counts[l.index()] += 1;
    }
    counts
}
