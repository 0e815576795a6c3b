use rayon::prelude::*;

use super::bank::AsnBank;
use super::{PatchLabel, BANK_SIZE, LOCAL_MODELS};
use crate::codec::FramePlane;
use crate::dataset::PatchPair;
use crate::error::{bail, Result};
use crate::metrics::psnr;
use crate::models::{enhance_pairs, train};
use crate::nn::TrainConfig;

/// Index of the highest score; ties go to the lowest index.
pub fn best_member(scores: &[f64; BANK_SIZE]) -> usize {
    let mut best = 0;
    for j in 1..BANK_SIZE {
        if scores[j] > scores[best] {
            best = j;
        }
    }
    best
}

/// Every bank member's output and PSNR on a set of patches.
#[derive(Clone, Debug)]
pub struct BankEvaluation {
    /// PSNR of each decoded patch against its original.
    pub baseline: Vec<f64>,
    /// Per patch, the PSNR of each member's output.
    pub member_psnr: Vec<[f64; BANK_SIZE]>,
    /// Per member, the restored patches.
    pub outputs: Vec<Vec<FramePlane>>,
}

impl BankEvaluation {
    pub fn len(&self) -> usize {
        self.baseline.len()
    }

    pub fn is_empty(&self) -> bool {
        self.baseline.is_empty()
    }

    /// Best member per patch.
    pub fn labels(&self) -> Vec<PatchLabel> {
        self.member_psnr.iter().map(|s| PatchLabel::member(best_member(s))).collect()
    }

    /// PSNR of the selected output per patch.
    pub fn selected_psnr(&self) -> Vec<f64> {
        self.member_psnr.iter().map(|s| s[best_member(s)]).collect()
    }

    /// Mean per-patch PSNR gain of the oracle-switched ensemble.
    pub fn oracle_gain(&self) -> f64 {
        mean_gain(&self.selected_psnr(), &self.baseline)
    }

    /// Mean per-patch PSNR gain of member `j` alone.
    pub fn member_gain(&self, j: usize) -> f64 {
        let scores: Vec<f64> = self.member_psnr.iter().map(|s| s[j]).collect();
        mean_gain(&scores, &self.baseline)
    }
}

fn mean_gain(scores: &[f64], baseline: &[f64]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().zip(baseline).map(|(s, b)| s - b).sum::<f64>() / scores.len() as f64
}

pub fn evaluate_bank(bank: &AsnBank, pairs: &[PatchPair]) -> Result<BankEvaluation> {
    let outputs: Vec<Vec<FramePlane>> =
        bank.members().into_iter().map(|m| enhance_pairs(m, pairs)).collect::<Result<_>>()?;
    let baseline: Vec<f64> = pairs.par_iter().map(|p| psnr(&p.decoded, &p.original)).collect::<Result<_>>()?;
    let member_psnr = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut s = [0.0; BANK_SIZE];
            for (j, out) in outputs.iter().enumerate() {
                s[j] = psnr(&out[i], &p.original)?;
            }
            Ok(s)
        })
        .collect::<Result<_>>()?;
    Ok(BankEvaluation { baseline, member_psnr, outputs })
}

/// Relabels each patch with the bank member that restores it best.
pub fn refine_labels(bank: &AsnBank, pairs: &[PatchPair]) -> Result<Vec<PatchLabel>> {
    Ok(evaluate_bank(bank, pairs)?.labels())
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterateConfig {
    pub max_iters: usize,
    /// The loop stops once successive validation gains differ by less than this (dB).
    pub stall_eps: f64,
    /// Fine-tuning schedule applied to each local model per iteration.
    pub train: TrainConfig,
}

impl Default for IterateConfig {
    fn default() -> Self {
        Self { max_iters: 10, stall_eps: 0.002, train: TrainConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationOutcome {
    /// Validation gain of the switched ensemble before and after each iteration.
    pub gains: Vec<f64>,
    /// Validation gain of the global model alone.
    pub global_gain: f64,
    /// Training labels after the last refinement.
    pub labels: Vec<PatchLabel>,
}

/// Alternates local fine-tuning with label refinement; the global model stays fixed.
///
/// A local model whose class is empty skips fine-tuning for that iteration.
pub fn iterate_train(
    bank: &mut AsnBank,
    train_set: &[PatchPair],
    labels: Vec<PatchLabel>,
    validation: &[PatchPair],
    cfg: &IterateConfig,
) -> Result<IterationOutcome> {
    if labels.len() != train_set.len() {
        bail!(Precondition, "{} labels for {} training patches", labels.len(), train_set.len());
    }
    if validation.is_empty() {
        bail!(Precondition, "validation set is empty");
    }
    if cfg.stall_eps.is_nan() || cfg.stall_eps < 0.0 {
        bail!(Config, "stall threshold must be non-negative");
    }
    let initial = evaluate_bank(bank, validation)?;
    let global_gain = initial.member_gain(super::GLOBAL_INDEX);
    let mut gains = vec![initial.oracle_gain()];
    let mut labels = labels;
    for _ in 0..cfg.max_iters {
        let iteration = bank.iteration as u64;
        let subsets: Vec<Vec<PatchPair>> = (0..LOCAL_MODELS)
            .map(|j| train_set.iter().zip(&labels).filter(|(_, l)| l.index() == j).map(|(p, _)| p.clone()).collect())
            .collect();
        bank.locals_mut().par_iter_mut().zip(subsets).enumerate().try_for_each(
            |(j, (model, subset))| -> Result<()> {
                if subset.is_empty() {
                    return Ok(());
                }
                let run = TrainConfig {
                    seed: cfg.train.seed.wrapping_add(iteration * BANK_SIZE as u64 + j as u64),
                    ..cfg.train.clone()
                };
                train(model, &subset, &run)?;
                Ok(())
            },
        )?;
        bank.iteration += 1;
        labels = refine_labels(bank, train_set)?;
        let gain = evaluate_bank(bank, validation)?.oracle_gain();
        let prev = *gains.last().expect("curve starts with the pre-trained gain");
        gains.push(gain);
        if (gain - prev).abs() < cfg.stall_eps {
            break;
        }
    }
    Ok(IterationOutcome { gains, global_gain, labels })
}
