use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::build::{build_model, model_config};
use super::config::ModelConfig;
use super::infer::model_mask;
use crate::dataset::{PatchPair, PATCH_SIZE};
use crate::error::{bail, Result};
use crate::mask::MaskKind;
use crate::nn::ops::mse_loss;
use crate::nn::{ModelWeights, Optimizer, Shape, Tensor, TrainConfig};

const PIXELS: usize = PATCH_SIZE * PATCH_SIZE;

/// Network-scale copies of the patches, converted once per training run.
struct Prepared {
    inputs: Vec<f32>,
    masks: Option<Vec<f32>>,
    targets: Vec<f32>,
}

impl Prepared {
    fn new(data: &[PatchPair], mask: Option<MaskKind>) -> Self {
        let scale = |v: &u8| *v as f32 / 255.0;
        Self {
            inputs: data.iter().flat_map(|p| p.decoded.samples().iter().map(scale)).collect(),
            masks: mask.map(|k| data.iter().flat_map(|p| p.mask(k).values().iter().copied()).collect()),
            targets: data.iter().flat_map(|p| p.original.samples().iter().map(scale)).collect(),
        }
    }

    fn gather(src: &[f32], batch: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(batch.len() * PIXELS);
        for &i in batch {
            data.extend_from_slice(&src[i * PIXELS..(i + 1) * PIXELS]);
        }
        Tensor::from_vec(Shape::new(batch.len(), 1, PATCH_SIZE, PATCH_SIZE), data)
    }
}

/// Mini-batch MSE training; returns the mean training loss of every epoch.
///
/// Patches are reshuffled each epoch from a generator seeded with `cfg.seed`.
pub fn train(model: &mut ModelWeights, data: &[PatchPair], cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        bail!(Precondition, "training set is empty");
    }
    if data.iter().any(|p| p.decoded.width() != PATCH_SIZE || p.decoded.height() != PATCH_SIZE) {
        bail!(Shape, "training patches must be {PATCH_SIZE}x{PATCH_SIZE}");
    }
    let prepared = Prepared::new(data, model_mask(model)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut opt = Optimizer::new(cfg.optimizer);
    let mut losses = Vec::with_capacity(cfg.end_epoch);
    for epoch in 0..cfg.end_epoch {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = Prepared::gather(&prepared.inputs, batch)?;
            let m = match &prepared.masks {
                Some(src) => Some(Prepared::gather(src, batch)?),
                None => None,
            };
            let y = Prepared::gather(&prepared.targets, batch)?;
            let (out, tape) = model.forward_train(&x, m.as_ref())?;
            let (loss, grad) = mse_loss(&out, &y)?;
            if !loss.is_finite() {
                bail!(Numeric, "training loss became {loss} in epoch {epoch}");
            }
            model.backward(tape, &grad, false)?;
            opt.step(model, lr);
            total += loss * batch.len() as f64;
        }
        losses.push(total / data.len() as f64);
    }
    if model.params().values().any(|t| !t.all_finite()) {
        bail!(Numeric, "training produced non-finite weights");
    }
    Ok(losses)
}

/// Builds a fresh model for `config` and trains it.
pub fn train_new(
    config: &ModelConfig,
    seed: u64,
    data: &[PatchPair],
    cfg: &TrainConfig,
) -> Result<(ModelWeights, Vec<f64>)> {
    let mut model = build_model(config, seed)?;
    let losses = train(&mut model, data, cfg)?;
    Ok((model, losses))
}

/// Continues training from `base`, which must have been built for `config`.
pub fn fine_tune_from(
    base: &ModelWeights,
    config: &ModelConfig,
    data: &[PatchPair],
    cfg: &TrainConfig,
) -> Result<(ModelWeights, Vec<f64>)> {
    let base_cfg = model_config(base)?;
    if base_cfg.to_string() != config.to_string() {
        bail!(Config, "cannot fine-tune a {base_cfg} model as {config}");
    }
    let mut model = base.clone();
    let losses = train(&mut model, data, cfg)?;
    Ok((model, losses))
}
