use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use asn_core::dataset::{Dataset, PatchPair, Split};
use asn_core::ensemble::{
    init_cluster, init_psnr, init_random, iterate_train, label_counts, pretrain_bank, IterateConfig,
};
use asn_core::metrics::{format_gain_curves, psnr};
use asn_core::models::{build_model, enhance_pairs, fine_tune_from, train, ModelConfig};
use asn_core::nn::{load_model, save_model, OptimizerKind, TrainConfig};
use clap::Args;

use crate::settings::{prepare_out_dir, require_dir, require_file, Settings};

const DEFAULT_MODEL: &str = "deep blocks=4 1-in";

/// Options shared by every command that trains.
#[derive(Args, Debug)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Epoch from which the learning rate is divided by ten (default: half of the epochs).
    #[arg(long)]
    pub decay_epoch: Option<usize>,
    /// `adam` or `sgd`.
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
}

fn schedule(a: &ScheduleArgs, default_epochs: usize, seed: u64, s: &mut Settings) -> Result<TrainConfig> {
    let defaults = TrainConfig::default();
    let end_epoch = s.value("epochs", a.epochs, default_epochs)?;
    let cfg = TrainConfig {
        batch_size: s.value("batch", a.batch, defaults.batch_size)?,
        lr: s.value("lr", a.lr, defaults.lr)?,
        lr_decay_epoch: s.value("decay_epoch", a.decay_epoch, end_epoch / 2)?,
        end_epoch,
        seed,
        optimizer: s.value("optimizer", a.optimizer, OptimizerKind::Adam)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Args, Debug)]
pub struct TrainSingleArgs {
    /// Dataset directory written by `asn dataset`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Model description, e.g. `deep blocks=4 2-in+MM+AF` or `shallow 1-in`.
    #[arg(long)]
    pub model: Option<ModelConfig>,
    /// Fine-tune from this model file instead of starting from scratch.
    #[arg(long)]
    pub init_from: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

fn load_splits(dir: &std::path::Path) -> Result<(Vec<PatchPair>, Vec<PatchPair>)> {
    let data = Dataset::load(dir).with_context(|| format!("loading dataset from {}", dir.display()))?;
    let train = data.subset(Split::Train);
    let val = data.subset(Split::Validation);
    if train.is_empty() || val.is_empty() {
        bail!("dataset {} needs both training and validation patches", dir.display());
    }
    Ok((train, val))
}

fn validation_gains(model: &asn_core::nn::ModelWeights, val: &[PatchPair]) -> Result<Vec<f64>> {
    enhance_pairs(model, val)?
        .iter()
        .zip(val)
        .map(|(o, p)| Ok(psnr(o, &p.original)? - psnr(&p.decoded, &p.original)?))
        .collect()
}

pub fn run_train_single(a: TrainSingleArgs, seed: u64, mut s: Settings) -> Result<()> {
    let data = s.path("data", a.data)?;
    let out = s.path("out", a.out)?;
    let config = s.value("model", a.model, DEFAULT_MODEL.parse()?)?;
    let init_from = s.optional_path("init_from", a.init_from)?;
    let cfg = schedule(&a.schedule, 40, seed, &mut s)?;
    require_dir(&data)?;
    if let Some(p) = &init_from {
        require_file(p)?;
    }
    prepare_out_dir(&out)?;

    let (train_set, val) = load_splits(&data)?;
    let (model, losses) = match &init_from {
        Some(p) => fine_tune_from(&load_model(p)?, &config, &train_set, &cfg)?,
        None => {
            let mut model = build_model(&config, seed)?;
            let losses = train(&mut model, &train_set, &cfg)?;
            (model, losses)
        }
    };
    save_model(out.join("model.asnm"), &model)?;
    let mut loss_log = String::from("epoch\tloss\n");
    for (e, l) in losses.iter().enumerate() {
        let _ = writeln!(loss_log, "{e}\t{l:.8}");
    }
    fs::write(out.join("loss.tsv"), loss_log)?;
    let gains = validation_gains(&model, &val)?;
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    let improved = gains.iter().filter(|&&g| g >= 0.0).count() as f64 / gains.len() as f64;
    fs::write(
        out.join("summary.txt"),
        format!(
            "model {config}\nparameters {}\ntrain_patches {}\nval_patches {}\nmean_delta_psnr {mean:.6}\nimproved_fraction {improved:.4}\n",
            model.param_count(),
            train_set.len(),
            val.len()
        ),
    )?;
    s.write(&out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMethod {
    Random,
    Psnr,
    Cluster,
}

impl std::str::FromStr for InitMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Self::Random),
            "psnr" => Ok(Self::Psnr),
            "cluster" => Ok(Self::Cluster),
            _ => Err(format!("unknown init method `{s}` (random, psnr, cluster)")),
        }
    }
}

impl std::fmt::Display for InitMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Psnr => "psnr",
            Self::Cluster => "cluster",
        })
    }
}

#[derive(Args, Debug)]
pub struct TrainAsnArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelConfig>,
    /// Initial labelling: `random`, `psnr` or `cluster`.
    #[arg(long)]
    pub init: Option<InitMethod>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Stop once successive validation gains differ by less than this (dB).
    #[arg(long)]
    pub stall_eps: Option<f64>,
    /// Fine-tuning epochs of each local model per iteration.
    #[arg(long)]
    pub iter_epochs: Option<usize>,
    /// Fine-tuning learning rate per iteration (the last fine-tuning epoch runs at a tenth of it).
    #[arg(long)]
    pub iter_lr: Option<f32>,
    /// Pre-training schedule.
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

pub fn run_train_asn(a: TrainAsnArgs, seed: u64, mut s: Settings) -> Result<()> {
    let data = s.path("data", a.data)?;
    let out = s.path("out", a.out)?;
    let config = s.value("model", a.model, DEFAULT_MODEL.parse()?)?;
    let init = s.value("init", a.init, InitMethod::Cluster)?;
    let max_iters = s.value("max_iters", a.max_iters, 10usize)?;
    let stall_eps = s.value("stall_eps", a.stall_eps, 0.002f64)?;
    let pretrain = schedule(&a.schedule, 10, seed, &mut s)?;
    let iter_epochs = s.value("iter_epochs", a.iter_epochs, 1usize)?;
    let iter_train = TrainConfig {
        lr: s.value("iter_lr", a.iter_lr, pretrain.lr)?,
        end_epoch: iter_epochs,
        lr_decay_epoch: iter_epochs.saturating_sub(1),
        ..pretrain.clone()
    };
    iter_train.validate()?;
    require_dir(&data)?;
    prepare_out_dir(&out)?;

    let (train_set, val) = load_splits(&data)?;
    let mut bank = pretrain_bank(&train_set, &config, &pretrain, seed)?;
    let labels = match init {
        InitMethod::Random => init_random(train_set.len(), seed)?,
        InitMethod::Psnr => init_psnr(&train_set)?,
        InitMethod::Cluster => init_cluster(&train_set, seed)?,
    };
    let initial_counts = label_counts(&labels);
    let icfg = IterateConfig { max_iters, stall_eps, train: iter_train };
    let outcome = iterate_train(&mut bank, &train_set, labels, &val, &icfg)?;
    bank.save(out.join("bank"))?;

    let global = vec![outcome.global_gain; outcome.gains.len()];
    let curves = format_gain_curves(&[(format!("asn_{init}"), outcome.gains.clone()), ("global".into(), global)]);
    fs::write(out.join("gains.dat"), curves)?;
    let mut label_log = String::from("patch\tlabel\n");
    for (i, l) in outcome.labels.iter().enumerate() {
        let _ = writeln!(label_log, "{i}\t{l}");
    }
    fs::write(out.join("labels.tsv"), label_log)?;
    let final_counts = label_counts(&outcome.labels);
    let fmt_counts = |c: [usize; 4]| c.map(|v| v.to_string()).join(" ");
    fs::write(
        out.join("summary.txt"),
        format!(
            "model {config}\ninit {init}\niterations {}\ninitial_labels {}\nfinal_labels {}\nglobal_gain {:.6}\nfinal_gain {:.6}\n",
            bank.iteration,
            fmt_counts(initial_counts),
            fmt_counts(final_counts),
            outcome.global_gain,
            outcome.gains.last().copied().unwrap_or(0.0),
        ),
    )?;
    s.write(&out)
}
