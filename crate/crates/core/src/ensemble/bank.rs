use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{BANK_SIZE, GLOBAL_INDEX, LOCAL_MODELS};
use crate::dataset::PatchPair;
use crate::error::{bail, Error, Result};
use crate::mask::MaskKind;
use crate::models::{build_model, model_mask, train, ModelConfig};
use crate::nn::{load_model, save_model, ModelWeights, TrainConfig};

pub const PRETRAIN_FOLDS: usize = 5;
const MANIFEST_FILE: &str = "bank.txt";

/// Three local models plus the global model, with the refinement iteration count.
#[derive(Clone, Debug, PartialEq)]
pub struct AsnBank {
    locals: [ModelWeights; LOCAL_MODELS],
    global: ModelWeights,
    pub iteration: usize,
    pub seed: u64,
}

fn member_file(j: usize) -> String {
    if j == GLOBAL_INDEX {
        "global.asnm".into()
    } else {
        format!("local{j}.asnm")
    }
}

impl AsnBank {
    /// Assembles a bank; all members must consume the same inputs.
    pub fn new(locals: [ModelWeights; LOCAL_MODELS], global: ModelWeights, seed: u64) -> Result<Self> {
        let fusion = global.architecture().fusion;
        let mask = model_mask(&global)?;
        for (j, m) in locals.iter().enumerate() {
            if m.architecture().fusion != fusion || model_mask(m)? != mask {
                bail!(Config, "local model {j} does not share the global model's input contract");
            }
        }
        Ok(Self { locals, global, iteration: 0, seed })
    }

    /// Member `j`: locals are `0..3`, the global model is `3`.
    pub fn member(&self, j: usize) -> &ModelWeights {
        if j == GLOBAL_INDEX {
            &self.global
        } else {
            &self.locals[j]
        }
    }

    pub fn members(&self) -> [&ModelWeights; BANK_SIZE] {
        [&self.locals[0], &self.locals[1], &self.locals[2], &self.global]
    }

    pub fn global(&self) -> &ModelWeights {
        &self.global
    }

    pub fn locals_mut(&mut self) -> &mut [ModelWeights; LOCAL_MODELS] {
        &mut self.locals
    }

    pub fn mask_kind(&self) -> Result<Option<MaskKind>> {
        model_mask(&self.global)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (j, m) in self.members().into_iter().enumerate() {
            save_model(dir.join(member_file(j)), m)?;
        }
        let manifest =
            format!("iteration {}\nseed {}\nconfig {}\n", self.iteration, self.seed, self.global.architecture().config);
        fs::write(dir.join(MANIFEST_FILE), manifest)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let mut iteration = None;
        let mut seed = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line.split_once(' ').unwrap_or((line, ""));
            let parse =
                |v: &str| v.trim().parse::<u64>().map_err(|_| Error::Parse(format!("bad bank manifest line `{line}`")));
            match key {
                "iteration" => iteration = Some(parse(value)? as usize),
                "seed" => seed = Some(parse(value)?),
                "config" => {}
                _ => bail!(Parse, "unknown bank manifest key `{key}`"),
            }
        }
        let (Some(iteration), Some(seed)) = (iteration, seed) else {
            bail!(Parse, "bank manifest lacks iteration or seed");
        };
        let load = |j: usize| load_model(dir.join(member_file(j)));
        let mut bank = Self::new([load(0)?, load(1)?, load(2)?], load(GLOBAL_INDEX)?, seed)?;
        bank.iteration = iteration;
        Ok(bank)
    }
}

/// Seeded five-way split of the training set and the three folds used for the locals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PretrainPlan {
    pub folds: Vec<Vec<usize>>,
    pub chosen: [usize; LOCAL_MODELS],
}

impl PretrainPlan {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n < PRETRAIN_FOLDS {
            bail!(Precondition, "pre-training needs at least {PRETRAIN_FOLDS} patches, got {n}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let (base, extra) = (n / PRETRAIN_FOLDS, n % PRETRAIN_FOLDS);
        let mut folds = Vec::with_capacity(PRETRAIN_FOLDS);
        let mut start = 0;
        for f in 0..PRETRAIN_FOLDS {
            let len = base + usize::from(f < extra);
            folds.push(order[start..start + len].to_vec());
            start += len;
        }
        let picked = index::sample(&mut rng, PRETRAIN_FOLDS, LOCAL_MODELS).into_vec();
        Ok(Self { folds, chosen: [picked[0], picked[1], picked[2]] })
    }

    /// Patch indices the local model `j` is pre-trained on.
    pub fn local_fold(&self, j: usize) -> &[usize] {
        &self.folds[self.chosen[j]]
    }
}

/// Initialisation seed of bank member `j`.
pub fn member_seed(seed: u64, j: usize) -> u64 {
    seed.wrapping_mul(BANK_SIZE as u64 + 1).wrapping_add(j as u64)
}

/// Trains each local model on its own fold and the global model on all of `data`.
pub fn pretrain_bank(data: &[PatchPair], config: &ModelConfig, cfg: &TrainConfig, seed: u64) -> Result<AsnBank> {
    let plan = PretrainPlan::new(data.len(), seed)?;
    let mut models: Vec<ModelWeights> = (0..BANK_SIZE)
        .into_par_iter()
        .map(|j| {
            let subset: Vec<PatchPair> = if j == GLOBAL_INDEX {
                data.to_vec()
            } else {
                plan.local_fold(j).iter().map(|&i| data[i].clone()).collect()
            };
            let mut model = build_model(config, member_seed(seed, j))?;
            let run = TrainConfig { seed: cfg.seed.wrapping_add(j as u64), ..cfg.clone() };
            train(&mut model, &subset, &run)?;
            Ok(model)
        })
        .collect::<Result<_>>()?;
    let global = models.pop().expect("bank has a global model");
    let locals: [ModelWeights; LOCAL_MODELS] = models.try_into().expect("bank has three local models");
    AsnBank::new(locals, global, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Depth, FusionStrategy};

    #[test]
    fn plan_folds() {
        for n in [5, 17, 103] {
            let p = PretrainPlan::new(n, 3).unwrap();
            let sizes: Vec<usize> = p.folds.iter().map(Vec::len).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut all: Vec<usize> = p.folds.concat();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            let mut chosen = p.chosen.to_vec();
            chosen.sort_unstable();
            chosen.dedup();
            assert_eq!(chosen.len(), 3);
            assert!(chosen.iter().all(|&c| c < 5));
            assert_eq!(p, PretrainPlan::new(n, 3).unwrap());
        }
        assert!(PretrainPlan::new(4, 0).is_err());
    }

    #[test]
    fn plans_vary_with_seed() {
        let plans: Vec<PretrainPlan> = (0..8).map(|s| PretrainPlan::new(50, s).unwrap()).collect();
        assert!(plans.iter().any(|p| *p != plans[0]));
    }

    #[test]
    fn bank_requires_shared_inputs() {
        let plain = build_model(&ModelConfig::single_input(Depth::Shallow), 0).unwrap();
        let masked =
            build_model(&ModelConfig::two_input(Depth::Shallow, MaskKind::Mean, FusionStrategy::Cef), 0).unwrap();
        assert!(AsnBank::new([plain.clone(), plain.clone(), masked], plain.clone(), 0).is_err());
        assert!(AsnBank::new([plain.clone(), plain.clone(), plain.clone()], plain, 0).is_ok());
    }

    #[test]
    fn bank_directory_roundtrip() {
        let cfg = ModelConfig::single_input(Depth::Shallow);
        let m = |s| build_model(&cfg, s).unwrap();
        let mut bank = AsnBank::new([m(1), m(2), m(3)], m(4), 9).unwrap();
        bank.iteration = 4;
        let dir = tempfile::tempdir().unwrap();
        bank.save(dir.path()).unwrap();
        for f in ["global.asnm", "local0.asnm", "local1.asnm", "local2.asnm", "bank.txt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(AsnBank::load(dir.path()).unwrap(), bank);
        fs::write(dir.path().join("bank.txt"), "iteration x\nseed 1\n").unwrap();
        assert!(AsnBank::load(dir.path()).is_err());
    }
}
