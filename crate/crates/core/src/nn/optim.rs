use indexmap::IndexMap;

use super::graph::ModelWeights;
use crate::error::{bail, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => bail!(Parse, "unknown optimizer {s:?}"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Mini-batch training schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f32,
    /// Epoch (0-based) from which the learning rate is divided by ten.
    pub lr_decay_epoch: usize,
    /// Number of epochs to run.
    pub end_epoch: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 32, lr: 1e-4, lr_decay_epoch: 20, end_epoch: 40, seed: 0, optimizer: OptimizerKind::Adam }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            bail!(Config, "batch size must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!(Config, "learning rate must be positive, got {}", self.lr);
        }
        // A zero-epoch run is a no-op and carries no schedule.
        if self.end_epoch > 0 && self.lr_decay_epoch >= self.end_epoch {
            bail!(Config, "lr decay epoch {} must precede end epoch {}", self.lr_decay_epoch, self.end_epoch);
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f32 {
        if epoch >= self.lr_decay_epoch {
            self.lr * 0.1
        } else {
            self.lr
        }
    }
}

/// First-order optimizer with per-parameter state keyed by tensor name.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    beta1: f32,
    beta2: f32,
    eps: f32,
    t: i32,
    moments: IndexMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self { kind, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, moments: IndexMap::new() }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies accumulated gradients with learning rate `lr`, then zeroes them.
    pub fn step(&mut self, weights: &mut ModelWeights, lr: f32) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (name, p) in weights.params_mut() {
            let len = p.data().len();
            let g = p.take_grad();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &d) in p.data_mut().iter_mut().zip(&g) {
                        *w -= lr * d;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = self.moments.entry(name.clone()).or_insert_with(|| (vec![0.0; len], vec![0.0; len]));
                    for (((w, &d), m), v) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = self.beta1 * *m + (1.0 - self.beta1) * d;
                        *v = self.beta2 * *v + (1.0 - self.beta2) * d * d;
                        let mhat = *m / bc1;
                        let vhat = *v / bc2;
                        *w -= lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
            let mut g = g;
            g.fill(0.0);
            p.set_grad(g).expect("gradient length preserved");
        }
        weights.bump_step();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, LayerSpec};

    fn scalar_model(w: f32) -> ModelWeights {
        let mut m = ModelWeights::init(Architecture::chain(1, vec![LayerSpec::conv("c", 1, 1, 1)]), 0).unwrap();
        m.params_mut()["c.weight"].data_mut()[0] = w;
        m
    }

    #[test]
    fn zero_grads_leave_weights() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut m = scalar_model(3.0);
            let before = m.clone();
            Optimizer::new(kind).step(&mut m, 0.5);
            assert_eq!(m.params()["c.weight"].data(), before.params()["c.weight"].data());
            assert_eq!(m.step(), 1);
        }
    }

    #[test]
    fn sgd_unit_step() {
        let mut m = scalar_model(3.0);
        m.params_mut()["c.weight"].grad_mut()[0] = 1.0;
        Optimizer::new(OptimizerKind::Sgd).step(&mut m, 1.0);
        assert_eq!(m.params()["c.weight"].data()[0], 2.0);
        assert_eq!(m.params()["c.weight"].grad().unwrap()[0], 0.0);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        for g in [0.37f32, -12.0, 1e-3] {
            let mut m = scalar_model(1.0);
            m.params_mut()["c.weight"].grad_mut()[0] = g;
            Optimizer::new(OptimizerKind::Adam).step(&mut m, 0.01);
            let delta = m.params()["c.weight"].data()[0] - 1.0;
            assert!((delta + 0.01 * g.signum()).abs() < 1e-6, "g={g}: delta {delta}");
        }
    }

    #[test]
    fn schedule() {
        let c = TrainConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.lr_at(19), 1e-4);
        assert!((c.lr_at(20) - 1e-5).abs() < 1e-12);
        let bad = TrainConfig { lr_decay_epoch: 40, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let none = TrainConfig { end_epoch: 0, ..TrainConfig::default() };
        assert!(none.validate().is_ok());
    }
}
