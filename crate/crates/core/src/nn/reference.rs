//! Naive f64 evaluation of an [`Architecture`], independent of the optimized kernels.
//!
//! Used as the numeric side of gradient checks and as a forward-pass oracle in tests.

use std::collections::HashMap;

use super::graph::{Architecture, Fusion, LayerSpec, ModelWeights};
use super::ops::BN_EPS;
use super::tensor::Shape;
use crate::error::{bail, Error, Result};

/// Dense f64 activations in NCHW order.
#[derive(Clone, Debug)]
pub struct RefTensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

/// Parameter and buffer values by name.
pub type RefParams = HashMap<String, Vec<f64>>;

pub fn params_from_weights(w: &ModelWeights) -> RefParams {
    w.named_tensors().map(|(n, t)| (n.clone(), t.data().iter().map(|&v| v as f64).collect())).collect()
}

/// Result of a reference pass: output plus the sign pattern of every ReLU input.
pub struct RefOutput {
    pub output: RefTensor,
    pub relu_pattern: Vec<bool>,
}

struct Ctx<'a> {
    params: &'a RefParams,
    batch_stats: bool,
    relu_pattern: Vec<bool>,
}

impl Ctx<'_> {
    fn get(&self, name: &str) -> Result<&[f64]> {
        self.params
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("reference: missing tensor {name}")))
    }

    fn conv(&self, x: &RefTensor, name: &str, cout: usize, k: usize) -> Result<RefTensor> {
        let w = self.get(&format!("{name}.weight"))?;
        let b = self.get(&format!("{name}.bias"))?;
        let s = x.shape;
        if w.len() != cout * s.c * k * k {
            bail!(Shape, "reference conv {name}: weight size mismatch");
        }
        let p = (k / 2) as isize;
        let os = Shape::new(s.n, cout, s.h, s.w);
        let mut out = vec![0.0; os.len()];
        for n in 0..s.n {
            for co in 0..cout {
                for y in 0..s.h {
                    for xx in 0..s.w {
                        let mut acc = b[co];
                        for ci in 0..s.c {
                            for ky in 0..k {
                                let sy = y as isize + ky as isize - p;
                                if sy < 0 || sy >= s.h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let sx = xx as isize + kx as isize - p;
                                    if sx < 0 || sx >= s.w as isize {
                                        continue;
                                    }
                                    acc += x.data[((n * s.c + ci) * s.h + sy as usize) * s.w + sx as usize]
                                        * w[((co * s.c + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                        out[((n * cout + co) * s.h + y) * s.w + xx] = acc;
                    }
                }
            }
        }
        Ok(RefTensor { shape: os, data: out })
    }

    fn batchnorm(&self, x: &RefTensor, name: &str) -> Result<RefTensor> {
        let gamma = self.get(&format!("{name}.gamma"))?;
        let beta = self.get(&format!("{name}.beta"))?;
        let s = x.shape;
        let hw = s.h * s.w;
        let mut out = x.clone();
        for c in 0..s.c {
            let idx = |n: usize, j: usize| (n * s.c + c) * hw + j;
            let (mean, var) = if self.batch_stats {
                let m = (s.n * hw) as f64;
                let mean =
                    (0..s.n).flat_map(|n| (0..hw).map(move |j| (n, j))).map(|(n, j)| x.data[idx(n, j)]).sum::<f64>()
                        / m;
                let var = (0..s.n)
                    .flat_map(|n| (0..hw).map(move |j| (n, j)))
                    .map(|(n, j)| (x.data[idx(n, j)] - mean).powi(2))
                    .sum::<f64>()
                    / m;
                (mean, var)
            } else {
                (self.get(&format!("{name}.running_mean"))?[c], self.get(&format!("{name}.running_var"))?[c])
            };
            let inv = 1.0 / (var + BN_EPS as f64).sqrt();
            for n in 0..s.n {
                for j in 0..hw {
                    out.data[idx(n, j)] = gamma[c] * (x.data[idx(n, j)] - mean) * inv + beta[c];
                }
            }
        }
        Ok(out)
    }

    fn run(&mut self, layers: &[LayerSpec], mut x: RefTensor) -> Result<RefTensor> {
        for l in layers {
            x = match l {
                LayerSpec::Conv { name, out_ch, kernel, .. } => self.conv(&x, name, *out_ch, *kernel)?,
                LayerSpec::Relu => {
                    self.relu_pattern.extend(x.data.iter().map(|&v| v > 0.0));
                    for v in &mut x.data {
                        *v = v.max(0.0);
                    }
                    x
                }
                LayerSpec::BatchNorm { name, .. } => self.batchnorm(&x, name)?,
                LayerSpec::ResidualBlock { name, channels } => {
                    let c = *channels;
                    let mut y = self.conv(&x, &format!("{name}.conv1"), c, 3)?;
                    y = self.batchnorm(&y, &format!("{name}.bn1"))?;
                    self.relu_pattern.extend(y.data.iter().map(|&v| v > 0.0));
                    for v in &mut y.data {
                        *v = v.max(0.0);
                    }
                    y = self.conv(&y, &format!("{name}.conv2"), c, 3)?;
                    y = self.batchnorm(&y, &format!("{name}.bn2"))?;
                    for (a, b) in y.data.iter_mut().zip(&x.data) {
                        *a += b;
                    }
                    y
                }
            };
        }
        Ok(x)
    }
}

fn concat(a: &RefTensor, b: &RefTensor) -> RefTensor {
    let (sa, sb) = (a.shape, b.shape);
    let shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut data = Vec::with_capacity(shape.len());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data[n * sa.item()..(n + 1) * sa.item()]);
        data.extend_from_slice(&b.data[n * sb.item()..(n + 1) * sb.item()]);
    }
    RefTensor { shape, data }
}

/// Evaluates `arch`. `batch_stats` selects training-mode batch normalization.
pub fn forward(
    arch: &Architecture,
    params: &RefParams,
    frame: &RefTensor,
    mask: Option<&RefTensor>,
    batch_stats: bool,
) -> Result<RefOutput> {
    let mut ctx = Ctx { params, batch_stats, relu_pattern: Vec::new() };
    let need_mask = || mask.ok_or_else(|| Error::Precondition("reference: mask required".into()));
    let fused = match arch.fusion {
        Fusion::None => ctx.run(&arch.frame_stream, frame.clone())?,
        Fusion::EarlyConcat => ctx.run(&arch.frame_stream, concat(frame, need_mask()?))?,
        Fusion::Add => {
            let mut a = ctx.run(&arch.frame_stream, frame.clone())?;
            let b = ctx.run(&arch.mask_stream, need_mask()?.clone())?;
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
            a
        }
        Fusion::LateConcat => {
            let a = ctx.run(&arch.frame_stream, frame.clone())?;
            let b = ctx.run(&arch.mask_stream, need_mask()?.clone())?;
            concat(&a, &b)
        }
    };
    let mut out = ctx.run(&arch.tail, fused)?;
    if arch.global_skip {
        for (o, f) in out.data.iter_mut().zip(&frame.data) {
            *o += f;
        }
    }
    Ok(RefOutput { output: out, relu_pattern: ctx.relu_pattern })
}
