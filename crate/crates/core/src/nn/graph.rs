//! Two-stream layer graphs, their parameters, and the forward/backward passes.

use std::fmt::Write as _;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{self, BnCache};
use super::tensor::{Shape, Tensor};
use crate::error::{bail, Error, Result};

/// Channel width of residual blocks.
pub const RESIDUAL_CHANNELS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        name: String,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    },
    Relu,
    BatchNorm {
        name: String,
        channels: usize,
    },
    /// conv3x3 -> batchnorm -> relu -> conv3x3 -> batchnorm, plus identity skip.
    ResidualBlock {
        name: String,
        channels: usize,
    },
}

impl LayerSpec {
    pub fn conv(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        LayerSpec::Conv { name: name.into(), in_ch, out_ch, kernel }
    }

    pub fn batchnorm(name: impl Into<String>, channels: usize) -> Self {
        LayerSpec::BatchNorm { name: name.into(), channels }
    }

    pub fn residual(name: impl Into<String>) -> Self {
        LayerSpec::ResidualBlock { name: name.into(), channels: RESIDUAL_CHANNELS }
    }

    /// Body of a residual block, without the skip.
    fn residual_body(name: &str, ch: usize) -> [LayerSpec; 5] {
        [
            LayerSpec::conv(format!("{name}.conv1"), ch, ch, 3),
            LayerSpec::batchnorm(format!("{name}.bn1"), ch),
            LayerSpec::Relu,
            LayerSpec::conv(format!("{name}.conv2"), ch, ch, 3),
            LayerSpec::batchnorm(format!("{name}.bn2"), ch),
        ]
    }

    /// Output channels given the input channel count.
    fn out_channels(&self, input: usize) -> usize {
        match self {
            LayerSpec::Conv { out_ch, .. } => *out_ch,
            LayerSpec::Relu | LayerSpec::BatchNorm { .. } | LayerSpec::ResidualBlock { .. } => input,
        }
    }

    fn check_input(&self, input: usize) -> Result<()> {
        let expected = match self {
            LayerSpec::Conv { in_ch, kernel, .. } => {
                if kernel % 2 == 0 {
                    bail!(Config, "conv kernel {kernel} must be odd");
                }
                *in_ch
            }
            LayerSpec::BatchNorm { channels, .. } | LayerSpec::ResidualBlock { channels, .. } => *channels,
            LayerSpec::Relu => input,
        };
        if expected != input {
            bail!(Config, "layer {self:?} fed {input} channels");
        }
        Ok(())
    }

    fn to_line(&self) -> String {
        match self {
            LayerSpec::Conv { name, in_ch, out_ch, kernel } => format!("conv {name} {in_ch} {out_ch} {kernel}"),
            LayerSpec::Relu => "relu".into(),
            LayerSpec::BatchNorm { name, channels } => format!("batchnorm {name} {channels}"),
            LayerSpec::ResidualBlock { name, channels } => format!("residual {name} {channels}"),
        }
    }

    fn from_line(line: &str) -> Result<Self> {
        let tok: Vec<&str> = line.split_whitespace().collect();
        let num = |i: usize| -> Result<usize> {
            tok.get(i).and_then(|t| t.parse().ok()).ok_or_else(|| Error::Parse(format!("bad layer line {line:?}")))
        };
        let name = |i: usize| -> Result<String> {
            tok.get(i).map(|s| s.to_string()).ok_or_else(|| Error::Parse(format!("bad layer line {line:?}")))
        };
        Ok(match tok.first().copied() {
            Some("conv") if tok.len() == 5 => LayerSpec::conv(name(1)?, num(2)?, num(3)?, num(4)?),
            Some("relu") if tok.len() == 1 => LayerSpec::Relu,
            Some("batchnorm") if tok.len() == 3 => LayerSpec::batchnorm(name(1)?, num(2)?),
            Some("residual") if tok.len() == 3 => LayerSpec::ResidualBlock { name: name(1)?, channels: num(2)? },
            _ => bail!(Parse, "bad layer line {line:?}"),
        })
    }
}

/// How the mask stream joins the frame stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fusion {
    /// Frame only.
    None,
    /// Element-wise sum of the two stream outputs.
    Add,
    /// Channel concatenation of the two stream outputs.
    LateConcat,
    /// Frame and mask concatenated at the input; single stream.
    EarlyConcat,
}

impl Fusion {
    fn name(self) -> &'static str {
        match self {
            Fusion::None => "none",
            Fusion::Add => "add",
            Fusion::LateConcat => "late-concat",
            Fusion::EarlyConcat => "early-concat",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Fusion::None,
            "add" => Fusion::Add,
            "late-concat" => Fusion::LateConcat,
            "early-concat" => Fusion::EarlyConcat,
            _ => bail!(Parse, "unknown fusion {s:?}"),
        })
    }

    pub fn uses_mask(self) -> bool {
        self != Fusion::None
    }
}

/// Layer graph: optional mask stream, a fusion point, and a shared tail.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    /// Opaque configuration tag owned by whoever built the graph.
    pub config: String,
    pub frame_channels: usize,
    pub mask_channels: usize,
    pub frame_stream: Vec<LayerSpec>,
    pub mask_stream: Vec<LayerSpec>,
    pub fusion: Fusion,
    pub tail: Vec<LayerSpec>,
    /// Output is `tail(...) + frame` rather than `tail(...)`.
    pub global_skip: bool,
}

impl Architecture {
    /// A bare chain of layers, used for gradient checks of fragments.
    pub fn chain(input_channels: usize, layers: Vec<LayerSpec>) -> Self {
        Architecture {
            config: "chain".into(),
            frame_channels: input_channels,
            mask_channels: 0,
            frame_stream: layers,
            mask_stream: Vec::new(),
            fusion: Fusion::None,
            tail: Vec::new(),
            global_skip: false,
        }
    }

    fn stream_out(layers: &[LayerSpec], mut ch: usize) -> Result<usize> {
        for l in layers {
            l.check_input(ch)?;
            ch = l.out_channels(ch);
        }
        Ok(ch)
    }

    /// Channel bookkeeping through the whole graph; returns output channels.
    pub fn validate(&self) -> Result<usize> {
        if self.frame_channels == 0 {
            bail!(Config, "frame input needs at least one channel");
        }
        if self.fusion.uses_mask() != (self.mask_channels > 0) {
            bail!(Config, "fusion {:?} inconsistent with {} mask channels", self.fusion, self.mask_channels);
        }
        let stream_in = match self.fusion {
            Fusion::EarlyConcat => self.frame_channels + self.mask_channels,
            _ => self.frame_channels,
        };
        let frame_out = Self::stream_out(&self.frame_stream, stream_in)?;
        let fused = match self.fusion {
            Fusion::None | Fusion::EarlyConcat => {
                if !self.mask_stream.is_empty() {
                    bail!(Config, "mask stream present without a late fusion");
                }
                frame_out
            }
            Fusion::Add => {
                let m = Self::stream_out(&self.mask_stream, self.mask_channels)?;
                if m != frame_out {
                    bail!(Config, "add fusion of {frame_out} and {m} channels");
                }
                frame_out
            }
            Fusion::LateConcat => frame_out + Self::stream_out(&self.mask_stream, self.mask_channels)?,
        };
        let out = Self::stream_out(&self.tail, fused)?;
        if self.global_skip && out != self.frame_channels {
            bail!(Config, "global skip needs {} output channels, graph gives {out}", self.frame_channels);
        }
        Ok(out)
    }

    fn all_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.frame_stream.iter().chain(&self.mask_stream).chain(&self.tail)
    }

    /// `(name, shape, trainable)` of every tensor the graph owns, in storage order.
    pub fn tensor_specs(&self) -> Vec<(String, Shape, bool)> {
        fn visit(l: &LayerSpec, out: &mut Vec<(String, Shape, bool)>) {
            match l {
                LayerSpec::Conv { name, in_ch, out_ch, kernel } => {
                    out.push((format!("{name}.weight"), Shape::new(*out_ch, *in_ch, *kernel, *kernel), true));
                    out.push((format!("{name}.bias"), Shape::new(1, 1, 1, *out_ch), true));
                }
                LayerSpec::Relu => {}
                LayerSpec::BatchNorm { name, channels } => {
                    let s = Shape::new(1, 1, 1, *channels);
                    out.push((format!("{name}.gamma"), s, true));
                    out.push((format!("{name}.beta"), s, true));
                    out.push((format!("{name}.running_mean"), s, false));
                    out.push((format!("{name}.running_var"), s, false));
                }
                LayerSpec::ResidualBlock { name, channels } => {
                    for sub in LayerSpec::residual_body(name, *channels) {
                        visit(&sub, out);
                    }
                }
            }
        }
        let mut out = Vec::new();
        for l in self.all_layers() {
            visit(l, &mut out);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensor_specs().iter().filter(|(_, _, trainable)| *trainable).map(|(_, s, _)| s.len()).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "config {}", self.config);
        let _ = writeln!(s, "frame_channels {}", self.frame_channels);
        let _ = writeln!(s, "mask_channels {}", self.mask_channels);
        let _ = writeln!(s, "fusion {}", self.fusion.name());
        let _ = writeln!(s, "global_skip {}", self.global_skip as u8);
        for (section, layers) in [("frame", &self.frame_stream), ("mask", &self.mask_stream), ("tail", &self.tail)] {
            let _ = writeln!(s, "[{section}]");
            for l in layers {
                let _ = writeln!(s, "{}", l.to_line());
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut arch = Architecture::chain(1, Vec::new());
        let mut section: Option<&str> = None;
        let mut seen = [false; 5];
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = Some(match name {
                    "frame" | "mask" | "tail" => name,
                    _ => bail!(Parse, "unknown section {name:?}"),
                });
                continue;
            }
            if let Some(sec) = section {
                let layer = LayerSpec::from_line(line)?;
                match sec {
                    "frame" => arch.frame_stream.push(layer),
                    "mask" => arch.mask_stream.push(layer),
                    _ => arch.tail.push(layer),
                }
                continue;
            }
            let (key, value) = line.split_once(' ').unwrap_or((line, ""));
            let parse_num = |v: &str| -> Result<usize> {
                v.trim().parse().map_err(|_| Error::Parse(format!("bad value in {line:?}")))
            };
            match key {
                "config" => {
                    arch.config = value.to_string();
                    seen[0] = true;
                }
                "frame_channels" => {
                    arch.frame_channels = parse_num(value)?;
                    seen[1] = true;
                }
                "mask_channels" => {
                    arch.mask_channels = parse_num(value)?;
                    seen[2] = true;
                }
                "fusion" => {
                    arch.fusion = Fusion::parse(value.trim())?;
                    seen[3] = true;
                }
                "global_skip" => {
                    arch.global_skip = parse_num(value)? != 0;
                    seen[4] = true;
                }
                _ => bail!(Parse, "unknown architecture key {key:?}"),
            }
        }
        if seen.iter().any(|s| !s) {
            bail!(Parse, "architecture descriptor is missing header fields");
        }
        arch.validate()?;
        Ok(arch)
    }
}

/// Saved activations of one layer for the backward pass.
#[derive(Debug)]
enum Record {
    Conv { input: Tensor },
    Relu { output: Tensor },
    BatchNorm(BnCache),
    Residual(Vec<Record>),
}

/// Everything `backward` needs from a training-mode forward pass.
#[derive(Debug)]
pub struct Tape {
    frame: Vec<Record>,
    mask: Vec<Record>,
    tail: Vec<Record>,
    frame_out_channels: usize,
    input_shapes: (Shape, Option<Shape>),
}

/// Gradients with respect to the network inputs.
#[derive(Debug)]
pub struct InputGrads {
    pub frame: Tensor,
    pub mask: Option<Tensor>,
}

/// Trainable parameters, batch-norm running statistics and the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    arch: Architecture,
    params: IndexMap<String, Tensor>,
    buffers: IndexMap<String, Tensor>,
    step: u64,
}

fn param<'a>(map: &'a IndexMap<String, Tensor>, name: &str) -> Result<&'a Tensor> {
    map.get(name).ok_or_else(|| Error::Config(format!("missing tensor {name}")))
}

fn take_tensor(map: &mut IndexMap<String, Tensor>, name: &str) -> Result<Tensor> {
    Ok(std::mem::replace(param_mut(map, name)?, Tensor::zeros(Shape::new(0, 0, 0, 0))))
}

fn take_grad(map: &mut IndexMap<String, Tensor>, name: &str) -> Result<Vec<f32>> {
    Ok(param_mut(map, name)?.take_grad())
}

fn param_mut<'a>(map: &'a mut IndexMap<String, Tensor>, name: &str) -> Result<&'a mut Tensor> {
    map.get_mut(name).ok_or_else(|| Error::Config(format!("missing tensor {name}")))
}

impl ModelWeights {
    /// He-uniform conv weights, zero biases, unit batch-norm scale; seeded.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = IndexMap::new();
        let mut buffers = IndexMap::new();
        for (name, shape, trainable) in arch.tensor_specs() {
            let t = if name.ends_with(".weight") {
                let fan_in = (shape.c * shape.h * shape.w) as f32;
                let bound = (6.0 / fan_in).sqrt();
                Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.gen_range(-bound..bound)).collect())?
            } else if name.ends_with(".gamma") || name.ends_with(".running_var") {
                Tensor::full(shape, 1.0)
            } else {
                Tensor::zeros(shape)
            };
            if trainable {
                params.insert(name, t);
            } else {
                buffers.insert(name, t);
            }
        }
        Ok(Self { arch, params, buffers, step: 0 })
    }

    /// Assembles weights from stored tensors, checking names and shapes against the graph.
    pub fn from_parts(arch: Architecture, tensors: Vec<(String, Tensor)>, step: u64) -> Result<Self> {
        arch.validate()?;
        let mut stored: IndexMap<String, Tensor> = IndexMap::new();
        for (name, t) in tensors {
            if stored.insert(name.clone(), t).is_some() {
                bail!(Parse, "duplicate tensor {name}");
            }
        }
        let mut params = IndexMap::new();
        let mut buffers = IndexMap::new();
        for (name, shape, trainable) in arch.tensor_specs() {
            let t = stored.shift_remove(&name).ok_or_else(|| Error::Parse(format!("tensor {name} missing")))?;
            if t.shape() != shape {
                bail!(Parse, "tensor {name} has shape {}, expected {shape}", t.shape());
            }
            if trainable {
                params.insert(name, t);
            } else {
                buffers.insert(name, t);
            }
        }
        if let Some(extra) = stored.keys().next() {
            bail!(Parse, "unexpected tensor {extra}");
        }
        Ok(Self { arch, params, buffers, step })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &IndexMap<String, Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut IndexMap<String, Tensor> {
        &mut self.params
    }

    pub fn buffers(&self) -> &IndexMap<String, Tensor> {
        &self.buffers
    }

    /// Parameters then buffers, in storage order.
    pub fn named_tensors(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter().chain(self.buffers.iter())
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|t| t.data().len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn bump_step(&mut self) {
        self.step += 1;
    }

    pub fn zero_grads(&mut self) {
        for t in self.params.values_mut() {
            t.zero_grad();
        }
    }

    /// True when both weight sets belong to the same graph.
    pub fn same_architecture(&self, other: &ModelWeights) -> bool {
        self.arch == other.arch
    }

    fn check_inputs(&self, frame: &Tensor, mask: Option<&Tensor>) -> Result<()> {
        let fs = frame.shape();
        if fs.c != self.arch.frame_channels {
            bail!(Shape, "frame has {} channels, model expects {}", fs.c, self.arch.frame_channels);
        }
        match (self.arch.fusion.uses_mask(), mask) {
            (true, Some(m)) => {
                let ms = m.shape();
                if ms.c != self.arch.mask_channels || ms.n != fs.n || ms.h != fs.h || ms.w != fs.w {
                    bail!(Shape, "mask {ms} does not pair with frame {fs}");
                }
            }
            (true, None) => bail!(Precondition, "model requires a mask input"),
            (false, Some(_)) => bail!(Precondition, "model takes no mask input"),
            (false, None) => {}
        }
        Ok(())
    }

    /// Inference-mode forward pass (running batch-norm statistics).
    pub fn forward(&self, frame: &Tensor, mask: Option<&Tensor>) -> Result<Tensor> {
        self.check_inputs(frame, mask)?;
        let run = |layers: &[LayerSpec], x: Tensor| run_infer(layers, x, &self.params, &self.buffers);
        let fused = match self.arch.fusion {
            Fusion::None => run(&self.arch.frame_stream, frame.clone())?,
            Fusion::EarlyConcat => run(&self.arch.frame_stream, ops::concat(frame, mask.unwrap())?)?,
            Fusion::Add => {
                let mut a = run(&self.arch.frame_stream, frame.clone())?;
                let b = run(&self.arch.mask_stream, mask.unwrap().clone())?;
                ops::add_in_place(&mut a, &b)?;
                a
            }
            Fusion::LateConcat => {
                let a = run(&self.arch.frame_stream, frame.clone())?;
                let b = run(&self.arch.mask_stream, mask.unwrap().clone())?;
                ops::concat(&a, &b)?
            }
        };
        let mut out = run(&self.arch.tail, fused)?;
        if self.arch.global_skip {
            ops::add_in_place(&mut out, frame)?;
        }
        Ok(out)
    }

    /// Training-mode forward pass: batch statistics, running-stat updates, and a tape.
    pub fn forward_train(&mut self, frame: &Tensor, mask: Option<&Tensor>) -> Result<(Tensor, Tape)> {
        self.check_inputs(frame, mask)?;
        let arch = &self.arch;
        let (params, buffers) = (&self.params, &mut self.buffers);
        let mut tape = Tape {
            frame: Vec::new(),
            mask: Vec::new(),
            tail: Vec::new(),
            frame_out_channels: 0,
            input_shapes: (frame.shape(), mask.map(Tensor::shape)),
        };
        let fused = match arch.fusion {
            Fusion::None => run_train(&arch.frame_stream, frame.clone(), params, buffers, &mut tape.frame)?,
            Fusion::EarlyConcat => {
                run_train(&arch.frame_stream, ops::concat(frame, mask.unwrap())?, params, buffers, &mut tape.frame)?
            }
            Fusion::Add => {
                let mut a = run_train(&arch.frame_stream, frame.clone(), params, buffers, &mut tape.frame)?;
                let b = run_train(&arch.mask_stream, mask.unwrap().clone(), params, buffers, &mut tape.mask)?;
                ops::add_in_place(&mut a, &b)?;
                a
            }
            Fusion::LateConcat => {
                let a = run_train(&arch.frame_stream, frame.clone(), params, buffers, &mut tape.frame)?;
                let b = run_train(&arch.mask_stream, mask.unwrap().clone(), params, buffers, &mut tape.mask)?;
                tape.frame_out_channels = a.shape().c;
                ops::concat(&a, &b)?
            }
        };
        let mut out = run_train(&arch.tail, fused, params, buffers, &mut tape.tail)?;
        if arch.global_skip {
            ops::add_in_place(&mut out, frame)?;
        }
        Ok((out, tape))
    }

    /// Accumulates parameter gradients for `grad_out`; optionally returns input gradients.
    pub fn backward(&mut self, tape: Tape, grad_out: &Tensor, want_input_grads: bool) -> Result<Option<InputGrads>> {
        let arch = &self.arch;
        let params = &mut self.params;
        let Tape { frame, mask, tail, frame_out_channels, input_shapes } = tape;
        let g_fused =
            backward_layers(&arch.tail, tail, grad_out.clone(), params, true)?.expect("input gradient requested");
        let (g_frame, g_mask) = match arch.fusion {
            Fusion::None => (backward_layers(&arch.frame_stream, frame, g_fused, params, want_input_grads)?, None),
            Fusion::EarlyConcat => {
                let g = backward_layers(&arch.frame_stream, frame, g_fused, params, want_input_grads)?;
                match g {
                    Some(g) => {
                        let (f, m) = ops::split_channels(&g, arch.frame_channels)?;
                        (Some(f), Some(m))
                    }
                    None => (None, None),
                }
            }
            Fusion::Add => {
                let gm = backward_layers(&arch.mask_stream, mask, g_fused.clone(), params, want_input_grads)?;
                let gf = backward_layers(&arch.frame_stream, frame, g_fused, params, want_input_grads)?;
                (gf, gm)
            }
            Fusion::LateConcat => {
                let (ga, gb) = ops::split_channels(&g_fused, frame_out_channels)?;
                let gm = backward_layers(&arch.mask_stream, mask, gb, params, want_input_grads)?;
                let gf = backward_layers(&arch.frame_stream, frame, ga, params, want_input_grads)?;
                (gf, gm)
            }
        };
        if !want_input_grads {
            return Ok(None);
        }
        // Empty streams pass the gradient through untouched.
        let mut g_frame = g_frame.unwrap_or_else(|| Tensor::zeros(input_shapes.0));
        if arch.global_skip {
            ops::add_in_place(&mut g_frame, grad_out)?;
        }
        Ok(Some(InputGrads { frame: g_frame, mask: g_mask.or_else(|| input_shapes.1.map(Tensor::zeros)) }))
    }
}

fn run_infer(
    layers: &[LayerSpec],
    mut x: Tensor,
    params: &IndexMap<String, Tensor>,
    buffers: &IndexMap<String, Tensor>,
) -> Result<Tensor> {
    for l in layers {
        x = match l {
            LayerSpec::Conv { name, .. } => ops::conv2d_forward(
                &x,
                param(params, &format!("{name}.weight"))?,
                param(params, &format!("{name}.bias"))?.data(),
            )?,
            LayerSpec::Relu => ops::relu(x),
            LayerSpec::BatchNorm { name, .. } => ops::batchnorm_infer(
                &x,
                param(params, &format!("{name}.gamma"))?.data(),
                param(params, &format!("{name}.beta"))?.data(),
                param(buffers, &format!("{name}.running_mean"))?.data(),
                param(buffers, &format!("{name}.running_var"))?.data(),
            )?,
            LayerSpec::ResidualBlock { name, channels } => {
                let body = run_infer(&LayerSpec::residual_body(name, *channels), x.clone(), params, buffers)?;
                ops::add(&body, &x)?
            }
        };
    }
    Ok(x)
}

fn run_train(
    layers: &[LayerSpec],
    mut x: Tensor,
    params: &IndexMap<String, Tensor>,
    buffers: &mut IndexMap<String, Tensor>,
    tape: &mut Vec<Record>,
) -> Result<Tensor> {
    for l in layers {
        x = match l {
            LayerSpec::Conv { name, .. } => {
                let y = ops::conv2d_forward(
                    &x,
                    param(params, &format!("{name}.weight"))?,
                    param(params, &format!("{name}.bias"))?.data(),
                )?;
                tape.push(Record::Conv { input: x });
                y
            }
            LayerSpec::Relu => {
                let y = ops::relu(x);
                tape.push(Record::Relu { output: y.clone() });
                y
            }
            LayerSpec::BatchNorm { name, .. } => {
                let (mean_key, var_key) = (format!("{name}.running_mean"), format!("{name}.running_var"));
                let mut rm = take_tensor(buffers, &mean_key)?;
                let mut rv = take_tensor(buffers, &var_key)?;
                let res = ops::batchnorm_train(
                    &x,
                    param(params, &format!("{name}.gamma"))?.data(),
                    param(params, &format!("{name}.beta"))?.data(),
                    rm.data_mut(),
                    rv.data_mut(),
                );
                *param_mut(buffers, &mean_key)? = rm;
                *param_mut(buffers, &var_key)? = rv;
                let (y, cache) = res?;
                tape.push(Record::BatchNorm(cache));
                y
            }
            LayerSpec::ResidualBlock { name, channels } => {
                let mut sub = Vec::new();
                let body = run_train(&LayerSpec::residual_body(name, *channels), x.clone(), params, buffers, &mut sub)?;
                tape.push(Record::Residual(sub));
                ops::add(&body, &x)?
            }
        };
    }
    Ok(x)
}

/// Walks `layers` backwards. The first layer skips its input gradient unless `need_input_grad`.
fn backward_layers(
    layers: &[LayerSpec],
    records: Vec<Record>,
    mut grad: Tensor,
    params: &mut IndexMap<String, Tensor>,
    need_input_grad: bool,
) -> Result<Option<Tensor>> {
    if layers.len() != records.len() {
        bail!(Config, "tape does not match the layer list");
    }
    for (idx, (l, rec)) in layers.iter().zip(records).enumerate().rev() {
        let need = need_input_grad || idx > 0;
        grad = match (l, rec) {
            (LayerSpec::Conv { name, .. }, Record::Conv { input }) => {
                let (wkey, bkey) = (format!("{name}.weight"), format!("{name}.bias"));
                let mut gb = take_grad(params, &bkey)?;
                let w = param_mut(params, &wkey)?;
                let mut gw = w.take_grad();
                let gi = ops::conv2d_backward(&input, w, &grad, &mut gw, &mut gb, need);
                w.set_grad(gw)?;
                param_mut(params, &bkey)?.set_grad(gb)?;
                match gi? {
                    Some(g) => g,
                    None => return Ok(None),
                }
            }
            (LayerSpec::Relu, Record::Relu { output }) => ops::relu_backward(&output, grad),
            (LayerSpec::BatchNorm { name, .. }, Record::BatchNorm(cache)) => {
                let (gkey, bkey) = (format!("{name}.gamma"), format!("{name}.beta"));
                let mut gbeta = take_grad(params, &bkey)?;
                let gamma = param_mut(params, &gkey)?;
                let mut gg = gamma.take_grad();
                let gi = ops::batchnorm_backward(&cache, gamma.data(), &grad, &mut gg, &mut gbeta);
                gamma.set_grad(gg)?;
                param_mut(params, &bkey)?.set_grad(gbeta)?;
                gi?
            }
            (LayerSpec::ResidualBlock { name, channels }, Record::Residual(sub)) => {
                let body = LayerSpec::residual_body(name, *channels);
                let mut g_body = backward_layers(&body, sub, grad.clone(), params, true)?.expect("requested");
                ops::add_in_place(&mut g_body, &grad)?;
                g_body
            }
            _ => bail!(Config, "tape record does not match layer {l:?}"),
        };
    }
    Ok(Some(grad))
}
