use super::config::{Depth, FusionStrategy, ModelConfig};
use crate::error::{bail, Result};
use crate::nn::{Architecture, Fusion, LayerSpec, ModelWeights, RESIDUAL_CHANNELS};

const F: usize = RESIDUAL_CHANNELS;
/// Width of the mapping layer in the deep tail.
const MAP_CHANNELS: usize = 32;
/// Factor applied to the output convolution's initial weights, so that an
/// untrained model starts close to the identity map.
pub const OUTPUT_INIT_SCALE: f32 = 1e-2;
/// Suffix of the scale parameter that closes every residual block body; it starts at zero so
/// each block is initially the identity.
const BLOCK_CLOSING_GAMMA: &str = ".bn2.gamma";

fn deep_stream(prefix: &str, in_ch: usize, blocks: usize) -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::conv(format!("{prefix}.entry"), in_ch, F, 3), LayerSpec::Relu];
    layers.extend((0..blocks).map(|i| LayerSpec::residual(format!("{prefix}.res{i}"))));
    layers
}

/// The three post-fusion layers: enhancement, mapping, reconstruction.
fn deep_tail() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv("enhance", F, F, 3),
        LayerSpec::Relu,
        LayerSpec::conv("map", F, MAP_CHANNELS, 3),
        LayerSpec::Relu,
        LayerSpec::conv("recon", MAP_CHANNELS, 1, 3),
    ]
}

fn shallow_chain(in_ch: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv("conv1", in_ch, 64, 5),
        LayerSpec::Relu,
        LayerSpec::conv("conv2", 64, 32, 3),
        LayerSpec::Relu,
        LayerSpec::conv("conv3", 32, 16, 3),
        LayerSpec::Relu,
        LayerSpec::conv("recon", 16, 1, 5),
    ]
}

/// Layer graph for `config`; every variant predicts a residual added to the frame.
pub fn architecture(config: &ModelConfig) -> Result<Architecture> {
    config.validate()?;
    let mask_ch = usize::from(config.use_mask);
    let fusion = match (config.use_mask, config.fusion) {
        (false, _) => Fusion::None,
        (true, FusionStrategy::Af) => Fusion::Add,
        (true, FusionStrategy::Clf) => Fusion::LateConcat,
        (true, FusionStrategy::Cef) => Fusion::EarlyConcat,
    };
    let stream_in = if fusion == Fusion::EarlyConcat { 2 } else { 1 };
    let (frame_stream, mask_stream, tail) = match config.depth {
        Depth::Shallow => (shallow_chain(stream_in), Vec::new(), Vec::new()),
        Depth::Deep => {
            let blocks = config.residual_blocks;
            let frame = deep_stream("frame", stream_in, blocks);
            match fusion {
                Fusion::Add => (frame, deep_stream("mask", 1, blocks), deep_tail()),
                Fusion::LateConcat => {
                    let mask = vec![
                        LayerSpec::conv("mask.conv1", 1, F, 3),
                        LayerSpec::Relu,
                        LayerSpec::conv("mask.conv2", F, F, 3),
                        LayerSpec::Relu,
                        LayerSpec::conv("mask.conv3", F, F, 3),
                        LayerSpec::Relu,
                    ];
                    let mut tail = vec![LayerSpec::conv("fuse", 2 * F, F, 1), LayerSpec::Relu];
                    tail.extend(deep_tail());
                    (frame, mask, tail)
                }
                Fusion::None | Fusion::EarlyConcat => (frame, Vec::new(), deep_tail()),
            }
        }
    };
    let arch = Architecture {
        config: config.to_string(),
        frame_channels: 1,
        mask_channels: mask_ch,
        frame_stream,
        mask_stream,
        fusion,
        tail,
        global_skip: true,
    };
    arch.validate()?;
    Ok(arch)
}

/// Freshly initialised weights for `config`, reproducible from `seed`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    let mut model = ModelWeights::init(architecture(config)?, seed)?;
    let name = output_layer(&model)?;
    if let Some(t) = model.params_mut().get_mut(&format!("{name}.weight")) {
        t.data_mut().iter_mut().for_each(|v| *v *= OUTPUT_INIT_SCALE);
    }
    for (name, t) in model.params_mut().iter_mut() {
        if name.ends_with(BLOCK_CLOSING_GAMMA) {
            t.data_mut().fill(0.0);
        }
    }
    Ok(model)
}

/// Recovers the configuration recorded in a model's architecture.
pub fn model_config(model: &ModelWeights) -> Result<ModelConfig> {
    let cfg = ModelConfig::parse(&model.architecture().config)?;
    if architecture(&cfg)? != *model.architecture() {
        bail!(Config, "model graph does not match its recorded configuration {cfg}");
    }
    Ok(cfg)
}

/// Name of the final convolution, whose output is the predicted residual.
pub fn output_layer(model: &ModelWeights) -> Result<String> {
    let arch = model.architecture();
    let layers = if arch.tail.is_empty() { &arch.frame_stream } else { &arch.tail };
    match layers.last() {
        Some(LayerSpec::Conv { name, .. }) => Ok(name.clone()),
        _ => bail!(Config, "model does not end in a convolution"),
    }
}

/// Zeroes the output convolution, turning the model into the identity map.
pub fn zero_output_layer(model: &mut ModelWeights) -> Result<()> {
    let name = output_layer(model)?;
    for suffix in [".weight", ".bias"] {
        if let Some(t) = model.params_mut().get_mut(&format!("{name}{suffix}")) {
            t.data_mut().fill(0.0);
        }
    }
    Ok(())
}
