use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::codec::FramePlane;
use crate::dataset::{build_dataset, toy_corpus, PatchPair, ToyCorpusConfig};
use crate::mask::MaskKind;
use crate::metrics::psnr;
use crate::nn::{
    decode_model, encode_model, grad_check, Architecture, Fusion, GradCheckOptions, LayerSpec, ModelWeights,
    OptimizerKind, Shape, Tensor, TrainConfig,
};

fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k * k + cout
}

fn residual_params(c: usize) -> usize {
    2 * conv_params(c, c, 3) + 2 * 2 * c
}

fn tail_params() -> usize {
    conv_params(64, 64, 3) + conv_params(64, 32, 3) + conv_params(32, 1, 3)
}

#[test]
fn deep_single_input_parameter_count() {
    let m = build_model(&ModelConfig::default(), 0).unwrap();
    let expected = conv_params(1, 64, 3) + 4 * residual_params(64) + tail_params();
    assert_eq!(expected, 352_769);
    assert_eq!(m.param_count(), expected);
}

#[test]
fn parameter_counts_per_variant() {
    let stream = |cin: usize, blocks: usize| conv_params(cin, 64, 3) + blocks * residual_params(64);
    let cases = [
        (
            ModelConfig::single_input(Depth::Shallow),
            conv_params(1, 64, 5) + conv_params(64, 32, 3) + conv_params(32, 16, 3) + conv_params(16, 1, 5),
        ),
        (
            ModelConfig::two_input(Depth::Deep, MaskKind::Mean, FusionStrategy::Af).with_blocks(2),
            2 * stream(1, 2) + tail_params(),
        ),
        (
            ModelConfig::two_input(Depth::Deep, MaskKind::Boundary, FusionStrategy::Clf),
            stream(1, 4) + conv_params(1, 64, 3) + 2 * conv_params(64, 64, 3) + conv_params(128, 64, 1) + tail_params(),
        ),
        (ModelConfig::two_input(Depth::Deep, MaskKind::Mean, FusionStrategy::Cef), stream(2, 4) + tail_params()),
    ];
    for (cfg, expected) in cases {
        assert_eq!(build_model(&cfg, 1).unwrap().param_count(), expected, "{cfg}");
    }
    assert_eq!(build_model(&ModelConfig::single_input(Depth::Shallow), 0).unwrap().param_count(), 25_153);
}

fn random_patch(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Shape::new(n, 1, 64, 64);
    Tensor::from_vec(s, (0..s.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

fn all_configs() -> Vec<ModelConfig> {
    let mut v = vec![
        ModelConfig::default().with_blocks(1),
        ModelConfig::single_input(Depth::Shallow),
        ModelConfig::two_input(Depth::Shallow, MaskKind::Mean, FusionStrategy::Cef),
    ];
    for f in [FusionStrategy::Af, FusionStrategy::Clf, FusionStrategy::Cef] {
        v.push(ModelConfig::two_input(Depth::Deep, MaskKind::Boundary, f).with_blocks(1));
    }
    v
}

#[test]
fn zeroed_output_layer_is_identity() {
    let x = random_patch(2, 1);
    let m = random_patch(2, 2);
    for cfg in all_configs() {
        let mut model = build_model(&cfg, 3).unwrap();
        zero_output_layer(&mut model).unwrap();
        let mask = cfg.use_mask.then_some(&m);
        assert_eq!(model.forward(&x, mask).unwrap().data(), x.data(), "{cfg}");
        assert_eq!(postprocess_patch(&model, &x, mask).unwrap().data(), x.data(), "{cfg}");
    }
}

#[test]
fn input_contracts() {
    let x = random_patch(1, 4);
    let m = random_patch(1, 5);
    let cef = build_model(&ModelConfig::two_input(Depth::Deep, MaskKind::Mean, FusionStrategy::Cef).with_blocks(1), 0)
        .unwrap();
    assert_eq!(cef.architecture().fusion, Fusion::EarlyConcat);
    assert_eq!(postprocess_patch(&cef, &x, Some(&m)).unwrap().shape(), Shape::new(1, 1, 64, 64));
    let af = build_model(&ModelConfig::two_input(Depth::Deep, MaskKind::Mean, FusionStrategy::Af).with_blocks(1), 0)
        .unwrap();
    assert_eq!(postprocess_patch(&af, &x, Some(&m)).unwrap().shape(), Shape::new(1, 1, 64, 64));
    assert!(postprocess_patch(&af, &x, None).is_err());
    let single = build_model(&ModelConfig::default().with_blocks(1), 0).unwrap();
    assert!(postprocess_patch(&single, &x, Some(&m)).is_err());
    let wrong = Tensor::zeros(Shape::new(1, 1, 32, 32));
    assert!(postprocess_patch(&single, &wrong, None).is_err());
}

#[test]
fn postprocess_is_clamped_and_repeatable() {
    let x = random_patch(3, 6);
    let model = build_model(&ModelConfig::single_input(Depth::Shallow), 8).unwrap();
    let a = postprocess_patch(&model, &x, None).unwrap();
    let b = postprocess_patch(&model, &x, None).unwrap();
    assert_eq!(a, b);
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let raw = model.forward(&x, None).unwrap();
    // Output moves no further from the input than the unclamped residual.
    for ((o, r), i) in a.data().iter().zip(raw.data()).zip(x.data()) {
        assert!((o - i).abs() <= (r - i).abs() + 1e-7);
    }
}

/// Copies every tensor of `from` whose name exists in `to`.
fn copy_shared(from: &ModelWeights, to: &mut ModelWeights) {
    let shared: Vec<(String, Vec<f32>)> = from.named_tensors().map(|(n, t)| (n.clone(), t.data().to_vec())).collect();
    for (n, data) in shared {
        match to.params_mut().get_mut(&n) {
            Some(t) if t.data().len() == data.len() => t.data_mut().copy_from_slice(&data),
            _ => {}
        }
    }
}

fn zero_mask_stream(model: &mut ModelWeights) {
    for (n, t) in model.params_mut() {
        if n.starts_with("mask.") && (n.ends_with(".weight") || n.ends_with(".bias")) {
            t.data_mut().fill(0.0);
        }
    }
}

#[test]
fn silent_mask_stream_reproduces_single_input_model() {
    let x = random_patch(2, 9);
    let zeros = Tensor::zeros(Shape::new(2, 1, 64, 64));
    let mut af =
        build_model(&ModelConfig::two_input(Depth::Deep, MaskKind::Mean, FusionStrategy::Af).with_blocks(2), 10)
            .unwrap();
    zero_mask_stream(&mut af);
    let mut single = build_model(&ModelConfig::default().with_blocks(2), 11).unwrap();
    copy_shared(&af, &mut single);
    assert_eq!(af.forward(&x, Some(&zeros)).unwrap(), single.forward(&x, None).unwrap());

    // Late concatenation keeps its 1x1 fusion conv; the reference graph gets the frame half of it.
    let mut clf =
        build_model(&ModelConfig::two_input(Depth::Deep, MaskKind::Mean, FusionStrategy::Clf).with_blocks(2), 12)
            .unwrap();
    zero_mask_stream(&mut clf);
    let mut arch = architecture(&ModelConfig::default().with_blocks(2)).unwrap();
    arch.tail.splice(0..0, [LayerSpec::conv("fuse", 64, 64, 1), LayerSpec::Relu]);
    let mut reference = ModelWeights::init(arch, 13).unwrap();
    copy_shared(&clf, &mut reference);
    let full = clf.params()["fuse.weight"].data().to_vec();
    let half: Vec<f32> = full.chunks_exact(128).flat_map(|row| row[..64].to_vec()).collect();
    reference.params_mut()["fuse.weight"].data_mut().copy_from_slice(&half);
    assert_eq!(clf.forward(&x, Some(&zeros)).unwrap(), reference.forward(&x, None).unwrap());
}

#[test]
fn full_shallow_model_gradients() {
    let mut model = build_model(&ModelConfig::single_input(Depth::Shallow), 14).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for (n, t) in model.params_mut() {
        if n.ends_with(".bias") {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
        }
    }
    let s = Shape::new(2, 1, 8, 8);
    let x = Tensor::from_vec(s, (0..s.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let report = grad_check(&model, &x, None, &GradCheckOptions::default()).unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn saved_model_keeps_its_configuration() {
    let cfg = ModelConfig::two_input(Depth::Deep, MaskKind::Boundary, FusionStrategy::Clf).with_blocks(1);
    let m = build_model(&cfg, 16).unwrap();
    let back = decode_model(&encode_model(&m)).unwrap();
    assert_eq!(model_config(&back).unwrap(), cfg);
    assert_eq!(model_mask(&back).unwrap(), Some(MaskKind::Boundary));
}

fn toy_patches(seed: u64, sequences: usize, qp: u8) -> Vec<PatchPair> {
    let corpus =
        toy_corpus(&ToyCorpusConfig { sequences, frames_per_sequence: 1, width: 128, height: 128, seed }).unwrap();
    build_dataset(&corpus, qp, 100.0, None).unwrap().patches
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        lr: 1e-3,
        lr_decay_epoch: epochs.saturating_sub(1),
        end_epoch: epochs,
        seed,
        optimizer: OptimizerKind::Adam,
    }
}

#[test]
fn identity_task_converges() {
    let arch = Architecture { global_skip: true, ..Architecture::chain(1, vec![LayerSpec::conv("c", 1, 1, 3)]) };
    let mut model = ModelWeights::init(arch, 17).unwrap();
    let template = toy_patches(18, 1, 37).remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data: Vec<PatchPair> = (0..128)
        .map(|_| {
            let noise = FramePlane::from_fn(64, 64, |_, _| rng.gen()).unwrap();
            PatchPair { decoded: noise.clone(), original: noise, ..template.clone() }
        })
        .collect();
    let cfg = TrainConfig {
        batch_size: 2,
        lr: 3e-2,
        lr_decay_epoch: 4,
        end_epoch: 5,
        seed: 0,
        optimizer: OptimizerKind::Adam,
    };
    let losses = train(&mut model, &data, &cfg).unwrap();
    assert_eq!(losses.len(), 5);
    assert!(losses[4] < 1e-5, "{losses:?}");
}

#[test]
fn loss_curve_trends_down_and_is_reproducible() {
    let data = toy_patches(19, 4, 37);
    let cfg = ModelConfig::single_input(Depth::Shallow);
    let (_, a) = train_new(&cfg, 20, &data, &quick(8, 3)).unwrap();
    let (_, b) = train_new(&cfg, 20, &data, &quick(8, 3)).unwrap();
    assert_eq!(a, b);
    for w in a[3..].windows(2) {
        assert!(w[1] <= w[0] * 1.02, "{a:?}");
    }
    assert!(a[7] < a[0]);
}

#[test]
fn training_rejects_empty_data() {
    let mut m = build_model(&ModelConfig::single_input(Depth::Shallow), 0).unwrap();
    assert!(train(&mut m, &[], &quick(1, 0)).is_err());
}

#[test]
fn fine_tune_contracts() {
    let data = toy_patches(21, 1, 32);
    let cfg = ModelConfig::single_input(Depth::Shallow);
    let base = build_model(&cfg, 22).unwrap();
    let zero = TrainConfig { end_epoch: 0, ..quick(1, 0) };
    let (same, losses) = fine_tune_from(&base, &cfg, &data, &zero).unwrap();
    assert!(losses.is_empty());
    assert_eq!(same, base);
    let other = ModelConfig::two_input(Depth::Shallow, MaskKind::Mean, FusionStrategy::Cef);
    assert!(fine_tune_from(&base, &other, &data, &zero).is_err());
}

fn mean_gain(model: &ModelWeights, data: &[PatchPair]) -> f64 {
    let out = enhance_pairs(model, data).unwrap();
    let mut total = 0.0;
    for (o, p) in out.iter().zip(data) {
        total += psnr(o, &p.original).unwrap() - psnr(&p.decoded, &p.original).unwrap();
    }
    total / data.len() as f64
}

#[test]
fn fine_tuning_beats_training_from_scratch() {
    let cfg = ModelConfig::single_input(Depth::Shallow);
    let anchor = toy_patches(23, 6, 37);
    let (base, _) = train_new(&cfg, 24, &anchor, &quick(6, 1)).unwrap();
    let mut wins = 0;
    for trial in 0..4u64 {
        let train_set = toy_patches(100 + trial, 2, 32);
        let val = toy_patches(200 + trial, 2, 32);
        let budget = quick(2, trial);
        let (tuned, _) = fine_tune_from(&base, &cfg, &train_set, &budget).unwrap();
        let (scratch, _) = train_new(&cfg, 300 + trial, &train_set, &budget).unwrap();
        if mean_gain(&tuned, &val) > mean_gain(&scratch, &val) {
            wins += 1;
        }
    }
    assert!(wins >= 3, "fine-tuning won {wins} of 4 trials");
}

#[test]
fn enhance_frame_matches_patchwise_processing() {
    let corpus =
        toy_corpus(&ToyCorpusConfig { sequences: 1, frames_per_sequence: 1, width: 128, height: 128, seed: 25 })
            .unwrap();
    let coded = crate::codec::encode_decode(&corpus[0].frames[0], crate::QpConfig::new(37).unwrap(), 100.0).unwrap();
    let cfg = ModelConfig::two_input(Depth::Shallow, MaskKind::Mean, FusionStrategy::Cef);
    let model = build_model(&cfg, 26).unwrap();
    let frame = enhance_frame(&model, &coded.decoded, &coded.partition).unwrap();
    let pairs =
        crate::dataset::extract_patches(&corpus[0].frames[0], &coded.decoded, &coded.partition, 37, "s", 0).unwrap();
    let patches = enhance_pairs(&model, &pairs).unwrap();
    let assembled: FramePlane = crate::dataset::assemble_frame(128, 128, &patches).unwrap();
    assert_eq!(frame, assembled);
}

#[test]
fn two_stream_model_gradients() {
    for cfg in [
        ModelConfig::two_input(Depth::Deep, MaskKind::Mean, FusionStrategy::Af).with_blocks(1),
        ModelConfig::two_input(Depth::Deep, MaskKind::Boundary, FusionStrategy::Clf).with_blocks(1),
    ] {
        let model = build_model(&cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = Shape::new(2, 1, 6, 6);
        let x = Tensor::from_vec(s, (0..s.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let m = Tensor::from_vec(s, (0..s.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let report = grad_check(&model, &x, Some(&m), &GradCheckOptions::default()).unwrap();
        assert!(report.passed(), "{cfg}: {report:?}");
    }
}
