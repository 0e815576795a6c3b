use asn_core::codec::{dct2d, encode_decode, idct2d, DEFAULT_SPLIT_THRESHOLD};
use asn_core::dataset::{toy_corpus, ToyCorpusConfig};
use asn_core::metrics::{bd_rate, RdCurve};
use asn_core::nn::ops::{conv2d_backward, conv2d_forward};
use asn_core::nn::{Shape, Tensor};
use asn_core::QpConfig;
use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    let data = (0..shape.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("conv");
    for (name, cin, cout, k) in [("3x3_64to64", 64, 64, 3), ("5x5_1to64", 1, 64, 5), ("1x1_64to64", 64, 64, 1)] {
        let input = random_tensor(&mut rng, Shape::new(4, cin, 64, 64));
        let weight = random_tensor(&mut rng, Shape::new(cout, cin, k, k));
        let bias = vec![0.1f32; cout];
        let flops = 2 * 4 * 64 * 64 * cin * cout * k * k;
        group.throughput(Throughput::Elements(flops as u64));
        group.bench_function(format!("forward_{name}"), |b| {
            b.iter(|| conv2d_forward(black_box(&input), &weight, &bias).unwrap())
        });
        let grad = random_tensor(&mut rng, Shape::new(4, cout, 64, 64));
        group.throughput(Throughput::Elements(2 * flops as u64));
        group.bench_function(format!("backward_{name}"), |b| {
            b.iter_batched(
                || (vec![0.0f32; weight.shape().len()], vec![0.0f32; cout]),
                |(mut gw, mut gb)| conv2d_backward(&input, &weight, black_box(&grad), &mut gw, &mut gb, true).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

fn dct(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("dct");
    for n in [8usize, 16, 32, 64] {
        let block: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..255.0)).collect();
        let coeffs = dct2d(&block, n).unwrap();
        group.bench_function(format!("forward_{n}"), |b| b.iter(|| dct2d(black_box(&block), n).unwrap()));
        group.bench_function(format!("inverse_{n}"), |b| b.iter(|| idct2d(black_box(&coeffs), n).unwrap()));
    }
    group.finish();
}

fn encode(c: &mut Criterion) {
    let corpus =
        toy_corpus(&ToyCorpusConfig { sequences: 1, frames_per_sequence: 1, width: 256, height: 256, seed: 3 })
            .unwrap();
    let frame = &corpus[0].frames[0];
    let mut group = c.benchmark_group("encode");
    group.sample_size(20);
    for qp in [22u8, 37] {
        let qp_cfg = QpConfig::new(qp).unwrap();
        group.bench_function(format!("frame_256_qp{qp}"), |b| {
            b.iter(|| encode_decode(black_box(frame), qp_cfg, DEFAULT_SPLIT_THRESHOLD).unwrap())
        });
    }
    group.finish();
}

fn bd(c: &mut Criterion) {
    let anchor = RdCurve::from_pairs(&[(1.0e5, 32.0), (1.8e5, 34.6), (3.1e5, 37.1), (5.5e5, 39.8)]).unwrap();
    let test = RdCurve::from_pairs(&[(0.9e5, 32.1), (1.7e5, 34.8), (2.9e5, 37.2), (5.2e5, 39.9)]).unwrap();
    c.bench_function("bd_rate", |b| b.iter(|| bd_rate(black_box(&anchor), black_box(&test)).unwrap()));
}

criterion_group!(benches, conv, dct, encode, bd);
criterion_main!(benches);
