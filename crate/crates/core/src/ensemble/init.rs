use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::features::{compute_feature_vector, FeatureVector, Projection, REDUCED_DIM};
use super::{PatchLabel, LOCAL_MODELS};
use crate::dataset::PatchPair;
use crate::error::{bail, Result};
use crate::metrics::psnr;

/// Below this many patches an empty class is statistically plausible and kept.
const RANDOM_MIN_FULL: usize = 30;
const KMEANS_MAX_ITERS: usize = 100;

/// Uniform i.i.d. local labels; for `n >= 30` every class is guaranteed non-empty.
pub fn init_random(n: usize, seed: u64) -> Result<Vec<PatchLabel>> {
    if n == 0 {
        bail!(Precondition, "cannot label an empty training set");
    }
    let mut attempt = seed;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(attempt);
        let labels: Vec<PatchLabel> = (0..n).map(|_| PatchLabel::local(rng.gen_range(0..LOCAL_MODELS))).collect();
        let counts = super::label_counts(&labels);
        if n < RANDOM_MIN_FULL || counts[..LOCAL_MODELS].iter().all(|&c| c > 0) {
            return Ok(labels);
        }
        attempt = attempt.wrapping_add(1);
    }
}

fn patch_psnrs(pairs: &[PatchPair]) -> Result<Vec<f64>> {
    pairs.par_iter().map(|p| psnr(&p.decoded, &p.original)).collect()
}

/// Splits patches into PSNR terciles; class 0 holds the lowest-PSNR third.
pub fn init_psnr(pairs: &[PatchPair]) -> Result<Vec<PatchLabel>> {
    if pairs.len() < LOCAL_MODELS {
        bail!(Precondition, "PSNR initialization needs at least {LOCAL_MODELS} patches, got {}", pairs.len());
    }
    Ok(tercile_labels(&patch_psnrs(pairs)?))
}

/// Tercile split of `scores` after a stable sort by (score, index).
pub fn tercile_labels(scores: &[f64]) -> Vec<PatchLabel> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut labels = vec![PatchLabel::local(0); n];
    for (rank, &i) in order.iter().enumerate() {
        let class = (0..LOCAL_MODELS).rev().find(|&c| rank >= c * n / LOCAL_MODELS).unwrap_or(0);
        labels[i] = PatchLabel::local(class);
    }
    labels
}

/// Feature-space clustering: principal-axes projection, then seeded k-means++.
pub fn init_cluster(pairs: &[PatchPair], seed: u64) -> Result<Vec<PatchLabel>> {
    if pairs.len() < LOCAL_MODELS {
        bail!(Precondition, "cluster initialization needs at least {LOCAL_MODELS} patches, got {}", pairs.len());
    }
    let features: Vec<FeatureVector> =
        pairs.par_iter().map(|p| compute_feature_vector(&p.decoded, &p.original)).collect::<Result<_>>()?;
    cluster_features(&features, &patch_psnrs(pairs)?, seed)
}

/// Clusters precomputed features; clusters are numbered by ascending mean `psnr`.
pub fn cluster_features(features: &[FeatureVector], psnr: &[f64], seed: u64) -> Result<Vec<PatchLabel>> {
    if features.len() != psnr.len() {
        bail!(Precondition, "{} features but {} PSNR values", features.len(), psnr.len());
    }
    if features.len() < LOCAL_MODELS {
        bail!(Precondition, "clustering needs at least {LOCAL_MODELS} patches, got {}", features.len());
    }
    let projection = Projection::fit(features, REDUCED_DIM, seed)?;
    let points: Vec<Vec<f64>> = features.iter().map(|f| projection.apply(f)).collect::<Result<_>>()?;
    let assignment = kmeans(&points, LOCAL_MODELS, seed)?;

    let mut sums = [(0.0, 0usize); LOCAL_MODELS];
    for (&c, &p) in assignment.iter().zip(psnr) {
        sums[c].0 += p;
        sums[c].1 += 1;
    }
    let mut order: Vec<usize> = (0..LOCAL_MODELS).collect();
    order.sort_by(|&a, &b| (sums[a].0 / sums[a].1 as f64).total_cmp(&(sums[b].0 / sums[b].1 as f64)));
    let mut rank = [0; LOCAL_MODELS];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    Ok(assignment.into_iter().map(|c| PatchLabel::local(rank[c])).collect())
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding; every returned cluster is non-empty.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>> {
    if points.len() < k || k == 0 {
        bail!(Precondition, "k-means needs at least k={k} points, got {}", points.len());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.gen_range(0..points.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            bail!(
                Degenerate,
                "features collapse to fewer than {k} distinct points; use PSNR-based initialization instead"
            );
        }
        let mut target = rng.gen_range(0.0..total);
        let mut pick = d.iter().rposition(|&v| v > 0.0).unwrap_or(0);
        for (i, &v) in d.iter().enumerate() {
            if v > 0.0 && target < v {
                pick = i;
                break;
            }
            target -= v;
        }
        centers.push(points[pick].clone());
    }
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    for _ in 0..KMEANS_MAX_ITERS {
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for ((c, s), &n) in centers.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let mut counts = vec![0usize; k];
    assignment.iter().for_each(|&c| counts[c] += 1);
    if counts.contains(&0) {
        bail!(Degenerate, "k-means left an empty cluster; use PSNR-based initialization instead");
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::FramePlane;
    use crate::dataset::PatchSource;
    use crate::mask::Mask;

    fn pair(decoded: FramePlane, original: FramePlane) -> PatchPair {
        let zero = Mask::new(64, 64, vec![0.0; 4096]).unwrap();
        PatchPair {
            decoded,
            original,
            mask_mm: zero.clone(),
            mask_bm: zero,
            source: PatchSource { sequence: "s".into(), frame: 0, x: 0, y: 0 },
            qp: 37,
            label: None,
        }
    }

    fn noisy_pairs(n: usize, seed: u64) -> Vec<PatchPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let original = FramePlane::from_fn(64, 64, |_, _| rng.gen_range(40..200)).unwrap();
                let amp = rng.gen_range(1..30);
                let decoded = FramePlane::new(
                    64,
                    64,
                    original.samples().iter().map(|&v| (v as i32 + rng.gen_range(-amp..=amp)) as u8).collect(),
                )
                .unwrap();
                pair(decoded, original)
            })
            .collect()
    }

    fn counts(labels: &[PatchLabel]) -> [usize; 4] {
        super::super::label_counts(labels)
    }

    #[test]
    fn random_labels() {
        assert!(init_random(0, 1).is_err());
        assert_eq!(init_random(3, 9).unwrap(), init_random(3, 9).unwrap());
        let labels = init_random(3000, 4).unwrap();
        for c in &counts(&labels)[..3] {
            let share = *c as f64 / 3000.0;
            assert!((share - 1.0 / 3.0).abs() < 0.05, "{share}");
        }
        for seed in 0..50 {
            let c = counts(&init_random(30, seed).unwrap());
            assert!(c[..3].iter().all(|&v| v > 0) && c[3] == 0);
        }
    }

    #[test]
    fn psnr_terciles_distinct() {
        let scores = [5.0, 1.0, 9.0, 3.0, 7.0, 2.0, 8.0, 4.0, 6.0];
        let labels = tercile_labels(&scores);
        let expect: Vec<PatchLabel> = scores
            .iter()
            .map(|&s| {
                PatchLabel::local(if s <= 3.0 {
                    0
                } else if s <= 6.0 {
                    1
                } else {
                    2
                })
            })
            .collect();
        assert_eq!(labels, expect);
    }

    #[test]
    fn psnr_terciles_with_ties() {
        let labels = tercile_labels(&[1.0; 10]);
        let values: Vec<usize> = labels.iter().map(|l| l.index()).collect();
        assert_eq!(values, vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 2]);
    }

    #[test]
    fn psnr_terciles_match_oracle() {
        let pairs = noisy_pairs(100, 3);
        let labels = init_psnr(&pairs).unwrap();
        let scores: Vec<f64> = pairs.iter().map(|p| psnr(&p.decoded, &p.original).unwrap()).collect();
        let mut ranked: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for (rank, (_, i)) in ranked.iter().enumerate() {
            let expect = if rank < 33 {
                0
            } else if rank < 66 {
                1
            } else {
                2
            };
            assert_eq!(labels[*i].index(), expect);
        }
        let c = counts(&labels);
        assert!(c[..3].iter().all(|&v| v == 33 || v == 34));
        assert!(init_psnr(&pairs[..2]).is_err());
    }

    fn blobs(seed: u64) -> (Vec<FeatureVector>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..3).map(|_| (0..16).map(|_| rng.gen_range(-50.0..50.0)).collect()).collect();
        let mut truth = Vec::new();
        let features = (0..90)
            .map(|i| {
                let b = (i * 7) % 3;
                truth.push(b);
                let coefficients = centers[b].iter().map(|c| c + rng.gen_range(-0.5..0.5)).collect();
                FeatureVector { coefficients }
            })
            .collect();
        (features, truth)
    }

    #[test]
    fn cluster_recovers_blobs() {
        for seed in 0..5 {
            let (features, truth) = blobs(seed);
            let psnr: Vec<f64> = truth.iter().map(|&b| [30.0, 20.0, 40.0][b]).collect();
            let labels = cluster_features(&features, &psnr, seed).unwrap();
            for (l, &b) in labels.iter().zip(&truth) {
                assert_eq!(l.index(), [1, 0, 2][b], "seed {seed}");
            }
        }
    }

    #[test]
    fn cluster_on_patches_is_deterministic_and_duplicate_safe() {
        let pairs = noisy_pairs(40, 8);
        let a = init_cluster(&pairs, 5).unwrap();
        assert_eq!(a, init_cluster(&pairs, 5).unwrap());
        let doubled: Vec<PatchPair> = pairs.iter().chain(&pairs).cloned().collect();
        let d = init_cluster(&doubled, 5).unwrap();
        assert_eq!(d[..40], d[40..]);
        assert!(counts(&a)[..3].iter().all(|&c| c > 0));
    }

    #[test]
    fn cluster_rejects_identical_features() {
        let p = FramePlane::filled(64, 64, 10).unwrap();
        let pairs = vec![pair(p.clone(), p); 6];
        assert!(matches!(init_cluster(&pairs, 0), Err(crate::Error::Degenerate(_))));
    }

    #[test]
    fn kmeans_needs_distinct_points() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 1.0]];
        assert!(matches!(kmeans(&pts, 3, 0), Err(crate::Error::Degenerate(_))));
        assert!(kmeans(&pts[..2], 3, 0).is_err());
    }
}
